"""Command-line pipeline: prepare, sample-paths, train, evaluate, sample-dataset, config."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import shutil
import sys
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Any, Callable

from . import __version__
from .config import DEFAULTS, ConfigError, config_hash, dump, read_config, resolve

log = logging.getLogger("rsnkg")

DATA_DIR_ENV = "RSNKG_DATA_DIR"
EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# flag -> (config key, type, help); every config key is reachable from the command line
_FLAGS: dict[str, list[tuple[str, Any, str]]] = {
    "walk": [
        ("alpha", float, "depth bias: weight of distance-2 candidates"),
        ("beta", float, "cross-KG bias: weight of candidates in the other KG"),
        ("n", int, "paths per start triple"),
        ("length", int, "path length in elements (odd)"),
        ("mode", str, "walk mode: cross or single"),
        ("start", str, "start triples: augmented or original"),
    ],
    "model": [
        ("dim", int, "embedding and hidden size"),
        ("layers", int, "stacked recurrent layers"),
        ("variant", str, "rsn, rrn or rnn"),
        ("keep_prob", float, "dropout keep probability"),
        ("skip_dropout", "bool", "also drop the skip connection during training"),
    ],
    "train": [
        ("lr", float, "Adam learning rate"),
        ("batch_size", int, "paths per mini-batch"),
        ("negatives", int, "negative samples per prediction"),
        ("exclude_target", "bool", "never draw the true target as a negative"),
        ("epochs", int, "training epochs"),
        ("resample", "bool", "redraw the corpus every epoch (ignored with --corpus)"),
        ("eval_every", int, "validate every N epochs (needs --valid)"),
    ],
    "eval": [
        ("metric", str, "alignment similarity: cosine or dot"),
        ("direction", str, "alignment direction: forward, backward or both"),
        ("candidates", str, "alignment candidates: all or test"),
        ("filtered", "bool", "filter known answers in completion ranking"),
    ],
    "srprs": [
        ("target", int, "entities to sample"),
        ("groups", int, "degree bands"),
        ("epsilon", float, "K-S acceptance threshold"),
        ("max_rounds", int, "quota adjustment budget"),
        ("sample_mode", str, "normal or dense"),
        ("basis", str, "degree basis for the K-S test: source or induced"),
        ("damping", float, "PageRank damping"),
        ("pagerank_iterations", int, "PageRank power iterations"),
        ("densify_factor", float, "average-degree factor for dense mode"),
    ],
}


def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {s!r}")


def _add_group(p: argparse.ArgumentParser, name: str) -> None:
    g = p.add_argument_group(name)
    for key, typ, help_ in _FLAGS[name]:
        g.add_argument("--" + key.replace("_", "-"), dest=key, type=_bool if typ == "bool" else typ, default=None,
                       help=f"{help_} (default {DEFAULTS[key]})")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--task", choices=["alignment", "completion"], default=None, help="preset (default alignment)")
    p.add_argument("--config", type=Path, help="key = value file; flags override it")
    p.add_argument("--out", type=Path, help=f"run directory (default ${DATA_DIR_ENV}/runs/<time>-<hash>)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None, help="worker processes for path sampling")
    p.add_argument("--deterministic", action="store_const", const=True, default=None,
                   help="single-threaded execution")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rsnkg", description="Recurrent skipping network embeddings for knowledge graphs.")
    p.add_argument("--version", action="version", version=f"rsnkg {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("prepare", help="assemble a single or joint graph with reverse relations")
    c.add_argument("--kg1", type=Path, help="tab-separated triples")
    c.add_argument("--kg2", type=Path, help="second KG for alignment")
    c.add_argument("--seeds", type=Path, help="seed alignment pairs")
    c.add_argument("--toy", action="store_true", help="use the bundled toy alignment pair")
    _add_common(c)

    c = sub.add_parser("sample-paths", help="sample a relational path corpus")
    c.add_argument("--graph", type=Path, required=True)
    _add_common(c)
    _add_group(c, "walk")

    c = sub.add_parser("train", help="train a model")
    c.add_argument("--graph", type=Path, required=True)
    c.add_argument("--corpus", type=Path, help="fixed corpus (default: sample paths per epoch)")
    c.add_argument("--valid", type=Path, help="validation pairs (alignment) or triples (completion)")
    _add_common(c)
    _add_group(c, "walk")
    _add_group(c, "model")
    _add_group(c, "train")

    c = sub.add_parser("evaluate", help="score a checkpoint")
    c.add_argument("--graph", type=Path, required=True)
    c.add_argument("--checkpoint", type=Path, required=True)
    c.add_argument("--test", type=Path, required=True, help="test pairs (alignment) or triples (completion)")
    c.add_argument("--known", type=Path, action="append", default=[], help="extra triples to filter (repeatable)")
    _add_common(c)
    _add_group(c, "eval")

    c = sub.add_parser("sample-dataset", help="degree-faithful sub-KG sampling")
    c.add_argument("--triples", type=Path, required=True)
    _add_common(c)
    _add_group(c, "srprs")

    c = sub.add_parser("config", help="print the resolved configuration")
    c.add_argument("--dump", action="store_true", help="print every key (the default output)")
    _add_common(c)
    for name in _FLAGS:
        _add_group(c, name)
    return p


# -- run plumbing ------------------------------------------------------------


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class Run:
    command: str
    argv: list
    cfg: dict
    out: Path
    inputs: dict
    started: str
    outputs: dict

    def path(self, name: str) -> Path:
        return self.out / name

    def record(self, name: str) -> Path:
        p = self.path(name)
        self.outputs[name] = sha256_file(p)
        return p

    def finish(self) -> None:
        manifest = {
            "command": self.command,
            "argv": self.argv,
            "config": self.cfg,
            "config_hash": config_hash(self.cfg),
            "inputs": self.inputs,
            "seeds": {"seed": self.cfg["seed"]},
            "version": __version__,
            "started": self.started,
            "finished": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "outputs": self.outputs,
        }
        with open(self.out / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _resolve_config(args: argparse.Namespace) -> dict:
    file_values = read_config(args.config) if args.config else {}
    overrides = {k: getattr(args, k) for k in DEFAULTS if hasattr(args, k)}
    return resolve(args.task, file_values, overrides)


def _start_run(args: argparse.Namespace, cfg: dict, inputs: list[Path]) -> Run:
    stamp = datetime.now(timezone.utc)
    out = args.out
    if out is None:
        root = Path(os.environ.get(DATA_DIR_ENV, "rsnkg-data"))
        out = root / "runs" / f"{stamp.strftime('%Y%m%dT%H%M%S')}-{args.command}-{config_hash(cfg)}"
    out.mkdir(parents=True, exist_ok=True)
    digests = {}
    for p in inputs:
        if p is None:
            continue
        if not p.exists():
            raise DataError(f"missing input: {p}")
        digests[str(p)] = sha256_file(p)
    return Run(args.command, args.argv, cfg, out, digests, stamp.isoformat(timespec="seconds"), {})


def _checked(cls, *args, **kwargs):
    """Build a config object; invalid values are usage errors, not data errors."""
    try:
        return cls(*args, **kwargs)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _walk_config(cfg: dict):
    from .walker import WalkConfig

    return _checked(WalkConfig, cfg["alpha"], cfg["beta"], cfg["n"], cfg["length"], cfg["mode"], cfg["seed"],
                    cfg["start"])


def _load_graph(path: Path):
    from .kg import read_graph

    return read_graph(path)


# -- subcommands ----------------------------------------------------------------


def cmd_prepare(args, cfg) -> int:
    from .kg import add_reverse_relations, assemble_joint, load_seeds, load_triples, save_graph

    if args.toy:
        if args.kg1 or args.kg2 or args.seeds:
            raise UsageError("--toy cannot be combined with --kg1/--kg2/--seeds")
    elif args.kg1 is None:
        raise UsageError("prepare needs --kg1 (or --toy)")
    if (args.kg2 is None) != (args.seeds is None):
        raise UsageError("--kg2 and --seeds go together")
    run = _start_run(args, cfg, [args.kg1, args.kg2, args.seeds])
    if args.toy:
        toy = resources.files("rsnkg") / "data" / "toy"
        for name in ("kg1.tsv", "kg2.tsv", "seeds.tsv", "test.tsv"):
            with resources.as_file(toy / name) as src:
                shutil.copyfile(src, run.path(name))
            run.record(name)
        args.kg1, args.kg2, args.seeds = run.path("kg1.tsv"), run.path("kg2.tsv"), run.path("seeds.tsv")
    if args.kg2 is None:
        kg = add_reverse_relations(load_triples(args.kg1))
    else:
        joint = assemble_joint(load_triples(args.kg1, "KG1"), load_triples(args.kg2, "KG2"), load_seeds(args.seeds))
        kg = add_reverse_relations(joint)
    save_graph(kg, run.path("graph.rsnkg"))
    run.record("graph.rsnkg")
    run.finish()
    print(f"{kg}\ngraph {kg.checksum}\nwritten to {run.path('graph.rsnkg')}")
    return EXIT_OK


def cmd_sample_paths(args, cfg) -> int:
    from .walker import sample_paths, save_corpus

    walk = _walk_config(cfg)
    run = _start_run(args, cfg, [args.graph])
    kg = _load_graph(args.graph)
    t0 = time.perf_counter()
    corpus = sample_paths(kg, walk, workers=cfg["threads"])
    save_corpus(corpus, walk, kg.checksum, run.path("corpus.txt"))
    run.record("corpus.txt")
    run.finish()
    print(f"{len(corpus)} paths, {corpus.num_elements} elements in {time.perf_counter() - t0:.1f}s")
    print(f"written to {run.path('corpus.txt')}")
    return EXIT_OK


def _validator(cfg: dict, kg, path: Path) -> Callable:
    from .evaluator import align_entities, complete_triples
    from .kg import load_seeds, read_labeled_triples, seed_ids

    if cfg["task"] == "alignment":
        pairs = seed_ids(kg, load_seeds(path).pairs)
        return lambda m: align_entities(m.entity_embeddings(), kg, pairs, cfg["direction"], cfg["metric"],
                                        candidates=cfg["candidates"]).hits1
    triples = read_labeled_triples(path, kg)
    return lambda m: complete_triples(m, triples, kg, [kg.original_triples]).hits1


def cmd_train(args, cfg) -> int:
    from .plotting import plot_training
    from .trainer import TrainConfig, train
    from .walker import read_corpus

    if cfg["variant"] not in ("rsn", "rrn", "rnn"):
        raise UsageError(f"unknown variant {cfg['variant']!r}")
    walk = _walk_config(cfg)
    run = _start_run(args, cfg, [args.graph, args.corpus, args.valid])
    kg = _load_graph(args.graph)
    corpus = None
    if args.corpus is not None:
        corpus, meta = read_corpus(args.corpus)
        if meta.get("graph") != kg.checksum:
            raise DataError(f"{args.corpus}: corpus was sampled from a different graph (stale checksum)")
    tcfg = _checked(TrainConfig, cfg["lr"], cfg["batch_size"], cfg["negatives"], cfg["epochs"], cfg["keep_prob"],
                    cfg["seed"], resample=cfg["resample"], exclude_target=cfg["exclude_target"],
                    skip_dropout=cfg["skip_dropout"])
    validate = _validator(cfg, kg, args.valid) if args.valid else None
    result = train(kg, walk, tcfg, cfg["dim"], cfg["variant"], cfg["layers"], validate=validate,
                   eval_every=cfg["eval_every"] if validate else 0, keep_best=validate is not None,
                   on_epoch=lambda r, _: log.info("epoch %d loss %.4f", r.epoch, r.loss),
                   workers=cfg["threads"], corpus=corpus)
    result.model.save(run.path("model.ckpt"), kg.checksum)
    run.record("model.ckpt")
    with open(run.path("loss.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch\tloss\tpaths\n")
        for r in result.history:
            fh.write(f"{r.epoch}\t{r.loss!r}\t{r.paths}\n")
        for epoch, score in result.validation:
            fh.write(f"# valid\t{epoch}\t{score!r}\n")
    run.record("loss.tsv")
    plot_training(result.history, result.validation, run.path("training.png"))
    run.finish()
    last = result.history[-1]
    print(f"{len(result.history)} epochs, final loss {last.loss:.4f}"
          + (f", best validation epoch {result.best_epoch}" if result.best_epoch else ""))
    print(f"written to {run.path('model.ckpt')}")
    return EXIT_OK


def cmd_evaluate(args, cfg) -> int:
    from .evaluator import align_entities, complete_triples, format_table, write_ranks_csv, write_tsv
    from .kg import load_seeds, read_labeled_triples, seed_ids
    from .model import RSN
    from .plotting import plot_ranks

    run = _start_run(args, cfg, [args.graph, args.checkpoint, args.test, *args.known])
    kg = _load_graph(args.graph)
    try:
        model = RSN.load(args.checkpoint, kg.checksum)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    if cfg["task"] == "alignment":
        pairs = seed_ids(kg, load_seeds(args.test).pairs)
        metrics = align_entities(model.entity_embeddings(), kg, pairs, cfg["direction"], cfg["metric"],
                                 candidates=cfg["candidates"])
    else:
        test = read_labeled_triples(args.test, kg)
        known = [kg.original_triples] + [read_labeled_triples(p, kg) for p in args.known]
        metrics = complete_triples(model, test, kg, known, filtered=cfg["filtered"])
    with open(run.path("metrics.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        write_tsv(metrics, fh)
    with open(run.path("ranks.csv"), "w", encoding="utf-8", newline="\n") as fh:
        write_ranks_csv(metrics, fh)
    run.record("metrics.tsv")
    run.record("ranks.csv")
    plot_ranks(metrics.ranks, run.path("ranks.png"), f"{cfg['task']} ranks")
    run.finish()
    print(format_table(metrics, f"{cfg['task']} ({cfg['direction'] if cfg['task'] == 'alignment' else 'filtered'})"))
    return EXIT_OK


def cmd_sample_dataset(args, cfg) -> int:
    from .kg import load_triples, write_triples
    from .plotting import plot_degree_distributions
    from .srprs import SamplingSpec, densify, sample_dataset

    spec = _checked(SamplingSpec, cfg["target"], cfg["groups"], cfg["epsilon"], cfg["max_rounds"], cfg["seed"],
                    "normal", cfg["damping"], cfg["pagerank_iterations"], basis=cfg["basis"])
    if cfg["sample_mode"] == "dense" and cfg["densify_factor"] <= 1:
        raise UsageError("densify_factor must be > 1")
    run = _start_run(args, cfg, [args.triples])
    kg = load_triples(args.triples)
    source = kg
    if cfg["sample_mode"] == "dense":
        source = densify(kg, cfg["densify_factor"], cfg["seed"])
    elif cfg["sample_mode"] != "normal":
        raise UsageError(f"unknown sample mode {cfg['sample_mode']!r}")
    result = sample_dataset(source, spec)
    with open(run.path("sample.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        write_triples(result.graph, fh)
    with open(run.path("report.jsonl"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"source_degree_hist": {str(k): v for k, v in result.source_hist.items()},
                             "source_entities": source.num_entities}) + "\n")
        for a in result.attempts:
            fh.write(json.dumps(a.to_json()) + "\n")
    run.record("sample.tsv")
    run.record("report.jsonl")
    best = min(result.attempts, key=lambda a: a.statistic)
    plot_degree_distributions(result.source_hist, best.sample_hist, run.path("degrees.png"), result.statistic)
    run.finish()
    status = "accepted" if result.accepted else "REJECTED (best attempt kept)"
    print(f"{result.graph.num_entities} entities, {result.graph.num_triples} triples, "
          f"D = {result.statistic:.4f} after {len(result.attempts)} attempt(s): {status}")
    return EXIT_OK


def cmd_config(args, cfg) -> int:
    sys.stdout.write(dump(cfg))
    return EXIT_OK


COMMANDS = {
    "prepare": cmd_prepare,
    "sample-paths": cmd_sample_paths,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sample-dataset": cmd_sample_dataset,
    "config": cmd_config,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"rsnkg: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError, ValueError, RuntimeError) as exc:
        print(f"rsnkg: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
