import json
import time
from pathlib import Path

import pytest

from rsnkg.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from rsnkg.config import DEFAULTS, ConfigError, config_hash, dump, read_config, resolve
from rsnkg.kg import add_reverse_relations, assemble_joint, load_seeds, load_triples, read_graph


class TestResolve:
    def test_alignment_preset(self):
        cfg = resolve("alignment")
        assert (cfg["alpha"], cfg["beta"], cfg["length"]) == (0.9, 0.9, 15)

    def test_completion_preset(self):
        cfg = resolve("completion")
        assert (cfg["alpha"], cfg["length"]) == (0.7, 7)

    def test_precedence(self, tmp_path):
        f = tmp_path / "run.cfg"
        f.write_text("# tweaks\nalpha = 0.5\nlength = 9  # shorter\nresample = no\n")
        values = read_config(f)
        cfg = resolve("alignment", values, {"alpha": 0.6, "dim": None})
        assert cfg["alpha"] == 0.6 and cfg["length"] == 9 and cfg["resample"] is False
        assert cfg["dim"] == DEFAULTS["dim"]

    def test_deterministic_forces_one_thread(self):
        assert resolve(None, {}, {"threads": 4, "deterministic": True})["threads"] == 1

    def test_unknown_key(self, tmp_path):
        f = tmp_path / "bad.cfg"
        f.write_text("alpha = 0.9\nwidth = 3\n")
        with pytest.raises(ConfigError, match=":2: unknown key"):
            read_config(f)

    def test_bad_value(self, tmp_path):
        f = tmp_path / "bad.cfg"
        f.write_text("dim = big\n")
        with pytest.raises(ConfigError, match="dim"):
            read_config(f)

    def test_unknown_task(self):
        with pytest.raises(ConfigError):
            resolve("translation")

    def test_dump_round_trip(self, tmp_path):
        cfg = resolve("completion", {}, {"seed": 3})
        f = tmp_path / "dumped.cfg"
        f.write_text(dump(cfg))
        assert resolve(None, read_config(f)) == cfg
        assert config_hash(cfg) != config_hash(resolve("alignment"))

    def test_every_key_has_a_flag(self):
        from rsnkg.cli import _FLAGS, build_parser

        flagged = {k for group in _FLAGS.values() for k, _, _ in group}
        flagged |= {"task", "seed", "threads", "deterministic"}
        assert flagged == set(DEFAULTS)
        assert build_parser().parse_args(["config", "--alpha", "0.3"]).alpha == 0.3


def run(*argv):
    return main([str(a) for a in argv])


class TestExitCodes:
    def test_config_ok(self, capsys):
        assert run("config", "--task", "completion") == EXIT_OK
        assert "alpha = 0.7" in capsys.readouterr().out

    def test_bad_flag(self, capsys):
        assert run("config", "--no-such-flag") == EXIT_USAGE

    def test_no_command(self, capsys):
        assert run() == EXIT_USAGE

    def test_invalid_combination(self, tmp_path, capsys):
        assert run("prepare", "--toy", "--kg1", tmp_path / "x.tsv", "--out", tmp_path) == EXIT_USAGE

    def test_invalid_value(self, tmp_path, capsys):
        assert run("sample-dataset", "--triples", tmp_path / "t.tsv", "--epsilon", "0", "--out", tmp_path) == EXIT_USAGE

    def test_dense_factor(self, tmp_path, capsys):
        code = run("sample-dataset", "--triples", tmp_path / "t.tsv", "--sample-mode", "dense",
                   "--densify-factor", "1.0", "--out", tmp_path)
        assert code == EXIT_USAGE

    def test_missing_input(self, tmp_path, capsys):
        code = run("sample-paths", "--graph", tmp_path / "nope.rsnkg", "--out", tmp_path / "o")
        assert code == EXIT_DATA
        assert "nope.rsnkg" in capsys.readouterr().err

    def test_parse_error_has_line(self, tmp_path, capsys):
        bad = tmp_path / "bad.tsv"
        bad.write_text("a\tr\tb\nbroken line\n")
        assert run("prepare", "--kg1", bad, "--out", tmp_path / "o") == EXIT_DATA
        assert ":2" in capsys.readouterr().err


@pytest.fixture(scope="module")
def toy_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    small = ["--dim", "16", "--epochs", "3", "--batch-size", "64"]
    t0 = time.perf_counter()
    assert run("prepare", "--toy", "--out", root / "prep", "--deterministic") == EXIT_OK
    graph = root / "prep" / "graph.rsnkg"
    assert run("sample-paths", "--graph", graph, "--out", root / "walk", "--deterministic") == EXIT_OK
    assert run("train", "--graph", graph, "--corpus", root / "walk" / "corpus.txt",
               "--valid", root / "prep" / "test.tsv", "--eval-every", "1", "--out", root / "train", "--deterministic", *small) == EXIT_OK
    assert run("evaluate", "--graph", graph, "--checkpoint", root / "train" / "model.ckpt",
               "--test", root / "prep" / "test.tsv", "--out", root / "eval", "--deterministic") == EXIT_OK
    return root, time.perf_counter() - t0


class TestToyPipeline:
    def test_fast(self, toy_run):
        assert toy_run[1] < 60

    @pytest.mark.parametrize("step,files", [
        ("prep", ["kg1.tsv", "kg2.tsv", "seeds.tsv", "test.tsv", "graph.rsnkg"]),
        ("walk", ["corpus.txt"]),
        ("train", ["model.ckpt", "loss.tsv", "training.png"]),
        ("eval", ["metrics.tsv", "ranks.csv", "ranks.png"]),
    ])
    def test_artifacts(self, toy_run, step, files):
        d = toy_run[0] / step
        for name in files + ["manifest.json"]:
            assert (d / name).stat().st_size > 0, name
        manifest = json.loads((d / "manifest.json").read_text())
        assert manifest["config"]["threads"] == 1
        assert manifest["config_hash"] == config_hash(manifest["config"])
        assert set(manifest) >= {"argv", "inputs", "seeds", "version", "started", "finished", "outputs"}

    def test_round_trip_checksum(self, toy_run):
        prep = toy_run[0] / "prep"
        joint = assemble_joint(load_triples(prep / "kg1.tsv", "KG1"), load_triples(prep / "kg2.tsv", "KG2"),
                               load_seeds(prep / "seeds.tsv"))
        assert read_graph(prep / "graph.rsnkg").checksum == add_reverse_relations(joint).checksum

    def test_metrics_report(self, toy_run):
        text = (toy_run[0] / "eval" / "metrics.tsv").read_text()
        assert "hits@1" in text.lower()

    def test_stale_corpus(self, toy_run, tmp_path, capsys):
        root = toy_run[0]
        other = tmp_path / "single.tsv"
        other.write_text("x\tr\ty\ny\tr\tz\n")
        assert run("prepare", "--kg1", other, "--out", tmp_path / "p") == EXIT_OK
        code = run("train", "--graph", tmp_path / "p" / "graph.rsnkg", "--corpus", root / "walk" / "corpus.txt",
                   "--out", tmp_path / "t", "--dim", "8", "--epochs", "1")
        assert code == EXIT_DATA
        assert "stale" in capsys.readouterr().err

    def test_wrong_checkpoint_graph(self, toy_run, tmp_path, capsys):
        root = toy_run[0]
        other = tmp_path / "single.tsv"
        other.write_text("x\tr\ty\ny\tr\tz\n")
        assert run("prepare", "--kg1", other, "--out", tmp_path / "p") == EXIT_OK
        code = run("evaluate", "--graph", tmp_path / "p" / "graph.rsnkg", "--checkpoint", root / "train" / "model.ckpt",
                   "--test", root / "prep" / "test.tsv", "--out", tmp_path / "e")
        assert code == EXIT_DATA

    def test_default_run_dir(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("RSNKG_DATA_DIR", str(tmp_path))
        assert run("prepare", "--toy") == EXIT_OK
        (d,) = (tmp_path / "runs").iterdir()
        assert d.name.split("-")[1] == "prepare" and (d / "manifest.json").exists()


def test_completion_pipeline(tmp_path, capsys):
    kg = tmp_path / "kg.tsv"
    lines = [f"e{i}\tr{i % 3}\te{(i * 7 + 1) % 12}" for i in range(30)]
    kg.write_text("\n".join(lines) + "\n")
    test = tmp_path / "test.tsv"
    test.write_text("\n".join(lines[:5]) + "\n")
    opts = ["--task", "completion"]
    assert run("prepare", "--kg1", kg, "--out", tmp_path / "p") == EXIT_OK
    graph = tmp_path / "p" / "graph.rsnkg"
    assert run("train", "--graph", graph, "--out", tmp_path / "t", *opts, "--dim", "8", "--epochs", "2", "--batch-size", "16") == EXIT_OK
    assert run("evaluate", "--graph", graph, "--checkpoint", tmp_path / "t" / "model.ckpt", "--test", test,
               "--out", tmp_path / "e", *opts) == EXIT_OK
    assert "filtered" in capsys.readouterr().out


def test_sample_dataset_command(tmp_path, capsys):
    from rsnkg.kg import write_triples
    from rsnkg.synthetic import power_law_kg

    src = tmp_path / "big.tsv"
    with open(src, "w") as fh:
        write_triples(power_law_kg(600, n_rel=4, seed=1), fh)
    assert run("sample-dataset", "--triples", src, "--target", "100", "--out", tmp_path / "s") == EXIT_OK
    out = tmp_path / "s"
    lines = (out / "report.jsonl").read_text().splitlines()
    assert "source_degree_hist" in json.loads(lines[0])
    assert all("D" in json.loads(line) for line in lines[1:])
    assert (out / "degrees.png").exists() and load_triples(out / "sample.tsv").num_entities <= 100
