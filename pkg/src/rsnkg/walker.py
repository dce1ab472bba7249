"""Second-order biased random walks producing relational paths."""

from __future__ import annotations

import logging
import warnings
import weakref
from bisect import bisect_right
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import IO, Iterator, Sequence

import numpy as np

from .kg import KnowledgeGraph

log = logging.getLogger(__name__)

CORPUS_FORMAT = "# rsnkg-corpus 1"
SHARD_SIZE = 2048


class DeadEndError(RuntimeError):
    """The current entity has no outgoing edges."""


@dataclass(frozen=True)
class WalkConfig:
    alpha: float = 0.9
    beta: float = 0.9
    n: int = 1
    length: int = 15
    mode: str = "cross"  # "cross" or "single"
    seed: int = 0
    start: str = "augmented"  # start triples: "augmented" or "original"

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.length < 3:
            raise ValueError("length must be >= 3")
        if self.mode not in ("cross", "single"):
            raise ValueError(f"unknown walk mode {self.mode!r}")
        if self.start not in ("augmented", "original"):
            raise ValueError(f"unknown start set {self.start!r}")
        if self.length % 2 == 0:
            warnings.warn(f"even path length {self.length}; paths are truncated to {self.length - 1}")

    @property
    def target_length(self) -> int:
        return self.length if self.length % 2 else self.length - 1


def distance(prev: int, cand: int, kg: KnowledgeGraph) -> int:
    """Shortest-path distance on the undirected graph, for candidates adjacent to a shared entity."""
    if cand == prev:
        return 0
    if cand in kg.undirected_neighbors[prev]:
        return 1
    return 2


def depth_bias(prev: int, cand: int, kg: KnowledgeGraph, alpha: float) -> float:
    return alpha if distance(prev, cand, kg) == 2 else 1.0 - alpha


def cross_kg_bias(prev: int, cand: int, kg: KnowledgeGraph, cfg: WalkConfig) -> float:
    if cfg.mode == "single":
        return 1.0
    return cfg.beta if kg.origin[prev] != kg.origin[cand] else 1.0 - cfg.beta


def bias(prev: int, cand: int, kg: KnowledgeGraph, cfg: WalkConfig) -> float:
    return depth_bias(prev, cand, kg, cfg.alpha) * cross_kg_bias(prev, cand, kg, cfg)


@dataclass(frozen=True)
class TransitionContext:
    previous: int
    current: int
    candidates: tuple[int, ...]
    biases: tuple[float, ...]

    @classmethod
    def build(cls, prev: int, cur: int, kg: KnowledgeGraph, cfg: WalkConfig) -> "TransitionContext":
        cands = kg.neighbors[cur]
        return cls(prev, cur, cands, tuple(bias(prev, c, kg, cfg) for c in cands))


def transition_distribution(ctx: TransitionContext) -> np.ndarray:
    """Normalized next-entity probabilities over ``ctx.candidates``."""
    if not ctx.candidates:
        raise DeadEndError(f"entity {ctx.current} has no neighbors")
    mu = np.asarray(ctx.biases, dtype=np.float64)
    return mu / mu.sum()


def pick_relation(current: int, nxt: int, kg: KnowledgeGraph, rng: np.random.Generator) -> int:
    rels = kg.connecting_relations.get((current, nxt))
    if not rels:
        raise RuntimeError(f"no relation links entity {current} to {nxt}")
    if len(rels) == 1:
        return rels[0]
    return rels[int(rng.integers(len(rels)))]


# transition tables survive across calls (e.g. per-epoch resampling)
_TABLES: "weakref.WeakKeyDictionary[KnowledgeGraph, dict]" = weakref.WeakKeyDictionary()


class _Walker:
    """Samples walks with a per-(previous, current) transition cache."""

    def __init__(self, kg: KnowledgeGraph, cfg: WalkConfig):
        self.kg = kg
        self.cfg = cfg
        per_graph = _TABLES.setdefault(kg, {})
        self._cache = per_graph.setdefault((cfg.alpha, cfg.beta, cfg.mode), {})
        self._rels = kg.connecting_relations
        self._nbrs = kg.neighbors

    def _table(self, prev: int, cur: int):
        key = (prev, cur)
        hit = self._cache.get(key)
        if hit is None:
            ctx = TransitionContext.build(prev, cur, self.kg, self.cfg)
            if not ctx.candidates:
                hit = ((), [])
            else:
                cdf = np.cumsum(transition_distribution(ctx)).tolist()
                cdf[-1] = 1.0
                hit = (ctx.candidates, cdf)
            self._cache[key] = hit
        return hit

    def walk(self, s: int, r: int, o: int, rng: np.random.Generator) -> list[int]:
        target = self.cfg.target_length
        path = [s, r, o]
        steps = (target - 3) // 2
        if steps <= 0:
            return path
        u = rng.random(2 * steps).tolist()
        prev, cur = s, o
        for i in range(steps):
            cands, cdf = self._table(prev, cur)
            if not cands:
                break
            nxt = cands[bisect_right(cdf, u[2 * i])] if len(cands) > 1 else cands[0]
            rels = self._rels[(cur, nxt)]
            rel = rels[int(u[2 * i + 1] * len(rels))] if len(rels) > 1 else rels[0]
            path.append(rel)
            path.append(nxt)
            prev, cur = cur, nxt
        return path


class Corpus:
    """Relational paths bucketed by element count.

    Each bucket is an ``(N, T)`` int64 array; odd positions (0-indexed even)
    hold entity ids and the others relation ids.
    """

    def __init__(self, buckets: dict[int, np.ndarray]):
        self.buckets = {int(k): np.asarray(v, dtype=np.int64) for k, v in sorted(buckets.items()) if len(v)}

    @classmethod
    def from_paths(cls, paths: Sequence[Sequence[int]]) -> "Corpus":
        by_len: dict[int, list] = {}
        for p in paths:
            by_len.setdefault(len(p), []).append(p)
        return cls({k: np.array(v, dtype=np.int64) for k, v in by_len.items()})

    def __len__(self) -> int:
        return sum(len(v) for v in self.buckets.values())

    def __iter__(self) -> Iterator[list[int]]:
        for arr in self.buckets.values():
            yield from arr.tolist()

    def __eq__(self, other) -> bool:
        if not isinstance(other, Corpus) or self.buckets.keys() != other.buckets.keys():
            return False
        return all(np.array_equal(self.buckets[k], other.buckets[k]) for k in self.buckets)

    @property
    def num_elements(self) -> int:
        return sum(v.size for v in self.buckets.values())


def _shard_rng(seed: int, round_: int, shard: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, round_, shard]))


def _run_shard(kg: KnowledgeGraph, cfg: WalkConfig, starts: np.ndarray, round_: int, shard: int) -> list[list[int]]:
    walker = _Walker(kg, cfg)
    rng = _shard_rng(cfg.seed, round_, shard)
    out = []
    for s, r, o in starts.tolist():
        p = walker.walk(s, r, o, rng)
        if len(p) >= 3:
            out.append(p)
    return out


_POOL_STATE: dict = {}


def _pool_init(kg, cfg):
    _POOL_STATE["kg"], _POOL_STATE["cfg"] = kg, cfg


def _pool_task(args):
    starts, round_, shard = args
    return _run_shard(_POOL_STATE["kg"], _POOL_STATE["cfg"], starts, round_, shard)


def sample_paths(kg: KnowledgeGraph, cfg: WalkConfig, workers: int = 1) -> Corpus:
    """Generate ``cfg.n`` paths per start triple.

    Start triples are split into fixed shards, each with its own RNG stream
    derived from ``(seed, round, shard)``, so the corpus does not depend on
    ``workers``.
    """
    if kg.num_triples == 0:
        raise ValueError("cannot sample paths from an empty graph")
    starts = kg.triples if cfg.start == "augmented" else kg.original_triples
    tasks = [
        (starts[i : i + SHARD_SIZE], round_, shard)
        for round_ in range(cfg.n)
        for shard, i in enumerate(range(0, len(starts), SHARD_SIZE))
    ]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(workers, initializer=_pool_init, initargs=(kg, cfg)) as ex:
            results = list(ex.map(_pool_task, tasks))
    else:
        walker = _Walker(kg, cfg)
        results = []
        for chunk, round_, shard in tasks:
            rng = _shard_rng(cfg.seed, round_, shard)
            results.append([p for p in (walker.walk(s, r, o, rng) for s, r, o in chunk.tolist()) if len(p) >= 3])
    paths = [p for shard_paths in results for p in shard_paths]
    return Corpus.from_paths(paths)


# -- corpus file ---------------------------------------------------------------
#
#   # rsnkg-corpus 1 alpha=<a> beta=<b> n=<n> l=<l> mode=<m> seed=<s> graph=<sha256>
#   e<id> r<id> e<id> ...        one path per line


def write_corpus(corpus: Corpus, cfg: WalkConfig, graph_checksum: str, fh: IO[str]) -> None:
    fh.write(
        f"{CORPUS_FORMAT} alpha={cfg.alpha!r} beta={cfg.beta!r} n={cfg.n} l={cfg.length} "
        f"mode={cfg.mode} start={cfg.start} seed={cfg.seed} graph={graph_checksum}\n"
    )
    for path in corpus:
        fh.write(" ".join(("e" if i % 2 == 0 else "r") + str(x) for i, x in enumerate(path)))
        fh.write("\n")


def save_corpus(corpus: Corpus, cfg: WalkConfig, graph_checksum: str, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        write_corpus(corpus, cfg, graph_checksum, fh)


def read_corpus(path: str | Path) -> tuple[Corpus, dict[str, str]]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if not header.startswith(CORPUS_FORMAT):
            raise ValueError(f"{path}: not a corpus file")
        meta = dict(kv.split("=", 1) for kv in header[len(CORPUS_FORMAT) :].split())
        paths = []
        for lineno, line in enumerate(fh, 2):
            toks = line.split()
            if not toks:
                continue
            p = []
            for i, tok in enumerate(toks):
                want = "e" if i % 2 == 0 else "r"
                if tok[0] != want:
                    raise ValueError(f"{path}:{lineno}: expected {want}-token at position {i}")
                p.append(int(tok[1:]))
            paths.append(p)
    return Corpus.from_paths(paths), meta


def config_dict(cfg: WalkConfig) -> dict:
    return asdict(cfg)
