"""Alignment and completion ranking, Hits@k and MRR."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

from .kg import KG1, KG2, KnowledgeGraph
from .model import RSN


@dataclass
class Metrics:
    hits: dict[int, float]
    mrr: float
    ranks: np.ndarray = field(repr=False)

    @property
    def hits1(self) -> float:
        return self.hits[1]

    @property
    def hits10(self) -> float:
        return self.hits[10]

    def as_rows(self) -> list[tuple[str, float]]:
        return [(f"hits@{k}", v) for k, v in sorted(self.hits.items())] + [("mrr", self.mrr)]


def hits_at_k(ranks: Sequence[int], k: int) -> float:
    r = np.asarray(ranks)
    if r.size == 0:
        raise ValueError("empty rank list")
    return float(np.count_nonzero(r <= k) / r.size)


def mrr(ranks: Sequence[int]) -> float:
    r = np.asarray(ranks, dtype=np.float64)
    if r.size == 0:
        raise ValueError("empty rank list")
    if (r < 1).any():
        raise ValueError("ranks must be >= 1")
    return float(np.mean(1.0 / r))


def summarize(ranks: Sequence[int], ks: Iterable[int] = (1, 10)) -> Metrics:
    ranks = np.asarray(ranks, dtype=np.int64)
    ks = sorted(set(ks) | {1, 10})
    return Metrics({k: hits_at_k(ranks, k) for k in ks}, mrr(ranks), ranks)


def average(a: Metrics, b: Metrics) -> Metrics:
    """Mean of two directions; ranks are concatenated."""
    hits = {k: (a.hits[k] + b.hits[k]) / 2 for k in a.hits}
    return Metrics(hits, (a.mrr + b.mrr) / 2, np.concatenate([a.ranks, b.ranks]))


def pessimistic_ranks(scores: np.ndarray, true_idx: np.ndarray, valid: np.ndarray | None = None) -> np.ndarray:
    """1 + number of other (valid) candidates scoring at least as high as the true one."""
    true_scores = scores[np.arange(len(scores)), true_idx][:, None]
    better = scores >= true_scores
    if valid is not None:
        better &= valid
    better[np.arange(len(scores)), true_idx] = False
    return better.sum(axis=1) + 1


# -- entity alignment ------------------------------------------------------------


def _normalize(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.maximum(n, 1e-12)


def rank_alignment(emb: np.ndarray, sources: np.ndarray, targets: np.ndarray, candidates: np.ndarray,
                   metric: str = "cosine", chunk: int = 2048) -> np.ndarray:
    """Rank of each ``targets[i]`` among ``candidates`` for query ``sources[i]``."""
    pos = {int(c): i for i, c in enumerate(candidates)}
    try:
        true_idx = np.array([pos[int(t)] for t in targets], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"counterpart {exc.args[0]} is not among the candidates") from None
    emb = np.asarray(emb, dtype=np.float64)
    q, c = emb[sources], emb[candidates]
    if metric == "cosine":
        q, c = _normalize(q), _normalize(c)
    elif metric != "dot":
        raise ValueError(f"unknown similarity {metric!r}")
    out = np.empty(len(sources), dtype=np.int64)
    for i in range(0, len(sources), chunk):
        sim = q[i : i + chunk] @ c.T
        out[i : i + chunk] = pessimistic_ranks(sim, true_idx[i : i + chunk])
    return out


def align_entities(emb: np.ndarray, kg: KnowledgeGraph, test_pairs: np.ndarray, direction: str = "both",
                   metric: str = "cosine", ks: Iterable[int] = (1, 10), candidates: str = "all") -> Metrics:
    """Rank counterparts by embedding similarity.

    ``test_pairs`` is an ``(N, 2)`` array of (KG1 id, KG2 id). Candidates are
    every entity of the other graph (``"all"``) or only the test
    counterparts (``"test"``). ``direction`` is ``"forward"`` (KG1 to KG2),
    ``"backward"`` or ``"both"`` (averaged).
    """
    test_pairs = np.asarray(test_pairs, dtype=np.int64).reshape(-1, 2)
    if len(test_pairs) == 0:
        raise ValueError("empty alignment test set")
    bad = sorted({int(e) for e in test_pairs.ravel() if e < 0 or e >= len(emb)})
    if bad:
        raise ValueError(f"test entities missing from the embedding table: {bad[:10]}")
    if candidates == "all":
        c1 = np.flatnonzero(kg.origin == KG1)
        c2 = np.flatnonzero(kg.origin == KG2)
    elif candidates == "test":
        c1, c2 = test_pairs[:, 0], test_pairs[:, 1]
    else:
        raise ValueError(f"unknown candidate pool {candidates!r}")
    fwd = bwd = None
    if direction in ("forward", "both"):
        fwd = summarize(rank_alignment(emb, test_pairs[:, 0], test_pairs[:, 1], c2, metric), ks)
    if direction in ("backward", "both"):
        bwd = summarize(rank_alignment(emb, test_pairs[:, 1], test_pairs[:, 0], c1, metric), ks)
    if direction == "both":
        return average(fwd, bwd)
    if fwd is None and bwd is None:
        raise ValueError(f"unknown direction {direction!r}")
    return fwd or bwd


# -- KG completion -------------------------------------------------------------


def completion_queries(test: np.ndarray, kg: KnowledgeGraph, directions=("object", "subject")):
    """Length-2 model inputs for each query: ``(s, r)`` or ``(o, r^-)``."""
    test = np.asarray(test, dtype=np.int64).reshape(-1, 3)
    inputs, answers = [], []
    for direction in directions:
        if direction == "object":
            inputs.append(test[:, :2])
            answers.append(test[:, 2])
        elif direction == "subject":
            rev = kg.reverse_of[test[:, 1]]
            if (rev < 0).any():
                raise ValueError("subject prediction needs reverse relations")
            inputs.append(np.stack([test[:, 2], rev], axis=1))
            answers.append(test[:, 0])
        else:
            raise ValueError(f"unknown direction {direction!r}")
    return np.concatenate(inputs), np.concatenate(answers)


def known_answers(triples: Iterable[np.ndarray], kg: KnowledgeGraph) -> dict[tuple[int, int], set[int]]:
    """``(head, relation) -> tails`` over the given triples and their reverses."""
    out: dict[tuple[int, int], set[int]] = {}
    for t in triples:
        for s, r, o in np.asarray(t, dtype=np.int64).reshape(-1, 3).tolist():
            out.setdefault((s, r), set()).add(o)
            rev = int(kg.reverse_of[r])
            if rev >= 0:
                out.setdefault((o, rev), set()).add(s)
    return out


def complete_triples(model: RSN, test: np.ndarray, kg: KnowledgeGraph, known: Sequence[np.ndarray] = (),
                     directions=("object", "subject"), ks: Iterable[int] = (1, 10), batch: int = 1024,
                     filtered: bool = True) -> Metrics:
    """Filtered ranking of test triples as length-2 prediction problems.

    The model reads ``(s, r)`` (or ``(o, r^-)``) and every entity is scored
    by the dot product of its embedding with the relation-step output. Other
    answers found in ``known`` (training, validation and test triples) are
    removed before ranking.
    """
    inputs, answers = completion_queries(test, kg, directions)
    filt = known_answers(list(known) + [np.asarray(test)], kg) if filtered else {}
    ent = model.entity_embeddings().astype(np.float64)
    ranks = np.empty(len(inputs), dtype=np.int64)
    for i in range(0, len(inputs), batch):
        x = inputs[i : i + batch]
        out = model.predict(x)[:, 1].astype(np.float64)
        scores = out @ ent.T
        valid = np.ones_like(scores, dtype=bool)
        for j, (h, r) in enumerate(x.tolist()):
            for other in filt.get((h, r), ()):
                valid[j, other] = False
        ranks[i : i + batch] = pessimistic_ranks(scores, answers[i : i + batch], valid)
    return summarize(ranks, ks)


# -- reporting -------------------------------------------------------------


def format_table(metrics: Metrics, title: str = "") -> str:
    rows = metrics.as_rows()
    width = max(len(k) for k, _ in rows)
    lines = [title] if title else []
    lines.append(f"{'metric':<{width}}  value")
    lines.append(f"{'-' * width}  ------")
    for k, v in rows:
        lines.append(f"{k:<{width}}  {v:.4f}")
    lines.append(f"{'queries':<{width}}  {len(metrics.ranks)}")
    return "\n".join(lines)


def write_tsv(metrics: Metrics, fh: IO[str]) -> None:
    for k, v in metrics.as_rows():
        fh.write(f"{k}\t{v!r}\n")
    fh.write(f"queries\t{len(metrics.ranks)}\n")


def write_ranks_csv(metrics: Metrics, fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["query", "rank"])
    for i, r in enumerate(metrics.ranks.tolist()):
        w.writerow([i, r])
