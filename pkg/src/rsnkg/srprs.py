"""Segment-based random PageRank sampling of degree-faithful sub-KGs."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .kg import KnowledgeGraph

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SamplingSpec:
    target: int
    groups: int = 10
    epsilon: float = 0.05
    max_rounds: int = 100
    seed: int = 0
    mode: str = "normal"  # or "dense"
    damping: float = 0.85
    iterations: int = 50
    step: float = 1.0
    basis: str = "source"  # degrees of sampled entities: "source" or "induced"

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in (0, 1]")
        if self.target < 1 or self.groups < 1 or self.max_rounds < 1:
            raise ValueError("target, groups and max_rounds must be >= 1")
        if self.mode not in ("normal", "dense"):
            raise ValueError(f"unknown sampling mode {self.mode!r}")
        if self.basis not in ("source", "induced"):
            raise ValueError(f"unknown degree basis {self.basis!r}")


@dataclass
class DegreeSegment:
    lo: int
    hi: int
    members: np.ndarray
    quota: int = 0

    def __len__(self) -> int:
        return len(self.members)


def _largest_remainder(weights: np.ndarray, total: int, caps: np.ndarray) -> np.ndarray:
    """Integer allocation of ``total`` proportional to ``weights`` without exceeding ``caps``."""
    weights = np.maximum(np.asarray(weights, dtype=np.float64), 0.0)
    caps = np.asarray(caps, dtype=np.int64)
    out = np.zeros(len(weights), dtype=np.int64)
    remaining = min(total, int(caps.sum()))
    free = caps > 0
    while remaining > 0 and free.any():
        w = np.where(free, weights, 0.0)
        if w.sum() <= 0:
            w = free.astype(np.float64)
        share = w / w.sum() * remaining
        add = np.minimum(np.floor(share).astype(np.int64), caps - out)
        left = remaining - int(add.sum())
        if left > 0:
            frac = np.where(free & (out + add < caps), share - np.floor(share), -1.0)
            for i in np.argsort(-frac, kind="stable")[:left]:
                if frac[i] < 0:
                    break
                add[i] += 1
        out += add
        remaining -= int(add.sum())
        free = out < caps
        if add.sum() == 0:
            break
    return out


def segment_by_degree(kg: KnowledgeGraph, groups: int, target: int | None = None,
                      degrees: np.ndarray | None = None) -> list[DegreeSegment]:
    """Partition entities into contiguous degree bands of roughly equal size.

    Band ``i`` starts at the ``i/groups`` quantile of the degree
    distribution; duplicate boundaries collapse, so heavily tied degrees
    give fewer bands. Quotas (when ``target`` is given) are proportional to
    band size.
    """
    deg = kg.degree if degrees is None else np.asarray(degrees)
    n = len(deg)
    if groups < 1:
        raise ValueError("groups must be >= 1")
    if groups > n:
        raise ValueError(f"cannot split {n} entities into {groups} groups")
    qs = np.arange(1, groups) / groups
    edges = np.unique(np.quantile(deg, qs, method="inverted_cdf")) if groups > 1 else np.array([], dtype=np.int64)
    edges = edges[edges > deg.min()] if len(edges) else edges
    band = np.searchsorted(edges, deg, side="right")
    segments = []
    for b in range(len(edges) + 1):
        members = np.flatnonzero(band == b)
        if len(members) == 0:
            continue
        segments.append(DegreeSegment(int(deg[members].min()), int(deg[members].max()), members))
    if target is not None:
        quotas = _largest_remainder([len(s) for s in segments], target, [len(s) for s in segments])
        for s, q in zip(segments, quotas):
            s.quota = int(q)
    return segments


def pagerank(kg: KnowledgeGraph, damping: float = 0.85, iterations: int = 50) -> np.ndarray:
    """Power-iteration PageRank on the undirected (relation-merged) graph."""
    n = kg.num_entities
    t = kg.original_triples
    rows = np.concatenate([t[:, 0], t[:, 2]])
    cols = np.concatenate([t[:, 2], t[:, 0]])
    A = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    out_deg = np.asarray(A.sum(axis=1)).ravel()
    dangling = out_deg == 0
    inv = np.divide(1.0, out_deg, out=np.zeros(n), where=~dangling)
    P = sp.diags(inv) @ A
    pr = np.full(n, 1.0 / n)
    for _ in range(iterations):
        pr = damping * (P.T @ pr + pr[dangling].sum() / n) + (1.0 - damping) / n
    return pr / pr.sum()


def random_pagerank_sample(members: np.ndarray, quota: int, weights: np.ndarray,
                           rng: np.random.Generator) -> np.ndarray:
    """Sequential weighted sampling without replacement.

    Equivalent to repeatedly drawing a member with probability proportional
    to its weight among those not yet drawn (Efraimidis-Spirakis keys).
    Returned in draw order.
    """
    members = np.asarray(members)
    if quota > len(members):
        raise ValueError(f"quota {quota} exceeds segment size {len(members)}")
    if quota == 0:
        return members[:0]
    w = np.asarray(weights, dtype=np.float64)[members]
    positive = w > 0
    keys = np.full(len(members), -np.inf)
    keys[positive] = np.log(rng.random(int(positive.sum()))) / w[positive]
    order = np.argsort(-keys, kind="stable")[:quota]
    if not positive[order].all():
        log.warning("segment has too few positively weighted entities; filling uniformly")
        zero = np.flatnonzero(~positive)
        fill = rng.permutation(zero)[: quota - int(positive.sum())]
        order = np.concatenate([order[positive[order]], fill])
    return members[order]


def ks_test(sample: np.ndarray, source: np.ndarray) -> float:
    """Two-sample Kolmogorov-Smirnov distance between empirical CDFs."""
    a = np.sort(np.asarray(sample))
    b = np.sort(np.asarray(source))
    if a.size == 0 or b.size == 0:
        raise ValueError("empty degree sample")
    grid = np.union1d(a, b)
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


@dataclass
class Attempt:
    round: int
    statistic: float
    accepted: bool
    quotas: list[int]
    induced_statistic: float = float("nan")
    sample_hist: dict[int, int] = field(repr=False, default_factory=dict)

    def to_json(self) -> dict:
        return {
            "attempt": self.round,
            "D": self.statistic,
            "D_induced": self.induced_statistic,
            "accepted": self.accepted,
            "quotas": self.quotas,
            "sample_degree_hist": {str(k): v for k, v in sorted(self.sample_hist.items())},
        }


@dataclass
class SampleResult:
    graph: KnowledgeGraph
    statistic: float
    accepted: bool
    entities: np.ndarray
    attempts: list[Attempt]
    source_hist: dict[int, int]


def _hist(deg: np.ndarray) -> dict[int, int]:
    vals, counts = np.unique(deg, return_counts=True)
    return dict(zip(vals.tolist(), counts.tolist()))


def _adjust(segments: list[DegreeSegment], quotas: np.ndarray, sample_deg: np.ndarray, source_deg: np.ndarray,
            step: float) -> np.ndarray:
    """Move quota toward bands whose degree range the sample under-represents."""
    target = int(quotas.sum())
    caps = np.array([len(s) for s in segments])
    err = np.empty(len(segments))
    for i, s in enumerate(segments):
        hi = segments[i + 1].lo - 1 if i + 1 < len(segments) else np.inf
        lo = s.lo if i > 0 else -np.inf
        f_sample = np.mean((sample_deg >= lo) & (sample_deg <= hi))
        f_source = np.mean((source_deg >= lo) & (source_deg <= hi))
        err[i] = f_source - f_sample
    new = quotas + step * err * target
    return _largest_remainder(np.maximum(new, 0.0), target, caps)


def sample_dataset(kg: KnowledgeGraph, spec: SamplingSpec) -> SampleResult:
    """Segment, sample and K-S test until the sample's degree distribution matches.

    With ``basis="source"`` a sampled entity keeps the degree it has in the
    source graph; with ``"induced"`` degrees are recounted inside the sampled
    subgraph (both statistics are recorded per attempt). Quotas are
    re-balanced between rounds and the best attempt is returned, flagged not
    accepted, if ``epsilon`` is never reached.
    """
    source = densify(kg, seed=spec.seed) if spec.mode == "dense" else kg
    if spec.target > source.num_entities:
        raise ValueError(f"target {spec.target} exceeds {source.num_entities} entities")
    rng = np.random.default_rng(spec.seed)
    src_deg = source.degree
    pr = pagerank(source, spec.damping, spec.iterations)
    segments = segment_by_degree(source, spec.groups, spec.target)
    quotas = np.array([s.quota for s in segments])
    attempts: list[Attempt] = []
    best = None
    for rnd in range(spec.max_rounds):
        picked = np.concatenate([random_pagerank_sample(s.members, int(q), pr, rng) for s, q in zip(segments, quotas)])
        induced = _induced_degrees(source, picked)
        d_source = ks_test(src_deg[picked], src_deg)
        d_induced = ks_test(induced, src_deg)
        sample_deg = src_deg[picked] if spec.basis == "source" else induced
        D = d_source if spec.basis == "source" else d_induced
        ok = D <= spec.epsilon
        attempts.append(Attempt(rnd, D, ok, quotas.tolist(), d_induced, _hist(sample_deg)))
        log.info("round %d: D=%.4f (induced %.4f)", rnd, d_source, d_induced)
        if best is None or D < best[0]:
            best = (D, picked)
        if ok:
            break
        quotas = _adjust(segments, quotas, sample_deg, src_deg, spec.step)
    D, picked = best
    if D > spec.epsilon:
        log.warning("no attempt reached D <= %g; best D = %.4f", spec.epsilon, D)
    return SampleResult(source.subgraph(picked), D, D <= spec.epsilon, np.sort(picked), attempts, _hist(src_deg))


def _induced_degrees(kg: KnowledgeGraph, picked: np.ndarray) -> np.ndarray:
    inside = np.zeros(kg.num_entities, dtype=bool)
    inside[picked] = True
    t = kg.original_triples
    t = t[inside[t[:, 0]] & inside[t[:, 2]]]
    deg = np.bincount(t[:, 0], minlength=kg.num_entities)
    other = t[:, 2] != t[:, 0]
    deg += np.bincount(t[other, 2], minlength=kg.num_entities)
    return deg[picked]


def average_degree(kg: KnowledgeGraph) -> float:
    return float(kg.degree.mean()) if kg.num_entities else 0.0


class _Buckets:
    """Entities grouped by current degree with O(1) removal."""

    def __init__(self, deg: np.ndarray):
        self.deg = deg
        self.items: dict[int, list[int]] = {}
        self.pos = np.empty(len(deg), dtype=np.int64)
        for e, d in enumerate(deg.tolist()):
            lst = self.items.setdefault(d, [])
            self.pos[e] = len(lst)
            lst.append(e)

    def _remove(self, e: int) -> None:
        lst = self.items[int(self.deg[e])]
        i = int(self.pos[e])
        last = lst.pop()
        if last != e:
            lst[i] = last
            self.pos[last] = i

    def decrement(self, e: int) -> None:
        self._remove(e)
        self.deg[e] -= 1
        lst = self.items.setdefault(int(self.deg[e]), [])
        self.pos[e] = len(lst)
        lst.append(e)

    def pop_random_min(self, rng: np.random.Generator) -> int:
        low = min(d for d, lst in self.items.items() if lst)
        lst = self.items[low]
        e = lst[int(rng.integers(len(lst)))]
        self._remove(e)
        return e


def densify(kg: KnowledgeGraph, factor: float = 2.0, seed: int = 0) -> KnowledgeGraph:
    """Drop random lowest-degree entities until the average degree grows by ``factor``.

    Degrees are updated after every removal, so the lowest-degree band is
    always the current minimum-degree entities.
    """
    if factor <= 1.0:
        raise ValueError("factor must be > 1")
    rng = np.random.default_rng(seed)
    n = kg.num_entities
    target = factor * average_degree(kg)
    t = kg.original_triples
    incident: list[list[int]] = [[] for _ in range(n)]
    for i, (s, _, o) in enumerate(t.tolist()):
        incident[s].append(i)
        if o != s:
            incident[o].append(i)
    deg = kg.degree.astype(np.int64).copy()
    alive = np.ones(n, dtype=bool)
    live_triples = np.ones(len(t), dtype=bool)
    n_alive, deg_sum = n, int(deg.sum())
    buckets = _Buckets(deg)
    while n_alive > 0 and deg_sum / n_alive < target:
        if n_alive <= 2:
            raise ValueError(f"cannot reach average degree {target:.3f}")
        victim = buckets.pop_random_min(rng)
        alive[victim] = False
        n_alive -= 1
        for i in incident[victim]:
            if not live_triples[i]:
                continue
            live_triples[i] = False
            s, _, o = t[i]
            for e in {int(s), int(o)}:
                deg_sum -= 1
                if e != victim:
                    buckets.decrement(e)
    keep = np.flatnonzero(alive)
    return kg.subgraph(keep)
