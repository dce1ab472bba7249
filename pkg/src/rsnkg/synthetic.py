"""Synthetic graphs for smoke runs and benchmarks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kg import KG1, KG2, SINGLE, KnowledgeGraph, SeedAlignment


@dataclass
class AlignmentTask:
    kg1: KnowledgeGraph
    kg2: KnowledgeGraph
    seeds: SeedAlignment
    test: tuple[tuple[str, str], ...]


def random_kg(n_ent: int, n_rel: int, n_triples: int, rng: np.random.Generator, prefix: str = "") -> np.ndarray:
    """Connected random multigraph triples: a random spanning tree plus uniform extra edges."""
    if n_triples < n_ent - 1:
        raise ValueError("too few triples to connect every entity")
    order = rng.permutation(n_ent)
    seen: dict[tuple[int, int, int], None] = {}
    for i in range(1, n_ent):
        a, b = int(order[i]), int(order[rng.integers(i)])
        if rng.random() < 0.5:
            a, b = b, a
        seen[(a, int(rng.integers(n_rel)), b)] = None
    while len(seen) < n_triples:
        s, o = (int(x) for x in rng.integers(n_ent, size=2))
        if s != o:
            seen.setdefault((s, int(rng.integers(n_rel)), o), None)
    return np.array(list(seen), dtype=np.int64)


def isomorphic_pair(n_ent: int = 200, n_rel: int = 20, avg_degree: float = 6.0, seed_fraction: float = 0.3,
                    seed: int = 0) -> AlignmentTask:
    """Two copies of one random graph under random entity/relation relabelings."""
    rng = np.random.default_rng(seed)
    n_triples = int(round(n_ent * avg_degree / 2))
    t1 = random_kg(n_ent, n_rel, n_triples, rng)
    eperm = rng.permutation(n_ent)
    rperm = rng.permutation(n_rel)
    t2 = np.stack([eperm[t1[:, 0]], rperm[t1[:, 1]], eperm[t1[:, 2]]], axis=1)
    t2 = t2[rng.permutation(len(t2))]
    kg1 = KnowledgeGraph([f"a/e{i}" for i in range(n_ent)], [f"a/r{i}" for i in range(n_rel)], t1,
                         np.full(n_ent, KG1, np.int8))
    kg2 = KnowledgeGraph([f"b/e{i}" for i in range(n_ent)], [f"b/r{i}" for i in range(n_rel)], t2,
                         np.full(n_ent, KG2, np.int8))
    pairs = [(f"a/e{i}", f"b/e{eperm[i]}") for i in rng.permutation(n_ent).tolist()]
    n_seed = int(round(seed_fraction * n_ent))
    return AlignmentTask(kg1, kg2, SeedAlignment(tuple(pairs[:n_seed])), tuple(pairs[n_seed:]))


def power_law_kg(n_ent: int = 15000, n_rel: int = 50, exponent: float = 2.5, avg_degree: float = 4.0,
                 seed: int = 0) -> KnowledgeGraph:
    """Chung-Lu graph with power-law expected degrees and random relation labels.

    Entities the generator leaves isolated get one edge to a partner drawn by
    expected degree, so every entity takes part in some triple.
    """
    import networkx as nx

    if exponent <= 2.0:
        raise ValueError("exponent must be > 2")
    rng = np.random.default_rng(seed)
    w = np.arange(1, n_ent + 1, dtype=np.float64) ** (-1.0 / (exponent - 1.0))
    w *= avg_degree / w.mean()
    g = nx.expected_degree_graph(w.tolist(), seed=int(rng.integers(2**31)), selfloops=False)
    edges = [tuple(e) for e in g.edges()]
    p = w / w.sum()
    for v in (v for v in range(n_ent) if g.degree(v) == 0):
        u = v
        while u == v:
            u = int(rng.choice(n_ent, p=p))
        edges.append((u, v))
    edges = np.array(sorted(edges), dtype=np.int64)
    flip = rng.random(len(edges)) < 0.5
    edges[flip] = edges[flip][:, ::-1]
    rels = rng.zipf(1.6, size=len(edges)) % n_rel
    triples = np.stack([edges[:, 0], rels, edges[:, 1]], axis=1)
    return KnowledgeGraph([f"e{i}" for i in range(n_ent)], [f"r{i}" for i in range(n_rel)], triples,
                          np.full(n_ent, SINGLE, np.int8))
