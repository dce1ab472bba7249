"""Knowledge graph loading, indexing and transformation."""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

REVERSE_SUFFIX = "^-"
GRAPH_FORMAT = "RSNKG-GRAPH 1"

# origin tags
SINGLE, KG1, KG2 = 0, 1, 2
ORIGIN_NAMES = {SINGLE: "single", KG1: "KG1", KG2: "KG2"}
ORIGIN_CODES = {v: k for k, v in ORIGIN_NAMES.items()}


class GraphError(ValueError):
    """Malformed input data or an invalid graph operation."""


class ParseError(GraphError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)
        self.line = line
        self.path = path


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class KnowledgeGraph:
    """Immutable multi-relational directed graph.

    Entities and relations are dense integer ids in separate id spaces.
    ``reverse_of[r]`` is the partner of relation ``r`` once reverse relations
    have been added, ``-1`` otherwise. Triples are stored as an ``(N, 3)``
    int64 array of ``(subject, relation, object)`` rows, deduplicated and in
    first-appearance order.
    """

    def __init__(
        self,
        entities: Sequence[str],
        relations: Sequence[str],
        triples: np.ndarray,
        origin: np.ndarray | None = None,
        reverse_of: np.ndarray | None = None,
    ):
        self.entities: tuple[str, ...] = tuple(entities)
        self.relations: tuple[str, ...] = tuple(relations)
        triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        if origin is None:
            origin = np.full(len(self.entities), SINGLE, dtype=np.int8)
        if reverse_of is None:
            reverse_of = np.full(len(self.relations), -1, dtype=np.int64)
        self.triples = _frozen(triples.copy())
        self.origin = _frozen(np.asarray(origin, dtype=np.int8).copy())
        self.reverse_of = _frozen(np.asarray(reverse_of, dtype=np.int64).copy())
        self._validate()

    def _validate(self) -> None:
        ne, nr = len(self.entities), len(self.relations)
        if len(set(self.entities)) != ne:
            raise GraphError("entity labels are not unique")
        if len(set(self.relations)) != nr:
            raise GraphError("relation labels are not unique")
        if self.origin.shape != (ne,):
            raise GraphError("origin must cover every entity")
        if self.reverse_of.shape != (nr,):
            raise GraphError("reverse_of must cover every relation")
        t = self.triples
        if len(t):
            if t[:, [0, 2]].min() < 0 or t[:, [0, 2]].max() >= ne:
                raise GraphError("triple references an unknown entity")
            if t[:, 1].min() < 0 or t[:, 1].max() >= nr:
                raise GraphError("triple references an unknown relation")

    # -- sizes and lookups -------------------------------------------------

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    @property
    def num_triples(self) -> int:
        return len(self.triples)

    def __len__(self) -> int:
        return self.num_triples

    def __repr__(self) -> str:
        return (
            f"KnowledgeGraph(entities={self.num_entities}, relations={self.num_relations}, "
            f"triples={self.num_triples}, reversed={self.has_reverse})"
        )

    @cached_property
    def entity_index(self) -> dict[str, int]:
        return {label: i for i, label in enumerate(self.entities)}

    @cached_property
    def relation_index(self) -> dict[str, int]:
        return {label: i for i, label in enumerate(self.relations)}

    @property
    def has_reverse(self) -> bool:
        return bool((self.reverse_of >= 0).any())

    @cached_property
    def is_reverse(self) -> np.ndarray:
        """Boolean mask over relations marking the synthetic reverse ones."""
        mask = np.zeros(self.num_relations, dtype=bool)
        for i, label in enumerate(self.relations):
            if self.reverse_of[i] >= 0 and label.endswith(REVERSE_SUFFIX):
                mask[i] = True
        return _frozen(mask)

    @cached_property
    def original_triples(self) -> np.ndarray:
        """Triples whose relation is not a synthetic reverse."""
        return _frozen(self.triples[~self.is_reverse[self.triples[:, 1]]])

    @cached_property
    def triple_set(self) -> frozenset[tuple[int, int, int]]:
        return frozenset(map(tuple, self.triples.tolist()))

    def has_triple(self, s: int, r: int, o: int) -> bool:
        return (s, r, o) in self.triple_set

    # -- adjacency ---------------------------------------------------------

    @cached_property
    def adjacency(self) -> tuple[tuple[tuple[int, int], ...], ...]:
        """Per-entity list of ``(relation, neighbor)`` out-edges."""
        adj: list[list[tuple[int, int]]] = [[] for _ in range(self.num_entities)]
        for s, r, o in self.triples.tolist():
            adj[s].append((r, o))
        return tuple(tuple(a) for a in adj)

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        """Distinct out-neighbors per entity, in first-appearance order."""
        return tuple(tuple(dict.fromkeys(o for _, o in a)) for a in self.adjacency)

    @cached_property
    def undirected_neighbors(self) -> tuple[frozenset[int], ...]:
        """Neighbor sets of the relation-merged undirected graph."""
        nb: list[set[int]] = [set() for _ in range(self.num_entities)]
        for s, _, o in self.triples.tolist():
            nb[s].add(o)
            nb[o].add(s)
        return tuple(frozenset(n) for n in nb)

    @cached_property
    def connecting_relations(self) -> dict[tuple[int, int], tuple[int, ...]]:
        """``(subject, object) -> relations`` for every directed edge."""
        out: dict[tuple[int, int], list[int]] = {}
        for s, r, o in self.triples.tolist():
            out.setdefault((s, o), []).append(r)
        return {k: tuple(v) for k, v in out.items()}

    @cached_property
    def degree(self) -> np.ndarray:
        """Number of original triples each entity participates in."""
        t = self.original_triples
        deg = np.bincount(t[:, 0], minlength=self.num_entities)
        other = t[:, 2] != t[:, 0]
        deg += np.bincount(t[other, 2], minlength=self.num_entities)
        return _frozen(deg.astype(np.int64))

    # -- serialization -------------------------------------------------------

    def to_bytes(self) -> bytes:
        buf = io.StringIO()
        write_graph(self, buf)
        return buf.getvalue().encode("utf-8")

    @cached_property
    def checksum(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def subgraph(self, keep: Iterable[int]) -> "KnowledgeGraph":
        """Induced subgraph on ``keep``, re-indexed; relations are retained only if used."""
        keep_ids = sorted(set(int(e) for e in keep))
        emap = np.full(self.num_entities, -1, dtype=np.int64)
        emap[keep_ids] = np.arange(len(keep_ids))
        t = self.triples
        sel = (emap[t[:, 0]] >= 0) & (emap[t[:, 2]] >= 0)
        t = t[sel]
        used = sorted(set(t[:, 1].tolist()))
        rmap = np.full(self.num_relations, -1, dtype=np.int64)
        rmap[used] = np.arange(len(used))
        rev = self.reverse_of[used]
        rev = np.where(rev >= 0, rmap[np.maximum(rev, 0)], -1)
        new_t = np.stack([emap[t[:, 0]], rmap[t[:, 1]], emap[t[:, 2]]], axis=1)
        return KnowledgeGraph(
            [self.entities[i] for i in keep_ids],
            [self.relations[i] for i in used],
            new_t,
            self.origin[keep_ids],
            rev,
        )


@dataclass(frozen=True)
class SeedAlignment:
    """One-to-one entity pairs ``(kg1 entity label, kg2 entity label)``."""

    pairs: tuple[tuple[str, str], ...]

    def __post_init__(self):
        left = [a for a, _ in self.pairs]
        right = [b for _, b in self.pairs]
        if len(set(left)) != len(left) or len(set(right)) != len(right):
            raise GraphError("seed alignment is not one-to-one")

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)


# -- loading -------------------------------------------------------------


def _read_lines(source: str | Path | IO[str]) -> tuple[list[str], str | None]:
    if isinstance(source, (str, Path)):
        path = str(source)
        with open(source, encoding="utf-8") as fh:
            return fh.read().splitlines(), path
    return source.read().splitlines(), getattr(source, "name", None)


def load_triples(source: str | Path | IO[str], tag: str = "single") -> KnowledgeGraph:
    """Parse a tab-separated triple dump into a graph.

    Vocabularies are assigned in first-appearance order and duplicate lines
    are dropped. ``tag`` is the origin recorded for every entity
    (``"single"``, ``"KG1"`` or ``"KG2"``).
    """
    if tag not in ORIGIN_CODES:
        raise GraphError(f"unknown KG tag {tag!r}")
    lines, path = _read_lines(source)
    ents: dict[str, int] = {}
    rels: dict[str, int] = {}
    seen: dict[tuple[int, int, int], None] = {}
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise ParseError(f"expected 3 tab-separated fields, got {len(fields)}", lineno, path)
        s, r, o = fields
        for label in fields:
            if not label:
                raise ParseError("empty field", lineno, path)
            if label.endswith(REVERSE_SUFFIX):
                raise ParseError(f"label {label!r} uses reserved suffix {REVERSE_SUFFIX!r}", lineno, path)
        si = ents.setdefault(s, len(ents))
        ri = rels.setdefault(r, len(rels))
        oi = ents.setdefault(o, len(ents))
        seen[(si, ri, oi)] = None
    if not seen:
        raise ParseError("no triples in input", None, path)
    origin = np.full(len(ents), ORIGIN_CODES[tag], dtype=np.int8)
    return KnowledgeGraph(list(ents), list(rels), np.array(list(seen), dtype=np.int64), origin)


def load_seeds(source: str | Path | IO[str]) -> SeedAlignment:
    lines, path = _read_lines(source)
    pairs = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise ParseError(f"expected 2 tab-separated fields, got {len(fields)}", lineno, path)
        pairs.append((fields[0], fields[1]))
    return SeedAlignment(tuple(pairs))


def read_labeled_triples(source: str | Path | IO[str], kg: KnowledgeGraph) -> np.ndarray:
    """Map a tab-separated triple file onto the ids of an existing graph."""
    lines, path = _read_lines(source)
    ents, rels = kg.entity_index, kg.relation_index
    out = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise ParseError(f"expected 3 tab-separated fields, got {len(fields)}", lineno, path)
        s, r, o = fields
        for label, vocab in ((s, ents), (r, rels), (o, ents)):
            if label not in vocab:
                raise ParseError(f"unknown label {label!r}", lineno, path)
        out.append((ents[s], rels[r], ents[o]))
    return np.array(out, dtype=np.int64).reshape(-1, 3)


def write_triples(kg: KnowledgeGraph, fh: IO[str], original_only: bool = True) -> None:
    t = kg.original_triples if original_only else kg.triples
    for s, r, o in t.tolist():
        fh.write(f"{kg.entities[s]}\t{kg.relations[r]}\t{kg.entities[o]}\n")


# -- transformations -----------------------------------------------------


def add_reverse_relations(kg: KnowledgeGraph) -> KnowledgeGraph:
    """Add ``(o, r^-, s)`` for every ``(s, r, o)``.

    Reverse relation ``r^-`` gets id ``r + |R|``, so ``reverse_of`` is an
    involution.
    """
    if kg.has_reverse:
        raise GraphError("graph already has reverse relations")
    nr = kg.num_relations
    rels = list(kg.relations) + [label + REVERSE_SUFFIX for label in kg.relations]
    rev = np.concatenate([np.arange(nr, 2 * nr), np.arange(nr)])
    t = kg.triples
    back = np.stack([t[:, 2], t[:, 1] + nr, t[:, 0]], axis=1)
    return KnowledgeGraph(kg.entities, rels, np.concatenate([t, back]), kg.origin, rev)


def _joint_relation_labels(kg1: KnowledgeGraph, kg2: KnowledgeGraph) -> tuple[list[str], list[str]]:
    shared = set(kg1.relations) & set(kg2.relations)
    r1 = [f"{x}@KG1" if x in shared else x for x in kg1.relations]
    r2 = [f"{x}@KG2" if x in shared else x for x in kg2.relations]
    return r1, r2


def assemble_joint(kg1: KnowledgeGraph, kg2: KnowledgeGraph, seeds: SeedAlignment) -> KnowledgeGraph:
    """Merge two graphs and copy seed entities' triples to their counterparts.

    Seed counterparts stay distinct nodes. Copying runs in both directions
    and uses the original triples of each side, so a triple between two seed
    entities yields copies for each endpoint separately.
    """
    if kg1.has_reverse or kg2.has_reverse:
        raise GraphError("assemble joint graphs before adding reverse relations")
    clash = set(kg1.entities) & set(kg2.entities)
    if clash:
        sample = ", ".join(sorted(clash)[:5])
        raise GraphError(f"{len(clash)} entity labels occur in both graphs (e.g. {sample})")
    r1, r2 = _joint_relation_labels(kg1, kg2)
    n1e, n1r = kg1.num_entities, kg1.num_relations
    entities = list(kg1.entities) + list(kg2.entities)
    origin = np.concatenate([np.full(n1e, KG1, np.int8), np.full(kg2.num_entities, KG2, np.int8)])
    t1 = kg1.triples
    t2 = kg2.triples + np.array([n1e, n1r, n1e])

    counterpart: dict[int, int] = {}
    missing = []
    for a, b in seeds:
        ia = kg1.entity_index.get(a)
        ib = kg2.entity_index.get(b)
        if ia is None:
            missing.append(a)
        if ib is None:
            missing.append(b)
        if ia is not None and ib is not None:
            counterpart[ia] = ib + n1e
            counterpart[ib + n1e] = ia
    if missing:
        raise GraphError(f"seed alignment references unknown entities: {missing[:10]}")

    base = np.concatenate([t1, t2])
    rows: dict[tuple[int, int, int], None] = dict.fromkeys(map(tuple, base.tolist()))
    for s, r, o in base.tolist():
        if s in counterpart:
            rows.setdefault((counterpart[s], r, o), None)
        if o in counterpart:
            rows.setdefault((s, r, counterpart[o]), None)
    return KnowledgeGraph(entities, r1 + r2, np.array(list(rows), dtype=np.int64), origin)


def seed_ids(kg: KnowledgeGraph, pairs: Iterable[tuple[str, str]]) -> np.ndarray:
    """Map label pairs to entity-id pairs in ``kg``; unknown labels raise."""
    idx = kg.entity_index
    out, missing = [], []
    for a, b in pairs:
        if a not in idx:
            missing.append(a)
        if b not in idx:
            missing.append(b)
        if a in idx and b in idx:
            out.append((idx[a], idx[b]))
    if missing:
        raise GraphError(f"{len(missing)} entities missing from vocabulary: {missing[:10]}")
    return np.array(out, dtype=np.int64).reshape(-1, 2)


# -- frequencies and noise -------------------------------------------------


@dataclass(frozen=True)
class FrequencyTable:
    entity_counts: np.ndarray
    relation_counts: np.ndarray


def element_frequencies(kg: KnowledgeGraph) -> FrequencyTable:
    """Occurrence counts: triple slots per entity, triples per relation."""
    if kg.num_triples == 0:
        raise GraphError("empty graph")
    t = kg.triples
    ent = np.bincount(t[:, 0], minlength=kg.num_entities) + np.bincount(t[:, 2], minlength=kg.num_entities)
    rel = np.bincount(t[:, 1], minlength=kg.num_relations)
    return FrequencyTable(_frozen(ent.astype(np.int64)), _frozen(rel.astype(np.int64)))


class NoiseDistribution:
    """Per-type negative-sampling distributions with ``P(y) ∝ count(y)^0.75``."""

    POWER = 0.75

    def __init__(self, entity_probs: np.ndarray, relation_probs: np.ndarray):
        self.entity_probs = _frozen(np.asarray(entity_probs, dtype=np.float64))
        self.relation_probs = _frozen(np.asarray(relation_probs, dtype=np.float64))
        self._cdf = {
            "entity": _frozen(self._cumulative(self.entity_probs)),
            "relation": _frozen(self._cumulative(self.relation_probs)),
        }

    @staticmethod
    def _cumulative(p: np.ndarray) -> np.ndarray:
        c = np.cumsum(p)
        c /= c[-1]
        return c

    def probs(self, kind: str) -> np.ndarray:
        return self.entity_probs if kind == "entity" else self.relation_probs

    def sample(self, kind: str, size, rng: np.random.Generator) -> np.ndarray:
        cdf = self._cdf[kind]
        idx = np.searchsorted(cdf, rng.random(size), side="right")
        return np.minimum(idx, len(cdf) - 1)


def _powered(counts: np.ndarray, kind: str) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    if counts.size == 0 or not (counts > 0).any():
        raise GraphError(f"all {kind} counts are zero")
    w = np.where(counts > 0, counts ** NoiseDistribution.POWER, 0.0)
    return w / w.sum()


def noise_distribution(freqs: FrequencyTable) -> NoiseDistribution:
    return NoiseDistribution(
        _powered(freqs.entity_counts, "entity"),
        _powered(freqs.relation_counts, "relation"),
    )


# -- serialized graph format -------------------------------------------------
#
#   RSNKG-GRAPH 1\n
#   entities <n>\n       then n lines: <label>\t<origin>\n
#   relations <m>\n      then m lines: <label>\t<reverse id, -1 if none>\n
#   triples <t>\n        then t lines: <subject id>\t<relation id>\t<object id>\n
#
# UTF-8, "\n" line endings, ids in decimal.


def write_graph(kg: KnowledgeGraph, fh: IO[str]) -> None:
    fh.write(GRAPH_FORMAT + "\n")
    fh.write(f"entities {kg.num_entities}\n")
    for label, o in zip(kg.entities, kg.origin.tolist()):
        fh.write(f"{label}\t{ORIGIN_NAMES[o]}\n")
    fh.write(f"relations {kg.num_relations}\n")
    for label, r in zip(kg.relations, kg.reverse_of.tolist()):
        fh.write(f"{label}\t{r}\n")
    fh.write(f"triples {kg.num_triples}\n")
    for s, r, o in kg.triples.tolist():
        fh.write(f"{s}\t{r}\t{o}\n")


def save_graph(kg: KnowledgeGraph, path: str | Path) -> None:
    Path(path).write_bytes(kg.to_bytes())


def _section(lines: list[str], pos: int, name: str, path) -> tuple[int, int]:
    head = lines[pos].split(" ") if pos < len(lines) else []
    if len(head) != 2 or head[0] != name or not head[1].isdigit():
        raise ParseError(f"expected '{name} <count>' header", pos + 1, path)
    return int(head[1]), pos + 1


def read_graph(source: str | Path | IO[str]) -> KnowledgeGraph:
    if isinstance(source, (str, Path)):
        path = str(source)
        text = Path(source).read_bytes().decode("utf-8")
    else:
        path, text = getattr(source, "name", None), source.read()
    lines = text.split("\n")
    if not lines or lines[0] != GRAPH_FORMAT:
        raise ParseError(f"not a serialized graph (expected {GRAPH_FORMAT!r})", 1, path)
    pos = 1
    n, pos = _section(lines, pos, "entities", path)
    ents, origin = [], []
    for i in range(n):
        label, tag = lines[pos + i].split("\t")
        ents.append(label)
        origin.append(ORIGIN_CODES[tag])
    pos += n
    m, pos = _section(lines, pos, "relations", path)
    rels, rev = [], []
    for i in range(m):
        label, r = lines[pos + i].split("\t")
        rels.append(label)
        rev.append(int(r))
    pos += m
    t, pos = _section(lines, pos, "triples", path)
    rows = [tuple(map(int, lines[pos + i].split("\t"))) for i in range(t)]
    triples = np.array(rows, dtype=np.int64).reshape(-1, 3)
    return KnowledgeGraph(ents, rels, triples, np.array(origin, np.int8), np.array(rev, np.int64))

