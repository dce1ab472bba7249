import io

import numpy as np
import pytest

from rsnkg.kg import KG1, KG2, KnowledgeGraph, load_triples


def graph_from_text(text: str, tag: str = "single") -> KnowledgeGraph:
    return load_triples(io.StringIO(text), tag)


def depth_example() -> KnowledgeGraph:
    """e1 -> e2 -> {e3, e4, e5}, with e1 and e5 directly linked.

    Walking e1 -> e2, e3 and e4 are two hops from e1 while e5 is one.
    """
    ents = ["e1", "e2", "e3", "e4", "e5"]
    t = [(0, 0, 1), (1, 0, 2), (1, 0, 3), (1, 0, 4), (0, 1, 4)]
    return KnowledgeGraph(ents, ["r", "s"], np.array(t))


def cross_example() -> KnowledgeGraph:
    """e1 (KG1) -> e2 (KG1) -> e3 (KG2) and e2 -> e4 (KG1)."""
    ents = ["e1", "e2", "e3", "e4"]
    t = [(0, 0, 1), (1, 0, 2), (1, 0, 3)]
    origin = np.array([KG1, KG1, KG2, KG1], np.int8)
    return KnowledgeGraph(ents, ["r"], np.array(t), origin)


@pytest.fixture
def toy_text():
    return "a\tr\tb\nb\tr\tc\na\ts\tc\nc\ts\td\n"


@pytest.fixture
def toy_kg(toy_text):
    return graph_from_text(toy_text)
