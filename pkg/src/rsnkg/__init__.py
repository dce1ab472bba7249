"""Recurrent skipping network embeddings for knowledge graphs."""

__version__ = "0.1.0"

from .kg import (  # noqa: E402
    GraphError,
    KnowledgeGraph,
    ParseError,
    SeedAlignment,
    add_reverse_relations,
    assemble_joint,
    load_seeds,
    load_triples,
    read_graph,
    save_graph,
)
from .model import RSN  # noqa: E402
from .trainer import TrainConfig, train  # noqa: E402
from .walker import Corpus, WalkConfig, sample_paths  # noqa: E402

__all__ = [
    "Corpus",
    "GraphError",
    "KnowledgeGraph",
    "ParseError",
    "RSN",
    "SeedAlignment",
    "TrainConfig",
    "WalkConfig",
    "add_reverse_relations",
    "assemble_joint",
    "load_seeds",
    "load_triples",
    "read_graph",
    "sample_paths",
    "save_graph",
    "train",
]
