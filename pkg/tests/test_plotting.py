import numpy as np

from rsnkg.plotting import plot_degree_distributions, plot_ranks, plot_training, plot_variant_curves
from rsnkg.trainer import LossReport

PNG = b"\x89PNG"


def test_training_figure_is_reproducible(tmp_path):
    history = [LossReport(e, 10.0 / e, 0.1, 100) for e in range(1, 6)]
    a = plot_training(history, [(5, 0.4)], tmp_path / "a.png")
    b = plot_training(history, [(5, 0.4)], tmp_path / "b.png")
    assert a.read_bytes()[:4] == PNG
    assert a.read_bytes() == b.read_bytes()


def test_other_figures(tmp_path):
    paths = [
        plot_variant_curves({"rsn": [(5, 0.2), (10, 0.6)], "rnn": [(5, 0.1), (10, 0.2)]}, tmp_path / "v.png"),
        plot_ranks(np.array([1, 1, 2, 7, 40]), tmp_path / "sub" / "r.png", "ranks"),
        plot_degree_distributions({1: 10, 2: 5, 0: 1}, {1: 3, 4: 1}, tmp_path / "d.png", 0.03),
    ]
    for p in paths:
        assert p.read_bytes()[:4] == PNG
