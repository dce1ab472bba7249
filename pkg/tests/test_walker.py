import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rsnkg.kg import KnowledgeGraph, add_reverse_relations
from rsnkg.walker import (
    Corpus,
    DeadEndError,
    _Walker,
    TransitionContext,
    WalkConfig,
    bias,
    cross_kg_bias,
    depth_bias,
    pick_relation,
    read_corpus,
    sample_paths,
    save_corpus,
    transition_distribution,
)

from conftest import cross_example, depth_example, graph_from_text

SINGLE_MODE = WalkConfig(alpha=0.9, mode="single")


def empirical_next(kg, cfg, prev, cur, n, seed=0):
    """Frequencies of the entity following (prev, cur) in length-5 walks."""
    rel = kg.connecting_relations[(prev, cur)][0]
    w = _Walker(kg, WalkConfig(cfg.alpha, cfg.beta, 1, 5, cfg.mode, seed))
    rng = np.random.default_rng(seed)
    nxt = np.array([w.walk(prev, rel, cur, rng)[4] for _ in range(n)])
    return {e: float(np.mean(nxt == e)) for e in set(nxt.tolist())}


class TestConfig:
    def test_ranges(self):
        for bad in (dict(alpha=0.0), dict(alpha=1.0), dict(beta=1.5), dict(n=0), dict(length=1), dict(mode="x")):
            with pytest.raises(ValueError):
                WalkConfig(**bad)

    def test_even_length_warns_and_truncates(self):
        with pytest.warns(UserWarning, match="even path length"):
            cfg = WalkConfig(length=8)
        assert cfg.target_length == 7


class TestBiases:
    def test_depth_two_hops(self):
        kg = depth_example()
        assert depth_bias(0, 2, kg, 0.9) == 0.9

    def test_depth_direct_edge(self):
        kg = depth_example()
        assert depth_bias(0, 4, kg, 0.9) == pytest.approx(0.1)

    def test_depth_backtrack(self):
        kg = depth_example()
        assert depth_bias(0, 0, kg, 0.9) == pytest.approx(0.1)

    def test_cross_other_kg(self):
        kg = cross_example()
        assert cross_kg_bias(0, 2, kg, WalkConfig(beta=0.9)) == 0.9

    def test_cross_same_kg(self):
        kg = cross_example()
        assert cross_kg_bias(0, 3, kg, WalkConfig(beta=0.9)) == pytest.approx(0.1)

    def test_single_mode_is_one(self):
        kg = cross_example()
        cfg = WalkConfig(mode="single")
        assert cross_kg_bias(0, 2, kg, cfg) == 1.0 and cross_kg_bias(0, 3, kg, cfg) == 1.0

    def test_product(self):
        kg = cross_example()
        cfg = WalkConfig(alpha=0.7, beta=0.8)
        for cand in (2, 3):
            assert bias(0, cand, kg, cfg) == depth_bias(0, cand, kg, 0.7) * cross_kg_bias(0, cand, kg, cfg)


class TestTransitions:
    def test_depth_example_distribution(self):
        kg = depth_example()
        ctx = TransitionContext.build(0, 1, kg, SINGLE_MODE)
        assert ctx.candidates == (2, 3, 4)
        assert transition_distribution(ctx) == pytest.approx([9 / 19, 9 / 19, 1 / 19], abs=1e-12)

    def test_single_candidate(self):
        kg = graph_from_text("a\tr\tb\nb\tr\tc\n")
        ctx = TransitionContext.build(0, 1, kg, SINGLE_MODE)
        assert transition_distribution(ctx).tolist() == [1.0]

    def test_half_alpha_is_uniform(self):
        kg = depth_example()
        ctx = TransitionContext.build(0, 1, kg, WalkConfig(alpha=0.5, mode="single"))
        assert transition_distribution(ctx) == pytest.approx([1 / 3] * 3)

    def test_dead_end(self):
        kg = graph_from_text("a\tr\tb\n")
        with pytest.raises(DeadEndError):
            transition_distribution(TransitionContext.build(0, 1, kg, SINGLE_MODE))

    def test_line_graph_depth_frequency(self):
        # a - b - c with reverses; from (a, b) the choices are c (two hops) or back to a
        kg = add_reverse_relations(graph_from_text("a\tr\tb\nb\tr\tc\n"))
        freq = empirical_next(kg, SINGLE_MODE, 0, 1, 100_000)
        assert abs(freq[2] - 0.9) <= 0.02

    def test_higher_alpha_goes_deeper(self):
        kg = add_reverse_relations(graph_from_text("a\tr\tb\nb\tr\tc\n"))
        deep = empirical_next(kg, WalkConfig(alpha=0.9, mode="single"), 0, 1, 20_000)[2]
        flat = empirical_next(kg, WalkConfig(alpha=0.5, mode="single"), 0, 1, 20_000)[2]
        n = 20_000
        se = np.sqrt(deep * (1 - deep) / n + flat * (1 - flat) / n)
        assert (deep - flat) / se > 2.33


class TestPickRelation:
    def test_one_relation(self):
        kg = graph_from_text("a\tr\tb\n")
        rng = np.random.default_rng(0)
        assert {pick_relation(0, 1, kg, rng) for _ in range(50)} == {0}

    def test_two_parallel_relations(self):
        kg = graph_from_text("a\tr\tb\na\ts\tb\n")
        rng = np.random.default_rng(0)
        draws = np.array([pick_relation(0, 1, kg, rng) for _ in range(10_000)])
        assert abs(np.mean(draws == 0) - 0.5) <= 0.02

    def test_reverse_is_pickable(self):
        kg = add_reverse_relations(graph_from_text("s\tr\to\n"))
        assert pick_relation(1, 0, kg, np.random.default_rng(0)) == 1

    def test_missing(self):
        kg = graph_from_text("a\tr\tb\n")
        with pytest.raises(RuntimeError):
            pick_relation(1, 0, kg, np.random.default_rng(0))


def _check_paths(corpus, kg):
    for p in corpus:
        assert len(p) % 2 == 1 and len(p) >= 3
        for i in range(0, len(p) - 2, 2):
            assert kg.has_triple(p[i], p[i + 1], p[i + 2])


class TestSamplePaths:
    def test_single_triple_length_three(self):
        kg = add_reverse_relations(graph_from_text("s\tr\to\n"))
        corpus = sample_paths(kg, WalkConfig(length=3, mode="single"))
        assert sorted(corpus) == [[0, 0, 1], [1, 1, 0]]

    def test_count_and_validity(self, toy_kg):
        kg = add_reverse_relations(toy_kg)
        corpus = sample_paths(kg, WalkConfig(n=3, length=9, mode="single"))
        assert len(corpus) == 3 * kg.num_triples
        _check_paths(corpus, kg)
        assert max(len(p) for p in corpus) == 9

    def test_dead_ends_keep_partial_paths(self):
        kg = graph_from_text("a\tr\tb\nb\tr\tc\n")
        corpus = sample_paths(kg, WalkConfig(length=7, mode="single"))
        assert sorted(corpus) == [[0, 0, 1, 0, 2], [1, 0, 2]]

    def test_original_start_set(self, toy_kg):
        kg = add_reverse_relations(toy_kg)
        corpus = sample_paths(kg, WalkConfig(length=3, start="original"))
        assert len(corpus) == toy_kg.num_triples

    def test_empty_graph(self):
        kg = KnowledgeGraph(["a"], ["r"], np.zeros((0, 3)))
        with pytest.raises(ValueError, match="empty"):
            sample_paths(kg, WalkConfig())

    def test_seed_reproducible(self, toy_kg):
        kg = add_reverse_relations(toy_kg)
        cfg = WalkConfig(n=2, length=11, seed=5)
        assert sample_paths(kg, cfg) == sample_paths(kg, cfg)
        assert sample_paths(kg, cfg) != sample_paths(kg, WalkConfig(n=2, length=11, seed=6))

    def test_worker_count_does_not_matter(self):
        from rsnkg.synthetic import isomorphic_pair
        from rsnkg.kg import assemble_joint

        task = isomorphic_pair(n_ent=300, avg_degree=16, seed=1)
        kg = add_reverse_relations(assemble_joint(task.kg1, task.kg2, task.seeds))
        assert kg.num_triples > 2048  # more than one shard
        cfg = WalkConfig(length=7, seed=3)
        assert sample_paths(kg, cfg, workers=1) == sample_paths(kg, cfg, workers=2)

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 7), st.integers(0, 2), st.integers(0, 7)), min_size=1, max_size=20),
           st.integers(0, 2**16))
    def test_windows_are_triples(self, rows, seed):
        text = "".join(f"e{s}\tr{r}\te{o}\n" for s, r, o in rows)
        kg = add_reverse_relations(graph_from_text(text))
        _check_paths(sample_paths(kg, WalkConfig(length=9, seed=seed, mode="single")), kg)


class TestCorpusFile:
    def test_round_trip(self, tmp_path, toy_kg):
        kg = add_reverse_relations(toy_kg)
        cfg = WalkConfig(length=5, seed=2)
        corpus = sample_paths(kg, cfg)
        save_corpus(corpus, cfg, kg.checksum, tmp_path / "c.txt")
        back, meta = read_corpus(tmp_path / "c.txt")
        assert back == corpus
        assert meta["graph"] == kg.checksum and meta["l"] == "5" and meta["alpha"] == "0.9"

    def test_tokens(self, tmp_path):
        cfg = WalkConfig(length=3)
        save_corpus(Corpus.from_paths([[4, 1, 2]]), cfg, "abc", tmp_path / "c.txt")
        assert (tmp_path / "c.txt").read_text().splitlines()[1] == "e4 r1 e2"

    def test_bad_token(self, tmp_path):
        (tmp_path / "c.txt").write_text("# rsnkg-corpus 1 l=3\ne1 e2 e3\n")
        with pytest.raises(ValueError, match=":2: expected r-token"):
            read_corpus(tmp_path / "c.txt")
