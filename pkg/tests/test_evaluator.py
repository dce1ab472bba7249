import io

import numpy as np
import pytest

from rsnkg.evaluator import (
    Metrics,
    align_entities,
    complete_triples,
    format_table,
    hits_at_k,
    mrr,
    pessimistic_ranks,
    summarize,
    write_ranks_csv,
    write_tsv,
)
from rsnkg.kg import KG1, KG2, KnowledgeGraph, add_reverse_relations
from rsnkg.model import RSN
from rsnkg.synthetic import random_kg


class TestMetrics:
    def test_formula(self):
        assert hits_at_k([1, 2, 10], 1) == pytest.approx(1 / 3)
        assert hits_at_k([1, 2, 10], 10) == 1.0
        assert mrr([1, 2, 10]) == pytest.approx((1 + 0.5 + 0.1) / 3)

    def test_all_first(self):
        m = summarize([1, 1, 1])
        assert m.hits1 == m.hits10 == m.mrr == 1.0

    def test_independent_tally(self):
        ranks = np.random.default_rng(0).integers(1, 200, size=1000)
        h1 = h10 = rr = 0.0
        for r in ranks.tolist():
            h1 += r == 1
            h10 += r <= 10
            rr += 1.0 / r
        m = summarize(ranks)
        assert m.hits1 == h1 / 1000 and m.hits10 == h10 / 1000
        assert m.mrr == pytest.approx(rr / 1000, abs=1e-12)
        assert m.hits1 <= m.hits10 and m.mrr >= m.hits1

    def test_errors(self):
        with pytest.raises(ValueError):
            mrr([])
        with pytest.raises(ValueError):
            hits_at_k([], 1)
        with pytest.raises(ValueError):
            mrr([0, 1])

    def test_pessimistic_ties(self):
        scores = np.array([[0.5, 0.5, 0.5, 0.1]])
        assert pessimistic_ranks(scores, np.array([1])).tolist() == [3]
        assert pessimistic_ranks(scores, np.array([3])).tolist() == [4]

    def test_reports(self):
        m = summarize([1, 3])
        buf = io.StringIO()
        write_tsv(m, buf)
        assert buf.getvalue() == "hits@1\t0.5\nhits@10\t1.0\nmrr\t0.6666666666666666\nqueries\t2\n"
        buf = io.StringIO()
        write_ranks_csv(m, buf)
        assert buf.getvalue() == "query,rank\n0,1\n1,3\n"
        assert "hits@1   0.5000" in format_table(m)


def joint_graph(n=50):
    origin = np.array([KG1] * n + [KG2] * n, np.int8)
    t = np.array([[i, 0, (i + 1) % n] for i in range(n)] + [[n + i, 1, n + (i + 1) % n] for i in range(n)])
    return KnowledgeGraph([f"a{i}" for i in range(n)] + [f"b{i}" for i in range(n)], ["r", "s"], t, origin)


class TestAlignment:
    def test_exact_copies(self):
        kg = joint_graph()
        rng = np.random.default_rng(0)
        half = rng.standard_normal((50, 8))
        emb = np.concatenate([half, half])
        pairs = np.array([[i, 50 + i] for i in range(50)])
        m = align_entities(emb, kg, pairs)
        assert m.hits1 == 1.0 and m.mrr == 1.0
        assert len(m.ranks) == 100

    def test_random_embeddings(self):
        n = 100
        kg = joint_graph(n)
        rng = np.random.default_rng(1)
        mrrs = []
        for _ in range(10):
            emb = rng.standard_normal((2 * n, 16))
            pairs = np.array([[i, n + i] for i in range(n)])
            mrrs.append(align_entities(emb, kg, pairs, direction="forward").mrr)
        expected = sum(1 / r for r in range(1, n + 1)) / n
        assert abs(np.mean(mrrs) - expected) <= 0.5 * expected

    def test_scale_invariance(self):
        kg = joint_graph()
        emb = np.random.default_rng(2).standard_normal((100, 8))
        pairs = np.array([[i, 50 + i] for i in range(50)])
        a = align_entities(emb, kg, pairs)
        b = align_entities(3.7 * emb, kg, pairs)
        assert np.array_equal(a.ranks, b.ranks)

    def test_directions(self):
        kg = joint_graph()
        emb = np.random.default_rng(3).standard_normal((100, 8))
        pairs = np.array([[i, 50 + i] for i in range(50)])
        f = align_entities(emb, kg, pairs, direction="forward")
        b = align_entities(emb, kg, pairs, direction="backward")
        both = align_entities(emb, kg, pairs)
        assert both.hits1 == pytest.approx((f.hits1 + b.hits1) / 2)
        assert both.mrr == pytest.approx((f.mrr + b.mrr) / 2)

    def test_missing_entities(self):
        kg = joint_graph()
        with pytest.raises(ValueError, match=r"missing.*\[500\]"):
            align_entities(np.zeros((100, 4)), kg, np.array([[0, 500]]))

    def test_read_only(self):
        kg = joint_graph()
        emb = np.random.default_rng(3).standard_normal((100, 8))
        before = emb.copy()
        align_entities(emb, kg, np.array([[0, 50]]))
        assert np.array_equal(before, emb)


def tiny_completion(seed=0):
    rng = np.random.default_rng(seed)
    t = random_kg(10, 3, 20, rng)
    kg = add_reverse_relations(KnowledgeGraph([f"e{i}" for i in range(10)], ["p", "q", "r"], t))
    model = RSN(10, kg.num_relations, dim=6, keep_prob=1.0, seed=seed, dtype=np.float64)
    for k in model.params:
        model.params[k] = model.params[k] + 0.3 * rng.standard_normal(model.params[k].shape)
    return kg, model, t


def brute_force_ranks(model, kg, test, known):
    """Enumerate every candidate, score it, drop other known answers, count."""
    truth = set(map(tuple, np.concatenate(known + [test]).tolist()))
    E = model.params["embeddings"][: kg.num_entities]
    ranks = []
    for direction in ("object", "subject"):
        for s, r, o in test.tolist():
            if direction == "object":
                head, rel, answer = s, r, o
                is_known = lambda c: (s, r, c) in truth
            else:
                head, rel, answer = o, int(kg.reverse_of[r]), s
                is_known = lambda c: (c, r, o) in truth
            out = model.predict(np.array([[head, rel]]))[0, 1]
            scores = [float(out @ E[c]) for c in range(kg.num_entities)]
            rank = 1
            for c in range(kg.num_entities):
                if c != answer and not is_known(c) and scores[c] >= scores[answer]:
                    rank += 1
            ranks.append(rank)
    return ranks


class TestCompletion:
    def test_brute_force_oracle(self):
        kg, model, t = tiny_completion()
        test, train = t[:6], t[6:]
        m = complete_triples(model, test, kg, [train])
        assert m.ranks.tolist() == brute_force_ranks(model, kg, test, [train])

    def test_other_answers_filtered(self):
        kg, model, t = tiny_completion(1)
        s, r, o = t[0].tolist()
        other = next(c for c in range(10) if c not in (o, s))
        extra = np.array([[s, r, other]])
        E = model.params["embeddings"]
        out = model.predict(np.array([[s, r]]))[0, 1]
        # force the other answer to outscore the true one
        E[other] = E[o] + 5 * out / np.linalg.norm(out)
        raw = complete_triples(model, t[:1], kg, [], directions=("object",), filtered=False)
        filt = complete_triples(model, t[:1], kg, [extra], directions=("object",))
        assert filt.ranks[0] < raw.ranks[0]

    def test_filtered_never_worse(self):
        kg, model, t = tiny_completion(2)
        raw = complete_triples(model, t, kg, [], filtered=False)
        filt = complete_triples(model, t, kg, [t])
        assert (filt.ranks <= raw.ranks).all()

    def test_needs_reverse(self):
        t = np.array([[0, 0, 1]])
        kg = KnowledgeGraph(["a", "b"], ["r"], t)
        model = RSN(2, 1, dim=2)
        with pytest.raises(ValueError, match="reverse"):
            complete_triples(model, t, kg)

    def test_read_only(self):
        kg, model, t = tiny_completion()
        before = {k: v.copy() for k, v in {**model.params, **model.stats}.items()}
        complete_triples(model, t, kg, [t])
        after = {**model.params, **model.stats}
        assert all(np.array_equal(before[k], after[k]) for k in before)
