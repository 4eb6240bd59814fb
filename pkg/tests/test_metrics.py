import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qroute.corpus import Event, EventLog, EventType, Kind, TestCase
from qroute.hin import build_hin
from qroute.metrics import (EmptyRelevant, EmptyTest, characterize, evaluate, gini, ndcg_at_k,
                            recall_at_k, reciprocal_rank)
from qroute.router import Scorer
from qroute.sgns import EmbeddingTable


# ---- independent oracles

def recall_oracle(ranking, relevant, k):
    hits = 0
    for r in relevant:
        if r in ranking[:k]:
            hits += 1
    return hits / len(relevant)


def rr_oracle(ranking, relevant):
    best = math.inf
    for r in relevant:
        if r in ranking:
            best = min(best, ranking.index(r) + 1)
    return 0.0 if best == math.inf else 1.0 / best


def ndcg_oracle(ranking, relevant, k):
    gains = [1.0 if u in relevant else 0.0 for u in ranking[:k]]
    dcg = sum(g / math.log(i + 2, 2) for i, g in enumerate(gains))
    ideal = sorted([1.0] * len(relevant) + [0.0] * k, reverse=True)[:k]
    return dcg / sum(g / math.log(i + 2, 2) for i, g in enumerate(ideal))


def random_instance(rng):
    pool = [f"u{i}" for i in range(rng.randint(1, 30))]
    ranking = rng.sample(pool, rng.randint(0, len(pool)))
    relevant = set(rng.sample(pool, rng.randint(1, len(pool))))
    return ranking, relevant, rng.randint(1, 35)


class TestRankingMetrics:
    def test_recall_examples(self):
        assert recall_at_k(["u1", "u2", "u3"], {"u1", "u4"}, 2) == 0.5
        assert recall_at_k(["u1", "u2", "u3"], {"u2", "u1"}, 2) == 1.0

    def test_rr_examples(self):
        assert reciprocal_rank(["a", "b", "c"], {"b"}) == 0.5
        assert reciprocal_rank(["a", "b"], {"z"}) == 0.0

    def test_ndcg_examples(self):
        assert ndcg_at_k(["a", "b", "c"], {"a"}, 3) == 1.0
        assert ndcg_at_k(["a"], {"a"}, 50) == 1.0
        assert ndcg_at_k(["b", "a", "c"], {"a"}, 3) == pytest.approx(0.63093, abs=1e-5)

    def test_against_oracles(self):
        rng = random.Random(42)
        for _ in range(1000):
            ranking, relevant, k = random_instance(rng)
            assert recall_at_k(ranking, relevant, k) == recall_oracle(ranking, relevant, k)
            assert reciprocal_rank(ranking, relevant) == rr_oracle(ranking, relevant)
            assert abs(ndcg_at_k(ranking, relevant, k) - ndcg_oracle(ranking, relevant, k)) <= 1e-12

    @settings(max_examples=300)
    @given(st.permutations(list("abcdefghij")), st.sets(st.sampled_from("abcdefghij"), min_size=1),
           st.integers(1, 12))
    def test_range_and_ideal(self, ranking, relevant, k):
        for v in (recall_at_k(ranking, relevant, k), reciprocal_rank(ranking, relevant),
                  ndcg_at_k(ranking, relevant, k)):
            assert 0.0 <= v <= 1.0 + 1e-15
        m = min(k, len(relevant))
        ideal = set(ranking[:m]) <= relevant
        assert (abs(ndcg_at_k(ranking, relevant, k) - 1.0) < 1e-12) == ideal

    def test_empty_relevant(self):
        for fn in (lambda: recall_at_k(["a"], set(), 1), lambda: reciprocal_rank(["a"], set()),
                   lambda: ndcg_at_k(["a"], set(), 1)):
            with pytest.raises(EmptyRelevant):
                fn()


class TestCharacterize:
    def test_gini_examples(self):
        assert gini([1, 1, 1, 1]) == 0.0
        assert gini([0, 0, 0, 4]) == 0.75
        assert gini([0, 0]) == 0.0

    @given(st.lists(st.integers(0, 50), min_size=1, max_size=40), st.integers(1, 1000))
    def test_gini_scale_invariant(self, xs, c):
        assert gini(xs) == pytest.approx(gini([c * x for x in xs]), abs=1e-12)
        assert 0.0 <= gini(xs) <= 1.0

    def test_min_rule(self):
        log = EventLog([Event.asked("u1", "q1", 100), Event.answered("u2", "q1", 200),
                        Event.answered("u3", "q1", 160)])
        rep = characterize(log)
        assert rep.time_to_first_answer == {"q1": 60}
        assert rep.percentiles["p50"] == 60

    def test_histogram_and_counts(self):
        log = EventLog([
            Event.asked("a", "q1", 1), Event.asked("a", "q2", 2), Event.asked("b", "q3", 3),
            Event.answered("c", "q1", 5), Event.answered("c", "q1", 6), Event.answered("d", "q3", 9),
            Event.answered("d", "q9", 9),  # orphan
        ])
        rep = characterize(log)
        assert rep.answers_per_question == {0: 1, 1: 2, 2: 1}
        assert rep.per_user_asked == {"a": 2, "b": 1}
        assert rep.per_user_answered == {"c": 2, "d": 2}
        # users a, b (zero answers) are active and count toward the Gini
        assert rep.gini_answers == pytest.approx(gini([0, 0, 2, 2]))
        assert "q9" not in rep.time_to_first_answer

    def test_equal_answers(self):
        log = EventLog([Event.asked("a", "q1", 1)] +
                       [Event.answered(u, "q1", 2) for u in ("u1", "u2", "u3", "u4")])
        assert characterize(EventLog(e for e in log if e.etype is EventType.ANSWERED)).gini_answers == 0

    def test_permutation_invariant(self, small_log):
        events = list(small_log)
        random.Random(3).shuffle(events)
        a, b = characterize(small_log), characterize(EventLog(events))
        assert a.lines() == b.lines() and a.answers_per_question == b.answers_per_question


def fake_eval_setup(n_users=500, vec_dim=3):
    users = [f"u{i:03d}" for i in range(n_users)]
    log = EventLog([Event.answered(u, "q0", 1) for u in users])
    h = build_hin(log)
    rng = np.random.default_rng(0)
    nodes = [h.ref(g) for g in range(h.n_nodes)]
    emb = EmbeddingTable(vec_dim, nodes, rng.normal(size=(len(nodes), vec_dim)), hin=h)
    return users, emb


class TestEvaluate:
    def test_perfect_single_case(self):
        users, emb = fake_eval_setup(5)
        q = emb.entity_vector(Kind.QUESTION, "q0")
        target = max(users, key=lambda u: float(emb.entity_vector(Kind.USER, u) @ q))
        scorer = Scorer(np.array([1.0, 0, 0, 0, 0]), 0.0)
        rep = evaluate([TestCase("q0", "nobody", (), frozenset({target}))], emb, scorer, users, (1, 3))
        assert rep.mrr == rep.recall_at_k[1] == rep.ndcg_at_k[3] == 1.0
        assert rep.coverage == 1.0

    def test_random_baseline_expectation(self):
        users, emb = fake_eval_setup(500)
        scorer = Scorer(np.zeros(5), 0.0)
        rng = random.Random(1)
        cases = [TestCase("q0", "nobody", (), frozenset({rng.choice(users)})) for _ in range(1000)]
        rep = evaluate(cases, emb, scorer, users, (10,), seed=3)
        p = 10 / 500
        sigma = math.sqrt(p * (1 - p) / 1000)
        assert abs(rep.random.recall[10] - p) <= 3 * sigma

    def test_coverage_counts_cold_start(self):
        users, emb = fake_eval_setup(5)
        scorer = Scorer(np.zeros(5), 0.0)
        cases = [TestCase("q0", "x", (), frozenset({"u000"})), TestCase("qq", "x", ("zz",), frozenset({"u001"}))]
        rep = evaluate(cases, emb, scorer, users, (1,), popularity={"u001": 3})
        assert rep.coverage == 0.5
        assert rep.popularity.recall[1] == 0.5

    def test_report_schema(self):
        users, emb = fake_eval_setup(20)
        rep = evaluate([TestCase("q0", "x", (), frozenset({"u001"}))], emb, Scorer(np.zeros(5), 0.0),
                       users, (1, 10))
        keys = [line.split(" = ")[0] for line in rep.lines()]
        for k in ("n_cases", "coverage", "mrr", "recall@10", "ndcg@10", "baseline_random_recall@10",
                  "baseline_popularity_mrr"):
            assert k in keys
        values = [float(line.split(" = ")[1]) for line in rep.lines()[1:]]
        assert all(0 <= v <= 1 for v in values)

    def test_empty(self):
        users, emb = fake_eval_setup(3)
        with pytest.raises(EmptyTest):
            evaluate([], emb, Scorer(np.zeros(5), 0.0), users)
