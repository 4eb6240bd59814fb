from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import chi2

from qroute.corpus import Event, EventLog, Kind
from qroute.hin import (EmptyWeights, NodeRef, NonPositiveWeight, Relation, alias_build,
                        build_hin, sample_neighbor)
from qroute.rng import SplitMix64


def chi_square_ok(counts, probs, level=0.999):
    n = sum(counts)
    exp = np.asarray(probs) * n
    stat = float(((np.asarray(counts) - exp) ** 2 / exp).sum())
    return stat < chi2.ppf(level, len(probs) - 1), stat


class TestAlias:
    def test_single(self):
        t = alias_build([1])
        rng = SplitMix64(1)
        assert {t.sample(rng) for _ in range(100)} == {0}

    def test_two(self):
        np.testing.assert_allclose(alias_build([1, 3]).distribution(), [0.25, 0.75], atol=1e-12)

    def test_chi_square(self):
        t = alias_build([1, 2, 3, 4])
        rng = SplitMix64(2024)
        c = Counter(t.sample(rng) for _ in range(100_000))
        ok, stat = chi_square_ok([c[i] for i in range(4)], [0.1, 0.2, 0.3, 0.4])
        assert ok, stat

    @given(st.lists(st.floats(1e-6, 1e6), min_size=1, max_size=60))
    def test_exactness(self, weights):
        t = alias_build(weights)
        w = np.asarray(weights)
        assert np.all((t.prob >= 0) & (t.prob <= 1 + 1e-15))
        np.testing.assert_allclose(t.distribution(), w / w.sum(), rtol=0, atol=1e-12)

    def test_errors(self):
        with pytest.raises(EmptyWeights):
            alias_build([])
        with pytest.raises(NonPositiveWeight) as exc:
            alias_build([1, 0, 2])
        assert exc.value.index == 1
        with pytest.raises(NonPositiveWeight):
            alias_build([1, float("nan")])
        with pytest.raises(NonPositiveWeight):
            alias_build([-1])


class TestBuild:
    def test_empty(self):
        assert build_hin(EventLog()).n_nodes == 0

    def test_direct_count(self, tiny_log):
        h = build_hin(tiny_log)
        assert h.n_nodes == 4
        q1 = h.lookup(Kind.QUESTION, "q1")
        u2 = h.lookup(Kind.USER, "u2")
        assert h.neighbors(u2, Relation.ANSWERED) == [(q1, 2.0)]
        assert [h.degree(q1, r) for r in (Relation.ASKED, Relation.ANSWERED, Relation.TAGGED)] == [1, 1, 1]
        assert h.degree(q1, Relation.INTERESTED) == 0

    def test_orphan_question_materialized(self):
        h = build_hin(EventLog([Event.answered("u1", "q9", 3)]))
        assert h.lookup(Kind.QUESTION, "q9") is not None

    def test_dense_sorted_indices(self, small_hin):
        for k in (Kind.USER, Kind.QUESTION, Kind.CROP):
            ids = small_hin.ids[k]
            assert ids == sorted(ids)
            assert all(small_hin.lookup(k, s).index == i for i, s in enumerate(ids))

    def test_symmetry_and_schema(self, small_log):
        h = build_hin(small_log)
        for rel in Relation:
            fwd = {}
            for g in range(h.n_nodes):
                a = h.ref(g)
                for b, w in h.neighbors(a, rel):
                    assert {a.kind, b.kind} == set(rel.endpoints)
                    assert w > 0
                    fwd[(a, b)] = w
            assert all(fwd.get((b, a)) == w for (a, b), w in fwd.items())

    def test_weight_conservation(self, small_log):
        h = build_hin(small_log)
        support = Counter()
        for e in small_log:
            support[e.etype.value] += 1
        for rel in Relation:
            total = h.weights[h.indptr[rel, 0]:h.indptr[rel, -1]].sum()
            assert total == 2 * support[rel.name.lower()]

    def test_alias_tables_exact(self, small_hin):
        for g in range(small_hin.n_nodes):
            node = small_hin.ref(g)
            for rel in Relation:
                t = small_hin.alias_table(node, rel)
                if t is None:
                    assert small_hin.degree(node, rel) == 0
                    continue
                w = np.array([w for _, w in small_hin.neighbors(node, rel)])
                np.testing.assert_allclose(t.distribution(), w / w.sum(), atol=1e-12)


class TestSampleNeighbor:
    def test_none_when_empty(self, tiny_log):
        h = build_hin(tiny_log)
        assert sample_neighbor(h, h.lookup(Kind.USER, "u1"), Relation.INTERESTED, SplitMix64(0)) is None

    def test_single_neighbor(self, tiny_log):
        h = build_hin(tiny_log)
        rng = SplitMix64(3)
        c1 = h.lookup(Kind.CROP, "c1")
        q1 = h.lookup(Kind.QUESTION, "q1")
        assert all(sample_neighbor(h, q1, Relation.TAGGED, rng) == c1 for _ in range(50))

    def test_even_split(self):
        h = build_hin(EventLog([Event.answered("a", "q", 1), Event.answered("b", "q", 2)]))
        rng = SplitMix64(77)
        q = h.lookup(Kind.QUESTION, "q")
        n = 100_000
        hits = sum(sample_neighbor(h, q, Relation.ANSWERED, rng).index == 0 for _ in range(n))
        assert 0.49 <= hits / n <= 0.51

    def test_pure_given_seed(self, small_hin):
        node = NodeRef(Kind.QUESTION, 5)
        a = [sample_neighbor(small_hin, node, Relation.ANSWERED, SplitMix64(s)) for s in range(20)]
        b = [sample_neighbor(small_hin, node, Relation.ANSWERED, SplitMix64(s)) for s in range(20)]
        assert a == b
