import io

import numpy as np
import pytest

from qroute.corpus import Event, EventLog, Kind
from qroute.hin import build_hin
from qroute.router import (ColdStart, NoCandidates, NoPositives, QuestionProbe, Scorer,
                           SingleClassInput, build_training_pairs, candidate_pool, feature_matrix,
                           fold, infer_question_vector, order_law, pair_features, read_scorer,
                           recommend, standardize, train_scorer, write_scorer)
from qroute.sgns import DimensionMismatch, EmbeddingTable


def table(hin, vectors: dict):
    """Embedding table with hand-set vectors keyed by (kind, id)."""
    nodes, rows = [], []
    for (kind, eid), vec in vectors.items():
        nodes.append(hin.lookup(kind, eid))
        rows.append(vec)
    return EmbeddingTable(len(rows[0]), nodes, np.array(rows, dtype=float), hin=hin)


@pytest.fixture
def graph():
    log = EventLog([
        Event.asked("u0", "q1", 1), Event.answered("u1", "q1", 2), Event.tagged("q1", "c1"),
        Event.tagged("q1", "c2"), Event.answered("u2", "q1", 3), Event.asked("u3", "q2", 4),
    ])
    return log, build_hin(log)


class TestInfer:
    def test_known_question(self, graph):
        _, h = graph
        emb = table(h, {(Kind.QUESTION, "q1"): [3.0, 4.0], (Kind.CROP, "c1"): [1.0, 0.0]})
        v = infer_question_vector(QuestionProbe("q1", "u0", ("c1",)), emb)
        assert v.tolist() == [3.0, 4.0]

    def test_mean_of_crops(self, graph):
        _, h = graph
        emb = table(h, {(Kind.CROP, "c1"): [1.0, 0.0], (Kind.CROP, "c2"): [0.0, 1.0]})
        v = infer_question_vector(QuestionProbe("new", "u0", ("c1", "c2", "c1")), emb)
        assert v.tolist() == [0.5, 0.5]

    def test_asker_counts(self, graph):
        _, h = graph
        emb = table(h, {(Kind.CROP, "c1"): [3.0, 0.0], (Kind.USER, "u0"): [0.0, 3.0]})
        v = infer_question_vector(QuestionProbe("new", "u0", ("c1", "zz")), emb)
        assert v.tolist() == [1.5, 1.5]

    def test_cold_start(self, graph):
        _, h = graph
        emb = table(h, {(Kind.CROP, "c1"): [1.0, 0.0]})
        with pytest.raises(ColdStart):
            infer_question_vector(QuestionProbe("new", "ghost"), emb)


class TestFeatures:
    def test_parallel(self):
        f = pair_features([1, 0], [1, 0])
        assert (f.dot, f.cosine, f.hadamard.tolist()) == (1.0, 1.0, [1.0, 0.0])

    def test_orthogonal(self):
        f = pair_features([1, 0], [0, 1])
        assert (f.dot, f.cosine, f.hadamard.tolist()) == (0.0, 0.0, [0.0, 0.0])

    def test_zero_norm(self):
        f = pair_features([0, 0], [1, 1])
        assert (f.dot, f.cosine, f.hadamard.tolist()) == (0.0, 0.0, [0.0, 0.0])
        assert f.vector().shape == (4,)

    def test_mismatch(self):
        with pytest.raises(DimensionMismatch):
            pair_features([1, 2], [1, 2, 3])

    def test_matrix_agrees(self):
        rng = np.random.default_rng(0)
        U = rng.normal(size=(20, 6))
        U[3] = 0
        q = rng.normal(size=6)
        M = feature_matrix(U, q)
        for i in range(20):
            np.testing.assert_allclose(M[i], pair_features(U[i], q).vector(), atol=1e-12)
            assert -1 <= M[i, 1] <= 1


def planted_table(h, users, questions):
    vec = {}
    for u, v in users.items():
        vec[(Kind.USER, u)] = v
    for q, v in questions.items():
        vec[(Kind.QUESTION, q)] = v
    return table(h, vec)


class TestTrainingPairs:
    def test_counting(self, graph):
        log = EventLog([Event.asked("u0", "q1", 1), Event.answered("u1", "q1", 2)])
        h = build_hin(EventLog(list(log) + [Event.asked("u2", "q2", 3), Event.asked("u3", "q3", 4)]))
        emb = planted_table(h, {"u1": [1, 0], "u2": [0, 1], "u3": [1, 1]}, {"q1": [1, 0]})
        pairs = build_training_pairs(log, emb, 2, seed=0, candidates=["u1", "u2", "u3"])
        assert pairs.y.tolist() == [1, 0, 0]
        assert pairs.users[0] == "u1" and set(pairs.users[1:]) == {"u2", "u3"}
        assert pairs.X.shape == (3, 4)

    def test_exclusion_and_determinism(self, small_log, small_hin):
        rng = np.random.default_rng(0)
        nodes = [small_hin.ref(g) for g in range(small_hin.n_nodes)]
        emb = EmbeddingTable(4, nodes, rng.normal(size=(len(nodes), 4)), hin=small_hin)
        a = build_training_pairs(small_log, emb, 5, seed=7)
        b = build_training_pairs(small_log, emb, 5, seed=7)
        assert np.array_equal(a.X, b.X) and a.users == b.users
        answerers, askers = {}, {}
        for e in small_log:
            if e.etype.value == "answered":
                answerers.setdefault(e.question, set()).add(e.user)
            elif e.etype.value == "asked":
                askers[e.question] = e.user
        positives = {(u, q) for u, q, y in zip(a.users, a.questions, a.y) if y == 1}
        for u, q, y in zip(a.users, a.questions, a.y):
            if y == 0:
                assert u not in answerers[q] and u != askers.get(q)
                assert (u, q) not in positives
        assert int(a.y.sum()) == len(positives)
        assert len(a) == 6 * len(positives)

    def test_no_positives(self, graph):
        log, h = graph
        emb = planted_table(h, {"u0": [1, 0]}, {"q2": [0, 1]})
        with pytest.raises(NoPositives):
            build_training_pairs(log, emb, 2)


class TestScorer:
    def separable(self, n=200):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(n, 6))
        y = (np.arange(n) % 2).astype(float)
        X[:, 0] = np.where(y == 1, 1.0, -1.0)
        return X, y

    def test_separable(self):
        X, y = self.separable()
        s = train_scorer(X, y, epochs=10, seed=0)
        assert ((s.predict_proba(X) > 0.5) == (y == 1)).mean() == 1.0

    def test_base_rate(self):
        X = np.ones((400, 5))
        y = np.array([1.0] * 100 + [0.0] * 300)
        s = train_scorer(X, y, seed=1)
        assert abs(float(s.predict_proba(X[:1])[0]) - 0.25) <= 0.05

    def test_single_class(self):
        with pytest.raises(SingleClassInput):
            train_scorer(np.ones((3, 2)), np.zeros(3))

    def test_determinism(self):
        X, y = self.separable()
        a, b = train_scorer(X, y, seed=4), train_scorer(X, y, seed=4)
        assert np.array_equal(a.weights, b.weights) and a.bias == b.bias
        c = train_scorer(X, y, seed=5)
        assert not np.array_equal(a.weights, c.weights)

    def test_folding(self):
        rng = np.random.default_rng(9)
        X = rng.normal(3.0, 5.0, size=(300, 6))
        X[:, 4] = 2.0                      # constant column hits the std floor
        y = (X[:, 0] + rng.normal(size=300) > 3).astype(float)
        s = train_scorer(X, y, seed=2)
        mean, std = standardize(X)
        unfolded = ((X - mean) / std) @ s.meta["std_weights"] + s.meta["std_bias"]
        np.testing.assert_allclose(s.margin(X), unfolded, rtol=0, atol=1e-10)
        w, b = fold(s.meta["std_weights"], s.meta["std_bias"], mean, std)
        assert np.array_equal(w, s.weights) and b == s.bias

    def test_file_round_trip(self):
        s = Scorer(np.array([0.1, -2.5, 1e-17, 3.0]), 0.25)
        buf = io.StringIO()
        write_scorer(s, buf)
        assert buf.getvalue().splitlines()[0] == "scorer v1 dim=2"
        buf.seek(0)
        back = read_scorer(buf)
        assert np.array_equal(back.weights, s.weights) and back.bias == s.bias


class TestRecommend:
    def setup(self, graph):
        _, h = graph
        emb = table(h, {(Kind.USER, "u1"): [1.0, 0.0], (Kind.USER, "u2"): [0.0, 1.0],
                        (Kind.USER, "u3"): [1.0, 0.0], (Kind.CROP, "c1"): [1.0, 0.0]})
        scorer = Scorer(np.array([1.0, 0.0, 0.0, 0.0]), 0.0)   # score = dot
        return emb, scorer

    def test_single_candidate(self, graph):
        emb, sc = self.setup(graph)
        rl = recommend(QuestionProbe("new", "u0", ("c1",)), emb, sc, ["u2"], 5)
        assert rl.users() == ["u2"]

    def test_ties_by_id(self, graph):
        emb, sc = self.setup(graph)
        rl = recommend(QuestionProbe("new", "u0", ("c1",)), emb, sc, ["u3", "u2", "u1"], 3)
        assert rl.users() == ["u1", "u3", "u2"]
        assert rl.ranking[0][1] == rl.ranking[1][1] == 1.0

    def test_asker_and_vectorless_skipped(self, graph):
        emb, sc = self.setup(graph)
        rl = recommend(QuestionProbe("new", "u1", ("c1",)), emb, sc, ["u1", "u2", "ghost"], 5)
        assert rl.users() == ["u2"]

    def test_top_k(self, graph):
        emb, sc = self.setup(graph)
        assert len(recommend(QuestionProbe("new", "u0", ("c1",)), emb, sc, ["u1", "u2", "u3"], 2).ranking) == 2

    def test_cold_start_popularity(self, graph):
        emb, sc = self.setup(graph)
        rl = recommend(QuestionProbe("new", "ghost", ("zz",)), emb, sc, ["u1", "u2", "u3"], 3,
                       popularity={"u2": 4, "u3": 4, "u1": 1})
        assert rl.cold_start
        assert rl.ranking == [("u2", 4.0), ("u3", 4.0), ("u1", 1.0)]

    def test_no_candidates(self, graph):
        emb, sc = self.setup(graph)
        with pytest.raises(NoCandidates):
            recommend(QuestionProbe("new", "u0"), emb, sc, [], 3)
        with pytest.raises(NoCandidates):
            recommend(QuestionProbe("new", "u1", ("c1",)), emb, sc, ["u1"], 3)

    def test_margin_order_equals_probability_order(self):
        rng = np.random.default_rng(5)
        s = Scorer(rng.normal(size=6), 0.3)
        X = rng.normal(size=(200, 6))
        ids = [f"u{i:03d}" for i in range(200)]
        by_margin = [u for u, _ in order_law(zip(ids, s.margin(X).tolist()))]
        by_prob = [u for u, _ in order_law(zip(ids, s.predict_proba(X).tolist()))]
        assert by_margin == by_prob


def test_candidate_pool(graph):
    log, _ = graph
    assert candidate_pool(log) == ["u1", "u2"]
