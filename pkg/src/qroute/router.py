"""Answerer recommendation from node embeddings.

A question vector is the question's own embedding when it was seen in
training, otherwise the mean of its tagged crops and its asker. Each
(user, question) pair is described by dot, cosine and the elementwise
product, and a logistic model scores the pairs.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, Sequence

import numpy as np
from numba import njit

from .corpus import EventLog, EventType, Kind
from .rng import SplitMix64, mix_seed
from .sgns import DimensionMismatch, EmbeddingTable

STD_FLOOR = 1e-8


class ColdStart(LookupError):
    """The probe has no embedded question, crop or asker to compose from."""


class NoPositives(ValueError):
    pass


class SingleClassInput(ValueError):
    pass


class NoCandidates(ValueError):
    pass


@dataclass(frozen=True)
class QuestionProbe:
    question: str
    asker: str
    crops: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "crops", tuple(dict.fromkeys(self.crops)))


@dataclass(frozen=True)
class PairFeatures:
    dot: float
    cosine: float
    hadamard: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate(([self.dot, self.cosine], self.hadamard))


def infer_question_vector(probe: QuestionProbe, emb: EmbeddingTable) -> np.ndarray:
    own = emb.entity_vector(Kind.QUESTION, probe.question)
    if own is not None:
        return own
    parts = [emb.entity_vector(Kind.CROP, c) for c in probe.crops]
    parts.append(emb.entity_vector(Kind.USER, probe.asker))
    parts = [p for p in parts if p is not None]
    if not parts:
        raise ColdStart(probe.question)
    return np.mean(parts, axis=0)


def pair_features(user_vec, q_vec) -> PairFeatures:
    u = np.asarray(user_vec, dtype=float)
    q = np.asarray(q_vec, dtype=float)
    if u.shape != q.shape:
        raise DimensionMismatch(f"user dim {u.shape} vs question dim {q.shape}")
    dot = float(u @ q)
    nu, nq = float(np.linalg.norm(u)), float(np.linalg.norm(q))
    cos = dot / (nu * nq) if nu > 0 and nq > 0 else 0.0
    return PairFeatures(dot, min(1.0, max(-1.0, cos)), u * q)


def feature_matrix(users: np.ndarray, q_vec: np.ndarray) -> np.ndarray:
    """Row-wise :func:`pair_features` for a block of user vectors."""
    if users.shape[1] != q_vec.shape[0]:
        raise DimensionMismatch("user and question dims differ")
    dots = users @ q_vec
    norms = np.linalg.norm(users, axis=1) * np.linalg.norm(q_vec)
    safe = np.where(norms > 0, norms, 1.0)
    cos = np.clip(np.where(norms > 0, dots / safe, 0.0), -1.0, 1.0)
    return np.column_stack([dots, cos, users * q_vec])


# ------------------------------------------------------------ supervision


@dataclass
class TrainingPairs:
    X: np.ndarray
    y: np.ndarray
    users: list[str]
    questions: list[str]

    def __len__(self) -> int:
        return len(self.y)


def answer_counts(train: EventLog) -> Counter:
    return Counter(e.user for e in train.of_type(EventType.ANSWERED))


def candidate_pool(train: EventLog) -> list[str]:
    """Users with at least one answer in ``train``, sorted by id."""
    return sorted(answer_counts(train))


def build_training_pairs(train: EventLog, emb: EmbeddingTable, neg_per_pos: int = 5,
                         seed: int = 0, candidates: Sequence[str] | None = None) -> TrainingPairs:
    if neg_per_pos < 1:
        raise ValueError("neg_per_pos must be positive")
    askers = {e.question: e.user for e in train.of_type(EventType.ASKED)}
    answerers: dict[str, set[str]] = {}
    positives: list[tuple[str, str]] = []
    for e in train.of_type(EventType.ANSWERED):
        seen = answerers.setdefault(e.question, set())
        if e.user not in seen:
            seen.add(e.user)
            positives.append((e.user, e.question))

    pool = [u for u in (candidate_pool(train) if candidates is None else candidates)
            if emb.entity_vector(Kind.USER, u) is not None]
    rng = SplitMix64(mix_seed(seed, 3))
    X, y, us, qs = [], [], [], []
    for user, question in positives:
        uv = emb.entity_vector(Kind.USER, user)
        qv = emb.entity_vector(Kind.QUESTION, question)
        if uv is None or qv is None:
            continue
        X.append(pair_features(uv, qv).vector())
        y.append(1)
        us.append(user)
        qs.append(question)
        banned = answerers[question] | {askers.get(question)}
        eligible = [u for u in pool if u not in banned]
        for neg in _sample_distinct(rng, eligible, neg_per_pos):
            X.append(pair_features(emb.entity_vector(Kind.USER, neg), qv).vector())
            y.append(0)
            us.append(neg)
            qs.append(question)
    if not any(y):
        raise NoPositives("no answered pair has both a user and a question vector")
    return TrainingPairs(np.array(X), np.array(y, dtype=float), us, qs)


def _sample_distinct(rng: SplitMix64, pool: list[str], k: int) -> list[str]:
    pool = list(pool)
    k = min(k, len(pool))
    for i in range(k):
        j = i + rng.below(len(pool) - i)
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:k]


# ------------------------------------------------------------ scorer


@dataclass
class Scorer:
    """Logistic model over raw pair features (standardization folded in)."""

    weights: np.ndarray
    bias: float
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return len(self.weights) - 2

    def margin(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X) @ self.weights + self.bias

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-np.clip(self.margin(X), -30, 30)))


@njit(cache=True)
def _logreg_epoch(Z, y, order, w, b, lr, l2):
    n, m = Z.shape
    for t in range(n):
        i = order[t]
        z = b
        for j in range(m):
            z += w[j] * Z[i, j]
        if z > 30.0:
            z = 30.0
        elif z < -30.0:
            z = -30.0
        g = 1.0 / (1.0 + math.exp(-z)) - y[i]
        for j in range(m):
            w[j] -= lr * (g * Z[i, j] + l2 * w[j])
        b -= lr * g
    return b


def standardize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    std = np.maximum(X.std(axis=0), STD_FLOOR)
    return mean, std


def fold(w_std: np.ndarray, b_std: float, mean: np.ndarray, std: np.ndarray) -> tuple[np.ndarray, float]:
    """Express a model on standardized features as one on raw features."""
    w = w_std / std
    return w, float(b_std - w @ mean)


def train_scorer(X: np.ndarray, y: np.ndarray, epochs: int = 10, lr: float = 0.05,
                 l2: float = 1e-4, seed: int = 0) -> Scorer:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) == 0 or y.min() == y.max():
        raise SingleClassInput("training pairs must contain both labels")
    mean, std = standardize(X)
    Z = (X - mean) / std
    w = np.zeros(X.shape[1])
    b = 0.0
    rng = SplitMix64(mix_seed(seed, 4))
    order = list(range(len(y)))
    for _ in range(epochs):
        rng.shuffle(order)
        b = _logreg_epoch(Z, y, np.array(order, dtype=np.int64), w, b, lr, l2)
    w_raw, b_raw = fold(w, b, mean, std)
    return Scorer(w_raw, b_raw, {"dim": X.shape[1] - 2, "seed": seed, "epochs": epochs,
                                 "std_weights": w, "std_bias": b, "mean": mean, "std": std})


def write_scorer(scorer: Scorer, out: IO[str]) -> None:
    out.write(f"scorer v1 dim={scorer.dim}\n")
    for x in scorer.weights:
        out.write(repr(float(x)) + "\n")
    out.write(repr(float(scorer.bias)) + "\n")


def read_scorer(source: IO[str]) -> Scorer:
    header = source.readline().strip()
    if not header.startswith("scorer v1 dim="):
        raise ValueError("not a scorer v1 file")
    dim = int(header.split("=", 1)[1])
    values = [float(line) for line in source if line.strip()]
    if len(values) != dim + 3:
        raise ValueError(f"scorer file has {len(values)} values, expected {dim + 3}")
    return Scorer(np.array(values[:-1]), values[-1], {"dim": dim})


# ------------------------------------------------------------ ranking


@dataclass(frozen=True)
class RankedList:
    question: str
    ranking: list[tuple[str, float]]
    cold_start: bool = False

    def users(self) -> list[str]:
        return [u for u, _ in self.ranking]


def order_law(scored: Iterable[tuple[str, float]]) -> list[tuple[str, float]]:
    """Descending score, ties by ascending user id."""
    return sorted(scored, key=lambda p: (-p[1], p[0]))


def popularity_ranking(candidates: Iterable[str], popularity: Mapping[str, int]) -> list[tuple[str, float]]:
    return order_law((u, float(popularity.get(u, 0))) for u in candidates)


def recommend(probe: QuestionProbe, emb: EmbeddingTable, scorer: Scorer,
              candidates: Sequence[str], top_k: int,
              popularity: Mapping[str, int] | None = None) -> RankedList:
    """Rank ``candidates`` (minus the asker) for ``probe``.

    Scores are the scorer's logit; on cold start the popularity counts
    stand in for scores.
    """
    if top_k < 1:
        raise ValueError("top_k must be positive")
    pool = [u for u in dict.fromkeys(candidates) if u != probe.asker]
    if not pool:
        raise NoCandidates(probe.question)
    if scorer.dim != emb.dim:
        raise DimensionMismatch(f"scorer dim {scorer.dim} vs embedding dim {emb.dim}")
    try:
        q = infer_question_vector(probe, emb)
    except ColdStart:
        return RankedList(probe.question, popularity_ranking(pool, popularity or {})[:top_k], True)
    users, vecs = [], []
    for u in pool:
        v = emb.entity_vector(Kind.USER, u)
        if v is not None:
            users.append(u)
            vecs.append(v)
    if not users:
        raise NoCandidates(probe.question)
    scores = scorer.margin(feature_matrix(np.array(vecs), q))
    return RankedList(probe.question, order_law(zip(users, scores.tolist()))[:top_k])


def write_recommendations(lists: Iterable[RankedList], out: IO[str]) -> None:
    out.write("question,rank,user,score\n")
    for rl in lists:
        for rank, (user, score) in enumerate(rl.ranking, start=1):
            out.write(f"{rl.question},{rank},{user},{score:.6f}\n")
