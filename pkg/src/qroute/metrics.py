"""Activity characterization and ranking-quality metrics."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import IO, Collection, Mapping, Sequence

import numpy as np

from .corpus import EventLog, EventType, TestCase
from .rng import SplitMix64, mix_seed
from .router import QuestionProbe, Scorer, popularity_ranking, recommend
from .sgns import EmbeddingTable


class EmptyRelevant(ValueError):
    pass


class EmptyTest(ValueError):
    pass


# ------------------------------------------------------------ characterization


@dataclass
class ActivityReport:
    answers_per_question: dict[int, int]
    time_to_first_answer: dict[str, int]
    percentiles: dict[str, float]
    per_user_asked: Counter
    per_user_answered: Counter
    gini_answers: float
    top1pct_answer_share: float
    n_questions: int = 0
    n_unanswered: int = 0

    def lines(self) -> list[str]:
        total = sum(self.per_user_answered.values())
        out = [
            f"questions = {self.n_questions}",
            f"unanswered_questions = {self.n_unanswered}",
            f"answers = {total}",
            f"users = {len(set(self.per_user_asked) | set(self.per_user_answered))}",
            f"mean_answers_per_question = {_fmt(total / self.n_questions if self.n_questions else 0.0)}",
        ]
        out += [f"ttfa_{k} = {_fmt(v)}" for k, v in self.percentiles.items()]
        out += [
            f"gini_answers = {_fmt(self.gini_answers)}",
            f"top1pct_answer_share = {_fmt(self.top1pct_answer_share)}",
        ]
        return out


def _fmt(x: float) -> str:
    return f"{x:.6f}" if isinstance(x, float) else str(x)


def gini(values: Sequence[float]) -> float:
    x = np.sort(np.asarray(values, dtype=float))
    n = len(x)
    total = x.sum()
    if n == 0 or total == 0:
        return 0.0
    i = np.arange(1, n + 1)
    return float(((2 * i - n - 1) * x).sum() / (n * total))


def characterize(log: EventLog) -> ActivityReport:
    asked_at: dict[str, int] = {}
    asked_by: Counter = Counter()
    for e in log.of_type(EventType.ASKED):
        asked_at[e.question] = e.time
        asked_by[e.user] += 1
    answers: Counter = Counter()
    answered_by: Counter = Counter()
    first: dict[str, int] = {}
    for e in log.of_type(EventType.ANSWERED):
        answers[e.question] += 1
        answered_by[e.user] += 1
        first[e.question] = min(first.get(e.question, e.time), e.time)

    questions = set(asked_at) | set(answers)
    hist = Counter(answers.get(q, 0) for q in questions)
    ttfa = {q: first[q] - asked_at[q] for q in sorted(first) if q in asked_at}
    deltas = np.array(list(ttfa.values()), dtype=float)
    if deltas.size:
        pct = {f"p{p}": float(np.percentile(deltas, p)) for p in (10, 50, 90)}
    else:
        pct = {"p10": 0.0, "p50": 0.0, "p90": 0.0}

    active = {e.user for e in log.events if e.user is not None}
    counts = [answered_by.get(u, 0) for u in sorted(active)]
    total = sum(counts)
    top = max(1, math.ceil(0.01 * len(counts))) if counts else 0
    share = sum(sorted(counts, reverse=True)[:top]) / total if total else 0.0
    return ActivityReport(dict(sorted(hist.items())), ttfa, pct, asked_by, answered_by,
                          gini(counts), share, len(questions), hist.get(0, 0))


def write_histogram(hist: Mapping[int, int], out: IO[str]) -> None:
    out.write("answers,questions\n")
    for k, v in sorted(hist.items()):
        out.write(f"{k},{v}\n")


def write_ttfa(ttfa: Mapping[str, int], out: IO[str]) -> None:
    out.write("question,seconds\n")
    for q, s in ttfa.items():
        out.write(f"{q},{s}\n")


# ------------------------------------------------------------ ranking metrics


def _need(relevant: Collection) -> None:
    if not relevant:
        raise EmptyRelevant("relevant set is empty")


def recall_at_k(ranking: Sequence[str], relevant: Collection[str], k: int) -> float:
    _need(relevant)
    if k < 1:
        raise ValueError("k must be at least 1")
    rel = set(relevant)
    return len(set(ranking[:k]) & rel) / len(rel)


def reciprocal_rank(ranking: Sequence[str], relevant: Collection[str]) -> float:
    _need(relevant)
    rel = set(relevant)
    for i, u in enumerate(ranking, start=1):
        if u in rel:
            return 1.0 / i
    return 0.0


def ndcg_at_k(ranking: Sequence[str], relevant: Collection[str], k: int) -> float:
    _need(relevant)
    if k < 1:
        raise ValueError("k must be at least 1")
    rel = set(relevant)
    dcg = sum(1.0 / math.log2(i + 1) for i, u in enumerate(ranking[:k], start=1) if u in rel)
    idcg = sum(1.0 / math.log2(i + 1) for i in range(1, min(k, len(rel)) + 1))
    return dcg / idcg


# ------------------------------------------------------------ evaluation


@dataclass
class MetricBlock:
    recall: dict[int, float] = field(default_factory=dict)
    ndcg: dict[int, float] = field(default_factory=dict)
    mrr: float = 0.0

    def lines(self, prefix: str = "") -> list[str]:
        out = [f"{prefix}mrr = {self.mrr:.6f}"]
        out += [f"{prefix}recall@{k} = {v:.6f}" for k, v in self.recall.items()]
        out += [f"{prefix}ndcg@{k} = {v:.6f}" for k, v in self.ndcg.items()]
        return out


class _Accumulator:
    def __init__(self, ks):
        self.ks = ks
        self.rec = {k: 0.0 for k in ks}
        self.nd = {k: 0.0 for k in ks}
        self.rr = 0.0

    def add(self, ranking, relevant):
        for k in self.ks:
            self.rec[k] += recall_at_k(ranking, relevant, k)
            self.nd[k] += ndcg_at_k(ranking, relevant, k)
        self.rr += reciprocal_rank(ranking, relevant)

    def mean(self, n) -> MetricBlock:
        return MetricBlock({k: v / n for k, v in self.rec.items()},
                           {k: v / n for k, v in self.nd.items()}, self.rr / n)


@dataclass
class EvalReport:
    n_cases: int
    pipeline: MetricBlock
    random: MetricBlock
    popularity: MetricBlock
    coverage: float

    @property
    def recall_at_k(self) -> dict[int, float]:
        return self.pipeline.recall

    @property
    def ndcg_at_k(self) -> dict[int, float]:
        return self.pipeline.ndcg

    @property
    def mrr(self) -> float:
        return self.pipeline.mrr

    def lines(self) -> list[str]:
        return ([f"n_cases = {self.n_cases}", f"coverage = {self.coverage:.6f}"]
                + self.pipeline.lines()
                + self.random.lines("baseline_random_")
                + self.popularity.lines("baseline_popularity_"))

    def write(self, out: IO[str]) -> None:
        out.write("\n".join(self.lines()) + "\n")


def evaluate(test: Sequence[TestCase], emb: EmbeddingTable, scorer: Scorer,
             candidates: Sequence[str], ks: Sequence[int] = (1, 5, 10),
             seed: int = 0, popularity: Mapping[str, int] | None = None) -> EvalReport:
    if not test:
        raise EmptyTest("no test cases")
    ks = sorted(set(ks))
    popularity = popularity or {}
    pipe, rand, pop = _Accumulator(ks), _Accumulator(ks), _Accumulator(ks)
    covered = 0
    for n, case in enumerate(test):
        probe = QuestionProbe(case.question, case.asker, case.crops)
        pool = [u for u in candidates if u != case.asker]
        ranked = recommend(probe, emb, scorer, candidates, len(candidates), popularity)
        covered += not ranked.cold_start
        pipe.add(ranked.users(), case.answerers)

        shuffled = list(pool)
        SplitMix64(mix_seed(seed, 5, n)).shuffle(shuffled)
        rand.add(shuffled, case.answerers)
        pop.add([u for u, _ in popularity_ranking(pool, popularity)], case.answerers)
    m = len(test)
    return EvalReport(m, pipe.mean(m), rand.mean(m), pop.mean(m), covered / m)
