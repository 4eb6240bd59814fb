"""Event schema, CSV I/O, temporal train/test split and the planted-cluster generator."""
from __future__ import annotations

import enum
import io
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, NamedTuple

from .rng import SplitMix64, mix_seed

HEADER = "etype,user,question,crop,time"
TESTCASE_HEADER = "question,asker,crops,answerers"

# Unix time the synthetic corpora start at (2017-07-14).
SYNTH_EPOCH = 1_500_000_000

_BAD_ID = re.compile(r"[,\s]")


class CorpusError(ValueError):
    pass


class MalformedLine(CorpusError):
    def __init__(self, line_no: int, reason: str = ""):
        self.line_no = line_no
        super().__init__(f"malformed event on line {line_no}" + (f": {reason}" if reason else ""))


class DuplicateAsked(CorpusError):
    def __init__(self, question_id: str):
        self.question_id = question_id
        super().__init__(f"question {question_id!r} has more than one asked event")


class DuplicateEdge(CorpusError):
    pass


class DegenerateSplit(CorpusError):
    pass


class Kind(enum.Enum):
    USER = "u"
    QUESTION = "q"
    CROP = "c"


class EntityRef(NamedTuple):
    kind: Kind
    id: str


class EventType(enum.Enum):
    ASKED = "asked"
    ANSWERED = "answered"
    TAGGED = "tagged"
    INTERESTED = "interested"


# which of (user, question, crop, time) each event type carries
_SHAPE = {
    EventType.ASKED: (True, True, False, True),
    EventType.ANSWERED: (True, True, False, True),
    EventType.TAGGED: (False, True, True, False),
    EventType.INTERESTED: (True, False, True, False),
}


@dataclass(frozen=True)
class Event:
    etype: EventType
    user: str | None = None
    question: str | None = None
    crop: str | None = None
    time: int | None = None

    def __post_init__(self):
        shape = _SHAPE[self.etype]
        for present, name in zip(shape, ("user", "question", "crop", "time")):
            value = getattr(self, name)
            if present and value is None:
                raise CorpusError(f"{self.etype.value} event requires {name}")
            if not present and value is not None:
                raise CorpusError(f"{self.etype.value} event must not carry {name}")
        for name in ("user", "question", "crop"):
            value = getattr(self, name)
            if value is not None and (not value or _BAD_ID.search(value)):
                raise CorpusError(f"invalid {name} id {value!r}")

    @classmethod
    def asked(cls, user: str, question: str, time: int) -> "Event":
        return cls(EventType.ASKED, user=user, question=question, time=time)

    @classmethod
    def answered(cls, user: str, question: str, time: int) -> "Event":
        return cls(EventType.ANSWERED, user=user, question=question, time=time)

    @classmethod
    def tagged(cls, question: str, crop: str) -> "Event":
        return cls(EventType.TAGGED, question=question, crop=crop)

    @classmethod
    def interested(cls, user: str, crop: str) -> "Event":
        return cls(EventType.INTERESTED, user=user, crop=crop)

    @property
    def timed(self) -> bool:
        return self.time is not None

    def to_line(self) -> str:
        t = "" if self.time is None else str(self.time)
        return ",".join((self.etype.value, self.user or "", self.question or "", self.crop or "", t))


@dataclass(frozen=True)
class EventLog:
    """An ordered, validated sequence of events.

    ``orphans`` counts answered/tagged events whose question is never asked
    in the log; such events are kept.
    """

    events: tuple[Event, ...] = ()
    orphans: int = field(default=0, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        _check_invariants(self.events)
        asked = {e.question for e in self.events if e.etype is EventType.ASKED}
        n = sum(
            1
            for e in self.events
            if e.etype in (EventType.ANSWERED, EventType.TAGGED) and e.question not in asked
        )
        object.__setattr__(self, "orphans", n)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[Event]:
        return iter(self.events)

    def of_type(self, etype: EventType) -> Iterator[Event]:
        return (e for e in self.events if e.etype is etype)


def _check_invariants(events: Iterable[Event], line_nos: list[int] | None = None) -> None:
    asked: set[str] = set()
    edges: set[tuple] = set()
    for i, e in enumerate(events):
        if e.etype is EventType.ASKED:
            if e.question in asked:
                raise DuplicateAsked(e.question)
            asked.add(e.question)
        elif e.etype in (EventType.TAGGED, EventType.INTERESTED):
            key = (e.etype, e.user, e.question, e.crop)
            if key in edges:
                where = f" (line {line_nos[i]})" if line_nos else ""
                raise DuplicateEdge(f"duplicate {e.etype.value} event{where}")
            edges.add(key)


def parse_events(source: IO[str] | str) -> EventLog:
    """Parse the event CSV format; the first line must be the header."""
    if isinstance(source, str):
        source = io.StringIO(source)
    events: list[Event] = []
    line_nos: list[int] = []
    for line_no, raw in enumerate(source, start=1):
        line = raw.rstrip("\n").rstrip("\r")
        if line_no == 1:
            if line.strip() != HEADER:
                raise MalformedLine(1, "missing header")
            continue
        if not line:
            continue
        events.append(_parse_line(line, line_no))
        line_nos.append(line_no)
    _check_invariants(events, line_nos)
    return EventLog(events)


def _parse_line(line: str, line_no: int) -> Event:
    fields = line.split(",")
    if len(fields) != 5:
        raise MalformedLine(line_no, f"expected 5 fields, got {len(fields)}")
    etype, user, question, crop, t = fields
    try:
        kind = EventType(etype)
    except ValueError:
        raise MalformedLine(line_no, f"unknown event type {etype!r}") from None
    time = None
    if t != "":
        if not re.fullmatch(r"-?[0-9]+", t):
            raise MalformedLine(line_no, f"non-integer timestamp {t!r}")
        time = int(t)
    try:
        return Event(kind, user or None, question or None, crop or None, time)
    except CorpusError as exc:
        raise MalformedLine(line_no, str(exc)) from None


def write_events(log: EventLog, out: IO[str] | None = None) -> str | None:
    """Serialize ``log``; returns the text when ``out`` is None."""
    text = HEADER + "\n" + "".join(e.to_line() + "\n" for e in log.events)
    if out is None:
        return text
    out.write(text)
    return None


def read_events_file(path) -> EventLog:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_events(fh)


def write_events_file(log: EventLog, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        write_events(log, fh)


# ---------------------------------------------------------------- splitting


@dataclass(frozen=True)
class SplitSpec:
    cutoff_fraction: float | None = None
    cutoff_time: int | None = None

    def __post_init__(self):
        if (self.cutoff_fraction is None) == (self.cutoff_time is None):
            raise ValueError("set exactly one of cutoff_fraction and cutoff_time")
        if self.cutoff_fraction is not None and not 0 < self.cutoff_fraction < 1:
            raise ValueError("cutoff_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class TestCase:
    question: str
    asker: str
    crops: tuple[str, ...]
    answerers: frozenset[str]

    __test__ = False  # keep pytest from collecting this class


@dataclass(frozen=True)
class Split:
    train: EventLog
    test: list[TestCase]
    cutoff: int


def resolve_cutoff(log: EventLog, spec: SplitSpec) -> int:
    if spec.cutoff_time is not None:
        return spec.cutoff_time
    times = sorted(e.time for e in log.of_type(EventType.ASKED))
    if not times:
        raise DegenerateSplit("log has no asked events")
    # smallest t with at least a fraction f of asked events at or before t
    need = max(1, math.ceil(round(spec.cutoff_fraction * len(times), 9)))
    return times[need - 1]


def temporal_split(log: EventLog, spec: SplitSpec) -> Split:
    cutoff = resolve_cutoff(log, spec)

    train_events = [e for e in log.events if e.timed and e.time <= cutoff]
    seen_q = {e.question for e in train_events}
    seen_u = {e.user for e in train_events}
    keep: set[int] = set()
    for i, e in enumerate(log.events):
        if e.timed:
            if e.time <= cutoff:
                keep.add(i)
        elif e.etype is EventType.TAGGED and e.question in seen_q:
            keep.add(i)
        elif e.etype is EventType.INTERESTED and e.user in seen_u:
            keep.add(i)
    train = EventLog(e for i, e in enumerate(log.events) if i in keep)

    crops: dict[str, list[str]] = {}
    for e in log.of_type(EventType.TAGGED):
        crops.setdefault(e.question, []).append(e.crop)
    answerers: dict[str, set[str]] = {}
    for e in log.of_type(EventType.ANSWERED):
        answerers.setdefault(e.question, set()).add(e.user)

    test = [
        TestCase(e.question, e.user, tuple(dict.fromkeys(crops.get(e.question, ()))),
                 frozenset(answerers[e.question]))
        for e in log.of_type(EventType.ASKED)
        if e.time > cutoff and answerers.get(e.question)
    ]
    if not train.events or not test:
        raise DegenerateSplit(
            f"cutoff {cutoff} leaves {len(train.events)} train events and {len(test)} test cases"
        )
    return Split(train, test, cutoff)


def write_test_cases(cases: Iterable[TestCase], out: IO[str]) -> None:
    out.write(TESTCASE_HEADER + "\n")
    for c in cases:
        out.write(f"{c.question},{c.asker},{';'.join(c.crops)},{';'.join(sorted(c.answerers))}\n")


def read_test_cases(source: IO[str]) -> list[TestCase]:
    cases = []
    for line_no, raw in enumerate(source, start=1):
        line = raw.rstrip("\n")
        if line_no == 1 or not line:
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise MalformedLine(line_no, "expected 4 fields")
        q, asker, crops, answerers = parts
        cases.append(TestCase(q, asker, tuple(c for c in crops.split(";") if c),
                              frozenset(a for a in answerers.split(";") if a)))
    return cases


# ---------------------------------------------------------------- synthesis


@dataclass(frozen=True)
class SynthConfig:
    n_clusters: int = 10
    n_users: int = 500
    n_crops: int = 50
    n_questions: int = 5000
    answers_per_question_mean: float = 3.0
    cross_cluster_noise: float = 0.1
    time_span_seconds: int = 180 * 86400
    seed: int = 42

    def __post_init__(self):
        for name in ("n_clusters", "n_users", "n_crops", "n_questions", "time_span_seconds"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.answers_per_question_mean < 0:
            raise ValueError("answers_per_question_mean must be non-negative")
        if not 0 <= self.cross_cluster_noise <= 1:
            raise ValueError("cross_cluster_noise must lie in [0, 1]")
        if self.n_crops < self.n_clusters:
            raise ValueError("n_crops must be at least n_clusters")
        if self.n_users < self.n_clusters:
            raise ValueError("n_users must be at least n_clusters")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class PlantedTruth:
    """Cluster labels the generator planted, keyed by entity id."""

    user_cluster: dict[str, int]
    crop_cluster: dict[str, int]
    question_cluster: dict[str, int]


def _ids(prefix: str, n: int) -> list[str]:
    width = len(str(n - 1)) if n > 1 else 1
    return [f"{prefix}{i:0{width}d}" for i in range(n)]


def _poisson(rng: SplitMix64, mean: float) -> int:
    if mean <= 0:
        return 0
    # Knuth's product-of-uniforms; means here are small
    limit = math.exp(-mean)
    k, p = 0, rng.random()
    while p > limit:
        k += 1
        p *= rng.random()
    return k


def _pick_distinct(rng: SplitMix64, pool: list, k: int) -> list:
    pool = list(pool)
    k = min(k, len(pool))
    for i in range(k):
        j = i + rng.below(len(pool) - i)
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:k]


def _assign_users(cfg: SynthConfig) -> list[int]:
    order = list(range(cfg.n_users))
    SplitMix64(mix_seed(cfg.seed, 1)).shuffle(order)
    cluster = [0] * cfg.n_users
    for pos, u in enumerate(order):
        cluster[u] = pos % cfg.n_clusters
    return cluster


def synth_generate(cfg: SynthConfig) -> EventLog:
    return synth_generate_with_truth(cfg)[0]


def synth_generate_with_truth(cfg: SynthConfig) -> tuple[EventLog, PlantedTruth]:
    users = _ids("u", cfg.n_users)
    crops = _ids("c", cfg.n_crops)
    questions = _ids("q", cfg.n_questions)
    k = cfg.n_clusters

    crop_cluster = [i % k for i in range(cfg.n_crops)]
    user_cluster = _assign_users(cfg)
    crops_of = [[c for c in range(cfg.n_crops) if crop_cluster[c] == j] for j in range(k)]
    users_of = [[u for u in range(cfg.n_users) if user_cluster[u] == j] for j in range(k)]

    events: list[Event] = []
    rng = SplitMix64(mix_seed(cfg.seed, 2))
    for u in range(cfg.n_users):
        own = crops_of[user_cluster[u]]
        for c in sorted(_pick_distinct(rng, own, 1 + rng.below(3))):
            events.append(Event.interested(users[u], crops[c]))

    rng = SplitMix64(mix_seed(cfg.seed, 3))
    drafts = []
    for q in range(cfg.n_questions):
        asker = rng.below(cfg.n_users)
        c = rng.below(k)
        tags = sorted(_pick_distinct(rng, crops_of[c], 1 + rng.below(3)))
        t_ask = SYNTH_EPOCH + rng.below(cfg.time_span_seconds)
        answers = []
        for _ in range(max(1, _poisson(rng, cfg.answers_per_question_mean))):
            if rng.random() < 1.0 - cfg.cross_cluster_noise:
                pool = users_of[c]
                who = pool[rng.below(len(pool))]
            else:
                who = rng.below(cfg.n_users)
            delay = -3600.0 * math.log(1.0 - rng.random())
            answers.append((t_ask + math.floor(delay + 0.5), who))
        drafts.append((t_ask, q, asker, c, tags, sorted(answers)))

    question_cluster = {}
    for t_ask, q, asker, c, tags, answers in sorted(drafts):
        qid = questions[q]
        question_cluster[qid] = c
        events.append(Event.asked(users[asker], qid, t_ask))
        events.extend(Event.tagged(qid, crops[t]) for t in tags)
        events.extend(Event.answered(users[who], qid, t) for t, who in answers)

    truth = PlantedTruth(
        user_cluster={users[u]: user_cluster[u] for u in range(cfg.n_users)},
        crop_cluster={crops[c]: crop_cluster[c] for c in range(cfg.n_crops)},
        question_cluster=question_cluster,
    )
    return EventLog(events), truth


def census(log: EventLog) -> dict[str, int]:
    """Entity and event counts, as printed by the synth command."""
    counts = Counter(e.etype for e in log.events)
    users = {e.user for e in log.events if e.user}
    questions = {e.question for e in log.events if e.question}
    crops = {e.crop for e in log.events if e.crop}
    return {
        "users": len(users),
        "questions": len(questions),
        "crops": len(crops),
        "events": len(log.events),
        **{t.value: counts.get(t, 0) for t in EventType},
    }
