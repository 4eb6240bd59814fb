import pytest

from qroute.corpus import Event, EventLog, SynthConfig, synth_generate_with_truth
from qroute.hin import build_hin

SMALL = SynthConfig(n_clusters=4, n_users=60, n_crops=20, n_questions=400,
                    answers_per_question_mean=2.5, cross_cluster_noise=0.1,
                    time_span_seconds=30 * 86400, seed=11)


@pytest.fixture(scope="session")
def small_planted():
    return synth_generate_with_truth(SMALL)


@pytest.fixture(scope="session")
def small_log(small_planted):
    return small_planted[0]


@pytest.fixture(scope="session")
def small_hin(small_log):
    return build_hin(small_log)


@pytest.fixture
def tiny_log():
    return EventLog([
        Event.asked("u1", "q1", 10),
        Event.answered("u2", "q1", 20),
        Event.answered("u2", "q1", 30),
        Event.tagged("q1", "c1"),
    ])


_ACCEPTANCE: list[str] = []


@pytest.fixture
def verdict():
    """Record one summary line per acceptance criterion."""
    def record(criterion: int, ok: bool, detail: str) -> None:
        _ACCEPTANCE.append(f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
