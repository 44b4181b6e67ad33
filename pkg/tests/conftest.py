import contextlib
import time

import pytest

from convflip import fixtures
from convflip.corpus import parse_corpus
from convflip.dialogue import Dialogue, TriggerAnnotation

# Example dialogues encoded from the worked trigger examples (emotion sequences and triggers).
FIG1A = Dialogue.build(
    "fig1a",
    [
        ("A", "a1", "neutral"),
        ("B", "b1", "neutral"),
        ("A", "a2", "joy"),
        ("B", "b2", "joy"),
        ("A", "a3", "joy"),
        ("B", "b3", "sadness"),
        ("A", "a4", "sadness"),
        ("B", "b4", "neutral"),
    ],
)
FIG1A_TRIGGERS = [
    TriggerAnnotation(3, {3}),
    TriggerAnnotation(4, {3}),
    TriggerAnnotation(6, {6}),
    TriggerAnnotation(7, {6}),
    TriggerAnnotation(8, {7}),
]


@pytest.fixture
def fig1a():
    return FIG1A


@pytest.fixture
def overfit_corpus():
    return parse_corpus(fixtures.path("overfit_dialogues.jsonl"), fixtures.path("overfit_triggers.jsonl"))


@pytest.fixture
def mini_corpus():
    return parse_corpus(fixtures.path("mini_dialogues.jsonl"), fixtures.path("mini_triggers.jsonl"))


# ------------------------------------------------------------------ acceptance reporting

ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


@contextlib.contextmanager
def criterion(number: int, title: str, budget: float | None = None):
    """Record PASS/FAIL/SKIP for one acceptance criterion; ``budget`` is a wall-clock limit in seconds."""
    start = time.perf_counter()
    try:
        yield
        elapsed = time.perf_counter() - start
        assert budget is None or elapsed < budget, f"took {elapsed:.1f} s, budget {budget} s"
    except pytest.skip.Exception as exc:
        ACCEPTANCE[number] = ("SKIP", title, str(exc.msg))
        raise
    except BaseException as exc:
        ACCEPTANCE[number] = ("FAIL", title, f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
        raise
    ACCEPTANCE[number] = ("PASS", title, f"{elapsed:.1f} s")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {title}  ({detail})")
