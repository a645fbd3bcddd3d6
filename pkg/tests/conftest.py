from __future__ import annotations

import time
from contextlib import contextmanager

import pytest

from tandem.core import AlignedSession, WordTokenizer
from tandem.dataset import generate_corpus

from .helpers import make_session, timed


@pytest.fixture
def qa_session() -> AlignedSession:
    # 4-word question over 0-400 ms, words ending at 100/200/300/400.
    return make_session(
        timed("Who was Japan's shogun?", 0),
        timed("It's the Battle of Sekigahara.", 700),
    )


@pytest.fixture(scope="session")
def default_corpus() -> list[AlignedSession]:
    return generate_corpus(200, seed=0)


@pytest.fixture(scope="session")
def corpus_tokenizer(default_corpus) -> WordTokenizer:
    return WordTokenizer.from_corpus(default_corpus)


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def criterion(request):
    """Context manager recording one PASS/FAIL line per acceptance criterion."""
    results = request.config.stash[_ACCEPTANCE]

    @contextmanager
    def check(label: str, max_seconds: float | None = None):
        t0 = time.perf_counter()
        try:
            yield
            elapsed = time.perf_counter() - t0
            if max_seconds is not None:
                assert elapsed < max_seconds, f"took {elapsed:.2f}s, limit {max_seconds}s"
        except BaseException as exc:
            line = f"FAIL  {label}: {str(exc).splitlines()[0] if str(exc) else type(exc).__name__}"
            results.append(line)
            print(line)
            raise
        line = f"PASS  {label} ({elapsed:.2f}s)"
        results.append(line)
        print(line)

    return check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_ACCEPTANCE, [])
    if results:
        terminalreporter.section("acceptance criteria")
        for line in results:
            terminalreporter.write_line(line)
