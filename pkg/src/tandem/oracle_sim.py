"""Simulated oracle generation for training-data augmentation.

As more of a user utterance is heard, a simulator LLM is prompted with more
of the recorded answer, so the generated candidates sharpen over time and
finally become the recorded answer itself.
"""

from __future__ import annotations

import logging
import random
import time
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Callable, Mapping, Protocol, Sequence

from .chat import ChatCompletionsClient, ChatError, call_with_retries
from .core import AlignedSession, Speaker, TandemConfig, derive_seed, snapshot_times, stable_hash64, words_heard

logger = logging.getLogger(__name__)

MAX_LEVEL = 5

# Lower bound (inclusive) of each hint level's completeness interval.
LEVEL_LOWER_BOUNDS: tuple[Fraction, ...] = (
    Fraction(0),
    Fraction(1, 2),
    Fraction(13, 20),
    Fraction(4, 5),
    Fraction(19, 20),
    Fraction(1),
)

HINT_INSTRUCTIONS: dict[int, str] = {
    1: "Refer only to keywords from the hint string.",
    2: "Include content different from the hint.",
    3: "Don't copy the hint verbatim.",
    4: "Use the hint.",
}


class StructuralError(ValueError):
    """The session does not have the shape an operation needs."""


class SimulatorError(RuntimeError):
    """A simulator call failed. Retriable; carries the prompt that failed."""

    def __init__(self, message: str, prompt: OraclePrompt | None = None):
        super().__init__(message)
        self.prompt = prompt


@dataclass(frozen=True)
class CompletenessRatio:
    """Share of the utterance's words heard so far, kept as an exact rational."""

    n: int
    total: int

    def __post_init__(self) -> None:
        if self.total < 1:
            raise ValueError(f"total must be >= 1, got {self.total}")
        if not 0 <= self.n <= self.total:
            raise ValueError(f"n must lie in [0, {self.total}], got {self.n}")

    @property
    def value(self) -> Fraction:
        return Fraction(self.n, self.total)

    def __str__(self) -> str:
        return f"{self.n}/{self.total}"

    @classmethod
    def parse(cls, text: str) -> CompletenessRatio:
        n, total = text.split("/")
        return cls(int(n), int(total))


def completeness(words_observed: int, total_words: int) -> CompletenessRatio:
    return CompletenessRatio(words_observed, total_words)


def hint_level(r: CompletenessRatio) -> int:
    value = r.value
    level = 0
    for lvl, lower in enumerate(LEVEL_LOWER_BOUNDS):
        if value >= lower:
            level = lvl
    return level


@dataclass(frozen=True)
class OraclePrompt:
    history: str
    hint: str | None
    instruction: str | None
    level: int
    ratio: CompletenessRatio
    time_ms: int


@dataclass(frozen=True)
class Level5Passthrough:
    """The utterance is complete: the recorded answer is used as-is."""

    text: str
    ratio: CompletenessRatio
    time_ms: int

    @property
    def level(self) -> int:
        return MAX_LEVEL


@dataclass(frozen=True)
class SimulatedOracle:
    text: str
    generated_at_ms: int
    level: int
    ratio: CompletenessRatio


@dataclass(frozen=True)
class ScheduledOracle:
    """One injection point: a simulated oracle and the time it is emitted."""

    session_id: str
    turn_index: int
    seq: int
    emit_time_ms: int
    oracle: SimulatedOracle

    def to_dict(self) -> dict[str, Any]:
        return {
            "session_id": self.session_id,
            "turn_index": self.turn_index,
            "seq": self.seq,
            "emit_time_ms": self.emit_time_ms,
            "level": self.oracle.level,
            "ratio": str(self.oracle.ratio),
            "text": self.oracle.text,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ScheduledOracle:
        emit = int(data["emit_time_ms"])
        oracle = SimulatedOracle(
            text=str(data["text"]),
            generated_at_ms=emit,
            level=int(data["level"]),
            ratio=CompletenessRatio.parse(data["ratio"]),
        )
        return cls(str(data["session_id"]), int(data["turn_index"]), int(data["seq"]), emit, oracle)


def history_at(session: AlignedSession, time_ms: int) -> str:
    """All words of the session, in order, that were fully uttered by ``time_ms``."""
    return " ".join(w.text for t in session.turns for w in t.words if w.end_ms <= time_ms)


def build_prompt(session: AlignedSession, turn_index: int, time_ms: int) -> OraclePrompt | Level5Passthrough:
    if not 0 <= turn_index < len(session.turns):
        raise StructuralError(f"turn index {turn_index} out of range")
    turn = session.turns[turn_index]
    if turn.speaker is not Speaker.USER:
        raise StructuralError(f"turn {turn_index} of {session.session_id!r} is not a User turn")
    response = session.response_to(turn_index)
    if response is None:
        raise StructuralError(f"turn {turn_index} of {session.session_id!r} has no System response")

    ratio = completeness(words_heard(turn, time_ms), len(turn.words))
    level = hint_level(ratio)
    if level == MAX_LEVEL:
        return Level5Passthrough(response.transcript, ratio, time_ms)
    history = history_at(session, time_ms)
    if level == 0:
        return OraclePrompt(history, None, None, 0, ratio, time_ms)
    return OraclePrompt(history, response.transcript, HINT_INSTRUCTIONS[level], level, ratio, time_ms)


# ---------------------------------------------------------------------------
# Simulator clients
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimulatorRequest:
    history: str
    hint: str | None
    instruction: str | None
    max_tokens: int


class SimulatorClient(Protocol):
    def complete(self, request: SimulatorRequest) -> str: ...


_GENERIC_OPENERS = (
    "Hmm, let me think about that for a second.",
    "Okay, that is a good question.",
    "Well, I think I know what you are asking.",
    "Right, let me see what I remember about that.",
)
_DIVERGENT_TAILS = (
    "but I am not completely sure about the details.",
    "although there is a bit more to the story.",
    "and people often mix this up with something else.",
)


class MockSimulator:
    """Seeded template completions standing in for a simulator LLM.

    The output depends only on (seed, request), so it is reproducible and safe
    to share across threads.
    """

    def __init__(self, seed: int = 0, canned: Sequence[str] = _GENERIC_OPENERS):
        self.seed = seed
        self.canned = tuple(canned)

    def complete(self, request: SimulatorRequest) -> str:
        rng = random.Random(stable_hash64(self.seed, request.history, request.hint, request.instruction))
        level = _level_of_instruction(request.instruction)
        if level == 0 or not request.hint:
            text = rng.choice(self.canned)
        else:
            hint = request.hint.split()
            if level == 1:
                keywords = [w for w in hint if len(w.strip(".,?!")) > 3] or hint
                picked = sorted(rng.sample(range(len(keywords)), min(3, len(keywords))))
                text = "I think it has to do with " + " ".join(keywords[i] for i in picked)
            elif level == 2:
                text = " ".join(hint[: max(1, len(hint) // 2)]) + " " + rng.choice(_DIVERGENT_TAILS)
            elif level == 3:
                kept = [w for w in hint if rng.random() >= 0.25] or hint[:1]
                text = "Roughly, " + " ".join(kept)
            else:
                text = " ".join(hint)
        return " ".join(text.split()[: request.max_tokens])


def _level_of_instruction(instruction: str | None) -> int:
    for level, text in HINT_INSTRUCTIONS.items():
        if instruction == text:
            return level
    return 0


SIMULATOR_SYSTEM_PROMPT = (
    "You are simulating a voice assistant that answers while the user is still "
    "speaking. Reply with one short spoken-style answer and nothing else."
)


def format_simulator_request(request: SimulatorRequest) -> str:
    lines = [f"History: {request.history}"]
    if request.hint is not None:
        lines.append(f"Hint: {request.hint}")
    if request.instruction is not None:
        lines.append(f"Instruction: {request.instruction}")
    else:
        lines.append("Instruction: Answer from the history alone.")
    return "\n".join(lines)


class HttpSimulator:
    """Simulator backed by a chat-completions endpoint."""

    def __init__(self, client: ChatCompletionsClient, system_prompt: str = SIMULATOR_SYSTEM_PROMPT):
        self.client = client
        self.system_prompt = system_prompt

    def complete(self, request: SimulatorRequest) -> str:
        try:
            return self.client.complete(self.system_prompt, format_simulator_request(request), request.max_tokens)
        except ChatError as exc:
            raise SimulatorError(str(exc)) from exc


# ---------------------------------------------------------------------------
# Generation and scheduling
# ---------------------------------------------------------------------------


def generate_oracle(
    prompt: OraclePrompt | Level5Passthrough,
    simulator: SimulatorClient,
    max_tokens: int = 64,
) -> SimulatedOracle:
    if isinstance(prompt, Level5Passthrough):
        return SimulatedOracle(prompt.text, prompt.time_ms, MAX_LEVEL, prompt.ratio)
    request = SimulatorRequest(prompt.history, prompt.hint, prompt.instruction, max_tokens)
    try:
        text = simulator.complete(request)
    except (SimulatorError, ChatError) as exc:
        raise SimulatorError(f"simulator failed at level {prompt.level}: {exc}", prompt) from exc
    return SimulatedOracle(text, prompt.time_ms, prompt.level, prompt.ratio)


def schedule_oracles(
    session: AlignedSession,
    cfg: TandemConfig,
    simulator: SimulatorClient,
    *,
    retries: int = 2,
    backoff_s: float = 0.5,
    max_tokens: int = 64,
    sleep: Callable[[float], None] = time.sleep,
) -> list[ScheduledOracle]:
    """Simulated oracles for every answered User turn, at fixed injection times.

    Injection points are those of :func:`tandem.core.snapshot_times`: every
    ``cfg.backend_cycle_ms`` during the utterance, plus a final one when its
    last word ends (always level 5). A point whose simulator call still fails
    after ``retries`` is skipped.
    """
    out: list[ScheduledOracle] = []
    seq = 0
    for turn_index in session.user_turn_indices():
        if session.response_to(turn_index) is None:
            continue
        for t in snapshot_times(session.turns[turn_index], cfg.backend_cycle_ms):
            prompt = build_prompt(session, turn_index, t)
            try:
                oracle = call_with_retries(
                    lambda: generate_oracle(prompt, simulator, max_tokens),
                    retries=retries,
                    backoff_s=backoff_s,
                    retry_on=(SimulatorError,),
                    sleep=sleep,
                )
            except SimulatorError:
                logger.warning("skipping injection at %d ms in %s turn %d", t, session.session_id, turn_index)
                continue
            if out and t <= out[-1].emit_time_ms:
                raise StructuralError(f"user turns of {session.session_id!r} overlap in time")
            seq += 1
            out.append(ScheduledOracle(session.session_id, turn_index, seq, t, oracle))
    return out


def mock_simulator_for(session_id: str, global_seed: int) -> MockSimulator:
    return MockSimulator(derive_seed(global_seed, session_id, "simulator"))
