"""Back-end relay: partial transcripts in, sequenced candidate responses out.

The streaming recognizer is mocked from ground-truth word alignments. Each
distinct partial is sent to a text LLM; its answers are numbered in issue
order and delivered after a sampled latency, so they may arrive out of order.
"""

from __future__ import annotations

import logging
import queue
import random
from dataclasses import dataclass
from typing import Iterable, Mapping, Protocol, Sequence

from .chat import ChatCompletionsClient, ChatError
from .core import AlignedSession, Speaker, TandemConfig, Turn, snapshot_times, stable_hash64
from .oracle_sim import ScheduledOracle

logger = logging.getLogger(__name__)


class BackendError(RuntimeError):
    pass


@dataclass(frozen=True)
class PartialTranscript:
    text: str
    snapshot_time_ms: int
    words_observed: int


@dataclass(frozen=True)
class OracleMessage:
    seq: int
    text: str
    issued_at_ms: int
    arrived_at_ms: int
    source_words: int
    level: int | None = None


class StreamingTranscriber(Protocol):
    """Slot for a real streaming recognizer; only the aligned mock ships."""

    def partials(self, turn: Turn, cycle_ms: int) -> list[PartialTranscript]: ...


def stream_partials(turn: Turn, backend_cycle_ms: int) -> list[PartialTranscript]:
    """Partial transcripts of ``turn`` as a streaming recognizer would report them.

    A word counts once its ``end_ms`` is at or before the snapshot time. Ticks
    where nothing new finished still produce a (repeated) partial.
    """
    out = []
    for t in snapshot_times(turn, backend_cycle_ms):
        heard = [w.text for w in turn.words if w.end_ms <= t]
        out.append(PartialTranscript(" ".join(heard), t, len(heard)))
    return out


class AlignedTranscriber:
    def partials(self, turn: Turn, cycle_ms: int) -> list[PartialTranscript]:
        return stream_partials(turn, cycle_ms)


# ---------------------------------------------------------------------------
# LLM clients
# ---------------------------------------------------------------------------


class LLMClient(Protocol):
    def respond(self, partial: str, history: str) -> str: ...


class MockLLM:
    """Canned answers keyed by question prefix, with a seeded generic fallback."""

    def __init__(self, canned: Mapping[str, str] | None = None, seed: int = 0):
        self.canned = dict(canned or {})
        self.seed = seed
        self.calls = 0

    def respond(self, partial: str, history: str) -> str:
        self.calls += 1
        for prefix, answer in self.canned.items():
            if partial.startswith(prefix.rstrip(".")):
                return answer
        rng = random.Random(stable_hash64(self.seed, partial, history))
        tail = " ".join(partial.split()[-3:]) or "that"
        opener = rng.choice(("So", "Okay", "Right", "Well"))
        return f"{opener}, you are asking about {tail}. Here is what I know."


LLM_SYSTEM_PROMPT = (
    "You are the knowledge back-end of a spoken assistant. The user's question "
    "may be cut off mid-sentence. Give the best short spoken answer you can."
)


class HttpLLM:
    def __init__(self, client: ChatCompletionsClient, max_tokens: int = 128, system_prompt: str = LLM_SYSTEM_PROMPT):
        self.client = client
        self.max_tokens = max_tokens
        self.system_prompt = system_prompt

    def respond(self, partial: str, history: str) -> str:
        user = f"Conversation so far: {history}\nCurrent (partial) user utterance: {partial}"
        return self.client.complete(self.system_prompt, user, self.max_tokens)


def respond(partial: PartialTranscript, history: str, client: LLMClient) -> str:
    try:
        text = client.respond(partial.text, history)
    except ChatError as exc:
        raise BackendError(str(exc)) from exc
    if not text or not text.strip():
        raise BackendError(f"empty candidate for partial at {partial.snapshot_time_ms} ms")
    return text


@dataclass(frozen=True)
class Candidate:
    issued_at_ms: int
    text: str
    source_words: int = 0
    level: int | None = None


def backend_candidates(session: AlignedSession, cfg: TandemConfig, client: LLMClient) -> list[Candidate]:
    """Query ``client`` once per distinct partial of every User turn.

    A partial identical to the previous call's is skipped; a failing call
    drops that cycle and the next one makes up for it.
    """
    out: list[Candidate] = []
    for i, turn in enumerate(session.turns):
        if turn.speaker is not Speaker.USER:
            continue
        prior = " ".join(t.transcript for t in session.turns[:i])
        last_text: str | None = None
        for partial in stream_partials(turn, cfg.backend_cycle_ms):
            if partial.text == last_text:
                continue
            last_text = partial.text
            history = f"{prior} {partial.text}".strip()
            try:
                text = respond(partial, history, client)
            except BackendError as exc:
                logger.warning("dropping back-end cycle at %d ms: %s", partial.snapshot_time_ms, exc)
                continue
            out.append(Candidate(partial.snapshot_time_ms, text, partial.words_observed))
    return out


# ---------------------------------------------------------------------------
# Relay
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LatencyModel:
    """Constant response time plus uniform integer jitter in ``[0, jitter_max_ms]``."""

    constant_ms: int = 0
    jitter_max_ms: int = 0

    def sample(self, rng: random.Random) -> int:
        return self.constant_ms + (rng.randint(0, self.jitter_max_ms) if self.jitter_max_ms else 0)

    @classmethod
    def from_config(cls, cfg: TandemConfig) -> LatencyModel:
        return cls(cfg.backend_latency_ms, cfg.jitter_max_ms)


def relay(candidates: Iterable[Candidate], latency_model: LatencyModel, rng_seed: int) -> list[OracleMessage]:
    """Number candidates in issue order and deliver them in arrival order."""
    rng = random.Random(rng_seed)
    messages = []
    prev: int | None = None
    for seq, cand in enumerate(candidates, start=1):
        if prev is not None and cand.issued_at_ms <= prev:
            raise ValueError("candidate issue times must be strictly increasing")
        prev = cand.issued_at_ms
        arrived = cand.issued_at_ms + latency_model.sample(rng)
        messages.append(OracleMessage(seq, cand.text, cand.issued_at_ms, arrived, cand.source_words, cand.level))
    messages.sort(key=lambda m: (m.arrived_at_ms, m.seq))
    return messages


def candidates_from_schedule(schedule: Sequence[ScheduledOracle]) -> list[Candidate]:
    """Replay mode: simulated oracles stand in for live back-end answers."""
    return [Candidate(s.emit_time_ms, s.oracle.text, s.oracle.ratio.n, s.oracle.level) for s in schedule]


class OracleChannel:
    """Single-producer/single-consumer ordered channel from relay to frame loop."""

    _CLOSED = object()

    def __init__(self) -> None:
        self._q: queue.SimpleQueue = queue.SimpleQueue()
        self.closed = False

    def put(self, message: OracleMessage) -> None:
        self._q.put(message)

    def close(self) -> None:
        self._q.put(self._CLOSED)

    def drain(self) -> list[OracleMessage]:
        """Everything currently queued, in send order, without blocking."""
        out = []
        while True:
            try:
                item = self._q.get_nowait()
            except queue.Empty:
                return out
            if item is self._CLOSED:
                self.closed = True
            else:
                out.append(item)
