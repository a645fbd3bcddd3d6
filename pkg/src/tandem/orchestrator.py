"""Front-end frame loop with the oracle stream.

Each tick the loop drains newly arrived back-end messages into the oracle
lane, places one oracle token, asks the front-end model for its monologue and
output-audio tokens, and applies any forced silence.

The newest message (highest ``seq``) always wins: it preempts whatever is
being emitted at the next frame boundary, and an older message arriving late
is dropped outright.
"""

from __future__ import annotations

import enum
import logging
import random
import threading
import time
from collections import defaultdict, deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Protocol, Sequence, TypeVar

from .backend import OracleChannel, OracleMessage
from .core import (
    AUDIO_BASE,
    AlignedSession,
    FrameRecord,
    Speaker,
    StreamKind,
    TandemConfig,
    TokenId,
    WordTokenizer,
    arrival_frame,
    frame_of,
    placeholder_audio_token,
    speech_frames,
)

logger = logging.getLogger(__name__)

T = TypeVar("T")


class ProtocolError(RuntimeError):
    """A message sequence number was merged twice."""


class EventKind(str, enum.Enum):
    ORACLE_ARRIVED = "OracleArrived"
    ORACLE_SUPERSEDED = "OracleSuperseded"
    EMISSION_START = "EmissionStart"
    EMISSION_END = "EmissionEnd"
    FORCED_DELAY_END = "ForcedDelayEnd"


@dataclass(frozen=True)
class TraceEvent:
    time_ms: int
    kind: EventKind
    seq: int | None = None

    def to_dict(self) -> dict:
        return {"time_ms": self.time_ms, "kind": self.kind.value, "seq": self.seq}

    @classmethod
    def from_dict(cls, data: dict) -> TraceEvent:
        seq = data.get("seq")
        return cls(int(data["time_ms"]), EventKind(data["kind"]), None if seq is None else int(seq))


@dataclass(frozen=True)
class ActiveEmission:
    seq: int
    remaining: tuple[TokenId, ...]
    started: bool = False


@dataclass(frozen=True)
class OracleQueueState:
    active: ActiveEmission | None = None
    latest_arrived_seq: int = 0
    merged: frozenset[int] = frozenset()


def merge_oracle(
    state: OracleQueueState,
    arrival: OracleMessage,
    tokenizer: WordTokenizer,
    boundary_token: TokenId,
) -> OracleQueueState:
    """Fold one arrival into the queue state.

    A newer message replaces the active one (its unsent tokens are dropped)
    and is queued as ``[boundary] + tokens``; an older one is discarded.
    """
    if arrival.seq in state.merged:
        raise ProtocolError(f"oracle seq {arrival.seq} merged twice")
    merged = state.merged | {arrival.seq}
    if arrival.seq < state.latest_arrived_seq:
        return replace(state, merged=merged)
    emission = ActiveEmission(arrival.seq, (boundary_token, *tokenizer.encode(arrival.text)))
    return OracleQueueState(emission, arrival.seq, merged)


class OracleLane:
    """Per-frame oracle slot producer; shared by the live loop and dataset building.

    A message that preempts another which got no further than its boundary
    reuses that boundary, so boundaries never appear back to back.
    """

    def __init__(self, tokenizer: WordTokenizer, cfg: TandemConfig):
        self.tokenizer = tokenizer
        self.cfg = cfg
        self.state = OracleQueueState()
        self.events: list[TraceEvent] = []
        self._last: TokenId = cfg.pad_token

    @property
    def busy(self) -> bool:
        return self.state.active is not None

    def tick(self, frame_index: int, arrivals: Iterable[OracleMessage]) -> TokenId:
        now = frame_index * self.cfg.frame_period_ms
        for msg in arrivals:
            self.events.append(TraceEvent(msg.arrived_at_ms, EventKind.ORACLE_ARRIVED, msg.seq))
            previous = self.state.active
            self.state = merge_oracle(self.state, msg, self.tokenizer, self.cfg.boundary_token)
            active = self.state.active
            if active is None or active.seq != msg.seq:
                self.events.append(TraceEvent(now, EventKind.ORACLE_SUPERSEDED, msg.seq))
            elif previous is not None:
                self.events.append(TraceEvent(now, EventKind.ORACLE_SUPERSEDED, previous.seq))

        active = self.state.active
        if active is not None and not active.started and self._last == self.cfg.boundary_token:
            # The previous frame's boundary belonged to a message cut off before
            # saying anything; it already marks the switch, so don't repeat it.
            active = replace(active, remaining=active.remaining[1:])
            if not active.remaining:
                self.events.append(TraceEvent(now, EventKind.EMISSION_START, active.seq))
                self.events.append(TraceEvent(now, EventKind.EMISSION_END, active.seq))
                self.state = replace(self.state, active=None)
                active = None
        if active is None:
            self._last = self.cfg.pad_token
            return self.cfg.pad_token
        token, rest = active.remaining[0], active.remaining[1:]
        self._last = token
        if not active.started:
            self.events.append(TraceEvent(now, EventKind.EMISSION_START, active.seq))
        if rest:
            self.state = replace(self.state, active=ActiveEmission(active.seq, rest, True))
        else:
            self.events.append(TraceEvent(now, EventKind.EMISSION_END, active.seq))
            self.state = replace(self.state, active=None)
        return token


def apply_jitter(schedule: Sequence[tuple[int, T]], jitter_max_ms: int, rng_seed: int) -> list[tuple[int, T]]:
    """Delay each entry by an independent uniform draw from ``[0, jitter_max_ms]``.

    The result is re-sorted by jittered time (stable), so entries may swap.
    """
    times = [t for t, _ in schedule]
    if any(b < a for a, b in zip(times, times[1:])):
        raise ValueError("schedule times must be non-decreasing")
    if jitter_max_ms == 0:
        return list(schedule)
    rng = random.Random(rng_seed)
    jittered = [(t + rng.randint(0, jitter_max_ms), item) for t, item in schedule]
    return sorted(jittered, key=lambda e: e[0])


# ---------------------------------------------------------------------------
# Front-end model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepOutput:
    monologue: TokenId
    output_audio: TokenId


class FrontEndModel(Protocol):
    def reset(self) -> None: ...

    def step(self, input_audio: TokenId, oracle_slot: TokenId) -> StepOutput: ...

    def override(self, emitted: StepOutput) -> None:
        """Told when the loop replaced the last step's output (forced delay).

        Autoregressive models should condition on what was actually emitted.
        """
        ...


class StubFrontEnd:
    """Deterministic stand-in for the trained front-end.

    Says nothing until an oracle arrives, then repeats the current oracle's
    tokens in its monologue one frame after they appear, with a fixed speech
    token on the audio stream. A boundary token abandons whatever was still
    queued from the previous oracle.
    """

    def __init__(self, cfg: TandemConfig, speech_token: TokenId = AUDIO_BASE):
        if speech_token == cfg.silence_token:
            raise ValueError("speech token must differ from the silence token")
        self.cfg = cfg
        self.speech_token = speech_token
        self.reset()

    def reset(self) -> None:
        self._queue: deque[TokenId] = deque()
        self._last: TokenId | None = None

    def step(self, input_audio: TokenId, oracle_slot: TokenId) -> StepOutput:
        said = self._queue.popleft() if self._queue else None
        self._last = said
        if oracle_slot == self.cfg.boundary_token:
            self._queue.clear()
            self._last = None
        elif oracle_slot != self.cfg.pad_token:
            self._queue.append(oracle_slot)
        if said is None:
            return StepOutput(self.cfg.pad_token, self.cfg.silence_token)
        return StepOutput(said, self.speech_token)

    def override(self, emitted: StepOutput) -> None:
        if self._last is not None and emitted.monologue != self._last:
            self._queue.appendleft(self._last)
        self._last = None

    @property
    def idle(self) -> bool:
        return not self._queue


# ---------------------------------------------------------------------------
# Session loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SessionTrace:
    session_id: str
    frame_period_ms: int
    forced_delay_ms: int
    frames: tuple[FrameRecord, ...]
    events: tuple[TraceEvent, ...] = field(default=())

    def stream(self, kind: StreamKind) -> list[TokenId]:
        return [f.slot(kind) for f in self.frames]


class SessionAborted(RuntimeError):
    """The front-end model failed; ``trace`` holds every frame before the failure."""

    def __init__(self, message: str, trace: SessionTrace):
        super().__init__(message)
        self.trace = trace


class VirtualClock:
    """Frame clock that advances only when told to."""

    def __init__(self) -> None:
        self.now_ms = 0

    def wait_until(self, time_ms: int) -> None:
        self.now_ms = max(self.now_ms, time_ms)


class WallClock:
    """Frame clock tied to ``time.monotonic``."""

    def __init__(self) -> None:
        self._t0 = time.monotonic()

    @property
    def now_ms(self) -> int:
        return int((time.monotonic() - self._t0) * 1000)

    def wait_until(self, time_ms: int) -> None:
        delay = self._t0 + time_ms / 1000 - time.monotonic()
        if delay > 0:
            time.sleep(delay)


class FrameLoop:
    """Single-threaded owner of all per-session mutable state."""

    def __init__(self, session: AlignedSession, cfg: TandemConfig, model: FrontEndModel, tokenizer: WordTokenizer):
        self.session = session
        self.cfg = cfg
        self.model = model
        self.lane = OracleLane(tokenizer, cfg)
        self.frames: list[FrameRecord] = []
        period = cfg.frame_period_ms

        self._speech_frames = speech_frames(session, Speaker.USER, period)
        self._forced: list[tuple[int, int]] = []
        self._delay_events: dict[int, list[TraceEvent]] = defaultdict(list)
        min_frames = frame_of(session.end_ms, period) + 1
        for turn in session.turns:
            if turn.speaker is not Speaker.USER or not turn.words:
                continue
            if cfg.forced_delay_ms > 0:
                delay_end = turn.end_ms + cfg.forced_delay_ms
                end_frame = frame_of(delay_end, period)
                self._forced.append((frame_of(turn.start_ms, period), end_frame))
                self._delay_events[end_frame].append(TraceEvent(delay_end, EventKind.FORCED_DELAY_END))
                min_frames = max(min_frames, end_frame + 1)
        self.min_frames = min_frames
        model.reset()

    def is_forced(self, frame_index: int) -> bool:
        return any(lo <= frame_index < hi for lo, hi in self._forced)

    def tick(self, arrivals: Iterable[OracleMessage]) -> FrameRecord:
        f = len(self.frames)
        cfg = self.cfg
        if f in self._speech_frames:
            input_audio = placeholder_audio_token(self.session.session_id, f, StreamKind.INPUT_AUDIO)
        else:
            input_audio = cfg.silence_token
        oracle = self.lane.tick(f, arrivals)
        self.lane.events.extend(self._delay_events.get(f, ()))
        try:
            out = self.model.step(input_audio, oracle)
        except Exception as exc:
            raise SessionAborted(f"front-end step failed at frame {f}: {exc}", self.trace()) from exc
        if self.is_forced(f):
            forced = StepOutput(cfg.pad_token, cfg.silence_token)
            if forced != out:
                self.model.override(forced)
            out = forced
        rec = FrameRecord(f, f * cfg.frame_period_ms, input_audio, out.output_audio, out.monologue, oracle)
        self.frames.append(rec)
        return rec

    def quiet(self, rec: FrameRecord) -> bool:
        return rec.inner_monologue == self.cfg.pad_token and rec.output_audio == self.cfg.silence_token

    def trace(self) -> SessionTrace:
        return SessionTrace(
            self.session.session_id,
            self.cfg.frame_period_ms,
            self.cfg.forced_delay_ms,
            tuple(self.frames),
            tuple(self.lane.events),
        )


def run_session(
    session: AlignedSession,
    cfg: TandemConfig,
    model: FrontEndModel,
    oracle_source: Iterable[OracleMessage],
    tokenizer: WordTokenizer,
    *,
    max_tail_frames: int = 750,
) -> SessionTrace:
    """Simulate one session on the virtual clock.

    Runs until the session audio, every forced delay and every oracle emission
    are over and the model produces a quiet frame (pad monologue, silent
    audio), or ``max_tail_frames`` past that point for models that never go
    quiet.
    """
    loop = FrameLoop(session, cfg, model, tokenizer)
    by_frame: dict[int, list[OracleMessage]] = defaultdict(list)
    for msg in sorted(oracle_source, key=lambda m: (m.arrived_at_ms, m.seq)):
        by_frame[arrival_frame(msg.arrived_at_ms, cfg.frame_period_ms)].append(msg)
    min_frames = max(loop.min_frames, max(by_frame, default=-1) + 1)
    clock = VirtualClock()
    while True:
        f = len(loop.frames)
        clock.wait_until(f * cfg.frame_period_ms)
        rec = loop.tick(by_frame.get(f, ()))
        if f + 1 >= min_frames and not loop.lane.busy:
            if loop.quiet(rec) or f + 1 >= min_frames + max_tail_frames:
                break
    return loop.trace()


def feed_channel(messages: Sequence[OracleMessage], channel: OracleChannel, clock: WallClock) -> threading.Thread:
    """Deliver ``messages`` into ``channel`` at their arrival times, from a worker thread."""

    def _run() -> None:
        for msg in sorted(messages, key=lambda m: (m.arrived_at_ms, m.seq)):
            clock.wait_until(msg.arrived_at_ms)
            channel.put(msg)
        channel.close()

    worker = threading.Thread(target=_run, name="oracle-relay", daemon=True)
    worker.start()
    return worker


def run_live(
    session: AlignedSession,
    cfg: TandemConfig,
    model: FrontEndModel,
    channel: OracleChannel,
    tokenizer: WordTokenizer,
    clock: WallClock | None = None,
    *,
    max_tail_frames: int = 750,
) -> SessionTrace:
    """Same loop as :func:`run_session`, paced by the wall clock.

    Whatever the relay has put on ``channel`` by the start of a frame is
    merged at that frame. Stops once the channel is closed and drained and the
    usual end conditions hold.
    """
    clock = clock or WallClock()
    loop = FrameLoop(session, cfg, model, tokenizer)
    while True:
        f = len(loop.frames)
        clock.wait_until(f * cfg.frame_period_ms)
        rec = loop.tick(channel.drain())
        if channel.closed and f + 1 >= loop.min_frames and not loop.lane.busy:
            if loop.quiet(rec) or f + 1 >= loop.min_frames + max_tail_frames:
                break
    return loop.trace()
