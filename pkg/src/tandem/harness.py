"""Latency measurement, forced-delay sweeps and report generation.

Latency of a turn is the time from the end of the user's last word to the
onset of the system's speech (first non-silence output-audio frame after a
silent one). It is negative when the system starts talking mid-question.
"""

from __future__ import annotations

import csv
import json
import logging
import re
import statistics
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Protocol, Sequence

from .backend import LatencyModel, MockLLM, OracleMessage, backend_candidates, candidates_from_schedule, relay
from .chat import ChatCompletionsClient, ChatError
from .core import AlignedSession, StreamKind, TandemConfig, WordTokenizer, derive_seed, frame_of
from .oracle_sim import ScheduledOracle, SimulatorClient, mock_simulator_for, schedule_oracles
from .orchestrator import SessionTrace, StubFrontEnd, run_session

logger = logging.getLogger(__name__)

LATENCY_CSV_COLUMNS = ("session_id", "turn_index", "user_end_ms", "response_start_ms", "latency_ms")


@dataclass(frozen=True)
class LatencyRecord:
    session_id: str
    turn_index: int
    user_end_ms: int
    response_start_ms: int
    latency_ms: int


@dataclass(frozen=True)
class ResponseWindow:
    turn_index: int
    open_frame: int
    close_frame: int


def response_windows(trace: SessionTrace, session: AlignedSession) -> list[ResponseWindow]:
    """Frames in which the reply to each answered User turn is looked for.

    A window opens with the question's first frame (early answers count) and
    closes when the next User turn starts, or at the end of the trace.
    """
    if trace.session_id != session.session_id:
        raise ValueError(f"trace is for {trace.session_id!r}, session is {session.session_id!r}")
    period = trace.frame_period_ms
    if len(trace.frames) <= frame_of(session.end_ms, period):
        raise ValueError(f"trace of {trace.session_id!r} ends before the session does")
    users = session.user_turn_indices()
    out = []
    for k, i in enumerate(users):
        if session.response_to(i) is None:
            continue
        open_frame = frame_of(session.turns[i].start_ms, period)
        close = frame_of(session.turns[users[k + 1]].start_ms, period) if k + 1 < len(users) else len(trace.frames)
        out.append(ResponseWindow(i, open_frame, close))
    return out


def measure_latency(trace: SessionTrace, session: AlignedSession, silence_token: int | None = None) -> list[LatencyRecord]:
    """One record per answered User turn in which the system actually spoke."""
    silence = silence_token if silence_token is not None else TandemConfig().silence_token
    audio = trace.stream(StreamKind.OUTPUT_AUDIO)
    period = trace.frame_period_ms
    records = []
    for win in response_windows(trace, session):
        user_end = session.turns[win.turn_index].end_ms
        for f in range(win.open_frame, win.close_frame):
            if audio[f] != silence and (f == 0 or audio[f - 1] == silence):
                start = f * period
                records.append(LatencyRecord(session.session_id, win.turn_index, user_end, start, start - user_end))
                break
        else:
            logger.debug("%s turn %d unanswered", session.session_id, win.turn_index)
    return records


def median_latency_s(records: Sequence[LatencyRecord]) -> float | None:
    if not records:
        return None
    return statistics.median(r.latency_ms for r in records) / 1000


def write_latency_csv(records: Iterable[LatencyRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(LATENCY_CSV_COLUMNS)
        for r in records:
            writer.writerow([getattr(r, c) for c in LATENCY_CSV_COLUMNS])


# ---------------------------------------------------------------------------
# Judges
# ---------------------------------------------------------------------------


class JudgeError(RuntimeError):
    pass


class JudgeClient(Protocol):
    def score(self, question: str, reference: str, answer: str) -> float: ...


class MockJudge:
    """Token overlap between the reference answer and what was said.

    The shared token count (as multisets) is divided by the longer of the two
    sequences, so missing content and redundant extra speech both cost.
    """

    def __init__(self, tokenizer: WordTokenizer):
        self.tokenizer = tokenizer

    def score(self, question: str, reference: str, answer: str) -> float:
        ref = self.tokenizer.encode(reference)
        ans = self.tokenizer.encode(answer)
        if not ref or not ans:
            return 0.0
        shared = sum((Counter(ref) & Counter(ans)).values())
        return shared / max(len(ref), len(ans))


JUDGE_SYSTEM_PROMPT = (
    "You are grading a spoken assistant. Given the question, a reference answer "
    "and the assistant's transcript, reply with a single score from 1 to 10."
)


class HttpJudge:
    def __init__(self, client: ChatCompletionsClient, system_prompt: str = JUDGE_SYSTEM_PROMPT):
        self.client = client
        self.system_prompt = system_prompt

    def score(self, question: str, reference: str, answer: str) -> float:
        user = f"Question: {question}\nReference: {reference}\nTranscript: {answer}"
        try:
            reply = self.client.complete(self.system_prompt, user, max_tokens=8)
        except ChatError as exc:
            raise JudgeError(str(exc)) from exc
        m = re.search(r"\d+(?:\.\d+)?", reply)
        if m is None:
            raise JudgeError(f"no score in judge reply {reply!r}")
        return float(m.group())


def spoken_answers(trace: SessionTrace, session: AlignedSession, tokenizer: WordTokenizer) -> dict[int, str]:
    """Monologue text in each turn's response window, keyed by User turn index."""
    mono = trace.stream(StreamKind.INNER_MONOLOGUE)
    return {
        w.turn_index: tokenizer.decode(mono[w.open_frame : w.close_frame])
        for w in response_windows(trace, session)
    }


# ---------------------------------------------------------------------------
# Oracle sources
# ---------------------------------------------------------------------------


def simulated_schedule(
    session: AlignedSession, cfg: TandemConfig, seed: int, simulator: SimulatorClient | None = None
) -> list[ScheduledOracle]:
    return schedule_oracles(session, cfg, simulator or mock_simulator_for(session.session_id, seed))


def oracle_messages(
    session: AlignedSession,
    cfg: TandemConfig,
    seed: int,
    *,
    schedule: Sequence[ScheduledOracle] | None = None,
    source: str = "replay",
) -> list[OracleMessage]:
    """Arrival-ordered oracle messages for one session.

    ``replay`` relays simulated oracles (``schedule`` if given, otherwise one
    generated with the seeded mock simulator); ``backend`` runs the aligned
    recognizer and a mock LLM through the relay.
    """
    latency = LatencyModel.from_config(cfg)
    relay_seed = derive_seed(seed, session.session_id, "relay")
    if source == "replay":
        if schedule is None:
            schedule = simulated_schedule(session, cfg, seed)
        return relay(candidates_from_schedule(schedule), latency, relay_seed)
    if source == "backend":
        llm = MockLLM(seed=derive_seed(seed, session.session_id, "llm"))
        return relay(backend_candidates(session, cfg, llm), latency, relay_seed)
    raise ValueError(f"unknown oracle source {source!r}")


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


@dataclass
class SweepPoint:
    forced_delay_ms: int
    median_latency_s: float | None
    median_latency_clamped_s: float | None
    quality_score: float | None
    n_sessions: int
    n_turns: int
    n_answered: int


@dataclass
class SweepReport:
    points: list[SweepPoint]
    config: dict[str, int]
    seed: int
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "config": self.config,
            "points": [asdict(p) for p in self.points],
            "warnings": self.warnings,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> SweepReport:
        return cls(
            [SweepPoint(**p) for p in data["points"]],
            dict(data["config"]),
            int(data["seed"]),
            list(data.get("warnings", [])),
        )


def run_sweep(
    corpus: Sequence[AlignedSession],
    cfg: TandemConfig,
    delays: Sequence[int],
    tokenizer: WordTokenizer,
    judge: JudgeClient | None = None,
    seed: int | None = None,
    sources: Mapping[str, Sequence[OracleMessage]] | None = None,
) -> SweepReport:
    """Simulate every session at each forced delay with the stub front-end.

    Oracle arrivals are computed once and reused for every delay, so the delay
    is the only thing that changes between points.
    """
    if not delays:
        raise ValueError("delays must be non-empty")
    seed = cfg.rng_seed if seed is None else seed
    sessions = sorted(corpus, key=lambda s: s.session_id)
    if sources is None:
        sources = {s.session_id: oracle_messages(s, cfg, seed) for s in sessions}
    warnings: list[str] = []
    points = []
    for delay in sorted(set(delays)):
        point_cfg = cfg.replace(forced_delay_ms=delay)
        records: list[LatencyRecord] = []
        scores: list[float] = []
        judge_failed = False
        n_turns = 0
        for session in sessions:
            trace = run_session(session, point_cfg, StubFrontEnd(point_cfg), sources[session.session_id], tokenizer)
            records.extend(measure_latency(trace, session, point_cfg.silence_token))
            answers = spoken_answers(trace, session, tokenizer)
            n_turns += len(answers)
            if judge is None or judge_failed:
                continue
            for turn_index, answer in answers.items():
                question = session.turns[turn_index].transcript
                reference = session.response_to(turn_index).transcript
                try:
                    scores.append(judge.score(question, reference, answer))
                except (JudgeError, ChatError) as exc:
                    warnings.append(f"delay {delay} ms: judge failed ({exc}); quality score omitted")
                    judge_failed = True
                    break
        median = median_latency_s(records)
        quality = statistics.fmean(scores) if scores and not judge_failed else None
        points.append(
            SweepPoint(
                forced_delay_ms=delay,
                median_latency_s=median,
                median_latency_clamped_s=None if median is None else max(0.0, median),
                quality_score=quality,
                n_sessions=len(sessions),
                n_turns=n_turns,
                n_answered=len(records),
            )
        )
        logger.info("delay %d ms: median latency %s s, quality %s", delay, median, quality)
    return SweepReport(points, cfg.to_dict(), seed, warnings)


def plot_series(report: SweepReport) -> list[dict[str, Any]]:
    """(latency, quality) pairs, one per sweep point, for an external plotter."""
    return [
        {
            "forced_delay_ms": p.forced_delay_ms,
            "x_latency_s": p.median_latency_clamped_s,
            "y_quality": p.quality_score,
        }
        for p in report.points
    ]
