"""Four-stream training sequences, corpus validation, and a synthetic Q&A corpus."""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .backend import OracleMessage
from .core import (
    AlignedSession,
    FrameRecord,
    Speaker,
    StreamKind,
    TandemConfig,
    TokenId,
    Turn,
    Word,
    WordTokenizer,
    arrival_frame,
    derive_seed,
    frame_of,
    iter_corpus_lines,
    placeholder_audio_token,
    speech_frames,
)
from .oracle_sim import ScheduledOracle
from .orchestrator import EventKind, OracleLane, apply_jitter

logger = logging.getLogger(__name__)


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class OracleAnnotation:
    frame_index: int
    seq: int
    level: int


@dataclass(frozen=True)
class TrainingSequence:
    session_id: str
    frame_period_ms: int
    frames: tuple[FrameRecord, ...]
    oracle_annotations: tuple[OracleAnnotation, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "session_id": self.session_id,
            "frame_period_ms": self.frame_period_ms,
            "streams": ["input_audio", "output_audio", "inner_monologue", "oracle"],
            "frames": [[f.input_audio, f.output_audio, f.inner_monologue, f.oracle] for f in self.frames],
            "oracle_annotations": [
                {"frame_index": a.frame_index, "seq": a.seq, "level": a.level} for a in self.oracle_annotations
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> TrainingSequence:
        period = int(data["frame_period_ms"])
        frames = tuple(
            FrameRecord(i, i * period, *(int(x) for x in row)) for i, row in enumerate(data["frames"])
        )
        annotations = tuple(
            OracleAnnotation(int(a["frame_index"]), int(a["seq"]), int(a["level"])) for a in data["oracle_annotations"]
        )
        return cls(str(data["session_id"]), period, frames, annotations)

    def stream(self, kind: StreamKind) -> list[TokenId]:
        return [f.slot(kind) for f in self.frames]


def monologue_layout(session: AlignedSession, tokenizer: WordTokenizer, frame_period_ms: int) -> dict[int, TokenId]:
    """Frame -> token for the System turns' words.

    Each word starts at its aligned start frame, or right after the previous
    word's last token if that one spilled past it.
    """
    layout: dict[int, TokenId] = {}
    cursor = 0
    for turn in session.turns:
        if turn.speaker is not Speaker.SYSTEM:
            continue
        for w in turn.words:
            f = max(frame_of(w.start_ms, frame_period_ms), cursor)
            for tok in tokenizer.encode(w.text):
                layout[f] = tok
                f += 1
            cursor = f
    return layout


def build_training_sequence(
    session: AlignedSession,
    schedule: Sequence[ScheduledOracle],
    cfg: TandemConfig,
    tokenizer: WordTokenizer,
    seed: int | None = None,
) -> TrainingSequence:
    """Lay out one session as frame-aligned training streams.

    Oracle arrival times are the schedule's emit times plus per-entry jitter
    drawn from a seed derived from ``seed`` (default ``cfg.rng_seed``) and the
    session id, so the result does not depend on processing order.
    """
    for entry in schedule:
        if entry.session_id != session.session_id:
            raise ValidationError(
                f"schedule entry for {entry.session_id!r} given with session {session.session_id!r}"
            )
    period = cfg.frame_period_ms
    global_seed = cfg.rng_seed if seed is None else seed
    jittered = apply_jitter(
        [(s.emit_time_ms, s) for s in schedule], cfg.jitter_max_ms, derive_seed(global_seed, session.session_id, "jitter")
    )
    levels = {s.seq: s.oracle.level for s in schedule}
    by_frame: dict[int, list[OracleMessage]] = {}
    for t, s in jittered:
        msg = OracleMessage(s.seq, s.oracle.text, s.emit_time_ms, t, s.oracle.ratio.n, s.oracle.level)
        by_frame.setdefault(arrival_frame(t, period), []).append(msg)

    mono = monologue_layout(session, tokenizer, period)
    user_frames = speech_frames(session, Speaker.USER, period)
    system_frames = speech_frames(session, Speaker.SYSTEM, period)
    n_min = max(
        frame_of(session.end_ms, period) + 1,
        max(by_frame, default=-1) + 1,
        max(mono, default=-1) + 1,
    )

    lane = OracleLane(tokenizer, cfg)
    frames = []
    f = 0
    while f < n_min or lane.busy:
        oracle = lane.tick(f, by_frame.get(f, ()))
        if f in user_frames:
            inp = placeholder_audio_token(session.session_id, f, StreamKind.INPUT_AUDIO)
        else:
            inp = cfg.silence_token
        if f in system_frames:
            out = placeholder_audio_token(session.session_id, f, StreamKind.OUTPUT_AUDIO)
        else:
            out = cfg.silence_token
        frames.append(FrameRecord(f, f * period, inp, out, mono.get(f, cfg.pad_token), oracle))
        f += 1

    annotations = tuple(
        OracleAnnotation(e.time_ms // period, e.seq, levels[e.seq])
        for e in lane.events
        if e.kind is EventKind.EMISSION_START
    )
    return TrainingSequence(session.session_id, period, tuple(frames), annotations)


def write_training_sequences(sequences: Iterable[TrainingSequence], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for seq in sequences:
            fh.write(seq.to_json() + "\n")


def read_training_sequences(path: str | Path) -> list[TrainingSequence]:
    with open(path, encoding="utf-8") as fh:
        return [TrainingSequence.from_dict(json.loads(line)) for line in fh if line.strip()]


def read_schedules(path: str | Path) -> dict[str, list[ScheduledOracle]]:
    out: dict[str, list[ScheduledOracle]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                entry = ScheduledOracle.from_dict(json.loads(line))
                out.setdefault(entry.session_id, []).append(entry)
    return out


# ---------------------------------------------------------------------------
# Corpus validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CorpusFailure:
    line: int
    session_id: str | None
    message: str


@dataclass
class CorpusReport:
    n_sessions: int = 0
    failures: list[CorpusFailure] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        lines = [f"{self.n_sessions} sessions, {len(self.failures)} failures"]
        for fail in self.failures:
            who = f" ({fail.session_id})" if fail.session_id else ""
            lines.append(f"line {fail.line}{who}: {fail.message}")
        return "\n".join(lines)


def validate_corpus(path: str | Path) -> CorpusReport:
    report = CorpusReport()
    for lineno, item in iter_corpus_lines(path):
        report.n_sessions += 1
        if isinstance(item, Exception):
            report.failures.append(CorpusFailure(lineno, None, f"malformed record: {item}"))
            continue
        problems = item.problems()
        if problems:
            report.failures.append(CorpusFailure(lineno, item.session_id, "; ".join(problems)))
    return report


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------

QA_BANK: tuple[tuple[str, str], ...] = (
    (
        "Who was Japan's most famous general in the battle that decided the Tokugawa shogunate?",
        "It's the Battle of Sekigahara in 1600, where Tokugawa Ieyasu defeated the western coalition.",
    ),
    (
        "What is the boiling point of water at sea level in degrees Celsius?",
        "Water boils at one hundred degrees Celsius at standard sea level pressure.",
    ),
    (
        "How many planets are there in our solar system right now?",
        "There are eight planets, since Pluto was reclassified as a dwarf planet in 2006.",
    ),
    (
        "Which gas do plants take in from the air to perform photosynthesis?",
        "Plants absorb carbon dioxide and use sunlight to turn it into sugar and oxygen.",
    ),
    (
        "What is the capital city of Australia, since people often get it wrong?",
        "The capital is Canberra, not Sydney, chosen as a compromise between Sydney and Melbourne.",
    ),
    (
        "If a train travels sixty miles in one hour, how far does it go in three hours?",
        "At sixty miles per hour for three hours, the train covers one hundred eighty miles.",
    ),
    (
        "Who wrote the novel Pride and Prejudice?",
        "Pride and Prejudice was written by Jane Austen and published in 1813.",
    ),
    (
        "What is the largest organ of the human body?",
        "The skin is the largest organ, covering roughly two square meters in adults.",
    ),
    (
        "Why does the moon look different throughout the month?",
        "The phases happen because we see different portions of the sunlit half as the moon orbits Earth.",
    ),
    (
        "What is the main difference between weather and climate?",
        "Weather is short term conditions, while climate is the long term average over decades.",
    ),
    (
        "Which element has the chemical symbol Fe on the periodic table?",
        "Fe is iron, from the Latin word ferrum.",
    ),
    (
        "What does inflation mean for the value of money in a savings account?",
        "Inflation reduces purchasing power, so money in savings buys less unless interest keeps up.",
    ),
    (
        "How many sides does a hexagon have, and what about an octagon?",
        "A hexagon has six sides and an octagon has eight sides.",
    ),
    (
        "Who painted the ceiling of the Sistine Chapel in Rome?",
        "Michelangelo painted the Sistine Chapel ceiling between 1508 and 1512.",
    ),
    (
        "What causes the seasons on Earth, is it the distance from the sun?",
        "No, the seasons come from the tilt of Earth's axis, not from the distance to the sun.",
    ),
    (
        "What is twelve multiplied by fifteen?",
        "Twelve times fifteen is one hundred eighty.",
    ),
    (
        "In economics, what does the law of supply and demand say about prices?",
        "When demand rises faster than supply prices go up, and when supply exceeds demand prices fall.",
    ),
    (
        "Which philosopher wrote The Republic and taught at the Academy in Athens?",
        "That was Plato, a student of Socrates and the teacher of Aristotle.",
    ),
    (
        "What is the speed of light in a vacuum, roughly?",
        "Light travels at about three hundred thousand kilometers per second in a vacuum.",
    ),
    (
        "Why do we have leap years every four years?",
        "A year is about 365 and a quarter days, so an extra day every four years keeps the calendar aligned.",
    ),
    (
        "What was the main cause of the fall of the Western Roman Empire?",
        "Historians point to several causes, including economic decline, overreliance on mercenaries, and invasions.",
    ),
    (
        "Which organ in the human body produces insulin?",
        "Insulin is produced by the beta cells of the pancreas.",
    ),
    (
        "What is the difference between a virus and a bacterium?",
        "Bacteria are living single cells that can reproduce alone, while viruses need a host cell to replicate.",
    ),
    (
        "Who developed the theory of general relativity?",
        "Albert Einstein published the theory of general relativity in 1915.",
    ),
)

_LEAD_INS = ("", "", "Hey, quick question.", "I was wondering,", "Okay so", "Can you tell me,", "Um, so")
_OPENERS = ("", "", "Sure.", "Good question.", "Okay.", "Right, so")


def _timed_words(text: str, start_ms: int, rng: random.Random) -> tuple[list[Word], int]:
    words = []
    t = start_ms
    for token in text.split():
        dur = 150 + 40 * len(token) + rng.randint(-40, 60)
        words.append(Word(token, t, t + dur))
        t += dur + rng.randint(20, 90)
    return words, words[-1].end_ms


def generate_corpus(count: int = 200, seed: int = 0, max_pairs: int = 2) -> list[AlignedSession]:
    """Synthetic Q&A sessions with plausible word timings.

    Each session holds one to ``max_pairs`` question/answer pairs drawn from
    :data:`QA_BANK`, with optional conversational lead-ins and openers.
    """
    rng = random.Random(seed)
    sessions = []
    for i in range(count):
        turns: list[Turn] = []
        t = rng.randint(200, 600)
        for q, a in rng.sample(QA_BANK, rng.randint(1, max_pairs)):
            question = f"{rng.choice(_LEAD_INS)} {q}".strip()
            answer = f"{rng.choice(_OPENERS)} {a}".strip()
            words, end = _timed_words(question, t, rng)
            turns.append(Turn.from_words(Speaker.USER, words))
            words, end = _timed_words(answer, end + rng.randint(300, 700), rng)
            turns.append(Turn.from_words(Speaker.SYSTEM, words))
            t = end + rng.randint(1500, 2500)
        sessions.append(AlignedSession(f"syn-{seed}-{i:05d}", tuple(turns)).validate())
    return sessions
