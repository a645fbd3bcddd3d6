"""Shared domain types: tokens, streams, frames, aligned sessions, configuration.

Everything here is an immutable value type. Times are integer milliseconds on
the session clock; frames are ticks of the front-end clock.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence

logger = logging.getLogger(__name__)

TokenId = int

PAD_TOKEN: TokenId = 0
BOUNDARY_TOKEN: TokenId = 1
SILENCE_TOKEN: TokenId = 2
RESERVED_TOKENS: tuple[TokenId, ...] = (PAD_TOKEN, BOUNDARY_TOKEN, SILENCE_TOKEN)

# Opaque audio ids live in [AUDIO_BASE, AUDIO_BASE + AUDIO_VOCAB_SIZE).
AUDIO_BASE = len(RESERVED_TOKENS)
AUDIO_VOCAB_SIZE = 2048


class StreamKind(enum.Enum):
    INPUT_AUDIO = "input_audio"
    OUTPUT_AUDIO = "output_audio"
    INNER_MONOLOGUE = "inner_monologue"
    ORACLE = "oracle"


class Speaker(str, enum.Enum):
    USER = "User"
    SYSTEM = "System"


def frame_of(time_ms: int, frame_period_ms: int) -> int:
    """Index of the frame containing ``time_ms``.

    A time exactly on a frame boundary belongs to the later frame.
    """
    if time_ms < 0:
        raise ValueError(f"time_ms must be non-negative, got {time_ms}")
    if frame_period_ms <= 0:
        raise ValueError(f"frame_period_ms must be positive, got {frame_period_ms}")
    return time_ms // frame_period_ms


def arrival_frame(time_ms: int, frame_period_ms: int) -> int:
    """First frame whose start is at or after ``time_ms``.

    Something that shows up mid-frame can only influence the next tick: the
    token for the current frame has already been consumed.
    """
    if time_ms < 0:
        raise ValueError(f"time_ms must be non-negative, got {time_ms}")
    if frame_period_ms <= 0:
        raise ValueError(f"frame_period_ms must be positive, got {frame_period_ms}")
    return -(-time_ms // frame_period_ms)


def snapshot_times(turn: Turn, cycle_ms: int) -> list[int]:
    """Times at which a streaming recognizer reports on ``turn``.

    One tick every ``cycle_ms`` after the first word starts, for ticks that fall
    strictly before the last word ends, then one final report at that end.
    """
    if cycle_ms <= 0:
        raise ValueError("cycle_ms must be positive")
    start, end = turn.start_ms, turn.end_ms
    times = list(range(start + cycle_ms, end, cycle_ms))
    times.append(end)
    return times


def words_heard(turn: Turn, time_ms: int) -> int:
    """Number of words in ``turn`` fully uttered by ``time_ms``."""
    return sum(1 for w in turn.words if w.end_ms <= time_ms)


def stable_hash64(*parts: object) -> int:
    """Process-independent 64-bit hash (``hash()`` is salted per interpreter)."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(repr(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "big")


def derive_seed(global_seed: int, session_id: str, label: str = "") -> int:
    """Per-session seed so that sessions can be processed in any order."""
    return (global_seed ^ stable_hash64(session_id, label)) & 0xFFFF_FFFF_FFFF_FFFF


def placeholder_audio_token(session_id: str, frame_index: int, stream: StreamKind) -> TokenId:
    """Synthetic audio id standing in for a codec token at a speech frame."""
    return AUDIO_BASE + stable_hash64(session_id, frame_index, stream.value) % AUDIO_VOCAB_SIZE


@dataclass(frozen=True, slots=True)
class FrameRecord:
    """One front-end clock tick carrying one token per stream."""

    frame_index: int
    wall_time_ms: int
    input_audio: TokenId
    output_audio: TokenId
    inner_monologue: TokenId
    oracle: TokenId

    @property
    def slots(self) -> dict[StreamKind, TokenId]:
        return {
            StreamKind.INPUT_AUDIO: self.input_audio,
            StreamKind.OUTPUT_AUDIO: self.output_audio,
            StreamKind.INNER_MONOLOGUE: self.inner_monologue,
            StreamKind.ORACLE: self.oracle,
        }

    def slot(self, kind: StreamKind) -> TokenId:
        return self.slots[kind]

    def to_dict(self) -> dict[str, int]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> FrameRecord:
        return cls(**{f.name: int(data[f.name]) for f in fields(cls)})


# ---------------------------------------------------------------------------
# Aligned sessions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Word:
    text: str
    start_ms: int
    end_ms: int


@dataclass(frozen=True, slots=True)
class Turn:
    speaker: Speaker
    words: tuple[Word, ...]
    transcript: str

    @classmethod
    def from_words(cls, speaker: Speaker, words: Iterable[Word]) -> Turn:
        words = tuple(words)
        return cls(speaker, words, " ".join(w.text for w in words))

    @property
    def start_ms(self) -> int:
        return self.words[0].start_ms

    @property
    def end_ms(self) -> int:
        return self.words[-1].end_ms


@dataclass(frozen=True, slots=True)
class AlignedSession:
    """A two-party dialogue with per-word timestamps."""

    session_id: str
    turns: tuple[Turn, ...]

    @property
    def end_ms(self) -> int:
        return max((t.end_ms for t in self.turns if t.words), default=0)

    def response_to(self, turn_index: int) -> Turn | None:
        """The System turn answering the User turn at ``turn_index``, if any."""
        nxt = turn_index + 1
        if nxt < len(self.turns) and self.turns[nxt].speaker is Speaker.SYSTEM:
            return self.turns[nxt]
        return None

    def user_turn_indices(self) -> list[int]:
        return [i for i, t in enumerate(self.turns) if t.speaker is Speaker.USER]

    def problems(self) -> list[str]:
        """Invariant violations, one human-readable string each. Empty means valid."""
        out: list[str] = []
        if not self.session_id:
            out.append("session_id is empty")
        prev_end: int | None = None
        for i, turn in enumerate(self.turns):
            expected = Speaker.USER if i % 2 == 0 else Speaker.SYSTEM
            if turn.speaker is not expected:
                out.append(f"turn {i}: speaker {turn.speaker.value}, expected {expected.value}")
            if not turn.words:
                out.append(f"turn {i}: no words")
                continue
            for j, w in enumerate(turn.words):
                if not w.text or any(c.isspace() for c in w.text):
                    out.append(f"turn {i} word {j}: text {w.text!r} is empty or contains whitespace")
                if w.start_ms < 0 or w.end_ms < w.start_ms:
                    out.append(f"turn {i} word {j}: bad interval [{w.start_ms}, {w.end_ms}]")
                if j and w.start_ms < turn.words[j - 1].end_ms:
                    out.append(
                        f"turn {i} word {j}: starts at {w.start_ms} before previous word ends "
                        f"at {turn.words[j - 1].end_ms}"
                    )
            joined = " ".join(w.text for w in turn.words)
            if turn.transcript != joined:
                out.append(f"turn {i}: transcript does not equal the joined words")
            if prev_end is not None and turn.start_ms < prev_end:
                out.append(f"turn {i}: starts at {turn.start_ms} before previous turn ends at {prev_end}")
            prev_end = turn.end_ms
        return out

    def validate(self) -> AlignedSession:
        problems = self.problems()
        if problems:
            raise ValueError(f"session {self.session_id!r}: " + "; ".join(problems))
        return self

    def to_dict(self) -> dict[str, Any]:
        return {
            "session_id": self.session_id,
            "turns": [
                {
                    "speaker": t.speaker.value,
                    "words": [asdict(w) for w in t.words],
                    "transcript": t.transcript,
                }
                for t in self.turns
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> AlignedSession:
        """Structural parse only; call :meth:`problems` for invariants."""
        turns = []
        for t in data["turns"]:
            words = tuple(Word(str(w["text"]), int(w["start_ms"]), int(w["end_ms"])) for w in t["words"])
            turns.append(Turn(Speaker(t["speaker"]), words, str(t["transcript"])))
        return cls(str(data["session_id"]), tuple(turns))


def iter_corpus_lines(path: str | Path) -> Iterator[tuple[int, AlignedSession | Exception]]:
    """Yield ``(line_number, session_or_parse_error)`` for each non-blank line."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, AlignedSession.from_dict(json.loads(line))
            except (ValueError, KeyError, TypeError) as exc:
                yield lineno, exc


def speech_frames(session: AlignedSession, speaker: Speaker, frame_period_ms: int) -> set[int]:
    """Frames overlapping any word spoken by ``speaker``."""
    out: set[int] = set()
    for turn in session.turns:
        if turn.speaker is not speaker:
            continue
        for w in turn.words:
            last = max(w.start_ms, w.end_ms - 1)
            out.update(range(frame_of(w.start_ms, frame_period_ms), frame_of(last, frame_period_ms) + 1))
    return out


def load_corpus(path: str | Path) -> list[AlignedSession]:
    sessions = []
    for lineno, item in iter_corpus_lines(path):
        if isinstance(item, Exception):
            raise ValueError(f"{path}:{lineno}: {item}") from item
        sessions.append(item.validate())
    return sessions


def dump_jsonl(records: Iterable[Mapping[str, Any]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, separators=(",", ":")) + "\n")


def save_corpus(sessions: Iterable[AlignedSession], path: str | Path) -> None:
    dump_jsonl((s.to_dict() for s in sessions), path)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TandemConfig:
    """Timing parameters shared by the front-end loop, relay and augmentation."""

    frame_period_ms: int = 80
    backend_cycle_ms: int = 200
    jitter_max_ms: int = 40
    backend_latency_ms: int = 120
    forced_delay_ms: int = 0
    boundary_token: TokenId = BOUNDARY_TOKEN
    pad_token: TokenId = PAD_TOKEN
    silence_token: TokenId = SILENCE_TOKEN
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.frame_period_ms <= 0:
            raise ValueError("frame_period_ms must be positive")
        if not 100 <= self.backend_cycle_ms <= 500:
            raise ValueError(f"backend_cycle_ms must lie in [100, 500], got {self.backend_cycle_ms}")
        if self.backend_cycle_ms < self.frame_period_ms:
            raise ValueError("backend_cycle_ms must be >= frame_period_ms")
        for name in ("jitter_max_ms", "backend_latency_ms", "forced_delay_ms"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        reserved = {self.boundary_token, self.pad_token, self.silence_token}
        if len(reserved) != 3:
            raise ValueError("boundary, pad and silence tokens must be pairwise distinct")
        if not reserved <= set(RESERVED_TOKENS):
            raise ValueError(f"special tokens must be drawn from the reserved ids {RESERVED_TOKENS}")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must be a 64-bit unsigned integer")

    def replace(self, **changes: Any) -> TandemConfig:
        return TandemConfig(**{**self.to_dict(), **changes})

    def to_dict(self) -> dict[str, int]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> TandemConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: int(v) for k, v in data.items()})

    @classmethod
    def load(cls, path: str | Path) -> TandemConfig:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

_SPACE_MARK = "▁"
_PRINTABLE_ASCII = frozenset(chr(c) for c in range(0x21, 0x7F))


class TokenizationError(ValueError):
    """Raised for a character the tokenizer cannot encode."""

    def __init__(self, text: str, position: int):
        self.position = position
        self.char = text[position]
        super().__init__(f"cannot encode character {self.char!r} at position {position}")


@dataclass(frozen=True)
class WordTokenizer:
    """Deterministic word-level tokenizer with a character fallback.

    Ids 0..2 are reserved (pad, boundary, silence). Known words map to a single
    id; unknown words are spelled with character pieces, the first of which
    carries the word-start mark. Whitespace is normalized to single spaces.
    """

    words: tuple[str, ...]
    alphabet: tuple[str, ...]
    _word_ids: dict[str, int] = field(init=False, repr=False, compare=False)
    _char_ids: dict[tuple[str, bool], int] = field(init=False, repr=False, compare=False)
    _pieces: tuple[str, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if len(set(self.words)) != len(self.words):
            raise ValueError("duplicate vocabulary words")
        for w in self.words:
            if not w or any(c.isspace() or c == _SPACE_MARK for c in w):
                raise ValueError(f"invalid vocabulary word {w!r}")
        base = len(RESERVED_TOKENS)
        pieces = ["<pad>", "<boundary>", "<silence>"]
        word_ids = {}
        for i, w in enumerate(self.words):
            word_ids[w] = base + i
            pieces.append(_SPACE_MARK + w)
        char_ids = {}
        for c in self.alphabet:
            char_ids[(c, True)] = len(pieces)
            pieces.append(_SPACE_MARK + c)
            char_ids[(c, False)] = len(pieces)
            pieces.append(c)
        object.__setattr__(self, "_word_ids", word_ids)
        object.__setattr__(self, "_char_ids", char_ids)
        object.__setattr__(self, "_pieces", tuple(pieces))

    @classmethod
    def from_texts(cls, texts: Iterable[str], extra_words: Iterable[str] = ()) -> WordTokenizer:
        vocab: set[str] = set(extra_words)
        chars = set(_PRINTABLE_ASCII)
        for text in texts:
            for w in text.split():
                vocab.add(w)
                chars.update(w)
        chars.discard(_SPACE_MARK)
        vocab = {w for w in vocab if _SPACE_MARK not in w}
        return cls(tuple(sorted(vocab)), tuple(sorted(chars)))

    @classmethod
    def from_corpus(cls, sessions: Iterable[AlignedSession], extra_words: Iterable[str] = ()) -> WordTokenizer:
        return cls.from_texts((t.transcript for s in sessions for t in s.turns), extra_words)

    def __len__(self) -> int:
        return len(self._pieces)

    @property
    def reserved(self) -> frozenset[TokenId]:
        return frozenset(RESERVED_TOKENS)

    def encode(self, text: str) -> list[TokenId]:
        ids: list[TokenId] = []
        pos = 0
        for word in text.split():
            pos = text.index(word, pos)
            wid = self._word_ids.get(word)
            if wid is not None:
                ids.append(wid)
            else:
                for k, c in enumerate(word):
                    cid = self._char_ids.get((c, k == 0))
                    if cid is None:
                        raise TokenizationError(text, pos + k)
                    ids.append(cid)
            pos += len(word)
        return ids

    def decode(self, ids: Iterable[TokenId], skip_reserved: bool = True) -> str:
        out = []
        for i in ids:
            if not 0 <= i < len(self._pieces):
                raise ValueError(f"token id {i} outside vocabulary of size {len(self)}")
            if i in RESERVED_TOKENS:
                if skip_reserved:
                    continue
                raise ValueError(f"reserved token {i} has no surface form")
            out.append(self._pieces[i])
        return "".join(out).replace(_SPACE_MARK, " ").strip()

    def piece(self, token: TokenId) -> str:
        return self._pieces[token]


def tokenize(text: str, tokenizer: WordTokenizer) -> list[TokenId]:
    return tokenizer.encode(text)


def detokenize(ids: Sequence[TokenId], tokenizer: WordTokenizer) -> str:
    return tokenizer.decode(ids)
