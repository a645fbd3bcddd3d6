from __future__ import annotations

import random

from tandem.core import AlignedSession, Speaker, Turn, Word


def timed(texts: str, start: int, step: int = 100, dur: int | None = None) -> list[Word]:
    """Words back to back: word i spans [start + i*step, start + i*step + dur]."""
    dur = step if dur is None else dur
    return [Word(w, start + i * step, start + i * step + dur) for i, w in enumerate(texts.split())]


def make_session(*turn_words: list[Word], session_id: str = "s0") -> AlignedSession:
    speakers = (Speaker.USER, Speaker.SYSTEM)
    return AlignedSession(
        session_id, tuple(Turn.from_words(speakers[i % 2], ws) for i, ws in enumerate(turn_words))
    )


def random_session(rng: random.Random, session_id: str, pairs: int = 1) -> AlignedSession:
    vocab = "alpha beta gamma delta epsilon zeta eta theta iota kappa lambda mu".split()
    turns = []
    t = rng.randint(0, 500)
    for _ in range(pairs):
        for speaker in (Speaker.USER, Speaker.SYSTEM):
            words = []
            for _ in range(rng.randint(1, 12)):
                dur = rng.randint(40, 500)
                words.append(Word(rng.choice(vocab), t, t + dur))
                t += dur + rng.randint(0, 120)
            turns.append(Turn.from_words(speaker, words))
            t += rng.randint(100, 900)
    return AlignedSession(session_id, tuple(turns))
