"""Tandem front-end/back-end oracle streaming for full-duplex speech dialogue."""

from .core import AlignedSession, FrameRecord, StreamKind, TandemConfig, WordTokenizer, frame_of
from .orchestrator import StubFrontEnd, run_session

__all__ = [
    "AlignedSession",
    "FrameRecord",
    "StreamKind",
    "StubFrontEnd",
    "TandemConfig",
    "WordTokenizer",
    "frame_of",
    "run_session",
]
