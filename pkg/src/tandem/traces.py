"""Session trace files.

JSONL layout, repeated once per session::

    {"type": "session", "session_id": ..., "frame_period_ms": ..., "forced_delay_ms": ..., "n_frames": ...}
    {"type": "frame", "frame_index": ..., "wall_time_ms": ..., "input_audio": ..., "output_audio": ...,
     "inner_monologue": ..., "oracle": ...}          # n_frames lines
    {"type": "events", "events": [{"time_ms": ..., "kind": ..., "seq": ...}, ...]}

The binary layout keeps frames only, as little-endian fixed-width records::

    magic  b"TNDMTRC1"
    per session: u16 id_len, id bytes (utf-8), u32 frame_period_ms, u32 forced_delay_ms, u32 n_frames,
                 then n_frames x (u32 frame_index, u32 wall_time_ms, u32 input_audio,
                                  u32 output_audio, u32 inner_monologue, u32 oracle)
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Iterable, Iterator

from .core import FrameRecord
from .orchestrator import SessionTrace, TraceEvent

BINARY_MAGIC = b"TNDMTRC1"
_HEADER = struct.Struct("<III")
_FRAME = struct.Struct("<6I")


def _dumps(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def trace_lines(trace: SessionTrace) -> Iterator[str]:
    yield _dumps(
        {
            "type": "session",
            "session_id": trace.session_id,
            "frame_period_ms": trace.frame_period_ms,
            "forced_delay_ms": trace.forced_delay_ms,
            "n_frames": len(trace.frames),
        }
    )
    for frame in trace.frames:
        yield _dumps({"type": "frame", **frame.to_dict()})
    yield _dumps({"type": "events", "events": [e.to_dict() for e in trace.events]})


def write_traces(traces: Iterable[SessionTrace], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for trace in traces:
            for line in trace_lines(trace):
                fh.write(line + "\n")


def read_traces(path: str | Path) -> list[SessionTrace]:
    traces: list[SessionTrace] = []
    header: dict | None = None
    frames: list[FrameRecord] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            kind = rec.get("type")
            if kind == "session":
                if header is not None:
                    raise ValueError(f"{path}:{lineno}: session header before previous events line")
                header, frames = rec, []
            elif kind == "frame" and header is not None:
                frames.append(FrameRecord.from_dict(rec))
            elif kind == "events" and header is not None:
                if len(frames) != header["n_frames"]:
                    raise ValueError(f"{path}:{lineno}: expected {header['n_frames']} frames, got {len(frames)}")
                traces.append(
                    SessionTrace(
                        header["session_id"],
                        int(header["frame_period_ms"]),
                        int(header["forced_delay_ms"]),
                        tuple(frames),
                        tuple(TraceEvent.from_dict(e) for e in rec["events"]),
                    )
                )
                header = None
            else:
                raise ValueError(f"{path}:{lineno}: unexpected record type {kind!r}")
    if header is not None:
        raise ValueError(f"{path}: truncated trace for session {header['session_id']!r}")
    return traces


def write_binary_traces(traces: Iterable[SessionTrace], path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        for trace in traces:
            sid = trace.session_id.encode("utf-8")
            fh.write(struct.pack("<H", len(sid)) + sid)
            fh.write(_HEADER.pack(trace.frame_period_ms, trace.forced_delay_ms, len(trace.frames)))
            for fr in trace.frames:
                fh.write(
                    _FRAME.pack(
                        fr.frame_index, fr.wall_time_ms, fr.input_audio, fr.output_audio, fr.inner_monologue, fr.oracle
                    )
                )


def read_binary_traces(path: str | Path) -> list[SessionTrace]:
    data = Path(path).read_bytes()
    if not data.startswith(BINARY_MAGIC):
        raise ValueError(f"{path}: not a binary trace file")
    pos = len(BINARY_MAGIC)
    traces = []
    while pos < len(data):
        (n,) = struct.unpack_from("<H", data, pos)
        pos += 2
        sid = data[pos : pos + n].decode("utf-8")
        pos += n
        period, delay, n_frames = _HEADER.unpack_from(data, pos)
        pos += _HEADER.size
        frames = []
        for _ in range(n_frames):
            frames.append(FrameRecord(*_FRAME.unpack_from(data, pos)))
            pos += _FRAME.size
        traces.append(SessionTrace(sid, period, delay, tuple(frames)))
    return traces
