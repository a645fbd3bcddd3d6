from __future__ import annotations

import random
import statistics
from collections import defaultdict

import pytest

from tandem.backend import OracleChannel, OracleMessage
from tandem.core import AUDIO_BASE, StreamKind, TandemConfig, WordTokenizer, arrival_frame, frame_of
from tandem.orchestrator import (
    EventKind,
    OracleLane,
    OracleQueueState,
    ProtocolError,
    SessionAborted,
    StepOutput,
    StubFrontEnd,
    WallClock,
    apply_jitter,
    feed_channel,
    merge_oracle,
    run_live,
    run_session,
)
from tandem.traces import read_binary_traces, read_traces, write_binary_traces, write_traces

from .helpers import random_session
from .oracles import recency_slots

CFG = TandemConfig()
TOK = WordTokenizer.from_texts(["alpha beta gamma delta epsilon zeta eta theta iota kappa lambda mu", "It's the Battle of Sekigahara."])
PAD, BND, SIL = CFG.pad_token, CFG.boundary_token, CFG.silence_token


def msg(seq: int, arrived: int, text: str = "alpha beta", issued: int | None = None) -> OracleMessage:
    return OracleMessage(seq, text, arrived if issued is None else issued, arrived, 0)


def drive_lane(messages, n_frames, cfg=CFG):
    lane = OracleLane(TOK, cfg)
    by_frame = defaultdict(list)
    for m in sorted(messages, key=lambda m: (m.arrived_at_ms, m.seq)):
        by_frame[arrival_frame(m.arrived_at_ms, cfg.frame_period_ms)].append(m)
    return [lane.tick(f, by_frame[f]) for f in range(n_frames)], lane


class TestMerge:
    def test_newer_replaces_active(self):
        s = merge_oracle(OracleQueueState(), msg(1, 0, "alpha beta gamma"), TOK, BND)
        assert s.active.remaining == (BND, *TOK.encode("alpha beta gamma"))
        s = merge_oracle(s, msg(2, 100, "delta"), TOK, BND)
        assert s.active.seq == 2 and s.active.remaining == (BND, *TOK.encode("delta"))
        assert s.latest_arrived_seq == 2

    def test_duplicate_seq_raises(self):
        s = merge_oracle(OracleQueueState(), msg(1, 0), TOK, BND)
        with pytest.raises(ProtocolError):
            merge_oracle(s, msg(1, 50), TOK, BND)

    def test_stale_dropped_while_idle(self):
        slots, lane = drive_lane([msg(2, 0, "alpha"), msg(1, 400, "beta gamma")], 12)
        assert slots[:2] == [BND, TOK.encode("alpha")[0]]
        assert all(s == PAD for s in slots[2:])
        assert any(e.kind is EventKind.ORACLE_SUPERSEDED and e.seq == 1 for e in lane.events)

    def test_state_is_immutable(self):
        s0 = OracleQueueState()
        merge_oracle(s0, msg(1, 0), TOK, BND)
        assert s0 == OracleQueueState()


class TestRecency:
    def test_hand_built_fixture(self):
        # seq 1 lands mid-frame 3 (250 ms) and starts at frame 4; seq 2 lands at
        # 400 ms (frame 5 exactly) and cuts it off right after its boundary,
        # which seq 2 reuses.
        messages = [msg(1, 250, "alpha beta gamma"), msg(2, 400, "delta epsilon")]
        slots, _ = drive_lane(messages, 30)
        d, e = TOK.encode("delta epsilon")
        assert slots == [PAD] * 4 + [BND, d, e] + [PAD] * 23

    def test_preempt_after_content_repeats_boundary(self):
        messages = [msg(1, 250, "alpha beta gamma"), msg(2, 480, "delta")]
        slots, _ = drive_lane(messages, 10)
        a, d = TOK.encode("alpha")[0], TOK.encode("delta")[0]
        assert slots == [PAD] * 4 + [BND, a, BND, d] + [PAD] * 2

    def test_randomized_against_reconstruction(self):
        rng = random.Random(7)
        vocab = TOK.encode("alpha beta gamma delta epsilon zeta eta theta")
        words = "alpha beta gamma delta epsilon zeta eta theta".split()
        assert len(vocab) == len(words)
        for trial in range(500):
            k = rng.randint(1, 8)
            arrivals = [rng.randint(0, 2000) for _ in range(k)]
            texts = [" ".join(rng.choices(words, k=rng.randint(1, 6))) for _ in range(k)]
            messages = [msg(i + 1, a, t) for i, (a, t) in enumerate(zip(arrivals, texts))]
            slots, lane = drive_lane(messages, 40)
            tokens_of = {m.seq: TOK.encode(m.text) for m in messages}
            assert slots == recency_slots(messages, tokens_of, 40, CFG.frame_period_ms, PAD, BND), trial

    def test_every_emission_starts_with_boundary(self):
        rng = random.Random(8)
        for _ in range(200):
            messages = [msg(i + 1, rng.randint(0, 1500), "alpha beta") for i in range(rng.randint(1, 6))]
            slots, lane = drive_lane(messages, 40)
            starts = [e.time_ms // CFG.frame_period_ms for e in lane.events if e.kind is EventKind.EMISSION_START]
            assert slots.count(BND) <= len(starts)
            for f in starts:
                assert slots[f] == BND or slots[f - 1] == BND
            for f, tok in enumerate(slots):
                if tok not in (PAD, BND):
                    assert slots[f - 1] != PAD
                if tok == BND and f > 0:
                    assert slots[f - 1] != BND

    def test_event_lifecycle(self):
        rng = random.Random(9)
        for _ in range(200):
            messages = [msg(i + 1, rng.randint(0, 1500), "alpha beta gamma") for i in range(rng.randint(1, 6))]
            _, lane = drive_lane(messages, 60)
            arrived = {e.seq for e in lane.events if e.kind is EventKind.ORACLE_ARRIVED}
            ended = {e.seq for e in lane.events if e.kind in (EventKind.EMISSION_END, EventKind.ORACLE_SUPERSEDED)}
            assert arrived == {m.seq for m in messages} == ended


class TestRunSession:
    def test_no_oracle_means_pad_and_silence(self, qa_session):
        trace = run_session(qa_session, CFG, StubFrontEnd(CFG), [], TOK)
        assert set(trace.stream(StreamKind.ORACLE)) == {PAD}
        assert set(trace.stream(StreamKind.OUTPUT_AUDIO)) == {SIL}
        assert len(trace.frames) == frame_of(qa_session.end_ms, 80) + 1

    def test_stub_says_oracle_one_frame_later(self, qa_session):
        text = "It's the Battle of Sekigahara."
        trace = run_session(qa_session, CFG, StubFrontEnd(CFG), [msg(1, 400, text)], TOK)
        mono = trace.stream(StreamKind.INNER_MONOLOGUE)
        audio = trace.stream(StreamKind.OUTPUT_AUDIO)
        ids = TOK.encode(text)
        # 400 ms is exactly frame 5: boundary there, first token at 6, said at 7.
        assert mono[7 : 7 + len(ids)] == ids
        assert audio[7 : 7 + len(ids)] == [AUDIO_BASE] * len(ids)
        assert audio[6] == SIL and mono[7 + len(ids)] == PAD

    def test_forced_delay_holds_speech(self, qa_session):
        cfg = CFG.replace(forced_delay_ms=800)
        messages = [msg(1, 100, "alpha beta"), msg(2, 400, "It's the Battle of Sekigahara.")]
        trace = run_session(qa_session, cfg, StubFrontEnd(cfg), messages, TOK)
        audio = trace.stream(StreamKind.OUTPUT_AUDIO)
        first = next(f for f, a in enumerate(audio) if a != SIL)
        assert first == frame_of(400 + 800, 80)
        spoken = [t for t in trace.stream(StreamKind.INNER_MONOLOGUE) if t != PAD]
        assert TOK.decode(spoken) == "It's the Battle of Sekigahara."
        assert any(e.kind is EventKind.FORCED_DELAY_END and e.time_ms == 1200 for e in trace.events)

    def test_forced_delay_invariant_random(self):
        rng = random.Random(10)
        for k in range(100):
            s = random_session(rng, f"f{k}", pairs=2)
            d = rng.choice([80, 300, 1000, 2500])
            cfg = CFG.replace(forced_delay_ms=d)
            messages = [msg(i + 1, t, "alpha beta gamma") for i, t in enumerate(sorted(rng.sample(range(0, s.end_ms), 4)))]
            trace = run_session(s, cfg, StubFrontEnd(cfg), messages, TOK)
            for turn in s.turns[::2]:
                for f in range(frame_of(turn.start_ms, 80), frame_of(turn.end_ms + d, 80)):
                    assert trace.frames[f].output_audio == SIL
                    assert trace.frames[f].inner_monologue == PAD
            assert [r.frame_index for r in trace.frames] == list(range(len(trace.frames)))
            assert all(r.wall_time_ms == r.frame_index * 80 for r in trace.frames)

    def test_session_aborted_keeps_prefix(self, qa_session):
        class Broken(StubFrontEnd):
            def step(self, input_audio, oracle_slot):
                if self.calls == 5:
                    raise RuntimeError("nan")
                self.calls += 1
                return super().step(input_audio, oracle_slot)

            def reset(self):
                super().reset()
                self.calls = 0

        with pytest.raises(SessionAborted) as err:
            run_session(qa_session, CFG, Broken(CFG), [], TOK)
        assert len(err.value.trace.frames) == 5

    def test_override_restores_token(self):
        stub = StubFrontEnd(CFG)
        stub.step(SIL, BND)
        stub.step(SIL, 42)
        out = stub.step(SIL, PAD)
        assert out == StepOutput(42, AUDIO_BASE)
        stub.override(StepOutput(PAD, SIL))
        assert stub.step(SIL, PAD) == StepOutput(42, AUDIO_BASE)


class TestJitter:
    def test_zero_is_identity(self):
        sched = [(0, "a"), (200, "b"), (200, "c")]
        assert apply_jitter(sched, 0, 1) == sched

    def test_reproducible(self):
        sched = [(t, t) for t in range(0, 4000, 200)]
        assert apply_jitter(sched, 150, 3) == apply_jitter(sched, 150, 3)
        assert apply_jitter(sched, 150, 3) != apply_jitter(sched, 150, 4)

    def test_mean_offset(self):
        n, jmax = 100_000, 40
        out = apply_jitter([(0, i) for i in range(n)], jmax, 5)
        mean = statistics.fmean(t for t, _ in out)
        assert abs(mean - jmax / 2) <= 0.02 * (jmax / 2)
        assert all(0 <= t <= jmax for t, _ in out)

    def test_unsorted_input_rejected(self):
        with pytest.raises(ValueError):
            apply_jitter([(200, "a"), (100, "b")], 10, 0)


def test_run_live_matches_virtual(qa_session):
    messages = [msg(1, 290, "alpha beta"), msg(2, 610, "It's the Battle of Sekigahara.")]
    expected = run_session(qa_session, CFG, StubFrontEnd(CFG), messages, TOK)
    channel = OracleChannel()
    clock = WallClock()
    feed_channel(messages, channel, clock)
    live = run_live(qa_session, CFG, StubFrontEnd(CFG), channel, TOK, clock)
    assert live.stream(StreamKind.ORACLE) == expected.stream(StreamKind.ORACLE)
    assert live.stream(StreamKind.INNER_MONOLOGUE) == expected.stream(StreamKind.INNER_MONOLOGUE)


class TestTraceFiles:
    def test_jsonl_round_trip(self, tmp_path, qa_session):
        trace = run_session(qa_session, CFG, StubFrontEnd(CFG), [msg(1, 250), msg(2, 400)], TOK)
        path = tmp_path / "t.jsonl"
        write_traces([trace, trace], path)
        assert read_traces(path) == [trace, trace]

    def test_binary_round_trip(self, tmp_path, qa_session):
        trace = run_session(qa_session, CFG, StubFrontEnd(CFG), [msg(1, 250)], TOK)
        path = tmp_path / "t.bin"
        write_binary_traces([trace], path)
        (back,) = read_binary_traces(path)
        assert back.frames == trace.frames
        assert (back.session_id, back.frame_period_ms, back.forced_delay_ms) == ("s0", 80, 0)
