"""Command-line entry point: ``tandem <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .chat import DEFAULT_API_KEY_ENV, ChatCompletionsClient
from .core import TandemConfig, WordTokenizer, dump_jsonl, load_corpus, save_corpus
from .dataset import build_training_sequence, generate_corpus, read_schedules, validate_corpus, write_training_sequences
from .harness import (
    HttpJudge,
    MockJudge,
    SweepReport,
    measure_latency,
    oracle_messages,
    plot_series,
    run_sweep,
    simulated_schedule,
    write_latency_csv,
)
from .oracle_sim import HttpSimulator
from .orchestrator import StubFrontEnd, run_session
from .traces import read_binary_traces, read_traces, write_binary_traces, write_traces

logger = logging.getLogger("tandem")


def _load_config(args: argparse.Namespace) -> TandemConfig:
    cfg = TandemConfig.load(args.config) if args.config else TandemConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(rng_seed=args.seed)
    if getattr(args, "forced_delay_ms", None) is not None:
        cfg = cfg.replace(forced_delay_ms=args.forced_delay_ms)
    return cfg


def _chat_client(args: argparse.Namespace) -> ChatCompletionsClient:
    if not args.endpoint or not args.model:
        raise SystemExit("--endpoint and --model are required for http clients")
    return ChatCompletionsClient(args.endpoint, args.model, api_key_env=args.api_key_env)


def cmd_gen_corpus(args: argparse.Namespace) -> int:
    save_corpus(generate_corpus(args.count, args.seed), args.out)
    logger.info("wrote %d sessions to %s", args.count, args.out)
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    report = validate_corpus(args.corpus)
    print(report.summary())
    return 0 if report.ok else 1


def cmd_schedule(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    corpus = load_corpus(args.corpus)
    simulator = HttpSimulator(_chat_client(args)) if args.simulator == "http" else None
    records = []
    for session in corpus:
        records.extend(e.to_dict() for e in simulated_schedule(session, cfg, cfg.rng_seed, simulator))
    dump_jsonl(records, args.out)
    return 0


def cmd_augment(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    corpus = load_corpus(args.corpus)
    tokenizer = WordTokenizer.from_corpus(corpus)
    schedules = read_schedules(args.oracles)
    unknown = set(schedules) - {s.session_id for s in corpus}
    if unknown:
        raise SystemExit(f"oracle file names sessions missing from the corpus: {sorted(unknown)[:5]}")
    write_training_sequences(
        (build_training_sequence(s, schedules.get(s.session_id, []), cfg, tokenizer) for s in corpus), args.out
    )
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    corpus = load_corpus(args.corpus)
    tokenizer = WordTokenizer.from_corpus(corpus)
    schedules = read_schedules(args.oracles) if args.oracles else {}
    traces = []
    for session in corpus:
        schedule = schedules.get(session.session_id, []) if args.oracles else None
        messages = oracle_messages(session, cfg, cfg.rng_seed, schedule=schedule, source=args.source)
        traces.append(run_session(session, cfg, StubFrontEnd(cfg), messages, tokenizer))
    if args.binary:
        write_binary_traces(traces, args.trace_out)
    else:
        write_traces(traces, args.trace_out)
    return 0


def cmd_latency(args: argparse.Namespace) -> int:
    corpus = {s.session_id: s for s in load_corpus(args.corpus)}
    path = Path(args.trace)
    traces = read_binary_traces(path) if path.read_bytes()[:8] == b"TNDMTRC1" else read_traces(path)
    records = []
    for trace in traces:
        if trace.session_id not in corpus:
            raise SystemExit(f"trace session {trace.session_id!r} not in corpus")
        records.extend(measure_latency(trace, corpus[trace.session_id]))
    write_latency_csv(records, args.out)
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    corpus = load_corpus(args.corpus)
    tokenizer = WordTokenizer.from_corpus(corpus)
    delays = [int(d) for d in args.delays.split(",") if d.strip()]
    judge = None
    if args.judge == "mock":
        judge = MockJudge(tokenizer)
    elif args.judge == "http":
        judge = HttpJudge(_chat_client(args))
    report = run_sweep(corpus, cfg, delays, tokenizer, judge=judge)
    Path(args.out).write_text(report.to_json(), encoding="utf-8")
    return 0


def cmd_plot_data(args: argparse.Namespace) -> int:
    report = SweepReport.from_dict(json.loads(Path(args.report).read_text(encoding="utf-8")))
    rows = plot_series(report)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["forced_delay_ms", "x_latency_s", "y_quality"])
        writer.writeheader()
        writer.writerows(rows)
    return 0


def _add_http(p: argparse.ArgumentParser) -> None:
    p.add_argument("--endpoint", help="chat-completions URL for http clients")
    p.add_argument("--model", help="model name for http clients")
    p.add_argument("--api-key-env", default=DEFAULT_API_KEY_ENV, help="environment variable holding the API key")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tandem", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="write a synthetic aligned Q&A corpus")
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("validate", help="check corpus invariants")
    p.add_argument("--corpus", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("schedule", help="generate simulated-oracle schedules")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--simulator", choices=["mock", "http"], default="mock")
    _add_http(p)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("augment", help="build four-stream training sequences")
    p.add_argument("--corpus", required=True)
    p.add_argument("--oracles", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("simulate", help="run the frame loop with the stub front-end")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config")
    p.add_argument("--trace-out", required=True)
    p.add_argument("--forced-delay-ms", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--oracles", help="replay this schedule file instead of generating one")
    p.add_argument("--source", choices=["replay", "backend"], default="replay")
    p.add_argument("--binary", action="store_true", help="write the fixed-width binary trace")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("latency", help="per-turn latencies from a trace file")
    p.add_argument("--trace", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_latency)

    p = sub.add_parser("sweep", help="forced-delay sweep report")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config")
    p.add_argument("--delays", default="0,250,500,1000,2000")
    p.add_argument("--out", required=True)
    p.add_argument("--judge", choices=["mock", "http"])
    p.add_argument("--seed", type=int)
    _add_http(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plot-data", help="(latency, quality) series from a sweep report")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot_data)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
