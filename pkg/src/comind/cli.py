"""Command-line entry points.

    comind solve "question" [--image PATH]... [--config FILE] [--workspace DIR]
    comind run --dataset FILE --method com|direct|cot --config FILE --out DIR [--workers N]
    comind stats DIR
    comind validate TRACE.jsonl

``solve`` exits 0 when an answer was produced, 2 when the episode ended
unanswered, 3 on a fatal backend failure.  ``validate`` exits 1 when the
trace violates the protocol grammar.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .backend import OpenAICompatBackend, OpenAICompatImageBackend
from .config import RunConfig, load_config
from .engine import BackendSet, EpisodeConfig, run_episode
from .harness import RunReport, invocation_stats, load_dataset, run_method
from .protocol import read_trace_file, validate_trace
from .sandbox import SubprocessSandbox

EXIT_ANSWERED = 0
EXIT_UNANSWERED = 2
EXIT_FATAL = 3


def build_backends(config: RunConfig) -> BackendSet:
    chat = OpenAICompatBackend(
        endpoint=config.endpoint,
        model=config.model,
        api_key_env=config.api_key_env,
        retries=config.retries,
    )
    image = OpenAICompatImageBackend(
        endpoint=config.image_endpoint,
        model=config.image_model,
        api_key_env=config.api_key_env,
        retries=config.retries,
    )
    return BackendSet.single(chat, image)


def build_sandbox(config: RunConfig) -> SubprocessSandbox:
    return SubprocessSandbox(config.sandbox_command)


def _load_config_arg(path: str | None) -> RunConfig:
    return load_config(path) if path else RunConfig()


def cmd_solve(args: argparse.Namespace) -> int:
    config = _load_config_arg(args.config)
    backends = build_backends(config)
    sandbox = build_sandbox(config)
    workspace = Path(args.workspace or Path(config.workspace_root) / time.strftime("solve-%Y%m%d-%H%M%S"))
    images = [Path(p).read_bytes() for p in args.image]
    result = run_episode(
        args.question,
        images,
        EpisodeConfig.from_run_config(config),
        backends,
        sandbox,
        workspace,
    )
    if result.fatal:
        print(f"fatal: {result.fatal}", file=sys.stderr)
        return EXIT_FATAL
    if result.answer is None:
        print("no answer produced", file=sys.stderr)
        print(f"trace: {workspace / 'trace.jsonl'}", file=sys.stderr)
        return EXIT_UNANSWERED
    print(result.answer)
    print(
        f"[{result.wall_time_ms} ms, {result.usage.total} tokens, "
        f"calls: {sum(result.invocations.values())}, trace: {workspace / 'trace.jsonl'}]",
        file=sys.stderr,
    )
    return EXIT_ANSWERED


def cmd_run(args: argparse.Namespace) -> int:
    config = _load_config_arg(args.config)
    if args.workers:
        config.workers = args.workers
    dataset = load_dataset(args.dataset)
    backends = build_backends(config)
    sandbox = build_sandbox(config) if args.method == "com" else None
    report = run_method(
        args.method,
        dataset,
        config,
        backends,
        args.out,
        sandbox=sandbox,
        workers=config.workers,
    )
    print(json.dumps(report.aggregates, indent=2))
    print(f"report: {Path(args.out) / 'report.json'}", file=sys.stderr)
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    root = Path(args.dir)
    trace_paths = sorted(root.rglob("trace.jsonl"))
    if not trace_paths:
        print(f"no trace.jsonl files under {root}", file=sys.stderr)
        return 1
    traces = [read_trace_file(p)[0] for p in trace_paths]
    stats = invocation_stats(traces)
    report_path = root / "report.json"
    if report_path.exists():
        stats["aggregates"] = RunReport.read(report_path).aggregates
    print(json.dumps(stats, indent=2))
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    trace, header = read_trace_file(args.trace)
    violations = validate_trace(trace)
    print(f"question: {header.get('question', '')[:80]}")
    print(f"events: {len(trace.events)}, terminated: {trace.terminated}")
    if not violations:
        print("OK: no violations")
        return 0
    for violation in violations:
        print(f"VIOLATION {violation}")
    return 1


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="comind", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="answer one question through the engine")
    p_solve.add_argument("question")
    p_solve.add_argument("--image", action="append", default=[], help="input image path (repeatable)")
    p_solve.add_argument("--config", default=None)
    p_solve.add_argument("--workspace", default=None)
    p_solve.set_defaults(func=cmd_solve)

    p_run = sub.add_parser("run", help="run a method over a JSONL dataset")
    p_run.add_argument("--dataset", required=True)
    p_run.add_argument("--method", required=True, choices=("com", "direct", "cot"))
    p_run.add_argument("--config", default=None)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--workers", type=int, default=None)
    p_run.set_defaults(func=cmd_run)

    p_stats = sub.add_parser("stats", help="invocation statistics over persisted traces")
    p_stats.add_argument("dir")
    p_stats.set_defaults(func=cmd_stats)

    p_validate = sub.add_parser("validate", help="grammar-check one trace file")
    p_validate.add_argument("trace")
    p_validate.set_defaults(func=cmd_validate)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
