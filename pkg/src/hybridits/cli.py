"""Command line: ``hybridits run`` / ``hybridits validate`` / ``hybridits schema``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from . import scenario as scenario_mod
from .errors import ScenarioError
from .runner import Runner

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_VIOLATION = 2


def dumps(summary: dict) -> str:
    return json.dumps(summary, sort_keys=True, indent=2) + "\n"


def _print_diagnostics(diags, stream):
    for path, msg in diags:
        print(f"{path}: {msg}", file=stream)


def _text_report(summary: dict) -> str:
    lines = [f"scenario {summary['scenario']} seed {summary['seed']} duration {summary['duration_s']} s"]
    gen = summary["counts"]["generated"]
    lines.append("generated " + " ".join(f"{k}={v}" for k, v in sorted(gen.items())))
    for label, ch in summary["channels"].items():
        lat = ch["latency_ms"]
        lines.append(f"{label:28s} ratio={ch['delivery_ratio']} p50={lat['p50']} p95={lat['p95']} p99={lat['p99']}")
    ho = summary["handover"]
    lines.append(f"handovers={ho['count']} max_gap_ms={ho['max_gap_ms']} missed={ho['missed_publications']}")
    for mec, e in summary["epm"].items():
        lines.append(f"epm mec {mec}: rmse={e['rmse']} count_delta={e['count_delta']}")
    lines.append(f"alerts={len(summary['alerts'])} violations={summary['violations']}")
    lines.append(f"log_hash={summary['log_hash']}")
    return "\n".join(lines) + "\n"


def cmd_validate(args) -> int:
    try:
        doc = scenario_mod.load_document(args.scenario)
    except (OSError, ScenarioError) as exc:
        diags = exc.diagnostics if isinstance(exc, ScenarioError) else [("$", str(exc))]
        _print_diagnostics(diags, sys.stderr)
        return EXIT_INVALID
    diags = scenario_mod.diagnose(doc)
    if diags:
        _print_diagnostics(diags, sys.stderr)
        return EXIT_INVALID
    print("ok")
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        sc = scenario_mod.load(args.scenario, seed=args.seed, duration_s=args.duration)
    except ScenarioError as exc:
        _print_diagnostics(exc.diagnostics, sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"$: {exc}", file=sys.stderr)
        return EXIT_INVALID
    runner = Runner(sc, trace=args.trace)
    summary = runner.run()
    text = dumps(summary)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(text)
        if args.trace:
            with open(out / "events.jsonl", "w") as fh:
                for line in runner.log.lines():
                    fh.write(line + "\n")
    sys.stdout.write(text if args.format == "json" else _text_report(summary))
    return EXIT_VIOLATION if summary["violations"] else EXIT_OK


def cmd_schema(args) -> int:
    sys.stdout.write(json.dumps(scenario_mod.SCHEMA, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybridits", description="Hybrid V2X delivery simulator")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and print its summary")
    run.add_argument("scenario", help="scenario file, or a bundled name: " + ", ".join(scenario_mod.BUNDLED))
    run.add_argument("--seed", type=int, help="override the scenario seed")
    run.add_argument("--duration", type=float, help="override the duration in seconds")
    run.add_argument("--out", help="directory for summary.json (and events.jsonl with --trace)")
    run.add_argument("--trace", action="store_true", help="keep the full event log")
    run.add_argument("--format", choices=("text", "json"), default="text")
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate", help="check a scenario and list every problem")
    val.add_argument("scenario")
    val.set_defaults(func=cmd_validate)

    sch = sub.add_parser("schema", help="print the scenario JSON schema")
    sch.set_defaults(func=cmd_schema)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
