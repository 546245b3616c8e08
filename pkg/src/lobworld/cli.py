"""Command-line entry point: one subcommand per pipeline stage plus ``run`` and ``compare``.

Exit codes: 0 success, 1 stage failure, 2 invalid configuration or
arguments, 3 missing upstream stage.  Failures print one JSON object on
stderr: ``{"error": <type>, "stage": <name or null>, "message": <text>}``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .evaluation import EvalReport, rank_reports
from .pipeline import BENCHMARKS, DependencyError, Pipeline, StageError, write_ranking

EXIT_OK, EXIT_STAGE, EXIT_CONFIG, EXIT_DEPENDENCY = 0, 1, 2, 3

STAGE_COMMANDS = {
    "gen-data": "generate (or ingest) the dataset into <out>/data",
    "train-ae": "train the window autoencoder",
    "encode": "encode train/validation days into latent state chains",
    "train-transition": "train the recurrent mixture-density transition model",
    "train-reward": "train the reward model and store the world-model extras",
    "train-agent": "train an agent entirely inside the world model",
    "run-benchmark": "run a benchmark strategy on the test split",
    "evaluate": "replay every strategy on the test split and write EvalReports",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail("usage", None, message, EXIT_CONFIG)


def _fail(kind: str, stage: str | None, message: str, code: int):
    sys.stderr.write(json.dumps({"error": kind, "stage": stage, "message": message}) + "\n")
    raise SystemExit(code)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (defaults apply when omitted)")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", default="artifacts", help="artifacts directory")
    common.add_argument("--force", action="store_true", help="rerun even if up to date")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="lobworld", description="World-model RL for limit order book trading.")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND",
                           parser_class=_Parser)
    for name, help_text in STAGE_COMMANDS.items():
        sp = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        if name == "train-agent":
            sp.add_argument("--kind", choices=("dqn", "pg", "a2c"), required=True)
        if name == "run-benchmark":
            sp.add_argument("--strategy", choices=BENCHMARKS, required=True)
    sp = sub.add_parser("run", parents=[common], help="run every stage in dependency order")
    sp = sub.add_parser("compare", help="rank two or more EvalReports by mean daily PnL")
    sp.add_argument("reports", nargs="+", help="EvalReport JSON files")
    sp.add_argument("--output", help="write the ranking JSON here (stdout otherwise)")
    sp.add_argument("--csv", help="also write the ranking as CSV")
    return p


def _compare(args) -> int:
    if len(args.reports) < 2:
        _fail("usage", "compare", "compare needs at least two EvalReports", EXIT_CONFIG)
    try:
        reports = [EvalReport.from_json(p) for p in args.reports]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        _fail(type(exc).__name__, "compare", str(exc), EXIT_STAGE)
    rows = rank_reports(reports)
    if args.output:
        write_ranking(rows, Path(args.output), Path(args.csv) if args.csv else None)
    else:
        if args.csv:
            write_ranking(rows, Path(args.csv).with_suffix(".json"), Path(args.csv))
        print(json.dumps(rows, indent=1))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "verbose", False):
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "compare":
        return _compare(args)
    try:
        config = load_config(args.config).with_seed(args.seed)
    except (ConfigError, OSError) as exc:
        _fail(type(exc).__name__, None, str(exc), EXIT_CONFIG)
    pipe = Pipeline(config, args.out)
    try:
        if args.command == "run":
            ran = pipe.run(args.force)
        else:
            stage = args.command
            if stage == "train-agent":
                stage = f"train-agent:{args.kind}"
            elif stage == "run-benchmark":
                stage = f"run-benchmark:{args.strategy}"
            ran = {stage: pipe.run_stage(stage, args.force)}
    except DependencyError as exc:
        _fail("DependencyError", exc.stage, str(exc), EXIT_DEPENDENCY)
    except StageError as exc:
        _fail("StageError", exc.stage, str(exc), EXIT_STAGE)
    print(json.dumps({"out": str(pipe.root), "stages": {k: "ran" if v else "skipped"
                                                        for k, v in ran.items()}}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
