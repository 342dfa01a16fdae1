"""Command line entry point.

    ira <stage> --config <path> [--k N] [--shots N] [--ensemble T]
        [--variant pica|promptcap|prophet] [--filter-mode q|a|qa|s|ensemble]
        [--seed N] [--stub] [--output-dir DIR] [--workers N]
        [--probe-mode original|all|random|best]

Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .answering import VARIANTS
from .config import load_config
from .errors import ConfigInvalid, IraError
from .filtering import MODES
from .pipeline import STAGES, run_stage
from .probe import PROBE_MODES, probe_qa_modes


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ira",
        description="Inquire-refine-answer pipeline for knowledge-based VQA.",
    )
    parser.add_argument("stage", choices=STAGES + ("all", "probe"), help="stage to run")
    parser.add_argument("--config", required=True, help="path to the YAML/JSON config file")
    parser.add_argument("--k", type=int, help="number of sub-questions to generate")
    parser.add_argument("--shots", type=int, help="in-context examples per query")
    parser.add_argument(
        "--ensemble", type=int, dest="ensemble_queries", help="number of ensemble queries T"
    )
    parser.add_argument("--variant", choices=VARIANTS, help="prompt variant")
    parser.add_argument("--filter-mode", choices=MODES, dest="filter_mode")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--stub", action="store_true", help="force stub backends for every role")
    parser.add_argument("--output-dir", dest="output_dir")
    parser.add_argument("--workers", type=int)
    parser.add_argument(
        "--probe-mode", choices=PROBE_MODES, default="best", help="context mode for `ira probe`"
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    overrides = {
        "k": args.k,
        "shots": args.shots,
        "ensemble_queries": args.ensemble_queries,
        "variant": args.variant,
        "filter_mode": args.filter_mode,
        "seed": args.seed,
        "stub": args.stub,
        "output_dir": args.output_dir,
        "workers": args.workers,
    }
    try:
        config = load_config(args.config, overrides)
    except ConfigInvalid as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2

    try:
        if args.stage == "probe":
            report = probe_qa_modes(config, args.probe_mode)
            print(json.dumps(report.to_dict(), sort_keys=True))
        else:
            for stage_report in run_stage(config, args.stage):
                print(json.dumps(stage_report.to_dict(), sort_keys=True))
    except IraError as e:
        print(f"stage failed: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
