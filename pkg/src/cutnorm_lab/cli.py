"""Command-line harness.

Subcommands:

* ``run --config cfg.json``      -- run a campaign, write trials.csv and
  report.json, exit 0 when every check passes, 2 on inequality violations,
  1 on configuration or runtime errors.
* ``cutnorm --matrix m.json``    -- cut norm of a step kernel, exact or
  heuristic.
* ``sample --kernel k.json``     -- draw a k-sample of a catalog kernel.
* ``verify-report DIR``          -- recompute report aggregates from the
  persisted trial records and diff them.

The CUTNORM_LAB_WORKERS environment variable overrides the worker count
from both the config file and the --workers flag.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .cutnorm import cut_norm_exact, cut_norm_heuristic
from .experiments import ConfigError, ExperimentConfig, run_experiment, verify_report
from .kernels import StepKernel, draw_sample, kernel_from_json


def _cmd_run(args) -> int:
    with open(args.config) as fh:
        obj = json.load(fh)
    if args.output_dir is not None:
        obj["output_dir"] = args.output_dir
    if args.workers is not None:
        obj["workers"] = args.workers
    config = ExperimentConfig.from_json(obj)
    if config.output_dir is None:
        raise ConfigError("an output directory is required (config or --output-dir)")
    result = run_experiment(config)
    out = Path(config.output_dir)
    print(f"wrote {out / 'trials.csv'} and {out / 'report.json'}")
    for failure in result.report["failures"]:
        print(f"FAIL: {failure}")
    if result.report["pass"]:
        print("all checks passed")
        return 0
    return 2


def _cmd_cutnorm(args) -> int:
    with open(args.matrix) as fh:
        W = StepKernel.from_json(json.load(fh))
    if args.heuristic:
        result = cut_norm_heuristic(W, restarts=args.restarts, seed=args.seed)
    else:
        result = cut_norm_exact(W)
    print(json.dumps(result.to_json(), indent=2, sort_keys=True))
    return 0


def _cmd_sample(args) -> int:
    with open(args.kernel) as fh:
        U = kernel_from_json(json.load(fh))
    points, sample = draw_sample(U, args.k, args.seed)
    payload = {"coords": [float(x) for x in points.coords], "sample": sample.to_json()}
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def _cmd_verify(args) -> int:
    mismatches = verify_report(Path(args.directory))
    if mismatches:
        for line in mismatches:
            print(f"MISMATCH: {line}")
        return 1
    print("report aggregates match the persisted trials")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cutnorm-lab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a Monte Carlo campaign from a JSON config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--output-dir", default=None)
    p_run.add_argument("--workers", type=int, default=None)
    p_run.set_defaults(fn=_cmd_run)

    p_cut = sub.add_parser("cutnorm", help="cut norm of a step kernel from JSON")
    p_cut.add_argument("--matrix", required=True)
    group = p_cut.add_mutually_exclusive_group()
    group.add_argument("--exact", action="store_true", default=True)
    group.add_argument("--heuristic", action="store_true")
    p_cut.add_argument("--restarts", type=int, default=32)
    p_cut.add_argument("--seed", type=int, default=0)
    p_cut.set_defaults(fn=_cmd_cutnorm)

    p_samp = sub.add_parser("sample", help="draw a k-sample of a catalog kernel")
    p_samp.add_argument("--kernel", required=True)
    p_samp.add_argument("--k", type=int, required=True)
    p_samp.add_argument("--seed", type=int, required=True)
    p_samp.add_argument("--out", default=None)
    p_samp.set_defaults(fn=_cmd_sample)

    p_ver = sub.add_parser("verify-report", help="recompute and diff report aggregates")
    p_ver.add_argument("directory")
    p_ver.set_defaults(fn=_cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
