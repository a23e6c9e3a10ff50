"""Command-line interface for running experiments and rate diagnostics.

Exit codes: 0 on success, 2 on configuration or argument validation
failures, 1 on runtime errors such as unwritable output paths.
"""
from __future__ import annotations

import argparse
import json
import sys

from .errors import ConfigurationError
from .harness import config_from_dict, fit_rate, read_result_csv, run_experiment

_SUBCOMMAND_MODES = {
    "run": "single",
    "sweep-k": "sweep_k",
    "sweep-dim": "sweep_dim",
    "sweep-shift": "sweep_shift",
    "oracle": "oracle",
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fqeval", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _SUBCOMMAND_MODES:
        p = sub.add_parser(name, help=f"run the {name} experiment grid")
        p.add_argument("--config", required=True, help="path to a JSON experiment config")
        p.add_argument("--out", required=True, help="path of the CSV results file")
        p.add_argument("--workers", type=int, default=1, help="concurrent grid cells")
        p.add_argument("--seed", type=int, default=None, help="override the config base seed")
    rate = sub.add_parser("rate", help="fit a log-log error slope to sweep-k results")
    rate.add_argument("--in", dest="in_path", required=True, help="CSV produced by sweep-k")
    rate.add_argument("--out", default=None, help="optional JSON file for the fitted slope")
    return parser


def _run_grid(args: argparse.Namespace) -> int:
    with open(args.config, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}") from exc
    expected_mode = _SUBCOMMAND_MODES[args.command]
    if "mode" in doc and doc["mode"] != expected_mode:
        raise ConfigurationError(
            f"config mode {doc['mode']!r} conflicts with subcommand {args.command!r}"
        )
    doc["mode"] = expected_mode
    config = config_from_dict(doc)
    if args.seed is not None:
        from dataclasses import replace

        config = replace(config, base_seed=args.seed)
    rows = run_experiment(config, out_path=args.out, workers=args.workers)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def _run_rate(args: argparse.Namespace) -> int:
    rows = read_result_csv(args.in_path)
    try:
        fit = fit_rate(rows)
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc
    print(f"slope={fit.slope:.6f} stderr={fit.stderr:.6f} n_points={fit.n_points}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump({"slope": fit.slope, "stderr": fit.stderr, "n_points": fit.n_points}, f)
            f.write("\n")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "rate":
            return _run_rate(args)
        return _run_grid(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        # A missing config is a validation problem; other I/O issues are not.
        if args.command != "rate" and getattr(exc, "filename", None) == args.config:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - surface anything else as runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
