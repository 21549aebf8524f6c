"""``ctm`` command-line entry point.

Exit codes: 0 on success, 1 for configuration or usage errors, 2 for
failures while running.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .config import defaults_help, parse_config, parse_duration
from .diagnostics import ftle_field, reconstruction_metrics
from .errors import ConfigError, CtmError, ShapeError
from .fieldio import read_field, write_field
from .harness import forward_dumps, record_twin, run_sweep, run_twin, worker_count

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _duration(text):
    try:
        return parse_duration(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser():
    epilog = defaults_help()
    p = _Parser(prog="ctm", description="Adjoint source-reconstruction experiments on a 2D channel.",
                epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_text):
        sp = sub.add_parser(name, help=help_text, description=help_text, epilog=epilog,
                            formatter_class=argparse.RawDescriptionHelpFormatter)
        return sp

    sp = add("twin", "run one identical-twin experiment")
    sp.add_argument("--config", required=True, type=Path)
    sp.add_argument("--window", required=True, type=_duration, help="assimilation window, e.g. 3h")
    sp.add_argument("--out", required=True, type=Path)

    sp = add("sweep", "run every configured window; CTM_THREADS sets the worker count")
    sp.add_argument("--config", required=True, type=Path)
    sp.add_argument("--out", required=True, type=Path)

    sp = add("forward", "transport the truth forward and dump it at the configured cadence")
    sp.add_argument("--config", required=True, type=Path)
    sp.add_argument("--out", required=True, type=Path)
    sp.add_argument("--window", type=_duration, help="run length (default: longest configured window)")
    sp.add_argument("--cadence", type=_duration, help="dump interval (default: [run] dump_cadence)")

    sp = add("ftle", "write the finite-time Lyapunov exponent field")
    sp.add_argument("--config", required=True, type=Path)
    sp.add_argument("--horizon", required=True, type=_duration)
    sp.add_argument("--out", required=True, type=Path)

    sp = add("diagnose", "recompute error metrics from stored field dumps")
    sp.add_argument("--truth", required=True, type=Path)
    sp.add_argument("--estimate", required=True, type=Path)
    sp.add_argument("--background", required=True, type=float)
    sp.add_argument("--r-max", type=float,
                    help="center-of-mass normalization (m); default the larger extent of the truth's excess")
    return p


def _excess_extent(truth, background):
    g = truth.grid
    rows, cols = np.nonzero(truth.values > background)
    if rows.size == 0:
        return math.nan
    return max((np.unique(cols).size) * g.dx, (rows.max() - rows.min() + 1) * g.dy)


def _cmd_twin(args):
    cfg = parse_config(args.config)
    _, report, outcome = run_twin(cfg, args.window, args.out)
    record_twin(cfg, args.out, outcome)
    print(",".join(report.row()))
    return EXIT_OK


def _cmd_sweep(args):
    cfg = parse_config(args.config)
    try:
        worker_count(len(cfg.windows))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    reports, manifest = run_sweep(cfg, args.out)
    print(Path(manifest.report).read_text(), end="")
    failed = [w for w in manifest.windows if w["status"] != "ok"]
    for w in failed:
        print(f"window {w['window_s']:g}s failed: {w['error'].splitlines()[0]}", file=sys.stderr)
    return EXIT_RUNTIME if failed else EXIT_OK


def _cmd_forward(args):
    cfg = parse_config(args.config)
    window = cfg.windows[-1] if args.window is None else args.window
    for path in forward_dumps(cfg, window, args.out, args.cadence):
        print(path)
    return EXIT_OK


def _cmd_ftle(args):
    cfg = parse_config(args.config)
    if not args.horizon > 0:
        raise ConfigError("--horizon must be positive")
    field = ftle_field(cfg.make_wind(), cfg.t0, args.horizon)
    path = write_field(Path(args.out) / "ftle.txt", field, cfg.t0)
    print(path)
    return EXIT_OK


def _cmd_diagnose(args):
    truth, _ = read_field(args.truth)
    est, _ = read_field(args.estimate)
    if truth.grid.shape != est.grid.shape or truth.grid != est.grid:
        raise ShapeError(f"{args.truth} is {truth.grid.nx}x{truth.grid.ny} but {args.estimate} is "
                         f"{est.grid.nx}x{est.grid.ny}")
    r_max = args.r_max if args.r_max is not None else _excess_extent(truth, args.background)
    rel, com, mass = reconstruction_metrics(est, truth, args.background, r_max)
    print(json.dumps({"rel_l2_pct": rel, "com_err_pct": com, "mass_err_pct": mass, "r_max": r_max},
                     sort_keys=True))
    return EXIT_OK


COMMANDS = {"twin": _cmd_twin, "sweep": _cmd_sweep, "forward": _cmd_forward, "ftle": _cmd_ftle,
            "diagnose": _cmd_diagnose}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"ctm: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CtmError, ArithmeticError, ValueError, OSError) as exc:
        print(f"ctm: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
