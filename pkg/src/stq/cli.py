"""Command line entry point: ``stq optimize|evaluate|sweep|export``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .experiments import (ConfigError, ExperimentConfig, export_report, load_report, run_evaluate,
                          run_optimize, run_sweep)


def _config(args) -> ExperimentConfig:
    # precedence: flag > file > preset defaults
    base = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = {"preset": args.preset, "gate": args.gate, "n_seeds": args.seeds,
                 "workers": args.workers, "seed": args.seed, "n": args.n,
                 "n_real": args.n_real, "pulse": getattr(args, "pulse", None)}
    if args.alpha:
        overrides["alphas"] = args.alpha
    if getattr(args, "axis", None):
        overrides["sweep"] = {**base.sweep, "axis": args.axis}
    return base.merged(**overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stq", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--preset", choices=["gaas", "si", "custom"])
        p.add_argument("--gate", choices=["cnot", "x90", "y90", "identity"])
        p.add_argument("--seeds", type=int, help="number of random starts")
        p.add_argument("--seed", type=int, help="first seed, also the Monte Carlo seed")
        p.add_argument("--workers", type=int)
        p.add_argument("--n", type=int, help="number of AWG samples per channel")
        p.add_argument("--n-real", type=int, dest="n_real", help="Monte Carlo realizations")
        p.add_argument("--alpha", type=float, action="append", help="noise exponent, repeatable")
        p.add_argument("--out", default="stq_out", help="output directory")

    common(sub.add_parser("optimize", help="synthesise a pulse and report its fidelity"))
    p = sub.add_parser("evaluate", help="report the fidelity of a stored pulse")
    common(p)
    p.add_argument("--pulse", help="pulse CSV (channel,k,eps_mV)")
    p = sub.add_parser("sweep", help="evaluate a stored pulse along one parameter axis")
    common(p)
    p.add_argument("--pulse", help="pulse CSV (channel,k,eps_mV)")
    p.add_argument("--axis", choices=["samplerate", "sigma_db", "sigma_eps", "s0", "j23_residual"])
    p = sub.add_parser("export", help="convert a report JSON to json or csv")
    p.add_argument("report", help="report JSON file")
    p.add_argument("--format", choices=["json", "csv"], default="csv")
    p.add_argument("--out", help="output file, stdout if omitted")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "export":
        try:
            text = export_report(load_report(args.report), args.format, args.out)
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        if args.out is None:
            sys.stdout.write(text)
        return 0
    try:
        config = _config(args)
        config.resolve()
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    runner = {"optimize": run_optimize, "evaluate": run_evaluate, "sweep": run_sweep}[args.command]
    return runner(config, Path(args.out))


if __name__ == "__main__":
    sys.exit(main())
