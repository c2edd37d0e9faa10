"""Command-line front end.

Subcommands: ``run`` a config, ``sweep`` one axis over several values,
``make-reference`` to (re)generate cached grid trajectories, and ``plot-data``
to turn a finished run into tidy CSVs and rendered figures.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, load_config


def _parser():
    parser = argparse.ArgumentParser(
        prog="dynapprox",
        description="Dynamical approximation of PDEs with moving Gaussian observations",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one experiment config")
    p_run.add_argument("config", help="TOML config (or manifest.json of a finished run)")
    p_run.add_argument("--output", "-o", default=None, help="output directory")
    p_run.add_argument("--progress", action="store_true", help="print progress lines")
    p_run.add_argument("--reference-dir", default=None,
                       help="directory holding reference caches (default: $DYNAPPROX_CACHE)")

    p_sweep = sub.add_parser("sweep", help="run a config over several axis values")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--axis", required=True, choices=("m", "sigma", "p"))
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated numeric values")
    p_sweep.add_argument("--output", "-o", default=None)
    p_sweep.add_argument("--reference-dir", default=None)

    p_ref = sub.add_parser("make-reference", help="generate a cached reference trajectory")
    p_ref.add_argument("model", help="allen-cahn or burgers")
    p_ref.add_argument("--cache", default=None, help="cache directory")
    p_ref.add_argument("--t-final", type=float, default=None)

    p_plot = sub.add_parser("plot-data", help="tidy CSVs and figures for a finished run")
    p_plot.add_argument("rundir")
    p_plot.add_argument("--output", "-o", default=None)
    p_plot.add_argument("--times", default=None,
                        help="comma-separated snapshot times for field dumps")
    p_plot.add_argument("--reference-dir", default=None)
    return parser


def _progress_printer(every=200):
    def cb(step, total, report):
        if step % every == 0 or step == total:
            print(f"  step {step}/{total}  beta={report.beta:.4f}  n_eff={report.n_eff}",
                  flush=True)

    return cb


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args):
    if args.command == "run":
        from .experiment import run_experiment

        cfg = load_config(args.config)
        outdir = Path(args.output) if args.output else Path.cwd() / f"out_{cfg.get('name', 'run')}"
        progress = _progress_printer() if args.progress else None
        record = run_experiment(cfg, outdir, progress=progress,
                                reference_dir=args.reference_dir)
        print(f"run complete: {len(record.t)} records -> {outdir}")
        return 0

    if args.command == "sweep":
        from .experiment import run_sweep

        cfg = load_config(args.config)
        try:
            values = [float(v) for v in args.values.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"--values: {exc}") from exc
        if not values:
            raise ConfigError("--values: need at least one value")
        outdir = (
            Path(args.output)
            if args.output
            else Path.cwd() / f"sweep_{cfg.get('name', 'run')}_{args.axis}"
        )
        entries = run_sweep(cfg, args.axis, values, outdir,
                            reference_dir=args.reference_dir)
        failed = [e for e in entries if e["status"] != "ok"]
        for entry in entries:
            print(f"  {args.axis}={entry['value']:g}: {entry['status']}")
        print(f"sweep complete -> {outdir}")
        return 2 if failed else 0

    if args.command == "make-reference":
        from .experiment import build_model, make_reference

        name = args.model.strip().lower()
        if name not in ("allen-cahn", "burgers"):
            raise ConfigError(
                f"unknown reference model {name!r}; supported: allen-cahn, burgers"
            )
        cfg = {"model": {"kind": name}}
        model = build_model(cfg)
        kwargs = {}
        if args.t_final is not None:
            kwargs["T"] = args.t_final
        path = make_reference(model, directory=args.cache, **kwargs)
        print(f"reference written: {path}")
        return 0

    if args.command == "plot-data":
        from .plots import plot_run

        times = None
        if args.times:
            times = [float(v) for v in args.times.split(",") if v.strip()]
        outdir = plot_run(args.rundir, outdir=args.output, times=times,
                          reference_dir=args.reference_dir)
        print(f"plots written -> {outdir}")
        return 0

    raise ConfigError(f"unknown command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
