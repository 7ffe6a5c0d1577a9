"""Command-line interface.

Each subcommand drives one stage of the pipeline (upstream stages run through
the cache as needed); ``report`` collates estimator records into a verdict
table.  Exit codes: 0 success, 2 config error, 3 numeric failure, 4 resource
cap.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import ClqgError, ConfigError, ResourceCapError
from .kernels import assumption_report
from .runner import collate_report, load_config, run


def _add_config_arg(p):
    p.add_argument("--config", required=True, help="flat key = value config file")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="clqg", description="critical Liouville simulation runner")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("field", help="synthesize the field ladder (and cache it)")
    _add_config_arg(p)
    p.add_argument("--check-assumptions", action="store_true", help="emit the kernel diagnostics CSV")

    for name, hlp in (
        ("measure", "build the grid measures"),
        ("clock", "run one Brownian path and its clocks"),
        ("lbm", "sample one time-changed trajectory"),
    ):
        p = sub.add_parser(name, help=hlp)
        _add_config_arg(p)

    p = sub.add_parser("spectrum", help="multifractal spectrum estimator")
    _add_config_arg(p)
    p.add_argument("--q", type=float, action="append", help="moment order in (0,1); repeatable")

    p = sub.add_parser("envelope", help="thick-point envelope estimator")
    _add_config_arg(p)
    p.add_argument("--chi", type=float, help="envelope exponent in (0, 1/2)")

    p = sub.add_parser("resolvent", help="resolvent normalization estimator")
    _add_config_arg(p)
    p.add_argument("--lam", type=float, action="append", help="resolvent rate; repeatable")

    p = sub.add_parser("invariance", help="invariance of the critical measure under the motion")
    _add_config_arg(p)
    p.add_argument("--t", type=float, action="append", help="Liouville time; repeatable")

    p = sub.add_parser("report", help="collate estimator records into a verdict table")
    p.add_argument("--dir", default="out", help="directory holding results_*.jsonl")
    return ap


_STAGE_FOR = {
    "field": ("field",),
    "measure": ("field", "measure"),
    "clock": ("field", "measure", "clock"),
    "lbm": ("field", "measure", "clock", "lbm"),
}


def _override(cfg, **updates):
    from .runner import ExperimentConfig

    vals = dict(cfg.values)
    for k, v in updates.items():
        if v is not None:
            vals[k] = tuple(v) if isinstance(v, list) else v
    return ExperimentConfig(values=tuple(sorted(vals.items())))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            rows = collate_report(args.dir)
            print(f"{'name':<12} {'inputs':<40} {'estimate':>12} {'target':>12} verdict")
            for r in rows:
                inputs = ",".join(f"{k}={v}" for k, v in sorted(r["inputs"].items()))
                print(f"{r['name']:<12} {inputs:<40} {r['estimate']:>12.5g} {r['target']:>12.5g} {r['verdict']}")
            return 0

        cfg = load_config(args.config)
        if args.command == "field" and args.check_assumptions:
            spec = cfg.kernel_spec()
            grid = cfg.grid_spec()
            rep = assumption_report(spec, grid.window, cfg.ladder().eps)
            out = Path(cfg["output_dir"])
            out.mkdir(parents=True, exist_ok=True)
            path = out / "assumptions.csv"
            rep.to_csv(path)
            print(f"wrote {path}")
        if args.command in _STAGE_FOR:
            manifest = run(cfg, stages=_STAGE_FOR[args.command])
        else:
            est = args.command
            overrides = {"estimators": [est]}
            if est == "spectrum" and args.q:
                overrides["spectrum_q"] = args.q
            if est == "envelope" and args.chi is not None:
                overrides["envelope_chi"] = args.chi
            if est == "resolvent" and args.lam:
                overrides["resolvent_lambda"] = args.lam
            if est == "invariance" and args.t:
                overrides["invariance_t"] = args.t
            cfg = _override(cfg, **overrides)
            manifest = run(cfg)
        print(f"manifest {manifest.manifest_hash[:12]} -> {cfg['output_dir']}/manifest.json")
        return 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except ResourceCapError as e:
        print(f"resource cap: {e}", file=sys.stderr)
        return 4
    except ClqgError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
