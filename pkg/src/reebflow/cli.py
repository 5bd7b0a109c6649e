"""
Command line entry point.

Every subcommand reads an optional ``--config`` file, applies flag
overrides, writes its tables to the output directory and prints a JSON
summary on stdout.  Exit codes: 0 on success, 1 when a check fails and 2 on
usage or configuration errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .config import load_config
from .errors import ConfigError, ReebflowError

__all__ = ["main", "build_parser"]

log = logging.getLogger("reebflow")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _point(text: str) -> list[float]:
    v = _floats(text)
    if len(v) != 2:
        raise argparse.ArgumentTypeError(f"expected x1,x2, got {text!r}")
    return v


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="TOML or JSON experiment config")
    p.add_argument("--hamiltonian", choices=["radial", "anisotropic", "twowell"])
    p.add_argument("--eps", type=_floats, help="comma-separated eps ladder")
    p.add_argument("--n-paths", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--z-max", type=float)
    p.add_argument("--output-dir")
    p.add_argument("--json", dest="json_out", help="also write the summary JSON here")
    p.add_argument("--backend", choices=["compiled", "python"])
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="reebflow", description="Fast advection on Reeb graphs: checks and experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("reeb", help="build the Reeb graph and print it as JSON"))
    _common(sub.add_parser("coeffs", help="coefficient cross-checks"))
    p = sub.add_parser("simulate", help="Monte Carlo estimate of E_x u(X_eps(t))")
    _common(p)
    p.add_argument("--x0", type=_point, required=True)
    p.add_argument("--t", type=_floats, default=[1.0], help="comma-separated times")
    p.add_argument("--u", default="x1sq", help="named test function")
    p.add_argument("--paths-csv", help="dump up to 100 sample paths as CSV")
    p = sub.add_parser("converge", help="convergence sweeps")
    p.add_argument("kind", choices=["weak", "hgamma", "spde"])
    _common(p)
    p = sub.add_parser("noise-check", help="graph noise covariance check")
    _common(p)
    p.add_argument("--samples", type=int, default=10000)
    p = sub.add_parser("probe-averaging", help="averaging probe at t = eps^alpha")
    _common(p)
    p.add_argument("--alpha", type=float, default=0.6)
    return ap


def _config(args):
    over = {
        "hamiltonian": args.hamiltonian,
        "eps_ladder": args.eps,
        "n_paths": args.n_paths,
        "seed": args.seed,
        "z_max": args.z_max,
        "output_dir": args.output_dir,
    }
    if args.hamiltonian and args.hamiltonian != "twowell":
        over["hamiltonian_params"] = {}
    cfg = load_config(args.config, **{k: v for k, v in over.items() if v is not None})
    cfg.validate()
    return cfg


def _emit(summary: dict, args):
    text = json.dumps(harness._clean(summary), indent=2, sort_keys=True)
    print(text)
    if args.json_out:
        Path(args.json_out).write_text(text + "\n")


def _run(args) -> int:
    cfg = _config(args)
    out = Path(cfg.output_dir)
    if args.command == "reeb":
        _emit(harness.reeb_summary(cfg), args)
        return 0
    if args.command == "simulate":
        from .fastflow import FastFlowConfig, estimate_semigroup, min_period, simulate, dump_paths_csv
        s = harness.build_setup(cfg)
        u = harness.test_function(args.u, s.H)
        fc = FastFlowConfig(eps=cfg.eps_ladder[-1], n_paths=cfg.n_paths, seed=cfg.seed, z_max=cfg.z_max,
                            backend=args.backend)
        tmin = min_period(s.tables)
        r = estimate_semigroup(s.H, u, args.x0, args.t, fc, t_min=tmin)
        if args.paths_csv:
            dump_paths_csv(s.H, s.atlas, simulate(s.H, args.x0, args.t, fc, t_min=tmin), args.paths_csv)
        rec = {k: v for k, v in r.items() if k != "values"}
        rec.update({"u": args.u, "x0": args.x0, "t": args.t, "config": fc.to_dict()})
        _emit(rec, args)
        return 0
    if args.command == "coeffs":
        rep = harness.run_coefficient_validation(cfg)
    elif args.command == "converge":
        run = {"weak": harness.run_weak_convergence, "hgamma": harness.run_hgamma_convergence,
               "spde": harness.run_spde_convergence}[args.kind]
        rep = run(cfg, backend=args.backend)
    elif args.command == "noise-check":
        rep = harness.run_noise_check(cfg, n_samples=args.samples)
    else:
        rep = harness.run_probe_averaging(cfg, alpha_exp=args.alpha, backend=args.backend)
    files = harness.write_report(rep, out, cfg)
    _emit({"name": rep.name, "passed": rep.passed, "files": files, "summary": rep.summary}, args)
    return 0 if rep.passed else 1


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    np.seterr(over="ignore")
    try:
        return _run(args)
    except ReebflowError as exc:
        code = 2 if isinstance(exc, ConfigError) else 1
        print(f"reebflow: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
