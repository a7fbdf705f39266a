"""Command-line front end: one subcommand per experiment kind.

Usage:  fraclab <kind> [--config FILE] [--out DIR] [--seed N]

The config file is flat ``key = value`` text (# comments allowed); list
values are comma-separated.  Flags override file values.  Exit codes:
0 all certificates pass, 1 a certificate or run failed, 2 bad usage or
invalid configuration.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from .core import CalibrationError, DomainError, ParameterError
from .experiments import (EXPERIMENT_KINDS, ExperimentConfig, run_experiment,
                          run_suite)
from .solver import DiscretizationError, NonConvergenceError

_FLOAT_KEYS = {"s", "points_per_eps", "half_width", "tau", "rho", "eta",
               "eta_prime", "gamma", "k_thresh", "solve_tol"}
_INT_KEYS = {"n", "seed"}
_LIST_KEYS = {"eps_list", "r_list"}
_STR_KEYS = {"out_dir", "mask_path"}
_ALL_KEYS = _FLOAT_KEYS | _INT_KEYS | _LIST_KEYS | _STR_KEYS


def parse_config_file(path: str) -> dict:
    """Read a flat key=value config file into typed values."""
    out: dict = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParameterError(
                    f"{path}:{lineno}: expected key = value, got {line!r}")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in _ALL_KEYS:
                raise ParameterError(
                    f"{path}:{lineno}: unknown config key {key!r}")
            try:
                if key in _LIST_KEYS:
                    out[key] = tuple(float(v) for v in val.split(",") if v.strip())
                elif key in _FLOAT_KEYS:
                    out[key] = float(val)
                elif key in _INT_KEYS:
                    out[key] = int(val)
                else:
                    out[key] = val
            except ValueError as exc:
                raise ParameterError(
                    f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return out


_KIND_DEFAULTS = {
    "scaling-potential": dict(s=0.1, n=1, eps_list=(0.2, 0.1, 0.05, 0.025)),
    "tubular-volume": dict(s=0.3, n=2, eps_list=(0.05,)),
    "corona-run": dict(s=0.3, n=2, eps_list=(0.05,)),
    "monotonicity-audit": dict(s=0.3, n=1, eps_list=(0.1,)),
    "beta-reifenberg-suite": dict(s=0.3, n=2, eps_list=(0.1,)),
    "perimeter-2s": dict(s=0.3, n=2, eps_list=(0.1,)),
    "suite": dict(s=0.3, n=1, eps_list=(0.1,)),
}


def build_config(kind: str, config_path: Optional[str],
                 out_dir: Optional[str], seed: Optional[int]
                 ) -> ExperimentConfig:
    kw = dict(_KIND_DEFAULTS[kind])
    if config_path is not None:
        kw.update(parse_config_file(config_path))
    if out_dir is not None:
        kw["out_dir"] = out_dir
    if seed is not None:
        kw["seed"] = seed
    cfg_kind = "monotonicity-audit" if kind == "suite" else kind
    s = kw.pop("s")
    n = kw.pop("n")
    eps_list = kw.pop("eps_list")
    return ExperimentConfig.make(cfg_kind, s=s, n=n, eps_list=eps_list, **kw)


def _collect_failures(certs: dict, prefix: str = "") -> list:
    bad = []
    for name, val in sorted(certs.items()):
        if isinstance(val, bool) and not val:
            bad.append(prefix + name)
    return bad


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="fraclab",
        description="Fractional Allen-Cahn interface laboratory")
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in list(EXPERIMENT_KINDS) + ["suite"]:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--config", default=None, metavar="PATH",
                       help="flat key=value config file")
        p.add_argument("--out", default=None, metavar="DIR",
                       help="output directory (default: current)")
        p.add_argument("--seed", default=None, type=int, metavar="N",
                       help="random seed (default 0)")

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0

    try:
        cfg = build_config(args.kind, args.config, args.out, args.seed)
    except (ParameterError, DomainError, CalibrationError, OSError) as exc:
        print(f"fraclab: configuration error: {exc}", file=sys.stderr)
        return 2

    try:
        if args.kind == "suite":
            summary = run_suite(cfg)
            if summary["all_pass"]:
                print("suite: all certificates pass")
                return 0
            failing = [name for name, rep in summary.items()
                       if isinstance(rep, dict) and not rep.get("ok", True)]
            print(f"suite: failing sub-suites: {', '.join(failing)}",
                  file=sys.stderr)
            return 1
        report = run_experiment(cfg)
        certs = (report.certificates if hasattr(report, "certificates")
                 else report["certificates"])
        ok = all(v for v in certs.values() if isinstance(v, bool))
    except (ParameterError, DomainError, CalibrationError,
            DiscretizationError) as exc:
        print(f"fraclab: invalid request: {exc}", file=sys.stderr)
        return 2
    except (NonConvergenceError, RuntimeError) as exc:
        print(f"fraclab: run failed: {exc}", file=sys.stderr)
        return 1

    for name, val in sorted(certs.items()):
        if isinstance(val, bool):
            print(f"certificate {name}: {'pass' if val else 'FAIL'}")
    if ok:
        return 0
    bad = ", ".join(_collect_failures(certs))
    print(f"fraclab: failing certificates: {bad}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
