"""Command-line entry point: ``gsqglab <command> [config] [--seed N] [--out DIR] [--snapshots]``.

Exit codes: 0 on PASS or a completed simulation, 1 on FAIL or INCONCLUSIVE,
2 on usage errors and malformed configuration files.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields

from . import experiments as ex
from .io import ConfigDict, ConfigError, load_config, parse_config
from .solver import SimulationConfig, SimulationError

SIM_KEYS = {f.name for f in fields(SimulationConfig)}


def _levels(params):
    res = params.pop("resolutions", None)
    steps = params.pop("steps", None)
    if res is None and steps is None:
        return
    res, steps = _as_list(res), _as_list(steps)
    if len(res) != len(steps):
        raise ConfigError("'resolutions' and 'steps' must have the same length")
    params["levels"] = list(zip(res, steps))


def _as_list(v):
    return v if isinstance(v, list) else [v]


def _run_simulate(cfg, params, args):
    return ex.exp_simulate(cfg, snapshots=args.snapshots)


def _run_invariants(cfg, params, args):
    return ex.exp_invariants(cfg, **params)


def _run_pathwise(cfg, params, args):
    return ex.exp_pathwise_bound(cfg, workers=args.workers, **params)


def _run_viscosity(cfg, params, args):
    if "nus" in params:
        params["nus"] = _as_list(params["nus"])
    return ex.exp_viscosity_sweep(cfg, workers=args.workers, **params)


def _run_stability(cfg, params, args):
    if "eps" in params:
        params["eps_list"] = _as_list(params.pop("eps"))
    return ex.exp_stability(cfg, workers=args.workers, **params)


def _run_mollify(cfg, params, args):
    if "deltas" in params:
        params["deltas"] = _as_list(params["deltas"])
    return ex.exp_mollification(cfg, workers=args.workers, **params)


def _run_linear(cfg, params, args):
    _levels(params)
    return ex.exp_linear_stability(cfg, workers=args.workers, **params)


def _run_noise(cfg, params, args):
    return ex.exp_noise_covariance(cfg, **params)


def _run_coercivity(cfg, params, args):
    sim = cfg or {}
    if "radii" in params:
        params["radii"] = _as_list(params["radii"])
    if "delta_factors" in params:
        params["delta_factors"] = _as_list(params["delta_factors"])
    return ex.exp_coercivity(alpha=sim.get("alpha", 0.4), beta=sim.get("beta", 0.6), **params)


def _run_product(cfg, params, args):
    sim = cfg or {}
    kw = {k: sim[k] for k in ("alpha", "beta", "p", "n", "seed") if k in sim}
    return ex.exp_product_inequality(**kw, **params)


# command -> (runner, experiment-specific keys, one-line help)
COMMANDS = {
    "simulate": (_run_simulate, set(), "integrate one configuration and write diagnostics"),
    "invariants": (_run_invariants, {"h", "levels", "order_min", "drift_max", "floor", "record_every"},
                   "deterministic Casimir and Hamiltonian drift under RK4"),
    "pathwise": (_run_pathwise, {"members", "h", "levels", "floor", "record_every"},
                 "pathwise L^1 and L^2 bounds under dt refinement"),
    "viscosity": (_run_viscosity, {"nus", "members", "slope_margin"}, "vanishing-viscosity rate"),
    "stability": (_run_stability, {"eps", "members", "ratio_tol", "mode"}, "continuous dependence on data"),
    "mollify": (_run_mollify, {"deltas", "members", "eps", "tolerance"}, "convergence of mollified models"),
    "linear": (_run_linear, {"resolutions", "steps", "members", "perturbation", "forcing_gap", "floor",
                             "record_every"}, "pathwise stability of linear transport"),
    "noise-check": (_run_noise, {"samples", "tol_factor"}, "Monte Carlo check of the noise covariance"),
    "coercivity": (_run_coercivity, {"radii", "tol", "delta_factors", "profile"},
                   "coercivity profile F(n) and fitted constants"),
    "product-check": (_run_product, {"samples", "stability_tol"}, "empirical constant of the product inequality"),
}

# commands whose configuration is not a SimulationConfig
_PLAIN = {"coercivity", "product-check"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gsqglab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="command")
    for name, (_, keys, text) in COMMANDS.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("config", nargs="?", help="key = value configuration file")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out", metavar="DIR", help="write report.json, series/*.csv, snapshots/*.bin here")
        p.add_argument("--snapshots", action="store_true", help="also record field snapshots")
        p.add_argument("--workers", type=int, default=1, help="worker processes for ensemble members")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a configuration entry (repeatable)")
    return parser


def _split(command: str, raw: ConfigDict):
    keys = COMMANDS[command][1]
    allowed = SIM_KEYS | keys
    if command in _PLAIN:
        allowed = keys | {"alpha", "beta", "p", "n", "seed"}
    sim, params = {}, {}
    for k, v in raw.items():
        if k not in allowed:
            raise ConfigError(f"unknown key {k!r} for '{command}'", raw.lines.get(k))
        (params if k in keys else sim)[k] = v
    return sim, params


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        raw = load_config(args.config) if args.config else ConfigDict()
        if args.set:
            extra = parse_config("\n".join(args.set))
            for k, v in extra.items():
                raw[k] = v
                raw.lines.setdefault(k, None)
        sim, params = _split(args.command, raw)
        if args.seed is not None:
            sim["seed"] = args.seed
        if args.command not in _PLAIN:
            sim = SimulationConfig.from_dict({**_defaults(args.command), **sim}).as_dict()
        runner = COMMANDS[args.command][0]
    except ConfigError as exc:
        print(f"gsqglab: config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, TypeError) as exc:
        print(f"gsqglab: {exc}", file=sys.stderr)
        return 2
    try:
        report = runner(sim, params, args)
    except (ValueError, TypeError) as exc:
        print(f"gsqglab: invalid experiment setup: {exc}", file=sys.stderr)
        return 2
    except SimulationError as exc:
        print(f"gsqglab: simulation failed: {exc}", file=sys.stderr)
        return 1
    for line in report.summary_lines():
        print(line)
    if args.out:
        report.write(args.out, snapshots=args.snapshots)
    return 0 if report.ok else 1


def _defaults(command: str) -> dict:
    return {
        "invariants": ex.INVARIANTS_DEFAULTS,
        "pathwise": ex.PATHWISE_DEFAULTS,
        "viscosity": ex.VISCOSITY_DEFAULTS,
        "stability": ex.STABILITY_DEFAULTS,
        "mollify": ex.MOLLIFY_DEFAULTS,
        "linear": ex.LINEAR_DEFAULTS,
        "noise-check": ex.NOISE_DEFAULTS,
    }.get(command, {})


if __name__ == "__main__":
    sys.exit(main())
