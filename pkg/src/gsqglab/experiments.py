"""Experiment drivers: each turns one quantitative estimate into a verdict.

Every driver returns an :class:`ExperimentReport` holding the configuration
echo, per-run metrics, aggregate statistics and verdicts that cite the
threshold they were judged against.  Coupled runs (different nu, delta or
initial data) share noise increments through the counter-based stream, so
members with equal ``realization`` see the same Brownian path.
"""
from __future__ import annotations

import hashlib
import json
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .coercivity import FitError, build_profile, fit_coercivity
from .io import write_series, write_snapshot
from .noise import NoiseStream, build_spectrum, evaluate_covariance, sample_increment
from .solver import (DIAGNOSTIC_COLUMNS, CFLError, Model, SimulationConfig, SimulationError, SimulationState,
                     forcing_function, initial_field, linear_transport_step, run_simulation,
                     step_deterministic_rk4, step_ito)
from .spectral import (Field, SpectralError, TorusGrid, fractional_laplacian, lebesgue_norm,
                       random_bandlimited, sobolev_norm)

PASS, FAIL, INCONCLUSIVE, COMPLETE = "PASS", "FAIL", "INCONCLUSIVE", "COMPLETE"


@dataclass
class Verdict:
    name: str
    status: str
    value: object
    threshold: object
    rule: str
    note: str = ""

    def line(self) -> str:
        return f"{self.status:<12} {self.name}: {self.rule} (value {_short(self.value)}, threshold {_short(self.threshold)})"


def _short(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.4g}"
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(str(_short(x)) for x in v) + "]"
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def config_hash(config: dict) -> str:
    blob = json.dumps(_jsonable(config), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ExperimentReport:
    experiment: str
    config: dict
    params: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    runs: list = field(default_factory=list)
    verdicts: list = field(default_factory=list)
    series: dict = field(default_factory=dict)      # name -> (columns, rows)
    snapshots: list = field(default_factory=list)   # (name, t, values, length, beta)
    wall_clock: float = 0.0
    steps: int = 0
    completed: bool = False

    @property
    def status(self) -> str:
        if not self.verdicts:
            return COMPLETE if self.completed else INCONCLUSIVE
        states = {v.status for v in self.verdicts}
        if FAIL in states:
            return FAIL
        if INCONCLUSIVE in states:
            return INCONCLUSIVE
        return PASS

    @property
    def ok(self) -> bool:
        return self.status in (PASS, COMPLETE)

    def verdict(self, name: str) -> Verdict:
        return next(v for v in self.verdicts if v.name == name)

    def add(self, name, status, value, threshold, rule, note=""):
        self.verdicts.append(Verdict(name, status, value, threshold, rule, note))

    def to_dict(self) -> dict:
        echo = {"config": self.config, "params": self.params}
        return _jsonable({
            "experiment": self.experiment,
            "status": self.status,
            "config": self.config,
            "params": self.params,
            "config_hash": config_hash(echo),
            "code_version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "metrics": self.metrics,
            "runs": self.runs,
            "verdicts": [vars(v) for v in self.verdicts],
            "wall_clock_seconds": self.wall_clock,
            "steps": self.steps,
        })

    def summary_lines(self) -> list[str]:
        return [f"{self.experiment}: {self.status}"] + ["  " + v.line() for v in self.verdicts]

    def write(self, out, snapshots: bool = True):
        out = Path(out)
        (out / "series").mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        for name, (columns, rows) in self.series.items():
            cols = list(columns)
            data = {c: [r[i] for r in rows] for i, c in enumerate(cols)}
            write_series(out / "series" / f"{name}.csv", data[cols[0]], data, cols)
        if snapshots and self.snapshots:
            (out / "snapshots").mkdir(exist_ok=True)
            for name, t, values, length, beta in self.snapshots:
                write_snapshot(out / "snapshots" / f"{name}.bin", values, length, t, beta)


# --- ensemble utilities -------------------------------------------------------

def ensemble_stats(samples, axis: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo mean and 2-sigma error bar of the mean along ``axis``."""
    x = np.asarray(samples, dtype=float)
    m = x.shape[axis]
    mean = x.mean(axis=axis)
    if m < 2:
        return mean, np.full_like(mean, np.inf)
    return mean, 2.0 * x.std(axis=axis, ddof=1) / math.sqrt(m)


def map_members(fn, tasks, workers: int = 1) -> list:
    """Run independent ensemble members, optionally in worker processes."""
    tasks = list(tasks)
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


def _advance(state: SimulationState, model: Model) -> SimulationState:
    if model.config.scheme == "deterministic-rk4":
        return step_deterministic_rk4(state, model)
    return step_ito(state, model)


def lockstep(configs, theta0s, measure, forcings=None):
    """Advance several models side by side and record ``measure(states)``.

    All configurations must share dt, T and diag_every.  Returns (times, records).
    """
    forcings = forcings or [None] * len(configs)
    models = [Model(c, f) for c, f in zip(configs, forcings)]
    states = [m.initial_state(t0) for m, t0 in zip(models, theta0s)]
    c0 = configs[0]
    times, records = [0.0], [measure(states)]
    for i in range(c0.steps):
        try:
            states = [_advance(s, m) for s, m in zip(states, models)]
        except (CFLError, SpectralError) as exc:
            raise SimulationError(str(exc), states[0].t) from exc
        if (i + 1) % c0.diag_every == 0 or i == c0.steps - 1:
            times.append(states[0].t)
            records.append(measure(states))
    return np.array(times), np.array(records)


def _centred(f: Field) -> Field:
    return Field(f.grid, hat=np.where(f.grid.kmod == 0, 0, f.hat))


def _hamiltonian_sq(f: Field, beta: float) -> float:
    return sobolev_norm(_centred(f), beta / 2 - 1) ** 2


def _base(config: SimulationConfig | dict | None, **defaults) -> SimulationConfig:
    if config is None:
        return SimulationConfig(**defaults)
    if isinstance(config, dict):
        return SimulationConfig.from_dict({**defaults, **config})
    return config


def _loglog_slope(x, y, sigma_y):
    """Weighted least-squares slope of y on x with its 1-sigma error."""
    x, y, s = map(np.asarray, (x, y, sigma_y))
    if not np.all(np.isfinite(s)) or np.any(s <= 0):
        slope = np.polyfit(x, y, 1)[0]
        return float(slope), math.inf
    w = 1.0 / s**2
    xm = np.sum(w * x) / np.sum(w)
    ym = np.sum(w * y) / np.sum(w)
    sxx = np.sum(w * (x - xm) ** 2)
    slope = np.sum(w * (x - xm) * (y - ym)) / sxx
    stat = 1.0 / math.sqrt(sxx)
    # inflate by the residual scatter when the points disagree beyond their error bars
    dof = len(x) - 2
    chi2 = float(np.sum(w * (y - ym - slope * (x - xm)) ** 2))
    scale = max(1.0, math.sqrt(chi2 / dof)) if dof > 0 else 1.0
    return float(slope), float(stat * scale)


def _bracket(low: float, high: float, threshold: float) -> str:
    """PASS when the whole error bar clears the threshold, FAIL when it misses it entirely."""
    if low >= threshold:
        return PASS
    if high < threshold:
        return FAIL
    return INCONCLUSIVE


# --- deterministic invariants -------------------------------------------------

INVARIANTS_DEFAULTS = dict(n=256, beta=0.5, T=1.0, scheme="deterministic-rk4", noise=False,
                           initial="random", initial_amplitude=8.0, seed=3, diag_every=10)


def exp_invariants(config=None, h: float = 4e-3, levels: int = 3, order_min: float = 3.5,
                   drift_max: float = 1e-6, floor: float = 1e-12, record_every: float = 0.04) -> ExperimentReport:
    """Drift of the Casimirs and the Hamiltonian under RK4 at dt = h, h/2, h/4."""
    cfg = _base(config, **INVARIANTS_DEFAULTS)
    if cfg.scheme != "deterministic-rk4" or cfg.noise:
        raise ValueError("the invariants experiment needs the deterministic-rk4 scheme with noise off")
    rep = ExperimentReport("invariants", cfg.as_dict(), dict(h=h, levels=levels, order_min=order_min,
                                                               drift_max=drift_max, floor=floor))
    t0 = time.perf_counter()
    dts = [h / 2**i for i in range(levels)]
    drifts = {"L2": [], "Hneg1bh": [], "mean": [], "L1": []}
    for dt in dts:
        c = cfg.with_(dt=dt, diag_every=max(1, int(round(record_every / dt))))
        means = []
        try:
            tr = run_simulation(c, callback=lambda s, m: means.append(s.theta.mean))
        except SimulationError as exc:
            rep.add("stability", FAIL, str(exc), c.cfl_max, "CFL number below the error limit at every step",
                    "reduce h")
            rep.wall_clock = time.perf_counter() - t0
            return rep
        rep.steps += tr.steps
        for key in ("L2", "Hneg1bh", "L1"):
            v = tr.array(key)
            drifts[key].append(float(np.max(np.abs(v - v[0])) / max(v[0], 1e-300)))
        mean_scale = tr.array("L1")[0] / c.length**2
        drifts["mean"].append(float(np.max(np.abs(np.array(means) - means[0])) / max(mean_scale, 1e-300)))
        rep.series[f"dt_{dt:.6g}"] = (DIAGNOSTIC_COLUMNS,
                                      [[tr.times[i]] + [tr.series[k][i] for k in DIAGNOSTIC_COLUMNS[1:]]
                                       for i in range(len(tr.times))])
        rep.runs.append({"dt": dt, "steps": tr.steps, **{k: drifts[k][-1] for k in drifts}})
    orders = {}
    for key in ("L2", "Hneg1bh"):
        d = drifts[key]
        orders[key] = [math.log2(a / b) if b > floor and a > floor else None for a, b in zip(d, d[1:])]
    rep.metrics = {"dt": dts, "drift": drifts, "order": orders}
    measured = [o for key in orders for o in orders[key] if o is not None]
    finest = max(drifts["L2"][-1], drifts["Hneg1bh"][-1])
    if measured:
        low = min(measured)
        rep.add("convergence_order", PASS if low >= order_min else FAIL, low, order_min,
                "smallest measured order of the L2 and Hamiltonian drift under dt halving >= threshold")
    elif finest <= floor:
        rep.add("convergence_order", PASS, None, order_min, "drift at the roundoff floor at every dt",
                f"all drifts <= {floor:g}")
    else:
        rep.add("convergence_order", FAIL, None, order_min, "order not measurable above the roundoff floor")
    worst = max(finest, drifts["mean"][-1])
    rep.add("finest_drift", PASS if worst < drift_max else FAIL, worst, drift_max,
            "max relative drift of L2, Hamiltonian and mean at the finest dt < threshold")
    rep.wall_clock = time.perf_counter() - t0
    return rep


# --- pathwise L^q bounds --------------------------------------------------------

PATHWISE_DEFAULTS = dict(n=128, beta=0.5, alpha=0.4, T=0.5, cutoff=8, forcing="steady", forcing_amplitude=1.0,
                         initial="two_mode")


def _pathwise_member(task):
    cfg_dict, levels, h, record_every = task
    base = SimulationConfig.from_dict(cfg_dict)
    out = []
    for i in range(levels):
        dt = h / 2**i
        c = base.with_(dt=dt, noise_refine=2 ** (levels - 1 - i), diag_every=max(1, int(round(record_every / dt))))
        integral = {1: [0.0], 2: [0.0]}
        tr = run_simulation(c, callback=lambda s, m: _accumulate(s, m, integral))
        idx = np.round(np.array(tr.times) / dt).astype(int)
        slack = {}
        for q, key in ((1, "L1"), (2, "L2")):
            v = tr.array(key)
            bound = v[0] + np.array(integral[q])[idx]
            slack[q] = float(max(0.0, np.max(v - bound)))
        out.append({"dt": dt, "slack_L1": slack[1], "slack_L2": slack[2], "steps": tr.steps,
                    "margin_L2": float(np.min(bound - v))})
    return out


def _accumulate(state, model, integral):
    """Running left-point integral of ||f||_q, matching the explicit forcing update."""
    f = model.forcing(state.t)
    for q in (1, 2):
        integral[q].append(integral[q][-1] + model.config.dt * lebesgue_norm(f, q))


def exp_pathwise_bound(config=None, members: int = 16, h: float = 4e-3, levels: int = 3,
                       floor: float = 1e-10, record_every: float = 0.02, workers: int = 1) -> ExperimentReport:
    """||theta_t||_q <= ||theta_0||_q + int ||f||_q for q = 1, 2 along each path, at dt = h, h/2, h/4."""
    cfg = _base(config, **PATHWISE_DEFAULTS)
    rep = ExperimentReport("pathwise_bound", cfg.as_dict(), dict(members=members, h=h, levels=levels, floor=floor))
    t0 = time.perf_counter()
    tasks = [(cfg.with_(realization=r).as_dict(), levels, h, record_every) for r in range(members)]
    results = map_members(_pathwise_member, tasks, workers)
    rep.runs = [{"realization": r, "levels": res} for r, res in enumerate(results)]
    rep.steps = sum(lv["steps"] for res in results for lv in res)
    for q in (1, 2):
        worst = [max(res[i][f"slack_L{q}"] for res in results) for i in range(levels)]
        rep.metrics[f"slack_L{q}"] = worst
        scale = floor * max(1.0, lebesgue_norm(initial_field(cfg.initial, TorusGrid(cfg.n, cfg.length),
                                                               cfg.initial_amplitude, cfg.seed), q))
        ok = all(b <= a / 2 or b <= scale for a, b in zip(worst, worst[1:]))
        rep.add(f"slack_L{q}", PASS if ok else FAIL, worst, scale,
                "worst violation of the bound over all paths halves with dt or sits below the floor")
    rep.wall_clock = time.perf_counter() - t0
    return rep


# --- vanishing viscosity ------------------------------------------------------

VISCOSITY_DEFAULTS = dict(n=128, alpha=0.4, beta=0.45, T=0.5, dt=1e-3, cutoff=8, initial="two_mode",
                          diag_every=10, p=4.0)


def _viscosity_member(task):
    cfg_dict, nus = task
    base = SimulationConfig.from_dict(cfg_dict)
    configs = [base.with_(nu=0.0)] + [base.with_(nu=nu) for nu in nus]
    beta = base.beta

    def measure(states):
        ref = states[0].theta
        return [_hamiltonian_sq(s.theta - ref, beta) for s in states[1:]]

    times, rec = lockstep(configs, [None] * len(configs), measure)
    return times, rec


def exp_viscosity_sweep(config=None, nus=(1e-3, 3e-3, 1e-2, 3e-2), members: int = 8,
                        slope_margin: float = 0.3, workers: int = 1) -> ExperimentReport:
    """Rate of sup_t E||theta^nu - theta||^2 in H^(beta/2-1) as nu -> 0, noise shared."""
    cfg = _base(config, **VISCOSITY_DEFAULTS)
    nus = [float(v) for v in nus]
    if len(set(nus)) < 4 or min(nus) <= 0:
        raise ValueError("need at least 4 distinct positive viscosities")
    if not cfg.uniqueness_regime:
        raise ValueError("viscosity sweep requires the uniqueness regime (beta/2 < alpha < 1/2, "
                         "beta/2 + alpha <= 1 - 1/p)")
    nus = sorted(nus)
    target = 2 - cfg.beta / 2 - cfg.alpha
    rep = ExperimentReport("viscosity", cfg.as_dict(), dict(nus=nus, members=members, slope_margin=slope_margin))
    t0 = time.perf_counter()
    results = map_members(_viscosity_member, [(cfg.with_(realization=r).as_dict(), nus) for r in range(members)],
                          workers)
    times = results[0][0]
    data = np.stack([r[1] for r in results])           # (members, times, nus)
    mean, err = ensemble_stats(data)
    at = np.argmax(mean, axis=0)
    sup = mean[at, np.arange(len(nus))]
    bar = err[at, np.arange(len(nus))]
    slope, sigma = _loglog_slope(np.log(nus), np.log(sup), bar / 2 / sup)
    rep.steps = members * (len(nus) + 1) * cfg.steps
    rep.metrics = {"nu": nus, "sup_error": sup.tolist(), "error_bar_2sigma": bar.tolist(),
                   "slope": slope, "slope_2sigma": 2 * sigma, "target_exponent": target,
                   "threshold": target - slope_margin, "corrector": Model(cfg).corrector}
    rep.runs = [{"realization": r, "sup_error": data[r].max(axis=0).tolist()} for r in range(members)]
    rep.series["ensemble"] = (["time"] + [f"nu_{v:g}" for v in nus],
                              [[t] + mean[i].tolist() for i, t in enumerate(times)])
    lo, hi = slope - 2 * sigma, slope + 2 * sigma
    status = _bracket(lo, hi, target - slope_margin)
    if status == PASS and lo <= 0 <= hi:
        status = INCONCLUSIVE
    rep.add("rate", status, slope, target - slope_margin,
            "fitted log-log slope (with 2-sigma bar) >= (2 - beta/2 - alpha) - margin",
            f"slope 2-sigma interval [{lo:.3f}, {hi:.3f}]")
    rep.wall_clock = time.perf_counter() - t0
    return rep


# --- stability under perturbation ---------------------------------------------

STABILITY_DEFAULTS = dict(n=128, alpha=0.4, beta=0.45, T=0.5, dt=1e-3, cutoff=8, initial="two_mode",
                          diag_every=10, p=4.0)


def perturbation_field(grid: TorusGrid, beta: float, seed: int) -> Field:
    """Fixed band-limited direction eta with unit H^(beta/2-1) norm."""
    eta = random_bandlimited(grid, np.random.default_rng(seed + 101), kmax=max(2, grid.band // 4), slope=1.5)
    return eta * (1.0 / sobolev_norm(eta, beta / 2 - 1))


def _stability_member(task):
    cfg_dict, eps_list, mode = task
    base = SimulationConfig.from_dict(cfg_dict)
    g = TorusGrid(base.n, base.length)
    eta = perturbation_field(g, base.beta, base.seed)
    theta0 = initial_field(base.initial, g, base.initial_amplitude, base.seed)
    f0 = forcing_function(base.forcing, g, base.forcing_amplitude, base.seed)
    configs = [base] * (len(eps_list) + 1)
    if mode == "initial":
        thetas = [theta0] + [theta0 + eta * e for e in eps_list]
        forcings = [f0] * len(configs)
    else:
        thetas = [theta0] * len(configs)
        forcings = [f0] + [(lambda t, e=e: f0(t) + eta * e) for e in eps_list]

    def measure(states):
        ref = states[0].theta
        return [_hamiltonian_sq(s.theta - ref, base.beta) for s in states[1:]]

    return lockstep(configs, thetas, measure, forcings)


def exp_stability(config=None, eps_list=(1e-3, 1e-2, 1e-1), members: int = 8, ratio_tol: float = 0.5,
                  mode: str = "initial", workers: int = 1) -> ExperimentReport:
    """Linear response g(eps) = sup_t E[||xi_t||^2]^(1/2) of coupled runs to a perturbation of size eps."""
    cfg = _base(config, **STABILITY_DEFAULTS)
    if mode not in ("initial", "forcing"):
        raise ValueError("mode must be 'initial' or 'forcing'")
    if not cfg.uniqueness_regime:
        raise ValueError("stability experiment requires the uniqueness regime")
    eps = sorted(float(e) for e in eps_list)
    if min(eps) < 0:
        raise ValueError("perturbation sizes must be non-negative")
    rep = ExperimentReport("stability", cfg.as_dict(), dict(eps=eps, members=members, ratio_tol=ratio_tol, mode=mode))
    t0 = time.perf_counter()
    results = map_members(_stability_member,
                          [(cfg.with_(realization=r).as_dict(), eps, mode) for r in range(members)], workers)
    times = results[0][0]
    data = np.stack([r[1] for r in results])           # (members, times, eps)
    rms = np.sqrt(data.mean(axis=0))
    g = rms.max(axis=0)
    # reference size of the perturbation: eps ||eta|| (= eps), or eps ||eta|| t for forcing
    scale = np.ones_like(times) if mode == "initial" else np.maximum(times, 1e-300)
    positive = [i for i, e in enumerate(eps) if e > 0]
    rep.steps = members * (len(eps) + 1) * cfg.steps
    rep.series["ensemble_rms"] = (["time"] + [f"eps_{e:g}" for e in eps],
                                  [[t] + rms[i].tolist() for i, t in enumerate(times)])
    if not positive:
        rep.metrics = {"eps": eps, "g": g.tolist()}
        rep.add("zero_perturbation", PASS if np.all(g == 0) else FAIL, float(g.max()), 0.0, "g(0) = 0")
        rep.wall_clock = time.perf_counter() - t0
        return rep
    ratio = np.array([g[i] / eps[i] for i in positive])
    spread = float(ratio.max() / ratio.min() - 1)
    # the sup is often attained at t = 0; the final-time response tests the dynamics
    final = np.array([rms[-1, i] / eps[i] for i in positive])
    final_spread = float(final.max() / final.min() - 1)
    i0 = positive[0]
    growth = rms[1:, i0] / (eps[i0] * scale[1:])
    c_hat = float(max(0.0, np.max(np.log(np.maximum(growth, 1e-300)) / times[1:])))
    horizon = times[-1]
    limit = math.exp(c_hat * horizon) * np.array([eps[i] for i in positive]) * (1.0 if mode == "initial" else horizon)
    excess = float(np.max(g[positive] / limit)) - 1.0
    rep.metrics = {"eps": eps, "g": g.tolist(), "ratio": ratio.tolist(), "ratio_spread": spread,
                   "final_ratio": final.tolist(), "final_ratio_spread": final_spread,
                   "C_hat": c_hat, "bound": limit.tolist(), "bound_excess": excess}
    rep.runs = [{"realization": r, "sup_norm_sq": data[r].max(axis=0).tolist()} for r in range(members)]
    rep.add("linear_response", PASS if spread < ratio_tol else FAIL, spread, ratio_tol,
            "max/min - 1 of g(eps)/eps across eps < threshold")
    rep.add("final_response", PASS if final_spread < ratio_tol else FAIL, final_spread, ratio_tol,
            "max/min - 1 of E[||xi_T||^2]^(1/2)/eps across eps < threshold")
    rep.add("exponential_bound", PASS if excess <= ratio_tol else FAIL, excess, ratio_tol,
            "g(eps) <= exp(C_hat T) eps ||eta|| (C_hat fitted at the smallest eps), relative excess <= threshold")
    rep.wall_clock = time.perf_counter() - t0
    return rep


# --- mollification ------------------------------------------------------------

MOLLIFY_DEFAULTS = dict(n=128, alpha=0.4, beta=0.45, T=0.25, dt=1e-3, cutoff=8, initial="two_mode",
                        diag_every=10, forcing="steady", forcing_amplitude=0.5)


def negative_norm(f: Field, eps: float) -> float:
    """Unweighted inhomogeneous H^(-eps) norm on the torus."""
    return sobolev_norm(f, -eps, homogeneous=False)


def _mollify_member(task):
    cfg_dict, deltas, eps = task
    base = SimulationConfig.from_dict(cfg_dict).with_(delta_noise=0.0, delta_kernel=0.0, delta_data=0.0)
    configs = [base] + [base.with_(delta_noise=d, delta_kernel=d, delta_data=d) for d in deltas]

    def measure(states):
        ref = states[0].theta
        return [negative_norm(ref, eps)] + [negative_norm(s.theta - ref, eps) for s in states[1:]]

    return lockstep(configs, [None] * len(configs), measure)


def exp_mollification(config=None, deltas=(0.5, 0.25, 0.125, 0.0625), members: int = 2, eps: float = 0.1,
                      tolerance: float = 0.05, workers: int = 1) -> ExperimentReport:
    """sup_t ||theta^delta - theta||_(H^-eps) for the mollified model against the unmollified one."""
    cfg = _base(config, **MOLLIFY_DEFAULTS)
    deltas = [float(d) for d in deltas]
    if len(deltas) < 2 or any(b >= a for a, b in zip(deltas, deltas[1:])) or min(deltas) <= 0:
        raise ValueError("delta list must be positive and strictly decreasing")
    rep = ExperimentReport("mollify", cfg.as_dict(), dict(deltas=deltas, members=members, eps=eps,
                                                          tolerance=tolerance))
    t0 = time.perf_counter()
    results = map_members(_mollify_member, [(cfg.with_(realization=r).as_dict(), deltas, eps)
                                            for r in range(members)], workers)
    times = results[0][0]
    data = np.stack([r[1] for r in results])            # (members, times, 1 + deltas)
    sup = data[:, :, 1:].max(axis=1)                      # pathwise sup per member
    err, bar = ensemble_stats(sup)
    size = float(data[:, :, 0].max())
    g = TorusGrid(cfg.n, cfg.length)
    c0 = build_spectrum(g, cfg.alpha, cfg.cutoff if cfg.noise else 0, 0.0, cfg.mollifier).c0
    cd = [build_spectrum(g, cfg.alpha, cfg.cutoff if cfg.noise else 0, d, cfg.mollifier).c0 for d in deltas]
    rep.steps = members * (len(deltas) + 1) * cfg.steps
    rep.metrics = {"delta": deltas, "error": err.tolist(), "error_bar_2sigma": bar.tolist(),
                   "reference_norm": size, "c_delta": cd, "c0": c0}
    rep.runs = [{"realization": r, "sup_error": sup[r].tolist()} for r in range(members)]
    rep.series["mean_error"] = (["time"] + [f"delta_{d:g}" for d in deltas],
                                [[t] + data[:, i, 1:].mean(axis=0).tolist() for i, t in enumerate(times)])
    steps_down = np.diff(err)
    if np.all(steps_down < 0):
        status = PASS
    else:
        # an increase covered by the error bars is not evidence against monotonicity
        covered = all(d < 0 or d <= bar[i] + bar[i + 1] for i, d in enumerate(steps_down))
        status = INCONCLUSIVE if covered and members > 1 else FAIL
    rep.add("monotone_error", status, err.tolist(), None, "sup-norm errors strictly decrease as delta decreases")
    rel = float(err[-1] / max(size, 1e-300))
    rep.add("final_error", PASS if rel <= tolerance else FAIL, rel, tolerance,
            "error at the smallest delta relative to sup_t ||theta_t||_(H^-eps) <= threshold")
    increasing = all(b > a for a, b in zip(cd, cd[1:])) and cd[-1] <= c0
    gaps = [c0 - c for c in cd]
    shrinking = all(b < a for a, b in zip(gaps, gaps[1:]))
    rep.add("corrector_limit", PASS if increasing and shrinking else FAIL, cd, c0,
            "c_delta strictly increases with gap to c0 shrinking")
    rep.wall_clock = time.perf_counter() - t0
    return rep


# --- linear transport stability -----------------------------------------------

LINEAR_DEFAULTS = dict(beta=0.5, alpha=0.4, T=0.5, cutoff=8, initial="two_mode", forcing="steady",
                       forcing_amplitude=0.5, p=4.0)


def _linear_member(task):
    cfg_dict, levels, perturbation, forcing_gap, record_every = task
    base = SimulationConfig.from_dict(cfg_dict)
    out = []
    for n, dt in levels:
        c = base.with_(n=n, dt=dt, noise_refine=int(round(dt / min(d for _, d in levels))))
        g = TorusGrid(n, c.length)
        eta = perturbation_field(g, c.beta, c.seed)
        x1, x2 = g.coords
        bump = Field.from_values(g, np.sin(2 * x1 - x2))
        f1 = forcing_function(c.forcing, g, c.forcing_amplitude, c.seed)
        f2 = lambda t: f1(t) + bump * forcing_gap
        m_theta = Model(c)
        m1, m2 = Model(c, zeta_forcing=f1), Model(c, zeta_forcing=f2)
        theta = m_theta.initial_state()
        z1 = SimulationState(0.0, theta.theta, zeta=theta.theta)
        z2 = SimulationState(0.0, theta.theta, zeta=theta.theta + eta * perturbation)
        every = max(1, int(round(record_every / dt)))
        diff0 = z1.zeta - z2.zeta
        gap_norm = {q: lebesgue_norm(bump * forcing_gap, q) for q in (1, 2)}
        init = {q: lebesgue_norm(diff0, q) for q in (1, 2)}
        slack = {1: -math.inf, 2: -math.inf}
        b_reg = []
        gamma = c.regularity
        for i in range(c.steps):
            inc = m_theta.increment(theta.step)
            b = m_theta.velocity(theta.theta).field
            if i % every == 0:
                b_reg.append(math.hypot(sobolev_norm(b.u1, gamma), sobolev_norm(b.u2, gamma)))
            z1 = linear_transport_step(z1, b, m1, inc)
            z2 = linear_transport_step(z2, b, m2, inc)
            theta = step_ito(theta, m_theta, inc)
            if (i + 1) % every == 0 or i == c.steps - 1:
                d = z1.zeta - z2.zeta
                for q in (1, 2):
                    bound = init[q] + z1.t * gap_norm[q]
                    slack[q] = max(slack[q], lebesgue_norm(d, q) - bound)
        out.append({"n": n, "dt": dt, "steps": c.steps, "slack_L1": max(0.0, slack[1]),
                    "slack_L2": max(0.0, slack[2]), "margin_L1": -slack[1], "margin_L2": -slack[2],
                    "b_H_gamma_sup": max(b_reg)})
    return out


def exp_linear_stability(config=None, levels=((64, 2e-3), (64, 1e-3), (128, 1e-3)), members: int = 4,
                         perturbation: float = 0.2, forcing_gap: float = 0.3, floor: float = 1e-10,
                         record_every: float = 0.01, workers: int = 1) -> ExperimentReport:
    """Pathwise L1 and L2 stability of passive scalars carried by a gSQG velocity.

    The drift b is the velocity of a concurrent stochastic gSQG run driven by the
    same increments; the two scalars differ in initial data and forcing.
    """
    cfg = _base(config, **LINEAR_DEFAULTS)
    levels = [(int(n), float(dt)) for n, dt in levels]
    rep = ExperimentReport("linear", cfg.as_dict(), dict(levels=levels, members=members, perturbation=perturbation,
                                                         forcing_gap=forcing_gap, floor=floor))
    t0 = time.perf_counter()
    try:
        results = map_members(_linear_member, [(cfg.with_(realization=r).as_dict(), levels, perturbation,
                                                forcing_gap, record_every) for r in range(members)], workers)
    except SpectralError as exc:
        rep.add("drift_divergence", FAIL, str(exc), 1e-10, "drift divergence-free")
        rep.wall_clock = time.perf_counter() - t0
        return rep
    rep.runs = [{"realization": r, "levels": res} for r, res in enumerate(results)]
    rep.steps = sum(3 * lv["steps"] for res in results for lv in res)
    rep.metrics = {"gamma": cfg.regularity, "linear_regime": cfg.linear_regime, "p": cfg.p,
                   "b_H_gamma_sup": max(lv["b_H_gamma_sup"] for res in results for lv in res)}
    for q in (1, 2):
        worst = [max(res[i][f"slack_L{q}"] for res in results) for i in range(len(levels))]
        margin = [min(res[i][f"margin_L{q}"] for res in results) for i in range(len(levels))]
        rep.metrics[f"slack_L{q}"] = worst
        rep.metrics[f"margin_L{q}"] = margin
        scale = floor * max(1.0, perturbation)
        ok = all(b <= a / 2 or b <= scale for a, b in zip(worst, worst[1:]))
        rep.add(f"slack_L{q}", PASS if ok else FAIL, worst, scale,
                "worst violation of the stability bound halves under refinement or sits below the floor")
    rep.wall_clock = time.perf_counter() - t0
    return rep


# --- noise covariance ----------------------------------------------------------

NOISE_DEFAULTS = dict(n=64, alpha=0.5, cutoff=8)


def point_values(spec, draws: np.ndarray, x) -> np.ndarray:
    """W(x) for a stack of draws of shape (samples, modes, 2); returns (samples, 2)."""
    phase = spec.k @ np.asarray(x, dtype=float)
    c, s = np.cos(phase), np.sin(phase)
    coeff = draws[:, :, 0] * c + draws[:, :, 1] * s          # (samples, modes)
    return (coeff * spec.amplitude) @ spec.tangent


def exp_noise_covariance(config=None, samples: int = 10_000, probes=None, tol_factor: float = 4.0) -> ExperimentReport:
    cfg = _base(config, **NOISE_DEFAULTS)
    if samples < 1000:
        raise ValueError("need at least 10^3 samples")
    probes = probes or [((0.0, 0.0), (0.0, 0.0)), ((0.0, 0.0), (math.pi, 0.0)), ((math.pi, 0.0), (0.0, 0.0)),
                        ((0.5, 1.0), (2.0, -0.3))]
    g = TorusGrid(cfg.n, cfg.length)
    spec = build_spectrum(g, cfg.alpha, cfg.cutoff if cfg.noise else 0, cfg.delta_noise, cfg.mollifier)
    rep = ExperimentReport("noise-check", cfg.as_dict(), dict(samples=samples, tol_factor=tol_factor,
                                                              probes=[list(map(list, p)) for p in probes]))
    t0 = time.perf_counter()
    stream = NoiseStream(cfg.seed, cfg.realization)
    draws = np.stack([sample_increment(spec, 1.0, stream, i).draws for i in range(samples)])
    scale = 2 * spec.c0
    limit = tol_factor * scale / math.sqrt(samples)
    worst, zmax = 0.0, 0.0
    for j, (x, y) in enumerate(probes):
        wx, wy = point_values(spec, draws, x), point_values(spec, draws, y)
        emp = wx.T @ wy / samples
        ana = evaluate_covariance(spec, np.subtract(x, y))
        dev = float(np.max(np.abs(emp - ana)))
        z = dev / (scale / math.sqrt(samples)) if scale > 0 else 0.0
        worst, zmax = max(worst, dev), max(zmax, z)
        rep.runs.append({"x": list(x), "y": list(y), "empirical": emp, "analytic": ana, "max_deviation": dev,
                         "z": z})
    rep.metrics = {"c0": spec.c0, "mode_count": spec.n_modes, "max_deviation": worst, "max_z": zmax,
                   "spectrum": spec.summary()}
    rep.add("covariance", PASS if worst <= limit else FAIL, worst, limit,
            "max |empirical - analytic| over probe entries <= tol_factor * 2 c0 / sqrt(M)")
    rep.steps = samples
    rep.wall_clock = time.perf_counter() - t0
    return rep


# --- product inequality ---------------------------------------------------------

def product_ratio(f: Field, g: Field, alpha: float, beta: float, p: float) -> float:
    """||f g||_(H^(alpha-beta/2)) / (||Lambda^(1-beta) f||_(L^p) ||g||_(H^(1-alpha-beta/2))).

    The product is taken pointwise on the grid, which is exact when both factors
    are band-limited to a quarter of the grid.
    """
    fg = Field.from_values(f.grid, f.values * g.values)
    num = sobolev_norm(_centred(fg), alpha - beta / 2)
    den = lebesgue_norm(fractional_laplacian(f, 1 - beta), p) * sobolev_norm(_centred(g), 1 - alpha - beta / 2)
    return num / den if den > 0 else math.nan


def exp_product_inequality(alpha: float = 0.4, beta: float = 0.4, p: float = 2.5, samples: int = 400,
                           n: int = 64, stability_tol: float = 0.25, seed: int = 0) -> ExperimentReport:
    """Empirical constant of the fractional product inequality over random band-limited pairs."""
    if abs(alpha + beta / 2 - (1 - 1 / p)) > 1e-9:
        raise ValueError("inadmissible tuple: need alpha + beta/2 = 1 - 1/p")
    rep = ExperimentReport("product-check", {"alpha": alpha, "beta": beta, "p": p, "n": n, "seed": seed},
                           dict(samples=samples, stability_tol=stability_tol))
    t0 = time.perf_counter()
    grid = TorusGrid(n)
    rng = np.random.default_rng(seed)
    kcap = n // 4 - 1
    ratios = []
    for _ in range(samples):
        f = random_bandlimited(grid, rng, kmax=int(rng.integers(1, kcap + 1)), slope=float(rng.uniform(0, 3)))
        g = random_bandlimited(grid, rng, kmax=int(rng.integers(1, kcap + 1)), slope=float(rng.uniform(0, 3)))
        r = product_ratio(f, g, alpha, beta, p)
        if math.isfinite(r):
            ratios.append(r)
    ratios = np.array(ratios)
    counts = [len(ratios) // 4, len(ratios) // 2, len(ratios)]
    maxima = [float(ratios[:c].max()) for c in counts]
    growth = maxima[-1] / maxima[-2] - 1
    rep.metrics = {"counts": counts, "max_ratio": maxima, "quantiles": {
        q: float(np.quantile(ratios, q)) for q in (0.5, 0.9, 0.99)}, "skipped": samples - len(ratios)}
    rep.series["ratios"] = (["index", "ratio"], [[i, r] for i, r in enumerate(ratios)])
    ok = np.isfinite(maxima).all() and growth <= stability_tol and maxima[-2] / maxima[-3] - 1 <= stability_tol
    rep.add("stable_constant", PASS if ok else FAIL, growth, stability_tol,
            "relative growth of the empirical maximum under doubling of the sample count <= threshold")
    rep.steps = samples
    rep.wall_clock = time.perf_counter() - t0
    return rep


# --- coercivity ----------------------------------------------------------------

def exp_coercivity(alpha: float = 0.4, beta: float = 0.6, radii=None, tol: float = 1e-4,
                   delta_factors=(0.5, 0.25, 0.125), profile: str = "cutoff") -> ExperimentReport:
    radii = np.geomspace(1, 64, 8) if radii is None else np.asarray(radii, dtype=float)
    rep = ExperimentReport("coercivity", {"alpha": alpha, "beta": beta},
                           dict(radii=radii.tolist(), tol=tol, delta_factors=list(delta_factors), profile=profile))
    t0 = time.perf_counter()
    prof = build_profile(alpha, beta, radii, delta_factors, tol, profile, fit=False)
    rep.metrics = {"radii": radii.tolist(), "F": prof.f_limit.tolist(), "F_error": prof.f_limit_error.tolist()}
    rows = []
    for j, r in enumerate(radii):
        for i, c in enumerate(delta_factors):
            rows.append([r, c / r, prof.f_delta[i, j], prof.f_delta_error[i, j], prof.f_limit[j],
                         prof.f_limit_error[j]])
    rep.series["profile"] = (["n", "delta", "F_delta", "error", "F_limit", "limit_error"], rows)
    try:
        fit = fit_coercivity(radii, prof.f_limit, alpha, beta)
        prof.fit = fit
        rep.metrics.update(fit.summary())
        rep.add("K_positive", PASS if fit.K > 0 else FAIL, fit.K, 0.0, "fitted K > 0")
    except (FitError, ValueError) as exc:
        rep.add("K_positive", FAIL, str(exc), 0.0, "fitted K > 0")
    rep.profile = prof
    rep.wall_clock = time.perf_counter() - t0
    return rep


# --- plain simulation ------------------------------------------------------------

def exp_simulate(config=None, snapshots: bool = False) -> ExperimentReport:
    cfg = _base(config)
    rep = ExperimentReport("simulate", cfg.as_dict())
    t0 = time.perf_counter()
    tr = run_simulation(cfg, snapshots=snapshots)
    cols = list(DIAGNOSTIC_COLUMNS) + sorted(tr.extra)
    rows = []
    for i, t in enumerate(tr.times):
        rows.append([t] + [tr.series[k][i] for k in DIAGNOSTIC_COLUMNS[1:]] + [tr.extra[k][i] for k in sorted(tr.extra)])
    rep.series["diagnostics"] = (cols, rows)
    rep.snapshots = [(f"theta_{i:05d}", t, v, cfg.length, cfg.beta) for i, (t, v) in enumerate(tr.snapshots)]
    rep.metrics = {"corrector": tr.corrector, **cfg.flags()}
    rep.steps = tr.steps
    rep.completed = True
    rep.wall_clock = time.perf_counter() - t0
    return rep
