"""Time integration of stochastic gSQG in Ito form and of linear transport.

    d theta = [-div(u theta) + (c + nu) Lap theta + f] dt - sum_k sigma_k . grad theta dB^k,
    u = -grad^perp Lambda^(beta-2) theta,

where c is the Ito corrector of the (possibly mollified) noise spectrum.  The
level-set pieces theta^<, theta^> and a passive scalar zeta are advanced with the
same velocity and noise increment as theta.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable

import numpy as np

from . import mollifiers
from .noise import NoiseSpectrum, NoiseStream, build_spectrum, flux_divergence, noise_velocity, sample_increment
from .spectral import (Field, SpectralError, TorusGrid, VectorField, biot_savart_multiplier, dealias,
                       lebesgue_norm, random_bandlimited, sobolev_norm)

log = logging.getLogger(__name__)

SCHEMES = ("ito-integrating-factor", "ito-euler", "deterministic-rk4")


class CFLError(RuntimeError):
    pass


class SimulationError(RuntimeError):
    def __init__(self, message: str, time: float):
        super().__init__(f"{message} (t = {time:.6g})")
        self.time = time


@dataclass
class SimulationConfig:
    n: int = 128
    length: float = 2 * math.pi
    beta: float = 0.5
    alpha: float = 0.4
    noise: bool = True
    cutoff: int = 8
    delta_noise: float = 0.0
    nu: float = 0.0
    delta_kernel: float = 0.0
    delta_data: float = 0.0
    mollifier: str = "gaussian"
    nonlinear: bool = True
    dt: float = 1e-3
    T: float = 0.1
    scheme: str = "ito-integrating-factor"
    seed: int = 0
    realization: int = 0
    noise_refine: int = 1
    initial: str = "two_mode"
    initial_amplitude: float = 1.0
    forcing: str = "zero"
    forcing_amplitude: float = 0.0
    level: float = 0.0
    p: float = 4.0
    gamma: float | None = None
    diag_every: int = 10
    cfl_warn: float = 1.0
    cfl_max: float = 2.0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.T < 0:
            raise ValueError("T must be non-negative")
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.nu < 0 or self.level < 0:
            raise ValueError("nu and level must be non-negative")
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if self.diag_every < 1 or self.noise_refine < 1:
            raise ValueError("diag_every and noise_refine must be >= 1")

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def critical_exponent(self) -> float:
        """p_crit with 1/p_crit = 1 - alpha - beta/2 (inf when the right side is <= 0)."""
        s = 1 - self.alpha - self.beta / 2
        return 1 / s if s > 0 else math.inf

    @property
    def regularity(self) -> float:
        return 1 - self.beta if self.gamma is None else self.gamma

    @property
    def uniqueness_regime(self) -> bool:
        a, b = self.alpha, self.beta
        return b / 2 < a < 0.5 and b / 2 + a <= 1 - 1 / self.p + 1e-12

    @property
    def linear_regime(self) -> bool:
        return self.alpha < (self.regularity + 1) / 2 - 1 / self.p

    def flags(self) -> dict:
        return {"critical_exponent": self.critical_exponent, "uniqueness_regime": self.uniqueness_regime,
                "linear_regime": self.linear_regime, "gamma": self.regularity}

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**d)

    def with_(self, **kw) -> "SimulationConfig":
        return replace(self, **kw)


# --- initial data and forcing -------------------------------------------------

def _scaled(grid: TorusGrid):
    s = 2 * np.pi / grid.length
    x1, x2 = grid.coords
    return s * x1, s * x2


def initial_field(name: str, grid: TorusGrid, amplitude: float = 1.0, seed: int = 0) -> Field:
    """Named analytic initial data, or ``snapshot:<path>``."""
    if name.startswith("snapshot:"):
        from .io import read_snapshot
        snap = read_snapshot(name.split(":", 1)[1])
        if snap["n"] != grid.n:
            raise ValueError("snapshot resolution does not match the grid")
        return Field.from_values(grid, amplitude * snap["values"])
    x, y = _scaled(grid)
    if name == "single_mode":
        v = np.cos(x)
    elif name == "two_mode":
        v = np.cos(x) + 0.6 * np.sin(2 * x + y)
    elif name == "vortex_pair":
        v = np.exp(-4 * (1 - np.cos(x - 2)) - 4 * (1 - np.cos(y - np.pi))) - \
            np.exp(-4 * (1 - np.cos(x - 4)) - 4 * (1 - np.cos(y - np.pi)))
    elif name == "blob":
        v = np.exp(3 * (np.cos(x - np.pi) + np.cos(y - np.pi) - 2))
        v = v - v.mean()
    elif name == "random":
        v = random_bandlimited(grid, np.random.default_rng(seed), kmax=max(2, grid.band // 4), slope=2.0).values
    elif name == "zero":
        v = np.zeros_like(x)
    else:
        raise ValueError(f"unknown initial condition {name!r}")
    return Field.from_values(grid, amplitude * v)


def forcing_function(name: str, grid: TorusGrid, amplitude: float = 1.0, seed: int = 0) -> Callable[[float], Field]:
    """Named forcing f(t, x) as a callable of time, or ``snapshots:<dir>`` (piecewise constant)."""
    if name.startswith("snapshots:"):
        from .io import read_snapshot_sequence
        seq = read_snapshot_sequence(name.split(":", 1)[1])
        times = np.array([s["t"] for s in seq])
        frames = [Field.from_values(grid, amplitude * s["values"]) for s in seq]

        def f(t):
            i = max(0, int(np.searchsorted(times, t, side="right")) - 1)
            return frames[i]
        return f
    x, y = _scaled(grid)
    if name == "zero":
        zero = Field.zeros(grid)
        return lambda t: zero
    if name == "steady":
        base = Field.from_values(grid, amplitude * np.sin(x + 2 * y))
        return lambda t: base
    if name == "oscillating":
        shape = amplitude * np.cos(3 * x - y)
        return lambda t: Field.from_values(grid, math.cos(2 * t) * shape)
    if name == "random":
        base = random_bandlimited(grid, np.random.default_rng(seed + 7919), kmax=max(2, grid.band // 4)) * amplitude
        return lambda t: base
    raise ValueError(f"unknown forcing {name!r}")


# --- operators ----------------------------------------------------------------

def levelset_split(phi: Field, R: float) -> tuple[Field, Field]:
    """(low, high) with high = phi 1_{|phi| > R} and low = phi - high."""
    v = phi.values
    high = np.where(np.abs(v) > R, v, 0.0)
    return Field.from_values(phi.grid, v - high), Field.from_values(phi.grid, high)


def _banded_split(phi: Field, R: float) -> tuple[Field, Field]:
    # high part projected onto the retained band so both pieces stay resolved
    g = phi.grid
    _, high = levelset_split(phi, R)
    high = Field(g, hat=dealias(high.hat, g))
    return phi - high, high


class Velocity:
    """Physical samples of a divergence-free velocity restricted to the retained band."""

    def __init__(self, v: VectorField):
        g = v.grid
        self.grid = g
        self.field = v
        self.v1 = g.inverse(dealias(v.u1.hat, g))
        self.v2 = g.inverse(dealias(v.u2.hat, g))

    @property
    def sup(self) -> float:
        return float(np.max(np.hypot(self.v1, self.v2)))

    def flux(self, hat: np.ndarray) -> np.ndarray:
        return flux_divergence(hat, self.v1, self.v2, self.grid)


def gsqg_velocity(theta: Field, beta: float, delta_kernel: float = 0.0, mollifier: str = "gaussian") -> VectorField:
    g = theta.grid
    smoothing = mollifiers.lattice_symbol(g, delta_kernel, mollifier) if delta_kernel > 0 else None
    m1, m2 = biot_savart_multiplier(g, beta, smoothing)
    return VectorField(Field(g, hat=m1 * theta.hat), Field(g, hat=m2 * theta.hat), divergence_free=True)


def gsqg_nonlinearity(theta: Field, beta: float, delta_kernel: float = 0.0, mollifier: str = "gaussian") -> Field:
    """Dealiased div((K_beta^delta * theta) theta)."""
    u = Velocity(gsqg_velocity(theta, beta, delta_kernel, mollifier))
    return Field(theta.grid, hat=u.flux(theta.hat))


def check_divergence_free(b: VectorField, tol: float = 1e-10):
    div = np.abs(b.divergence_hat())
    k1, k2 = b.grid.wavenumbers
    scale = np.max(np.abs(k1 * b.u1.hat) + np.abs(k2 * b.u2.hat))
    if div.max() > tol * max(scale, 1e-300):
        raise SpectralError(f"drift is not divergence-free (max |n.b_hat| = {div.max():.3e})")


# --- state and stepping -------------------------------------------------------

@dataclass
class SimulationState:
    t: float
    theta: Field
    step: int = 0
    low: Field | None = None
    high: Field | None = None
    zeta: Field | None = None
    velocity: VectorField | None = None

    def tracked(self) -> dict:
        out = {"theta": self.theta}
        if self.low is not None:
            out["low"] = self.low
            out["high"] = self.high
        return out


class Model:
    """Operators fixed by a configuration: grid, noise spectrum, forcing, multipliers."""

    def __init__(self, config: SimulationConfig, forcing: Callable[[float], Field] | None = None,
                 zeta_forcing: Callable[[float], Field] | None = None):
        self.config = c = config
        self.grid = g = TorusGrid(c.n, c.length)
        cutoff = c.cutoff if c.noise else 0
        self.spectrum: NoiseSpectrum = build_spectrum(g, c.alpha, cutoff, c.delta_noise, c.mollifier)
        self.corrector = self.spectrum.c0
        self.stream = NoiseStream(c.seed, c.realization)
        self.data_symbol = mollifiers.lattice_symbol(g, c.delta_data, c.mollifier)
        raw = forcing or forcing_function(c.forcing, g, c.forcing_amplitude, c.seed)
        self.forcing = (lambda t: self._smooth(raw(t))) if c.delta_data > 0 else raw
        self.zeta_forcing = zeta_forcing or self.forcing
        self.kernel_symbol = mollifiers.lattice_symbol(g, c.delta_kernel, c.mollifier) if c.delta_kernel > 0 else None
        self.m1, self.m2 = biot_savart_multiplier(g, c.beta, self.kernel_symbol)
        k2 = g.kmod**2
        self.diffusivity = self.corrector + c.nu
        self.decay = np.exp(-self.diffusivity * k2 * c.dt)
        self.k2 = k2
        self._warned = False

    def _smooth(self, f: Field) -> Field:
        return Field(f.grid, hat=f.hat * self.data_symbol)

    def initial_state(self, theta0: Field | None = None, zeta0: Field | None = None) -> SimulationState:
        c = self.config
        theta = theta0 if theta0 is not None else initial_field(c.initial, self.grid, c.initial_amplitude, c.seed)
        if c.delta_data > 0:
            theta = self._smooth(theta)
        state = SimulationState(0.0, theta, zeta=zeta0)
        if c.level > 0:
            state.low, state.high = _banded_split(theta, c.level)
        return state

    def velocity(self, theta: Field) -> Velocity:
        g = self.grid
        return Velocity(VectorField(Field(g, hat=self.m1 * theta.hat), Field(g, hat=self.m2 * theta.hat), True))

    def cfl(self, speed: float) -> float:
        c = self.config
        return c.dt * speed * c.n / c.length

    def guard(self, speed: float, t: float):
        number = self.cfl(speed)
        if number > self.config.cfl_max:
            raise CFLError(f"CFL number {number:.3f} exceeds {self.config.cfl_max} "
                           f"(dt={self.config.dt}, |u|_inf={speed:.3g}); reduce dt")
        if number > self.config.cfl_warn and not self._warned:
            self._warned = True
            log.warning("CFL number %.3f above advisory %.2f at t=%.4g", number, self.config.cfl_warn, t)

    def split_forcing(self, f: Field) -> tuple[Field, Field]:
        return _banded_split(f, self.config.level)

    def increment(self, step: int):
        return sample_increment(self.spectrum, self.config.dt, self.stream, step, self.config.noise_refine)


def step_ito(state: SimulationState, model: Model, increment=None, drift: VectorField | None = None) -> SimulationState:
    """One Euler-Maruyama step (integrating factor for the (c + nu) Laplacian when selected)."""
    c = model.config
    g = model.grid
    dt = c.dt
    inc = increment if increment is not None else model.increment(state.step)
    u = model.velocity(state.theta)
    model.guard(u.sup, state.t)
    if model.spectrum.n_modes:
        w = Velocity(noise_velocity(model.spectrum, inc))
    else:
        w = None
    f = model.forcing(state.t)
    forcing = {"theta": f.hat}
    if state.low is not None:
        f_low, f_high = model.split_forcing(f)
        forcing["low"], forcing["high"] = f_low.hat, f_high.hat

    def advance(hat, vel, f_hat):
        rhs = f_hat.copy()
        if vel is not None:
            rhs = rhs - vel.flux(hat)
        noise = w.flux(hat) if w is not None else 0.0
        if c.scheme == "ito-integrating-factor":
            return model.decay * (hat + dt * rhs - noise)
        return hat + dt * (rhs - model.diffusivity * model.k2 * hat) - noise

    adv = u if c.nonlinear else None
    new = {name: Field(g, hat=advance(fld.hat, adv, forcing[name])) for name, fld in state.tracked().items()}
    zeta = state.zeta
    if zeta is not None:
        b = Velocity(drift) if drift is not None else u
        if drift is not None:
            model.guard(b.sup, state.t)
        zeta = Field(g, hat=advance(zeta.hat, b, model.zeta_forcing(state.t).hat))
    return SimulationState(state.t + dt, new["theta"], state.step + 1, new.get("low"), new.get("high"),
                           zeta, u.field)


def step_deterministic_rk4(state: SimulationState, model: Model) -> SimulationState:
    """Classical RK4 for d theta/dt = -N(theta) + nu Lap theta + f (noise must be off)."""
    c = model.config
    if model.spectrum.n_modes:
        raise ValueError("deterministic-rk4 requires the noise to be disabled")
    g = model.grid
    dt, t = c.dt, state.t
    visc = -c.nu * model.k2
    names = list(state.tracked())

    def rhs(hats, time):
        u = model.velocity(Field(g, hat=hats["theta"]))
        model.guard(u.sup, time)
        f = model.forcing(time)
        fh = {"theta": f.hat}
        if "low" in hats:
            lo, hi = model.split_forcing(f)
            fh["low"], fh["high"] = lo.hat, hi.hat
        out = {}
        for k, h in hats.items():
            r = fh[k] + visc * h
            if c.nonlinear:
                r = r - u.flux(h)
            out[k] = r
        return out

    y0 = {k: v.hat for k, v in state.tracked().items()}
    k1 = rhs(y0, t)
    k2 = rhs({k: y0[k] + 0.5 * dt * k1[k] for k in names}, t + 0.5 * dt)
    k3 = rhs({k: y0[k] + 0.5 * dt * k2[k] for k in names}, t + 0.5 * dt)
    k4 = rhs({k: y0[k] + dt * k3[k] for k in names}, t + dt)
    y1 = {k: y0[k] + dt / 6 * (k1[k] + 2 * k2[k] + 2 * k3[k] + k4[k]) for k in names}
    return SimulationState(t + dt, Field(g, hat=y1["theta"]), state.step + 1,
                           Field(g, hat=y1["low"]) if "low" in y1 else None,
                           Field(g, hat=y1["high"]) if "high" in y1 else None, state.zeta)


def linear_transport_step(state: SimulationState, drift: VectorField, model: Model, increment=None) -> SimulationState:
    """Ito step of d zeta = [-div(b zeta) + c Lap zeta + f] dt - noise transport, zeta only."""
    if state.zeta is None:
        raise ValueError("state carries no passive scalar")
    check_divergence_free(drift)
    c = model.config
    g = model.grid
    inc = increment if increment is not None else model.increment(state.step)
    b = Velocity(drift)
    model.guard(b.sup, state.t)
    hat = state.zeta.hat
    rhs = model.zeta_forcing(state.t).hat - b.flux(hat)
    noise = Velocity(noise_velocity(model.spectrum, inc)).flux(hat) if model.spectrum.n_modes else 0.0
    if c.scheme == "ito-integrating-factor":
        new = model.decay * (hat + c.dt * rhs - noise)
    else:
        new = hat + c.dt * (rhs - model.diffusivity * model.k2 * hat) - noise
    return replace(state, t=state.t + c.dt, step=state.step + 1, zeta=Field(g, hat=new))


# --- diagnostics and driver ---------------------------------------------------

DIAGNOSTIC_COLUMNS = ("time", "L1", "L2", "Lp", "Linf", "Hneg1bh", "Hba", "H0")


def diagnostics(theta: Field, config: SimulationConfig) -> dict:
    centred = Field(theta.grid, hat=np.where(theta.grid.kmod == 0, 0, theta.hat))
    b, a = config.beta, config.alpha
    return {
        "L1": lebesgue_norm(theta, 1),
        "L2": lebesgue_norm(theta, 2),
        "Lp": lebesgue_norm(theta, config.p),
        "Linf": lebesgue_norm(theta, math.inf),
        "Hneg1bh": sobolev_norm(centred, b / 2 - 1),
        "Hba": sobolev_norm(centred, b / 2 - a),
        "H0": sobolev_norm(centred, 0),
    }


@dataclass
class Trajectory:
    config: SimulationConfig
    times: list = field(default_factory=list)
    series: dict = field(default_factory=lambda: {k: [] for k in DIAGNOSTIC_COLUMNS[1:]})
    extra: dict = field(default_factory=dict)
    snapshots: list = field(default_factory=list)
    final: SimulationState | None = None
    steps: int = 0
    corrector: float = 0.0

    def record(self, state: SimulationState, snapshot: bool = False):
        self.times.append(state.t)
        for k, v in diagnostics(state.theta, self.config).items():
            self.series[k].append(v)
        if state.low is not None:
            resid = state.theta - state.low - state.high
            self.extra.setdefault("decomposition_residual", []).append(
                float(np.max(np.abs(resid.values)) / max(np.max(np.abs(state.theta.values)), 1e-300)))
            self.extra.setdefault("high_Lp", []).append(lebesgue_norm(state.high, self.config.p))
            self.extra.setdefault("mean", []).append(state.theta.mean)
        if state.zeta is not None:
            self.extra.setdefault("zeta_L1", []).append(lebesgue_norm(state.zeta, 1))
            self.extra.setdefault("zeta_L2", []).append(lebesgue_norm(state.zeta, 2))
        if snapshot:
            self.snapshots.append((state.t, state.theta.values.copy()))

    def array(self, key: str) -> np.ndarray:
        return np.asarray(self.series.get(key, self.extra.get(key)))


def run_simulation(config: SimulationConfig, theta0: Field | None = None, snapshots: bool = False,
                   zeta0: Field | None = None, drift: Callable[[float, int], VectorField] | None = None,
                   forcing: Callable[[float], Field] | None = None,
                   zeta_forcing: Callable[[float], Field] | None = None,
                   callback: Callable[[SimulationState, Model], None] | None = None) -> Trajectory:
    """Integrate to T, recording diagnostics every ``diag_every`` steps and at the end.

    ``drift(t, step)`` supplies the velocity for the passive scalar; when omitted
    zeta is carried by the gSQG velocity itself.
    """
    model = Model(config, forcing, zeta_forcing)
    state = model.initial_state(theta0, zeta0)
    traj = Trajectory(config, corrector=model.corrector)
    traj.record(state, snapshots)
    if callback:
        callback(state, model)
    rk4 = config.scheme == "deterministic-rk4"
    for i in range(config.steps):
        try:
            if rk4:
                state = step_deterministic_rk4(state, model)
            else:
                b = drift(state.t, state.step) if drift is not None else None
                state = step_ito(state, model, drift=b)
        except (CFLError, SpectralError, FloatingPointError) as exc:
            raise SimulationError(str(exc), state.t) from exc
        if not np.isfinite(state.theta.hat[0, 0]):
            raise SimulationError("non-finite state", state.t)
        last = i == config.steps - 1
        if (i + 1) % config.diag_every == 0 or last:
            traj.record(state, snapshots)
        if callback:
            callback(state, model)
    traj.final = state
    traj.steps = config.steps
    return traj
