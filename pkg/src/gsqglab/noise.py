"""Incompressible Kraichnan transport noise on the torus.

The noise is synthesised from real trigonometric modes, one pair per
half-lattice wavevector k:

    W(x) = sum_k a(k) e(k) [cos(k.x) B^c_k + sin(k.x) B^s_k],
    a(k) = sqrt(2 q(k) m(k)),  q(k) = (1 + |k|^2)^(-1-alpha),  e(k) = k^perp / |k|,

with m(k) = rho_hat(delta k)^2 the optional mollification weight.  The
covariance is Q(z) = sum_k a(k)^2 e(k) e(k)^T cos(k.z) and the Ito corrector
c = Tr Q(0) / 4.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import mollifiers
from .spectral import Field, SpectralError, TorusGrid, VectorField, dealias


def half_lattice(cutoff: int) -> np.ndarray:
    """Integer wavevectors 0 < |j| <= cutoff with one representative per +-j pair.

    Sorted by (|j|^2, j2, j1): a spectrum with a smaller cutoff is a prefix of a
    larger one, which keeps noise draws shared between them.
    """
    if cutoff < 1:
        return np.zeros((0, 2), dtype=int)
    r = np.arange(-cutoff, cutoff + 1)
    J1, J2 = np.meshgrid(r, r, indexing="ij")
    J1, J2 = J1.ravel(), J2.ravel()
    r2 = J1**2 + J2**2
    keep = (r2 > 0) & (r2 <= cutoff**2) & ((J2 > 0) | ((J2 == 0) & (J1 > 0)))
    J1, J2, r2 = J1[keep], J2[keep], r2[keep]
    order = np.lexsort((J1, J2, r2))
    return np.stack([J1[order], J2[order]], axis=1)


@dataclass(frozen=True, eq=False)
class NoiseSpectrum:
    grid: TorusGrid
    alpha: float
    cutoff: int
    delta: float = 0.0
    mollifier: str = "gaussian"
    modes: np.ndarray = field(init=False, repr=False)
    k: np.ndarray = field(init=False, repr=False)
    q: np.ndarray = field(init=False, repr=False)
    weight: np.ndarray = field(init=False, repr=False)
    amplitude: np.ndarray = field(init=False, repr=False)
    tangent: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        modes = half_lattice(self.cutoff)
        k = modes * self.grid.dk
        kk = np.hypot(k[:, 0], k[:, 1])
        q = (1.0 + kk**2) ** (-1.0 - self.alpha)
        if self.delta > 0:
            weight = mollifiers.profile(self.mollifier)(self.delta * kk) ** 2
        else:
            weight = np.ones_like(kk)
        tangent = np.stack([-k[:, 1], k[:, 0]], axis=1) / np.where(kk > 0, kk, 1.0)[:, None]
        for name, val in [("modes", modes), ("k", k), ("q", q), ("weight", weight),
                          ("amplitude", np.sqrt(2.0 * q * weight)), ("tangent", tangent)]:
            object.__setattr__(self, name, val)

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    @property
    def c0(self) -> float:
        return ito_corrector(self)

    def summary(self) -> dict:
        return {
            "alpha": self.alpha,
            "cutoff": self.cutoff,
            "delta": self.delta,
            "mollifier": self.mollifier,
            "c0": self.c0,
            "mode_count": self.n_modes,
        }


def build_spectrum(grid: TorusGrid, alpha: float, cutoff: int, delta: float = 0.0,
                   mollifier: str = "gaussian") -> NoiseSpectrum:
    if not 0 < alpha < 1:
        raise SpectralError(f"alpha must lie in (0, 1), got {alpha}")
    if cutoff < 0:
        raise SpectralError("cutoff must be non-negative")
    if cutoff > grid.n / 3 or cutoff > grid.band:
        raise SpectralError(f"cutoff {cutoff} exceeds the dealiased band (N/3 = {grid.n / 3:.2f})")
    if delta < 0:
        raise SpectralError("mollification scale must be >= 0")
    return NoiseSpectrum(grid, alpha, int(cutoff), float(delta), mollifier)


def ito_corrector(spec: NoiseSpectrum) -> float:
    """c = (1/4) sum over the full symmetric lattice of q m, i.e. Tr Q(0) / 4."""
    # each half-lattice mode stands for the pair +-k
    return float(0.5 * np.sum(spec.q * spec.weight))


def evaluate_covariance(spec: NoiseSpectrum, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    c = np.cos(spec.k @ z)
    w = spec.amplitude**2 * c
    e = spec.tangent
    return np.einsum("m,mi,mj->ij", w, e, e)


@dataclass
class NoiseStream:
    """Counter-based source of Brownian increments keyed by (seed, realization, step).

    With ``refine = r`` each step's increment is the sum of r sub-increments drawn
    at counters r*step .. r*step + r - 1, so runs at dt and dt/r see the same path.
    """

    seed: int = 0
    realization: int = 0

    def normals(self, counter: int, count: int) -> np.ndarray:
        bitgen = np.random.Philox(key=[self.seed % 2**64, self.realization % 2**64],
                                  counter=[0, counter, 0, 0])
        return np.random.Generator(bitgen).standard_normal((count, 2))


@dataclass
class NoiseIncrement:
    dt: float
    draws: np.ndarray  # (n_modes, 2): cosine and sine channels, already scaled by sqrt(dt)
    step: int = 0


def sample_increment(spec: NoiseSpectrum, dt: float, stream: NoiseStream, step: int,
                     refine: int = 1) -> NoiseIncrement:
    if dt < 0:
        raise SpectralError("time step must be non-negative")
    draws = np.zeros((spec.n_modes, 2))
    if dt > 0 and spec.n_modes:
        sub = np.sqrt(dt / refine)
        for i in range(refine):
            draws += sub * stream.normals(step * refine + i, spec.n_modes)
    return NoiseIncrement(dt, draws, step)


def _scatter(spec: NoiseSpectrum, coeff: np.ndarray) -> np.ndarray:
    """Place full-lattice coefficients c_k (and conj at -k) into an rfft array."""
    n = spec.grid.n
    hat = np.zeros((n, n // 2 + 1), dtype=complex)
    j1, j2 = spec.modes[:, 0], spec.modes[:, 1]
    hat[j1 % n, j2] = coeff
    axis = j2 == 0
    hat[(-j1[axis]) % n, 0] = np.conj(coeff[axis])
    return hat


def noise_velocity(spec: NoiseSpectrum, inc: NoiseIncrement) -> VectorField:
    """The increment W(t + dt) - W(t) as a divergence-free vector field."""
    if inc.draws.shape != (spec.n_modes, 2):
        raise SpectralError("increment was not drawn for this spectrum")
    g = spec.grid
    c = 0.5 * spec.amplitude * (inc.draws[:, 0] - 1j * inc.draws[:, 1])
    u1 = Field(g, hat=_scatter(spec, c * spec.tangent[:, 0]))
    u2 = Field(g, hat=_scatter(spec, c * spec.tangent[:, 1]))
    return VectorField(u1, u2, divergence_free=True)


def flux_divergence(hat: np.ndarray, v1: np.ndarray, v2: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Dealiased spectral coefficients of div(v X) for divergence-free physical v."""
    x = grid.inverse(dealias(hat, grid))
    k1, k2 = grid.wavenumbers
    f1 = grid.forward(v1 * x)
    f2 = grid.forward(v2 * x)
    return dealias(1j * (k1 * f1 + k2 * f2), grid)


def transport_term(theta: Field, spec: NoiseSpectrum, inc: NoiseIncrement,
                   velocity: VectorField | None = None) -> Field:
    """sum_k sigma_k . grad(theta) dB^k, assembled pseudo-spectrally (zero mean)."""
    if theta.grid != spec.grid:
        raise SpectralError("field and spectrum live on different grids")
    w = noise_velocity(spec, inc) if velocity is None else velocity
    g = spec.grid
    w1 = g.inverse(dealias(w.u1.hat, g))
    w2 = g.inverse(dealias(w.u2.hat, g))
    return Field(g, hat=flux_divergence(theta.hat, w1, w2, g))


def quadratic_variation_density(theta: Field, spec: NoiseSpectrum, chunk: int = 256) -> np.ndarray:
    """Pointwise sum over modes and channels of (sigma . grad theta)^2 per unit time."""
    g = theta.grid
    k1, k2 = g.wavenumbers
    hat = np.where(g.nyquist, 0, theta.hat)
    d1 = g.inverse(1j * k1 * hat)
    d2 = g.inverse(1j * k2 * hat)
    x1, x2 = g.coords
    out = np.zeros_like(d1)
    for s in range(0, spec.n_modes, chunk):
        sl = slice(s, s + chunk)
        kk, e, a = spec.k[sl], spec.tangent[sl], spec.amplitude[sl]
        phase = kk[:, 0, None, None] * x1 + kk[:, 1, None, None] * x2
        proj = e[:, 0, None, None] * d1 + e[:, 1, None, None] * d2
        sc = a[:, None, None] * proj
        out += np.sum((sc * np.cos(phase)) ** 2 + (sc * np.sin(phase)) ** 2, axis=0)
    return out
