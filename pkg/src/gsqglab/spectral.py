"""Spectral algebra on the periodic square [0, L)^2.

Scalar fields are stored by their real-FFT coefficients, normalised so that

    f_hat(n) = N^-2 * sum_j f(x_j) exp(-i n . x_j),

which makes the discrete Parseval identity read ``||f||_2^2 = L^2 sum |f_hat|^2``
over the full lattice.  Axis 0 of a physical array is x1, axis 1 is x2.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft


class SpectralError(ValueError):
    """Invalid input to a spectral operation."""


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid of ``n`` points per axis on a torus of side ``length``."""

    n: int
    length: float = 2 * np.pi
    dealias_fraction: float = 2.0 / 3.0

    def __post_init__(self):
        if self.n < 8 or self.n % 2:
            raise SpectralError(f"resolution must be even and >= 8, got {self.n}")
        if not self.length > 0:
            raise SpectralError(f"side length must be positive, got {self.length}")
        if not 0 < self.dealias_fraction <= 1:
            raise SpectralError("dealias_fraction must lie in (0, 1]")

    @cached_property
    def dk(self) -> float:
        return 2 * np.pi / self.length

    @cached_property
    def spacing(self) -> float:
        return self.length / self.n

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.arange(self.n) * self.spacing
        return np.meshgrid(x, x, indexing="ij")

    @cached_property
    def index(self) -> tuple[np.ndarray, np.ndarray]:
        """Integer wavenumber indices (j1, j2) in rfft layout."""
        j1 = np.fft.fftfreq(self.n, 1.0 / self.n)
        j2 = np.fft.rfftfreq(self.n, 1.0 / self.n)
        J1, J2 = np.meshgrid(j1, j2, indexing="ij")
        return J1, J2

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, np.ndarray]:
        J1, J2 = self.index
        return J1 * self.dk, J2 * self.dk

    @cached_property
    def kmod(self) -> np.ndarray:
        k1, k2 = self.wavenumbers
        return np.hypot(k1, k2)

    @cached_property
    def weights(self) -> np.ndarray:
        """Multiplicity of each rfft coefficient in the full lattice sum."""
        w = np.full(self.index[0].shape, 2.0)
        w[:, 0] = 1.0
        w[:, -1] = 1.0
        return w

    @cached_property
    def nyquist(self) -> np.ndarray:
        J1, J2 = self.index
        return (np.abs(J1) == self.n // 2) | (J2 == self.n // 2)

    @cached_property
    def retained(self) -> np.ndarray:
        """Boolean mask of modes kept by the dealiasing filter."""
        J1, J2 = self.index
        cut = self.dealias_fraction * (self.n // 2)
        return (np.abs(J1) <= cut) & (np.abs(J2) <= cut)

    @property
    def band(self) -> int:
        """Largest integer index inside the retained band."""
        return int(np.floor(self.dealias_fraction * (self.n // 2)))

    @property
    def cell_area(self) -> float:
        return self.spacing**2

    def forward(self, values: np.ndarray) -> np.ndarray:
        return sfft.rfft2(values) / self.n**2

    def inverse(self, hat: np.ndarray) -> np.ndarray:
        return sfft.irfft2(hat * self.n**2, s=(self.n, self.n))

    def multiplier(self, fn, zero_mean: bool = True) -> np.ndarray:
        """Evaluate a radial symbol ``fn(|n|)`` on the lattice, optionally 0 at n = 0."""
        k = self.kmod
        out = np.zeros_like(k)
        nz = k > 0
        out[nz] = fn(k[nz])
        if not zero_mean:
            out[~nz] = fn(k[~nz])
        return out


class Field:
    """Real scalar field with lazily synchronised physical and spectral views."""

    __slots__ = ("grid", "_hat", "_values")

    def __init__(self, grid: TorusGrid, hat: np.ndarray | None = None, values: np.ndarray | None = None):
        if hat is None and values is None:
            raise SpectralError("Field needs spectral or physical data")
        self.grid = grid
        self._hat = hat
        self._values = values

    @classmethod
    def from_values(cls, grid: TorusGrid, values) -> "Field":
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.n, grid.n):
            values = np.broadcast_to(values, (grid.n, grid.n)).copy()
        return cls(grid, values=values)

    @classmethod
    def from_hat(cls, grid: TorusGrid, hat) -> "Field":
        return cls(grid, hat=np.asarray(hat, dtype=complex))

    @classmethod
    def from_function(cls, grid: TorusGrid, fn) -> "Field":
        x1, x2 = grid.coords
        return cls.from_values(grid, fn(x1, x2))

    @classmethod
    def zeros(cls, grid: TorusGrid) -> "Field":
        return cls(grid, values=np.zeros((grid.n, grid.n)))

    @property
    def hat(self) -> np.ndarray:
        if self._hat is None:
            self._hat = self.grid.forward(self._values)
        return self._hat

    @property
    def values(self) -> np.ndarray:
        if self._values is None:
            self._values = self.grid.inverse(self._hat)
        return self._values

    @property
    def mean(self) -> float:
        return float(self.hat[0, 0].real)

    def full_spectrum(self) -> np.ndarray:
        """Coefficients on the full N x N lattice (fft2 layout)."""
        return sfft.fft2(self.values) / self.grid.n**2

    def _check(self, other: "Field"):
        if other.grid != self.grid:
            raise SpectralError("fields live on different grids")

    def __add__(self, other):
        if isinstance(other, Field):
            self._check(other)
            return Field(self.grid, hat=self.hat + other.hat)
        return Field(self.grid, values=self.values + other)

    def __sub__(self, other):
        if isinstance(other, Field):
            self._check(other)
            return Field(self.grid, hat=self.hat - other.hat)
        return Field(self.grid, values=self.values - other)

    def __mul__(self, scalar):
        return Field(self.grid, hat=self.hat * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return Field(self.grid, hat=-self.hat)

    def __repr__(self):
        return f"Field(N={self.grid.n}, L={self.grid.length:g}, mean={self.mean:.3g})"


@dataclass
class VectorField:
    u1: Field
    u2: Field
    divergence_free: bool = field(default=False)

    @property
    def grid(self) -> TorusGrid:
        return self.u1.grid

    def divergence_hat(self) -> np.ndarray:
        k1, k2 = self.grid.wavenumbers
        return 1j * (k1 * self.u1.hat + k2 * self.u2.hat)

    def sup_norm(self) -> float:
        return float(np.max(np.hypot(self.u1.values, self.u2.values)))


def _finite(f: Field):
    if not np.all(np.isfinite(f.hat)):
        raise SpectralError("field has non-finite spectral coefficients")


def fractional_laplacian(f: Field, s: float) -> Field:
    """Apply Lambda^s = |n|^s; the mean is removed whenever s != 0."""
    if not -3 <= s <= 3:
        raise SpectralError(f"exponent {s} outside [-3, 3]")
    _finite(f)
    if s == 0:
        return Field(f.grid, hat=f.hat.copy())
    return Field(f.grid, hat=f.grid.multiplier(lambda k: k**s) * f.hat)


def gradient(f: Field) -> VectorField:
    g = f.grid
    k1, k2 = g.wavenumbers
    hat = np.where(g.nyquist, 0, f.hat)
    return VectorField(Field(g, hat=1j * k1 * hat), Field(g, hat=1j * k2 * hat))


def laplacian(f: Field) -> Field:
    return Field(f.grid, hat=-(f.grid.kmod**2) * f.hat)


def biot_savart_multiplier(grid: TorusGrid, beta: float, smoothing: np.ndarray | None = None):
    """Spectral symbols (m1, m2) with u_hat = (m1, m2) * theta_hat."""
    k1, k2 = grid.wavenumbers
    power = grid.multiplier(lambda k: k ** (beta - 2.0))
    power[grid.nyquist] = 0.0
    if smoothing is not None:
        power = power * smoothing
    # -i * (-k2, k1) * |k|^(beta-2)
    return 1j * k2 * power, -1j * k1 * power


def biot_savart_velocity(theta: Field, beta: float, smoothing: np.ndarray | None = None) -> VectorField:
    """Velocity u = -grad^perp Lambda^(beta-2) theta, mean mapped to zero."""
    if not 0 < beta < 1:
        raise SpectralError(f"beta must lie in (0, 1), got {beta}")
    _finite(theta)
    m1, m2 = biot_savart_multiplier(theta.grid, beta, smoothing)
    g = theta.grid
    return VectorField(Field(g, hat=m1 * theta.hat), Field(g, hat=m2 * theta.hat), divergence_free=True)


def sobolev_norm(f: Field, s: float, homogeneous: bool = True) -> float:
    """Homogeneous H^s norm (or inhomogeneous with weight (1+|n|^2)^s)."""
    g = f.grid
    hat = f.hat
    power = np.abs(hat) ** 2 * g.weights
    if not homogeneous:
        return float(np.sqrt(g.length**2 * np.sum((1 + g.kmod**2) ** s * power)))
    if s < 0 and abs(hat[0, 0]) > 1e-12 * max(1.0, np.max(np.abs(hat))):
        raise SpectralError("homogeneous norm with negative exponent is ill-defined for a field with nonzero mean")
    w = g.multiplier(lambda k: k ** (2 * s))
    return float(np.sqrt(g.length**2 * np.sum(w * power)))


def lebesgue_norm(f: Field, q: float) -> float:
    if q < 1:
        raise SpectralError(f"Lebesgue exponent must be >= 1, got {q}")
    v = np.abs(f.values)
    if np.isinf(q):
        return float(v.max())
    return float((np.sum(v**q) * f.grid.cell_area) ** (1.0 / q))


def dealias(hat: np.ndarray, grid: TorusGrid) -> np.ndarray:
    return np.where(grid.retained, hat, 0)


def dealias_product(a: Field, b: Field) -> Field:
    """2/3-rule product: inputs and result restricted to the retained band."""
    if a.grid != b.grid:
        raise SpectralError("fields live on different grids")
    g = a.grid
    pa = g.inverse(dealias(a.hat, g))
    pb = g.inverse(dealias(b.hat, g))
    return Field(g, hat=dealias(g.forward(pa * pb), g))


def random_bandlimited(grid: TorusGrid, rng: np.random.Generator, kmax: int | None = None,
                       slope: float = 1.0, zero_mean: bool = True) -> Field:
    """Gaussian random field with spectrum ~ |n|^-slope, supported on integer |j| <= kmax."""
    kmax = grid.band if kmax is None else kmax
    J1, J2 = grid.index
    jj = np.hypot(J1, J2)
    mask = (np.abs(J1) <= kmax) & (np.abs(J2) <= kmax) & ~grid.nyquist
    amp = np.where(mask & (jj > 0), (1 + jj) ** (-slope), 0.0)
    if not zero_mean:
        amp[0, 0] = 1.0
    hat = amp * (rng.standard_normal(amp.shape) + 1j * rng.standard_normal(amp.shape))
    # round-trip through physical space enforces Hermitian symmetry of columns 0 and N/2
    values = grid.inverse(hat)
    values /= max(np.max(np.abs(values)), 1e-300)
    return Field.from_values(grid, values)
