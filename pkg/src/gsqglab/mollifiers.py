"""Radial Fourier profiles of smooth mollifiers, normalised to 1 at the origin."""
from __future__ import annotations

import numpy as np


def gaussian(r):
    return np.exp(-0.5 * np.asarray(r, dtype=float) ** 2)


def _psi(t, power):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos] ** power)
    return out


def smooth_cutoff(r, power: int = 1):
    """C-infinity cutoff: 1 on [0, 1], 0 on [2, inf), monotone in between.

    Built as psi(2 - r) / (psi(2 - r) + psi(r - 1)) with psi(t) = exp(-1/t^power).
    Different ``power`` values give distinct admissible transition shapes.
    """
    r = np.abs(np.asarray(r, dtype=float))
    a = _psi(2.0 - r, power)
    b = _psi(r - 1.0, power)
    return a / (a + b)


PROFILES = {
    "gaussian": gaussian,
    "cutoff": smooth_cutoff,
    "cutoff2": lambda r: smooth_cutoff(r, power=2),
}

# support radius of each profile (inf when not compactly supported)
SUPPORT = {"gaussian": np.inf, "cutoff": 2.0, "cutoff2": 2.0}


def profile(name: str):
    try:
        return PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown mollifier profile {name!r}; choose from {sorted(PROFILES)}") from None


def lattice_symbol(grid, delta: float, name: str = "gaussian") -> np.ndarray:
    """rho_hat(delta * |n|) sampled on a grid's rfft lattice (1 everywhere when delta = 0)."""
    if delta <= 0:
        return np.ones_like(grid.kmod)
    return profile(name)(delta * grid.kmod)
