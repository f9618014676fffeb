"""Spectral symbol of the noise-induced term in the evolution of the H^(beta/2-1) norm.

For a difference of solutions xi, the Kraichnan noise contributes
<kappa^delta * xi, xi> = int F^delta(n) |xi_hat(n)|^2 dn with

    F^delta(n) = int <n-k>^(-2-2 alpha) |P^perp_(n-k) n|^2 (G^delta(k) - G^delta(n)) dk,
    G^delta(n) = (2 pi)^-1 chi_hat(delta |n|)^2 |n|^(beta-2).

The sign is that of the Fourier symbol of Tr((Q(0) - Q(z)) D^2 G^delta(z)); the
Hessian contributes a factor -n (x) n.  Using

    int <m>^(-2-2 alpha) |P^perp_m n|^2 dm = pi |n|^2 / (2 alpha),

the n-term is closed form and only the k-term needs quadrature, done in polar
coordinates centred on the singularity of G at k = 0.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.integrate import quad

from . import mollifiers
from .spectral import Field


class QuadratureError(RuntimeError):
    def __init__(self, message, value=np.nan, error=np.nan):
        super().__init__(f"{message} (partial value {value:.6g}, achieved error {error:.3g})")
        self.value = value
        self.error = error


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class MollifierSpec:
    delta: float
    profile: str = "cutoff"

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("mollifier scale delta must be positive")
        if mollifiers.SUPPORT[self.profile] != 2.0:
            raise ValueError("coercivity mollifiers need chi_hat = 1 on [0,1] and 0 beyond 2")

    def __call__(self, r):
        return mollifiers.profile(self.profile)(self.delta * np.asarray(r, dtype=float))

    @property
    def support(self) -> float:
        return 2.0 / self.delta


@dataclass
class QuadResult:
    value: float
    error: float
    evaluations: int = 0


def _radius(n) -> float:
    n = np.atleast_1d(np.asarray(n, dtype=float))
    return float(np.hypot(n[0], n[1])) if n.size == 2 else float(abs(n[0]))


def green_multiplier(n, beta: float, m: MollifierSpec | None = None):
    """(2 pi)^-1 chi_hat(delta |n|)^2 |n|^(beta-2); the bare symbol when m is None."""
    n = np.asarray(n, dtype=float)
    r = np.hypot(n[..., 0], n[..., 1]) if n.ndim and n.shape[-1] == 2 else np.abs(n)
    if np.any(r == 0):
        if m is None:
            raise ZeroDivisionError("Green multiplier is singular at n = 0")
    with np.errstate(divide="ignore"):
        g = r ** (beta - 2.0) / (2 * np.pi)
    if m is not None:
        g = g * m(r) ** 2
    return g


def _vector(n) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    return np.array([n, 0.0]) if n.ndim == 0 else n


def f_delta(n, alpha: float, beta: float, m: MollifierSpec | None, tol: float = 1e-4,
            r_max: float | None = None, limit: int = 200) -> QuadResult:
    """F^delta(n) by nested adaptive quadrature; m = None gives the unmollified F(n).

    The k-integral is truncated at |k| = min(r_max, 2/delta) with a rigorous tail
    bound added to the error estimate.
    """
    n = _vector(n)
    r = float(np.hypot(*n))
    if r == 0:
        return QuadResult(0.0, 0.0)
    r_max = 1e3 * max(1.0, r) if r_max is None else r_max
    reach = r_max if m is None else min(r_max, m.support)
    tail = 0.0
    if m is None or m.support > r_max:
        # <n-k>^(-2-2a) |P n|^2 G(k) <= |n|^2 R^(beta-2) / 2pi * <n-k>^(-2-2a) outside |k| = R
        d = max(r_max - r, 0.0)
        tail = r**2 * r_max ** (beta - 2) / (2 * np.pi) * np.pi * (1 + d**2) ** (-alpha) / alpha

    phi_n = float(np.arctan2(n[1], n[0]))
    n1, n2 = n
    chi = (lambda rho: 1.0) if m is None else (lambda rho: float(m(rho)) ** 2)
    count = [0]
    inner_err = [0.0]
    a2 = -1.0 - alpha

    def angular(rho):
        def g(phi):
            c, s = np.cos(phi), np.sin(phi)
            k1, k2 = rho * c, rho * s
            m1, m2 = n1 - k1, n2 - k2
            mm = m1 * m1 + m2 * m2
            cross = n1 * k2 - n2 * k1
            if mm == 0.0:
                # limit along the ray through n: |n|^2 (1 + cos) / 2 with cos = 1
                return r * r
            return (1.0 + mm) ** a2 * cross * cross / mm

        # integrate from the direction of n so the only kink sits at the endpoints
        val, err = quad(g, phi_n, phi_n + 2 * np.pi, epsabs=tol * 1e-3, epsrel=1e-10, limit=limit)
        count[0] += 1
        inner_err[0] = max(inner_err[0], err)
        return val

    # rho = s^(1/beta) absorbs the rho^(beta-1) singularity of G(k) rho d rho
    inv_b = 1.0 / beta

    def radial(s):
        rho = s**inv_b
        return chi(rho) * angular(rho)

    s_max = reach**beta
    pts = [x for x in (r**beta, (0.5 * r) ** beta, (2 * r) ** beta) if 0 < x < s_max]
    if m is not None:
        pts += [x for x in ((1.0 / m.delta) ** beta,) if 0 < x < s_max]
    pref = 1.0 / (2 * np.pi * beta)
    val, err = quad(radial, 0.0, s_max, points=sorted(set(pts)) or None, epsabs=tol / (4 * pref),
                    epsrel=1e-10, limit=limit)
    k_term = pref * val
    n_term = float(green_multiplier(r, beta, m)) * np.pi * r * r / (2 * alpha)
    error = pref * (err + inner_err[0] * s_max) + tail
    value = k_term - n_term
    if not error <= tol:
        raise QuadratureError("f_delta did not reach tolerance", value, error)
    return QuadResult(float(value), float(error), count[0])


@dataclass
class LimitResult:
    value: float
    error: float
    deltas: list
    values: list
    errors: list
    order: float


def f_limit(n, alpha: float, beta: float, deltas, tol: float = 1e-4, profile: str = "cutoff",
            r_max: float | None = None) -> LimitResult:
    """Richardson extrapolation of F^delta(n) along a decreasing delta sequence."""
    deltas = [float(d) for d in deltas]
    if len(deltas) < 3 or any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ValueError("need a strictly decreasing delta sequence of length >= 3")
    if _radius(n) == 0:
        return LimitResult(0.0, 0.0, deltas, [0.0] * len(deltas), [0.0] * len(deltas), np.nan)
    res = [f_delta(n, alpha, beta, MollifierSpec(d, profile), tol, r_max) for d in deltas]
    vals = np.array([x.value for x in res])
    errs = np.array([x.error for x in res])
    d1, d2 = np.diff(vals)[-2:]
    noise = errs[-3:].sum()
    if d1 * d2 < 0 and min(abs(d1), abs(d2)) > noise:
        raise QuadratureError("non-monotone tail in the delta sequence", vals[-1], noise)
    # for delta |n| <= 1 the error is the cut tail of G, O(delta^(2 + 2 alpha - beta))
    order = 2 + 2 * alpha - beta
    ratio = deltas[-2] / deltas[-1]
    if abs(d1) > noise and abs(d2) > noise and d1 * d2 > 0:
        est = np.log(abs(d1 / d2)) / np.log(deltas[-3] / deltas[-2])
        if 0.5 < est < 6:
            order = float(est)
    correction = d2 / (ratio**order - 1)
    value = vals[-1] + correction
    error = abs(correction) + errs[-1] + errs[-2]
    return LimitResult(float(value), float(error), deltas, vals.tolist(), errs.tolist(), float(order))


@dataclass
class CoercivityFit:
    K: float
    C: float
    alpha: float
    beta: float
    radii: np.ndarray
    gap: float
    table: list = field(default_factory=list)

    def implied_K(self, C: float) -> float:
        return dict(self.table).get(C, np.nan)

    def bound(self, r):
        r = np.asarray(r, dtype=float)
        return -self.K * r ** (self.beta - 2 * self.alpha) + self.C * r ** (self.beta - 2)

    def summary(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "K": self.K, "C": self.C,
                "sample_range": [float(np.min(self.radii)), float(np.max(self.radii))],
                "samples": int(len(self.radii))}


def fit_coercivity(radii, values, alpha: float, beta: float, grid_points: int = 201) -> CoercivityFit:
    """Constants (K, C) of the tightest envelope F(r) <= -K r^(beta-2a) + C r^(beta-2).

    For each C the largest feasible K is K(C) = min_i (C a_i - F_i) / b_i.  Since
    K(C) grows without bound in C, the pair is chosen to minimise the summed
    normalised gap between envelope and samples over a C-grid that contains
    every breakpoint of K(C) (where the optimum of this LP must sit).
    """
    r = np.asarray(radii, dtype=float)
    f = np.asarray(values, dtype=float)
    if len(r) < 5 or np.log10(r.max() / r.min()) < 1.5 - 1e-9:
        raise ValueError("need >= 5 sample radii spanning >= 1.5 decades")
    if np.all(f >= 0):
        raise FitError("no coercive (negative) sample: no positive K is feasible")
    a = r ** (beta - 2)
    b = r ** (beta - 2 * alpha)
    slope, icpt = a / b, -f / b

    def k_of(c):
        return float(np.min(c * slope + icpt))

    def gap(c):
        return float(np.sum(c * slope + icpt) - len(r) * k_of(c))

    c_lo = max(0.0, float(np.max(f / a)))
    cands = {0.0, c_lo}
    for i, j in combinations(range(len(r)), 2):
        if slope[i] != slope[j]:
            c = (icpt[j] - icpt[i]) / (slope[i] - slope[j])
            if c >= 0:
                cands.add(float(c))
    c_hi = max(cands) * 2 + 1.0
    cands.update(np.linspace(0.0, c_hi, grid_points).tolist())
    table = sorted((c, k_of(c)) for c in cands)
    feasible = [(gap(c), c, k) for c, k in table if k > 0]
    if not feasible:
        raise FitError("no positive K feasible on the scanned C-grid")
    g, c, k = min(feasible)
    return CoercivityFit(K=k, C=c, alpha=alpha, beta=beta, radii=r, gap=g, table=table)


def kappa_pairing(xi: Field, alpha: float, beta: float, m: MollifierSpec, tol: float = 1e-4,
                  cache: dict | None = None) -> float:
    """sum_n F^delta(n) |xi_hat(n)|^2 L^2 over the retained lattice."""
    g = xi.grid
    if abs(xi.mean) > 1e-12 * max(1.0, np.abs(xi.hat).max()):
        raise ValueError("pairing requires a mean-zero field")
    cache = {} if cache is None else cache
    power = np.abs(xi.hat) ** 2 * g.weights
    mask = g.retained & (power > 0) & (g.kmod > 0)
    total = 0.0
    for kr, pw in zip(g.kmod[mask], power[mask]):
        key = round(float(kr), 10)
        if key not in cache:
            cache[key] = f_delta(key, alpha, beta, m, tol).value
        total += cache[key] * pw
    return float(total * g.length**2)


@dataclass
class CoercivityProfile:
    alpha: float
    beta: float
    radii: np.ndarray
    delta_factors: list
    f_delta: np.ndarray      # (len(delta_factors), len(radii))
    f_delta_error: np.ndarray
    f_limit: np.ndarray
    f_limit_error: np.ndarray
    fit: CoercivityFit | None = None

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "delta", "F_delta", "error", "F_limit", "limit_error"])
            for j, rad in enumerate(self.radii):
                for i, c in enumerate(self.delta_factors):
                    w.writerow([repr(float(rad)), repr(c / rad), repr(float(self.f_delta[i, j])),
                                repr(float(self.f_delta_error[i, j])), repr(float(self.f_limit[j])),
                                repr(float(self.f_limit_error[j]))])

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.fit.summary() if self.fit else {}, fh, indent=2)


def build_profile(alpha: float, beta: float, radii, delta_factors=(0.5, 0.25, 0.125),
                  tol: float = 1e-4, profile: str = "cutoff", fit: bool = True) -> CoercivityProfile:
    """Sample F^delta and its delta -> 0 limit at the given radii.

    The delta-sequence at radius r is factor / r so that delta r <= 1 and the
    n-term is already unmollified.
    """
    radii = np.asarray(radii, dtype=float)
    fd = np.zeros((len(delta_factors), len(radii)))
    fe = np.zeros_like(fd)
    fl = np.zeros(len(radii))
    le = np.zeros(len(radii))
    for j, rad in enumerate(radii):
        lim = f_limit(rad, alpha, beta, [c / rad for c in delta_factors], tol, profile)
        fd[:, j] = lim.values
        fe[:, j] = lim.errors
        fl[j], le[j] = lim.value, lim.error
    prof = CoercivityProfile(alpha, beta, radii, list(delta_factors), fd, fe, fl, le)
    if fit:
        prof.fit = fit_coercivity(radii, fl, alpha, beta)
    return prof
