"""Independent brute-force references used by the tests.

Nothing here calls the package's numerical routines; each oracle re-derives
its quantity from the defining formula with the simplest adequate method.
"""
import math

import numpy as np


def bump_cutoff(r):
    """1 on [0, 1], 0 beyond 2, exp(-1/t) partition of unity in between."""
    r = np.abs(np.asarray(r, dtype=float))
    a = np.where(2 - r > 0, np.exp(-1 / np.maximum(2 - r, 1e-300)), 0.0)
    b = np.where(r - 1 > 0, np.exp(-1 / np.maximum(r - 1, 1e-300)), 0.0)
    return a / (a + b)


def riemann_f_delta(n, alpha, beta, delta, h=0.01, chunk=400):
    """F^delta(n) on a fixed polar grid about k = 0.

    Radial step h with product integration against rho^(beta-1) (exact for the
    singular weight, linear in the smooth factor), angular step ~h with the
    periodic trapezoid rule on a half-shifted grid.  The k-integral stops at
    the support radius 2/delta; the n-term uses
    int <m>^(-2-2a) |P_m^perp n|^2 dm = pi |n|^2 / (2 a).
    """
    n1, n2 = map(float, n)
    r = math.hypot(n1, n2)
    if r == 0:
        return 0.0
    big_r = 2.0 / delta
    rho = np.arange(0.0, big_r + h / 2, h)
    m_phi = int(round(2 * math.pi / h))
    phi = (np.arange(m_phi) + 0.5) * 2 * math.pi / m_phi
    c, s = np.cos(phi), np.sin(phi)
    ang = np.empty_like(rho)
    for i in range(0, len(rho), chunk):
        rr = rho[i:i + chunk, None]
        m1 = n1 - rr * c
        m2 = n2 - rr * s
        mm = m1**2 + m2**2
        dot = n1 * m1 + n2 * m2
        perp = r * r - dot**2 / mm
        ang[i:i + chunk] = np.sum((1 + mm) ** (-1 - alpha) * perp, axis=1) * (2 * math.pi / m_phi)
    g = bump_cutoff(delta * rho) ** 2 * ang / (2 * math.pi)
    a, b = rho[:-1], rho[1:]
    i0 = (b**beta - a**beta) / beta
    i1 = (b ** (beta + 1) - a ** (beta + 1)) / (beta + 1)
    k_term = np.sum((g[:-1] * (b * i0 - i1) + g[1:] * (i1 - a * i0)) / h)
    g_n = bump_cutoff(delta * r) ** 2 * r ** (beta - 2) / (2 * math.pi)
    return float(k_term - g_n * math.pi * r * r / (2 * alpha))


def riemann_with_error(n, alpha, beta, delta, h=0.01):
    """Oracle value and a step-doubling error estimate."""
    fine = riemann_f_delta(n, alpha, beta, delta, h)
    coarse = riemann_f_delta(n, alpha, beta, delta, 2 * h)
    return fine, abs(fine - coarse)


def spectral_convolution(a_full, b_full, keep):
    """Full-lattice coefficients of the product of two trigonometric polynomials.

    ``a_full`` and ``b_full`` are N x N fft2-layout coefficient arrays; the result
    is the exact (unaliased) convolution restricted to the mask ``keep``.
    """
    n = a_full.shape[0]
    idx = np.fft.fftfreq(n, 1.0 / n).astype(int)
    out = np.zeros((n, n), dtype=complex)
    nz_a = np.argwhere(a_full != 0)
    nz_b = np.argwhere(b_full != 0)
    for i, j in nz_a:
        for k, l in nz_b:
            p, q = idx[i] + idx[k], idx[j] + idx[l]
            if -n // 2 <= p < n // 2 and -n // 2 <= q < n // 2:
                out[p % n, q % n] += a_full[i, j] * b_full[k, l]
    return np.where(keep, out, 0)


def two_pass_stats(x):
    """Mean and 2-sigma error of the mean by the textbook two-pass formula."""
    x = [float(v) for v in x]
    m = len(x)
    mean = sum(x) / m
    var = sum((v - mean) ** 2 for v in x) / (m - 1)
    return mean, 2 * math.sqrt(var / m)


def lattice_c0(alpha, cutoff, weight=lambda k: 1.0):
    """c0 = (1/4) sum over the full lattice 0 < |k| <= cutoff of q(k) m(k), by a double loop."""
    total = 0.0
    for j1 in range(-cutoff, cutoff + 1):
        for j2 in range(-cutoff, cutoff + 1):
            k2 = j1 * j1 + j2 * j2
            if 0 < k2 <= cutoff * cutoff:
                total += (1 + k2) ** (-1 - alpha) * weight(math.sqrt(k2))
    return total / 4
