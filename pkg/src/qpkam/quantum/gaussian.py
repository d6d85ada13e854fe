"""Exact evolution of Gaussian states exp(i beta x^2 / 2) under quadratic Hamiltonians."""
from __future__ import annotations

import numpy as np

from ..cocycle import QpLinearSystem, integrate_flow
from .hermite import SobolevTrace


def gaussian_evolve(Phi, beta0):
    """beta(t) = (Phi21 + Phi22 beta0) / (Phi11 + Phi12 beta0).

    The plane xi = beta0 x is carried by the classical flow; for real Phi and
    Im beta0 > 0 the denominator cannot vanish.
    """
    beta0 = complex(beta0)
    if beta0.imag <= 0:
        raise ValueError("Im beta0 must be positive")
    Phi = np.asarray(Phi, float)
    den = Phi[..., 0, 0] + Phi[..., 0, 1] * beta0
    beta = (Phi[..., 1, 0] + Phi[..., 1, 1] * beta0) / den
    # det Phi = 1 gives Im beta exactly; the quotient loses it to cancellation
    return beta.real + 1j * beta0.imag / np.abs(den) ** 2


def gaussian_sobolev(beta, s):
    """Closed-form ||u||_s of the L^2-normalized Gaussian with width beta, s in {0, 1, 2}."""
    beta = np.asarray(beta, complex)
    g = beta.imag
    if np.any(g <= 0):
        raise ValueError("Im beta must be positive")
    if s == 0:
        return np.ones_like(g)
    x2 = 1 / (2 * g)
    p2 = np.abs(beta) ** 2 / (2 * g)
    if s == 1:
        return np.sqrt(x2 + p2)
    if s == 2:
        # (x^2 + p^2) u = ((1 + beta^2) x^2 - i beta) u
        P, Q = 1 + beta ** 2, -1j * beta
        x4 = 3 / (4 * g ** 2)
        val = np.abs(P) ** 2 * x4 + np.abs(Q) ** 2 + 2 * np.real(P * np.conj(Q)) * x2
        return np.sqrt(val)
    raise ValueError("s must be 0, 1 or 2")


def gaussian_hermite(beta, N):
    """Hermite coefficients of the normalized Gaussian (only even modes occur).

    The state is annihilated by a - z a*, z = (i - beta)/(i + beta).
    """
    beta = complex(beta)
    g = beta.imag
    z = (1j - beta) / (1j + beta)
    c = np.zeros(N, complex)
    c[0] = g ** 0.25 * np.sqrt(2 / (1 - 1j * beta))
    for m in range(2, N, 2):
        c[m] = z * np.sqrt((m - 1) / m) * c[m - 2]
    return c


def gaussian_trace(sys: QpLinearSystem, beta0, t_grid, s_list=(1.0,), tol=1e-12):
    """Norms of the exactly evolved Gaussian at the sample times."""
    t_grid = np.asarray(t_grid, float)
    Phi = np.eye(2)
    t_prev = 0.0
    mats = []
    for t in t_grid:
        if t > t_prev:
            ph = np.asarray(sys.theta0) + t_prev * sys.freq.array
            Phi = integrate_flow(sys.with_phase(ph), t - t_prev, tol) @ Phi
            t_prev = t
        mats.append(Phi.copy())
    beta = gaussian_evolve(np.array(mats), beta0)
    s_list = tuple(float(s) for s in s_list)
    norms = np.stack([gaussian_sobolev(beta, int(s)) for s in s_list], axis=1)
    n = len(t_grid)
    tr = SobolevTrace(s_list, t_grid, norms, np.ones(n), np.zeros(n), np.ones(n, bool),
                      meta={"oracle": "gaussian"})
    tr.beta = beta
    return tr
