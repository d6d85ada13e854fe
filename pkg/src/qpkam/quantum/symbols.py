"""Quadratic symbols and their Weyl quantization in the Hermite basis."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..cocycle import QpLinearSystem, _Forcing
from ..fourier import AnalyticTorusMap, FrequencyVector, sl2_from_abc


@dataclass(frozen=True, eq=False)
class QuadraticSymbol:
    """h = nu/2 (x^2 + xi^2) + 1/2 (a x^2 + 2 b x xi + c xi^2), a, b, c scalar maps.

    The Hamiltonian flow is (x, xi)' = A (x, xi) with A = [[b', c'], [-a', -b']],
    primes denoting the totals including the nu part.
    """
    freq: FrequencyVector
    nu: float
    a: Optional[AnalyticTorusMap] = None
    b: Optional[AnalyticTorusMap] = None
    c: Optional[AnalyticTorusMap] = None
    theta0: tuple = None

    def to_system(self) -> QpLinearSystem:
        A0 = [[0.0, self.nu], [-self.nu, 0.0]]
        parts = [self.a, self.b, self.c]
        if all(p is None for p in parts):
            return QpLinearSystem(self.freq, A0, None, self.theta0)
        ref = next(p for p in parts if p is not None)
        zero = AnalyticTorusMap.zeros(ref.d, ref.N)
        a, b, c = (zero if p is None else p.resized(ref.N) for p in parts)
        return QpLinearSystem(self.freq, A0, sl2_from_abc(a, b, c), self.theta0)


def symbol_coefficients(G):
    """(alpha, beta, gamma) of 1/2(alpha x^2 + 2 beta x xi + gamma xi^2) from generators."""
    G = np.asarray(G, float)
    return -G[..., 1, 0], G[..., 0, 0], G[..., 0, 1]


def generator_samples(sys: QpLinearSystem, t, chunk=8192):
    """A0 + F(theta0 + omega t) at many times, as a sum of exponentials."""
    t = np.asarray(t, float)
    out = np.broadcast_to(sys.A0, t.shape + (2, 2)).copy()
    if sys.F is None:
        return out
    forc = _Forcing(sys.F, sys.freq.array, [sys.theta0])
    for i in range(0, len(t), chunk):
        out[i:i + chunk] += forc(t[i:i + chunk])[0]
    return out


def weyl_matrix(G, N_trunc):
    """Hermitian matrix of the Weyl quantization of the symbol with generator G.

    Uses x^2 = (a^2 + a*^2 + 2N + 1)/2, p^2 = (2N + 1 - a^2 - a*^2)/2 and
    xp + px = -i (a^2 - a*^2).
    """
    if N_trunc < 4:
        raise ValueError("N_trunc must be at least 4")
    al, be, ga = (float(v) for v in symbol_coefficients(G))
    n = np.arange(N_trunc)
    H = np.diag((2 * n + 1) * (al + ga) / 4).astype(complex)
    w = (al - ga) / 4 + 0.5j * be
    m = n[:-2]
    off = w * np.sqrt((m + 1) * (m + 2))
    H[m + 2, m] = off
    H[m, m + 2] = np.conj(off)
    return H


def weyl_norm_bound(G, N_trunc):
    """Cheap upper bound on the spectral norm of weyl_matrix(G, N_trunc)."""
    al, be, ga = symbol_coefficients(G)
    w = np.abs((al - ga) / 4 + 0.5j * be)
    return float(np.max((2 * N_trunc - 1) * (np.abs(al + ga) / 4 + 2 * w)))
