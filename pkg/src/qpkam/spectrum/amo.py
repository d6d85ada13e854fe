"""Almost-Mathieu cocycle and its normal frame."""
from __future__ import annotations

import numpy as np

from ..cocycle import DiscreteCocycle
from ..fourier import AnalyticTorusMap
from ..sl2 import expm_sl2

DELTA = 1e-6


def amo_cocycle(lam, alpha, E) -> DiscreteCocycle:
    """S(theta) = [[-E + 2 lam cos(2 pi theta), -1], [1, 0]] over theta -> theta + alpha."""
    lam, E = float(lam), float(E)

    def V(th):
        return 2 * lam * np.cos(2 * np.pi * np.asarray(th, float).reshape(-1))

    def mats(th):
        v = V(th)
        out = np.zeros((len(v), 2, 2))
        out[:, 0, 0] = -E + v
        out[:, 0, 1] = -1.0
        out[:, 1, 0] = 1.0
        return out

    return DiscreteCocycle((float(alpha),), mats, potential=V, energy=E)


def amo_nu(E):
    return np.arccos(-np.asarray(E, float) / 2)


def amo_normal_frame(E, floor=1e-8):
    """(B, M) with B = M (nu J) M^{-1} and exp(B) = [[-E, -1], [1, 0]]."""
    E = float(E)
    if not (-2 + DELTA < E < 2 - DELTA):
        raise ValueError("E must lie in (-2 + delta, 2 - delta)")
    nu = float(amo_nu(E))
    s, c = np.sin(nu), np.cos(nu)
    if s < floor:
        raise ValueError("sin(nu) below floor")
    M = np.array([[c, -s], [1.0, 0.0]]) / np.sqrt(s)
    Minv = np.array([[0.0, s], [-1.0, c]]) / np.sqrt(s)
    Jm = np.array([[0.0, -1.0], [1.0, 0.0]])
    B = M @ (nu * Jm) @ Minv
    target = np.array([[-E, -1.0], [1.0, 0.0]])
    if np.abs(expm_sl2(B) - target).max() > 1e-10:
        raise ArithmeticError("normal frame failed its exponential check")
    return B, M


def amo_generator(lam, E):
    """G_A(theta) = M^{-1} [[0, 0], [-2 lam cos(2 pi theta), 0]] M on T^1."""
    _, M = amo_normal_frame(E)
    Minv = np.linalg.inv(M)
    m = Minv @ np.array([[0.0, 0.0], [-float(lam), 0.0]]) @ M
    return AnalyticTorusMap.from_modes(1, 1, {(1,): m, (-1,): m})
