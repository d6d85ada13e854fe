"""Parameter families E -> (omega, A0(E) + F0(E, .))."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from ..cocycle import QpLinearSystem, TURN
from ..fourier import AnalyticTorusMap, FrequencyVector
from .amo import amo_generator, amo_normal_frame, amo_nu
from .embed import EmbeddingResult, local_embed

R_FLIP = np.diag([1.0, -1.0])


class OutOfIntervalError(ValueError):
    pass


def _nu_bounds(nu, dnu, d2nu, interval, n=401):
    E = np.linspace(*interval, n)
    return float(np.abs(dnu(E)).min()), float(np.abs(d2nu(E)).max())


@dataclass(frozen=True, eq=False)
class GenericQuadratic:
    """nu(E) = E with a fixed real sl(2,R) perturbation F = [[b, c], [-a, -b]]."""
    freq: FrequencyVector
    F: AnalyticTorusMap
    interval: tuple = (0.5, 3.5)
    kind = "generic"

    def nu(self, E):
        return np.asarray(E, float)

    def dnu(self, E):
        return np.ones_like(np.asarray(E, float))

    def d2nu(self, E):
        return np.zeros_like(np.asarray(E, float))

    def check(self, E):
        if not (self.interval[0] <= E <= self.interval[1]):
            raise OutOfIntervalError(f"E={E} outside {self.interval}")

    def system_at(self, E):
        self.check(E)
        nu = float(E)
        return QpLinearSystem(self.freq, [[0, nu], [-nu, 0]], self.F)

    def batch(self, E):
        E = np.asarray(E, float)
        A0 = np.zeros((len(E), 2, 2))
        A0[:, 0, 1] = E
        A0[:, 1, 0] = -E
        return A0, np.ones(len(E)), self.F


@dataclass(frozen=True, eq=False)
class SchrodingerFlow:
    """nu(E) = sqrt(E), F = q / (2 sqrt E) [[-1, -1], [1, 1]]."""
    freq: FrequencyVector
    q: AnalyticTorusMap           # scalar, stored in the (0, 0) slot
    interval: tuple = (1.0, 4.0)
    kind = "schrodinger"

    def __post_init__(self):
        if self.interval[0] <= 0:
            raise ValueError("interval must lie in E > 0")

    @property
    def shape(self):
        base = np.array([[-1.0, -1.0], [1.0, 1.0]])
        return AnalyticTorusMap(self.q.coeffs[..., 0:1, 0:1] * base, self.q.r)

    def nu(self, E):
        return np.sqrt(np.asarray(E, float))

    def dnu(self, E):
        return 0.5 / np.sqrt(np.asarray(E, float))

    def d2nu(self, E):
        return -0.25 * np.asarray(E, float) ** -1.5

    def check(self, E):
        if not (self.interval[0] <= E <= self.interval[1]):
            raise OutOfIntervalError(f"E={E} outside {self.interval}")

    def system_at(self, E):
        self.check(E)
        s = np.sqrt(E)
        return QpLinearSystem(self.freq, [[0, s], [-s, 0]], self.shape.scale(1 / (2 * s)))

    def batch(self, E):
        E = np.asarray(E, float)
        s = np.sqrt(E)
        A0 = np.zeros((len(E), 2, 2))
        A0[:, 0, 1] = s
        A0[:, 1, 0] = -s
        return A0, 1 / (2 * s), self.shape

    @staticmethod
    def companion_frame(E):
        """Constant P with P^{-1}(A0 + F)P = [[0, 1], [-E + q, 0]]."""
        s = np.sqrt(E)
        return np.array([[s, -1.0], [s, 1.0]]) / (2 * s)


@dataclass(frozen=True, eq=False)
class AmoEmbedded:
    """Almost-Mathieu cocycle embedded in a flow with omega = (1, alpha).

    The interval only constrains the embedding (site selection must be
    uniform in E); rotation numbers are taken from the discrete cocycle.
    """
    lam: float
    alpha: float
    interval: tuple = (-2 / np.sqrt(37), 2 / np.sqrt(37))
    N_embed: int = 16
    embed_tol: float = 1e-10
    kind = "amo"

    def __post_init__(self):
        E = np.linspace(*self.interval, 401)
        if np.any(np.abs(E) >= 2 - 1e-6):
            raise ValueError("interval must lie inside (-2, 2)")
        # the embedding works with nu / 2 pi (turns)
        var = np.abs(self.dnu(E)).max() / TURN * (self.interval[1] - self.interval[0])
        if var >= 1 / 6:
            raise ValueError(f"sup|nu'| |I| = {var:.3f} must be < 1/6")

    @property
    def freq(self):
        return FrequencyVector((1.0, self.alpha))

    def nu(self, E):
        return amo_nu(E)

    def dnu(self, E):
        return 1 / np.sqrt(4 - np.asarray(E, float) ** 2)

    def d2nu(self, E):
        E = np.asarray(E, float)
        return E / (4 - E ** 2) ** 1.5

    def check(self, E):
        if not (self.interval[0] <= E <= self.interval[1]):
            raise OutOfIntervalError(f"E={E} outside {self.interval}")

    def nu_range_turns(self):
        return tuple(float(amo_nu(E)) / TURN for E in self.interval)

    def embed(self, E) -> EmbeddingResult:
        self.check(E)
        return _embed_cached(self.lam, self.alpha, float(E), self.N_embed,
                             self.embed_tol, self.nu_range_turns())

    def system_at(self, E):
        """Flow in the (x, xi) convention: A0 = [[0, nu], [-nu, 0]]."""
        res = self.embed(E)
        nu = float(amo_nu(E))
        F = res.F.realified().conjugate_by(R_FLIP, R_FLIP)
        return QpLinearSystem(self.freq, [[0, nu], [-nu, 0]], F)


@lru_cache(maxsize=256)
def _embed_cached(lam, alpha, E, N, tol, nu_range):
    G = amo_generator(lam, E)
    return local_embed(float(amo_nu(E)) / TURN, G, alpha, h=0.0, tol=tol, N=N,
                       nu_range=nu_range)


def regularity(fam, n=401):
    """(l1, l2) = (min |nu'|, max |nu''|) over the interval."""
    return _nu_bounds(fam.nu, fam.dnu, fam.d2nu, fam.interval, n)
