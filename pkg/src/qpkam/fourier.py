"""Matrix-valued trigonometric series on the d-torus.

A map ``f: T^d -> C^{2x2}`` is stored as a dense box of Fourier coefficients
``f_k`` for ``|k|_inf <= N`` with the convention

    f(theta) = sum_k f_k exp(2 pi i <k, theta>),   theta in (R/Z)^d.

Maps living on the doubled torus 2T^d use ``period=2``; their harmonics are
``exp(pi i <k, theta>)``.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft

from .sl2 import expm_sl2, maxabs

N_CAP = 160
ALIAS_TOL = 1e-12


class RadiusError(ValueError):
    pass


class TruncationCapError(ValueError):
    pass


class AliasingError(RuntimeError):
    pass


@dataclass(frozen=True)
class FrequencyVector:
    omega: tuple
    gamma: float = 0.1
    tau: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "omega", tuple(float(w) for w in self.omega))
        if len(self.omega) < 1:
            raise ValueError("need at least one frequency")
        # tau <= d-1 is allowed so that dc_check can certify failure
        if self.gamma <= 0 or self.tau <= 0:
            raise ValueError("require gamma > 0 and tau > 0")

    @property
    def d(self):
        return len(self.omega)

    @property
    def array(self):
        return np.array(self.omega)


GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def golden_frequency(gamma=0.1, tau=2.0):
    return FrequencyVector((1.0, GOLDEN), gamma, tau)


def lattice_ball(d, n_max, include_zero=False):
    """All n in Z^d with |n|_1 <= n_max, in lexicographic order."""
    rng = range(-n_max, n_max + 1)
    pts = [n for n in itertools.product(rng, repeat=d)
           if sum(abs(c) for c in n) <= n_max]
    if not include_zero:
        pts = [n for n in pts if any(n)]
    return np.array(pts, dtype=int).reshape(-1, d)


def dc_check(freq: FrequencyVector, n_max: int, modulo_one=False) -> bool:
    """Brute-force Diophantine test over 0 < |n|_1 <= n_max.

    By default the small divisor is |<n, omega>| (continuous-time frequencies,
    where omega = (1, alpha) is the suspension of a rotation by alpha).  With
    ``modulo_one`` the distance to the nearest integer is used instead, which
    is the right notion for the rotation vector of a discrete cocycle.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    n = lattice_ball(freq.d, n_max)
    x = n @ freq.array
    dist = np.abs(x - np.round(x)) if modulo_one else np.abs(x)
    norm = np.abs(n).sum(axis=1).astype(float)
    return bool(np.all(dist > freq.gamma / norm ** freq.tau))


def _fast_len(n):
    return sfft.next_fast_len(int(n))


@dataclass(frozen=True, eq=False)
class AnalyticTorusMap:
    coeffs: np.ndarray            # shape (2N+1,)*d + (2, 2), complex
    r: float = np.inf             # nominal analyticity radius
    period: int = 1
    tail: float = 0.0             # coefficient mass dropped when this table was built

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.ndim < 3 or c.shape[-2:] != (2, 2):
            raise ValueError("coefficient table must end in (2, 2)")
        sizes = set(c.shape[:-2])
        if len(sizes) != 1 or (c.shape[0] % 2) != 1:
            raise ValueError("coefficient table must be an odd cube")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    # construction -------------------------------------------------------
    @classmethod
    def zeros(cls, d, N, r=np.inf, period=1):
        return cls(np.zeros((2 * N + 1,) * d + (2, 2), complex), r, period)

    @classmethod
    def constant(cls, m, d, N=0, r=np.inf):
        f = np.zeros((2 * N + 1,) * d + (2, 2), complex)
        f[(N,) * d] = m
        return cls(f, r)

    @classmethod
    def from_modes(cls, d, N, modes, r=np.inf, period=1):
        """Build from a mapping {k-tuple: 2x2 matrix}."""
        f = np.zeros((2 * N + 1,) * d + (2, 2), complex)
        for k, m in modes.items():
            if max(abs(c) for c in k) > N:
                raise TruncationCapError(f"mode {k} outside box N={N}")
            f[tuple(c + N for c in k)] += np.asarray(m)
        return cls(f, r, period)

    @classmethod
    def from_grid(cls, values, N, r=np.inf, period=1, alias_tol=ALIAS_TOL):
        """Coefficients from samples on the uniform grid of the (doubled) torus."""
        if N > N_CAP:
            raise TruncationCapError(f"truncation order {N} exceeds cap {N_CAP}")
        d = values.ndim - 2
        G = values.shape[0]
        if G < 2 * N + 1:
            raise ValueError("grid too coarse for requested order")
        fhat = sfft.fftn(values, axes=tuple(range(d))) / G ** d
        fhat = sfft.fftshift(fhat, axes=tuple(range(d)))
        mid = G // 2
        sl = tuple(slice(mid - N, mid + N + 1) for _ in range(d))
        kept = fhat[sl]
        mag = maxabs(fhat)
        total = mag.sum()
        dropped = total - maxabs(kept).sum()
        if total > 0:
            freqs = np.abs(np.arange(G) - mid)
            grids = np.meshgrid(*([freqs] * d), indexing="ij")
            kinf = np.max(np.stack(grids), axis=0)
            edge = mag[kinf > G // 4].sum() / total
            if edge > alias_tol:
                raise AliasingError(f"tail mass ratio {edge:.3e} near Nyquist")
        return cls(kept, r, period, tail=float(dropped))

    # shape info ---------------------------------------------------------
    @property
    def d(self):
        return self.coeffs.ndim - 2

    @property
    def N(self):
        return (self.coeffs.shape[0] - 1) // 2

    def mode_grid(self):
        """Integer modes, shape (2N+1,)*d + (d,)."""
        ax = np.arange(-self.N, self.N + 1)
        return np.stack(np.meshgrid(*([ax] * self.d), indexing="ij"), axis=-1)

    def nonzero_modes(self, atol=0.0):
        mag = maxabs(self.coeffs)
        idx = np.argwhere(mag > atol)
        return idx - self.N, self.coeffs[tuple(idx.T)]

    # norms --------------------------------------------------------------
    def weighted_norm(self, r=0.0):
        """sum_k |f_k| exp(2 pi |k|_1 r), |.| the largest entry magnitude."""
        if r > self.r:
            raise RadiusError(f"radius {r} exceeds analyticity radius {self.r}")
        k1 = np.abs(self.mode_grid()).sum(axis=-1) / self.period
        return float(np.sum(maxabs(self.coeffs) * np.exp(2 * np.pi * k1 * r)))

    # algebra ------------------------------------------------------------
    def resized(self, N):
        """Zero-pad or box-truncate to order N."""
        if N > N_CAP:
            raise TruncationCapError(f"truncation order {N} exceeds cap {N_CAP}")
        d, M = self.d, self.N
        out = np.zeros((2 * N + 1,) * d + (2, 2), complex)
        m = min(M, N)
        src = tuple(slice(M - m, M + m + 1) for _ in range(d))
        dst = tuple(slice(N - m, N + m + 1) for _ in range(d))
        out[dst] = self.coeffs[src]
        dropped = 0.0
        if N < M:
            dropped = float(maxabs(self.coeffs).sum() - maxabs(out).sum())
        return AnalyticTorusMap(out, self.r, self.period, self.tail + dropped)

    truncate = resized

    def _check(self, other):
        if self.d != other.d or self.period != other.period:
            raise ValueError("incompatible torus maps")

    def __add__(self, other):
        if not isinstance(other, AnalyticTorusMap):
            f = self.coeffs.copy()
            f[(self.N,) * self.d] += np.asarray(other)
            return AnalyticTorusMap(f, self.r, self.period, self.tail)
        self._check(other)
        N = max(self.N, other.N)
        a, b = self.resized(N), other.resized(N)
        return AnalyticTorusMap(a.coeffs + b.coeffs, min(self.r, other.r),
                                self.period, self.tail + other.tail)

    def __neg__(self):
        return AnalyticTorusMap(-self.coeffs, self.r, self.period, self.tail)

    def __sub__(self, other):
        return self + (-other)

    def scale(self, s):
        return AnalyticTorusMap(s * self.coeffs, self.r, self.period, self.tail)

    def conjugate_by(self, left, right):
        """Constant matrices: left @ f(theta) @ right."""
        c = np.einsum("ij,...jk,kl->...il", left, self.coeffs, right)
        return AnalyticTorusMap(c, self.r, self.period, self.tail)

    def grid_size(self, N_out=None):
        n = max(self.N, N_out or 0)
        return _fast_len(4 * (2 * n + 1))

    def sample(self, G=None):
        """Values on the uniform grid with G points per axis."""
        G = G or self.grid_size()
        if G < 2 * self.N + 1:
            raise ValueError("grid too coarse")
        d = self.d
        fhat = np.zeros((G,) * d + (2, 2), complex)
        mid = G // 2
        sl = tuple(slice(mid - self.N, mid + self.N + 1) for _ in range(d))
        fhat[sl] = self.coeffs
        fhat = sfft.ifftshift(fhat, axes=tuple(range(d)))
        return sfft.ifftn(fhat, axes=tuple(range(d))) * G ** d

    def multiply(self, other, N_out=None):
        self._check(other)
        N_out = self.N + other.N if N_out is None else N_out
        G = _fast_len(max(4 * (2 * N_out + 1), 2 * (self.N + other.N) + 1))
        prod = np.matmul(self.sample(G), other.sample(G))
        return AnalyticTorusMap.from_grid(prod, N_out, min(self.r, other.r),
                                          self.period, alias_tol=1.0)

    def evaluate(self, theta):
        """Exact evaluation of the stored table at points theta, shape (..., d)."""
        theta = np.asarray(theta, dtype=float)
        pts = theta.reshape(-1, self.d)
        k, c = self.nonzero_modes()
        if len(k) == 0:
            return np.zeros(theta.shape[:-1] + (2, 2), complex)
        out = np.empty((len(pts), 2, 2), complex)
        scale = 2j * np.pi / self.period
        step = max(1, 2_000_000 // max(len(k), 1))
        for i in range(0, len(pts), step):
            ph = np.exp(scale * (pts[i:i + step] @ k.T))
            out[i:i + step] = np.einsum("pm,mij->pij", ph, c)
        return out.reshape(theta.shape[:-1] + (2, 2))

    def evaluate_real(self, theta):
        return self.evaluate(theta).real

    def derivative_along(self, omega):
        """d/dt f(theta + omega t) at t = 0, applied to the table."""
        w = np.asarray(getattr(omega, "omega", omega), float)
        lam = 2j * np.pi * (self.mode_grid() @ w) / self.period
        return AnalyticTorusMap(lam[..., None, None] * self.coeffs, self.r,
                                self.period, self.tail)

    def shift_modes(self, n, N_out=None):
        """Multiply by exp(2 pi i <n, theta>) (exact relabelling of modes)."""
        n = np.asarray(n, int)
        N_out = self.N + int(np.abs(n).max()) if N_out is None else N_out
        src = self.resized(max(self.N, N_out) + int(np.abs(n).max()))
        c = src.coeffs
        for ax, s in enumerate(n):
            c = np.roll(c, int(s) * self.period, axis=ax)
        return AnalyticTorusMap(c, self.r, self.period, src.tail).resized(N_out)

    def is_real(self, atol=1e-12):
        flip = self.coeffs[(slice(None, None, -1),) * self.d]
        return bool(np.max(np.abs(flip - self.coeffs.conj()), initial=0.0) <= atol)

    def realified(self):
        """Project onto real-valued maps (symmetrise f_{-k} = conj f_k)."""
        flip = self.coeffs[(slice(None, None, -1),) * self.d]
        return AnalyticTorusMap(0.5 * (self.coeffs + flip.conj()), self.r,
                                self.period, self.tail)

    def mean(self):
        return self.coeffs[(self.N,) * self.d].copy()

    def without_mean(self):
        c = self.coeffs.copy()
        c[(self.N,) * self.d] = 0
        return AnalyticTorusMap(c, self.r, self.period, self.tail)

    # serialization ------------------------------------------------------
    def to_dict(self):
        k, c = self.nonzero_modes()
        order = np.lexsort(k.T[::-1]) if len(k) else []
        entries = []
        for i in order:
            m = c[i]
            entries.append({"k": [int(v) for v in k[i]],
                            "m": [[[m[a, b].real, m[a, b].imag] for b in range(2)]
                                  for a in range(2)]})
        r = None if np.isinf(self.r) else self.r
        return {"d": self.d, "N": self.N, "r": r, "period": self.period,
                "coeffs": entries}

    @classmethod
    def from_dict(cls, obj):
        d, N = int(obj["d"]), int(obj["N"])
        modes = {}
        for e in obj["coeffs"]:
            m = np.array([[complex(*z) for z in row] for row in e["m"]])
            modes[tuple(e["k"])] = m
        r = np.inf if obj.get("r") is None else float(obj["r"])
        return cls.from_modes(d, N, modes, r, int(obj.get("period", 1)))

    def to_json(self):
        from .io import dumps
        return dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def weighted_norm(f: AnalyticTorusMap, r: float) -> float:
    return f.weighted_norm(r)


def matrix_exp_pointwise(z: AnalyticTorusMap, N_out=None, alias_tol=ALIAS_TOL):
    """Fourier table of theta -> exp(Z(theta)) for traceless Z, via grid sampling."""
    N_out = z.N if N_out is None else N_out
    G = _fast_len(4 * (2 * max(N_out, z.N) + 1))
    vals = expm_sl2(z.sample(G))
    return AnalyticTorusMap.from_grid(vals, N_out, z.r, z.period, alias_tol=alias_tol)


def scalar_map(d, N, modes, r=np.inf):
    """Scalar trig polynomial {k: c} stored on the (0, 0) slot of a table."""
    return AnalyticTorusMap.from_modes(
        d, N, {k: np.array([[c, 0], [0, 0]]) for k, c in modes.items()}, r)


def sl2_from_abc(a, b, c):
    """Pack scalar tables into the generator [[b, c], [-a, -b]]."""
    m = np.zeros(a.coeffs.shape, complex)
    m[..., 0, 0] = b.coeffs[..., 0, 0]
    m[..., 0, 1] = c.coeffs[..., 0, 0]
    m[..., 1, 0] = -a.coeffs[..., 0, 0]
    m[..., 1, 1] = -b.coeffs[..., 0, 0]
    return AnalyticTorusMap(m, min(a.r, b.r, c.r))


def random_sl2_map(rng, d, N, size, r=0.0, decay=0.5):
    """Random real sl(2,R)-valued trig polynomial with weighted norm ``size`` at radius r."""
    modes = {}
    for k in itertools.product(range(-N, N + 1), repeat=d):
        if k in modes:
            continue
        kk = tuple(-c for c in k)
        m = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        if kk == k:
            m = m.real.astype(complex)
        m[1, 1] = -m[0, 0]
        m *= decay ** sum(abs(c) for c in k)
        modes[k] = m
        if kk != k:
            modes[kk] = m.conj()
    f = AnalyticTorusMap.from_modes(d, N, modes)
    return f.scale(size / f.weighted_norm(r))
