"""Hermite-basis states, Sobolev norms and Cayley time stepping."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from ..cocycle import QpLinearSystem
from ..io import write_csv
from .symbols import generator_samples, symbol_coefficients, weyl_norm_bound

N_TRUNC = 512
LEAK_TOL = 1e-8
DT_NORM = 0.1
X_MAX = 1e3


class LeakageError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class HermiteState:
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def mode(cls, n, N_trunc=N_TRUNC):
        c = np.zeros(N_trunc, complex)
        c[n] = 1.0
        return cls(c)

    @property
    def N(self):
        return len(self.coeffs)

    def tail_mass(self):
        return tail_mass(self.coeffs)

    def norm(self, s=0.0):
        return sobolev_norm(self, s)

    def evaluate(self, x):
        return hermite_functions(self.N, x).T @ self.coeffs


def tail_mass(c):
    n0 = int(math.ceil(0.9 * len(c)))
    return float(np.sum(np.abs(c[n0:]) ** 2))


def sobolev_norm(u, s) -> float:
    """(sum (2n+1)^s |c_n|^2)^(1/2)."""
    c = u.coeffs if isinstance(u, HermiteState) else np.asarray(u)
    w = (2.0 * np.arange(len(c)) + 1.0) ** float(s)
    return float(np.sqrt(np.sum(w * np.abs(c) ** 2)))


def hermite_functions(N, x):
    """Normalized Hermite functions psi_0..psi_{N-1} at x, shape (N, len(x)).

    The recurrence runs on the polynomial part with a per-point log scale, so
    the Gaussian factor is applied at the end and wide grids do not underflow.
    """
    x = np.atleast_1d(np.asarray(x, float))
    if np.max(np.abs(x), initial=0.0) > X_MAX:
        raise OverflowError("quadrature grid too wide for the Hermite recurrence")
    out = np.empty((N, len(x)))
    logw = -x ** 2 / 2
    prev = np.zeros_like(x)
    cur = np.full_like(x, np.pi ** -0.25)
    out[0] = cur * np.exp(logw)
    for n in range(N - 1):
        nxt = np.sqrt(2.0 / (n + 1)) * x * cur - np.sqrt(n / (n + 1)) * prev
        prev, cur = cur, nxt
        big = np.abs(cur) > 1e150
        if big.any():
            cur[big] *= 1e-150
            prev[big] *= 1e-150
            logw[big] += 150 * np.log(10.0)
        out[n + 1] = cur * np.exp(logw)
    return out


# --- quadrature side of the norm comparison ----------------------------------------

def _grid_for(u: HermiteState, pts=4096):
    c = np.abs(u.coeffs)
    nz = np.nonzero(c > 1e-14 * c.max())[0]
    n_eff = int(nz[-1]) if len(nz) else 0
    L = 1.5 * math.sqrt(2 * n_eff + 1) + 8.0
    return np.linspace(-L, L, pts, endpoint=False)


def quadrature_norms(f, x, s):
    """(||f||_{H^s}, ||x^s f||_{L^2}) on a periodic grid via FFT."""
    dx = x[1] - x[0]
    k = 2 * np.pi * np.fft.fftfreq(len(x), dx)
    fh = np.fft.fft(f)
    hs = math.sqrt(np.sum((1 + k ** 2) ** s * np.abs(fh) ** 2) * dx / len(x))
    xm = math.sqrt(np.sum(np.abs(x ** s * f) ** 2) * dx)
    return hs, xm


def norm_equivalence_ratio(u: HermiteState, s):
    """||u||_s / (||u||_{H^s} + ||x^s u||_{L^2})."""
    if s not in (1, 2):
        raise ValueError("s must be 1 or 2")
    x = _grid_for(u)
    hs, xm = quadrature_norms(u.evaluate(x), x, s)
    return sobolev_norm(u, s) / (hs + xm)


def calibrate_equivalence(s, N_trunc=64):
    r0 = norm_equivalence_ratio(HermiteState.mode(0, N_trunc), s)
    return 2.0 * max(r0, 1.0 / r0)


def norm_equivalence_check(u: HermiteState, s):
    """(ratio, C_eq, ratio within [1/C_eq, C_eq])."""
    r = norm_equivalence_ratio(u, s)
    C = calibrate_equivalence(s)
    return r, C, bool(1.0 / C <= r <= C)


# --- time stepping -------------------------------------------------------------------

@nb.njit(cache=True)
def _thomas(a, b, c, d, x, cp, dp):
    n = len(b)
    cp[0] = c[0] / b[0]
    dp[0] = d[0] / b[0]
    for i in range(1, n):
        m = b[i] - a[i] * cp[i - 1]
        cp[i] = c[i] / m if i < n - 1 else 0.0
        dp[i] = (d[i] - a[i] * dp[i - 1]) / m
    x[n - 1] = dp[n - 1]
    for i in range(n - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]


@nb.njit(cache=True)
def _cayley_run(u, coef, dts, sample_at, out_c, tails, n0, leak_tol, stop):
    """Advance u through Cayley steps, recording states at the sample_at step
    counts; returns how many samples were written."""
    N = len(u)
    buf = np.empty(N, np.complex128)
    M = (N + 1) // 2
    a = np.zeros(M, np.complex128)
    b = np.zeros(M, np.complex128)
    c = np.zeros(M, np.complex128)
    rhs = np.zeros(M, np.complex128)
    x = np.zeros(M, np.complex128)
    cp = np.zeros(M, np.complex128)
    dp = np.zeros(M, np.complex128)
    k = 0
    for step in range(len(dts)):
        dt = dts[step]
        q = coef[step, 0]
        w = coef[step, 1] + 1j * coef[step, 2]
        for par in range(2):
            m = (N - par + 1) // 2
            for i in range(m):
                n = par + 2 * i
                diag = (2 * n + 1) * q
                b[i] = 1.0 + 0.5j * dt * diag
                r = (1.0 - 0.5j * dt * diag) * u[n]
                if i > 0:
                    low = w * math.sqrt((n - 1.0) * n)          # H[n, n-2]
                    a[i] = 0.5j * dt * low
                    r -= 0.5j * dt * low * u[n - 2]
                else:
                    a[i] = 0.0
                if i < m - 1:
                    up = np.conj(w) * math.sqrt((n + 1.0) * (n + 2.0))  # H[n, n+2]
                    c[i] = 0.5j * dt * up
                    r -= 0.5j * dt * up * u[n + 2]
                else:
                    c[i] = 0.0
                rhs[i] = r
            _thomas(a[:m], b[:m], c[:m], rhs[:m], x[:m], cp[:m], dp[:m])
            for i in range(m):
                buf[par + 2 * i] = x[i]
        for n in range(N):
            u[n] = buf[n]
        if k < len(sample_at) and step + 1 == sample_at[k]:
            out_c[k, :] = u
            tl = 0.0
            for n in range(n0, N):
                tl += u[n].real ** 2 + u[n].imag ** 2
            tails[k] = tl
            k += 1
            if stop and tl > leak_tol:
                break
    return k


@dataclass(eq=False)
class SobolevTrace:
    s: tuple
    t: np.ndarray
    norms: np.ndarray          # (n_samples, len(s))
    norm0: np.ndarray
    tail: np.ndarray
    trusted: np.ndarray
    leaked_at: float = float("nan")
    meta: dict = field(default_factory=dict)

    def series(self, s, trusted_only=True):
        j = self.s.index(s)
        m = self.trusted if trusted_only else np.ones(len(self.t), bool)
        return self.t[m], self.norms[m, j]

    def unitarity_drift(self):
        """max | ||u||_0 - ||u(0)||_0 | per unit time."""
        if len(self.t) < 2:
            return 0.0
        span = max(self.t[-1] - self.t[0], 1.0)
        return float(np.max(np.abs(self.norm0 - self.norm0[0])) / span)

    def write_csv(self, path, meta=None):
        hdr = ["t"] + [f"norm_s{s:g}" for s in self.s] + ["tail_mass", "trusted"]
        rows = ([self.t[i], *self.norms[i], self.tail[i], int(self.trusted[i])]
                for i in range(len(self.t)))
        m = dict(self.meta)
        m.update(meta or {})
        write_csv(path, hdr, rows, m)

    def to_dict(self):
        return {"s": list(self.s), "t": self.t, "norms": self.norms, "norm0": self.norm0,
                "tail_mass": self.tail, "trusted": [bool(v) for v in self.trusted],
                "leaked_at": self.leaked_at}


def hermite_evolve(sys: QpLinearSystem, u0: HermiteState, t_grid, s_list=(1.0,),
                   dt=None, stop_on_leak=True):
    """Cayley stepping of i u' = H(t) u with the midpoint generator frozen per step.

    sys carries the classical generator A0 + F(theta0 + omega t) of the symbol.
    """
    t_grid = np.asarray(t_grid, float)
    if t_grid.ndim != 1 or len(t_grid) < 1 or np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    if u0.tail_mass() >= 1e-12:
        raise ValueError("initial tail mass must be below 1e-12")
    N = u0.N
    probe = generator_samples(sys, np.linspace(0, max(t_grid[-1], 1.0), 257))
    hnorm = weyl_norm_bound(probe, N)
    dt_max = DT_NORM / max(hnorm, 1e-300)
    if dt is None:
        dt = 0.999 * dt_max
    elif dt * hnorm >= DT_NORM:
        raise ValueError(f"dt={dt:g} violates dt*||H|| < {DT_NORM} (||H|| <= {hnorm:.3g})")
    # step layout: uniform substeps between consecutive samples
    starts = np.concatenate([[0.0], t_grid])
    counts = np.maximum(np.ceil(np.diff(starts) / dt - 1e-9).astype(np.int64), 0)
    dts = np.repeat(np.diff(starts) / np.maximum(counts, 1), counts)
    edges = np.concatenate([[0.0], np.cumsum(dts)])
    mids = 0.5 * (edges[:-1] + edges[1:])
    al, be, ga = symbol_coefficients(generator_samples(sys, mids))
    coef = np.stack([(al + ga) / 4, (al - ga) / 4, be / 2], axis=1)
    sample_at = np.cumsum(counts)
    n_s = len(t_grid)
    out_c = np.zeros((n_s, N), complex)
    tails = np.zeros(n_s)
    u = np.array(u0.coeffs, dtype=np.complex128)
    n0 = int(math.ceil(0.9 * N))
    # samples at t=0 need no steps
    pre = sample_at == 0
    for k in np.nonzero(pre)[0]:
        out_c[k] = u
        tails[k] = tail_mass(u)
    idx = np.nonzero(~pre)[0]
    done = len(t_grid)
    if len(idx) and not (stop_on_leak and np.any(tails[pre] > LEAK_TOL)):
        got = _cayley_run(u, coef, dts, sample_at[idx], out_c[idx[0]:], tails[idx[0]:],
                          n0, LEAK_TOL, stop_on_leak)
        done = int(idx[0]) + got
    s_list = tuple(float(s) for s in s_list)
    w = 2.0 * np.arange(N) + 1.0
    P = np.abs(out_c) ** 2
    norms = np.stack([np.sqrt(P @ w ** s) for s in s_list], axis=1)
    norm0 = np.sqrt(P.sum(axis=1))
    leak = tails > LEAK_TOL
    trusted = ~np.logical_or.accumulate(leak)
    leaked_at = float(t_grid[np.argmax(leak)]) if leak.any() else float("nan")
    keep = done
    if stop_on_leak and leak[:done].any():
        keep = int(np.argmax(leak)) + 1
    meta = {"N_trunc": N, "dt_max": dt_max, "n_steps": int(len(dts)), "leak_tol": LEAK_TOL}
    tr = SobolevTrace(s_list, t_grid[:keep], norms[:keep], norm0[:keep], tails[:keep],
                      trusted[:keep], leaked_at, meta)
    tr.final_state = HermiteState(out_c[keep - 1])
    return tr
