"""Fundamental solutions, rotation numbers and Lyapunov exponents.

Continuous systems X' = (A0 + F(theta0 + omega t)) X are integrated with the
commutator-free fourth-order Magnus scheme; every step is a product of two
exact sl(2) exponentials, so det = 1 holds to rounding.

Sign conventions: for flows the rotation number counts clockwise turning in
radians per unit time, so A0 = [[0, nu], [-nu, 0]] has rho = nu.  Discrete
fibered rotation numbers count counter-clockwise turning in turns (mod 1),
so the rotation matrix by 2 pi beta has rho = beta.  Dividing a flow rotation
number by ``TURN`` gives the unit in which gap labels <k, omega>/2 live.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numba
import numpy as np

from .fourier import AnalyticTorusMap, FrequencyVector
from .sl2 import maxabs

TURN = 2.0 * np.pi

_SQ3 = math.sqrt(3.0)
_C1, _C2 = 0.5 - _SQ3 / 6.0, 0.5 + _SQ3 / 6.0
_ALPHA1, _ALPHA2 = (3.0 - 2.0 * _SQ3) / 12.0, (3.0 + 2.0 * _SQ3) / 12.0

MAX_STEPS = 20_000_000
_CHUNK = 4096


class StepBudgetError(RuntimeError):
    def __init__(self, msg, t_reached=0.0):
        super().__init__(msg)
        self.t_reached = t_reached


def make_sl2(m, atol=1e-12):
    m = np.array(m, dtype=float)
    if m.shape != (2, 2) or abs(m[0, 0] + m[1, 1]) > atol:
        raise ValueError("expected a traceless real 2x2 matrix")
    return m


@dataclass(frozen=True, eq=False)
class QpLinearSystem:
    freq: FrequencyVector
    A0: np.ndarray
    F: Optional[AnalyticTorusMap] = None
    theta0: tuple = None

    def __post_init__(self):
        object.__setattr__(self, "A0", make_sl2(self.A0))
        th = np.zeros(self.freq.d) if self.theta0 is None else np.asarray(self.theta0, float)
        if th.shape != (self.freq.d,):
            raise ValueError("theta0 has the wrong dimension")
        object.__setattr__(self, "theta0", tuple(th))
        if self.F is not None:
            if self.F.d != self.freq.d:
                raise ValueError("F and omega live on different tori")
            if not self.F.is_real(1e-10):
                raise ValueError("F must be real-valued")

    def with_phase(self, theta0):
        return QpLinearSystem(self.freq, self.A0, self.F, tuple(theta0))

    def generator(self, t):
        """A0 + F(theta0 + omega t) at an array of times."""
        t = np.atleast_1d(np.asarray(t, float))
        out = np.broadcast_to(self.A0, t.shape + (2, 2)).copy()
        if self.F is not None:
            th = np.asarray(self.theta0) + t[:, None] * self.freq.array
            out += self.F.evaluate(th).real
        return out

    def size(self):
        f = 0.0 if self.F is None else self.F.weighted_norm(0.0)
        return float(np.abs(self.A0).max() + f)


class _Forcing:
    """F(theta_p + omega t) for a set of initial phases, as a sum of exponentials."""

    def __init__(self, F, omega, phases):
        phases = np.atleast_2d(np.asarray(phases, float))
        self.P = phases.shape[0]
        if F is None:
            self.k = np.zeros((0, len(omega)))
            self.c = np.zeros((self.P, 0, 2, 2), complex)
            self.lam = np.zeros(0)
            return
        k, c = F.nonzero_modes()
        # keep one representative of each +-k pair and double it (F is real)
        keep = []
        seen = set()
        for i, kk in enumerate(map(tuple, k)):
            if tuple(-x for x in kk) in seen:
                continue
            seen.add(kk)
            keep.append(i)
        k, c = k[keep], c[keep]
        w = np.where(np.any(k != 0, axis=1), 2.0, 1.0)
        self.k = k / F.period
        self.lam = TURN * (self.k @ np.asarray(omega))
        ph = np.exp(1j * TURN * (phases @ self.k.T))          # (P, M)
        self.c = ph[:, :, None, None] * (w[:, None, None] * c)[None]

    @property
    def max_freq(self):
        return float(np.abs(self.lam).max()) if len(self.lam) else 0.0

    def __call__(self, t):
        if self.c.shape[1] == 0:
            return np.zeros((self.P, len(t), 2, 2))
        e = np.exp(1j * np.outer(t, self.lam))                # (nt, M)
        v = np.einsum("tm,pmij->ptij", e, self.c)
        return np.ascontiguousarray(v.real)


@numba.njit(cache=True)
def _exp_sl2_real(a, b, c, h, out):
    # exp(h * [[a, b], [c, -a]]) into out
    a *= h
    b *= h
    c *= h
    d = a * a + b * c
    if abs(d) < 1e-8:
        ch = 1.0 + d / 2.0 + d * d / 24.0
        sh = 1.0 + d / 6.0 + d * d / 120.0
    elif d > 0:
        r = math.sqrt(d)
        ch = math.cosh(r)
        sh = math.sinh(r) / r
    else:
        r = math.sqrt(-d)
        ch = math.cos(r)
        sh = math.sin(r) / r
    out[0, 0] = ch + sh * a
    out[0, 1] = sh * b
    out[1, 0] = sh * c
    out[1, 1] = ch - sh * a


@numba.njit(cache=True)
def _bump(x):
    if x <= 0.0 or x >= 1.0:
        return 0.0
    return math.exp(-1.0 / (x * (1.0 - x)))


@numba.njit(cache=True)
def _cf4_chunk(A0, scale, pidx, F1, F2, h, t0, T, Th, V, logn, acc, wacc, a1, a2):
    """Advance normalized columns V through F1.shape[1] steps.

    acc[b, j] = [angle_full, angle_half, log_full, log_half] weighted sums,
    wacc = [weight_full, weight_half]; logn[b, j] accumulates log-norms.
    """
    B = A0.shape[0]
    n = F1.shape[1]
    E1 = np.empty((2, 2))
    E2 = np.empty((2, 2))
    for s in range(n):
        tm = t0 + (s + 0.5) * h
        wf = _bump(tm / T) * h
        wh = _bump(tm / Th) * h
        wacc[0] += wf
        wacc[1] += wh
        for b in range(B):
            p = pidx[b]
            sc = scale[b]
            x00 = A0[b, 0, 0] + sc * F1[p, s, 0, 0]
            x01 = A0[b, 0, 1] + sc * F1[p, s, 0, 1]
            x10 = A0[b, 1, 0] + sc * F1[p, s, 1, 0]
            y00 = A0[b, 0, 0] + sc * F2[p, s, 0, 0]
            y01 = A0[b, 0, 1] + sc * F2[p, s, 0, 1]
            y10 = A0[b, 1, 0] + sc * F2[p, s, 1, 0]
            _exp_sl2_real(a1 * x00 + a2 * y00, a1 * x01 + a2 * y01,
                          a1 * x10 + a2 * y10, h, E1)
            _exp_sl2_real(a2 * x00 + a1 * y00, a2 * x01 + a1 * y01,
                          a2 * x10 + a1 * y10, h, E2)
            p00 = E1[0, 0] * E2[0, 0] + E1[0, 1] * E2[1, 0]
            p01 = E1[0, 0] * E2[0, 1] + E1[0, 1] * E2[1, 1]
            p10 = E1[1, 0] * E2[0, 0] + E1[1, 1] * E2[1, 0]
            p11 = E1[1, 0] * E2[0, 1] + E1[1, 1] * E2[1, 1]
            for j in range(2):
                u0 = V[b, 0, j]
                u1 = V[b, 1, j]
                v0 = p00 * u0 + p01 * u1
                v1 = p10 * u0 + p11 * u1
                # clockwise turning counts positive
                dth = -math.atan2(u0 * v1 - u1 * v0, u0 * v0 + u1 * v1)
                nv = math.sqrt(v0 * v0 + v1 * v1)
                dl = math.log(nv)
                V[b, 0, j] = v0 / nv
                V[b, 1, j] = v1 / nv
                logn[b, j] += dl
                acc[b, j, 0] += wf * dth / h
                acc[b, j, 1] += wh * dth / h
                acc[b, j, 2] += wf * dl / h
                acc[b, j, 3] += wh * dl / h


def choose_step(size, fsize, max_freq, tol):
    """Step size from the generator scale, forcing size and oscillation rate.

    The local error of the scheme scales like h^5 times fourth derivatives of
    the generator, hence the (fsize * max_freq^4)^(1/5) term.
    """
    K = max(size + fsize ** 0.2 * max_freq ** 0.8, 1e-3)
    return min(0.25, 10.0 * tol ** 0.25 / K)


@dataclass
class _BatchState:
    V: np.ndarray
    logn: np.ndarray
    acc: np.ndarray
    wacc: np.ndarray


def propagate_batch(A0s, F, omega, t, tol=1e-10, scales=None, phases=None,
                    pidx=None, T_weight=None, h=None, max_steps=MAX_STEPS):
    """Integrate a batch of systems A0_b + scale_b * F(phase_{pidx_b} + omega t).

    Returns the fundamental matrices at time t (shape (B, 2, 2)) together with
    the weighted time-averages needed for rotation numbers and Lyapunov
    exponents.
    """
    A0s = np.ascontiguousarray(np.asarray(A0s, float).reshape(-1, 2, 2))
    B = A0s.shape[0]
    omega = np.asarray(omega, float)
    scales = np.ones(B) if scales is None else np.broadcast_to(np.asarray(scales, float), (B,)).copy()
    phases = np.zeros((1, len(omega))) if phases is None else np.atleast_2d(phases)
    pidx = np.zeros(B, np.int64) if pidx is None else np.asarray(pidx, np.int64)
    forcing = _Forcing(F, omega, phases)
    fsize = 0.0 if F is None else F.weighted_norm(0.0) * float(np.abs(scales).max())
    size = float(np.abs(A0s).max()) + fsize
    if t <= 0:
        raise ValueError("integration time must be positive")
    if h is None:
        h = choose_step(size, fsize, forcing.max_freq, tol)
    n = int(math.ceil(t / h))
    if n > max_steps:
        raise StepBudgetError(f"{n} steps needed, budget {max_steps}", t_reached=0.0)
    h = t / n
    T = t if T_weight is None else T_weight
    st = _BatchState(np.tile(np.eye(2), (B, 1, 1)), np.zeros((B, 2)),
                     np.zeros((B, 2, 4)), np.zeros(2))
    done = 0
    while done < n:
        m = min(_CHUNK, n - done)
        tb = (done + np.arange(m)) * h
        F1 = forcing(tb + _C1 * h)
        F2 = forcing(tb + _C2 * h)
        _cf4_chunk(A0s, scales, pidx, F1, F2, h, done * h, T, T / 2,
                   st.V, st.logn, st.acc, st.wacc, _ALPHA1, _ALPHA2)
        done += m
    Phi = st.V * np.exp(st.logn)[:, None, :]
    return Phi, st, h


def integrate_flow(sys: QpLinearSystem, t: float, tol: float = 1e-10):
    """Fundamental matrix Phi^t of the system, Phi^0 = I."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    if t == 0:
        return np.eye(2)
    Phi, _, _ = propagate_batch(sys.A0, sys.F, sys.freq.array, t, tol,
                                phases=[sys.theta0])
    return Phi[0]


@dataclass(frozen=True)
class RotationEstimate:
    rho: float
    error: float
    rho_other: float      # from the second initial vector
    lyapunov: float
    lyapunov_error: float
    converged: bool


def _estimates(st, T, tol):
    W = st.wacc
    ang = st.acc[:, :, 0] / W[0]
    ang_h = st.acc[:, :, 1] / W[1]
    lg = st.acc[:, :, 2] / W[0]
    lg_h = st.acc[:, :, 3] / W[1]
    out = []
    for b in range(st.acc.shape[0]):
        rho = ang[b, 0]
        err = max(abs(ang[b, 0] - ang_h[b, 0]), abs(ang[b, 0] - ang[b, 1]))
        j = int(np.argmax(lg[b]))
        lyap = max(lg[b, j], 0.0)
        lerr = abs(lg[b, j] - lg_h[b, j])
        out.append(RotationEstimate(float(rho), float(err), float(ang[b, 1]),
                                    float(lyap), float(lerr), bool(err < tol)))
    return out


def rotation_number(sys: QpLinearSystem, T_max: float = 2000.0, tol: float = 1e-6,
                    step_tol: float = 1e-9) -> RotationEstimate:
    """Weighted-average rotation number; flagged rather than raised when unconverged."""
    return rotation_numbers_batch([sys.A0], sys.F, sys.freq, T_max, tol,
                                  phases=[sys.theta0], step_tol=step_tol)[0]


def rotation_numbers_batch(A0s, F, freq, T_max=2000.0, tol=1e-6, scales=None,
                           phases=None, step_tol=1e-9):
    omega = freq.array if isinstance(freq, FrequencyVector) else np.asarray(freq)
    _, st, _ = propagate_batch(A0s, F, omega, T_max, step_tol, scales=scales,
                               phases=phases)
    return _estimates(st, T_max, tol)


def lyapunov_exponent(sys: QpLinearSystem, T_max: float = 1000.0) -> float:
    return rotation_number(sys, T_max).lyapunov


def poincare_map(sys: QpLinearSystem, theta_tilde, tol=1e-12):
    """Time-one map started at phase (0, theta_tilde); vectorised over theta_tilde rows."""
    w = sys.freq.array
    if abs(w[0] - 1.0) > 1e-15:
        raise ValueError("first frequency component must be 1")
    tt = np.asarray(theta_tilde, float)
    single = tt.ndim == 1 and sys.freq.d > 1 and tt.shape[0] == sys.freq.d - 1 or tt.ndim == 0
    tt = tt.reshape(-1, sys.freq.d - 1)
    phases = np.concatenate([np.zeros((len(tt), 1)), tt], axis=1)
    B = len(tt)
    Phi, _, _ = propagate_batch(np.broadcast_to(sys.A0, (B, 2, 2)), sys.F, w, 1.0,
                                tol, phases=phases, pidx=np.arange(B))
    return Phi[0] if single else Phi


def flow_trace(sys: QpLinearSystem, T: float, n_samples: int = 200, tol=1e-10):
    """Rows (t, Phi^t, running rho = clockwise angle of Phi^t e1 over t)."""
    sub = max(1, int(math.ceil(T / n_samples * 4.0 * sys.size())))
    n = n_samples * sub
    dt = T / n
    Phi = np.eye(2)
    angle = 0.0
    rows = []
    for i in range(n):
        cur = sys.with_phase(np.asarray(sys.theta0) + i * dt * sys.freq.array)
        new = integrate_flow(cur, dt, tol) @ Phi
        u, w = Phi[:, 0], new[:, 0]
        angle += -math.atan2(u[0] * w[1] - u[1] * w[0], u @ w)
        Phi = new
        if (i + 1) % sub == 0:
            t = (i + 1) * dt
            rows.append((t, Phi.copy(), angle / t))
    return rows


# --- discrete cocycles ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class DiscreteCocycle:
    """theta -> matrices(theta) in SL(2,R) over the rotation theta -> theta + alpha."""
    alpha: tuple
    matrices: Callable
    potential: Optional[Callable] = None     # Schrodinger form [[-E + V, -1], [1, 0]]
    energy: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(np.atleast_1d(np.asarray(self.alpha, float))))
        th = np.random.default_rng(0).random((16, len(self.alpha)))
        m = self.matrices(th)
        det = m[:, 0, 0] * m[:, 1, 1] - m[:, 0, 1] * m[:, 1, 0]
        if np.abs(det - 1).max() > 1e-10:
            raise ValueError("cocycle is not unimodular")


def constant_cocycle(M, alpha=(0.0,)):
    M = np.asarray(M, float)
    return DiscreteCocycle(alpha, lambda th: np.broadcast_to(M, (len(th), 2, 2)))


@numba.njit(cache=True)
def _discrete_angles(mats, acc):
    """Weighted angle averages along a matrix sequence; lift branch (-pi/2, 3pi/2]."""
    n = mats.shape[0]
    u0, u1 = 1.0, 0.0
    for i in range(n):
        v0 = mats[i, 0, 0] * u0 + mats[i, 0, 1] * u1
        v1 = mats[i, 1, 0] * u0 + mats[i, 1, 1] * u1
        d = math.atan2(u0 * v1 - u1 * v0, u0 * v0 + u1 * v1)
        if d <= -0.5 * math.pi:
            d += 2.0 * math.pi
        nv = math.sqrt(v0 * v0 + v1 * v1)
        u0, u1 = v0 / nv, v1 / nv
        x = (i + 0.5) / n
        xh = (i + 0.5) / (n // 2)
        w = _bump(x)
        wh = _bump(xh)
        acc[0] += w * d
        acc[1] += w
        acc[2] += wh * d
        acc[3] += wh
        acc[4] += math.log(nv)


@dataclass(frozen=True)
class FiberedRotation:
    rho: float
    error: float
    lyapunov: float
    converged: bool


def fibered_rotation_number(c: DiscreteCocycle, N: int = 100_000, tol=1e-8,
                            theta0=None) -> FiberedRotation:
    """Fibered rotation number in turns, mod 1, with a halving-based error."""
    if N < 1000:
        raise ValueError("N must be at least 1000")
    alpha = np.asarray(c.alpha)
    th0 = np.zeros_like(alpha) if theta0 is None else np.asarray(theta0, float)
    th = (th0 + np.arange(N)[:, None] * alpha) % 1.0
    mats = np.ascontiguousarray(np.asarray(c.matrices(th), float))
    acc = np.zeros(5)
    _discrete_angles(mats, acc)
    rho = acc[0] / acc[1] / TURN
    rho_h = acc[2] / acc[3] / TURN
    err = abs(rho - rho_h)
    return FiberedRotation(float(rho % 1.0), float(err), max(acc[4] / N, 0.0), bool(err < tol))


@numba.njit(cache=True, parallel=True)
def _schrodinger_batch(V, E, out):
    n = V.shape[0]
    half = n // 2
    for e in numba.prange(E.shape[0]):
        u0, u1 = 1.0, 0.0
        s = 0.0
        w = 0.0
        sh = 0.0
        wh = 0.0
        lg = 0.0
        for i in range(n):
            a = -E[e] + V[i]
            v0 = a * u0 - u1
            v1 = u0
            d = math.atan2(u0 * v1 - u1 * v0, u0 * v0 + u1 * v1)
            if d <= -0.5 * math.pi:
                d += 2.0 * math.pi
            nv = math.sqrt(v0 * v0 + v1 * v1)
            u0, u1 = v0 / nv, v1 / nv
            lg += math.log(nv)
            x = (i + 0.5) / n
            bw = _bump(x)
            s += bw * d
            w += bw
            if i < half:
                bh = _bump((i + 0.5) / half)
                sh += bh * d
                wh += bh
        out[e, 0] = s / w
        out[e, 1] = sh / wh
        out[e, 2] = lg / n


def schrodinger_rotation_numbers(alpha, potential, energies, N=100_000, theta0=0.0):
    """Batched fibered rotation numbers (turns) and Lyapunov exponents of
    [[-E + V(theta), -1], [1, 0]] over theta -> theta + alpha."""
    th = (theta0 + np.arange(N) * float(alpha)) % 1.0
    V = np.ascontiguousarray(potential(th), dtype=float)
    E = np.ascontiguousarray(np.atleast_1d(energies), dtype=float)
    out = np.empty((len(E), 3))
    _schrodinger_batch(V, E, out)
    rho = out[:, 0] / TURN
    err = np.abs(out[:, 0] - out[:, 1]) / TURN
    return rho, err, np.maximum(out[:, 2], 0.0)


def discrete_trace(c: DiscreteCocycle, N: int, stride: int = 1):
    """Rows (n, product matrix entries, running rho) along the orbit from theta=0."""
    alpha = np.asarray(c.alpha)
    th = (np.arange(N)[:, None] * alpha) % 1.0
    mats = c.matrices(th)
    P = np.eye(2)
    u = np.array([1.0, 0.0])
    total = 0.0
    rows = []
    for i in range(N):
        P = mats[i] @ P
        v = mats[i] @ u
        d = math.atan2(u[0] * v[1] - u[1] * v[0], u @ v)
        if d <= -0.5 * math.pi:
            d += TURN
        total += d
        u = v / np.linalg.norm(v)
        if (i + 1) % stride == 0:
            rows.append((i + 1, P.copy(), total / (i + 1) / TURN))
    return rows
