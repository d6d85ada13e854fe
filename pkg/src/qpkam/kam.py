"""Eliasson-type reducibility iteration for X' = (A0 + F0(omega t)) X.

Each step conjugates by exp(Z) where Z solves the linearised (homological)
equation  d_omega Z - [A, Z] = F - F_0  mode by mode, and absorbs the full
average F_0 into the next constant part.  When the elliptic phase xi of A is
close to a half lattice frequency pi <n, omega> and the homological solution
blows up, the step first rotates by Y(theta) = exp(pi <n, theta> A / xi),
which lives on the doubled torus and removes the resonance.

The remainder F_{j+1} is evaluated pointwise on a grid from the exact
conjugation formula, so the measured norms are not first-order estimates.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cocycle import QpLinearSystem
from .fourier import ALIAS_TOL, AnalyticTorusMap, FrequencyVector, lattice_ball
from .sl2 import det2, dexp_left, expm_sl2, inv_unimodular, mul2

SIGMA = 1.0 / 33.0


class TruncationCapWarning(UserWarning):
    pass


class SchemeDivergenceError(RuntimeError):
    def __init__(self, msg, transcript=None):
        super().__init__(msg)
        self.transcript = transcript


class ResonanceEscapeError(SchemeDivergenceError):
    pass


class DegenerateResonanceError(SchemeDivergenceError, ValueError):
    pass


@dataclass(frozen=True)
class KamParams:
    eps0: Optional[float] = None      # defaults to the measured ||F0||_{r0}
    sigma: float = SIGMA
    r0: float = 0.05
    max_steps: int = 20
    stop_tol: float = 1e-12
    N_cap: int = 64
    N_table: int = 24                 # box order of the stored remainder
    eta: Optional[float] = None       # classify threshold; default 1e-9 ||B||^2

    @property
    def varsigma(self):
        return np.log(1 + self.sigma) / np.log(8 + 8 * self.sigma)

    def eps(self, j, eps0):
        return eps0 ** ((1 + self.sigma) ** j)

    def radius(self, j):
        return self.r0 * 2.0 ** (-j)

    def N_j(self, j, eps_j):
        dr = self.radius(j) - self.radius(j + 1)
        n = 2 * self.sigma / dr * np.log(1 / eps_j)
        if n > self.N_cap:
            warnings.warn(f"truncation order capped at N_cap={self.N_cap}", TruncationCapWarning,
                          stacklevel=2)
        return int(min(max(np.ceil(n), 1), self.N_cap))


# --- sl(2) coordinates -------------------------------------------------------

def _coords(m):
    return np.stack([m[..., 0, 0], m[..., 0, 1], m[..., 1, 0]], axis=-1)


def _from_coords(v):
    out = np.empty(v.shape[:-1] + (2, 2), dtype=v.dtype)
    out[..., 0, 0] = v[..., 0]
    out[..., 0, 1] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 1] = -v[..., 0]
    return out


def ad_matrix(A):
    """3x3 matrix of X -> [A, X] in the basis diag(1,-1), E12, E21."""
    cols = []
    for e in np.eye(3):
        X = _from_coords(e)
        cols.append(_coords(A @ X - X @ A))
    return np.array(cols).T


@dataclass(frozen=True)
class EigenData:
    xi: complex
    kind: str                 # elliptic | hyperbolic | nilpotent | zero
    nilpotent_rank: int
    frame: np.ndarray
    condition: float


def eigen_data(A) -> EigenData:
    A = np.asarray(A, float)
    d = float(det2(A))
    scale = max(np.abs(A).max(), 1e-300)
    if abs(d) <= 1e-14 * scale * scale:
        rank = int(np.abs(A).max() > 1e-14)
        kind = "nilpotent" if rank else "zero"
        return EigenData(0.0, kind, rank, np.eye(2), np.inf if rank else 1.0)
    xi = np.sqrt(d) if d > 0 else 1j * np.sqrt(-d)
    w, v = np.linalg.eig(A.astype(complex))
    order = np.argsort(w.imag if d > 0 else w.real)[::-1]
    v = v[:, order]
    return EigenData(complex(xi) if d < 0 else float(xi),
                     "elliptic" if d > 0 else "hyperbolic", 0, v,
                     float(np.linalg.cond(v)))


def resonance_candidates(xi, freq, N_j, thresh):
    """All 0 < |n|_1 <= N_j with |2 xi - 2 pi <n, omega>| < thresh, sorted by that gap."""
    n = lattice_ball(freq.d, N_j)
    gap = np.abs(2 * xi - 2 * np.pi * (n @ freq.array))
    keep = gap < thresh
    n, gap = n[keep], gap[keep]
    order = np.lexsort(tuple(n.T[::-1]) + (gap,))
    return n[order], gap[order]


def resonance_scan(xi, freq, N_j, thresh):
    """Minimiser of |2 xi - 2 pi <n, omega>| over 0 < |n|_1 <= N_j if below thresh.

    Ties are broken lexicographically.
    """
    n, gap = resonance_candidates(xi, freq, N_j, thresh)
    if len(n) == 0:
        return None
    return tuple(int(c) for c in n[0])


def _mode_mask(F, N_j):
    k = F.mode_grid()
    l1 = np.abs(k).sum(axis=-1)
    return (l1 <= N_j) & (l1 > 0)


def solve_homological(A, F: AnalyticTorusMap, freq: FrequencyVector, N_j, thresh=0.0):
    """Z with d_omega Z - [A, Z] = T_{N_j} F - F_0 on modes 0 < |k|_1 <= N_j."""
    A = np.asarray(A, float)
    ad = ad_matrix(A)
    k = F.mode_grid()
    mask = _mode_mask(F, N_j)
    lam = 2j * np.pi * (k[mask] @ freq.array)
    Mk = lam[:, None, None] * np.eye(3) - ad[None]
    # smallest singular value is the effective small divisor
    if thresh > 0:
        smin = np.linalg.svd(Mk, compute_uv=False)[:, -1]
        if smin.min() < thresh:
            raise ResonanceEscapeError(f"small divisor {smin.min():.3e} below {thresh:.3e}")
    rhs = _coords(F.coeffs[mask])
    try:
        z = np.linalg.solve(Mk, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError:
        raise ResonanceEscapeError("exact resonance: homological operator is singular") from None
    coeffs = np.zeros_like(F.coeffs)
    coeffs[mask] = _from_coords(z)
    Z = AnalyticTorusMap(coeffs, F.r)
    return Z.realified()


def resonant_rotation(n, xi, A, d):
    """Y(theta) = exp(pi <n, theta> A / xi) as a table on the doubled torus."""
    n = np.asarray(n, int)
    if not np.any(n):
        return AnalyticTorusMap.constant(np.eye(2), d)
    if abs(xi) < 1e-10:
        raise DegenerateResonanceError("elliptic phase too small for a resonant rotation")
    Ah = np.asarray(A, float) / xi
    # cos(pi <n,theta>) I + sin(pi <n,theta>) Ah; harmonics are +-n on 2T^d
    N = int(np.abs(n).max())
    modes = {tuple(n): 0.5 * np.eye(2) - 0.5j * Ah,
             tuple(-n): 0.5 * np.eye(2) + 0.5j * Ah}
    return AnalyticTorusMap.from_modes(d, N, modes, period=2)


def rotate_system(n, xi, A, F: AnalyticTorusMap, freq):
    """Conjugate (A, F) by the resonant rotation; the result lives on T^d again."""
    n = np.asarray(n, int)
    Ah = np.asarray(A, float) / xi
    shift = np.pi * float(n @ freq.array) / xi
    A_new = (1.0 - shift) * np.asarray(A, float)
    AFA = F.conjugate_by(Ah, Ah)
    even = (F - AFA).scale(0.5)
    c = (F + AFA).scale(0.5)
    comm = AnalyticTorusMap(np.einsum("...ij,jk->...ik", F.coeffs, Ah)
                            - np.einsum("ij,...jk->...ik", Ah, F.coeffs), F.r)
    s = comm.scale(0.5)
    N = F.N
    # cos(2 pi <n,theta>) c + sin(2 pi <n,theta>) s
    cos_part = (c.shift_modes(n, N) + c.shift_modes(-n, N)).scale(0.5)
    sin_part = (s.shift_modes(n, N) - s.shift_modes(-n, N)).scale(-0.5j)
    F_new = (even + cos_part + sin_part).realified()
    return A_new, F_new


def conjugate_remainder(A, F: AnalyticTorusMap, Z: AnalyticTorusMap, freq, A_next,
                        N_out, alias_tol=1.0):
    """Table of exp(-Z)(A+F)exp(Z) - exp(-Z) d_omega exp(Z) - A_next."""
    G = F.grid_size(max(N_out, Z.N))
    Fg = F.sample(G).real
    Zg = Z.sample(G).real
    Wg = Z.derivative_along(freq.array).sample(G).real
    E = expm_sl2(Zg)
    Ei = inv_unimodular(E)
    lhs = mul2(mul2(Ei, np.asarray(A, float) + Fg), E) - dexp_left(Zg, Wg) - A_next
    return AnalyticTorusMap.from_grid(lhs, N_out, F.r, alias_tol=alias_tol).realified()


# --- results -----------------------------------------------------------------

@dataclass(frozen=True)
class ReducedForm:
    kind: str                 # Elliptic | Hyperbolic | Parabolic | Zero
    value: float = 0.0        # rho_eff, lambda or kappa

    def to_dict(self):
        return {"kind": self.kind, "value": self.value}


def classify(B, eta=None) -> ReducedForm:
    B = np.asarray(B, float)
    eta = 1e-9 * max(np.abs(B).max() ** 2, 1e-300) if eta is None else eta
    if eta <= 0:
        raise ValueError("eta must be positive")
    d = float(det2(B))
    if d > eta:
        return ReducedForm("Elliptic", float(np.sqrt(d)))
    if d < -eta:
        return ReducedForm("Hyperbolic", float(np.sqrt(-d)))
    if np.abs(B).max() <= eta:
        return ReducedForm("Zero", 0.0)
    # rotate so that the kernel direction becomes e2; then B = [[0,0],[kappa,0]]
    _, _, vt = np.linalg.svd(B)
    v = vt[-1]
    R = np.array([[v[1], v[0]], [-v[0], v[1]]])   # R e2 = v, det R = 1
    Bn = R.T @ B @ R
    return ReducedForm("Parabolic", float(Bn[1, 0]))


@dataclass(frozen=True, eq=False)
class KamStep:
    index: int
    kind: str                         # NonResonant | Resonant
    n: Optional[tuple]
    xi: complex
    Z: AnalyticTorusMap
    Y: Optional[AnalyticTorusMap]
    A_rot: Optional[np.ndarray]       # the A used inside Y
    A_next: np.ndarray
    eps_j: float
    N_j: int
    radius: float
    F_norm: float                     # ||F_j||_{r_j}
    F_next_norm: float                # ||F_{j+1}||_{r_{j+1}}
    Z_norm: float
    tail: float

    def factor(self, theta):
        """Transformation of this step evaluated at theta (shape (..., d))."""
        E = expm_sl2(self.Z.evaluate(theta).real)
        if self.Y is None:
            return E
        ph = np.pi * (np.asarray(theta) @ np.asarray(self.n, float))
        Ah = self.A_rot / self.xi
        Y = np.cos(ph)[..., None, None] * np.eye(2) + np.sin(ph)[..., None, None] * Ah
        return mul2(Y, E)

    def to_dict(self):
        return {"index": self.index, "kind": self.kind,
                "n": None if self.n is None else list(self.n),
                "xi": [float(np.real(self.xi)), float(np.imag(self.xi))],
                "A_next": self.A_next, "eps_j": self.eps_j, "N_j": self.N_j,
                "radius": self.radius, "F_norm": self.F_norm,
                "F_next_norm": self.F_next_norm, "Z_norm": self.Z_norm,
                "truncation_tail": self.tail, "Z": self.Z.to_dict()}


@dataclass(frozen=True, eq=False)
class KamTranscript:
    steps: tuple
    A0: np.ndarray
    B: np.ndarray
    residual: float
    label: tuple
    converged: bool
    status: str
    eps0: float
    F0_norm: float

    def classification(self, eta=None):
        return classify(self.B, eta)

    def transform(self, theta):
        out = np.broadcast_to(np.eye(2), np.shape(theta)[:-1] + (2, 2)).copy()
        for st in self.steps:
            out = mul2(out, st.factor(theta))
        return out

    def to_dict(self, eta=None):
        return {"converged": self.converged, "status": self.status,
                "n_steps": len(self.steps), "eps0": self.eps0,
                "F0_norm": self.F0_norm, "A0": self.A0, "B": self.B,
                "residual": self.residual, "label": list(self.label),
                "classification": self.classification(eta).to_dict(),
                "steps": [s.to_dict() for s in self.steps]}


# --- iteration ---------------------------------------------------------------

def kam_step(j, A, F: AnalyticTorusMap, freq, params: KamParams, eps0):
    """One iteration; returns (KamStep, A_next, F_next)."""
    eps_j = params.eps(j, eps0)
    r_j, r_next = params.radius(j), params.radius(j + 1)
    N_j = params.N_j(j, eps_j)
    F_norm = F.weighted_norm(r_j)
    ed = eigen_data(A)
    kind, n, Y, A_rot = "NonResonant", None, None, None
    A_work, F_work = A, F
    try:
        Z = solve_homological(A, F, freq, N_j)
        z_norm = Z.weighted_norm(r_j)
    except ResonanceEscapeError:
        if ed.kind != "elliptic":
            raise
        Z, z_norm = None, np.inf
    if ed.kind == "elliptic" and z_norm >= eps_j ** (2.0 / 3.0):
        cands, _ = resonance_candidates(ed.xi, freq, N_j, eps_j ** params.sigma)
        if len(cands) == 0 and Z is None:
            raise ResonanceEscapeError("singular homological operator with no resonance candidate")
        if len(cands):
            # pick the candidate whose harmonic dominates the failed solution
            # (or the forcing itself when the solve was singular)
            src = F if Z is None else Z
            mags = []
            for c in cands:
                best = 0.0
                for sgn in (1, -1):
                    idx = tuple(sgn * c + src.N)
                    if all(0 <= i < 2 * src.N + 1 for i in idx):
                        best = max(best, np.abs(src.coeffs[idx]).max())
                mags.append(best)
            n = tuple(int(v) for v in cands[int(np.argmax(mags))])
            kind = "Resonant"
            A_rot = np.asarray(A, float).copy()
            Y = resonant_rotation(n, ed.xi, A, freq.d)
            A_work, F_work = rotate_system(n, ed.xi, A, F, freq)
            Z = solve_homological(A_work, F_work, freq, N_j)
            z_norm = Z.weighted_norm(r_j)
    A_next = np.asarray(A_work, float) + F_work.mean().real
    F_next = conjugate_remainder(A_work, F_work, Z, freq, A_next, F.N)
    step = KamStep(j, kind, n, ed.xi, Z, Y, A_rot, A_next, eps_j, N_j, r_j,
                   F_norm, F_next.weighted_norm(r_next), z_norm, F_next.tail)
    return step, A_next, F_next


def reduce(sys: QpLinearSystem, params: KamParams = KamParams(), raise_on_divergence=True):
    """Iterate KAM steps until ||F_K|| < stop_tol; B := A_K."""
    freq = sys.freq
    A = sys.A0.copy()
    N = max(params.N_table, sys.F.N if sys.F is not None else 0)
    N = min(N, params.N_cap)
    if sys.F is None:
        F = AnalyticTorusMap.zeros(freq.d, N)
    else:
        F = sys.F.resized(N)
        if np.any(np.abs(np.asarray(sys.theta0)) > 0):
            F = _phase_shift(F, sys.theta0)
    F0_norm = F.weighted_norm(params.r0)
    eps0 = params.eps0 if params.eps0 is not None else max(F0_norm, 1e-300)
    steps = []
    status = "converged"
    label = np.zeros(freq.d, int)

    def transcript(conv, st, res):
        return KamTranscript(tuple(steps), sys.A0.copy(), A.copy(), res, tuple(int(v) for v in label),
                             conv, st, float(eps0), float(F0_norm))

    if F0_norm > eps0 * (1 + 1e-12):
        exc = SchemeDivergenceError(f"||F0|| = {F0_norm:.3e} exceeds eps0 = {eps0:.3e}",
                                    transcript(False, "precondition", F0_norm))
        if raise_on_divergence:
            raise exc
        return exc.transcript
    residual = F.weighted_norm(params.radius(0))
    j = 0
    while residual >= params.stop_tol:
        if j >= params.max_steps:
            status = "max_steps"
            break
        step, A, F = kam_step(j, A, F, freq, params, eps0)
        steps.append(step)
        if step.n is not None:
            label = label + np.asarray(step.n)
        residual = step.F_next_norm
        eps_next = params.eps(j + 1, eps0)
        if residual > eps_next and residual >= params.stop_tol:
            status = "diverged"
            tr = transcript(False, status, residual)
            if raise_on_divergence:
                raise SchemeDivergenceError(
                    f"step {j}: ||F_{j + 1}|| = {residual:.3e} > eps_{j + 1} = {eps_next:.3e}", tr)
            return tr
        j += 1
    return transcript(status == "converged", status, residual)


def _phase_shift(F, theta0):
    """Table of theta -> F(theta + theta0)."""
    k = F.mode_grid()
    ph = np.exp(2j * np.pi * (k @ np.asarray(theta0, float)) / F.period)
    return AnalyticTorusMap(F.coeffs * ph[..., None, None], F.r, F.period, F.tail)


def verify_conjugation(sys: QpLinearSystem, transcript: KamTranscript, n_samples=50,
                       rng=None, h=1e-3):
    """max ||d/dt P - (A0+F0) P + P B|| along random orbits, P the total transform."""
    rng = np.random.default_rng(0) if rng is None else rng
    d = sys.freq.d
    w = sys.freq.array
    th = rng.random((n_samples, d))
    t = rng.random(n_samples) * 10.0
    # the transcript works in coordinates shifted by theta0
    base = th[:, None, :] + (t[:, None] + h * np.array([-2, -1, 0, 1, 2]))[..., None] * w
    P = transcript.transform(base)                       # (n, 5, 2, 2)
    dP = (P[:, 0] - 8 * P[:, 1] + 8 * P[:, 3] - P[:, 4]) / (12 * h)
    gen = np.broadcast_to(sys.A0, (n_samples, 2, 2)).copy()
    if sys.F is not None:
        gen += sys.F.evaluate(base[:, 2] + np.asarray(sys.theta0)).real
    res = dP - mul2(gen, P[:, 2]) + mul2(P[:, 2], np.broadcast_to(transcript.B, P[:, 2].shape))
    return float(np.abs(res).max())


def forward_construct(Z: AnalyticTorusMap, B, freq, N_out=None):
    """System (A0, F) with A(theta) = (d_omega e^Z) e^{-Z} + e^Z B e^{-Z}, reducible to B."""
    N_out = Z.N * 6 if N_out is None else N_out
    G = Z.grid_size(N_out)
    Zg = Z.sample(G).real
    Wg = Z.derivative_along(freq.array).sample(G).real
    E = expm_sl2(Zg)
    Ei = inv_unimodular(E)
    # (d e^Z) e^{-Z} = e^Z (e^{-Z} d e^Z) e^{-Z}
    A = mul2(mul2(E, dexp_left(Zg, Wg) + np.asarray(B, float)), Ei)
    tab = AnalyticTorusMap.from_grid(A, N_out, alias_tol=1.0).realified()
    A0 = tab.mean().real
    A0[1, 1] = -A0[0, 0]
    return QpLinearSystem(freq, A0, AnalyticTorusMap(tab.without_mean().coeffs))
