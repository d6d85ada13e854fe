"""Local embedding of a discrete cocycle into a quasi-periodic flow.

Given nu and G on T^{d-1}, find an sl(2,R)-valued F on T^d such that the
time-one map of X' = (2 pi nu J + F(theta_0 + omega t)) X, omega = (1, mu),
started at theta_0 = (0, tt), equals exp(2 pi nu J) exp(G(tt)).

Linear algebra is done in the frame Q = Mb X Mb^{-1}, Mb = [[1, -i], [1, i]],
where conjugation by exp(2 pi nu J s) is diagonal: the (1,1) entry is
untouched while the (1,2) and (2,1) entries pick up exp(+-4 pi i nu s).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft
from scipy import optimize

from ..cocycle import propagate_batch
from ..fourier import AnalyticTorusMap
from ..sl2 import J, expm_sl2, inv_unimodular, maxabs, mul2

MB = np.array([[1.0, -1.0j], [1.0, 1.0j]])
MB_INV = 0.5 * np.array([[1.0, 1.0], [1.0j, -1.0j]])
H_MAX_ARG = 5.0 / 6.0


class PreconditionError(ValueError):
    pass


class EmbedDivergenceError(RuntimeError):
    def __init__(self, msg, history=()):
        super().__init__(msg)
        self.history = list(history)


def h_eval(x):
    """H(x) = (exp(2 pi i x) - 1) / (2 pi i x), H(0) = 1."""
    x = np.asarray(x, float)
    if np.any(np.abs(x) > H_MAX_ARG + 1e-12):
        raise PreconditionError("H is only used on [-5/6, 5/6]")
    z = 2j * np.pi * x
    small = np.abs(x) < 1e-4
    with np.errstate(invalid="ignore", divide="ignore"):
        big = np.expm1(z) / np.where(small, 1.0, z)
    ser = 1 + z / 2 + z * z / 6 + z ** 3 / 24 + z ** 4 / 120
    return np.where(small, ser, big)


def _h_any(x):
    # same function without the domain guard, for forward application
    x = np.asarray(x, float)
    z = 2j * np.pi * x
    small = np.abs(x) < 1e-4
    with np.errstate(invalid="ignore", divide="ignore"):
        big = np.expm1(z) / np.where(small, 1.0, z)
    ser = 1 + z / 2 + z * z / 6 + z ** 3 / 24 + z ** 4 / 120
    return np.where(small, ser, big)


def select_ktilde(k, mu, nu_range, shift=2.0):
    """Integer kt with |<k,mu> + shift*nu + kt| <= 5/6 for every nu in nu_range.

    Returns (kt, bound) where bound is the worst case over the range.
    """
    base = float(np.dot(np.atleast_1d(k), np.atleast_1d(mu)))
    lo, hi = sorted((base + shift * nu_range[0], base + shift * nu_range[1]))
    n = np.floor(hi - 0.5)
    if lo <= n + 0.5 <= hi:
        kt = -int(n + 1)          # two nearest integers tie somewhere: take the smaller kt
    else:
        kt = -int(np.round(0.5 * (lo + hi)))
    bound = max(abs(lo + kt), abs(hi + kt))
    if bound > H_MAX_ARG + 1e-12:
        raise PreconditionError(
            f"no E-independent kt for k={tuple(np.atleast_1d(k))}: bound {bound:.3f} > 5/6")
    return kt, bound


def _lattice(dim, N):
    return np.array(list(itertools.product(range(-N, N + 1), repeat=dim)), int).reshape(-1, dim)


@dataclass(frozen=True)
class ResonanceSites:
    """Chosen first-coordinate index for every k, per Q-frame entry."""
    ks: np.ndarray        # (M, d-1)
    kt: np.ndarray        # (M, 3): entries (1,1), (1,2), (2,1)
    x: np.ndarray         # (M, 3): H arguments at nu
    bound: float

    @classmethod
    def build(cls, mu, nu, N, nu_range=None):
        mu = np.atleast_1d(np.asarray(mu, float))
        nu_range = (nu, nu) if nu_range is None else nu_range
        ks = _lattice(len(mu), N)
        kt = np.zeros((len(ks), 3), int)
        worst = 0.0
        index = {tuple(k): i for i, k in enumerate(ks)}
        for i, k in enumerate(ks):
            kt[i, 0], b0 = select_ktilde(k, mu, (0.0, 0.0), shift=0.0)
            kt[i, 1], b1 = select_ktilde(k, mu, nu_range, shift=2.0)
            worst = max(worst, b0, b1)
        for i, k in enumerate(ks):
            kt[i, 2] = -kt[index[tuple(-k)], 1]
        base = ks @ mu
        x = np.stack([base + kt[:, 0], base + 2 * nu + kt[:, 1],
                      base - 2 * nu + kt[:, 2]], axis=1)
        return cls(ks, kt, x, worst)


def _to_q(m):
    return np.einsum("ij,...jk,kl->...il", MB, m, MB_INV)


def _from_q(q):
    return np.einsum("ij,...jk,kl->...il", MB_INV, q, MB)


def q_coefficients(phi: AnalyticTorusMap, N):
    """Q-frame entries (1,1), (1,2), (2,1) of phi's modes |k|_inf <= N."""
    c = phi.resized(N).coeffs
    q = _to_q(c).reshape(-1, 2, 2)
    return np.stack([q[:, 0, 0], q[:, 0, 1], q[:, 1, 0]], axis=1)


def _table_from_sites(sites, vals, N1, dim):
    """Assemble a T^d table (first axis = time index) from per-site Q entries."""
    Nk = int(np.abs(sites.ks).max()) if len(sites.ks) else 0
    Nb = max(N1, Nk)
    q = np.zeros((2 * Nb + 1,) * (dim + 1) + (2, 2), complex)
    for e, (a, b) in enumerate([(0, 0), (0, 1), (1, 0)]):
        for i, k in enumerate(sites.ks):
            idx = (sites.kt[i, e] + Nb,) + tuple(k + Nb)
            q[idx + (a, b)] += vals[i, e]
            if e == 0:
                q[idx + (1, 1)] -= vals[i, e]
    return AnalyticTorusMap(_from_q(q))


def invert_L(phi: AnalyticTorusMap, nu, mu, N=None, sites=None, nu_range=None):
    """Right inverse of L restricted to the resonance-site subspace."""
    N = phi.N if N is None else N
    sites = sites or ResonanceSites.build(mu, nu, N, nu_range)
    qc = q_coefficients(phi, N)
    vals = qc / h_eval(sites.x)
    N1 = int(np.abs(sites.kt).max())
    return _table_from_sites(sites, vals, N1, phi.d)


def apply_L(F: AnalyticTorusMap, nu, mu, N_out=None):
    """L(F)(tt) = int_0^1 e^{-2 pi nu J s} F(s, tt + s mu) e^{2 pi nu J s} ds."""
    mu = np.atleast_1d(np.asarray(mu, float))
    dim = F.d - 1
    N_out = F.N if N_out is None else N_out
    modes = F.mode_grid().reshape(-1, F.d)
    q = _to_q(F.coeffs).reshape(-1, 2, 2)
    base = modes[:, 0] + modes[:, 1:] @ mu
    q = q.copy()
    q[:, 0, 0] *= _h_any(base)
    q[:, 1, 1] *= _h_any(base)
    q[:, 0, 1] *= _h_any(base + 2 * nu)
    q[:, 1, 0] *= _h_any(base - 2 * nu)
    out = np.zeros((2 * N_out + 1,) * dim + (2, 2), complex)
    keep = np.all(np.abs(modes[:, 1:]) <= N_out, axis=1)
    idx = tuple((modes[keep, 1:] + N_out).T)
    np.add.at(out, idx, q[keep])
    return AnalyticTorusMap(_from_q(out))


_ENTRIES = [(0, 0), (0, 1), (1, 0)]


def _site_matrix(e, val):
    q = np.zeros((2, 2), complex)
    a, b = _ENTRIES[e]
    q[a, b] = val
    if e == 0:
        q[1, 1] = -val
    return _from_q(q)


def inverse_bound(sites, r_in, r_out):
    """Per-mode bound c on ||L^{-1} phi||_{r_out} / ||phi||_{r_in}.

    Each k is handled separately; the three real basis directions are pushed
    through the inverse and their images summed (triangle inequality), so c
    bounds the operator norm between the weighted norms.
    """
    basis = [np.array([[1.0, 0], [0, -1.0]]), np.array([[0, 1.0], [0, 0]]),
             np.array([[0, 0], [1.0, 0]])]
    hx = _h_any(sites.x)
    c = 0.0
    for i, k in enumerate(sites.ks):
        k1 = np.abs(k).sum()
        tot = 0.0
        for U in basis:
            q = _to_q(U)
            for e, (a, b) in enumerate(_ENTRIES):
                img = _site_matrix(e, q[a, b] / hx[i, e])
                w = np.exp(2 * np.pi * (abs(sites.kt[i, e]) + k1) * r_out)
                tot += np.abs(img).max() * w
        c = max(c, tot / np.exp(2 * np.pi * k1 * r_in))
    return float(c)


@dataclass(frozen=True, eq=False)
class EmbeddingResult:
    F: AnalyticTorusMap
    nu: float
    mu: tuple
    norm_ratio: float          # ||F||_{h/(1+|mu|)} / ||G||_h
    c: float                   # measured bound on ||L^{-1}||
    poincare_residual: float
    iterations: int
    history: tuple

    @property
    def within_bound(self):
        return self.norm_ratio <= 2 * self.c

    def to_dict(self):
        return {"nu": self.nu, "mu": list(self.mu), "norm_ratio": self.norm_ratio,
                "c": self.c, "bound_2c": 2 * self.c, "within_bound": self.within_bound,
                "poincare_residual": self.poincare_residual,
                "iterations": self.iterations, "residual_history": list(self.history),
                "F": self.F.to_dict()}


def _theta_grid(dim, n):
    ax = np.arange(n) / n
    g = np.stack(np.meshgrid(*([ax] * dim), indexing="ij"), axis=-1)
    return g.reshape(-1, dim)


def poincare_maps(F, nu, mu, grid, tol=1e-13):
    """Time-one maps of X' = (2 pi nu J + F) X from phases (0, tt), tt in grid."""
    mu = np.atleast_1d(np.asarray(mu, float))
    omega = np.concatenate([[1.0], mu])
    phases = np.concatenate([np.zeros((len(grid), 1)), grid], axis=1)
    B = len(grid)
    A0 = np.broadcast_to(2 * np.pi * nu * J, (B, 2, 2))
    Fr = None
    if F is not None and np.abs(F.coeffs).max() > 0:
        Fr = AnalyticTorusMap(F.realified().coeffs)
    Phi, _, _ = propagate_batch(A0, Fr, omega, 1.0, tol, phases=phases,
                                pidx=np.arange(B))
    return Phi


def local_embed(nu, G: AnalyticTorusMap, mu, h=0.0, tol=1e-10, N=None,
                nu_range=None, max_iter=30, step_tol=1e-13):
    """Newton-chord solve of P_F(tt) = exp(2 pi nu J) exp(G(tt)) on the site subspace."""
    mu_arr = np.atleast_1d(np.asarray(mu, float))
    dim = G.d
    if dim != len(mu_arr):
        raise ValueError("G must live on T^{d-1} with d-1 = len(mu)")
    N = G.N if N is None else N
    sites = ResonanceSites.build(mu_arr, nu, N, nu_range)
    n_grid = sfft.next_fast_len(4 * (2 * N + 1))
    grid = _theta_grid(dim, n_grid)
    shape = (n_grid,) * dim
    target = expm_sl2(G.evaluate(grid).real)
    R0 = expm_sl2(-2 * np.pi * nu * J)
    r_out = h / (1 + np.abs(mu_arr).sum())
    c = inverse_bound(sites, h, r_out)
    gnorm = G.weighted_norm(h)

    def residual(F):
        P = poincare_maps(F, nu, mu_arr, grid, step_tol)
        psi = np.einsum("ij,bjk->bik", R0, P) - target
        return psi

    def to_map(psi):
        tl = psi.copy()
        tr = 0.5 * (tl[:, 0, 0] + tl[:, 1, 1])
        tl[:, 0, 0] -= tr
        tl[:, 1, 1] -= tr
        return AnalyticTorusMap.from_grid(tl.reshape(shape + (2, 2)), N, alias_tol=1.0)

    F = AnalyticTorusMap.zeros(dim + 1, 0)
    history = []
    psi = residual(None) if gnorm > 0 else np.zeros((len(grid), 2, 2))
    err = float(np.abs(psi).max())
    history.append(err)
    it = 0
    while err >= tol and it < max_iter:
        it += 1
        step = invert_L(to_map(psi), nu, mu_arr, N, sites)
        F = F - step if F.N == step.N else F.resized(step.N) - step
        F = F.realified()
        psi = residual(F)
        new = float(np.abs(psi).max())
        history.append(new)
        if it >= 3 and new > 0.9 * history[-3]:
            raise EmbedDivergenceError(
                f"Newton-chord stalled at residual {new:.3e} (||G||={gnorm:.3e})", history)
        err = new
    if err >= tol:
        raise EmbedDivergenceError(f"no convergence in {max_iter} iterations", history)
    fnorm = F.weighted_norm(r_out) if F.N > 0 or np.any(F.coeffs) else 0.0
    ratio = fnorm / gnorm if gnorm > 0 else 0.0
    # independent audit on an offset grid
    audit = (grid + 0.5 / n_grid) % 1.0
    P = poincare_maps(F, nu, mu_arr, audit, step_tol)
    want = expm_sl2(2 * np.pi * nu * J) @ expm_sl2(G.evaluate(audit).real)
    pres = float(np.abs(P - want).max())
    return EmbeddingResult(F, float(nu), tuple(mu_arr), float(ratio), c, pres, it,
                           tuple(history))
