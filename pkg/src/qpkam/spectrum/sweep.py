"""Sweeps of rotation number over E, plateau (gap) detection and measure bound."""
from __future__ import annotations

import itertools
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..cocycle import TURN, rotation_numbers_batch, schrodinger_rotation_numbers
from ..io import fmt, write_csv
from ..kam import KamParams, SchemeDivergenceError, classify, reduce

LYAP_FACTOR = 3.0


class GapAmbiguityError(ValueError):
    pass


@dataclass(eq=False)
class SweepCurve:
    E: np.ndarray
    rho: np.ndarray              # turns
    err: np.ndarray
    lyap: np.ndarray
    lyap_err: np.ndarray
    cls: list
    flags: list
    omega: tuple
    method: str
    modulus: float = 0.0         # labels are compared modulo this (0 means exact)
    violations: list = field(default_factory=list)
    rho_fn: Optional[Callable] = None

    def rows(self):
        for i in range(len(self.E)):
            yield (self.E[i], self.rho[i], self.err[i], self.lyap[i], self.lyap_err[i],
                   self.cls[i], ";".join(self.flags[i]))

    def write_csv(self, path, meta=None):
        m = {"method": self.method, "omega": " ".join(fmt(float(w)) for w in self.omega),
             "rho_unit": "turns"}
        m.update(meta or {})
        write_csv(path, ["E", "rho", "err", "lyap", "lyap_err", "class", "flags"],
                  self.rows(), m)

    def to_dict(self):
        return {"method": self.method, "omega": list(self.omega), "E": self.E,
                "rho": self.rho, "err": self.err, "lyap": self.lyap,
                "lyap_err": self.lyap_err, "class": list(self.cls),
                "flags": [list(f) for f in self.flags], "violations": list(self.violations)}


# --- per-E evaluators ----------------------------------------------------------

def _pool(jobs):
    # numba's OpenMP runtime does not survive fork()
    return ProcessPoolExecutor(jobs, mp_context=multiprocessing.get_context("spawn"))


def _lyap_class(lyap, lerr, floor):
    hyp = (lyap > LYAP_FACTOR * lerr) & (lyap > floor)
    return ["Hyperbolic" if h else "Elliptic" for h in hyp]


def _eval_discrete(fam, E, opts):
    lam = fam.lam
    V = lambda th: 2 * lam * np.cos(2 * np.pi * th)
    rho, err, lyap = schrodinger_rotation_numbers(fam.alpha, V, E, int(opts.get("N", 100_000)))
    # the running average of log-norms converges like 1/N
    lerr = np.full(len(E), 10.0 / opts.get("N", 100_000))
    return rho, err, lyap, lerr, _lyap_class(lyap, lerr, opts.get("lyap_floor", 1e-4)), \
        [[] if e < opts.get("tol", 1e-6) else ["unconverged"] for e in err]


def _eval_flow(fam, E, opts):
    for e in E:
        fam.check(e)
    if fam.kind == "amo":
        sys = [fam.system_at(e) for e in E]
        ests = [rotation_numbers_batch([s.A0], s.F, s.freq, opts.get("T", 2000.0),
                                       opts.get("tol", 1e-6))[0] for s in sys]
    else:
        A0, scales, F = fam.batch(E)
        ests = rotation_numbers_batch(A0, F, fam.freq, opts.get("T", 2000.0),
                                      opts.get("tol", 1e-6), scales=scales)
    rho = np.array([x.rho for x in ests]) / TURN
    err = np.array([x.error for x in ests]) / TURN
    lyap = np.array([x.lyapunov for x in ests])
    lerr = np.array([x.lyapunov_error for x in ests])
    flags = [[] if x.converged else ["unconverged"] for x in ests]
    return rho, err, lyap, lerr, _lyap_class(lyap, lerr, opts.get("lyap_floor", 1e-4)), flags


def _kam_point(args):
    fam, e, params = args
    sys = fam.system_at(e)
    try:
        tr = reduce(sys, params)
    except SchemeDivergenceError as exc:
        return None, str(exc)
    return tr, ""


def kam_rho(transcript, omega):
    """Rotation number (turns) read off a converged reduction."""
    shift = 0.5 * float(np.dot(transcript.label, omega))
    B = transcript.B
    d = B[0, 0] * B[1, 1] - B[0, 1] * B[1, 0]
    if d <= 0:
        return shift
    return shift + np.sign(B[0, 1]) * np.sqrt(d) / TURN


def _eval_kam(fam, E, opts):
    params = opts.get("kam_params") or KamParams()
    jobs = int(opts.get("jobs", 1))
    args = [(fam, float(e), params) for e in E]
    if jobs > 1:
        with _pool(jobs) as ex:
            out = list(ex.map(_kam_point, args))
    else:
        out = [_kam_point(a) for a in args]
    n = len(E)
    rho, err = np.empty(n), np.zeros(n)
    lyap, lerr = np.zeros(n), np.zeros(n)
    cls, flags = [], []
    todo = []
    omega = fam.freq.array
    for i, (tr, msg) in enumerate(out):
        if tr is None or not tr.converged:
            todo.append(i)
            cls.append(None)
            flags.append(["kam_failed"])
            continue
        rho[i] = kam_rho(tr, omega)
        err[i] = tr.residual
        c = classify(tr.B, opts.get("eta"))
        lyap[i] = c.value if c.kind == "Hyperbolic" else 0.0
        cls.append(c.kind)
        flags.append([])
    if todo:
        # fall back on the flow estimator
        r2, e2, l2, le2, c2, f2 = _eval_flow(fam, np.asarray(E)[todo], opts)
        for j, i in enumerate(todo):
            rho[i], err[i], lyap[i], lerr[i] = r2[j], e2[j], l2[j], le2[j]
            cls[i] = c2[j]
            flags[i] += f2[j]
    return rho, err, lyap, lerr, cls, flags


_METHODS = {"discrete": _eval_discrete, "flow": _eval_flow, "kam": _eval_kam}


def default_method(fam):
    return "discrete" if fam.kind == "amo" else "flow"


def evaluator(fam, method=None, **opts):
    method = method or default_method(fam)
    if method not in _METHODS:
        raise ValueError(f"unknown sweep method {method!r}")
    if method == "discrete" and fam.kind != "amo":
        raise ValueError("the discrete method needs an almost-Mathieu family")
    fn = _METHODS[method]
    return method, lambda E: fn(fam, np.atleast_1d(np.asarray(E, float)), opts)


def sweep(fam, grid, method=None, mono_tol=1e-7, **opts) -> SweepCurve:
    """Rotation number, Lyapunov exponent and class at every grid point.

    Points whose estimate fails are flagged inline; the sweep itself never aborts.
    """
    E = np.asarray(grid, float)
    if E.ndim != 1 or np.any(np.diff(E) <= 0):
        raise ValueError("grid must be one-dimensional and strictly increasing")
    method, fn = evaluator(fam, method, **opts)
    jobs = int(opts.get("jobs", 1))
    if method != "kam" and jobs > 1 and len(E) > jobs:
        chunks = np.array_split(E, jobs)
        with _pool(jobs) as ex:
            parts = list(ex.map(_chunk_eval, [(fam, method, c, opts) for c in chunks]))
        res = [np.concatenate([p[i] for p in parts]) for i in range(4)]
        res += [list(itertools.chain(*[p[i] for p in parts])) for i in (4, 5)]
    else:
        res = _safe(fn, E)
    rho, err, lyap, lerr, cls, flags = res
    omega = (1.0, fam.alpha) if method == "discrete" else tuple(fam.freq.omega)
    modulus = 0.5 if method == "discrete" else 0.0
    curve = SweepCurve(E, np.asarray(rho), np.asarray(err), np.asarray(lyap),
                       np.asarray(lerr), list(cls), [list(f) for f in flags],
                       tuple(float(w) for w in omega), method, modulus)
    curve.violations = monotonicity_violations(curve, mono_tol)
    for i in curve.violations:
        curve.flags[i].append("nonmonotone")
    curve.rho_fn = lambda x: fn(x)[0]
    return curve


def _chunk_eval(args):
    fam, method, E, opts = args
    _, fn = evaluator(fam, method, **opts)
    return _safe(fn, E)


def _safe(fn, E):
    """Evaluate a batch; on failure retry point by point so that only the
    offending points are recorded as failed."""
    try:
        return fn(E)
    except Exception as exc:          # record, never abort
        if len(E) > 1:
            parts = [_safe(fn, E[i:i + 1]) for i in range(len(E))]
            return tuple(np.concatenate([p[j] for p in parts]) for j in range(4)) + \
                tuple(list(itertools.chain(*[p[j] for p in parts])) for j in (4, 5))
        nan = np.full(1, np.nan)
        return nan, nan.copy(), nan.copy(), nan.copy(), ["Unknown"], \
            [["failed: " + type(exc).__name__]]


def monotonicity_violations(curve, tol=1e-7):
    """Indices i where rho drops from i to i+1 by more than the combined error."""
    d = np.diff(curve.rho)
    lim = np.maximum(tol, curve.err[:-1] + curve.err[1:])
    return [int(i) + 1 for i in np.nonzero(d < -lim)[0]]


# --- gaps ------------------------------------------------------------------------

@dataclass(frozen=True)
class GapRecord:
    label: tuple
    value: float                  # <k, omega> / 2 in turns
    a: float
    b: float
    interior_class: str
    edge_class: tuple = ("unchecked", "unchecked")
    mid_lyapunov: float = float("nan")
    mid_lyapunov_error: float = float("nan")

    @property
    def length(self):
        return self.b - self.a

    def to_dict(self):
        return {"label": list(self.label), "value": self.value, "a": self.a, "b": self.b,
                "length": self.length, "interior_class": self.interior_class,
                "edge_class": list(self.edge_class), "mid_lyapunov": self.mid_lyapunov,
                "mid_lyapunov_error": self.mid_lyapunov_error}


def label_table(omega, k_max, lo, hi, modulus=0.0):
    """Labels k with |k|_1 <= k_max and value <k,omega>/2 in [lo, hi].

    With a modulus (suspended maps, omega = (1, alpha)), the first component is
    free and only the remaining ones are bounded by k_max.
    """
    w = np.asarray(omega, float)
    d = len(w)
    out = []
    if modulus:
        rest = w[1:]
        for k in itertools.product(range(-k_max, k_max + 1), repeat=d - 1):
            if sum(abs(c) for c in k) > k_max:
                continue
            v = 0.5 * float(np.dot(k, rest))
            j0 = int(np.floor((lo - v) / modulus)) - 1
            j1 = int(np.ceil((hi - v) / modulus)) + 1
            for j in range(j0, j1 + 1):
                val = v + modulus * j
                if lo <= val <= hi:
                    out.append(((j,) + tuple(k), val))
    else:
        for k in itertools.product(range(-k_max, k_max + 1), repeat=d):
            if sum(abs(c) for c in k) > k_max:
                continue
            val = 0.5 * float(np.dot(k, w))
            if lo <= val <= hi:
                out.append((tuple(k), val))
    out.sort(key=lambda p: (p[1], p[0]))
    return out


def _bisect(rho_fn, inside, outside, value, tol, res):
    """Shrink [inside, outside] (either order) until shorter than res."""
    while abs(outside - inside) > res:
        mid = 0.5 * (inside + outside)
        if abs(float(rho_fn(mid)[0]) - value) < tol:
            inside = mid
        else:
            outside = mid
    return inside


def detect_gaps(curve: SweepCurve, omega=None, k_max=3, plateau_tol=1e-6,
                refine=True, resolution=None, min_points=2):
    """Maximal runs of grid points sitting on a single label value."""
    omega = curve.omega if omega is None else tuple(omega)
    E, rho = curve.E, curve.rho
    ok = np.isfinite(rho)
    if not ok.any():
        return []
    labels = label_table(omega, k_max, np.nanmin(rho) - plateau_tol,
                         np.nanmax(rho) + plateau_tol, curve.modulus)
    vals = np.array([v for _, v in labels])
    hit = np.full(len(E), -1)
    for i in np.nonzero(ok)[0]:
        idx = np.nonzero(np.abs(vals - rho[i]) < plateau_tol)[0] if len(vals) else []
        if len(idx) > 1:
            raise GapAmbiguityError(
                f"E={E[i]!r}: labels {labels[idx[0]][0]} and {labels[idx[1]][0]} both match")
        if len(idx) == 1:
            hit[i] = idx[0]
    gaps = []
    dE = np.diff(E)
    i = 0
    while i < len(E):
        if hit[i] < 0:
            i += 1
            continue
        j = i
        while j + 1 < len(E) and hit[j + 1] == hit[i]:
            j += 1
        if j - i + 1 >= min_points:
            k, v = labels[hit[i]]
            a, b = E[i], E[j]
            if refine and curve.rho_fn is not None:
                if i > 0:
                    res = (resolution or dE[i - 1] * 1e-3)
                    a = _bisect(curve.rho_fn, E[i], E[i - 1], v, plateau_tol, res)
                if j + 1 < len(E):
                    res = (resolution or dE[j] * 1e-3)
                    b = _bisect(curve.rho_fn, E[j], E[j + 1], v, plateau_tol, res)
            mid = (i + j) // 2
            gaps.append(GapRecord(tuple(int(c) for c in k), float(v), float(a), float(b),
                                  curve.cls[mid], mid_lyapunov=float(curve.lyap[mid]),
                                  mid_lyapunov_error=float(curve.lyap_err[mid])))
        i = j + 1
    return gaps


def audit_edges(gaps, fam, interval=None, params=None, eta=None, offset=None):
    """KAM classification just inside each gap edge (secondary audit)."""
    interval = fam.interval if interval is None else interval
    out = []
    for g in gaps:
        cls = []
        for e in (g.a, g.b):
            if e <= interval[0] or e >= interval[1]:
                cls.append("boundary")
                continue
            try:
                tr = reduce(fam.system_at(e), params or KamParams())
                cls.append(classify(tr.B, eta).kind)
            except SchemeDivergenceError:
                cls.append("kam_failed")
        out.append(GapRecord(g.label, g.value, g.a, g.b, g.interior_class, tuple(cls),
                             g.mid_lyapunov, g.mid_lyapunov_error))
    return out


def gap_lyapunov_consistent(gaps):
    return all(g.mid_lyapunov > LYAP_FACTOR * g.mid_lyapunov_error
               for g in gaps if g.length > 0)


def measure_check(gaps, eps0) -> bool:
    total = float(sum(g.length for g in gaps))
    return total < eps0 ** (1.0 / 40.0)


def refined_grid(interval, n, centers=(), half_width=0.0, n_window=0):
    """Uniform grid plus dense windows around predicted gap positions."""
    pts = [np.linspace(interval[0], interval[1], n)]
    for c in centers:
        if interval[0] < c < interval[1]:
            pts.append(np.clip(np.linspace(c - half_width, c + half_width, n_window),
                               *interval))
    return np.unique(np.concatenate(pts))


def predicted_edges(fam, omega, k_max):
    """E where nu(E) meets a label in radians, for windowed grids (nu increasing)."""
    lo, hi = (float(v) for v in fam.nu(np.asarray(fam.interval)))
    out = []
    for k, v in label_table(omega, k_max, lo / TURN, hi / TURN):
        target = v * TURN
        a, b = fam.interval
        for _ in range(80):
            m = 0.5 * (a + b)
            if fam.nu(m) < target:
                a = m
            else:
                b = m
        out.append(0.5 * (a + b))
    return out


# --- continuous Schroedinger cross-check -------------------------------------------

def fd_spectrum(q, omega, e_range, L=400.0, n=40_000, theta0=None):
    """Approximate spectrum of -y'' + q(omega t) y on [0, L] with Dirichlet ends.

    Second-order finite differences; eigenvalues of a symmetric tridiagonal matrix.
    """
    from scipy.linalg import eigvalsh_tridiagonal

    h = L / (n + 1)
    t = h * np.arange(1, n + 1)
    th = np.outer(t, np.asarray(omega, float))
    if theta0 is not None:
        th = th + np.asarray(theta0, float)
    qv = q.evaluate(th)[:, 0, 0].real
    d = 2.0 / h ** 2 + qv
    e = np.full(n - 1, -1.0 / h ** 2)
    return eigvalsh_tridiagonal(d, e, select="v", select_range=tuple(e_range))


def fd_gap_occupancy(gaps, eigs, margin=0.1):
    """Eigenvalue count in the shrunk interior of each gap against the count
    expected from the local density just outside it."""
    out = []
    for g in gaps:
        w = g.length
        if w <= 0:
            continue
        lo, hi = g.a + margin * w, g.b - margin * w
        inside = int(np.count_nonzero((eigs > lo) & (eigs < hi)))
        near = np.count_nonzero((eigs > g.a - w) & (eigs < g.a)) + \
            np.count_nonzero((eigs > g.b) & (eigs < g.b + w))
        expected = near / 2 * (hi - lo) / w
        out.append({"label": list(g.label), "a": g.a, "b": g.b, "inside": inside,
                    "expected_without_gap": float(expected)})
    return out
