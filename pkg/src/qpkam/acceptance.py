"""Acceptance checks; each returns a CheckResult and prints one pass/fail line."""
from __future__ import annotations

import filecmp
import inspect
import math
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

GOLDEN_ALPHA = (math.sqrt(5) - 1) / 2
AMO_LAMBDA = 0.3
AMO_INTERVAL = (0.2, 1.2)
E_GAP = 0.76          # inside the k=1 almost-Mathieu gap
E_BAND = 0.35         # between the k=1 and k=4 gaps

# norm drifts of every Hermite run made by the checks in this process
_DRIFTS: list = []


@dataclass
class CheckResult:
    index: int
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.index:2d} {self.name} ({self.seconds:.1f}s)"

    def to_dict(self):
        # wall time is left out so that reports stay byte-identical
        return {"index": self.index, "name": self.name, "passed": self.passed,
                "detail": self.detail}


def _timed(index, name, fn, *args, **kw):
    t0 = time.perf_counter()
    passed, detail = fn(*args, **kw)
    return CheckResult(index, name, bool(passed), detail, time.perf_counter() - t0)


def amo_family():
    from .spectrum import AmoEmbedded
    return AmoEmbedded(AMO_LAMBDA, GOLDEN_ALPHA, AMO_INTERVAL)


# 1 and 3 share the same runs ------------------------------------------------------------

_FORWARD_CACHE = {}


def forward_runs(seed=0, n=20):
    if (seed, n) in _FORWARD_CACHE:
        return _FORWARD_CACHE[(seed, n)]
    from .fourier import golden_frequency, random_sl2_map
    from .kam import SchemeDivergenceError, forward_construct, reduce, verify_conjugation

    fq = golden_frequency()
    rng = np.random.default_rng(seed)
    runs = []
    t0 = time.perf_counter()
    for _ in range(n):
        Z = random_sl2_map(rng, 2, 2, 1e-2 * rng.random(), decay=0.5)
        B = rng.normal(size=(2, 2)) * 0.6
        B[1, 1] = -B[0, 0]
        sys_ = forward_construct(Z, B, fq, N_out=24)
        try:
            tr = reduce(sys_)
        except SchemeDivergenceError as exc:
            runs.append({"converged": False, "error": str(exc)})
            continue
        norms = [s.F_norm for s in tr.steps] + [tr.residual]
        runs.append({"converged": tr.converged,
                     "det_error": abs(np.linalg.det(tr.B) - np.linalg.det(B)),
                     "residual": verify_conjugation(sys_, tr),
                     "n_steps": len(tr.steps), "norms": norms})
    out = (runs, time.perf_counter() - t0)
    _FORWARD_CACHE[(seed, n)] = out
    return out


def check_forward(seed=0):
    runs, secs = forward_runs(seed)
    ok = [r["converged"] and r["det_error"] < 1e-8 and r["residual"] < 1e-6 for r in runs]
    worst_det = max((r.get("det_error", math.inf) for r in runs), default=math.inf)
    worst_res = max((r.get("residual", math.inf) for r in runs), default=math.inf)
    return all(ok) and secs < 60, {"n_runs": len(runs), "n_ok": int(sum(ok)),
                                   "max_det_error": worst_det, "max_residual": worst_res,
                                   "runtime_s": round(secs, 1)}


def check_contraction(seed=0):
    runs, _ = forward_runs(seed)
    bad = 0
    worst = -math.inf
    for r in runs:
        if not r["converged"]:
            continue
        nm = r["norms"]
        for j in range(1, len(nm) - 1):
            if nm[j] <= 0 or nm[j + 1] == 0:
                continue
            # exponent actually achieved: ||F_{j+1}|| = ||F_j||^p
            p = math.log(nm[j + 1]) / math.log(nm[j]) if nm[j] < 1 else -math.inf
            worst = p if worst == -math.inf else min(worst, p)
            if nm[j + 1] > nm[j] ** (1 + 1 / 66):
                bad += 1
    return bad == 0, {"violations": bad, "min_exponent": worst, "required": 1 + 1 / 66}


def check_trivial():
    from .fourier import AnalyticTorusMap, golden_frequency
    from .kam import reduce
    from .spectrum import GenericQuadratic

    fam = GenericQuadratic(golden_frequency(), AnalyticTorusMap.zeros(2, 0))
    E = 1.3
    tr = reduce(fam.system_at(E))
    form = tr.classification()
    ok = (len(tr.steps) == 0 and np.array_equal(tr.B, fam.system_at(E).A0)
          and form.kind == "Elliptic" and form.value == float(fam.nu(E)))
    return ok, {"n_steps": len(tr.steps), "kind": form.kind, "value": form.value,
                "nu": float(fam.nu(E))}


def check_shift(seed=0):
    from .cocycle import TURN, QpLinearSystem, rotation_number
    from .fourier import golden_frequency, random_sl2_map
    from .kam import rotate_system

    fq = golden_frequency()
    rng = np.random.default_rng(seed)
    nu = math.pi + 0.01
    A = np.array([[0.0, nu], [-nu, 0.0]])
    F = random_sl2_map(rng, 2, 2, 1e-3, decay=0.5).without_mean()
    n = (1, 0)
    A2, F2 = rotate_system(n, nu, A, F, fq)
    r1 = rotation_number(QpLinearSystem(fq, A, F), T_max=4000, tol=1e-8)
    r2 = rotation_number(QpLinearSystem(fq, A2, F2), T_max=4000, tol=1e-8)
    shift = (r1.rho - r2.rho) / TURN
    want = 0.5 * float(np.dot(n, fq.array))
    err = abs(shift - want)
    return err < 1e-6, {"shift_turns": shift, "expected": want, "error": err,
                        "estimator_error": (r1.error + r2.error) / TURN}


def check_explicit():
    from .quantum import explicit_hyperbolic, explicit_parabolic

    lam, t = 0.5, 1.0
    worst_x = 0.0
    worst_d = 0.0
    for s in (1, 2):
        for v0 in (1j, 0.7 + 1.3j):
            h = explicit_hyperbolic(v0, lam, t, s)
            worst_x = max(worst_x, abs(h["x_ratio"] / h["x_ratio_expected"] - 1))
            worst_d = max(worst_d, abs(h["d_ratio"] / h["d_ratio_expected"] - 1))
    ts = np.linspace(10, 100, 91)
    slopes = {}
    for s in (1, 2):
        y = explicit_parabolic(1j, 1.0, ts, s)
        slopes[s] = float(np.polyfit(np.log(ts), np.log(y), 1)[0])
    ok = worst_x < 1e-12 and all(abs(slopes[s] - s) < 0.02 for s in (1, 2))
    return ok, {"x_ratio_rel_error": worst_x, "d_ratio_rel_error": worst_d,
                "parabolic_slopes": {str(k): v for k, v in slopes.items()}}


def _hermite_vs_gauss(system, T, N_trunc=512, n_samples=201):
    from .quantum import HermiteState, gaussian_hermite, gaussian_trace, hermite_evolve

    t = np.linspace(0.0, T, n_samples)
    tr = hermite_evolve(system, HermiteState(gaussian_hermite(1j, N_trunc)), t, (1.0,))
    _DRIFTS.append(tr.unitarity_drift())
    m = tr.trusted
    gt = gaussian_trace(system, 1j, tr.t[m], (1.0,))
    rel = float(np.max(np.abs(tr.norms[m, 0] / gt.norms[:, 0] - 1)))
    return rel, float(tr.t[m][-1]), tr.leaked_at


def check_oracles():
    fam = amo_family()
    t0 = time.perf_counter()
    rel_e, end_e, leak_e = _hermite_vs_gauss(fam.system_at(E_BAND), 20.0)
    rel_h, end_h, leak_h = _hermite_vs_gauss(fam.system_at(E_GAP), 20.0)
    secs = time.perf_counter() - t0
    ok = rel_e < 1e-4 and rel_h < 1e-4 and secs < 120
    return ok, {"elliptic": {"E": E_BAND, "max_rel_diff": rel_e, "compared_until": end_e},
                "hyperbolic": {"E": E_GAP, "max_rel_diff": rel_h, "compared_until": end_h,
                               "leaked_at": leak_h},
                "runtime_s": round(secs, 1)}


def check_trichotomy():
    from .cocycle import rotation_number
    from .quantum import (HermiteState, explicit_parabolic, fit_growth, hermite_evolve,
                          predict_growth)
    from .kam import ReducedForm

    fam = amo_family()
    t0 = time.perf_counter()
    detail = {}
    # (i) gap interior
    sys_gap = fam.system_at(E_GAP)
    lyap = rotation_number(sys_gap, T_max=2000).lyapunov
    s = 1.0
    tr = hermite_evolve(sys_gap, HermiteState.mode(0, 1024), np.linspace(0, 40, 401), (s,))
    _DRIFTS.append(tr.unitarity_drift())
    fit = fit_growth(*tr.series(s))
    pred = predict_growth(ReducedForm("Hyperbolic", lyap), s)
    rel = abs(fit.value / pred.rate - 1) if fit.kind == "Exponential" else math.inf
    ok_i = fit.kind == "Exponential" and rel < 0.1
    detail["gap"] = {"E": E_GAP, "lyapunov": lyap, "fit": fit.to_dict(),
                     "predicted": pred.to_dict(), "rate_rel_error": rel,
                     "leaked_at": tr.leaked_at, "N_trunc": 1024}
    # (ii) off gap
    sys_band = fam.system_at(E_BAND)
    tr = hermite_evolve(sys_band, HermiteState.mode(0, 256), np.linspace(0, 60, 301), (s,))
    _DRIFTS.append(tr.unitarity_drift())
    fit = fit_growth(*tr.series(s))
    y = tr.norms[:, 0]
    ratio = float(y.max() / y.min())
    ok_ii = fit.kind == "Bounded" and ratio < 5 and math.isnan(tr.leaked_at)
    detail["band"] = {"E": E_BAND, "fit": fit.to_dict(), "max_min_ratio": ratio}
    # (iii) parabolic normal form
    ts = np.linspace(0, 100, 201)
    degs = {}
    ok_iii = True
    for s_ in (1, 2):
        f = fit_growth(ts, explicit_parabolic(1j, 1.0, ts, s_))
        degs[str(s_)] = f.to_dict()
        ok_iii &= f.kind == "Polynomial" and abs(f.value - s_) < 0.05
    detail["parabolic"] = degs
    secs = time.perf_counter() - t0
    detail["runtime_s"] = round(secs, 1)
    return ok_i and ok_ii and ok_iii and secs < 300, detail


def check_gap_labels():
    from .spectrum import detect_gaps, sweep

    fam = amo_family()
    curve = sweep(fam, np.linspace(-2.2, 2.2, 2201), "discrete", N=100_000)
    gaps = detect_gaps(curve, k_max=3, plateau_tol=1e-4)
    rows, ok_val = [], True
    for g in gaps:
        m = (curve.E >= g.a) & (curve.E <= g.b)
        plateau = float(np.median(curve.rho[m]))
        k = g.label[1]
        d = (plateau - k * GOLDEN_ALPHA / 2) % 0.5
        dist = min(d, 0.5 - d)
        ok_val &= dist < 1e-5
        rows.append({"label": list(g.label), "a": g.a, "b": g.b, "length": g.length,
                     "plateau": plateau, "distance_to_lattice": dist})
    by_k = {}
    for g in gaps:
        if g.label[1] != 0:
            by_k.setdefault(abs(g.label[1]), []).append(g.length)
    have = all(k in by_k for k in (1, 2, 3))
    L = [max(by_k[k]) if k in by_k else float("nan") for k in (1, 2, 3)]
    mono = have and L[0] >= L[1] >= L[2]
    return ok_val and mono and not curve.violations, {
        "gaps": rows, "max_length_by_abs_k": L,
        "monotonicity_violations": curve.violations}


def check_measure(seed=1, jobs=1):
    from .fourier import golden_frequency, random_sl2_map
    from .kam import KamParams
    from .spectrum import (GenericQuadratic, detect_gaps, measure_check, predicted_edges,
                           refined_grid, sweep)

    eps0 = 1e-4
    fq = golden_frequency()
    F = random_sl2_map(np.random.default_rng(seed), 2, 3, eps0, r=0.05)
    fam = GenericQuadratic(fq, F)
    centers = predicted_edges(fam, fq.omega, 3)
    grid = refined_grid(fam.interval, 61, centers, 2e-5, 81)
    curve = sweep(fam, grid, "kam", kam_params=KamParams(eps0=eps0), jobs=jobs)
    gaps = detect_gaps(curve, k_max=3, plateau_tol=1e-9)
    total = float(sum(g.length for g in gaps))
    # an empty gap list would satisfy the bound vacuously
    ok = measure_check(gaps, eps0) and len(gaps) > 0
    return ok, {"eps0": eps0, "bound": eps0 ** (1 / 40), "total_gap_length": total,
                "n_gaps": len(gaps), "labels": [list(g.label) for g in gaps],
                "kam_failures": sum("kam_failed" in f for f in curve.flags)}


def check_embedding(seed=0):
    from .fourier import GOLDEN, random_sl2_map
    from .spectrum import amo_nu, h_eval, local_embed
    from .spectrum.embed import ResonanceSites

    x = np.linspace(-5 / 6, 5 / 6, 10_000)
    mod = np.abs(h_eval(x))
    ok_h = bool(mod.min() >= 3 / (5 * math.pi) - 1e-12 and mod.max() <= 1 + 1e-15)
    fam = amo_family()
    nr = fam.nu_range_turns()
    worst, same = 0.0, True
    ref = None
    for E in np.linspace(*fam.interval, 41):
        sites = ResonanceSites.build([GOLDEN_ALPHA], float(amo_nu(E)) / (2 * math.pi), 8, nr)
        worst = max(worst, float(np.abs(sites.x[:, 1:]).max()))
        ref = sites.kt if ref is None else ref
        same &= bool(np.array_equal(ref, sites.kt))
    ok_k = worst <= 5 / 6 and same
    G = random_sl2_map(np.random.default_rng(seed), 1, 3, 1e-3)
    res = local_embed(0.13, G, GOLDEN, h=0.0, N=8)
    ok_e = res.poincare_residual < 1e-8 and res.within_bound
    return ok_h and ok_k and ok_e, {
        "H_min": float(mod.min()), "H_max": float(mod.max()),
        "ktilde_worst": worst, "ktilde_E_independent": same,
        "embed_residual": res.poincare_residual, "norm_ratio": res.norm_ratio,
        "bound_2c": 2 * res.c, "iterations": res.iterations}


def _cli_outputs(tmp: Path, tag: str, seed: int):
    from . import cli, io
    from .config import ExperimentConfig

    cfgs = {
        "reduce": {"schema": "qpkam/1", "family": {"kind": "forward"}},
        "sweep": {"schema": "qpkam/1",
                  "family": {"kind": "generic", "random": {"N": 2, "size": 1e-3}},
                  "grid": {"start": 0.6, "stop": 1.4, "n": 41}, "sweep": {"T": 300.0}},
        "simulate": {"schema": "qpkam/1",
                     "family": {"kind": "generic", "random": {"N": 2, "size": 0.05}},
                     "energy": 1.0, "quantum": {"N_trunc": 64, "T": 12.0, "n_samples": 61,
                                                "s": [0.0, 1.0]}},
        "embed": {"schema": "qpkam/1", "embed": {"N": 6}},
    }
    for cmd, c in cfgs.items():
        d = tmp / tag / cmd
        d.mkdir(parents=True)
        path = d / "config.json"
        path.write_text(io.dumps(c))
        cli.main([cmd, "--config", str(path), "--out", str(d), "--seed", str(seed)])
    return tmp / tag


def check_unitarity_determinism(seed=0):
    from .fourier import golden_frequency, random_sl2_map
    from .cocycle import QpLinearSystem
    from .quantum import HermiteState, hermite_evolve

    fq = golden_frequency()
    F = random_sl2_map(np.random.default_rng(seed), 2, 2, 0.3)
    tr = hermite_evolve(QpLinearSystem(fq, [[0, 1.0], [-1.0, 0]], F), HermiteState.mode(2, 128),
                        np.linspace(0, 20, 41), (0.0,))
    drifts = _DRIFTS + [tr.unitarity_drift()]
    ok_u = max(drifts) < 1e-8
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        a = _cli_outputs(tmp, "a", seed)
        b = _cli_outputs(tmp, "b", seed)
        files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
        same = [filecmp.cmp(a / f, b / f, shallow=False) for f in files]
    ok_d = len(files) > 4 and all(same)
    return ok_u and ok_d, {"max_drift_per_time": max(drifts), "n_runs": len(drifts),
                           "files_compared": [str(f) for f in files],
                           "identical": all(same)}


CHECKS = [
    (1, "forward-construction oracle", check_forward),
    (2, "trivial reducibility", check_trivial),
    (3, "KAM contraction", check_contraction),
    (4, "rotation-number shift identity", check_shift),
    (5, "explicit hyperbolic and parabolic solutions", check_explicit),
    (6, "Hermite vs Gaussian oracle agreement", check_oracles),
    (7, "growth trichotomy on the almost-Mathieu family", check_trichotomy),
    (8, "gap labels and gap-length ordering", check_gap_labels),
    (9, "measure bound on the generic family", check_measure),
    (10, "local embedding", check_embedding),
    (11, "unitarity and determinism", check_unitarity_determinism),
]


def run_check(index, **kw):
    i, name, fn = CHECKS[index - 1]
    params = inspect.signature(fn).parameters
    return _timed(i, name, fn, **{k: v for k, v in kw.items() if k in params})


def run_all(seed=0, jobs=1, stream=None):
    out = []
    for i, _, _ in CHECKS:
        r = run_check(i, seed=seed, jobs=jobs) if i not in (9,) else run_check(i, jobs=jobs)
        out.append(r)
        if stream is not None:
            print(r.line(), file=stream, flush=True)
    return out


if __name__ == "__main__":
    res = run_all(stream=sys.stdout)
    sys.exit(0 if all(r.passed for r in res) else 2)
