"""Command-line driver: reduce | sweep | simulate | embed | verify-all."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import io
from .config import ExperimentConfig
from .fourier import (AnalyticTorusMap, FrequencyVector, random_sl2_map, scalar_map)
from .kam import (KamParams, SchemeDivergenceError, classify, forward_construct, reduce,
                  verify_conjugation)

EXIT_OK, EXIT_USAGE, EXIT_FLAGGED = 0, 1, 2


class UsageError(Exception):
    pass


# --- builders ------------------------------------------------------------------------

def _modes_map(d, modes, scalar=False):
    if not modes:
        return None
    N = max(max(abs(c) for c in m.k) for m in modes)
    table = {}
    for m in modes:
        if len(m.k) != d:
            raise UsageError(f"mode {m.k} has the wrong dimension")
        table[tuple(m.k)] = m.value
    if scalar:
        return scalar_map(d, N, table).realified()
    return AnalyticTorusMap.from_modes(d, N, {k: np.asarray(v, float)
                                              for k, v in table.items()}).realified()


def kam_params(cfg):
    return KamParams(**cfg.kam.model_dump())


def build_family(cfg):
    from .spectrum import AmoEmbedded, GenericQuadratic, SchrodingerFlow

    fam = cfg.family
    if fam is None:
        raise UsageError("config has no family")
    rng = np.random.default_rng(cfg.seed)
    if fam.kind == "generic":
        freq = FrequencyVector(tuple(fam.omega))
        F = AnalyticTorusMap.zeros(freq.d, 0)
        if fam.random is not None:
            rm = fam.random
            F = random_sl2_map(rng, freq.d, rm.N, rm.size, rm.r, rm.decay)
        extra = _modes_map(freq.d, fam.modes)
        if extra is not None:
            n = max(F.N, extra.N)
            F = F.resized(n) + extra.resized(n)
        return GenericQuadratic(freq, F, tuple(fam.interval))
    if fam.kind == "schrodinger":
        freq = FrequencyVector(tuple(fam.omega))
        q = _modes_map(freq.d, fam.q, scalar=True) or AnalyticTorusMap.zeros(freq.d, 0)
        return SchrodingerFlow(freq, q, tuple(fam.interval))
    if fam.kind == "amo":
        return AmoEmbedded(fam.lam, fam.alpha, tuple(fam.interval), fam.N_embed)
    raise UsageError(f"family kind {fam.kind!r} has no parameter E")


def build_system(cfg):
    fam = cfg.family
    if fam is not None and fam.kind == "forward":
        rng = np.random.default_rng(cfg.seed)
        freq = FrequencyVector(tuple(fam.omega))
        Z = random_sl2_map(rng, freq.d, fam.Z.N, fam.Z.size, fam.Z.r, fam.Z.decay)
        return forward_construct(Z, np.asarray(fam.B, float), freq, fam.N_out)
    if cfg.energy is None:
        raise UsageError("config needs an energy")
    return build_family(cfg).system_at(cfg.energy)


def _header(cfg, command):
    return {"command": command, "seed": cfg.seed, "config": cfg.dump()}


# --- commands --------------------------------------------------------------------------

def cmd_reduce(cfg, out: Path):
    system = build_system(cfg)
    params = kam_params(cfg)
    payload = _header(cfg, "reduce")
    try:
        tr = reduce(system, params)
    except SchemeDivergenceError as exc:
        payload["error"] = str(exc)
        if exc.transcript is not None:
            payload["transcript"] = exc.transcript.to_dict(cfg.kam.eta)
        io.write_json(out / "transcript.json", payload)
        return EXIT_FLAGGED
    payload["transcript"] = tr.to_dict(cfg.kam.eta)
    payload["verify_residual"] = verify_conjugation(system, tr)
    io.write_json(out / "transcript.json", payload)
    return EXIT_OK if tr.converged else EXIT_FLAGGED


def sweep_grid(cfg, fam):
    from .spectrum import predicted_edges, refined_grid

    g = cfg.grid
    if g is None:
        lo, hi = fam.interval
        return np.linspace(lo, hi, 201)
    if g.windows is None:
        return np.linspace(g.start, g.stop, g.n)
    w = g.windows
    centers = predicted_edges(fam, fam.freq.omega, w.k_max)
    return refined_grid((g.start, g.stop), g.n, centers, w.half_width, w.n)


def cmd_sweep(cfg, out: Path):
    from .spectrum import detect_gaps, gap_lyapunov_consistent, measure_check, sweep

    fam = build_family(cfg)
    grid = sweep_grid(cfg, fam)
    sp = cfg.sweep
    curve = sweep(fam, grid, sp.method, mono_tol=sp.mono_tol, T=sp.T, tol=sp.tol, N=sp.N,
                  jobs=cfg.jobs, kam_params=kam_params(cfg), eta=cfg.kam.eta)
    ptol = sp.plateau_tol if curve.method != "kam" else min(sp.plateau_tol, 1e-9)
    gaps = detect_gaps(curve, k_max=sp.k_max, plateau_tol=ptol)
    curve.write_csv(out / "curve.csv", {"seed": cfg.seed, "family": fam.kind})
    eps0 = cfg.kam.eps0
    payload = _header(cfg, "sweep")
    payload.update({
        "method": curve.method, "n_points": len(curve.E),
        "monotonicity_violations": curve.violations,
        "failed_points": [i for i, f in enumerate(curve.flags)
                          if any(x.startswith("failed") for x in f)],
        "gaps": [g.to_dict() for g in gaps],
        "total_gap_length": float(sum(g.length for g in gaps)),
        "gap_lyapunov_consistent": gap_lyapunov_consistent(gaps),
        "measure_check": None if eps0 is None else measure_check(gaps, eps0),
        "measure_bound": None if eps0 is None else eps0 ** (1 / 40),
    })
    io.write_json(out / "gaps.json", payload)
    return EXIT_FLAGGED if payload["failed_points"] else EXIT_OK


def classify_at(cfg, system):
    """Reduced form from KAM; Lyapunov-based fallback when the scheme diverges."""
    from .cocycle import rotation_number
    from .kam import ReducedForm

    try:
        tr = reduce(system, kam_params(cfg))
        if tr.converged:
            return classify(tr.B, cfg.kam.eta), "kam"
    except SchemeDivergenceError:
        pass
    est = rotation_number(system, T_max=cfg.sweep.T, tol=cfg.sweep.tol)
    if est.lyapunov > 3 * est.lyapunov_error and est.lyapunov > 1e-4:
        return ReducedForm("Hyperbolic", est.lyapunov), "lyapunov"
    return ReducedForm("Elliptic", abs(est.rho)), "lyapunov"


def cmd_simulate(cfg, out: Path):
    from .quantum import (GrowthLaw, HermiteState, InsufficientSamplesError,
                          explicit_parabolic, fit_growth, gaussian_hermite, hermite_evolve,
                          predict_growth)
    from .quantum.hermite import SobolevTrace
    from .kam import ReducedForm

    q = cfg.quantum
    t = np.linspace(0.0, q.T, q.n_samples)
    payload = _header(cfg, "simulate")
    if cfg.family is not None and cfg.family.kind == "parabolic":
        kappa = cfg.family.kappa
        beta0 = complex(*q.initial_beta)
        norms = np.stack([explicit_parabolic(beta0, kappa, t, int(s)) for s in q.s], axis=1)
        n = len(t)
        trace = SobolevTrace(tuple(q.s), t, norms, np.ones(n), np.zeros(n), np.ones(n, bool),
                             meta={"model": "explicit_parabolic"})
        form, source = ReducedForm("Parabolic", kappa), "explicit"
    else:
        system = build_system(cfg)
        if q.initial_mode is not None:
            u0 = HermiteState.mode(q.initial_mode, q.N_trunc)
        else:
            u0 = HermiteState(gaussian_hermite(complex(*q.initial_beta), q.N_trunc))
        trace = hermite_evolve(system, u0, t, tuple(q.s), q.dt)
        form, source = classify_at(cfg, system)
    trace.write_csv(out / "trace.csv", {"seed": cfg.seed})
    fits = []
    code = EXIT_OK
    for s in trace.s:
        pred = predict_growth(form, s)
        try:
            fit = fit_growth(*trace.series(s))
            fits.append({"s": s, "fit": fit.to_dict(), "predicted": pred.to_dict(),
                         "agree": fit.kind == pred.kind})
        except InsufficientSamplesError as exc:
            fits.append({"s": s, "error": str(exc), "predicted": pred.to_dict()})
            code = EXIT_FLAGGED
    payload.update({"form": form.to_dict(), "form_source": source, "fits": fits,
                    "leaked_at": trace.leaked_at,
                    "unitarity_drift": trace.unitarity_drift()})
    io.write_json(out / "fit.json", payload)
    return code


def cmd_embed(cfg, out: Path):
    from .spectrum import EmbedDivergenceError, local_embed

    e = cfg.embed
    rng = np.random.default_rng(cfg.seed)
    mu = np.asarray(e.mu, float)
    G = random_sl2_map(rng, len(mu), e.G.N, e.G.size, e.G.r, e.G.decay)
    payload = _header(cfg, "embed")
    try:
        res = local_embed(e.nu, G, mu, h=e.h, tol=e.tol, N=e.N, max_iter=e.max_iter)
    except EmbedDivergenceError as exc:
        payload.update({"error": str(exc), "residual_history": list(exc.history)})
        io.write_json(out / "embedding.json", payload)
        return EXIT_FLAGGED
    payload["G_norm"] = G.weighted_norm(e.h)
    payload["result"] = res.to_dict()
    io.write_json(out / "embedding.json", payload)
    return EXIT_OK if res.poincare_residual < 10 * e.tol else EXIT_FLAGGED


def cmd_verify_all(cfg, out: Path):
    from .acceptance import run_all

    results = run_all(seed=cfg.seed, jobs=cfg.jobs, stream=sys.stdout)
    payload = _header(cfg, "verify-all")
    payload["criteria"] = [r.to_dict() for r in results]
    io.write_json(out / "acceptance.json", payload)
    return EXIT_OK if all(r.passed for r in results) else EXIT_FLAGGED


COMMANDS = {"reduce": cmd_reduce, "sweep": cmd_sweep, "simulate": cmd_simulate,
            "embed": cmd_embed, "verify-all": cmd_verify_all}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def make_parser():
    p = _Parser(prog="qpkam", description=__doc__)
    p.add_argument("command", choices=list(COMMANDS))
    p.add_argument("--config", type=Path, help="JSON experiment config")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--jobs", type=int, help="overrides the config parallelism")
    return p


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        if args.config is not None:
            cfg = ExperimentConfig.load(args.config)
        else:
            cfg = ExperimentConfig()
        if args.jobs is not None and args.jobs < 1:
            raise UsageError("--jobs must be positive")
        cfg = cfg.with_overrides(seed=args.seed, jobs=args.jobs)
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args.out)
    except (UsageError, ValidationError, json.JSONDecodeError, FileNotFoundError) as exc:
        print(f"qpkam: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
