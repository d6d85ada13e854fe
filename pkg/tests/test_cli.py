import json
from pathlib import Path

import pytest

from qpkam.cli import EXIT_FLAGGED, EXIT_OK, EXIT_USAGE, main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write(tmp_path, cfg, name="cfg.json"):
    tmp_path.mkdir(parents=True, exist_ok=True)
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def run(tmp_path, command, cfg, *extra):
    out = tmp_path / f"out_{command}"
    path = cfg if isinstance(cfg, Path) else write(tmp_path, cfg)
    code = main([command, "--config", str(path), "--out", str(out), *extra])
    return code, out


class TestUsage:
    def test_unknown_command(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["nope"])
        assert exc.value.code == EXIT_USAGE

    def test_unknown_key(self, tmp_path):
        assert run(tmp_path, "reduce", {"schema": "qpkam/1", "bogus": 1})[0] == EXIT_USAGE

    def test_wrong_schema(self, tmp_path):
        assert run(tmp_path, "reduce", {"schema": "qpkam/0"})[0] == EXIT_USAGE

    def test_missing_file(self, tmp_path):
        assert main(["reduce", "--config", str(tmp_path / "none.json"),
                     "--out", str(tmp_path)]) == EXIT_USAGE

    def test_missing_energy(self, tmp_path):
        cfg = {"family": {"kind": "generic"}}
        assert run(tmp_path, "reduce", cfg)[0] == EXIT_USAGE

    def test_bad_jobs(self, tmp_path):
        cfg = {"family": {"kind": "generic"}, "energy": 1.0}
        assert run(tmp_path, "reduce", cfg, "--jobs", "0")[0] == EXIT_USAGE


class TestReduce:
    def test_zero_perturbation(self, tmp_path):
        cfg = {"family": {"kind": "generic", "random": None}, "energy": 1.3}
        code, out = run(tmp_path, "reduce", cfg)
        assert code == EXIT_OK
        tr = json.loads((out / "transcript.json").read_text())["transcript"]
        assert tr["n_steps"] == 0 and tr["classification"]["kind"] == "Elliptic"

    def test_forward(self, tmp_path):
        code, out = run(tmp_path, "reduce", CONFIGS / "reduce_forward.json")
        assert code == EXIT_OK
        d = json.loads((out / "transcript.json").read_text())
        assert d["verify_residual"] < 1e-8 and d["seed"] == 0

    def test_divergence_is_flagged(self, tmp_path):
        cfg = {"family": {"kind": "generic", "random": {"size": 0.5}}, "energy": 1.3,
               "kam": {"eps0": 1e-6}}
        code, out = run(tmp_path, "reduce", cfg)
        assert code == EXIT_FLAGGED
        assert "error" in json.loads((out / "transcript.json").read_text())

    def test_seed_override_and_determinism(self, tmp_path):
        a = run(tmp_path / "a", "reduce", CONFIGS / "reduce_generic.json", "--seed", "5")[1]
        b = run(tmp_path / "b", "reduce", CONFIGS / "reduce_generic.json", "--seed", "5")[1]
        ta, tb = (a / "transcript.json").read_bytes(), (b / "transcript.json").read_bytes()
        assert ta == tb
        assert json.loads(ta)["seed"] == 5


class TestSweep:
    CFG = {"family": {"kind": "amo", "lam": 0.3},
           "grid": {"start": 0.2, "stop": 1.2, "n": 101},
           "sweep": {"method": "discrete", "k_max": 1, "plateau_tol": 1e-4, "N": 20000}}

    def test_outputs(self, tmp_path):
        code, out = run(tmp_path, "sweep", self.CFG)
        assert code == EXIT_OK
        gaps = json.loads((out / "gaps.json").read_text())["gaps"]
        assert [g["label"][1:] for g in gaps] == [[1]]
        lines = (out / "curve.csv").read_text().splitlines()
        header = next(l for l in lines if not l.startswith("#"))
        assert header.split(",") == ["E", "rho", "err", "lyap", "lyap_err", "class", "flags"]

    def test_jobs_do_not_change_output(self, tmp_path):
        a = run(tmp_path / "a", "sweep", self.CFG)[1]
        b = run(tmp_path / "b", "sweep", self.CFG, "--jobs", "2")[1]
        assert (a / "curve.csv").read_bytes() == (b / "curve.csv").read_bytes()


class TestEmbed:
    def test_converges(self, tmp_path):
        code, out = run(tmp_path, "embed", CONFIGS / "embed.json")
        assert code == EXIT_OK
        res = json.loads((out / "embedding.json").read_text())["result"]
        assert res["poincare_residual"] < 1e-8 and res["within_bound"]

    def test_large_generator_flagged(self, tmp_path):
        cfg = {"embed": {"G": {"N": 3, "size": 2.0}, "N": 8, "max_iter": 6}}
        assert run(tmp_path, "embed", cfg)[0] == EXIT_FLAGGED


class TestSimulate:
    def test_parabolic(self, tmp_path):
        code, out = run(tmp_path, "simulate", CONFIGS / "simulate_parabolic.json")
        assert code == EXIT_OK
        fits = json.loads((out / "fit.json").read_text())["fits"]
        assert all(f["agree"] for f in fits)
        assert (out / "trace.csv").exists()

    def test_short_run_flagged(self, tmp_path):
        cfg = {"family": {"kind": "parabolic"}, "quantum": {"T": 6.0, "n_samples": 13}}
        assert run(tmp_path, "simulate", cfg)[0] == EXIT_FLAGGED

    def test_elliptic_bounded(self, tmp_path):
        cfg = {"family": {"kind": "generic", "random": {"size": 1e-4}}, "energy": 1.7,
               "quantum": {"N_trunc": 128, "T": 30.0, "n_samples": 61, "initial_mode": 0}}
        code, out = run(tmp_path, "simulate", cfg)
        assert code == EXIT_OK
        d = json.loads((out / "fit.json").read_text())
        assert d["form"]["kind"] == "Elliptic" and d["form_source"] == "kam"
        assert d["fits"][0]["fit"]["kind"] == "Bounded"
