import hashlib
import math
import subprocess
import sys

import numpy as np
import pytest

from dnls_decay import io
from dnls_decay.pipeline import (
    STAGE_OUTPUTS,
    ComparisonReport,
    ExperimentConfig,
    PipelineError,
    PlotError,
    emit_plots,
    run_pipeline,
)
from dnls_decay.solver import ConfigError

SMALL = dict(L=1024.0, n=2048, dt=0.05, t_max=100.0, schedule="log:1:tmax:20", n_taus=12)


def small(coeffs, **kw):
    return ExperimentConfig(coeffs=coeffs, **{**SMALL, **kw})


def digest(out):
    files = sorted(p for p in out.iterdir() if p.suffix in (".csv", ".json", ".ini"))
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in files}


@pytest.fixture(scope="module")
def weak_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("weak")
    return out, run_pipeline(small({"l4": -1j}), out)


class TestConfig:
    def test_text_round_trip(self):
        cfg = small({"l4": -1j, "a1": 0.25 + 0.1j}, eps=0.1 + 0.2, dt=None, family="sech")
        text = cfg.to_text()
        back = ExperimentConfig.from_text(text)
        assert back == cfg
        assert back.to_text() == text
        assert back.fingerprint() == cfg.fingerprint()

    def test_defaults_are_reference_run(self):
        cfg = ExperimentConfig(coeffs={"l4": -1j})
        assert (cfg.eps, cfg.t_max, cfg.L, cfg.n, cfg.dt) == (0.3, 1000.0, 8192.0, 16384, 0.05)
        cfg.validate()

    def test_inline_comments(self):
        cfg = ExperimentConfig.from_text("[nonlinearity]\nl4 = 0,-1   # weak\n[solver]\ndt = auto  # probe\n")
        assert cfg.coeffs == {"l4": -1j} and cfg.dt is None

    def test_coefficient_file_is_relative_to_config(self, tmp_path):
        (tmp_path / "nl.txt").write_text("l4 = 0,-1\n")
        (tmp_path / "run.ini").write_text("[nonlinearity]\nfile = nl.txt\nl1 = 0.5\n")
        cfg = ExperimentConfig.load(tmp_path / "run.ini")
        nl = cfg.nonlinearity()
        assert nl.l4 == -1j and nl.l1 == 0.5

    @pytest.mark.parametrize("text", [
        "[bogus]\nx = 1\n",
        "[solver]\nspeed = 3\n",
        "[solver]\nn = many\n",
        "[nonlinearity]\nq9 = 1\n",
        "no header\n",
    ])
    def test_bad_text(self, text):
        with pytest.raises(io.InputError):
            ExperimentConfig.from_text(text)

    def test_missing_files(self, tmp_path):
        with pytest.raises(io.InputError):
            ExperimentConfig.load(tmp_path / "absent.ini")
        with pytest.raises(io.InputError):
            ExperimentConfig(coeffs_file="absent.txt", base_dir=str(tmp_path)).validate()

    @pytest.mark.parametrize("kw", [
        {"L": 256.0},
        {"n": 256},
        {"t_max": 2.0},
        {"compare_t_min": 1.0},
        {"tau_min": 10.0, "tau_max": 5.0},
        {"schedule": "log:1:tmax:2", "compare_t_min": 50.0},
    ])
    def test_cross_checks(self, kw):
        with pytest.raises(ConfigError):
            small({"l4": -1j}, **kw).validate()

    def test_invalid_config_stops_before_work(self, tmp_path):
        with pytest.raises(PipelineError) as exc:
            run_pipeline(small({"l4": -1j}, L=100.0), tmp_path / "x")
        assert exc.value.stage == "config"
        assert not (tmp_path / "x").exists()


class TestWeakRun:
    def test_verdicts(self, weak_run):
        out, rep = weak_run
        assert rep.passed
        assert rep.cls == "WeaklyDissipative" and rep.c0 == 1.0 and rep.xi0 == 0.0
        assert np.max(rep.rel_gap) <= 0.10
        assert abs(rep.profile_fit["exponent"] + 0.25) <= 0.02
        assert rep.t[0] >= 10 and rep.t[-1] == 100.0

    def test_outputs(self, weak_run):
        out, rep = weak_run
        for names in STAGE_OUTPUTS.values():
            for name in names:
                assert (out / name).is_file()
        man = io.read_json(out / "manifest.json")
        assert man["boundary_check"]["boundary_safe"] and man["dt_used"] == 0.05
        diag = io.read_csv(out / "diagnostics.csv", ("t", "l2", "h3", "j_h2", "mass_flux", "alpha_env"))
        assert math.e in diag["t"].tolist()

    def test_report_reload(self, weak_run):
        out, rep = weak_run
        back = ComparisonReport.load(out)
        np.testing.assert_array_equal(back.rel_gap, rep.rel_gap)
        assert back.compute_verdicts() == rep.verdicts

    def test_determinism(self, weak_run, tmp_path):
        out, _ = weak_run
        run_pipeline(small({"l4": -1j}), tmp_path)
        assert digest(tmp_path) == digest(out)

    def test_resume_skips_finished_stages(self, weak_run, tmp_path):
        out, _ = weak_run
        for p in out.iterdir():
            (tmp_path / p.name).write_bytes(p.read_bytes())
        (tmp_path / "fits.json").unlink()
        (tmp_path / "comparison.csv").unlink()
        calls = []
        run_pipeline(small({"l4": -1j}), tmp_path, progress=calls.append)
        assert calls == []
        assert digest(tmp_path) == digest(out)

    def test_changed_config_reruns(self, weak_run, tmp_path):
        out, _ = weak_run
        for p in out.iterdir():
            (tmp_path / p.name).write_bytes(p.read_bytes())
        calls = []
        run_pipeline(small({"l4": -1j}, eps=0.2), tmp_path, progress=calls.append)
        assert len(calls) > 10

    def test_plot_scripts(self, weak_run, tmp_path):
        out, rep = weak_run
        for p in out.iterdir():
            (tmp_path / p.name).write_bytes(p.read_bytes())
        paths = emit_plots(rep, tmp_path)
        assert sorted(p.name for p in paths) == ["plot_alpha_envelope.py", "plot_decay.py", "plot_im_nu.py"]
        for p in paths:
            compile(p.read_text(), str(p), "exec")
        (tmp_path / "nu.csv").unlink()
        with pytest.raises(PlotError, match="nu.csv"):
            emit_plots(rep, tmp_path)

    def test_plot_scripts_run(self, weak_run, tmp_path):
        pytest.importorskip("matplotlib")
        out, _ = weak_run
        for p in out.iterdir():
            (tmp_path / p.name).write_bytes(p.read_bytes())
        for name in ("plot_decay.py", "plot_im_nu.py", "plot_alpha_envelope.py"):
            res = subprocess.run([sys.executable, name], cwd=tmp_path, capture_output=True, text=True,
                                 env={"MPLBACKEND": "Agg", "PATH": ""})
            assert res.returncode == 0, res.stderr
        assert len(list(tmp_path.glob("*.png"))) == 3


def test_null_class_is_flat(tmp_path):
    rep = run_pipeline(small({"l1": 1.0}), tmp_path, plots=False)
    assert rep.cls == "NullImaginary"
    assert rep.verdicts["flat"] and rep.verdicts["exponent"]
    assert np.max(np.abs(rep.pde_l2 / rep.pde_l2[0] - 1)) <= 1e-6


def test_strict_decays_faster_than_weak(weak_run, tmp_path):
    _, weak = weak_run
    strict = run_pipeline(small({"l1": -1j}), tmp_path, plots=False)
    assert strict.cls == "StrictlyDissipative" and strict.passed
    np.testing.assert_array_equal(strict.t, weak.t)
    assert np.all(strict.pde_l2 < weak.pde_l2)


def test_indefinite_has_no_profile(tmp_path):
    with pytest.raises(PipelineError) as exc:
        run_pipeline(small({"l1": 0.01j}, t_max=20.0, compare_t_min=10.0, L=300.0), tmp_path, plots=False)
    assert exc.value.stage == "profile"
