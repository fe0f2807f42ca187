import json
import os
import subprocess
import sys

import numpy as np
import pytest

from nvodmr import cli
from nvodmr.fileio import read_pnm, read_trace

SMALL_SCAN = ["--tile-fov-um", "20", "--tile-pixels", "40", "--tile-tiles-x", "2",
              "--tile-overlap", "0.25"]


def run(capsys, *argv):
    code = cli.run([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if out.strip() else None), err


@pytest.fixture
def doublet_config(tmp_path):
    p = tmp_path / "doublet.json"
    p.write_text(json.dumps({"hamiltonian": {"d_mhz": 2870.0, "e_mhz": 2.82},
                             "lineshape": {"fwhm_mhz": 26.87, "total_contrast": 0.07},
                             "noise": {"sigma": 0.0, "seed": 0}}))
    return p


def test_synth_then_fit(capsys, tmp_path, doublet_config):
    trace = tmp_path / "s.csv"
    code, rep, _ = run(capsys, "synth", "--config", doublet_config, "--out", trace)
    assert code == 0 and rep["command"] == "synth-spectrum" and rep["n_points"] == 512
    code, rep, _ = run(capsys, "fit", trace, "--dips", 2)
    assert code == 0
    assert rep["fit"]["separation_mhz"] == pytest.approx(5.64, abs=0.01)
    assert rep["fit"]["total_contrast"] == pytest.approx(0.07, abs=1e-4)


def test_fit_model_selection_and_model_output(capsys, tmp_path):
    cfg = tmp_path / "z.json"
    cfg.write_text(json.dumps({"field": {"bx_mt": 0.0, "by_mt": 0.0, "bz_mt": 2.0},
                               "lineshape": {"fwhm_mhz": 8.0, "total_contrast": 0.06},
                               "noise": {"sigma": 0.001, "seed": 0}}))
    trace = tmp_path / "s.csv"
    run(capsys, "synth", "--config", cfg, "--out", trace)
    code, rep, _ = run(capsys, "fit", trace, "--out", tmp_path / "m.csv")
    assert code == 0 and rep["fit"]["n_dips"] == 2
    assert len(read_trace(tmp_path / "m.csv")) == 512


def test_pattern(capsys):
    code, rep, _ = run(capsys, "pattern", "--b", "1,1,1", "--scale", "2mT")
    assert code == 0 and rep["count"] == 4
    assert np.linalg.norm(rep["field_mt"]) == pytest.approx(2.0)
    code, rep, _ = run(capsys, "pattern", "--b", "1,0.5,0.25", "--scale", "20G")
    assert rep["count"] == 8


@pytest.mark.parametrize("text,mt", [("2mT", 2.0), ("20 G", 2.0), ("500uT", 0.5), ("1.5", 1.5)])
def test_field_magnitude_parser(text, mt):
    assert cli.parse_field_magnitude(text) == pytest.approx(mt)


def test_invalid_inputs_exit_2(capsys, tmp_path):
    code, rep, err = run(capsys, "fit", tmp_path / "missing.csv")
    assert code == 2 and rep is None and "missing.csv" in err
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"sweep": {"bogus": 1}}))
    code, _, err = run(capsys, "synth", "--config", bad)
    assert code == 2 and "bogus" in err
    code, _, _ = run(capsys, "pattern", "--b", "1,1", "--scale", "2mT")
    assert code == 2
    code, _, _ = run(capsys, "pattern", "--b", "1,1,1", "--scale", "2 furlongs")
    assert code == 2
    code, _, _ = run(capsys, "sweep", "--lockin-mode", "carrier")
    assert code == 2
    with pytest.raises(SystemExit) as info:
        cli.run(["synth", "--sweep-n-points", "many"])
    assert info.value.code == 2


def test_bad_thread_env_exit_2(capsys, tmp_path, doublet_config, monkeypatch):
    trace = tmp_path / "s.csv"
    run(capsys, "synth", "--config", doublet_config, "--out", trace)
    monkeypatch.setenv("NVODMR_THREADS", "lots")
    code, _, err = run(capsys, "fit", trace)
    assert code == 2 and "NVODMR_THREADS" in err


def test_nonconvergence_exit_3(capsys, tmp_path, doublet_config, monkeypatch):
    trace = tmp_path / "s.csv"
    run(capsys, "synth", "--config", doublet_config, "--noise-sigma", "0.003", "--out", trace)
    orig = cli.fit_lorentzians
    monkeypatch.setattr(cli, "fit_lorentzians", lambda t, i, b: orig(t, i, b, max_iter=1))
    code, rep, err = run(capsys, "fit", trace, "--dips", 2)
    assert code == 3 and rep is None and "converge" in err
    from nvodmr import fitting
    f_orig = fitting.fit_lorentzians
    monkeypatch.setattr(fitting, "fit_lorentzians", lambda t, i, b: f_orig(t, i, b, max_iter=1))
    code, _, _ = run(capsys, "fit", trace)
    assert code == 3


def test_invert(capsys, tmp_path):
    code, rep, _ = run(capsys, "invert", "--b", "0.3,0.7,1.1")
    assert code == 0 and rep["consistent"]
    np.testing.assert_allclose(rep["field_mt"], [1.1, 0.7, 0.3], rtol=1e-6)
    freqs = ",".join(str(f) for f in (2700, 2750, 2800, 2850, 2890, 2940, 2990, 3040))
    code, rep, err = run(capsys, "invert", "--freqs", freqs)
    assert code == 4 and rep["consistent"] is False and "exceeds" in err
    code, _, _ = run(capsys, "invert", "--freqs", "1,2,3")
    assert code == 2


def test_invert_from_trace(capsys, tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"field": {"bx_mt": 1.0, "by_mt": 0.5, "bz_mt": 0.25},
                             "lineshape": {"fwhm_mhz": 6.0, "total_contrast": 0.08},
                             "sweep": {"n_points": 2048},
                             "analysis": {"min_prominence": 0.002}}))
    trace = tmp_path / "z.csv"
    assert run(capsys, "synth", "--config", p, "--out", trace)[0] == 0
    code, rep, _ = run(capsys, "invert", trace, "--config", p)
    assert code == 0 and rep["fit"]["n_dips"] == 8
    b = np.array([1.0, 0.5, 0.25])
    np.testing.assert_allclose(rep["field_mt"], b, rtol=0.01)


def test_scan_outputs(capsys, tmp_path):
    code, rep, _ = run(capsys, "scan", "--out-dir", tmp_path, *SMALL_SCAN)
    assert code == 0 and rep["tiles"] == 2 and rep["mosaic_shape"] == [40, 70]
    for name, path in rep["files"].items():
        magic, maxval, data = read_pnm(path)
        assert magic == "P2" and maxval == 65535 and data.shape == (40, 70)
    magic, maxval, data = read_pnm(rep["composite"])
    assert magic == "P3" and data.shape == (40, 70, 3)


def test_odmr_point_and_power_series(capsys, tmp_path):
    code, rep, _ = run(capsys, "odmr-point", "--out", tmp_path / "a.csv")
    assert code == 0 and rep["observed_contrast"] > 0.03
    code, rep, _ = run(capsys, "odmr-point", "--point", "10,12,5", "--out", tmp_path / "b.csv")
    assert code == 0 and rep["observed_contrast"] < 1e-3
    code, rep, _ = run(capsys, "power-series", "--point", "10,12,5", "--out", tmp_path / "p.csv")
    assert code == 0
    assert rep["slopes"]["2PEF"] == pytest.approx(2.0, abs=1e-9)
    assert rep["slopes"]["3PEF"] == pytest.approx(3.0, abs=1e-9)
    header = (tmp_path / "p.csv").read_text().splitlines()[0]
    assert header == "power_mw,2PEF,3PEF,SHG,THG"


PIPELINES = [
    ["synth", "--noise-sigma", "0.01", "--seed", "3"],
    ["sweep", "--noise-sigma", "0.01", "--seed", "3", "--sweep-duration-s", "2"],
    ["scan", "--scan-noise-sigma", "0.05", "--seed", "3", *SMALL_SCAN],
    ["odmr-point", "--noise-sigma", "0.01", "--seed", "3"],
    ["power-series", "--scan-noise-sigma", "0.01", "--seed", "3"],
]


@pytest.mark.parametrize("argv", PIPELINES, ids=lambda a: a[0])
def test_pipelines_byte_identical(capsys, tmp_path, argv):
    outs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        code, rep, _ = run(capsys, *argv, "--out-dir", d)
        assert code == 0
        outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    assert outs[0] == outs[1] and outs[0]


def test_seed_changes_noise(capsys, tmp_path):
    run(capsys, "synth", "--noise-sigma", "0.01", "--seed", "1", "--out", tmp_path / "a.csv")
    run(capsys, "synth", "--noise-sigma", "0.01", "--seed", "2", "--out", tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() != (tmp_path / "b.csv").read_bytes()


def test_override_flags_cover_scalar_config():
    keys = {(s, k) for s, k, _, _ in cli.override_keys()}
    assert ("sweep", "n_points") in keys and ("lockin", "mode") in keys
    assert ("hamiltonian", "e_mhz") in keys and ("noise", "sigma") in keys


def test_run_pipeline(tmp_path, doublet_config, capsys):
    assert cli.run_pipeline("synth", doublet_config, "--out", str(tmp_path / "x.csv")) == 0
    capsys.readouterr()


def test_console_entry_point(tmp_path):
    env = dict(os.environ)
    proc = subprocess.run([sys.executable, "-m", "nvodmr.cli", "pattern", "--b", "1,1,1",
                           "--scale", "2mT"], capture_output=True, text=True, env=env)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["count"] == 4
