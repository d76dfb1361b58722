import json
import math

import pytest

from mfgturnpike import cli
from mfgturnpike.io import read_csv
from mfgturnpike.presets import PRESETS, preset_config, presets


def run_cli(*args):
    return cli.main(list(args))


def test_presets_listing(capsys):
    assert run_cli("presets") == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) >= 7
    for name in ("cosine-spectrum", "cosine-turnpike", "cosine-critical", "cosine-bifurcation",
                 "two-mode-threshold", "2d-spectrum", "chaos-subcritical"):
        assert name in presets()
    assert all(preset_config(n)["kind"] in cli.KINDS for n in PRESETS)


def test_unknown_preset_is_config_error(tmp_path):
    assert run_cli("spectrum", "--preset", "nope", "--out", str(tmp_path / "o")) == 2
    assert not (tmp_path / "o").exists()


def test_spectrum_preset(tmp_path):
    out = tmp_path / "o"
    assert run_cli("spectrum", "--preset", "cosine-spectrum", "--out", str(out)) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["gamma_c"] == pytest.approx(8 * math.pi**2, rel=1e-12)
    assert summary["c_star"] == pytest.approx(math.pi * math.sqrt(2), rel=1e-12)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "ok"
    assert manifest["versions"]["mfgturnpike"]
    assert len(manifest["config_sha256"]) == 64
    assert set(manifest["artifacts"]) == {"spectrum.csv", "spectrum.svg", "summary.json"}
    assert (out / "spectrum.svg").read_text().lstrip().startswith("<?xml")


def test_two_mode_preset(tmp_path):
    out = tmp_path / "o"
    assert run_cli("spectrum", "--preset", "two-mode-threshold", "--out", str(out)) == 0
    scan = {round(float(r["a1_over_a2"]), 6): r for r in read_csv(out / "threshold_scan.csv")}
    assert scan[round(1 / 3, 6)]["critical_modes"] == "1"
    assert scan[0.3]["critical_modes"] == "1"
    assert scan[0.25]["degenerate"] == "True"
    assert scan[0.2]["critical_modes"] == "2"


def test_2d_preset(tmp_path):
    out = tmp_path / "o"
    assert run_cli("spectrum", "--preset", "2d-spectrum", "--out", str(out)) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["critical_set"] == [[[1, 0], [-1, 0]]]


def test_plots_are_deterministic(tmp_path):
    for d in ("a", "b"):
        assert run_cli("spectrum", "--preset", "cosine-spectrum", "--out", str(tmp_path / d)) == 0
    assert (tmp_path / "a" / "spectrum.svg").read_bytes() == (tmp_path / "b" / "spectrum.svg").read_bytes()
    assert (tmp_path / "a" / "spectrum.csv").read_bytes() == (tmp_path / "b" / "spectrum.csv").read_bytes()


@pytest.mark.parametrize("text", ["", "   \n", "{\"kind\": ", "[1, 2]"])
def test_malformed_config(tmp_path, capsys, text):
    cfg = tmp_path / "c.json"
    cfg.write_text(text)
    out = tmp_path / "o"
    assert run_cli("spectrum", "--config", str(cfg), "--out", str(out)) == 2
    assert not out.exists()
    assert "c.json:" in capsys.readouterr().err


def test_missing_field_reports_line(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"kind": "linear-bvp", "model": {"nu": 1.0, "kernel": {"preset": "cosine"},
                                                               "gamma_over_gamma_c": 0.5},
                               "experiment": {"epsilon": 0.01}}, indent=2))
    assert run_cli("linear-bvp", "--config", str(cfg), "--out", str(tmp_path / "o")) == 2
    err = capsys.readouterr().err
    assert "experiment.T" in err and "c.json:" in err


def test_kind_mismatch(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"kind": "solve", "model": {"kernel": {"preset": "cosine"}}}))
    assert run_cli("spectrum", "--config", str(cfg), "--out", str(tmp_path / "o")) == 2


def test_kernel_file_relative_to_config(tmp_path):
    from mfgturnpike.spectral import make_two_mode_kernel, save_kernel

    save_kernel(make_two_mode_kernel(1.0, 5.0), tmp_path / "k.json")
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"kind": "spectrum", "model": {"kernel": {"file": "k.json"}, "gamma": 10.0}}))
    out = tmp_path / "o"
    assert run_cli("spectrum", "--config", str(cfg), "--out", str(out)) == 0
    assert json.loads((out / "summary.json").read_text())["critical_set"] == [[[2], [-2]]]


def test_monotone_kernel_needs_explicit_gamma(tmp_path):
    cfg = tmp_path / "c.json"
    kernel = {"dim": 1, "coeffs": [{"xi": [1], "khat": 0.5}]}
    cfg.write_text(json.dumps({"kind": "spectrum", "model": {"kernel": kernel, "gamma_over_gamma_c": 0.5}}))
    assert run_cli("spectrum", "--config", str(cfg), "--out", str(tmp_path / "o")) == 2
    cfg.write_text(json.dumps({"kind": "spectrum", "model": {"kernel": kernel, "gamma": 1000.0}}))
    assert run_cli("spectrum", "--config", str(cfg), "--out", str(tmp_path / "p")) == 0
    assert json.loads((tmp_path / "p" / "summary.json").read_text())["gamma_c"] == "inf"


def test_linear_preset(tmp_path):
    out = tmp_path / "o"
    assert run_cli("linear-bvp", "--preset", "cosine-linear", "--out", str(out)) == 0
    assert json.loads((out / "summary.json").read_text())["ratio"] == pytest.approx(1.0, abs=0.02)
    assert len(read_csv(out / "linear_envelope.csv")) == 401


def test_solve_with_field_dump(tmp_path):
    from mfgturnpike.io import read_field_dump

    cfg = preset_config("cosine-solve")
    cfg["numerics"].update({"nx": 16, "nt_per_unit": 100})
    cfg["experiment"]["dump_fields"] = True
    out = tmp_path / "o"
    assert cli.run(cfg, out, threads=1) == 0
    header, (m, phi) = read_field_dump(out / "fields.bin")
    assert header["nx"] == 16 and m.shape == (101, 16)
    assert abs(m.mean() - 1.0) < 1e-12


def test_solver_failure_keeps_marker(tmp_path):
    cfg = preset_config("cosine-solve")
    cfg["numerics"].update({"nx": 16, "max_iter": 1})
    cfg["experiment"]["epsilon"] = 0.3
    out = tmp_path / "o"
    assert cli.run(cfg, out, threads=1) == 1
    assert (out / "FAILED").exists()
    assert json.loads((out / "manifest.json").read_text())["status"] == "failed"


def test_thread_count(monkeypatch):
    monkeypatch.setenv("TOOL_THREADS", "3")
    assert cli.thread_count(None) == 3
    assert cli.thread_count(2) == 2
    monkeypatch.setenv("TOOL_THREADS", "x")
    with pytest.raises(cli.ConfigError):
        cli.thread_count(None)


def test_bifurcate_small(tmp_path):
    cfg = preset_config("cosine-bifurcation")
    cfg["numerics"]["nx"] = 16
    cfg["experiment"]["points"] = 3
    out = tmp_path / "o"
    assert cli.run(cfg, out, threads=1) == 0
    s = json.loads((out / "summary.json").read_text())
    assert s["diagram"]["points"] == 3
    assert s["beta_check"]["passed"]
    assert (out / "bifurcation.svg").exists()
