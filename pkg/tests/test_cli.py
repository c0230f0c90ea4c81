import csv
import json
import subprocess
import sys

import pytest

from sllbfem.cli import main

SMALL_CONV = ["--m", "2", "--h-levels", "2", "4", "--reference", "8", "--T", "0.05"]


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_spatial_convergence_artifacts(tmp_path):
    out = tmp_path / "a"
    assert main(["run", "sim1", "convergence_spatial", "--seed", "7", *SMALL_CONV, "--out", str(out)]) == 0
    rows = _read(out / "convergence.csv")
    assert rows[0] == ["level", "h", "inv_h", "E0", "E1"] and len(rows) == 3
    assert all(len(r[3].replace("e-", "").replace(".", "").lstrip("0")) <= 17 for r in rows[1:])
    summary = json.loads((out / "summary.json").read_text())
    assert {"order_E0", "order_E1"} <= set(summary)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 7 and manifest["resolved"]["kappa1"] == 0.2


def test_same_seed_same_bytes(tmp_path):
    for name in ("a", "b"):
        assert main(["run", "sim3", "convergence_temporal", "--m", "2", "--k-levels", "10", "20",
                     "--reference", "40", "--T", "0.1", "--out", str(tmp_path / name)]) == 0
    for f in ("convergence.csv", "summary.json", "manifest.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_stability_with_noise_preset(tmp_path):
    out = tmp_path / "s"
    cfg = tmp_path / "s.ini"
    cfg.write_text("[run]\nm = 2\n[study]\nn = 8\nt = 0.6\nfit_window = 0.2 0.6\n")
    assert main(["run", "sim3", "stability", "--noise", "small", "--config", str(cfg), "--out", str(out)]) == 0
    rows = _read(out / "stability.csv")
    assert rows[0] == ["t", "mean_eps_0.1", "mean_eps_0.01", "mean_eps_0.001"]
    assert len(json.loads((out / "summary.json").read_text())["lambda"]) == 3


def test_energy_and_single_run(tmp_path):
    assert main(["run", "sim1", "energy", "--m", "2", "--T", "0.05", "--out", str(tmp_path / "e")]) == 0
    rows = _read(tmp_path / "e" / "energy.csv")
    assert rows[0] == ["t", "path_id", "energy"] and len(rows) == 1 + 2 * 6
    assert main(["run", "sim2", "single_run", "--T", "0.03", "--out", str(tmp_path / "r")]) == 0
    assert _read(tmp_path / "r" / "final_field.csv")[0] == ["x", "y", "u1", "u2", "u3"]


def test_custom_simulation_from_config(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(
        "[run]\nsimulation = custom\nstudy = single_run\nscheme = semi\n"
        "[coefficients]\ndim = 1\nkappa1 = 0.3\ngamma = 1.0\nkappa2 = 0.4\nmu = 2.0\n"
        "[fields]\nu0 = 0.3 | -0.2 | 0.5\ng = 0.0 | 0.0 | 0.0\n[study]\nt = 0.05\n"
    )
    out = tmp_path / "c"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    rows = _read(out / "trajectory.csv")
    assert float(rows[-1][1]) < float(rows[1][1])


def test_missing_config_is_config_error(tmp_path):
    out = tmp_path / "never"
    assert main(["run", "sim1", "energy", "--config", str(tmp_path / "nope.ini"), "--out", str(out)]) == 2
    assert not out.exists()


@pytest.mark.parametrize("text, needle", [
    ("[run]\nseed = seven\n", "[run] seed"),
    ("[study]\nh_levels = 4 x\n", "[study] h_levels"),
    ("[run\nseed = 1\n", "line"),
    ("[fields]\ng = 1 2 | oops\n", "[fields] g"),
    ("[bogus]\na = 1\n", "unknown section"),
])
def test_malformed_config_diagnostics(tmp_path, capsys, text, needle):
    cfg = tmp_path / "bad.ini"
    cfg.write_text(text)
    assert main(["run", "sim1", "convergence_spatial", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert needle in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


@pytest.mark.parametrize("argv", [
    ["run", "sim9", "energy"],
    ["run", "sim1", "dance"],
    ["run", "sim2", "energy", "--scheme", "implicit"],
    ["run", "sim1", "convergence_spatial", "--h-levels", "8", "--reference", "16"],
])
def test_bad_arguments_exit_2(tmp_path, argv):
    assert main([*argv, "--out", str(tmp_path / "o")]) == 2


def test_study_failure_exit_1(tmp_path, capsys, monkeypatch):
    import sllbfem.experiments as ex
    from sllbfem.schemes import StepFailure

    def boom(*args, **kwargs):
        raise StepFailure("injected", step=3, residual=1.0)

    monkeypatch.setattr(ex, "run_trajectory", boom)
    code = main(["run", "sim1", "convergence_spatial", *SMALL_CONV, "--out", str(tmp_path / "o")])
    assert code == 1
    err = capsys.readouterr().err
    assert "study failed" in err and "path 0" in err and "level" in err


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "sllbfem", "run", "sim1", "energy", "--config",
                           str(tmp_path / "missing.ini")], capture_output=True, text=True)
    assert proc.returncode == 2 and "config file not found" in proc.stderr
