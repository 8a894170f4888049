import json
import subprocess
import sys

import numpy as np
import pytest

import mlmctdhx.cli as cli
from mlmctdhx.cli import EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_INVARIANT, main
from mlmctdhx.eom import PropagationError
from mlmctdhx.io import read_checkpoint

CONFIG = {
    "system": {"statistics_A": "boson", "statistics_B": "fermion", "N_A": 2, "N_B": 1,
               "x0_A": 1.0, "x0_B": -1.0, "g_A": 0.2, "g_AB": 0.5},
    "truncation": {"M": 2, "m_A": 2, "m_B": 2, "G": 32, "L": 5.0},
    "propagation": {"t_final": 1.0, "output_stride": 0.1, "checkpoint_stride": 0.5},
    "relaxation": {"tau_max": 60.0},
    "analysis": {"layers": 2},
}
SERIES = ["energies.csv", "populations.csv", "density_A.csv", "density_B.csv",
          "schmidt_layer_1_A.csv", "schmidt_layer_2_B.csv"]


def write_config(path, **propagation):
    cfg = json.loads(json.dumps(CONFIG))
    cfg["propagation"].update(propagation)
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root / "run.json")
    assert main(["run", "--config", cfg, "--out", str(root / "full")]) == 0
    return root


def test_run_writes_outputs(full_run):
    out = full_run / "full"
    for name in SERIES + ["metadata.json", "checkpoint.bin", "ground_state.bin", "relax_energies.csv"]:
        assert (out / name).exists(), name
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["truncation"] == "2-(2,2)"
    assert meta["invariants"]["max_norm_deviation"] < 1e-8
    assert meta["coefficients"] == 4 + 2 * (3 + 2)
    data = np.loadtxt(out / "energies.csv", delimiter=",", skiprows=1)
    np.testing.assert_allclose(data[:, 0], np.arange(11) * 0.1, atol=1e-12)
    _, header = read_checkpoint(out / "checkpoint.bin")
    assert header["t"] == pytest.approx(1.0)


def test_resume_is_bit_identical(full_run):
    first = full_run / "first"
    half = write_config(full_run / "half.json", t_final=0.5)
    assert main(["run", "--config", half, "--out", str(first)]) == 0
    cfg = write_config(full_run / "resume.json")
    resumed = full_run / "resumed"
    assert main(["resume", "--config", cfg, "--checkpoint", str(first / "checkpoint.bin"),
                 "--out", str(resumed)]) == 0
    for name in SERIES + ["checkpoint.bin"]:
        assert (resumed / name).read_bytes() == (full_run / "full" / name).read_bytes(), name
    assert not (resumed / "previous").exists()


def test_compare_with_itself(full_run, capsys):
    out = full_run / "cmp"
    run = str(full_run / "full")
    assert main(["compare", run, run, "--out", str(out)]) == 0
    table = np.loadtxt(out / "compare.csv", delimiter=",", skiprows=1)
    assert np.all(table[:, 1:3] == 0)
    summary = json.loads((out / "compare_summary.json").read_text())
    assert summary["Delta_A"]["max"] == 0
    assert "Delta_A" in capsys.readouterr().out


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"system": {"N_A": -1}}')
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert main(["run", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert main(["compare", str(tmp_path), str(tmp_path), "--out", str(tmp_path / "c")]) == EXIT_CONFIG
    assert "error" in capsys.readouterr().err


def test_resume_rejects_mismatched_checkpoint(full_run, tmp_path):
    cfg = json.loads(json.dumps(CONFIG))
    cfg["truncation"]["G"] = 40
    path = tmp_path / "other.json"
    path.write_text(json.dumps(cfg))
    code = main(["resume", "--config", str(path), "--checkpoint",
                 str(full_run / "full" / "checkpoint.bin"), "--out", str(tmp_path / "r")])
    assert code == EXIT_CONFIG


def test_unconverged_relaxation_exit_4(tmp_path):
    cfg = json.loads(json.dumps(CONFIG))
    cfg["relaxation"] = {"tau_max": 1.0}
    path = tmp_path / "short.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "o"
    assert main(["relax-only", "--config", str(path), "--out", str(out)]) == EXIT_CONVERGENCE
    record = json.loads((out / "error.json").read_text())
    assert record["error"] == "relaxation_not_converged"
    read_checkpoint(out / "checkpoint.bin")


def test_invariant_violation_exit_3(tmp_path, monkeypatch):
    def failing(state, system, config, observer=None):
        raise PropagationError("norm drift", state.with_time(0.3), {"norm": 1e-6})

    monkeypatch.setattr(cli, "propagate", failing)
    out = tmp_path / "o"
    assert main(["run", "--config", write_config(tmp_path / "c.json"), "--out", str(out)]) == EXIT_INVARIANT
    record = json.loads((out / "error.json").read_text())
    assert record["error"] == "invariant_violation"
    assert record["t"] == 0.3 and record["diagnostics"]["norm"] == 1e-6
    assert read_checkpoint(out / "checkpoint.bin")[1]["t"] == 0.3


def test_console_entry_point(tmp_path):
    done = subprocess.run([sys.executable, "-m", "mlmctdhx.cli", "--help"], capture_output=True, text=True)
    assert done.returncode == 0
    assert "resume" in done.stdout
