"""End-to-end command-line flows: artifacts, exit codes, determinism."""

import json
import subprocess

import numpy as np
import pytest

from nmqsd.cli import main


def _write_config(tmp_path, name="run.json", **overrides):
    data = {
        "model": {"family": "nqubit", "params": {"n": 1, "omega": 1.0}},
        "bath": {"kind": "ou", "gamma": 1.0},
        "sim": {"dt": 0.05, "T": 1.0, "n_traj": 64, "seed": 3,
                "mode": "nonlinear"},
        "initial": {"state": "uniform"},
    }
    data.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


def _read_csv(path):
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]])
    return header, data


def test_simulate_writes_artifacts_and_manifest(tmp_path):
    cfg = _write_config(
        tmp_path,
        output={"observables": ["pop_1", "pop_2", "coh_12", "fidelity"],
                "dumps": ["density", "stderr", "noise", "kernels", "basis"]},
    )
    out = tmp_path / "out"
    rc = main(["simulate", "--config", str(cfg), "--out", str(out)])
    assert rc == 0
    for name in ("observables.csv", "observables.png", "density.csv",
                 "stderr.csv", "noise.csv", "kernels.csv", "basis.csv",
                 "manifest.json"):
        assert (out / name).exists(), name
    header, data = _read_csv(out / "observables.csv")
    assert header == ["t", "pop_1", "pop_2", "coh_12", "fidelity"]
    assert data.shape == (21, 5)
    assert data[0, 1] == pytest.approx(0.5, abs=1e-12)
    assert data[0, 4] == pytest.approx(1.0, abs=1e-7)

    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    assert manifest["seed"] == 3
    assert manifest["k_trunc"] == 0
    assert manifest["mode"] == "nonlinear"
    assert manifest["n_traj"] == 64
    assert manifest["literal_ode"] is False
    assert manifest["config"] == json.loads(cfg.read_text())
    assert "observables.csv" in manifest["artifacts"]
    assert manifest["norm_drift_max"] < 1e-3
    assert manifest["wall_time_s"] >= 0


def test_unknown_config_key_exits_2(tmp_path, capsys):
    cfg = _write_config(
        tmp_path,
        sim={"dt": 0.05, "T": 1.0, "n_traj": 8, "seed": 1, "dtt": 0.1},
    )
    rc = main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "sim.dtt" in capsys.readouterr().err


def test_k_trunc_above_closure_exits_2(tmp_path, capsys):
    cfg = _write_config(
        tmp_path,
        sim={"dt": 0.05, "T": 0.5, "n_traj": 8, "seed": 1, "K_trunc": 3},
    )
    rc = main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "K_trunc" in capsys.readouterr().err


def test_oracle_truncation_failure_exits_3(tmp_path, capsys):
    cfg = _write_config(
        tmp_path,
        model={"family": "nqubit", "params": {"n": 2, "omega": 1.0}},
        sim={"dt": 0.02, "T": 2.0, "n_traj": 16, "seed": 5},
        initial={"state": "excited"},
        oracle={"kind": "pseudomode", "tolerance": 0.05, "n_ph_max": 1},
    )
    rc = main(["oracle-compare", "--config", str(cfg),
               "--out", str(tmp_path / "o")])
    assert rc == 3
    assert "numerical failure" in capsys.readouterr().err


def test_markov_oracle_mismatch_exits_4(tmp_path, capsys):
    # gamma = 1 is strongly non-Markovian; the memoryless reference must fail
    cfg = _write_config(
        tmp_path,
        sim={"dt": 0.02, "T": 2.0, "n_traj": 300, "seed": 5},
        initial={"state": "excited"},
        oracle={"kind": "lindblad", "tolerance": 0.03},
    )
    out = tmp_path / "o"
    rc = main(["oracle-compare", "--config", str(cfg), "--out", str(out)])
    assert rc == 4
    assert "FAIL" in capsys.readouterr().out
    assert (out / "comparison.csv").exists()
    assert (out / "comparison.png").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["passed"] is False
    assert manifest["oracle"] == "lindblad"


def test_oracle_compare_passes_against_mode_expansion(tmp_path, capsys):
    cfg = _write_config(
        tmp_path,
        bath={"kind": "discrete_modes", "g": [0.4], "omega": [1.3]},
        sim={"dt": 0.05, "T": 1.0, "n_traj": 400, "seed": 11},
        oracle={"tolerance": 0.05},  # kind defaults to the mode expansion
    )
    out = tmp_path / "o"
    rc = main(["oracle-compare", "--config", str(cfg), "--out", str(out)])
    assert rc == 0
    assert "PASS" in capsys.readouterr().out
    header, data = _read_csv(out / "comparison.csv")
    assert header == ["t", "trace_distance", "allowed"]
    assert (data[:, 1] <= data[:, 2]).all()


def test_zero_coupling_run_keeps_observables_constant(tmp_path):
    cfg = _write_config(
        tmp_path,
        bath={"kind": "discrete_modes", "g": [0.0], "omega": [1.0]},
        sim={"dt": 0.05, "T": 1.0, "n_traj": 8, "seed": 2},
        output={"observables": ["pop_1", "pop_2", "coh_12"]},
    )
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    _, data = _read_csv(out / "observables.csv")
    spread = data[:, 1:].max(axis=0) - data[:, 1:].min(axis=0)
    assert spread.max() < 1e-12, spread


def test_worker_count_does_not_change_bytes(tmp_path):
    cfg = _write_config(
        tmp_path,
        sim={"dt": 0.05, "T": 0.5, "n_traj": 600, "seed": 9},
        output={"dumps": ["density"]},
    )
    outs = []
    for threads in (1, 3):
        out = tmp_path / f"o{threads}"
        rc = main(["simulate", "--config", str(cfg), "--out", str(out),
                   "--threads", str(threads)])
        assert rc == 0
        outs.append(out)
    for name in ("observables.csv", "density.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_seed_override_changes_results_and_is_recorded(tmp_path):
    cfg = _write_config(tmp_path)
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert main(["simulate", "--config", str(cfg), "--out", str(out_a)]) == 0
    assert main(["simulate", "--config", str(cfg), "--out", str(out_b),
                 "--seed-override", "99"]) == 0
    manifest = json.loads((out_b / "manifest.json").read_text())
    assert manifest["seed"] == 99
    assert ((out_a / "observables.csv").read_bytes()
            != (out_b / "observables.csv").read_bytes())


def test_fidelity_reference_flag(tmp_path):
    cfg = _write_config(
        tmp_path, output={"observables": ["fidelity"]})
    ref = tmp_path / "ref.json"
    ref.write_text(json.dumps({"state": "ground"}), encoding="utf-8")
    out = tmp_path / "o"
    rc = main(["simulate", "--config", str(cfg), "--out", str(out),
               "--fidelity-ref", str(ref)])
    assert rc == 0
    _, data = _read_csv(out / "observables.csv")
    # F(uniform, ground) = |<g|psi>|^2 = 1/2 at t = 0
    assert data[0, 1] == pytest.approx(0.5, abs=1e-7)

    rc = main(["simulate", "--config", str(cfg), "--out", str(out),
               "--fidelity-ref", str(tmp_path / "missing.json")])
    assert rc == 2


def test_noise_test_command(tmp_path, capsys):
    cfg = _write_config(
        tmp_path,
        sim={"dt": 0.1, "T": 1.0, "n_traj": 3000, "seed": 17},
    )
    out = tmp_path / "o"
    rc = main(["noise-test", "--config", str(cfg), "--out", str(out)])
    assert rc == 0
    assert "moment checks:" in capsys.readouterr().out
    assert (out / "moments.csv").exists()
    assert (out / "moments.png").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["passed"] is True


def test_basis_info_qubit_table(capsys):
    assert main(["basis-info", "--family", "nqubit", "--n", "4",
                 "--omega", "1.0"]) == 0
    text = capsys.readouterr().out
    assert "order 0: 6 operators" in text
    assert "order 1: 4 operators" in text
    assert "order 2: 2 operators" in text
    assert "order 3: 1 operators" in text
    assert "closed-form table row N=4: (6, 4, 2, 1)" in text
    assert text.count("recurrence") == 2
    assert "VIOLATED" not in text

    assert main(["basis-info", "--family", "nqubit", "--n", "1",
                 "--omega", "1.0"]) == 0
    text = capsys.readouterr().out
    assert "closes at order 0; counts (1,)" in text
    assert "order 0, operator 1:" in text  # small models print matrices


def test_basis_info_angular_and_csv(tmp_path, capsys):
    csv = tmp_path / "basis.csv"
    assert main(["basis-info", "--family", "angular", "--l", "2",
                 "--omega", "0.5", "--csv", str(csv)]) == 0
    text = capsys.readouterr().out
    assert "order 0: 4 operators" in text
    assert "order 3: 1 operators" in text
    assert csv.exists()
    assert csv.read_text().splitlines()[0] == "order,index,i,j,re,im"


def test_basis_info_from_config(tmp_path, capsys):
    cfg = _write_config(
        tmp_path,
        model={"family": "ncavity",
               "params": {"n": 3, "omegas": [1.0, 1.0, 1.0],
                          "lambdas": [0.1, 0.1, 0.1], "n_max": 2}},
    )
    assert main(["basis-info", "--config", str(cfg)]) == 0
    assert "family ncavity" in capsys.readouterr().out


def test_basis_info_requires_a_model(capsys):
    assert main(["basis-info"]) == 2
    assert "config error" in capsys.readouterr().err
    assert main(["basis-info", "--family", "nqubit"]) == 2


def test_console_script_is_installed():
    proc = subprocess.run(
        ["nmqsd", "--help"], capture_output=True, text=True, timeout=60,
    )
    assert proc.returncode == 0
    assert "simulate" in proc.stdout and "oracle-compare" in proc.stdout
