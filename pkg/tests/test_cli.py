import json
import subprocess
import sys

import pytest

from skbarrier.cli import resolve_config, run


def write_measure(path, atoms):
    path.write_text(json.dumps({"dimension": 2, "kind": "radial",
                                "atoms": [{"r": r, "w": w} for r, w in atoms]}))
    return str(path)


@pytest.fixture
def files(tmp_path):
    return dict(
        sphere1=write_measure(tmp_path / "s1.json", [(1.0, 1.0)]),
        sphere2=write_measure(tmp_path / "s2.json", [(2.0, 1.0)]),
        section1=write_measure(tmp_path / "n1.json", [(0.0, 0.5), (2.0, 0.5)]),
        rings=write_measure(tmp_path / "rings.json", [(1.5, 0.5), (2.5, 0.5)]),
        bad=write_measure(tmp_path / "bad.json", [(1.0, 0.4)]),
    )


def test_check_order_exit_codes(tmp_path, files):
    out = tmp_path / "o"
    assert run(["check-order", "--mu", files["sphere1"], "--nu", files["sphere2"], "--out", str(out)]) == 0
    assert json.loads((out / "order.json").read_text())["ordered"] is True
    assert (out / "potential_mu.csv").read_text().startswith("r,n_value\n")
    assert run(["check-order", "--mu", files["sphere1"], "--nu", files["section1"], "--out", str(out)]) == 2
    rep = json.loads((out / "order.json").read_text())
    assert rep["ordered"] is False and rep["witness_radius"] == 0.0


def test_usage_and_io_errors_exit_one(tmp_path, files):
    out = str(tmp_path / "o")
    assert run(["frobnicate"]) == 1
    assert run(["check-order", "--mu", files["sphere1"], "--out", out]) == 1
    assert run(["check-order", "--mu", files["bad"], "--nu", files["sphere2"], "--out", out]) == 1
    assert run(["check-order", "--mu", str(tmp_path / "none.json"), "--nu", files["sphere2"], "--out", out]) == 1
    assert run(["solve", "--mu", files["sphere1"], "--nu", files["sphere2"], "--alpha", "2", "--out", out]) == 1
    assert run(["verify", "--mu", files["sphere1"], "--nu", files["sphere2"], "--paths", "10", "--out", out]) == 1
    assert run(["report", "--run", str(tmp_path / "empty"), "--out", out]) == 1


def test_config_precedence(tmp_path, files):
    cfgf = tmp_path / "c.json"
    cfgf.write_text(json.dumps({"paths": 777, "seed": 4, "alpha": 0.5}))
    cfg = resolve_config(["solve", "--config", str(cfgf), "--mu", files["sphere1"], "--nu", files["sphere2"],
                          "--seed", "9"])
    assert (cfg.paths, cfg.seed, cfg.alpha, cfg.tol_w1) == (777, 9, 0.5, 0.02)


def test_solve_simulate_mot_report_pipeline(tmp_path, files):
    out = tmp_path / "run"
    base = ["--mu", files["sphere1"], "--nu", files["sphere2"], "--paths", "5000", "--out", str(out)]
    assert run(["solve"] + base) == 0
    for name in ("barrier.csv", "diagnostics.json", "mu.json", "nu.json", "stopped_law.json", "run_config.json"):
        assert (out / name).exists()
    diag = json.loads((out / "diagnostics.json").read_text())
    assert diag["converged"] and diag["orientation"] == "normal"
    assert run(["simulate"] + base) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["paths"] == 5000 and summary["w1_stopped_vs_nu"] <= 0.02
    assert run(["mot"] + base + ["--centers", "8"]) == 0
    rep = json.loads((out / "mot_report.json").read_text())
    assert rep["weak_duality"] and rep["sep"] == diag["cost"]
    rep_out = tmp_path / "rep"
    assert run(["report", "--run", str(out), "--out", str(rep_out)]) == 0
    for name in ("report.json", "barrier.svg", "radial_laws.svg", "report_config.json"):
        assert (rep_out / name).exists()


def test_solve_and_mot_on_unordered_pair_exit_two(tmp_path, files):
    base = ["--mu", files["sphere1"], "--nu", files["section1"], "--out", str(tmp_path / "o")]
    assert run(["solve"] + base) == 2
    assert run(["mot"] + base + ["--centers", "8"]) == 2


def test_envelope_command(tmp_path):
    out = tmp_path / "env"
    assert run(["envelope", "--function", "neg-abs", "--out", str(out)]) == 0
    body = json.loads((out / "envelope.json").read_text())
    assert body["converged"] and body["monotone"]
    assert run(["envelope", "--function", "neg-abs", "--out", str(out), "--config", str(_cfg(tmp_path))]) == 3


def _cfg(tmp_path):
    f = tmp_path / "strict.json"
    f.write_text(json.dumps({"max_iter": 3, "env_tol": 1e-12}))
    return f


def test_verify_is_byte_identical_across_thread_counts(tmp_path, files, monkeypatch):
    outs = []
    for threads in ("1", "4"):
        monkeypatch.setenv("SKB_THREADS", threads)
        out = tmp_path / f"t{threads}"
        code = run(["verify", "--mu", files["sphere1"], "--nu", files["rings"], "--paths", "5000",
                    "--check-paths", "2000", "--out", str(out)])
        assert code == 0
        outs.append(out)
    for name in ("verify.json", "barrier.csv", "diagnostics.json", "stopped_law.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_console_entry_point(tmp_path, files):
    p = subprocess.run([sys.executable, "-m", "skbarrier.cli", "check-order", "--mu", files["sphere1"],
                        "--nu", files["section1"], "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert p.returncode == 2
    assert '"command": "check-order"' in p.stdout
