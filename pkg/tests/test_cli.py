import csv
import json
import os
import subprocess
import sys

import pytest

from ergodic_lab.cli import (EXIT_CHECK, EXIT_CONFIG, EXIT_OK, OUTPUT_ENV, apply_override,
                             load_config, resolve, run)


def _read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def _json(path):
    with open(path) as fh:
        return json.load(fh)


def test_unknown_preset_exit_code(tmp_path, capsys):
    assert run(["simulate", "--preset", "nope", "--output", str(tmp_path)]) == EXIT_CONFIG
    assert "unknown-preset" in capsys.readouterr().err


@pytest.mark.parametrize("override,kind", [
    ("scheme.dt=-0.1", "invalid-range"),
    ("bsde.n_samples=0", "invalid-range"),
    ("alpha_schedule=[0.1, 0.2]", "invalid-range"),
    ("scheme.dt", "invalid-override"),
    ("model.preset='nope'", "unknown-preset"),
])
def test_invalid_config_exit_code(tmp_path, capsys, override, kind):
    code = run(["simulate", "--set", override, "--output", str(tmp_path)])
    assert code == EXIT_CONFIG
    assert kind in capsys.readouterr().err


def test_unreadable_and_malformed_config(tmp_path, capsys):
    assert run(["simulate", "--config", str(tmp_path / "missing.toml")]) == EXIT_CONFIG
    bad = tmp_path / "bad.toml"
    bad.write_text("seed = = 3\n")
    assert run(["simulate", "--config", str(bad), "--output", str(tmp_path)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "unreadable-config" in err and "parse-error" in err


def test_unwritable_output(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert run(["simulate", "--output", str(blocker / "sub")]) == EXIT_CONFIG
    assert "unwritable-output" in capsys.readouterr().err


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text('seed = 5\n[scheme]\ndt = 0.02\n[driver]\npreset = "constant"\nc = 0.3\n')
    cfg = load_config(str(path), None, ["scheme.n_paths=17", "driver.c=0.4"])
    raw = cfg.raw
    assert raw["seed"] == 5 and raw["scheme"]["dt"] == 0.02
    assert raw["scheme"]["n_paths"] == 17 and raw["driver"]["c"] == 0.4
    assert cfg.sim.n_paths == 17 and cfg.seed == 5
    assert resolve(raw).config_hash == cfg.config_hash
    assert apply_override({}, "a.b.c=[1, 2]") == {"a": {"b": {"c": [1, 2]}}}


def test_config_hash_tracks_content():
    a = load_config(None, "constant_driver", [])
    b = load_config(None, "constant_driver", [])
    c = load_config(None, "constant_driver", ["seed=1"])
    assert a.config_hash == b.config_hash != c.config_hash


def test_simulate_outputs_and_manifest(tmp_path):
    out = tmp_path / "sim"
    args = ["simulate", "--preset", "constant_driver", "--set", "simulate.powers=[2.0, 4.0]",
            "--output", str(out), "--quiet"]
    assert run(args) == EXIT_OK
    rows = _read_csv(out / "moments.csv")
    assert {"t", "p", "estimate", "stderr"} <= set(rows[0])
    man = _json(out / "manifest.json")
    assert man["status"] == "ok" and man["subcommand"] == "simulate"
    assert set(man["artifacts"]) == {"moments.csv", "simulate.json"}
    assert len(man["config_hash"]) == 64 and man["seed"] == 0
    assert "numpy" in man["versions"] and man["backend"] in ("numba", "numpy")
    first = (out / "moments.csv").read_bytes()
    assert run(args) == EXIT_OK
    assert (out / "moments.csv").read_bytes() == first


def test_output_env_default(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
    assert run(["solve-pde", "--preset", "constant_driver", "--grid", "32", "--quiet"]) == 0
    (sub,) = os.listdir(tmp_path)
    assert sub.startswith("solve-pde-")
    doc = _json(tmp_path / sub / "pde.json")
    assert doc["lambda"] == pytest.approx(0.7, abs=1e-12)


def test_solve_pde_discounted(tmp_path):
    out = tmp_path / "pde"
    assert run(["solve-pde", "--preset", "constant_driver", "--mode", "discounted",
                "--alpha", "0.5", "--grid", "32", "--output", str(out), "--quiet"]) == 0
    rows = _read_csv(out / "pde.csv")
    assert list(rows[0]) == ["x", "v"]
    assert all(float(r["v"]) == pytest.approx(1.4, abs=1e-12) for r in rows)


def test_constant_driver_pipeline(tmp_path):
    out = tmp_path / "fp"
    assert run(["full-pipeline", "--preset", "constant_driver", "--output", str(out),
                "--quiet"]) == EXIT_OK
    rows = {r["quantity"]: r for r in _read_csv(out / "comparison.csv")}
    lam = rows["lambda_mc_vs_pde"]
    assert float(lam["gap"]) <= 1e-6 and float(lam["tolerance"]) == 1e-6
    ctrl = rows["control_optimal_vs_lambda"]
    assert float(ctrl["value"]) == pytest.approx(0.7, abs=1e-12)
    assert all(r["status"] == "pass" for r in rows.values())


def test_estimate_lambda_and_discounted(tmp_path):
    out = tmp_path / "lam"
    assert run(["estimate-lambda", "--preset", "constant_driver", "--alphas", "0.5,0.2,0.1",
                "--output", str(out), "--quiet"]) == 0
    trace = _read_csv(out / "alpha_trace.csv")
    assert [float(r["alpha"]) for r in trace] == [0.5, 0.2, 0.1]
    assert _json(out / "lambda.json")["lambda"] == pytest.approx(0.7, abs=1e-10)
    out2 = tmp_path / "disc"
    assert run(["solve-discounted", "--preset", "constant_driver", "--alpha", "0.5",
                "--output", str(out2), "--quiet"]) == 0
    assert (out2 / "discounted_solution.json").exists()
    assert run(["estimate-lambda", "--preset", "constant_driver", "--alphas", "0.1,0.2",
                "--output", str(out), "--quiet"]) == EXIT_CONFIG


def test_control_eval_policies(tmp_path):
    spec = tmp_path / "policy.json"
    spec.write_text(json.dumps({"type": "table", "x": [-1, 1], "u": [1, -1]}))
    for policy in ("optimal", "const:0.5", f"file:{spec}"):
        out = tmp_path / policy.replace(":", "_").replace("/", "_")
        assert run(["control-eval", "--preset", "constant_driver", "--policy", policy,
                    "--T", "2", "--output", str(out), "--quiet"]) == 0
        doc = _json(out / "control.json")
        assert doc["I"] == pytest.approx(0.7, abs=1e-12)
        assert doc["lambda_ref"] == pytest.approx(0.7, abs=1e-12)
    assert run(["control-eval", "--preset", "constant_driver", "--policy", "bogus",
                "--output", str(tmp_path / "x"), "--quiet"]) == EXIT_CONFIG


def test_check_hypotheses_paper_sigma(tmp_path):
    out = tmp_path / "hyp"
    assert run(["check-hypotheses", "--preset", "paper_sigma", "--output", str(out),
                "--quiet"]) == EXIT_OK
    doc = _json(out / "hypotheses.json")
    assert doc["passed"]
    assert json.dumps(doc)


def test_check_failure_exit_code(tmp_path):
    # a constant-only basis forces Z = 0, so lambda becomes the sample mean of
    # psi(x, 0), about 0.84 against the oracle's 0.876
    out = tmp_path / "fp"
    code = run(["full-pipeline", "--preset", "reflected_ou_cosine", "--set", "bsde.degree=0",
                "--set", "control_eval.T=2", "--set", "scheme.n_paths=50",
                "--output", str(out), "--quiet"])
    assert code == EXIT_CHECK
    assert _json(out / "manifest.json")["status"] == "check-failed"
    rows = {r["quantity"]: r["status"] for r in _read_csv(out / "comparison.csv")}
    assert rows["lambda_mc_vs_pde"] == "fail"


def test_reflected_ou_pipeline(tmp_path):
    out = tmp_path / "fp"
    assert run(["full-pipeline", "--preset", "reflected_ou_cosine", "--output", str(out),
                "--quiet"]) == EXIT_OK
    rows = {r["quantity"]: r for r in _read_csv(out / "comparison.csv")}
    assert float(rows["lambda_mc_vs_pde"]["gap"]) <= 2e-2
    assert float(rows["control_optimal_vs_lambda"]["gap"]) <= 5e-2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ergodic_lab", "simulate", "--preset", "nope",
                           "--output", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == EXIT_CONFIG
