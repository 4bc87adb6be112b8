"""Command-line surface: exit codes, file contracts, reproducibility."""

import json


from alpha_control.cli import main

BASE_CONFIG = {
    "domain": {"N": 2, "Q": 7},
    "physics": {"nu": 0.05, "alpha": 0.1},
    "time": {"T": 0.5, "K": 4},
    "initial": {"modes": [[1, 1], [2, 1]], "coeffs": [0.7, 0.2]},
    "noise": {
        "family": "linear",
        "m": 1,
        "gain": 0.4,
        "anchors": [{"modes": [[1, 1], [2, 2]], "coeffs": [1.0, 0.5]}],
        "kind": "tree",
        "seed": 7,
    },
    "cost": {
        "lambda": 0.1,
        "tracking": {"kind": "constant", "modes": [[1, 2]], "coeffs": [0.3],
                     "weight": 1.0},
        "terminal": "v",
        "terminal_target": {"modes": [[1, 2]], "coeffs": [0.15]},
    },
    "control": {
        "parametrization": "open-loop",
        "M": 100.0,
        "initial": {"modes": [[1, 1]], "coeffs": [0.3]},
        "direction": {"modes": [[2, 1]], "coeffs": [0.5]},
    },
    "optimizer": {"iters": 40},
    "diagnostics": {},
    "scheme": {"kind": "semi_implicit"},
    "workers": 0,
    "export": {"paths": 1},
}


def write_config(tmp_path, **overrides):
    cfg = json.loads(json.dumps(BASE_CONFIG))
    for dotted, value in overrides.items():
        node = cfg
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def test_simulate_minimal_config(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    for name in ("trajectory_path0.csv", "summary.csv", "ensemble.csv",
                 "manifest.json", "fig_norms.png"):
        assert (out / name).exists(), name
    header = (out / "trajectory_path0.csv").read_text().splitlines()[0]
    assert header == "kind,time,mode_j,mode_k,coeff"
    assert (out / "summary.csv").read_text().splitlines()[0] == \
        "time,V_norm,W_norm,Wtilde_norm,curl_sigma_norm"


def test_config_error_names_field(tmp_path, capsys):
    cfg = write_config(tmp_path, **{"time.K": 0})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "time.K" in capsys.readouterr().err


def test_config_rejects_unknown_key(tmp_path, capsys):
    cfg = write_config(tmp_path, **{"physics.Re": 100.0})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "physics.Re" in capsys.readouterr().err


def test_config_rejects_small_quadrature(tmp_path, capsys):
    cfg = write_config(tmp_path, **{"domain.Q": 5})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "domain.Q" in capsys.readouterr().err


def test_inadmissible_initial_control_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, **{"control.M": 1e-9})
    assert main(["optimize", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "V-energy ball" in capsys.readouterr().err


def test_tree_too_large_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, **{"time.K": 30})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "enumeration limit" in err


def test_simulate_rerun_byte_identical(tmp_path):
    cfg = write_config(tmp_path)
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert main(["simulate", "--config", cfg, "--out", str(out1)]) == 0
    assert main(["simulate", "--config", cfg, "--out", str(out2)]) == 0
    for name in ("trajectory_path0.csv", "summary.csv", "ensemble.csv",
                 "manifest.json", "fig_norms.png"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name


def test_tangent_command(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "tan"
    assert main(["tangent", "--config", cfg, "--out", str(out)]) == 0
    first_rows = (out / "tangent_path0.csv").read_text().splitlines()
    assert first_rows[0] == "kind,time,mode_j,mode_k,coeff"
    assert first_rows[1].startswith("tangent,")
    assert (out / "fig_tangent.png").exists()


def test_adjoint_command_reports_duality(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out = tmp_path / "adj"
    assert main(["adjoint", "--config", cfg, "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "duality gap" in printed
    lines = (out / "duality.csv").read_text().splitlines()
    assert lines[0].startswith("lhs_running,")
    rel_gap = float(lines[1].split(",")[5])
    assert rel_gap < 1e-10
    header = (out / "adjoint.csv").read_text().splitlines()[0]
    assert header == "time,scenario_id,mode_j,mode_k,p_coeff,q_coeff_1"
    assert (out / "weighted_estimate.csv").exists()
    assert (out / "fig_adjoint.png").exists()


def test_optimize_command(tmp_path):
    cfg = write_config(tmp_path, **{
        "noise.family": "none",
        "cost.lambda": 0.0,
        "cost.tracking": {"kind": "planted", "control_modes": [[1, 1]],
                          "control_coeffs": [0.3], "weight": 1.0},
        "cost.terminal": "l2",
        "cost.terminal_target": "tracking-final",
        "optimizer.iters": 200,
        "time.K": 8,
    })
    out = tmp_path / "opt"
    assert main(["optimize", "--config", cfg, "--out", str(out)]) == 0
    hist = (out / "history.csv").read_text().splitlines()
    assert hist[0] == "iter,J,grad_norm,step,constraint_active"
    final_j = float(hist[-1].split(",")[1])
    assert final_j < 1e-6
    assert (out / "control_opt.csv").exists()
    assert (out / "optimality.csv").exists()
    assert (out / "fig_descent.png").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "optimize"
    assert "final_cost" in manifest


def test_verify_duality_suite(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out = tmp_path / "ver"
    assert main(["verify", "--config", cfg, "--out", str(out),
                 "--suite", "duality"]) == 0
    printed = capsys.readouterr().out
    assert "duality/tree_exact_rel_gap" in printed
    assert (out / "verify_report.csv").exists()
    assert (out / "fig_verify.png").exists()


def test_verify_conditions_suite(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "cond"
    assert main(["verify", "--config", cfg, "--out", str(out),
                 "--suite", "conditions"]) == 0
    text = (out / "conditions.txt").read_text()
    assert "theta1=" in text and "A=" in text and "regime_note=" in text


def test_verify_identities_rerun_byte_identical(tmp_path):
    cfg = write_config(tmp_path)
    out1, out2 = tmp_path / "v1", tmp_path / "v2"
    assert main(["verify", "--config", cfg, "--out", str(out1),
                 "--suite", "identities"]) == 0
    assert main(["verify", "--config", cfg, "--out", str(out2),
                 "--suite", "identities"]) == 0
    assert (out1 / "verify_report.csv").read_bytes() == \
        (out2 / "verify_report.csv").read_bytes()
    assert (out1 / "fig_verify.png").read_bytes() == \
        (out2 / "fig_verify.png").read_bytes()


def test_verify_report_schema(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "schema"
    assert main(["verify", "--config", cfg, "--out", str(out),
                 "--suite", "identities"]) == 0
    lines = (out / "verify_report.csv").read_text().splitlines()
    assert lines[0] == "suite,check,value,threshold,passed,note"
    assert all(line.split(",")[4] == "true" for line in lines[1:])


def test_workers_flag_does_not_change_results(tmp_path):
    cfg = write_config(tmp_path)
    out1, out2 = tmp_path / "w1", tmp_path / "w4"
    assert main(["simulate", "--config", cfg, "--out", str(out1),
                 "--workers", "1"]) == 0
    assert main(["simulate", "--config", cfg, "--out", str(out2),
                 "--workers", "4"]) == 0
    assert (out1 / "trajectory_path0.csv").read_bytes() == \
        (out2 / "trajectory_path0.csv").read_bytes()
    assert (out1 / "summary.csv").read_bytes() == (out2 / "summary.csv").read_bytes()


def test_missing_config_file(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "o")]) == 2
    assert "cannot read" in capsys.readouterr().err


def test_numerical_abort_exits_3(tmp_path, capsys):
    cfg = write_config(tmp_path, **{
        "noise.family": "none",
        "initial.coeffs": [1e200, 0.2],
        "control.M": 1e200,
    })
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 3
    assert "non-finite state at step" in capsys.readouterr().err
