import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from safemdp.cli import EXIT_CHECK_FAILED, EXIT_INFEASIBLE, EXIT_MALFORMED, EXIT_OK, RunManifest, main
from safemdp.estimation import ErrorBound, TrajectoryBatch, true_mismeasure
from safemdp.fileio import (
    MalformedInput,
    error_to_json,
    load_error,
    load_mdp,
    load_policy,
    load_trajectories,
    mdp_to_json,
    write_json,
    write_trajectories,
)
from safemdp.mdp_core import PolicyTable, TabularMdp, policy_return
from safemdp.oracle import random_mdp

FIXTURES = Path(__file__).resolve().parent / "fixtures"


def fx(name):
    return str(FIXTURES / name)


def write_mdp(tmp_path, mdp, name="mdp.json"):
    path = tmp_path / name
    write_json(path, mdp_to_json(mdp))
    return str(path)


def write_error(tmp_path, error, name="error.json"):
    path = tmp_path / name
    write_json(path, error_to_json(error))
    return str(path)


def write_policy(tmp_path, policy, name="policy.json"):
    path = tmp_path / name
    write_json(path, policy.to_json())
    return str(path)


def read(path):
    return json.loads(Path(path).read_text())


def assert_close(actual, expected, tol=1e-6, where="report"):
    """Recursive comparison: floats within ``tol``, everything else exact."""
    if isinstance(expected, dict):
        assert set(actual) == set(expected), where
        for key in expected:
            assert_close(actual[key], expected[key], tol, f"{where}.{key}")
    elif isinstance(expected, list):
        assert len(actual) == len(expected), where
        for k, (a, e) in enumerate(zip(actual, expected)):
            assert_close(a, e, tol, f"{where}[{k}]")
    elif isinstance(expected, float) and not isinstance(expected, bool):
        assert abs(actual - expected) <= tol, where
    else:
        assert actual == expected, where


# ----------------------------------------------------------------- schemas

NUMBER = (int, float)
SCHEMAS = {
    "mdp": {
        "n_states": int, "n_actions": int, "gamma": NUMBER, "r_max": NUMBER,
        "initial_state": int, "rewards": list, "transitions": list,
    },
    "policy": {"kind": str, "state_space": str, "table": list},
    "error": {"e": list},
    "evaluate": {"return": NUMBER},
    "solve": {
        "bounds": dict, "converged": bool, "deployed_policy": dict, "dual_value": NUMBER, "feasible": bool,
        "lambda_hat": NUMBER, "lambda_max": NUMBER, "m_b": NUMBER, "penalized_return": NUMBER, "policy": dict,
        "simulated_return": NUMBER, "subgradient_hat": NUMBER, "traces": dict,
    },
    "bounds": {
        "br_exact": (type(None), float), "br_upper": NUMBER, "feasible_certified": bool,
        "penalty_term": NUMBER, "suboptimality_bound": NUMBER,
    },
    "verify": {
        "checks": list, "all_passed": bool, "error_bound_valid": bool, "m_b": NUMBER, "lambda_hat": NUMBER,
        "dual_value": NUMBER, "feasible_certified": bool, "true_return": NUMBER, "bounds": dict,
    },
    "check": {"name": str, "value": (type(None), int, float), "tolerance": NUMBER, "status": str},
}


def conforms(payload, schema):
    required = SCHEMAS[schema]
    for key, kind in required.items():
        assert key in payload, f"{schema}: missing {key}"
        assert isinstance(payload[key], kind), f"{schema}.{key}: {type(payload[key]).__name__}"
    if schema == "solve":
        conforms(payload["bounds"], "bounds")
        conforms(payload["policy"], "policy")
        conforms(payload["deployed_policy"], "policy")
        lengths = {len(v) for v in payload["traces"].values()}
        assert set(payload["traces"]) == {"lambda", "f_min", "subgradient", "inner_iterations"}
        assert len(lengths) == 1
    if schema == "verify":
        for check in payload["checks"]:
            conforms(check, "check")
            assert check["status"] in {"pass", "fail"} or check["status"].startswith("not applicable")
        conforms(payload["bounds"], "bounds")


@pytest.mark.parametrize(
    "name, schema",
    [
        ("true_mdp.json", "mdp"),
        ("sim_mdp.json", "mdp"),
        ("baseline.json", "policy"),
        ("error.json", "error"),
        ("m_b.json", "evaluate"),
        ("solve_report.json", "solve"),
        ("verify_report.json", "verify"),
    ],
)
def test_golden_files_conform_to_schema(name, schema):
    conforms(read(fx(name)), schema)


# ---------------------------------------------------------------- manifest


def test_manifest_names_missing_role():
    with pytest.raises(Exception, match="template"):
        RunManifest("estimate", {"trajectories": "t.jsonl"}).check()
    with pytest.raises(Exception, match="sim_mdp"):
        RunManifest("solve", {}).check()
    RunManifest("solve", {"trajectories": "t", "template": "m"}).check()


# ---------------------------------------------------------------- estimate


def test_estimate_single_state(tmp_path):
    template = TabularMdp(np.array([[0.5]]), np.ones((1, 1, 1)), 0.9, 1.0)
    traj = tmp_path / "t.jsonl"
    write_trajectories(traj, TrajectoryBatch.from_triples([(0, 0, 0)] * 3, 1, 1))
    out, err = tmp_path / "sim.json", tmp_path / "e.json"
    code = main(["estimate", "--trajectories", str(traj), "--template", write_mdp(tmp_path, template),
                 "--out", str(out), "--error-out", str(err)])
    assert code == EXIT_OK
    assert load_mdp(out).transitions.tolist() == [[[1.0]]]
    assert load_error(err).e.tolist() == [[0.0]]


def test_estimate_without_template_names_the_role(tmp_path, capsys):
    code = main(["estimate", "--trajectories", fx("trajectories.jsonl"),
                 "--out", str(tmp_path / "a"), "--error-out", str(tmp_path / "b")])
    assert code == EXIT_MALFORMED
    assert "template" in capsys.readouterr().err


def test_estimate_is_byte_identical(tmp_path):
    outputs = []
    for k in range(2):
        out, err = tmp_path / f"sim{k}.json", tmp_path / f"e{k}.json"
        assert main(["estimate", "--trajectories", fx("trajectories.jsonl"), "--template", fx("true_mdp.json"),
                     "--out", str(out), "--error-out", str(err)]) == EXIT_OK
        outputs.append((out.read_bytes(), err.read_bytes()))
    assert outputs[0] == outputs[1]
    assert outputs[0] == (Path(fx("sim_mdp.json")).read_bytes(), Path(fx("error.json")).read_bytes())


def test_estimate_rejects_bad_delta(tmp_path):
    code = main(["estimate", "--trajectories", fx("trajectories.jsonl"), "--template", fx("true_mdp.json"),
                 "--confidence-delta", "1.5", "--out", str(tmp_path / "a"), "--error-out", str(tmp_path / "b")])
    assert code == EXIT_MALFORMED


# ------------------------------------------------------------------- solve


def test_solve_zero_error_is_feasible_with_zero_bound(tmp_path):
    mdp = random_mdp(3, 2, 0.9, 1)
    m_b = policy_return(mdp, PolicyTable.uniform(3, 2))
    out = tmp_path / "r.json"
    code = main(["solve", "--sim-mdp", write_mdp(tmp_path, mdp), "--error", write_error(tmp_path, ErrorBound.zeros(3, 2)),
                 "--m-b", repr(m_b), "--out", str(out)])
    report = read(out)
    assert code == EXIT_OK
    assert report["feasible"] is True
    assert report["bounds"]["suboptimality_bound"] == 0.0


def test_solve_impossible_threshold_exits_four_with_report(tmp_path):
    mdp = random_mdp(3, 2, 0.9, 2)
    out = tmp_path / "r.json"
    code = main(["solve", "--sim-mdp", write_mdp(tmp_path, mdp), "--error", write_error(tmp_path, ErrorBound.zeros(3, 2)),
                 "--m-b", "100", "--max-outer-iters", "200", "--out", str(out)])
    assert code == EXIT_INFEASIBLE
    report = read(out)
    assert report["feasible"] is False
    conforms(report, "solve")


def test_solve_matches_golden_report(tmp_path):
    out = tmp_path / "r.json"
    code = main(["solve", "--sim-mdp", fx("sim_mdp.json"), "--error", fx("error.json"),
                 "--m-b-file", fx("m_b.json"), "--out", str(out)])
    assert code == EXIT_OK
    assert_close(read(out), read(fx("solve_report.json")))


def test_threshold_sources_agree(tmp_path):
    reports = []
    for k, flags in enumerate([
        ["--m-b-file", fx("m_b.json")],
        ["--baseline", fx("baseline.json"), "--true-mdp", fx("true_mdp.json")],
        ["--m-b", repr(read(fx("m_b.json"))["return"])],
    ]):
        out = tmp_path / f"r{k}.json"
        assert main(["solve", "--sim-mdp", fx("sim_mdp.json"), "--error", fx("error.json"), *flags, "--out", str(out)]) == 0
        reports.append(out.read_bytes())
    assert reports[0] == reports[1] == reports[2]


def test_solve_from_trajectories_matches_two_step_run(tmp_path):
    out = tmp_path / "r.json"
    code = main(["solve", "--trajectories", fx("trajectories.jsonl"), "--template", fx("true_mdp.json"),
                 "--m-b-file", fx("m_b.json"), "--out", str(out)])
    assert code == EXIT_OK
    assert out.read_bytes() == Path(fx("solve_report.json")).read_bytes()


def test_solve_without_threshold_is_malformed(tmp_path, capsys):
    code = main(["solve", "--sim-mdp", fx("sim_mdp.json"), "--error", fx("error.json"), "--out", str(tmp_path / "r")])
    assert code == EXIT_MALFORMED
    assert "m_b" in capsys.readouterr().err


def test_solve_config_file_and_flag_precedence(tmp_path):
    config = tmp_path / "c.json"
    config.write_text(json.dumps({"lambda_max": 3.0, "max_outer_iters": 7}))
    out = tmp_path / "r.json"
    code = main(["solve", "--sim-mdp", fx("sim_mdp.json"), "--error", fx("error.json"), "--m-b", "100",
                 "--config", str(config), "--lambda-max", "5.0", "--out", str(out)])
    report = read(out)
    assert code == EXIT_INFEASIBLE
    assert report["lambda_max"] == 5.0
    assert len(report["traces"]["lambda"]) <= 8


def test_solve_rejects_bad_config(tmp_path):
    config = tmp_path / "c.json"
    config.write_text(json.dumps({"lambda0": -1.0}))
    code = main(["solve", "--sim-mdp", fx("sim_mdp.json"), "--error", fx("error.json"), "--m-b", "0",
                 "--config", str(config), "--out", str(tmp_path / "r")])
    assert code == EXIT_MALFORMED


# ------------------------------------------------------------------ verify


def test_verify_exact_model_passes_with_zero_slack(tmp_path):
    mdp = random_mdp(3, 2, 0.9, 3)
    path = write_mdp(tmp_path, mdp)
    out = tmp_path / "v.json"
    code = main(["verify", "--true-mdp", path, "--sim-mdp", path, "--error", write_error(tmp_path, ErrorBound.zeros(3, 2)),
                 "--m-b", repr(policy_return(mdp, PolicyTable.uniform(3, 2))), "--out", str(out)])
    report = read(out)
    assert code == EXIT_OK and report["all_passed"]
    checks = {c["name"]: c for c in report["checks"]}
    assert all(c["status"] == "pass" for c in checks.values())
    assert checks["surrogate_domination"]["value"] == pytest.approx(0.0, abs=1e-12)
    assert checks["bound_sandwich"]["tolerance"] == 0.0
    assert report["bounds"]["br_upper"] == 0.0


def test_verify_marks_invalid_bound(tmp_path):
    true = load_mdp(fx("true_mdp.json"))
    sim = load_mdp(fx("sim_mdp.json"))
    small = true_mismeasure(true, sim).scaled(0.5)
    out = tmp_path / "v.json"
    code = main(["verify", "--true-mdp", fx("true_mdp.json"), "--sim-mdp", fx("sim_mdp.json"),
                 "--error", write_error(tmp_path, small), "--m-b-file", fx("m_b.json"), "--out", str(out)])
    report = read(out)
    checks = {c["name"]: c["status"] for c in report["checks"]}
    assert report["error_bound_valid"] is False
    assert checks["safety"] == "not applicable: bound invalid"
    assert checks["strong_duality_gap"] in {"pass", "fail"}
    assert checks["dual_vs_grid"] in {"pass", "fail"}
    assert code == (EXIT_CHECK_FAILED if "fail" in checks.values() else EXIT_OK)


def test_verify_seed_42_fixture_passes(tmp_path):
    out = tmp_path / "v.json"
    code = main(["verify", "--true-mdp", fx("true_mdp.json"), "--sim-mdp", fx("sim_mdp.json"),
                 "--error", fx("error.json"), "--m-b-file", fx("m_b.json"), "--out", str(out)])
    assert code == EXIT_OK
    report = read(out)
    assert report["all_passed"] and report["error_bound_valid"] and report["feasible_certified"]
    assert out.read_bytes() == Path(fx("verify_report.json")).read_bytes()


def test_verify_needs_true_model(tmp_path, capsys):
    code = main(["verify", "--sim-mdp", fx("sim_mdp.json"), "--error", fx("error.json"), "--m-b", "0",
                 "--out", str(tmp_path / "v")])
    assert code == EXIT_MALFORMED
    assert "mdp" in capsys.readouterr().err


# ---------------------------------------------------------------- evaluate


def test_evaluate_zero_reward(tmp_path, capsys):
    mdp = TabularMdp(np.zeros((2, 2)), np.full((2, 2, 2), 0.5), 0.9, 1.0)
    code = main(["evaluate", "--mdp", write_mdp(tmp_path, mdp), "--policy", write_policy(tmp_path, PolicyTable.uniform(2, 2))])
    assert code == EXIT_OK
    assert float(capsys.readouterr().out) == 0.0


@pytest.mark.parametrize("gamma_flag, factor", [([], 10.0), (["--gamma-override", "0.5"], 2.0)])
def test_evaluate_constant_reward(tmp_path, gamma_flag, factor):
    c = 0.3
    mdp = TabularMdp(np.full((2, 2), c), np.full((2, 2, 2), 0.5), 0.9, 1.0)
    out = tmp_path / "v.json"
    code = main(["evaluate", "--mdp", write_mdp(tmp_path, mdp), "--policy", write_policy(tmp_path, PolicyTable.deterministic([0, 1])),
                 "--out", str(out), *gamma_flag])
    assert code == EXIT_OK
    assert read(out)["return"] == pytest.approx(factor * c, abs=1e-12)


def test_evaluate_matches_library_bit_exactly(tmp_path):
    out = tmp_path / "v.json"
    assert main(["evaluate", "--mdp", fx("true_mdp.json"), "--policy", fx("baseline.json"), "--out", str(out)]) == EXIT_OK
    assert read(out)["return"] == policy_return(load_mdp(fx("true_mdp.json")), load_policy(fx("baseline.json")))
    assert out.read_bytes() == Path(fx("m_b.json")).read_bytes()


def test_evaluate_rejects_augmented_policy(tmp_path):
    policy = write_policy(tmp_path, PolicyTable.uniform(4, 3).lift())
    assert main(["evaluate", "--mdp", fx("true_mdp.json"), "--policy", policy]) == EXIT_MALFORMED


def test_console_entry_point(tmp_path):
    result = subprocess.run(
        [sys.executable, "-m", "safemdp.cli", "evaluate", "--mdp", fx("true_mdp.json"), "--policy", fx("baseline.json")],
        capture_output=True, text=True, check=False,
    )
    assert result.returncode == 0
    assert float(result.stdout) == read(fx("m_b.json"))["return"]


# --------------------------------------------------------- malformed input


def test_malformed_inputs_exit_two(tmp_path):
    bad_json = tmp_path / "bad.json"
    bad_json.write_text("{not json")
    rows = mdp_to_json(random_mdp(2, 2, 0.9, 0))
    rows["transitions"][0][0] = [0.9, 0.3]
    bad_rows = tmp_path / "rows.json"
    bad_rows.write_text(json.dumps(rows))
    bad_traj = tmp_path / "t.jsonl"
    bad_traj.write_text('{"x": 0, "a": 0, "y": 0}\n{"x": 0}\n')
    wrong_shape = write_error(tmp_path, ErrorBound.zeros(2, 2))
    out = str(tmp_path / "out")
    runs = [
        ["evaluate", "--mdp", str(bad_json), "--policy", fx("baseline.json")],
        ["evaluate", "--mdp", str(bad_rows), "--policy", fx("baseline.json")],
        ["evaluate", "--mdp", str(tmp_path / "missing.json"), "--policy", fx("baseline.json")],
        ["estimate", "--trajectories", str(bad_traj), "--template", fx("true_mdp.json"), "--out", out, "--error-out", out],
        ["solve", "--sim-mdp", fx("sim_mdp.json"), "--error", wrong_shape, "--m-b", "0", "--out", out],
        ["solve", "--sim-mdp", fx("sim_mdp.json"), "--error", fx("error.json"), "--m-b", "nan", "--out", out],
        ["evaluate", "--mdp", fx("true_mdp.json"), "--policy", write_policy(tmp_path, PolicyTable.uniform(3, 3))],
    ]
    for argv in runs:
        assert main(argv) == EXIT_MALFORMED, argv[0]


# ------------------------------------------------------------------ fileio


def test_mdp_round_trip(tmp_path):
    mdp = random_mdp(3, 2, 0.8, 4).replace(initial_distribution=[0.2, 0.3, 0.5])
    back = load_mdp(write_mdp(tmp_path, mdp))
    assert np.array_equal(back.transitions, mdp.transitions)
    assert np.array_equal(back.rewards, mdp.rewards)
    assert np.array_equal(back.p0, mdp.p0)
    assert (back.gamma, back.r_max) == (mdp.gamma, mdp.r_max)


def test_declared_sizes_must_match_arrays(tmp_path):
    payload = mdp_to_json(random_mdp(2, 2, 0.9, 0))
    payload["n_states"] = 3
    path = tmp_path / "m.json"
    path.write_text(json.dumps(payload))
    with pytest.raises(MalformedInput, match="n_states"):
        load_mdp(path)


def test_trajectory_round_trip(tmp_path):
    batch = TrajectoryBatch.from_triples([(0, 1, 2), (2, 0, 0), (1, 1, 1)], 3, 2)
    path = tmp_path / "t.jsonl"
    write_trajectories(path, batch)
    back = load_trajectories(path, 3, 2)
    assert np.array_equal(back.transitions_observed, batch.transitions_observed)
    assert np.array_equal(back.counts, batch.counts)
    with pytest.raises(MalformedInput):
        load_trajectories(path, 2, 2)


def test_written_json_is_strict(tmp_path):
    with pytest.raises(ValueError):
        write_json(tmp_path / "x.json", {"v": math.nan})
