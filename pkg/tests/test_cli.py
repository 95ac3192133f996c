import json
import math

import numpy as np
import pytest

import cli
import field_calculus as fc
import utils


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr().out
    return code, json.loads(out) if out.strip() else None


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def test_defaults_and_overrides(tmp_out):
    config = cli.load_config("flow", overrides={"tau": "0.25", "base": "1.5"}, seed=7, threads=2, out=tmp_out)
    assert config["tau"] == 0.25
    assert config["base"] == [1.5]
    assert config["size"] == 32
    assert config.seed == 7 and config.threads == 2 and config.out == tmp_out


def test_config_file_sits_between_defaults_and_flags(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("samples = 500\nrange = 10\nseed = 99\n", encoding="utf-8")
    config = cli.load_config("g2", config_path=path, overrides={"samples": "700"})
    assert config["samples"] == 700
    assert config["range"] == 10.0
    assert config.seed == 99


def test_unknown_config_key_is_rejected(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("bogus = 1\n", encoding="utf-8")
    with pytest.raises(cli.ConfigError):
        cli.load_config("g2", config_path=path)


@pytest.mark.parametrize("command, overrides", [
    ("flow", {"tau": "abc"}),
    ("flow", {"dim": "5"}),
    ("flow", {"variation_steps": "0.1,0.2"}),
    ("monotonicity", {"field": "spiral"}),
    ("monotonicity", {"field": "snapshot"}),
    ("g2", {"c1": "1"}),
    ("calibrate", {"sizes": "16"}),
])
def test_invalid_parameters(command, overrides):
    with pytest.raises(cli.ConfigError):
        cli.load_config(command, overrides=overrides)


def test_threads_must_be_positive():
    with pytest.raises(cli.ConfigError):
        cli.load_config("fm", threads=0)


def test_missing_config_file_is_a_config_error(tmp_path, capsys):
    code, _ = run(capsys, "fm", "--config", str(tmp_path / "missing.env"), "--out", str(tmp_path))
    assert code == cli.EXIT_CONFIG


def test_unknown_subcommand_exits_with_config_code(capsys):
    assert cli.main(["explode"]) == cli.EXIT_CONFIG


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def test_g2_singular_point(tmp_out, capsys):
    code, report = run(capsys, "g2", "--c1", "1", "--c2", "1", "--out", str(tmp_out))
    assert code == cli.EXIT_CONFIG
    assert report is None


def test_g2_equality_point(tmp_out, capsys):
    root3 = repr(math.sqrt(3.0))
    code, report = run(capsys, "g2", "--c1", root3, "--c2", root3, "--out", str(tmp_out))
    assert code == cli.EXIT_PASS
    assert report["ratio"] == pytest.approx(13 / 7, rel=1e-12)
    assert (tmp_out / "g2.json").read_text(encoding="utf-8").endswith("\n")


def test_g2_scan(tmp_out, capsys):
    code, report = run(capsys, "g2", "--samples", "5000", "--threads", "2", "--out", str(tmp_out))
    assert code == cli.EXIT_PASS
    assert report["samples"] == 5000
    assert report["min_ratio"] >= 13 / 7 - 1e-9


def test_verify_algebra(tmp_out, capsys):
    code, report = run(
        capsys, "verify-algebra", "--samples", "50", "--exterior-samples", "20",
        "--g2-samples", "500", "--audit-samples", "2000", "--out", str(tmp_out),
    )
    assert code == cli.EXIT_PASS
    assert report["failed"] == []
    assert any(audit.get("params", {}).get("m") == 1 for audit in report["audits"])


def test_flow_from_constant_curvature(tmp_out, capsys):
    code, report = run(capsys, "flow", "--amplitude", "0", "--max-steps", "5",
                       "--out", str(tmp_out))
    assert code == cli.EXIT_PASS
    assert report["trajectory"]["steps"] == 0
    assert report["first_variation"]["order"] is None
    frame = utils.read_csv(tmp_out / "flow_trajectory.csv")
    assert list(frame.columns) == list(fc.FlowTrajectory.CSV_COLUMNS)
    assert len(frame) == 1
    snapshot = fc.read_snapshot(tmp_out / "flow_final.field")
    assert snapshot.degree == 2
    assert snapshot.max_norm() == 0.0


def test_flow_stopped_before_convergence_fails(tmp_out, capsys):
    code, report = run(capsys, "flow", "--max-steps", "3", "--out", str(tmp_out))
    assert code == cli.EXIT_FAIL
    assert report["pass"] is False
    assert report["trajectory"]["descent"]
    assert not report["trajectory"]["converged"]
    assert report["trajectory"]["Hmax"] > 1e-6
    assert len(utils.read_csv(tmp_out / "flow_trajectory.csv")) == 4


def test_flow_trajectory_csv_never_increases_on_accepted_rows(tmp_out, capsys):
    run(capsys, "flow", "--radius", "1", "--size", "16", "--tau", "50", "--max-steps", "30",
        "--out", str(tmp_out))
    frame = utils.read_csv(tmp_out / "flow_trajectory.csv")
    assert (~frame["accepted"]).any()
    accepted = frame.loc[frame["accepted"], "V0"].to_numpy()
    assert len(accepted) > 1
    assert np.all(np.diff(accepted) <= 1e-12 * np.abs(accepted[:-1]))
    # rejected trials log their own V0, above the incumbent's
    first_rejected = frame.index[~frame["accepted"]][0]
    before = frame.loc[: first_rejected - 1]
    assert frame.loc[first_rejected, "V0"] > before.loc[before["accepted"], "V0"].iloc[-1]


def test_monotonicity_constant_field(tmp_out, capsys):
    code, report = run(capsys, "monotonicity", "--rungs", "6", "--out", str(tmp_out))
    assert code == cli.EXIT_PASS
    for kind in ("modified", "volume", "normalized"):
        frame = utils.read_csv(tmp_out / f"profile_{kind}.csv")
        assert list(frame.columns) == ["rho", "raw", "normalized", "theta_term", "error_estimate"]
        assert len(frame) == 6


def test_monotonicity_g2_field(tmp_out, capsys):
    code, report = run(capsys, "monotonicity", "--field", "g2", "--rungs", "6", "--out", str(tmp_out))
    assert code == cli.EXIT_PASS
    assert (tmp_out / "profile_normalized.csv").is_file()


def test_monotonicity_exponent_sweep_is_not_asserted(tmp_out, capsys):
    code, report = run(capsys, "monotonicity", "--kappa", "4", "--weight", "volume", "--out", str(tmp_out))
    assert code == cli.EXIT_PASS
    profile_check = report["checks"][0]
    assert not profile_check["asserted"]
    assert not profile_check["pass"]


def test_monotonicity_from_snapshot(tmp_path, tmp_out, capsys):
    grid = fc.TorusGrid.square(2, 16)
    path = fc.write_snapshot(tmp_path / "beta.field", fc.FormField.constant(grid, 2, [0.8]))
    code, report = run(
        capsys, "monotonicity", "--field", "snapshot", "--snapshot", str(path), "--weight", "modified",
        "--rungs", "4", "--qmc-log2-points", "10", "--out", str(tmp_out),
    )
    assert code == cli.EXIT_PASS
    assert report["field"] == "snapshot"


@pytest.mark.parametrize("graph", ["scherk", "quadratic", "linear"])
def test_fm_graphs(tmp_out, capsys, graph):
    code, report = run(capsys, "fm", "--graph", graph, "--points", "32", "--out", str(tmp_out))
    assert code == cli.EXIT_PASS
    assert report["graph"] == graph


def test_fm_custom_graph_needs_square_hessian(tmp_out, capsys):
    code, _ = run(capsys, "fm", "--graph", "custom", "--coeffs", "1,2,3", "--out", str(tmp_out))
    assert code == cli.EXIT_CONFIG


def test_calibrate(tmp_out, capsys):
    code, report = run(capsys, "calibrate", "--out", str(tmp_out))
    assert code == cli.EXIT_PASS
    assert report["observed_order"] == pytest.approx(4.0, abs=0.3)
    assert [row["N"] for row in report["rows"]] == [16, 32, 64]


# ---------------------------------------------------------------------------
# Reproducibility
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("argv", [
    ("g2", "--samples", "20000"),
    ("monotonicity", "--rungs", "6"),
])
def test_report_does_not_depend_on_thread_count(tmp_path, capsys, argv):
    outputs = []
    for threads in ("1", "4"):
        code = cli.main([*argv, "--seed", "11", "--threads", threads, "--out", str(tmp_path / threads)])
        assert code == cli.EXIT_PASS
        outputs.append(capsys.readouterr().out)
    assert outputs[0] == outputs[1]
    assert (tmp_path / "1" / f"{argv[0]}.json").read_bytes() == (tmp_path / "4" / f"{argv[0]}.json").read_bytes()
