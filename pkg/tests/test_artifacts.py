from pathlib import Path

import numpy as np
import pytest

from stcguide.models.report import CertReport, ChannelReport, FailureInfo, SolveReport
from stcguide.services import artifacts
from stcguide.services.ocp import NUA, NXA, LandingProblem, initial_guess, make_scaling
from stcguide.settings import RuntimeSettings


def test_nodes_survive_the_report(landing_problem: LandingProblem):
    scaling = make_scaling(landing_problem, 21.0, 5)
    xs, us = initial_guess(landing_problem, 5, 21.0)
    nodes = artifacts.nodes_to_report(scaling.scale_state(xs), scaling.scale_control(us), scaling,
                                      np.linspace(0.0, 1.0, 5))
    # physical columns are reported in degrees
    assert nodes.controls[0][1] == pytest.approx(np.degrees(us[0, 1]))
    xs_back, us_back, tau = artifacts.nodes_from_report(nodes, scaling)
    np.testing.assert_allclose(xs_back, xs, atol=1e-9)
    np.testing.assert_allclose(us_back, us, atol=1e-6)
    assert tau[-1] == 1.0


def test_nodes_from_report_rejects_wrong_widths(landing_problem: LandingProblem):
    scaling = make_scaling(landing_problem)
    nodes = artifacts.nodes_to_report(np.zeros((2, NXA)), np.zeros((2, NUA)), scaling, [0.0, 1.0])
    broken = nodes.model_copy(update={"states_scaled": [[0.0] * 3, [0.0] * 3]})
    with pytest.raises(ValueError):
        artifacts.nodes_from_report(broken, scaling)


def test_trajectory_csv_header_is_checked(tmp_path: Path):
    path = tmp_path / "trajectory.csv"
    path.write_text("t,m\n0,1\n")
    with pytest.raises(ValueError):
        artifacts.read_trajectory_csv(path)


def test_series_tables_derive_plot_columns(landing_problem: LandingProblem):
    table = np.zeros((3, len(artifacts.TRAJECTORY_COLUMNS)))
    table[:, 0] = [0.0, 1.0, 2.0]
    table[:, artifacts.TRAJECTORY_COLUMNS.index("q1")] = 1.0
    table[:, artifacts.TRAJECTORY_COLUMNS.index("rz")] = [300.0, 150.0, 50.0]
    table[:, artifacts.TRAJECTORY_COLUMNS.index("vz")] = [-40.0, -30.0, -5.0]
    series = artifacts.series_tables(table, landing_problem)
    columns, data = series["triggers"]
    assert columns[1:] == ["altitude_h1", "altitude_h2", "speed", "tilt"]
    np.testing.assert_allclose(data[:, 1], [200.0, 50.0, -50.0])
    np.testing.assert_allclose(series["speed"][1][:, 1], [40.0, 30.0, 5.0])
    np.testing.assert_allclose(series["tilt"][1][:, 1], 0.0, atol=1e-12)


def test_summary_lines_report_failures_and_worst_channel():
    channel = ChannelReport(name="tilt", group="state", max_violation=2e-3, max_violation_unscaled=0.1,
                            first_violation_time=4.0, passed=False)
    cert = CertReport(passed=False, tolerance=1e-4, sample_count=11, final_time=20.0, endpoint_error=0.0,
                      quaternion_drift=0.0, channels=[channel], crossings={"speed": [5.5], "tilt": []})
    report = SolveReport(status="converged", certified=False, exit_code=2, final_time=20.0,
                         failure=FailureInfo(kind="certification", reason="channels ['tilt']"),
                         certification=cert)
    lines = artifacts.summary_lines(report)
    assert "failure (certification): channels ['tilt']" in lines
    assert "crossing speed: 5.500" in lines
    assert "crossing tilt: none" in lines
    assert lines[-1].startswith("worst channel: tilt")


def test_report_round_trip_on_disk(tmp_path: Path):
    report = SolveReport(status="max_iter", certified=False, exit_code=2, timing={"solve_s": 1.0})
    path = artifacts.write_report(report, tmp_path)
    assert artifacts.load_report(path) == report


def test_runtime_settings_read_the_environment(monkeypatch):
    monkeypatch.setenv("STCGUIDE_LOG_LEVEL", "debug")
    monkeypatch.setenv("STCGUIDE_WORKERS", "4")
    settings = RuntimeSettings()
    assert settings.log_level == "DEBUG"
    assert settings.workers == 4
    monkeypatch.setenv("STCGUIDE_WORKERS", "many")
    assert RuntimeSettings().workers == 1
    assert RuntimeSettings(log_level="warning").log_level == "WARNING"
