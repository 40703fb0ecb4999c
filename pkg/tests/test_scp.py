import logging
from pathlib import Path

import numpy as np
import pytest

from stcguide.errors import SubproblemError
from stcguide.models.problem import ScpConfig
from stcguide.services import scp
from stcguide.services.discretization import GridSpec, LinearizedSegment
from stcguide.services.ocp import I_S, NUA, NXA, ScalingMap

CONFIG = ScpConfig()
IDENTITY_SCALING = ScalingMap(np.zeros(NXA), np.ones(NXA), np.zeros(NUA), np.ones(NUA))


def _hold_segments(xs, us, defect=None):
    """Segments that predict x_{k+1} = x_k, optionally with a defect on the first one."""
    segments = []
    for k in range(len(xs) - 1):
        x_end = xs[k + 1].copy()
        if defect is not None and k == 0:
            x_end = x_end + defect
        segments.append(LinearizedSegment(
            index=k, a=np.eye(NXA), b_minus=np.zeros((NXA, NUA)), b_plus=np.zeros((NXA, NUA)),
            w=np.zeros(NXA), x_end=x_end, x_start=xs[k], u_minus=us[k], u_plus=us[k + 1],
        ))
    return segments


def _nodes(K=3, s=21.0):
    xs = np.zeros((K, NXA))
    us = np.zeros((K, NUA))
    us[:, I_S] = s
    return xs, us


@pytest.mark.parametrize(
    "j_nl_next, expected_w, expected_accept",
    [
        (9.5, 30.0, False),  # ratio 0.05
        (9.0, 30.0, False),  # ratio exactly beta1
        (5.0, 13.0, True),  # ratio 0.5
        (1.0, 5.0, True),  # ratio 0.9
    ],
)
def test_adaptive_weight_branches(j_nl_next, expected_w, expected_accept):
    w, accepted = scp.adaptive_weight(10.0, 10.0, j_nl_next, 0.0, CONFIG)
    assert w == pytest.approx(expected_w)
    assert accepted is expected_accept


def test_degenerate_prediction_accepts_without_changing_weight():
    assert scp.prox_ratio(10.0, 10.0, 10.0) is None
    assert scp.adaptive_weight(10.0, 10.0, 10.0, 10.0, CONFIG) == (10.0, True)


def test_negative_predicted_decrease_is_a_subproblem_error():
    with pytest.raises(SubproblemError):
        scp.prox_ratio(10.0, 9.0, 10.1)
    with pytest.raises(SubproblemError):
        scp.adaptive_weight(10.0, 10.0, 9.0, 10.1, CONFIG)


def test_prediction_within_tolerance_is_degenerate():
    assert scp.prox_ratio(10.0, 10.0, 10.0 + 1e-12) is None


def test_small_positive_prediction_still_goes_through_the_ratio():
    # 2e-9 predicted, 1e-9 lost: a tiny prediction is not accepted on its own
    w, accepted = scp.adaptive_weight(10.0, 10.0, 10.0 + 1e-9, 10.0 - 2e-9, CONFIG)
    assert not accepted
    assert w == pytest.approx(30.0)


def test_time_cost_is_the_final_time():
    xs, us = _nodes(K=5, s=21.0)
    assert scp.time_cost(us, IDENTITY_SCALING, GridSpec.uniform(5)) == pytest.approx(21.0)


def test_nonlinear_cost_adds_weighted_defects():
    xs, us = _nodes()
    grid = GridSpec.uniform(3)
    assert scp.nonlinear_cost(xs, us, _hold_segments(xs, us), CONFIG, IDENTITY_SCALING, grid) == pytest.approx(21.0)
    defect = np.zeros(NXA)
    defect[3] = -0.2
    segments = _hold_segments(xs, us, defect)
    assert scp.nonlinear_cost(xs, us, segments, CONFIG, IDENTITY_SCALING, grid) == pytest.approx(121.0)


def test_linearized_cost_equals_nonlinear_cost_at_the_reference():
    xs, us = _nodes()
    grid = GridSpec.uniform(3)
    segments = _hold_segments(xs, us)
    j_nl = scp.nonlinear_cost(xs, us, segments, CONFIG, IDENTITY_SCALING, grid)
    j_lin = scp.linearized_cost(xs, us, xs, us, segments, 10.0, CONFIG, IDENTITY_SCALING, grid)
    assert j_lin == pytest.approx(j_nl)
    moved = xs.copy()
    moved[1, 0] = 0.1
    j_moved = scp.linearized_cost(moved, us, xs, us, segments, 10.0, CONFIG, IDENTITY_SCALING, grid)
    # the move breaks two linearized segments and pays the proximal term
    assert j_moved == pytest.approx(21.0 + CONFIG.w_eq_dyn * 0.2 + 0.5 * 10.0 * 0.01)


def test_solve_converges_on_hold_problem(hold_config):
    result = scp.solve(hold_config)
    assert result.status == scp.ScpStatus.CONVERGED
    assert result.failure_reason is None
    assert result.accepted_iterations <= len(result.history)
    assert result.final_time == pytest.approx(0.5, abs=1e-6)
    assert np.all(result.us_phys[:, I_S] >= hold_config.scp.s_min - 1e-6)
    last = result.history[-1]
    assert last.max_defect <= hold_config.scp.eps_feas
    assert abs(last.j_nl - last.j_lin) <= hold_config.scp.eps_opt
    for record in result.history:
        if record.accepted:
            assert record.j_nl_next <= record.j_nl


def test_solve_dumps_the_first_subproblem(tmp_path: Path, hold_config):
    scp.solve(hold_config, dump_qp_dir=tmp_path)
    assert (tmp_path / "subproblem_000.txt").read_text().startswith("# P ")


def test_solve_is_deterministic_across_worker_counts(hold_config):
    serial = scp.solve(hold_config, workers=1)
    threaded = scp.solve(hold_config, workers=2)
    np.testing.assert_array_equal(serial.xs, threaded.xs)
    assert [r.j_nl for r in serial.history] == [r.j_nl for r in threaded.history]


def test_capped_subproblems_are_rejected_with_a_warning(caplog, hold_config):
    settings = hold_config.scp.model_copy(update={"qp_max_iter": 1, "max_iter": 4})
    config = hold_config.model_copy(update={"scp": settings})
    with caplog.at_level(logging.WARNING, logger="stcguide"):
        result = scp.solve(config)
    capped = [record for record in result.history if record.qp_status == "max_iter"]
    assert capped
    assert not any(record.accepted for record in capped)
    assert all(b.w_prox > a.w_prox for a, b in zip(capped, capped[1:]))
    assert "step rejected" in caplog.text
