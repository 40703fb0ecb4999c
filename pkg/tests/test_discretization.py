import numpy as np
import pytest

from stcguide.errors import DomainError, PropagationError, StructureError
from stcguide.services import vehicle
from stcguide.services.discretization import (
    GridSpec,
    defects,
    discretize_all,
    foh,
    propagate_segment,
    simulate_nodes,
)
from stcguide.services.ocp import I_S, NUA, NXA, initial_guess, make_scaling


@pytest.fixture
def guess(landing_problem):
    return initial_guess(landing_problem, 15, 21.0)


def test_grid_validation():
    assert GridSpec.uniform(15).K == 15
    with pytest.raises(StructureError):
        GridSpec(np.array([0.0, 0.6, 0.5, 1.0]))
    with pytest.raises(StructureError):
        GridSpec(np.array([0.1, 1.0]))


def test_foh_interpolates_and_rejects_outside_points():
    np.testing.assert_allclose(foh(0.25, 0.0, 1.0, np.zeros(2), np.array([4.0, 8.0])), [1.0, 2.0])
    with pytest.raises(DomainError):
        foh(1.5, 0.0, 1.0, np.zeros(2), np.ones(2))


def test_zero_dilation_segment_is_the_identity(landing_problem, guess):
    xs, us = guess
    u = us[0].copy()
    u[I_S] = 0.0
    seg = propagate_segment(xs[2], u, u, 0.0, 1.0 / 14, landing_problem, substeps=4)
    np.testing.assert_allclose(seg.x_end, xs[2], atol=1e-12)
    np.testing.assert_allclose(seg.a, np.eye(NXA), atol=1e-12)
    np.testing.assert_allclose(seg.w, np.zeros(NXA), atol=1e-9)
    np.testing.assert_allclose(seg.b_minus[:, :I_S], np.zeros((NXA, NUA - 1)), atol=1e-12)
    np.testing.assert_allclose(seg.b_plus[:, :I_S], np.zeros((NXA, NUA - 1)), atol=1e-12)


def test_single_shooting_nodes_have_zero_defects(landing_problem):
    _, us = initial_guess(landing_problem, 15, 5.0)
    grid = GridSpec.uniform(15, substeps=8)
    x0 = np.concatenate([landing_problem.boundary.initial_state(), [0.0, 0.0]])
    xs = simulate_nodes(x0, us, grid, landing_problem)
    segments = discretize_all(xs, us, grid, landing_problem)
    scaling = make_scaling(landing_problem)
    scaled = [seg.rescaled(scaling) for seg in segments]
    assert np.max(np.abs(defects(scaling.scale_state(xs), scaled))) <= 1e-8


def test_parallel_discretization_matches_serial(landing_problem, guess):
    xs, us = guess
    grid = GridSpec.uniform(15, substeps=2)
    serial = discretize_all(xs, us, grid, landing_problem, workers=1)
    parallel = discretize_all(xs, us, grid, landing_problem, workers=3)
    for a, b in zip(serial, parallel):
        assert a.index == b.index
        np.testing.assert_array_equal(a.a, b.a)
        np.testing.assert_array_equal(a.x_end, b.x_end)


def test_rk4_error_drops_with_substep_halving(landing_problem, guess):
    xs, us = guess

    def end(substeps):
        return propagate_segment(xs[0], us[0], us[1], 0.0, 1.0 / 14, landing_problem, substeps).x_end[:14]

    reference = end(64)
    coarse = np.max(np.abs(end(4) - reference) / (1.0 + np.abs(reference)))
    fine = np.max(np.abs(end(8) - reference) / (1.0 + np.abs(reference)))
    assert coarse / fine >= 3.5


def test_state_transition_matrix_passes_taylor_test(landing_problem, guess):
    xs, us = guess
    x0 = xs[0]
    base = propagate_segment(x0, us[0], us[1], 0.0, 1.0 / 14, landing_problem, substeps=8)
    direction = np.zeros(NXA)
    direction[vehicle.I_V] = [1.0, -0.5, 2.0]
    direction[vehicle.I_W] = [0.01, 0.02, -0.01]

    def remainder(h):
        moved = propagate_segment(x0 + h * direction, us[0], us[1], 0.0, 1.0 / 14, landing_problem, substeps=8)
        return np.linalg.norm(moved.x_end - base.x_end - h * base.a @ direction)

    assert remainder(1e-2) / remainder(5e-3) >= 3.5


def test_linearization_predicts_its_own_reference(landing_problem, guess):
    xs, us = guess
    seg = propagate_segment(xs[4], us[4], us[5], 4 / 14, 5 / 14, landing_problem, substeps=4, index=4)
    np.testing.assert_allclose(seg.predict(xs[4], us[4], us[5]), seg.x_end, rtol=1e-10, atol=1e-6)


def test_propagation_failure_names_the_segment(landing_problem, guess):
    xs, us = guess
    bad = xs[1].copy()
    bad[vehicle.I_M] = 1.0
    with pytest.raises(PropagationError) as info:
        propagate_segment(bad, us[1], us[2], 1 / 14, 2 / 14, landing_problem, substeps=2, index=1)
    assert info.value.segment == 1
    assert "segment 1" in str(info.value)


def test_discretize_all_checks_shapes(landing_problem, guess):
    xs, us = guess
    with pytest.raises(StructureError):
        discretize_all(xs[:-1], us, GridSpec.uniform(15), landing_problem)
