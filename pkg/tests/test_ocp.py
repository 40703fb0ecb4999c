import numpy as np
import pytest

from stcguide.errors import StructureError
from stcguide.services import vehicle
from stcguide.services.ocp import (
    I_S,
    I_T,
    I_Y,
    NUA,
    NXA,
    augmented_jacobians,
    augmented_rhs,
    initial_guess,
    make_scaling,
    path_penalty,
    penalty_rate,
    penalty_rate_gradient,
)
from stcguide.services.selftest import central_difference, random_envelope_point


def _augmented(problem, s):
    xs, us = initial_guess(problem, 15, 21.0)
    ua = us[3].copy()
    ua[I_S] = s
    return xs[3], ua


def test_zero_dilation_freezes_the_augmented_state(landing_problem):
    xa, ua = _augmented(landing_problem, 0.0)
    np.testing.assert_array_equal(augmented_rhs(xa, ua, landing_problem), np.zeros(NXA))


def test_time_channel_advances_with_dilation(landing_problem):
    xa, ua = _augmented(landing_problem, 21.0)
    rhs = augmented_rhs(xa, ua, landing_problem)
    assert rhs[I_T] == 21.0
    assert rhs[I_Y] >= 0.0
    phys = vehicle.dynamics(xa[:14], ua[:5], landing_problem.vehicle)
    np.testing.assert_allclose(rhs[:14], 21.0 * phys)


def test_path_penalty_sums_squared_positive_parts():
    assert path_penalty(np.array([0.1, 0.0, 0.0, 0.0]), np.zeros(4), np.zeros(4)) == pytest.approx(0.01)
    assert path_penalty(-np.ones(4), -np.ones(4), np.array([0.5, 0.0, 0.0, 0.25])) == pytest.approx(0.75)


def test_penalty_rate_is_positive_inside_the_tightening_band(landing_problem):
    # glideslope cone exactly at the origin sits on its bound; tightening makes it violated
    x = np.concatenate([[9e4], [0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0, 0.0], np.zeros(3)])
    u = np.array([1.54e6, 0.0, 0.0, 0.0, 0.0])
    assert penalty_rate(x, u, landing_problem) > 0.0


def test_penalty_rate_gradient_matches_finite_differences(landing_problem):
    rng = np.random.default_rng(7)
    for _ in range(5):
        xa, ua = random_envelope_point(rng, landing_problem)
        z = np.concatenate([xa[:14], ua[:5]])
        analytic = penalty_rate_gradient(xa[:14], ua[:5], landing_problem)
        numeric = central_difference(lambda v: penalty_rate(v[:14], v[14:], landing_problem), z)[0]
        np.testing.assert_allclose(analytic, numeric, atol=1e-5 * max(1.0, np.abs(numeric).max()))


def test_augmented_jacobians_match_finite_differences(landing_problem):
    rng = np.random.default_rng(11)
    xa, ua = random_envelope_point(rng, landing_problem)
    a, b = augmented_jacobians(xa, ua, landing_problem)
    fd = central_difference(lambda v: augmented_rhs(v[:NXA], v[NXA:], landing_problem), np.concatenate([xa, ua]))
    scale = max(1.0, np.abs(fd).max())
    np.testing.assert_allclose(a, fd[:, :NXA], atol=1e-5 * scale)
    np.testing.assert_allclose(b, fd[:, NXA:], atol=1e-5 * scale)


def test_augmented_shape_errors(landing_problem):
    with pytest.raises(StructureError):
        augmented_rhs(np.zeros(14), np.zeros(NUA), landing_problem)


def test_initial_guess_interpolates_the_boundary_set(landing_problem):
    xs, us = initial_guess(landing_problem, 15, 21.0)
    bnd = landing_problem.boundary
    assert xs.shape == (15, NXA) and us.shape == (15, NUA)
    np.testing.assert_allclose(xs[0, :14], bnd.initial_state())
    np.testing.assert_allclose(xs[-1, 1:14], bnd.final_state()[1:])
    assert xs[-1, I_T] == pytest.approx(21.0)
    np.testing.assert_allclose(np.linalg.norm(xs[:, vehicle.I_Q], axis=1), 1.0)
    np.testing.assert_allclose(us[:, 0], 1.54e6)
    np.testing.assert_allclose(us[:, I_S], 21.0)
    with pytest.raises(StructureError):
        initial_guess(landing_problem, 1)


def test_scaling_maps_mass_and_altitude_to_unit_interval(landing_problem):
    scaling = make_scaling(landing_problem, 21.0, 15)
    xs, us = initial_guess(landing_problem, 15, 21.0)
    scaled = scaling.scale_state(xs)
    assert scaled[0, 0] == pytest.approx(1.0)
    assert scaled[-1, 0] == pytest.approx(0.0)
    assert scaled[0, 3] == pytest.approx(1.0)
    assert scaled[-1, 3] == pytest.approx(0.0)
    assert scaling.x_scale[I_Y] == 1.0
    np.testing.assert_allclose(scaling.unscale_state(scaled), xs)
    np.testing.assert_allclose(scaling.unscale_control(scaling.scale_control(us)), us)


def test_doubled_scaling_keeps_offsets(landing_problem):
    scaling = make_scaling(landing_problem)
    doubled = scaling.doubled()
    np.testing.assert_array_equal(doubled.x_offset, scaling.x_offset)
    np.testing.assert_array_equal(doubled.u_scale, 2.0 * scaling.u_scale)
