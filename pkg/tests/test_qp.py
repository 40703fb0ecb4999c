import logging
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp

from stcguide.errors import StructureError, SubproblemError
from stcguide.models.problem import ScpConfig
from stcguide.services import scp
from stcguide.services.discretization import GridSpec, discretize_all
from stcguide.services.ocp import NUA, NXA, initial_guess, make_scaling
from stcguide.services.qp import (
    QpLayout,
    QpSettings,
    QpStatus,
    SparseQP,
    assemble_subproblem,
    dump_triplets,
    equilibrate,
    solve_qp,
    solve_qp_by_enumeration,
    trapezoid_weights,
)
from stcguide.services.selftest import qp_oracle_suite, random_qp


def _sparse(P, q, A, l, u) -> SparseQP:
    return SparseQP(sp.csc_matrix(P), np.asarray(q, float), sp.csc_matrix(A), np.asarray(l, float),
                    np.asarray(u, float))


def test_box_constrained_qp_matches_closed_form():
    # minimize (x - 3)^2 / 2 + (y + 1)^2 / 2 with x <= 1 and y free
    qp = _sparse(np.eye(2), [-3.0, 1.0], [[1.0, 0.0]], [-np.inf], [1.0])
    sol = solve_qp(qp)
    assert sol.status == QpStatus.SOLVED
    np.testing.assert_allclose(sol.x, [1.0, -1.0], atol=1e-7)
    assert sol.y[0] == pytest.approx(2.0, abs=1e-6)


def test_unconstrained_qp():
    P = np.array([[2.0, 0.5], [0.5, 1.0]])
    q = np.array([1.0, -1.0])
    qp = SparseQP(sp.csc_matrix(P), q, sp.csc_matrix((0, 2)), np.zeros(0), np.zeros(0))
    sol = solve_qp(qp)
    assert sol.status == QpStatus.SOLVED
    np.testing.assert_allclose(sol.x, np.linalg.solve(P, -q), atol=1e-7)


def test_equality_constrained_qp():
    qp = _sparse(np.eye(3), np.zeros(3), [[1.0, 1.0, 1.0]], [3.0], [3.0])
    sol = solve_qp(qp)
    assert sol.status == QpStatus.SOLVED
    np.testing.assert_allclose(sol.x, np.ones(3), atol=1e-7)


def test_contradictory_bounds_are_primal_infeasible():
    qp = _sparse([[1.0]], [0.0], [[1.0], [1.0]], [-np.inf, 3.0], [2.0, np.inf])
    assert solve_qp(qp).status == QpStatus.PRIMAL_INFEASIBLE


def test_iteration_cap_is_reported():
    P, q, A, l, u = random_qp(np.random.default_rng(5), 4, 5)
    sol = solve_qp(_sparse(P, q, A, l, u), QpSettings(max_iter=3, polish=False, eps_inaccurate_factor=1.0))
    assert sol.status == QpStatus.MAX_ITER
    assert not sol.status.usable
    assert sol.iterations == 3


def test_capped_run_within_relaxed_tolerance_is_solved_inaccurate(caplog):
    P, q, A, l, u = random_qp(np.random.default_rng(5), 4, 5)
    settings = QpSettings(max_iter=2, polish=False, eps_inaccurate_factor=1e12)
    with caplog.at_level(logging.WARNING, logger="stcguide.services.qp"):
        sol = solve_qp(_sparse(P, q, A, l, u), settings)
    assert sol.status == QpStatus.SOLVED_INACCURATE
    assert sol.status.usable
    assert "max_iter" in caplog.text


def test_badly_scaled_qp_is_solved_through_equilibration():
    # minimize 1e4 (x1 - 1)^2 / 2 + 1e-2 (x2 + 2)^2 / 2 with 1e3 x2 >= -1e3
    qp = _sparse(np.diag([1e4, 1e-2]), [-1e4, 2e-2], [[0.0, 1e3]], [-1e3], [np.inf])
    sol = solve_qp(qp)
    assert sol.status == QpStatus.SOLVED
    np.testing.assert_allclose(sol.x, [1.0, -1.0], atol=1e-6)
    assert sol.y[0] == pytest.approx(-1e-5, rel=1e-3)


def test_equilibration_is_a_diagonal_change_of_variables():
    P = np.diag([1e4, 1e-2])
    A = np.array([[0.0, 1e3], [2.0, 5.0]])
    qp = _sparse(P, [-1e4, 2e-2], A, [-1e3, -np.inf], [np.inf, 4.0])
    eq = equilibrate(qp)
    np.testing.assert_allclose(eq.scaled.P.toarray(), eq.c * np.outer(eq.d, eq.d) * P)
    np.testing.assert_allclose(eq.scaled.A.toarray(), np.outer(eq.e, eq.d) * A)
    np.testing.assert_allclose(eq.scaled.u, [np.inf, 4.0 * eq.e[1]])
    assert np.all(eq.d > 0) and np.all(eq.e > 0) and eq.c > 0
    x, y = np.array([0.3, -0.7]), np.array([1.5, -2.0])
    x_back, y_back = eq.from_scaled(*eq.to_scaled(x, y))
    np.testing.assert_allclose(x_back, x)
    np.testing.assert_allclose(y_back, y)


def test_inconsistent_shapes_are_rejected():
    with pytest.raises(StructureError):
        _sparse(np.eye(2), [0.0, 0.0, 0.0], [[1.0, 0.0]], [0.0], [1.0])
    with pytest.raises(StructureError):
        _sparse(np.eye(1), [0.0], [[1.0]], [2.0], [1.0])


def test_random_qps_match_the_enumeration_oracle():
    for seed in range(25):
        rng = np.random.default_rng(seed)
        n, m = int(rng.integers(1, 6)), int(rng.integers(0, 7))
        P, q, A, l, u = random_qp(rng, n, m)
        sol = solve_qp(_sparse(P, q, A, l, u))
        assert sol.status == QpStatus.SOLVED
        np.testing.assert_allclose(sol.x, solve_qp_by_enumeration(P, q, A, l, u), atol=1e-6)


def test_oracle_suite_reports_cases():
    suite = qp_oracle_suite(seed=2, instances=10)
    assert suite.cases == 10
    assert suite.passed, suite.failures


def test_enumeration_reports_infeasible_problems():
    with pytest.raises(SubproblemError):
        solve_qp_by_enumeration(np.eye(1), [0.0], [[1.0], [1.0]], [-np.inf, 3.0], [2.0, np.inf])


def test_layout_dimensions_and_indexing():
    layout = QpLayout(15)
    assert layout.n_var == 778
    assert layout.u(0) == 15 * NXA
    assert layout.nu_minus(13, NXA - 1) == layout.n_var - 1
    z = np.arange(layout.n_var, dtype=float)
    xs, us, nu_p, nu_m = layout.unpack(z)
    assert xs.shape == (15, NXA) and us.shape == (15, NUA)
    np.testing.assert_array_equal(layout.pack(xs, us, nu_p, nu_m), z)


def test_trapezoid_weights_sum_to_one():
    w = trapezoid_weights(GridSpec.uniform(5))
    np.testing.assert_allclose(w, [0.125, 0.25, 0.25, 0.25, 0.125])


@pytest.fixture
def subproblem(landing_problem):
    K = 5
    cfg = ScpConfig(K=K, substeps=8)
    grid = GridSpec.uniform(K, cfg.substeps)
    scaling = make_scaling(landing_problem, cfg.tf_guess, K)
    xs, us = initial_guess(landing_problem, K, cfg.tf_guess)
    segments = [seg.rescaled(scaling) for seg in discretize_all(xs, us, grid, landing_problem)]
    xs_s, us_s = scaling.scale_state(xs), scaling.scale_control(us)
    qp = assemble_subproblem(xs_s, us_s, segments, cfg.w_prox_init, cfg, landing_problem, scaling, grid)
    return qp, (xs_s, us_s, segments, cfg, scaling, grid)


def test_assembled_subproblem_solves_and_matches_linearized_cost(subproblem):
    qp, (xs_s, us_s, segments, cfg, scaling, grid) = subproblem
    sol = solve_qp(qp, QpSettings(eps_prim=1e-8, eps_dual=1e-8))
    assert sol.status == QpStatus.SOLVED
    layout = QpLayout(grid.K)
    xs_new, us_new, nu_p, nu_m = layout.unpack(sol.x)
    assert np.all(nu_p >= -1e-7) and np.all(nu_m >= -1e-7)
    expected = scp.linearized_cost(xs_new, us_new, xs_s, us_s, segments, cfg.w_prox_init, cfg, scaling, grid)
    assert qp.objective(sol.x) == pytest.approx(expected, rel=1e-6, abs=1e-4)


def test_assembled_subproblem_respects_boundary_and_dilation_floor(subproblem, landing_problem):
    qp, (_, _, _, cfg, scaling, grid) = subproblem
    sol = solve_qp(qp)
    xs_new, us_new, _, _ = QpLayout(grid.K).unpack(sol.x)
    x0 = scaling.scale_state(np.concatenate([landing_problem.boundary.initial_state(), [0.0, 0.0]]))
    np.testing.assert_allclose(xs_new[0], x0, atol=1e-6)
    s_phys = scaling.unscale_control(us_new)[:, -1]
    assert np.all(s_phys >= cfg.s_min - 1e-5)


def test_dump_triplets_writes_every_block(tmp_path: Path, subproblem):
    qp, _ = subproblem
    path = dump_triplets(qp, tmp_path / "qp" / "subproblem_000.txt")
    text = path.read_text()
    for header in ("# P", "# A", "# q", "# l", "# u", "# offset"):
        assert header in text
    assert f"# A {qp.m} {qp.n}" in text
