"""Property suites run by ``stcguide selftest``.

Each suite draws its cases from ``numpy.random.default_rng`` seeded per case,
so a failing case can be replayed from the seed printed in the table.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from stcguide.models.problem import ProblemConfig
from stcguide.services import dgmsr, vehicle
from stcguide.services.dgmsr import FormulaNode
from stcguide.services.ocp import NXA, LandingProblem, augmented_jacobians, augmented_rhs
from stcguide.services.qp import QpSettings, QpStatus, SparseQP, solve_qp, solve_qp_by_enumeration

logger = logging.getLogger(__name__)

GRADIENT_RTOL = 1e-5
QP_ATOL = 1e-6


@dataclass
class SuiteResult:
    name: str
    cases: int = 0
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def random_envelope_point(rng: np.random.Generator, problem: LandingProblem) -> tuple[np.ndarray, np.ndarray]:
    """Augmented state and control drawn inside the flight envelope."""
    p = problem.vehicle
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, 0.8 * p.theta_max)
    q = np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis])
    x = np.concatenate([
        [rng.uniform(p.m_dry, p.m_i)],
        [rng.uniform(-200, 200), rng.uniform(-200, 200), rng.uniform(10, 500)],
        rng.uniform(-50, 50, size=3),
        q,
        rng.uniform(-0.5, 0.5, size=3) * p.omega_max,
        [rng.uniform(0.0, 1e-3), rng.uniform(0.0, 30.0)],
    ])
    u = np.array([
        rng.uniform(p.t_stc1_min, p.t_stc2_max),
        rng.uniform(-0.9, 0.9) * p.delta_e_max,
        rng.uniform(-0.9, 0.9) * p.phi_e_max,
        rng.uniform(-0.9, 0.9) * p.delta_b_max,
        rng.uniform(-0.9, 0.9) * p.phi_b_max,
        rng.uniform(1.0, 30.0),
    ])
    return x, u


def central_difference(fun: Callable[[np.ndarray], np.ndarray], z: np.ndarray, rel_step: float = 1e-6) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    columns = []
    for i in range(z.size):
        h = rel_step * max(1.0, abs(z[i]))
        plus, minus = z.copy(), z.copy()
        plus[i] += h
        minus[i] -= h
        columns.append((np.atleast_1d(fun(plus)) - np.atleast_1d(fun(minus))) / (2.0 * h))
    return np.column_stack(columns)


def compare_jacobian(label: str, analytic: np.ndarray, numeric: np.ndarray, rtol: float = GRADIENT_RTOL) -> str | None:
    """None when the matrices agree, else a message naming the worst entry."""
    err = np.abs(analytic - numeric)
    bound = rtol * max(1.0, float(np.max(np.abs(numeric))))
    if float(err.max()) <= bound:
        return None
    i, j = np.unravel_index(int(np.argmax(err)), err.shape)
    return f"{label}[{i},{j}] analytic={analytic[i, j]:.6e} numeric={numeric[i, j]:.6e}"


def gradient_suite(problem: LandingProblem, seed: int = 0, points: int = 100,
                   inject_fault: bool = False) -> SuiteResult:
    result = SuiteResult("gradient")
    nx, nu = vehicle.NX, vehicle.NU
    params = problem.vehicle
    for case in range(points):
        case_seed = seed * 100003 + case
        rng = np.random.default_rng(case_seed)
        xa, ua = random_envelope_point(rng, problem)
        x, u = xa[:nx], ua[:nu]
        checks = []

        a, b = vehicle.dynamics_jacobians(x, u, params)
        if inject_fault:
            a = a.copy()
            a[4, 0] += 1e-2 * (1.0 + abs(a[4, 0]))
        z = np.concatenate([x, u])
        fd = central_difference(lambda v: vehicle.dynamics(v[:nx], v[nx:], params), z)
        checks.append(compare_jacobian("dynamics A", a, fd[:, :nx]))
        checks.append(compare_jacobian("dynamics B", b, fd[:, nx:]))

        a_aug, b_aug = augmented_jacobians(xa, ua, problem)
        za = np.concatenate([xa, ua])
        fd = central_difference(lambda v: augmented_rhs(v[:NXA], v[NXA:], problem), za)
        checks.append(compare_jacobian("augmented A", a_aug, fd[:, :NXA]))
        checks.append(compare_jacobian("augmented B", b_aug, fd[:, NXA:]))

        trig = rng.uniform(-1.0, 1.0, size=4)
        stc = rng.uniform(-1.0, 1.0, size=10)
        d_trig = rng.normal(size=(4, 3))
        d_stc = rng.normal(size=(10, 3))
        grad = dgmsr.stc_residual_gradient(trig, stc, d_trig, d_stc)
        fd = central_difference(lambda v: dgmsr.stc_residual(trig + d_trig @ v, stc + d_stc @ v), np.zeros(3))
        checks.append(compare_jacobian("stc_residual", grad, fd))

        result.cases += 1
        result.failures += [f"seed {case_seed}: {msg}" for msg in checks if msg]
    return result


def random_formula(rng: np.random.Generator, n_pred: int, depth: int = 4, max_arity: int = 6) -> FormulaNode:
    if depth == 0 or rng.random() < 0.2:
        return FormulaNode.predicate(int(rng.integers(n_pred)))
    kind = rng.choice(["conjunction", "disjunction", "negation", "implication"])
    if kind == "negation":
        return FormulaNode.neg(random_formula(rng, n_pred, depth - 1, max_arity))
    if kind == "implication":
        return FormulaNode.implies(random_formula(rng, n_pred, depth - 1, max_arity),
                                   random_formula(rng, n_pred, depth - 1, max_arity))
    children = [random_formula(rng, n_pred, depth - 1, max_arity) for _ in range(int(rng.integers(2, max_arity + 1)))]
    return FormulaNode(kind=kind, children=children)


def random_predicate_values(rng: np.random.Generator, n: int) -> np.ndarray:
    magnitude = 10.0 ** rng.uniform(-3.0, 2.0, size=n)
    return np.where(rng.random(n) < 0.5, -1.0, 1.0) * np.maximum(magnitude, 1.001e-3)


def _operator_pair_failure(rng: np.random.Generator, pairs: int) -> str | None:
    """Monotonicity under a one-entry increase and the conjunction/disjunction duality."""
    for _ in range(pairs):
        y = random_predicate_values(rng, int(rng.integers(2, 7)))
        bump = np.zeros_like(y)
        bump[int(rng.integers(y.size))] = abs(rng.normal()) + 1e-3
        conj, disj = dgmsr.conj_robustness(y), dgmsr.disj_robustness(y)
        slack = 1e-12 * (1.0 + abs(conj) + abs(disj))
        if dgmsr.conj_robustness(y + bump) < conj - slack:
            return f"conjunction not monotone at {y.tolist()}"
        if dgmsr.disj_robustness(y + bump) < disj - slack:
            return f"disjunction not monotone at {y.tolist()}"
        if disj != -dgmsr.conj_robustness(-y):
            return f"duality violated at {y.tolist()}"
    return None


def dgmsr_suite(seed: int = 0, shapes: int = 20, samples: int = 10_000, n_pred: int = 6) -> SuiteResult:
    """Per shape: ``samples`` sign checks on one random tree and as many operator pairs."""
    result = SuiteResult("dgmsr")
    for shape in range(shapes):
        shape_seed = seed * 100003 + shape
        rng = np.random.default_rng(shape_seed)
        tree = random_formula(rng, n_pred)
        for _ in range(samples):
            values = random_predicate_values(rng, n_pred)
            rob = dgmsr.eval_formula(tree, values)
            result.cases += 1
            if (rob > 0) != dgmsr.eval_boolean(tree, values) or rob == 0.0:
                result.failures.append(f"seed {shape_seed}: sign disagreement at {values.tolist()}")
                break

        result.cases += samples
        failure = _operator_pair_failure(rng, samples)
        if failure is not None:
            result.failures.append(f"seed {shape_seed}: {failure}")
    return result


def random_qp(rng: np.random.Generator, n: int, m: int) -> tuple[np.ndarray, ...]:
    """Strictly convex QP with a feasible point by construction."""
    root = rng.normal(size=(n, n))
    P = root @ root.T + 0.1 * np.eye(n)
    q = rng.normal(size=n)
    A = rng.normal(size=(m, n))
    ax = A @ rng.normal(size=n)
    l = ax - rng.uniform(0.0, 1.0, size=m)
    u = ax + rng.uniform(0.0, 1.0, size=m)
    kind = rng.integers(4, size=m)
    l[kind == 1] = -np.inf
    u[kind == 2] = np.inf
    if m:
        eq = int(rng.integers(m))
        if rng.random() < 0.3:
            l[eq] = u[eq] = ax[eq]
    return P, q, A, l, u


def qp_oracle_suite(seed: int = 0, instances: int = 200, max_n: int = 5, max_m: int = 6) -> SuiteResult:
    result = SuiteResult("qp_oracle")
    settings = QpSettings()
    for case in range(instances):
        case_seed = seed * 100003 + case
        rng = np.random.default_rng(case_seed)
        n = int(rng.integers(1, max_n + 1))
        m = int(rng.integers(0, max_m + 1))
        P, q, A, l, u = random_qp(rng, n, m)
        expected = solve_qp_by_enumeration(P, q, A, l, u)
        sol = solve_qp(SparseQP(sp.csc_matrix(P), q, sp.csc_matrix(A), l, u), settings)
        result.cases += 1
        if sol.status != QpStatus.SOLVED:
            result.failures.append(f"seed {case_seed}: status {sol.status.value}")
        elif float(np.max(np.abs(sol.x - expected))) > QP_ATOL:
            result.failures.append(f"seed {case_seed}: primal error {np.max(np.abs(sol.x - expected)):.2e}")
    return result


def run_suites(seed: int = 0, inject_fault: bool = False, config: ProblemConfig | None = None,
               samples: int = 10_000) -> list[SuiteResult]:
    problem = LandingProblem.from_config(config or ProblemConfig())
    suites = [
        gradient_suite(problem, seed, inject_fault=inject_fault),
        dgmsr_suite(seed, samples=samples),
        qp_oracle_suite(seed),
    ]
    for suite in suites:
        logger.info("suite %s: %d cases, %d failures", suite.name, suite.cases, len(suite.failures))
    return suites
