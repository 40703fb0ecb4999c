"""Prox-linear successive convexification loop with adaptive proximal weight."""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from stcguide.errors import GuidanceError, SubproblemError
from stcguide.models.problem import ProblemConfig, ScpConfig
from stcguide.models.report import IterationRecord
from stcguide.services.discretization import GridSpec, LinearizedSegment, defects, discretize_all
from stcguide.services.ocp import I_S, I_Y, LandingProblem, ScalingMap, initial_guess, make_scaling
from stcguide.services.qp import (
    QpLayout,
    QpSettings,
    QpStatus,
    assemble_subproblem,
    dump_triplets,
    solve_qp,
    trapezoid_weights,
)

logger = logging.getLogger(__name__)

DEGENERATE_DECREASE = 1e-14


class ScpStatus(str, Enum):
    CONVERGED = "converged"
    MAX_ITER = "max_iter"
    SUBPROBLEM_FAILURE = "subproblem_failure"


@dataclass
class ScpResult:
    status: ScpStatus
    xs: np.ndarray
    us: np.ndarray
    xs_phys: np.ndarray
    us_phys: np.ndarray
    segments: list[LinearizedSegment]
    scaling: ScalingMap
    grid: GridSpec
    problem: LandingProblem
    history: list[IterationRecord] = field(default_factory=list)
    failure_reason: str | None = None

    @property
    def accepted_iterations(self) -> int:
        return sum(1 for rec in self.history if rec.accepted)

    @property
    def final_time(self) -> float:
        return float(self.xs_phys[-1, -1])


def time_cost(us, scaling: ScalingMap, grid: GridSpec) -> float:
    """Trapezoidal integral of the physical dilation over tau, i.e. the final time."""
    s = np.asarray(us, dtype=float)[:, I_S] * scaling.u_scale[I_S] + scaling.u_offset[I_S]
    return float(trapezoid_weights(grid) @ s)


def nonlinear_cost(xs, us, segments: list[LinearizedSegment], config: ScpConfig,
                   scaling: ScalingMap, grid: GridSpec) -> float:
    """Time cost plus the weighted L1 norm of the scaled shooting defects."""
    penalty = float(np.abs(defects(xs, segments)).sum()) if segments else 0.0
    return time_cost(us, scaling, grid) + config.w_eq_dyn * penalty


def linearized_cost(xs, us, xs_ref, us_ref, segments_ref: list[LinearizedSegment], w_prox: float,
                    config: ScpConfig, scaling: ScalingMap, grid: GridSpec) -> float:
    xs = np.asarray(xs, dtype=float)
    us = np.asarray(us, dtype=float)
    penalty = 0.0
    for seg in segments_ref:
        k = seg.index
        penalty += float(np.abs(xs[k + 1] - seg.predict(xs[k], us[k], us[k + 1])).sum())
    prox = float(np.sum((xs - xs_ref) ** 2) + np.sum((us - us_ref) ** 2))
    return time_cost(us, scaling, grid) + config.w_eq_dyn * penalty + 0.5 * w_prox * prox


def prox_ratio(j_nl: float, j_nl_next: float, j_lin_next: float, tol: float = 1e-10) -> float | None:
    """Actual over predicted decrease; None when the prediction is degenerate."""
    predicted = j_nl - j_lin_next
    if predicted < -tol:
        raise SubproblemError(f"negative predicted decrease {predicted:.3e}; subproblem not solved to tolerance")
    if predicted < DEGENERATE_DECREASE:
        return None
    return (j_nl - j_nl_next) / predicted


def adaptive_weight(w_prox: float, j_nl: float, j_nl_next: float, j_lin_next: float,
                    config: ScpConfig, tol: float = 1e-10) -> tuple[float, bool]:
    ratio = prox_ratio(j_nl, j_nl_next, j_lin_next, tol)
    if ratio is None:
        return w_prox, True
    if ratio <= config.beta1:
        return w_prox * config.sigma1, False
    if ratio < config.beta2:
        return w_prox * config.sigma2, True
    return w_prox * config.sigma3, True


def _finite(value: float) -> float | None:
    return float(value) if value is not None and math.isfinite(value) else None


def solve(config: ProblemConfig, workers: int = 1, scaling: ScalingMap | None = None,
          dump_qp_dir=None) -> ScpResult:
    """Run the prox-linear loop from the straight-line initial guess."""
    scp = config.scp
    problem = LandingProblem.from_config(config)
    grid = GridSpec.uniform(scp.K, scp.substeps)
    scaling = scaling or make_scaling(problem, scp.tf_guess, scp.K)
    layout = QpLayout(scp.K)
    qp_settings = QpSettings(eps_prim=scp.qp_eps, eps_dual=scp.qp_eps, eps_rel=scp.qp_eps,
                             max_iter=scp.qp_max_iter)

    def linearize(xs_s, us_s) -> list[LinearizedSegment]:
        segs = discretize_all(scaling.unscale_state(xs_s), scaling.unscale_control(us_s), grid, problem, workers)
        return [seg.rescaled(scaling) for seg in segs]

    def cost(xs_s, us_s, segs) -> float:
        return nonlinear_cost(xs_s, us_s, segs, scp, scaling, grid)

    xs_phys, us_phys = initial_guess(problem, scp.K, scp.tf_guess)
    xs = scaling.scale_state(xs_phys)
    us = scaling.scale_control(us_phys)
    segments = linearize(xs, us)
    j_nl = cost(xs, us, segments)
    defect = float(np.max(np.abs(defects(xs, segments))))
    w_prox = scp.w_prox_init
    warm = None
    rejections = 0
    history: list[IterationRecord] = []
    status, reason = ScpStatus.MAX_ITER, None
    logger.info("initial guess: J_nl=%.6g tf=%.3f", j_nl, scp.tf_guess)

    for j in range(scp.max_iter):
        qp = assemble_subproblem(xs, us, segments, w_prox, scp, problem, scaling, grid)
        if dump_qp_dir is not None and j == 0:
            dump_triplets(qp, f"{dump_qp_dir}/subproblem_000.txt")
        sol = solve_qp(qp, qp_settings, warm)
        if sol.status == QpStatus.PRIMAL_INFEASIBLE:
            history.append(IterationRecord(index=j, j_nl=j_nl, accepted=False, w_prox=w_prox,
                                           qp_status=sol.status.value, qp_iterations=sol.iterations))
            status, reason = ScpStatus.SUBPROBLEM_FAILURE, f"iteration {j}: convex subproblem primal infeasible"
            logger.error(reason)
            break
        warm = (sol.x, sol.y)

        xs_new, us_new, _, _ = layout.unpack(sol.x)
        j_lin = linearized_cost(xs_new, us_new, xs, us, segments, w_prox, scp, scaling, grid)
        gap = abs(j_nl - j_lin)
        y_growth = float(np.max(np.diff(xs[:, I_Y])))
        if sol.status.usable and gap <= scp.eps_opt and defect <= scp.eps_feas \
                and y_growth <= scp.eps_licq + 1e-9:
            # the subproblem predicts no decrease at a feasible reference: stationary
            history.append(IterationRecord(
                index=j, j_nl=j_nl, j_lin=j_lin, accepted=False, w_prox=w_prox, max_defect=defect,
                max_y_growth=y_growth, qp_status=sol.status.value, qp_iterations=sol.iterations,
            ))
            logger.info("iter %3d  J_nl=%.8g  defect=%.2e  stationary", j, j_nl, defect)
            status = ScpStatus.CONVERGED
            break

        y_growth = float(np.max(np.diff(xs_new[:, I_Y])))
        segs_new, j_next, max_defect, ratio = None, math.inf, None, None
        if sol.status.usable:
            try:
                segs_new = linearize(xs_new, us_new)
                j_next = cost(xs_new, us_new, segs_new)
                max_defect = float(np.max(np.abs(defects(xs_new, segs_new))))
            except GuidanceError as exc:
                logger.warning("iteration %d: candidate rejected: %s", j, exc)
                segs_new = None
        else:
            logger.warning("iteration %d: subproblem %s, step rejected", j, sol.status.value)

        if segs_new is None:
            w_next, accepted = w_prox * scp.sigma1, False
        else:
            qp_eps = scp.qp_eps
            if sol.status == QpStatus.SOLVED_INACCURATE:
                qp_eps *= qp_settings.eps_inaccurate_factor
            tol = 1e-10 + 1e3 * qp_eps * (1.0 + abs(j_nl))
            try:
                ratio = prox_ratio(j_nl, j_next, j_lin, tol)
                w_next, accepted = adaptive_weight(w_prox, j_nl, j_next, j_lin, scp, tol)
            except SubproblemError as exc:
                status, reason = ScpStatus.SUBPROBLEM_FAILURE, f"iteration {j}: {exc}"
                logger.error(reason)
                break
            if accepted and j_next > j_nl:
                # only a degenerate prediction reaches here; keep acceptance monotone
                w_next, accepted = w_prox * scp.sigma1, False

        history.append(IterationRecord(
            index=j, j_nl=j_nl, j_nl_next=_finite(j_next), j_lin=_finite(j_lin), ratio=_finite(ratio),
            accepted=accepted, w_prox=w_prox, max_defect=max_defect, max_y_growth=y_growth,
            qp_status=sol.status.value, qp_iterations=sol.iterations,
        ))
        logger.info(
            "iter %3d  J_nl=%.8g  defect=%s  r=%s  w_prox=%.3g  %s",
            j, j_nl, "n/a" if max_defect is None else f"{max_defect:.2e}",
            "n/a" if ratio is None else f"{ratio:.3f}", w_prox, "accept" if accepted else "reject",
        )

        if accepted:
            xs, us, segments, j_nl, defect = xs_new, us_new, segs_new, j_next, max_defect
            rejections = 0
            if max_defect <= scp.eps_feas and gap <= scp.eps_opt and y_growth <= scp.eps_licq + 1e-9:
                status = ScpStatus.CONVERGED
                break
        else:
            rejections += 1
            if rejections >= scp.max_rejections and w_next > scp.w_prox_max:
                status = ScpStatus.SUBPROBLEM_FAILURE
                reason = f"{rejections} consecutive rejections with w_prox={w_next:.3g}"
                logger.error(reason)
                break
        w_prox = w_next

    logger.info("scp finished: %s after %d iterations", status.value, len(history))
    return ScpResult(
        status=status,
        xs=xs,
        us=us,
        xs_phys=scaling.unscale_state(xs),
        us_phys=scaling.unscale_control(us),
        segments=segments,
        scaling=scaling,
        grid=grid,
        problem=problem,
        history=history,
        failure_reason=reason,
    )
