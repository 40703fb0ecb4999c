"""Dense continuous-time certification of a node trajectory.

The trajectory is re-integrated with adaptive RK45 in physical time,
independently of the fixed-step propagator used by the solver, and every
path and state-triggered constraint is checked on a dense grid.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import bisect

from stcguide.errors import CertificationError, DomainError, GuidanceError, StructureError
from stcguide.models.report import CertReport, ChannelReport
from stcguide.services import vehicle
from stcguide.services.ocp import I_S, LandingProblem

logger = logging.getLogger(__name__)

STC_CHANNELS = ("stc_landing", "stc_line_of_sight", "stc_thrust_low", "stc_thrust_high")
# speed and tilt triggers both active: the thrust-low implication switches on
JOINT_TRIGGER = "slow_upright"
CROSSING_CHANNELS = vehicle.CHANNELS_TRIG + (JOINT_TRIGGER,)


class TrajectorySampler(Protocol):
    boundaries: np.ndarray

    def states(self, times) -> np.ndarray: ...

    def controls(self, times) -> np.ndarray: ...


def node_times(us, tau) -> np.ndarray:
    """Physical node times from the piecewise-linear dilation."""
    s = np.asarray(us, dtype=float)[:, I_S]
    dtau = np.diff(np.asarray(tau, dtype=float))
    return np.concatenate([[0.0], np.cumsum(0.5 * dtau * (s[:-1] + s[1:]))])


@dataclass
class DenseTrajectory:
    """Chained per-segment RK45 solutions with FOH controls placed in physical time."""

    tau: np.ndarray
    boundaries: np.ndarray
    node_controls: np.ndarray
    solutions: list

    @property
    def final_time(self) -> float:
        return float(self.boundaries[-1])

    def _segment(self, times) -> np.ndarray:
        idx = np.searchsorted(self.boundaries, times, side="right") - 1
        return np.clip(idx, 0, self.boundaries.size - 2)

    def tau_of(self, times) -> np.ndarray:
        """Invert the quadratic t(tau) on each segment."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        k = self._segment(times)
        s0 = self.node_controls[k, I_S]
        s1 = self.node_controls[k + 1, I_S]
        dtau = self.tau[k + 1] - self.tau[k]
        accel = (s1 - s0) / dtau
        dt = np.clip(times - self.boundaries[k], 0.0, None)
        sigma = 2.0 * dt / (s0 + np.sqrt(np.maximum(s0**2 + 2.0 * accel * dt, 0.0)))
        return self.tau[k] + np.clip(sigma, 0.0, dtau)

    def augmented_controls(self, times) -> np.ndarray:
        times = np.atleast_1d(np.asarray(times, dtype=float))
        k = self._segment(times)
        tau = self.tau_of(times)
        lam = ((tau - self.tau[k]) / (self.tau[k + 1] - self.tau[k]))[:, None]
        return (1.0 - lam) * self.node_controls[k] + lam * self.node_controls[k + 1]

    def controls(self, times) -> np.ndarray:
        return self.augmented_controls(times)[:, : vehicle.NU]

    def states(self, times) -> np.ndarray:
        times = np.atleast_1d(np.asarray(times, dtype=float))
        k = self._segment(times)
        out = np.empty((times.size, vehicle.NX))
        for seg in np.unique(k):
            mask = k == seg
            out[mask] = self.solutions[seg].sol(times[mask]).T
        return out


def dense_propagate(xs, us, tau, problem: LandingProblem, rel_tol: float = 1e-10,
                    abs_tol: float = 1e-12, x0=None) -> DenseTrajectory:
    """Integrate the physical dynamics from the first node across all segments."""
    xs = np.asarray(xs, dtype=float)
    us = np.asarray(us, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if us.ndim != 2 or us.shape[1] != vehicle.NU + 1 or us.shape[0] != tau.size:
        raise StructureError(f"controls {us.shape} do not match {tau.size} nodes")
    if np.any(us[:, I_S] <= 0.0):
        raise DomainError("dilation must be positive at every node")
    boundaries = node_times(us, tau)
    trajectory = DenseTrajectory(tau=tau, boundaries=boundaries, node_controls=us, solutions=[])
    x = np.asarray(xs[0, : vehicle.NX] if x0 is None else x0, dtype=float)

    def rhs(t, state):
        u = trajectory.controls(t)[0]
        return vehicle.dynamics(state, u, problem.vehicle)

    for k in range(tau.size - 1):
        interval = (float(boundaries[k]), float(boundaries[k + 1]))
        try:
            sol = solve_ivp(rhs, interval, x, method="RK45", rtol=rel_tol, atol=abs_tol, dense_output=True)
        except GuidanceError as exc:
            raise CertificationError(str(exc), interval) from exc
        if not sol.success:
            raise CertificationError(f"integrator failed: {sol.message}", interval)
        trajectory.solutions.append(sol)
        x = sol.y[:, -1]
    logger.debug("dense propagation over %.4f s in %d segments", boundaries[-1], tau.size - 1)
    return trajectory


def sample_times(sampler: TrajectorySampler, points_per_segment: int) -> np.ndarray:
    bounds = np.asarray(sampler.boundaries, dtype=float)
    pieces = [np.linspace(a, b, points_per_segment, endpoint=False) for a, b in zip(bounds[:-1], bounds[1:])]
    return np.concatenate(pieces + [bounds[-1:]])


def refine_crossing(fun: Callable[[float], float], a: float, b: float, tol_t: float,
                    max_steps: int | None = None) -> float:
    """Bisection root of a bracketed sign change."""
    root, result = bisect(fun, a, b, xtol=tol_t, maxiter=max_steps or 200, full_output=True, disp=False)
    if not result.converged:
        logger.debug("bisection stopped after %d steps on [%.6g, %.6g]", result.iterations, a, b)
    return float(root)


def _triggers(sampler: TrajectorySampler, problem: LandingProblem, times) -> np.ndarray:
    xs = sampler.states(times)
    us = sampler.controls(times)
    trig = np.array([vehicle.constraint_values(x, u, problem.vehicle, problem.r_f)[2] for x, u in zip(xs, us)])
    joint = np.maximum(trig[:, 2], trig[:, 3])
    return np.column_stack([trig, joint])


def locate_trigger_crossings(sampler: TrajectorySampler, problem: LandingProblem, tol_t: float = 1e-4,
                             points_per_segment: int = 1000) -> dict[str, list[float]]:
    """Sign changes of every trigger channel and of the joint speed-tilt trigger, in time order."""
    times = sample_times(sampler, points_per_segment)
    signs = np.sign(_triggers(sampler, problem, times))
    crossings: dict[str, list[float]] = {}
    for i, name in enumerate(CROSSING_CHANNELS):

        def channel(t, i=i):
            return float(_triggers(sampler, problem, np.array([t]))[0, i])

        found = []
        sgn = signs[:, i]
        for j in range(times.size - 1):
            if sgn[j] * sgn[j + 1] < 0:
                found.append(refine_crossing(channel, times[j], times[j + 1], tol_t))
            elif sgn[j + 1] == 0 and j + 2 < times.size and sgn[j] * sgn[j + 2] < 0:
                found.append(float(times[j + 1]))
        crossings[name] = sorted(found)
    return crossings


def _stc_consequents(stc: np.ndarray) -> np.ndarray:
    pos = np.maximum(stc, 0.0)
    return np.stack([
        pos[:, 0:5].max(axis=1),
        pos[:, 5],
        pos[:, 6:8].max(axis=1),
        pos[:, 8:10].max(axis=1),
    ], axis=1)


def _stc_activity(trig: np.ndarray, delta: float) -> np.ndarray:
    return np.stack([
        trig[:, 0] < -delta,
        trig[:, 1] < -delta,
        (trig[:, 2] < -delta) & (trig[:, 3] < -delta),
        (trig[:, 2] > delta) | (trig[:, 3] > delta),
    ], axis=1)


def _channel(name: str, group: str, positive: np.ndarray, scale: float, times: np.ndarray, tol: float,
             active: np.ndarray | None = None) -> ChannelReport:
    penalty = positive**2
    if active is not None:
        penalty = np.where(active, penalty, 0.0)
        positive = np.where(active, positive, 0.0)
    flagged = np.flatnonzero(penalty > tol)
    return ChannelReport(
        name=name,
        group=group,
        max_violation=float(penalty.max()),
        max_violation_unscaled=float(positive.max() * scale),
        first_violation_time=float(times[flagged[0]]) if flagged.size else None,
        active_samples=int(active.sum()) if active is not None else int(times.size),
        vacuous_samples=int((~active).sum()) if active is not None else 0,
        passed=bool(flagged.size == 0),
    )


def check_constraints(sampler: TrajectorySampler, problem: LandingProblem, points_per_segment: int = 1000,
                      tol: float = 1e-4, crossing_tol: float = 1e-4, terminal_state=None, state_scale=None,
                      endpoint_tol: float = 1e-5) -> CertReport:
    """Path and state-triggered constraint check on the dense grid.

    Violations are the normalized squared positive parts, the quantity the
    solver's violation accumulator integrates. An implication counts only where
    its trigger is active beyond the tightening margin.
    """
    times = sample_times(sampler, points_per_segment)
    xs = sampler.states(times)
    us = sampler.controls(times)
    values = [problem.normalized_constraints(x, u) for x, u in zip(xs, us)]
    g_x = np.array([v[0] for v in values])
    g_u = np.array([v[1] for v in values])
    trig = np.array([v[2] for v in values])
    stc = np.array([v[3] for v in values])

    channels = []
    for i, name in enumerate(vehicle.CHANNELS_GX):
        channels.append(_channel(name, "state", np.maximum(g_x[:, i], 0.0), problem.gx_scale[i], times, tol))
    for i, name in enumerate(vehicle.CHANNELS_GU):
        channels.append(_channel(name, "control", np.maximum(g_u[:, i], 0.0), problem.gu_scale[i], times, tol))
    active = _stc_activity(trig, problem.tightening)
    consequents = _stc_consequents(stc)
    groups = ((0, 5), (5, 6), (6, 8), (8, 10))
    for i, name in enumerate(STC_CHANNELS):
        lo, hi = groups[i]
        scale = float(problem.stc_scale[lo:hi].max())
        channels.append(_channel(name, "triggered", consequents[:, i], scale, times, tol, active[:, i]))

    endpoint_error = 0.0
    if terminal_state is not None:
        scale = np.ones(vehicle.NX) if state_scale is None else np.asarray(state_scale)[: vehicle.NX]
        diff = (xs[-1] - np.asarray(terminal_state)[: vehicle.NX]) / scale
        endpoint_error = float(np.max(np.abs(diff)))
    drift = float(np.max(np.abs(np.linalg.norm(xs[:, vehicle.I_Q], axis=1) - 1.0)))
    crossings = locate_trigger_crossings(sampler, problem, crossing_tol, points_per_segment)

    passed = all(ch.passed for ch in channels) and endpoint_error <= endpoint_tol
    for ch in channels:
        if not ch.passed:
            logger.warning("channel %s violated: %.3e (first at t=%.4f s)", ch.name, ch.max_violation,
                           ch.first_violation_time)
    return CertReport(
        passed=passed,
        tolerance=tol,
        sample_count=int(times.size),
        final_time=float(times[-1]),
        endpoint_error=endpoint_error,
        quaternion_drift=drift,
        channels=channels,
        crossings=crossings,
    )


def certify_nodes(xs, us, tau, problem: LandingProblem, points_per_segment: int = 1000, tol: float = 1e-4,
                  crossing_tol: float = 1e-4, state_scale=None) -> tuple[DenseTrajectory, CertReport]:
    """Dense propagation followed by the constraint check against the terminal node."""
    trajectory = dense_propagate(xs, us, tau, problem)
    report = check_constraints(trajectory, problem, points_per_segment, tol, crossing_tol,
                               terminal_state=np.asarray(xs)[-1], state_scale=state_scale)
    logger.info("certification %s: %d samples, endpoint error %.2e",
                "passed" if report.passed else "failed", report.sample_count, report.endpoint_error)
    return trajectory, report
