"""Augmented, time-dilated landing problem.

Augmented state (16): physical state, accumulated violation y, physical time.
Augmented control (6): physical control, dilation factor s = dt/dtau.
"""

from dataclasses import dataclass, field

import numpy as np

from stcguide.errors import PropagationError, StructureError
from stcguide.models.problem import BoundarySet, ProblemConfig, ScpConfig, VehicleParams
from stcguide.services import dgmsr, vehicle

NXA = 16
NUA = 6
I_Y = 14
I_T = 15
I_S = 5


def _cos_scale(angle: float) -> float:
    return max(1.0 - np.cos(angle), 1e-3)


@dataclass(frozen=True)
class LandingProblem:
    """Vehicle, boundary set, tightening and per-channel constraint normalization."""

    vehicle: VehicleParams
    boundary: BoundarySet
    tightening: float = 1e-3
    gx_scale: np.ndarray = field(init=False, repr=False)
    gu_scale: np.ndarray = field(init=False, repr=False)
    trig_scale: np.ndarray = field(init=False, repr=False)
    stc_scale: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        p = self.vehicle
        length = max(float(np.linalg.norm(np.subtract(self.boundary.r_i, self.boundary.r_f))), 1.0)
        scales = {
            "gx_scale": [p.m_i - p.m_dry, _cos_scale(p.theta_max), p.omega_max**2, length],
            "gu_scale": [p.delta_e_max, p.phi_e_max, p.delta_b_max, p.phi_b_max],
            "trig_scale": [max(abs(p.h1_trig), 1.0), max(abs(p.h2_trig), 1.0), max(p.v_trig, 1.0),
                           _cos_scale(p.theta_trig)],
            "stc_scale": [
                p.delta_stc,
                p.v_stc if p.v_stc > 0 else max(p.v_trig, 1.0),
                p.omega_stc if p.omega_stc > 0 else p.omega_max,
                _cos_scale(p.theta_stc),
                max(abs(p.h1_trig), 1.0),
                max(abs(p.h2_trig), 1.0),
                p.t_stc1_max, p.t_stc1_max, p.t_stc2_max, p.t_stc2_max,
            ],
        }
        for name, values in scales.items():
            object.__setattr__(self, name, np.asarray(values, dtype=float))

    @classmethod
    def from_config(cls, config: ProblemConfig) -> "LandingProblem":
        return cls(vehicle=config.vehicle, boundary=config.boundary, tightening=config.scp.delta_licq)

    @property
    def r_f(self) -> np.ndarray:
        return np.asarray(self.boundary.r_f, dtype=float)

    def normalized_constraints(self, x, u):
        g_x, g_u, trig, stc = vehicle.constraint_values(x, u, self.vehicle, self.r_f)
        return g_x / self.gx_scale, g_u / self.gu_scale, trig / self.trig_scale, stc / self.stc_scale

    def normalized_jacobians(self, x, u):
        j_x, j_u, j_trig, j_stc = vehicle.constraint_jacobians(x, u, self.vehicle, self.r_f)
        return (
            j_x / self.gx_scale[:, None],
            j_u / self.gu_scale[:, None],
            j_trig / self.trig_scale[:, None],
            j_stc / self.stc_scale[:, None],
        )


def path_penalty(g_x, g_u, h_stc) -> float:
    """Exterior penalty sum: squared positive parts plus the triggered residuals."""
    return float(
        np.sum(np.maximum(g_x, 0.0) ** 2)
        + np.sum(np.maximum(g_u, 0.0) ** 2)
        + np.sum(h_stc)
    )


def penalty_rate(x, u, problem: LandingProblem) -> float:
    delta = problem.tightening
    g_x, g_u, trig, stc = problem.normalized_constraints(x, u)
    h_stc = dgmsr.stc_residual(trig, stc + delta, trigger_margin=delta)
    return path_penalty(g_x + delta, g_u + delta, h_stc)


def penalty_rate_gradient(x, u, problem: LandingProblem) -> np.ndarray:
    """Gradient of penalty_rate with respect to (x, u), 19 entries."""
    delta = problem.tightening
    g_x, g_u, trig, stc = problem.normalized_constraints(x, u)
    j_x, j_u, j_trig, j_stc = problem.normalized_jacobians(x, u)
    grad = 2.0 * np.maximum(g_x + delta, 0.0) @ j_x + 2.0 * np.maximum(g_u + delta, 0.0) @ j_u
    grad += dgmsr.stc_residual_gradient(trig, stc + delta, j_trig, j_stc, trigger_margin=delta).sum(axis=0)
    return grad


def _split(xa, ua) -> tuple[np.ndarray, np.ndarray]:
    xa = np.asarray(xa, dtype=float)
    ua = np.asarray(ua, dtype=float)
    if xa.shape != (NXA,) or ua.shape != (NUA,):
        raise StructureError(f"expected augmented state ({NXA},) and control ({NUA},), got {xa.shape} and {ua.shape}")
    if not (np.all(np.isfinite(xa)) and np.all(np.isfinite(ua))):
        raise PropagationError("non-finite augmented state or control")
    return xa, ua


def augmented_rhs(xa, ua, problem: LandingProblem) -> np.ndarray:
    xa, ua = _split(xa, ua)
    x, u, s = xa[: vehicle.NX], ua[: vehicle.NU], ua[I_S]
    rhs = np.empty(NXA)
    rhs[: vehicle.NX] = s * vehicle.dynamics(x, u, problem.vehicle)
    rhs[I_Y] = max(s, 0.0) * penalty_rate(x, u, problem)
    rhs[I_T] = s
    return rhs


def augmented_jacobians(xa, ua, problem: LandingProblem) -> tuple[np.ndarray, np.ndarray]:
    xa, ua = _split(xa, ua)
    nx, nu = vehicle.NX, vehicle.NU
    x, u, s = xa[:nx], ua[:nu], ua[I_S]
    s_pos = max(s, 0.0)
    a_phys, b_phys = vehicle.dynamics_jacobians(x, u, problem.vehicle)
    grad = penalty_rate_gradient(x, u, problem)

    a = np.zeros((NXA, NXA))
    b = np.zeros((NXA, NUA))
    a[:nx, :nx] = s * a_phys
    a[I_Y, :nx] = s_pos * grad[:nx]
    b[:nx, :nu] = s * b_phys
    b[:nx, I_S] = vehicle.dynamics(x, u, problem.vehicle)
    b[I_Y, :nu] = s_pos * grad[nx:]
    b[I_Y, I_S] = penalty_rate(x, u, problem) if s > 0 else 0.0
    b[I_T, I_S] = 1.0
    return a, b


def initial_guess(problem: LandingProblem, K: int, tf_guess: float = 21.0) -> tuple[np.ndarray, np.ndarray]:
    """Straight-line state guess with constant mid-range thrust and dilation."""
    if K < 2:
        raise StructureError("at least two nodes are required")
    tau = np.linspace(0.0, 1.0, K)
    x0 = problem.boundary.initial_state()
    xf = problem.boundary.final_state()
    xs = np.zeros((K, NXA))
    xs[:, : vehicle.NX] = (1.0 - tau)[:, None] * x0 + tau[:, None] * xf
    q = xs[:, vehicle.I_Q]
    xs[:, vehicle.I_Q] = q / np.linalg.norm(q, axis=1, keepdims=True)
    xs[:, I_T] = tf_guess * tau

    us = np.zeros((K, NUA))
    us[:, 0] = 0.5 * (problem.vehicle.t_stc1_max + problem.vehicle.t_stc1_min)
    us[:, I_S] = tf_guess
    return xs, us


@dataclass(frozen=True)
class ScalingMap:
    """Affine maps xi_scaled = (xi - offset) / scale for state and control."""

    x_offset: np.ndarray
    x_scale: np.ndarray
    u_offset: np.ndarray
    u_scale: np.ndarray

    def scale_state(self, x):
        return (np.asarray(x, dtype=float) - self.x_offset) / self.x_scale

    def unscale_state(self, xs):
        return np.asarray(xs, dtype=float) * self.x_scale + self.x_offset

    def scale_control(self, u):
        return (np.asarray(u, dtype=float) - self.u_offset) / self.u_scale

    def unscale_control(self, us):
        return np.asarray(us, dtype=float) * self.u_scale + self.u_offset

    def doubled(self) -> "ScalingMap":
        return ScalingMap(self.x_offset, 2.0 * self.x_scale, self.u_offset, 2.0 * self.u_scale)


def _affine(lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    span = hi - lo
    degenerate = span <= 1e-12 * np.maximum(1.0, np.abs(hi))
    return lo, np.where(degenerate, 1.0, span)


def make_scaling(problem: LandingProblem, tf_guess: float = 21.0, K: int = 15) -> ScalingMap:
    """Per-channel min/max over boundary values, bounds and the initial guess."""
    p, bnd = problem.vehicle, problem.boundary
    r_i, r_f = np.asarray(bnd.r_i), np.asarray(bnd.r_f)
    v_ref = max(np.linalg.norm(bnd.v_i), np.linalg.norm(bnd.v_f), p.v_trig)

    x_lo = np.concatenate([[p.m_dry], np.minimum(r_i, r_f), -v_ref * np.ones(3), -np.ones(4),
                           -p.omega_max * np.ones(3), [0.0, 0.0]])
    x_hi = np.concatenate([[p.m_i], np.maximum(r_i, r_f), v_ref * np.ones(3), np.ones(4),
                           p.omega_max * np.ones(3), [0.0, tf_guess]])
    angles = np.array([p.delta_e_max, p.phi_e_max, p.delta_b_max, p.phi_b_max])
    u_lo = np.concatenate([[0.0], -angles, [0.0]])
    u_hi = np.concatenate([[p.t_stc2_max], angles, [tf_guess]])

    xs, us = initial_guess(problem, K, tf_guess)
    x_lo, x_hi = np.minimum(x_lo, xs.min(axis=0)), np.maximum(x_hi, xs.max(axis=0))
    u_lo, u_hi = np.minimum(u_lo, us.min(axis=0)), np.maximum(u_hi, us.max(axis=0))

    x_offset, x_scale = _affine(x_lo, x_hi)
    u_offset, u_scale = _affine(u_lo, u_hi)
    return ScalingMap(x_offset, x_scale, u_offset, u_scale)
