"""Multiple-shooting discretization with first-order-hold controls.

Each segment integrates the augmented dynamics together with the variational
equations (16 + 16*16 + 16*6 + 16*6 = 464 stacked entries) using fixed-step
classical RK4.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from stcguide.errors import DomainError, PropagationError, StructureError
from stcguide.services.ocp import NUA, NXA, LandingProblem, ScalingMap, augmented_jacobians, augmented_rhs

_NPHI_X = NXA * NXA
_NPHI_U = NXA * NUA
STACK_SIZE = NXA + _NPHI_X + 2 * _NPHI_U


@dataclass(frozen=True)
class GridSpec:
    tau: np.ndarray
    substeps: int = 16

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=float)
        if tau.ndim != 1 or tau.size < 2:
            raise StructureError("grid needs at least two nodes")
        if tau[0] != 0.0 or tau[-1] != 1.0 or np.any(np.diff(tau) <= 0):
            raise StructureError("grid must increase strictly from 0 to 1")
        if self.substeps < 1:
            raise StructureError("substeps must be positive")
        object.__setattr__(self, "tau", tau)

    @classmethod
    def uniform(cls, K: int, substeps: int = 16) -> "GridSpec":
        return cls(np.linspace(0.0, 1.0, K), substeps)

    @property
    def K(self) -> int:
        return self.tau.size

    @property
    def dtau(self) -> np.ndarray:
        return np.diff(self.tau)


@dataclass(frozen=True)
class LinearizedSegment:
    index: int
    a: np.ndarray
    b_minus: np.ndarray
    b_plus: np.ndarray
    w: np.ndarray
    x_end: np.ndarray
    x_start: np.ndarray
    u_minus: np.ndarray
    u_plus: np.ndarray

    def rescaled(self, scaling: ScalingMap) -> "LinearizedSegment":
        """Same segment in scaled coordinates; w is rebuilt from the scaled identity."""
        sx, su = scaling.x_scale, scaling.u_scale
        a = self.a * sx[None, :] / sx[:, None]
        b_minus = self.b_minus * su[None, :] / sx[:, None]
        b_plus = self.b_plus * su[None, :] / sx[:, None]
        x_start = scaling.scale_state(self.x_start)
        u_minus = scaling.scale_control(self.u_minus)
        u_plus = scaling.scale_control(self.u_plus)
        x_end = scaling.scale_state(self.x_end)
        w = x_end - a @ x_start - b_minus @ u_minus - b_plus @ u_plus
        return LinearizedSegment(self.index, a, b_minus, b_plus, w, x_end, x_start, u_minus, u_plus)

    def predict(self, x_k, u_k, u_k1) -> np.ndarray:
        return self.a @ x_k + self.b_minus @ u_k + self.b_plus @ u_k1 + self.w


def foh_weights(tau: float, tau_k: float, tau_k1: float) -> tuple[float, float]:
    span = tau_k1 - tau_k
    return (tau_k1 - tau) / span, (tau - tau_k) / span


def foh(tau: float, tau_k: float, tau_k1: float, u_k, u_k1) -> np.ndarray:
    if not tau_k - 1e-12 <= tau <= tau_k1 + 1e-12:
        raise DomainError(f"tau={tau} outside segment [{tau_k}, {tau_k1}]")
    lam_minus, lam_plus = foh_weights(tau, tau_k, tau_k1)
    return lam_minus * np.asarray(u_k, dtype=float) + lam_plus * np.asarray(u_k1, dtype=float)


def _stacked_rhs(tau, z, tau_k, tau_k1, u_k, u_k1, problem):
    lam_minus, lam_plus = foh_weights(tau, tau_k, tau_k1)
    u = lam_minus * u_k + lam_plus * u_k1
    x = z[:NXA]
    phi_x = z[NXA:NXA + _NPHI_X].reshape(NXA, NXA)
    phi_minus = z[NXA + _NPHI_X:NXA + _NPHI_X + _NPHI_U].reshape(NXA, NUA)
    phi_plus = z[NXA + _NPHI_X + _NPHI_U:].reshape(NXA, NUA)
    a, b = augmented_jacobians(x, u, problem)
    return np.concatenate([
        augmented_rhs(x, u, problem),
        (a @ phi_x).ravel(),
        (a @ phi_minus + lam_minus * b).ravel(),
        (a @ phi_plus + lam_plus * b).ravel(),
    ])


def propagate_segment(
    x_k,
    u_k,
    u_k1,
    tau_k: float,
    tau_k1: float,
    problem: LandingProblem,
    substeps: int = 16,
    index: int = 0,
) -> LinearizedSegment:
    x_k = np.asarray(x_k, dtype=float)
    u_k = np.asarray(u_k, dtype=float)
    u_k1 = np.asarray(u_k1, dtype=float)
    if x_k.shape != (NXA,) or u_k.shape != (NUA,) or u_k1.shape != (NUA,):
        raise StructureError(f"segment {index}: bad node shapes {x_k.shape}, {u_k.shape}, {u_k1.shape}")

    z = np.concatenate([x_k, np.eye(NXA).ravel(), np.zeros(2 * _NPHI_U)])
    h = (tau_k1 - tau_k) / substeps
    args = (tau_k, tau_k1, u_k, u_k1, problem)
    try:
        for i in range(substeps):
            t = tau_k + i * h
            k1 = _stacked_rhs(t, z, *args)
            k2 = _stacked_rhs(t + 0.5 * h, z + 0.5 * h * k1, *args)
            k3 = _stacked_rhs(t + 0.5 * h, z + 0.5 * h * k2, *args)
            k4 = _stacked_rhs(t + h, z + h * k3, *args)
            z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(z)):
                raise PropagationError(f"non-finite values after substep {i + 1}")
    except (PropagationError, DomainError) as exc:
        raise PropagationError(str(exc), segment=index) from exc

    x_end = z[:NXA]
    a = z[NXA:NXA + _NPHI_X].reshape(NXA, NXA)
    b_minus = z[NXA + _NPHI_X:NXA + _NPHI_X + _NPHI_U].reshape(NXA, NUA)
    b_plus = z[NXA + _NPHI_X + _NPHI_U:].reshape(NXA, NUA)
    w = x_end - a @ x_k - b_minus @ u_k - b_plus @ u_k1
    return LinearizedSegment(index, a, b_minus, b_plus, w, x_end, x_k, u_k, u_k1)


def discretize_all(xs, us, grid: GridSpec, problem: LandingProblem, workers: int = 1) -> list[LinearizedSegment]:
    """Linearize every segment around the node arrays (physical units)."""
    xs = np.asarray(xs, dtype=float)
    us = np.asarray(us, dtype=float)
    if xs.shape != (grid.K, NXA) or us.shape != (grid.K, NUA):
        raise StructureError(f"node arrays {xs.shape}, {us.shape} do not match K={grid.K}")

    def run(k: int) -> LinearizedSegment:
        return propagate_segment(xs[k], us[k], us[k + 1], grid.tau[k], grid.tau[k + 1],
                                 problem, grid.substeps, index=k)

    indices = range(grid.K - 1)
    if workers <= 1:
        return [run(k) for k in indices]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, indices))


def simulate_nodes(x0, us, grid: GridSpec, problem: LandingProblem) -> np.ndarray:
    """Single-shooting node states produced by chaining segment endpoints."""
    us = np.asarray(us, dtype=float)
    xs = np.empty((grid.K, NXA))
    xs[0] = x0
    for k in range(grid.K - 1):
        seg = propagate_segment(xs[k], us[k], us[k + 1], grid.tau[k], grid.tau[k + 1],
                                problem, grid.substeps, index=k)
        xs[k + 1] = seg.x_end
    return xs


def defects(xs, segments: list[LinearizedSegment]) -> np.ndarray:
    """Shooting defects x_{k+1} - x_end,k, one row per segment."""
    xs = np.asarray(xs, dtype=float)
    return np.array([xs[seg.index + 1] - seg.x_end for seg in segments])
