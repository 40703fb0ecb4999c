"""6-DoF rocket model: forces, dynamics, constraint values and their Jacobians.

State x = (m, r_I, v_I, q_BI, w_B), 14 entries, quaternion scalar-first.
Control u = (T, delta_e, phi_e, delta_b, phi_b).
Constraint values follow the "<= 0 is satisfied" convention; triggers are
active when negative.
"""

import numpy as np

from stcguide.errors import DomainError, PropagationError, StructureError
from stcguide.models.problem import VehicleParams

NX = 14
NU = 5
SMOOTHING_EPS = 1e-6

I_M = 0
I_R = slice(1, 4)
I_V = slice(4, 7)
I_Q = slice(7, 11)
I_W = slice(11, 14)

CHANNELS_GX = ("mass_floor", "tilt", "angular_rate", "glideslope")
CHANNELS_GU = ("engine_deflection", "engine_azimuth", "boresight_deflection", "boresight_azimuth")
CHANNELS_TRIG = ("altitude_h1", "altitude_h2", "speed", "tilt")
CHANNELS_STC = (
    "landing_deflection", "landing_speed", "landing_rate", "landing_tilt", "landing_glideslope",
    "line_of_sight", "thrust1_min", "thrust1_max", "thrust2_min", "thrust2_max",
)


def _dcm_tensor() -> np.ndarray:
    # C_ij = q^T M_ij q for the body-from-inertial DCM, q = (q1, q2, q3, q4)
    t = np.zeros((3, 3, 4, 4))

    def pair(i, j, a, b, value):
        t[i, j, a, b] = value
        t[i, j, b, a] = value

    t[0, 0] = np.diag([1.0, 1.0, -1.0, -1.0])
    t[1, 1] = np.diag([1.0, -1.0, 1.0, -1.0])
    t[2, 2] = np.diag([1.0, -1.0, -1.0, 1.0])
    pair(0, 1, 1, 2, 1.0)
    pair(0, 1, 0, 3, 1.0)
    pair(0, 2, 1, 3, 1.0)
    pair(0, 2, 0, 2, -1.0)
    pair(1, 0, 1, 2, 1.0)
    pair(1, 0, 0, 3, -1.0)
    pair(1, 2, 2, 3, 1.0)
    pair(1, 2, 0, 1, 1.0)
    pair(2, 0, 1, 3, 1.0)
    pair(2, 0, 0, 2, 1.0)
    pair(2, 1, 2, 3, 1.0)
    pair(2, 1, 0, 1, -1.0)
    return t


_DCM = _dcm_tensor()


def _unit_quaternion(q) -> tuple[np.ndarray, np.ndarray]:
    """Normalized quaternion and the Jacobian of the normalization."""
    q = np.asarray(q, dtype=float)
    norm = np.linalg.norm(q)
    if not np.isfinite(norm) or norm < 1e-12:
        raise DomainError("quaternion must be nonzero and finite")
    qhat = q / norm
    return qhat, (np.eye(4) - np.outer(qhat, qhat)) / norm


def _dcm_unit(qhat: np.ndarray) -> np.ndarray:
    return np.einsum("ijab,a,b->ij", _DCM, qhat, qhat)


def _d_dcm_vec(qhat, vec) -> np.ndarray:
    """d(C vec)/d(qhat), 3x4."""
    return 2.0 * np.einsum("ijab,j,b->ia", _DCM, vec, qhat)


def _d_dcm_t_vec(qhat, vec) -> np.ndarray:
    """d(C^T vec)/d(qhat), 3x4."""
    return 2.0 * np.einsum("ijab,i,b->ja", _DCM, vec, qhat)


def skew(a) -> np.ndarray:
    return np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])


def omega_matrix(xi) -> np.ndarray:
    x1, x2, x3 = xi
    return np.array([
        [0.0, -x1, -x2, -x3],
        [x1, 0.0, x3, -x2],
        [x2, -x3, 0.0, x1],
        [x3, x2, -x1, 0.0],
    ])


def _xi_matrix(q) -> np.ndarray:
    # Omega(w) q == Xi(q) w
    q1, q2, q3, q4 = q
    return np.array([
        [-q2, -q3, -q4],
        [q1, -q4, q3],
        [q4, q1, -q2],
        [-q3, q2, q1],
    ])


def dcm_body_from_inertial(q_bi) -> np.ndarray:
    qhat, _ = _unit_quaternion(q_bi)
    return _dcm_unit(qhat)


def thrust_body(thrust: float, delta: float, phi: float) -> np.ndarray:
    sd = np.sin(delta)
    return thrust * np.array([sd * np.cos(phi), sd * np.sin(phi), np.cos(delta)])


def _thrust_body_jacobian(thrust, delta, phi) -> np.ndarray:
    sd, cd, sp, cp = np.sin(delta), np.cos(delta), np.sin(phi), np.cos(phi)
    return np.column_stack([
        [sd * cp, sd * sp, cd],
        thrust * np.array([cd * cp, cd * sp, -sd]),
        thrust * np.array([-sd * sp, sd * cp, 0.0]),
    ])


def boresight_body(delta: float, phi: float) -> np.ndarray:
    return thrust_body(1.0, delta, phi)


def _aero(v, dcm, params: VehicleParams) -> np.ndarray:
    k = 0.5 * params.rho * params.s_a
    return -k * np.linalg.norm(v) * np.asarray(params.c_a) * (dcm @ v)


def aero_body(v_i, q_bi, params: VehicleParams) -> np.ndarray:
    v = np.asarray(v_i, dtype=float)
    return _aero(v, dcm_body_from_inertial(q_bi), params)


def _split(x, u) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (NX,) or u.shape != (NU,):
        raise StructureError(f"expected state ({NX},) and control ({NU},), got {x.shape} and {u.shape}")
    return x, u


def _checked(x, u, params: VehicleParams) -> tuple[np.ndarray, np.ndarray]:
    x, u = _split(x, u)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
        raise PropagationError("non-finite state or control")
    if x[I_M] < 0.5 * params.m_dry:
        raise PropagationError(f"mass {x[I_M]:.6g} kg fell below half the dry mass")
    return x, u


def dynamics(x, u, params: VehicleParams) -> np.ndarray:
    x, u = _checked(x, u, params)
    m, v, q, w = x[I_M], x[I_V], x[I_Q], x[I_W]
    dcm = dcm_body_from_inertial(q)
    jd = np.asarray(params.j_b)
    t_b = thrust_body(u[0], u[1], u[2])
    a_b = _aero(v, dcm, params)
    torque = np.cross(params.r_cm_b, t_b) + np.cross(params.r_cp_b, a_b)

    dx = np.empty(NX)
    dx[I_M] = -params.alpha * abs(u[0])
    dx[I_R] = v
    dx[I_V] = dcm.T @ (t_b + a_b) / m + params.gravity
    dx[I_Q] = 0.5 * omega_matrix(w) @ q
    dx[I_W] = (torque / m - np.cross(w, jd * w)) / jd
    return dx


def dynamics_jacobians(x, u, params: VehicleParams) -> tuple[np.ndarray, np.ndarray]:
    x, u = _checked(x, u, params)
    m, v, q, w = x[I_M], x[I_V], x[I_Q], x[I_W]
    qhat, dnorm = _unit_quaternion(q)
    dcm = _dcm_unit(qhat)
    jd = np.asarray(params.j_b)
    ca = np.asarray(params.c_a)
    inv_m = 1.0 / m

    t_b = thrust_body(u[0], u[1], u[2])
    dt_b = _thrust_body_jacobian(u[0], u[1], u[2])

    k = 0.5 * params.rho * params.s_a
    speed = np.linalg.norm(v)
    v_body = dcm @ v
    a_b = -k * speed * ca * v_body
    v_dir = v / speed if speed > 0 else np.zeros(3)
    da_dv = -k * ca[:, None] * (np.outer(v_body, v_dir) + speed * dcm)
    da_dq = -k * speed * ca[:, None] * (_d_dcm_vec(qhat, v) @ dnorm)

    force = t_b + a_b
    torque = np.cross(params.r_cm_b, t_b) + np.cross(params.r_cp_b, a_b)
    r_cp = skew(params.r_cp_b)

    a = np.zeros((NX, NX))
    b = np.zeros((NX, NU))
    b[I_M, 0] = -params.alpha * np.sign(u[0])

    a[I_R, I_V] = np.eye(3)

    a[I_V, I_M] = -inv_m**2 * (dcm.T @ force)
    a[I_V, I_V] = inv_m * dcm.T @ da_dv
    a[I_V, I_Q] = inv_m * (_d_dcm_t_vec(qhat, force) @ dnorm + dcm.T @ da_dq)
    b[I_V, 0:3] = inv_m * dcm.T @ dt_b

    a[I_Q, I_Q] = 0.5 * omega_matrix(w)
    a[I_Q, I_W] = 0.5 * _xi_matrix(q)

    a[I_W, I_M] = -inv_m**2 * torque / jd
    a[I_W, I_V] = inv_m * (r_cp @ da_dv) / jd[:, None]
    a[I_W, I_Q] = inv_m * (r_cp @ da_dq) / jd[:, None]
    a[I_W, I_W] = -(skew(w) @ np.diag(jd) - skew(jd * w)) / jd[:, None]
    b[I_W, 0:3] = inv_m * (skew(params.r_cm_b) @ dt_b) / jd[:, None]
    return a, b


def smoothed_norm(z) -> float:
    z = np.asarray(z, dtype=float)
    return float(np.sqrt(z @ z + SMOOTHING_EPS**2) - SMOOTHING_EPS)


def _smoothed_norm_grad(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return z / np.sqrt(z @ z + SMOOTHING_EPS**2)


def _safe_unit(z) -> np.ndarray:
    n = np.linalg.norm(z)
    return z / n if n > 0 else np.zeros_like(z)


def constraint_values(x, u, params: VehicleParams, r_f=None):
    """Returns (g_x, g_u, trig, stc) with 4, 4, 4 and 10 entries."""
    x, u = _split(x, u)
    r_f = np.zeros(3) if r_f is None else np.asarray(r_f, dtype=float)
    m, r, v, q, w = x[I_M], x[I_R], x[I_V], x[I_Q], x[I_W]
    thrust, d_e, p_e, d_b, p_b = u
    qhat, _ = _unit_quaternion(q)
    dcm = _dcm_unit(qhat)
    cos_tilt = 1.0 - 2.0 * (qhat[1] ** 2 + qhat[2] ** 2)
    speed = np.linalg.norm(v)
    rel = r - r_f

    g_x = np.array([
        params.m_dry - m,
        np.cos(params.theta_max) - cos_tilt,
        w @ w - params.omega_max**2,
        np.tan(params.gamma_max) * smoothed_norm(r[:2]) - r[2],
    ])
    g_u = np.array([
        abs(d_e) - params.delta_e_max,
        abs(p_e) - params.phi_e_max,
        abs(d_b) - params.delta_b_max,
        abs(p_b) - params.phi_b_max,
    ])
    trig = np.array([
        r[2] - params.h1_trig,
        r[2] - params.h2_trig,
        speed - params.v_trig,
        np.cos(params.theta_trig) - cos_tilt,
    ])
    line_of_sight = np.cos(params.psi_stc) * smoothed_norm(rel) - rel @ (dcm.T @ boresight_body(d_b, p_b))
    stc = np.array([
        abs(d_e) - params.delta_stc,
        speed - params.v_stc,
        np.linalg.norm(w) - params.omega_stc,
        np.cos(params.theta_stc) - cos_tilt,
        np.tan(params.gamma_stc) * smoothed_norm(r[:2]) - r[2],
        line_of_sight,
        params.t_stc1_min - thrust,
        thrust - params.t_stc1_max,
        params.t_stc2_min - thrust,
        thrust - params.t_stc2_max,
    ])
    return g_x, g_u, trig, stc


def constraint_jacobians(x, u, params: VehicleParams, r_f=None):
    """Jacobians of constraint_values with respect to (x, u), each with 19 columns."""
    x, u = _split(x, u)
    r_f = np.zeros(3) if r_f is None else np.asarray(r_f, dtype=float)
    r, v, q, w = x[I_R], x[I_V], x[I_Q], x[I_W]
    d_e, p_e, d_b, p_b = u[1:]
    qhat, dnorm = _unit_quaternion(q)
    dcm = _dcm_unit(qhat)
    d_cos_tilt = np.array([0.0, -4.0 * qhat[1], -4.0 * qhat[2], 0.0]) @ dnorm
    v_dir = _safe_unit(v)
    n = NX + NU
    col_u = NX

    j_x = np.zeros((4, n))
    j_x[0, I_M] = -1.0
    j_x[1, I_Q] = -d_cos_tilt
    j_x[2, I_W] = 2.0 * w
    j_x[3, 1:3] = np.tan(params.gamma_max) * _smoothed_norm_grad(r[:2])
    j_x[3, 3] = -1.0

    j_u = np.zeros((4, n))
    for i, angle in enumerate((d_e, p_e, d_b, p_b)):
        j_u[i, col_u + 1 + i] = np.sign(angle)

    j_trig = np.zeros((4, n))
    j_trig[0, 3] = 1.0
    j_trig[1, 3] = 1.0
    j_trig[2, I_V] = v_dir
    j_trig[3, I_Q] = -d_cos_tilt

    rel = r - r_f
    ell = boresight_body(d_b, p_b)
    d_ell = _thrust_body_jacobian(1.0, d_b, p_b)[:, 1:]
    rel_body = dcm @ rel

    j_stc = np.zeros((10, n))
    j_stc[0, col_u + 1] = np.sign(d_e)
    j_stc[1, I_V] = v_dir
    j_stc[2, I_W] = _safe_unit(w)
    j_stc[3, I_Q] = -d_cos_tilt
    j_stc[4, 1:3] = np.tan(params.gamma_stc) * _smoothed_norm_grad(r[:2])
    j_stc[4, 3] = -1.0
    j_stc[5, I_R] = np.cos(params.psi_stc) * _smoothed_norm_grad(rel) - dcm.T @ ell
    j_stc[5, I_Q] = -rel @ (_d_dcm_t_vec(qhat, ell) @ dnorm)
    j_stc[5, col_u + 3:col_u + 5] = -rel_body @ d_ell
    j_stc[6, col_u] = -1.0
    j_stc[7, col_u] = 1.0
    j_stc[8, col_u] = -1.0
    j_stc[9, col_u] = 1.0
    return j_x, j_u, j_trig, j_stc
