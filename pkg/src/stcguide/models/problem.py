import math
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Vec3 = Tuple[float, float, float]
Quat = Tuple[float, float, float, float]


def _deg(value: float) -> float:
    return math.radians(value)


class VehicleParams(BaseModel):
    """Rocket model, limits and trigger thresholds. Angles are radians."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    isp: float = Field(330.0, gt=0)
    g0: float = Field(9.806, gt=0)
    rho: float = Field(1.225, ge=0)
    s_a: float = Field(545.0, gt=0)
    c_a: Vec3 = (0.4068, 0.4068, 0.0522)
    j_b: Vec3 = (60.0, 60.0, 1.5)
    r_cm_b: Vec3 = (0.0, 0.0, -14.0)
    r_cp_b: Vec3 = (0.0, 0.0, 3.0)
    m_dry: float = Field(85000.0, gt=0)
    m_i: float = Field(100000.0, gt=0)

    omega_max: float = Field(_deg(90.0), gt=0)
    theta_max: float = Field(_deg(90.0), gt=0)
    gamma_max: float = Field(_deg(35.0), gt=0, lt=math.pi / 2)
    delta_e_max: float = Field(_deg(10.0), gt=0)
    phi_e_max: float = Field(_deg(180.0), gt=0)
    delta_b_max: float = Field(_deg(20.0), gt=0)
    phi_b_max: float = Field(_deg(180.0), gt=0)

    h1_trig: float = 100.0
    h2_trig: float = 200.0
    v_trig: float = Field(35.0, ge=0)
    theta_trig: float = Field(_deg(60.0), ge=0)

    v_stc: float = Field(20.0, ge=0)
    omega_stc: float = Field(_deg(2.5), ge=0)
    theta_stc: float = Field(_deg(5.0), ge=0)
    gamma_stc: float = Field(_deg(5.0), ge=0, lt=math.pi / 2)
    psi_stc: float = Field(_deg(5.0), ge=0)
    delta_stc: float = Field(_deg(1.0), gt=0)
    t_stc1_min: float = Field(0.88e6, ge=0)
    t_stc1_max: float = Field(2.2e6, gt=0)
    t_stc2_min: float = Field(2.64e6, ge=0)
    t_stc2_max: float = Field(6.6e6, gt=0)

    @field_validator("c_a", "j_b")
    @classmethod
    def _positive_diagonal(cls, value):
        if any(v <= 0 for v in value):
            raise ValueError("diagonal entries must be positive")
        return value

    @model_validator(mode="after")
    def _check_pairs(self):
        if self.m_dry >= self.m_i:
            raise ValueError("m_dry must be less than m_i")
        if self.t_stc1_min >= self.t_stc1_max:
            raise ValueError("t_stc1_min must be less than t_stc1_max")
        if self.t_stc2_min >= self.t_stc2_max:
            raise ValueError("t_stc2_min must be less than t_stc2_max")
        return self

    @property
    def alpha(self) -> float:
        return 1.0 / (self.isp * self.g0)

    @property
    def gravity(self) -> np.ndarray:
        return np.array([0.0, 0.0, -self.g0])


class BoundarySet(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    m_i: float = Field(100000.0, gt=0)
    m_dry: float = Field(85000.0, gt=0)
    r_i: Vec3 = (200.0, 200.0, 500.0)
    r_f: Vec3 = (0.0, 0.0, 0.0)
    v_i: Vec3 = (0.0, 0.0, -50.0)
    v_f: Vec3 = (0.0, 0.0, -5.0)
    q_i: Quat = (math.sqrt(0.5), math.sqrt(0.5), 0.0, 0.0)
    q_f: Quat = (1.0, 0.0, 0.0, 0.0)
    omega_i: Vec3 = (0.0, 0.0, 0.0)
    omega_f: Vec3 = (0.0, 0.0, 0.0)

    @field_validator("q_i", "q_f")
    @classmethod
    def _unit_quaternion(cls, value):
        norm = math.sqrt(sum(v * v for v in value))
        if not math.isfinite(norm) or norm < 1e-12:
            raise ValueError("quaternion must be nonzero and finite")
        return tuple(v / norm for v in value)

    @model_validator(mode="after")
    def _check_masses(self):
        if self.m_dry >= self.m_i:
            raise ValueError("m_dry must be less than m_i")
        return self

    def initial_state(self) -> np.ndarray:
        return np.concatenate(
            [[self.m_i], self.r_i, self.v_i, self.q_i, self.omega_i]
        ).astype(float)

    def final_state(self) -> np.ndarray:
        # mass entry is the floor, not a target
        return np.concatenate(
            [[self.m_dry], self.r_f, self.v_f, self.q_f, self.omega_f]
        ).astype(float)


class ScpConfig(BaseModel):
    """Prox-linear solver settings. Tolerances are in scaled units."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    K: int = Field(15, ge=2)
    w_eq_dyn: float = Field(500.0, gt=0)
    w_prox_init: float = Field(10.0, gt=0)
    beta1: float = 0.1
    beta2: float = 0.7
    sigma1: float = 3.0
    sigma2: float = 1.3
    sigma3: float = 0.5
    eps_licq: float = Field(1e-4, gt=0)
    s_min: float = Field(0.5, gt=0)
    delta_licq: float = Field(1e-3, ge=0)
    eps_opt: float = Field(1e-6, gt=0)
    eps_feas: float = Field(1e-6, gt=0)
    max_iter: int = Field(100, ge=1)
    tf_guess: float = Field(21.0, gt=0)
    substeps: int = Field(16, ge=1)
    qp_eps: float = Field(1e-8, gt=0)
    qp_max_iter: int = Field(200000, ge=1)
    max_rejections: int = Field(3, ge=1)
    w_prox_max: float = Field(1e12, gt=0)
    dense_rate: int = Field(20, ge=2)
    cert_points: int = Field(1000, ge=2)
    cert_tol: float = Field(1e-4, gt=0)
    crossing_tol: float = Field(1e-4, gt=0)

    @model_validator(mode="after")
    def _check_algorithm_inputs(self):
        if not 0.0 < self.beta1 < self.beta2 < 1.0:
            raise ValueError("beta1 and beta2 must satisfy 0 < beta1 < beta2 < 1")
        if not self.sigma3 < 1.0 < self.sigma2 < self.sigma1:
            raise ValueError("sigma1, sigma2, sigma3 must satisfy sigma3 < 1 < sigma2 < sigma1")
        if self.tf_guess < self.s_min:
            raise ValueError("tf_guess must not be below s_min")
        return self


class ProblemConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    vehicle: VehicleParams = VehicleParams()
    boundary: BoundarySet = BoundarySet()
    scp: ScpConfig = ScpConfig()
    output_dir: str = "out"
    notes: List[str] = []

    @model_validator(mode="after")
    def _check_consistent_masses(self):
        if self.vehicle.m_i != self.boundary.m_i or self.vehicle.m_dry != self.boundary.m_dry:
            raise ValueError("vehicle and boundary masses m_i, m_dry disagree")
        return self
