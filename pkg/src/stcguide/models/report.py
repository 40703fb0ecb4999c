from typing import Any, Dict, List, Optional

from pydantic import BaseModel


class IterationRecord(BaseModel):
    index: int
    j_nl: float
    j_nl_next: Optional[float] = None
    j_lin: Optional[float] = None
    ratio: Optional[float] = None
    accepted: bool
    w_prox: float
    max_defect: Optional[float] = None
    max_y_growth: Optional[float] = None
    qp_status: str
    qp_iterations: int


class ChannelReport(BaseModel):
    name: str
    group: str
    max_violation: float
    max_violation_unscaled: float
    first_violation_time: Optional[float] = None
    active_samples: int = 0
    vacuous_samples: int = 0
    passed: bool


class CertReport(BaseModel):
    passed: bool
    tolerance: float
    sample_count: int
    final_time: float
    endpoint_error: float
    quaternion_drift: float
    channels: List[ChannelReport]
    crossings: Dict[str, List[float]]


class NodeTrajectory(BaseModel):
    """Node values; physical arrays use degrees for angles and deg/s for rates."""

    tau: List[float]
    states_scaled: List[List[float]]
    controls_scaled: List[List[float]]
    states: List[List[float]]
    controls: List[List[float]]


class FailureInfo(BaseModel):
    kind: str
    reason: str


class SolveReport(BaseModel):
    status: str
    certified: bool
    exit_code: int
    final_time: Optional[float] = None
    accepted_iterations: int = 0
    failure: Optional[FailureInfo] = None
    nodes: Optional[NodeTrajectory] = None
    dense_columns: List[str] = []
    dense: List[List[float]] = []
    history: List[IterationRecord] = []
    certification: Optional[CertReport] = None
    config: Dict[str, Any] = {}
    notes: List[str] = []
    timing: Dict[str, float] = {}
