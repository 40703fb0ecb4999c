"""Report assembly and on-disk artifacts: report.json, trajectory.csv, series/*.csv."""

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.integrate import cumulative_trapezoid

from stcguide.models.report import CertReport, NodeTrajectory, SolveReport
from stcguide.services import vehicle
from stcguide.services.certify import DenseTrajectory, sample_times
from stcguide.services.ocp import I_S, NUA, NXA, LandingProblem, ScalingMap, penalty_rate

logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = (
    "t", "m", "rx", "ry", "rz", "vx", "vy", "vz", "q1", "q2", "q3", "q4", "wx", "wy", "wz",
    "T", "delta_e", "phi_e", "delta_b", "phi_b", "s", "y",
)
# trajectory.csv columns holding angles or angular rates
_ANGULAR_COLUMNS = ("wx", "wy", "wz", "delta_e", "phi_e", "delta_b", "phi_b")
_STATE_ANGULAR = list(range(11, 14))
_CONTROL_ANGULAR = list(range(1, 5))


def _col(name: str) -> int:
    return TRAJECTORY_COLUMNS.index(name)


def nodes_to_report(xs_scaled, us_scaled, scaling: ScalingMap, tau) -> NodeTrajectory:
    xs = scaling.unscale_state(xs_scaled)
    us = scaling.unscale_control(us_scaled)
    xs[:, _STATE_ANGULAR] = np.degrees(xs[:, _STATE_ANGULAR])
    us[:, _CONTROL_ANGULAR] = np.degrees(us[:, _CONTROL_ANGULAR])
    return NodeTrajectory(
        tau=np.asarray(tau, dtype=float).tolist(),
        states_scaled=np.asarray(xs_scaled).tolist(),
        controls_scaled=np.asarray(us_scaled).tolist(),
        states=xs.tolist(),
        controls=us.tolist(),
    )


def nodes_from_report(nodes: NodeTrajectory, scaling: ScalingMap) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Physical SI node arrays rebuilt from the embedded scaled nodes."""
    xs_s = np.asarray(nodes.states_scaled, dtype=float)
    us_s = np.asarray(nodes.controls_scaled, dtype=float)
    if xs_s.ndim != 2 or xs_s.shape[1] != NXA or us_s.shape != (xs_s.shape[0], NUA):
        raise ValueError(f"embedded nodes have shapes {xs_s.shape} and {us_s.shape}")
    return scaling.unscale_state(xs_s), scaling.unscale_control(us_s), np.asarray(nodes.tau, dtype=float)


def dense_table(trajectory: DenseTrajectory, problem: LandingProblem, rate: int) -> np.ndarray:
    """Dense samples in trajectory.csv layout; y is the integrated penalty rate."""
    times = sample_times(trajectory, rate)
    xs = trajectory.states(times)
    us = trajectory.augmented_controls(times)
    rates = np.array([penalty_rate(x, u[: vehicle.NU], problem) for x, u in zip(xs, us)])
    y = cumulative_trapezoid(rates, times, initial=0.0)
    table = np.column_stack([times, xs, us[:, : vehicle.NU], us[:, I_S], y])
    for name in _ANGULAR_COLUMNS:
        table[:, _col(name)] = np.degrees(table[:, _col(name)])
    return table


@dataclass
class TableTrajectory:
    """Sampler over trajectory.csv rows, linear between rows, SI units.

    Rows are grouped `points_per_segment` to a segment, as `dense_table`
    writes them, so sampling at the same rate lands on the stored rows.
    """

    table: np.ndarray
    boundaries: np.ndarray

    @classmethod
    def from_table(cls, table, points_per_segment: int) -> "TableTrajectory":
        table = np.array(table, dtype=float, ndmin=2)
        rows = table.shape[0]
        if table.shape[1] != len(TRAJECTORY_COLUMNS) or rows < 2 or (rows - 1) % points_per_segment:
            raise ValueError(f"table of shape {table.shape} is not {points_per_segment} rows per segment")
        for name in _ANGULAR_COLUMNS:
            table[:, _col(name)] = np.radians(table[:, _col(name)])
        return cls(table=table, boundaries=table[::points_per_segment, 0].copy())

    def _columns(self, times, first: str, last: str) -> np.ndarray:
        times = np.atleast_1d(np.asarray(times, dtype=float))
        t = self.table[:, 0]
        return np.column_stack([np.interp(times, t, self.table[:, c]) for c in range(_col(first), _col(last) + 1)])

    def states(self, times) -> np.ndarray:
        return self._columns(times, "m", "wz")

    def controls(self, times) -> np.ndarray:
        return self._columns(times, "T", "phi_b")


def write_report(report: SolveReport, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "report.json"
    path.write_text(json.dumps(report.model_dump(mode="json"), sort_keys=True, indent=2) + "\n")
    logger.info("wrote %s", path)
    return path


def load_report(path) -> SolveReport:
    return SolveReport.model_validate_json(Path(path).read_text())


def write_trajectory_csv(table: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, table, delimiter=",", header=",".join(TRAJECTORY_COLUMNS), comments="", fmt="%.17g")
    return path


def read_trajectory_csv(path) -> np.ndarray:
    path = Path(path)
    header = path.read_text().splitlines()[0].split(",")
    if tuple(header) != TRAJECTORY_COLUMNS:
        raise ValueError(f"{path}: unexpected columns {header}")
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def _tilt_deg(table: np.ndarray) -> np.ndarray:
    q = table[:, _col("q1"):_col("q4") + 1]
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    cos_tilt = 1.0 - 2.0 * (q[:, 1] ** 2 + q[:, 2] ** 2)
    return np.degrees(np.arccos(np.clip(cos_tilt, -1.0, 1.0)))


def series_tables(table: np.ndarray, problem: LandingProblem) -> dict[str, tuple[list[str], np.ndarray]]:
    """Plot-ready columns derived from the dense trajectory table."""
    t = table[:, 0]
    r = table[:, _col("rx"):_col("rz") + 1]
    v = table[:, _col("vx"):_col("vz") + 1]
    w = table[:, _col("wx"):_col("wz") + 1]
    p = problem.vehicle
    tilt = _tilt_deg(table)
    speed = np.linalg.norm(v, axis=1)
    triggers = np.column_stack([
        r[:, 2] - p.h1_trig,
        r[:, 2] - p.h2_trig,
        speed - p.v_trig,
        np.cos(p.theta_trig) - np.cos(np.radians(tilt)),
    ])
    gimbal = table[:, _col("delta_e"):_col("phi_b") + 1]
    return {
        "ground_track": (["t", "ground_range", "altitude", "rx", "ry"],
                         np.column_stack([t, np.linalg.norm(r[:, :2], axis=1), r[:, 2], r[:, 0], r[:, 1]])),
        "thrust": (["t", "T", "T1_min", "T1_max", "T2_min", "T2_max"],
                   np.column_stack([t, table[:, _col("T")]] + [np.full_like(t, b) for b in (
                       p.t_stc1_min, p.t_stc1_max, p.t_stc2_min, p.t_stc2_max)])),
        "tilt": (["t", "tilt_deg"], np.column_stack([t, tilt])),
        "speed": (["t", "speed"], np.column_stack([t, speed])),
        "angular_rate": (["t", "omega_norm", "wx", "wy", "wz"],
                         np.column_stack([t, np.linalg.norm(w, axis=1), w])),
        "gimbal": (["t", "delta_e", "phi_e", "delta_b", "phi_b"], np.column_stack([t, gimbal])),
        "triggers": (["t", *vehicle.CHANNELS_TRIG], np.column_stack([t, triggers])),
    }


def write_series(table: np.ndarray, problem: LandingProblem, out_dir) -> list[Path]:
    series_dir = Path(out_dir) / "series"
    series_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, (columns, data) in series_tables(table, problem).items():
        path = series_dir / f"{name}.csv"
        np.savetxt(path, data, delimiter=",", header=",".join(columns), comments="", fmt="%.12g")
        paths.append(path)
    return paths


def summary_lines(report: SolveReport) -> list[str]:
    lines = [f"status: {report.status}", f"certified: {report.certified}"]
    if report.final_time is not None:
        lines.append(f"final time: {report.final_time:.4f} s")
    lines.append(f"accepted iterations: {report.accepted_iterations}")
    if report.failure is not None:
        lines.append(f"failure ({report.failure.kind}): {report.failure.reason}")
    lines += [f"note: {note}" for note in report.notes]
    cert: CertReport | None = report.certification
    if cert is not None:
        for name, times in cert.crossings.items():
            shown = ", ".join(f"{t:.3f}" for t in times) or "none"
            lines.append(f"crossing {name}: {shown}")
        worst = max(cert.channels, key=lambda ch: ch.max_violation)
        lines.append(f"worst channel: {worst.name} ({worst.max_violation:.3e})")
    return lines
