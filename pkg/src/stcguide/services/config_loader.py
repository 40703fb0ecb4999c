"""Flat JSON problem configuration: parsing, unit conversion and validation."""

import json
import logging
import math
import re
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import ValidationError
from rapidfuzz import fuzz, process

from stcguide.errors import ConfigError
from stcguide.models.problem import BoundarySet, ProblemConfig, ScpConfig, VehicleParams

logger = logging.getLogger(__name__)

ANGLE_KEYS = frozenset({
    "omega_i", "omega_f", "omega_max", "theta_max", "gamma_max", "delta_e_max", "phi_e_max",
    "delta_b_max", "phi_b_max", "theta_trig", "omega_stc", "theta_stc", "gamma_stc", "psi_stc", "delta_stc",
})
QUATERNION_KEYS = ("q_i", "q_f")

VEHICLE_KEYS = frozenset(VehicleParams.model_fields)
BOUNDARY_KEYS = frozenset(BoundarySet.model_fields)
SCP_KEYS = frozenset(ScpConfig.model_fields)
TOP_KEYS = frozenset({"output_dir"})
VALID_KEYS = VEHICLE_KEYS | BOUNDARY_KEYS | SCP_KEYS | TOP_KEYS


def suggest_key(key: str, threshold: int = 60) -> str | None:
    result = process.extractOne(key, sorted(VALID_KEYS), scorer=fuzz.ratio, score_cutoff=threshold)
    return result[0] if result else None


def _to_radians(value):
    if isinstance(value, (list, tuple)):
        return [math.radians(v) for v in value]
    return math.radians(value)


def _to_degrees(value):
    if isinstance(value, (list, tuple)):
        return [math.degrees(v) for v in value]
    return math.degrees(value)


def _normalize_quaternions(raw: dict[str, Any], notes: list[str]) -> None:
    for key in QUATERNION_KEYS:
        if key not in raw:
            continue
        try:
            q = np.asarray(raw[key], dtype=float)
        except (TypeError, ValueError):
            continue
        norm = float(np.linalg.norm(q))
        if q.shape == (4,) and np.isfinite(norm) and norm > 0 and abs(norm - 1.0) > 1e-6:
            note = f"{key} had norm {norm:.6g}; normalized to unit length"
            logger.warning(note)
            notes.append(note)


def _location(error: dict, section: str) -> str:
    loc = [str(part) for part in error.get("loc", ())]
    if loc:
        return loc[0]
    message = error.get("msg", "")
    named = [key for key in sorted(VALID_KEYS) if re.search(rf"\b{key}\b", message)]
    return ", ".join(named) if named else section


def _validated(model, section: str, values: dict[str, Any]):
    try:
        return model(**values)
    except ValidationError as exc:
        first = exc.errors()[0]
        key = _location(first, section)
        raise ConfigError(f"invalid value for {key}: {first['msg']}", key=key) from exc


def config_from_mapping(raw: dict[str, Any]) -> ProblemConfig:
    """Build a validated ProblemConfig from a flat mapping in file units (degrees)."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a single JSON object")
    for key in raw:
        if key not in VALID_KEYS:
            hint = suggest_key(key)
            suffix = f"; did you mean '{hint}'?" if hint else ""
            raise ConfigError(f"unknown configuration key '{key}'{suffix}", key=key)

    notes: list[str] = []
    _normalize_quaternions(raw, notes)
    values = {}
    for key, value in raw.items():
        try:
            values[key] = _to_radians(value) if key in ANGLE_KEYS else value
        except TypeError as exc:
            raise ConfigError(f"invalid value for {key}: expected a number or list of numbers", key=key) from exc

    vehicle = _validated(VehicleParams, "vehicle", {k: v for k, v in values.items() if k in VEHICLE_KEYS})
    boundary = _validated(BoundarySet, "boundary", {k: v for k, v in values.items() if k in BOUNDARY_KEYS})
    scp = _validated(ScpConfig, "scp", {k: v for k, v in values.items() if k in SCP_KEYS})
    top = {k: v for k, v in values.items() if k in TOP_KEYS}
    try:
        return ProblemConfig(vehicle=vehicle, boundary=boundary, scp=scp, notes=notes, **top)
    except ValidationError as exc:
        first = exc.errors()[0]
        key = _location(first, "output_dir")
        raise ConfigError(f"invalid value for {key}: {first['msg']}", key=key) from exc


def load_config(path) -> ProblemConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc.msg} at line {exc.lineno}, column {exc.colno}") from exc
    config = config_from_mapping(raw)
    logger.info("loaded %s (K=%d, %d notes)", path, config.scp.K, len(config.notes))
    return config


def config_to_mapping(config: ProblemConfig) -> dict[str, Any]:
    """Flat mapping in file units, the inverse of config_from_mapping."""
    flat: dict[str, Any] = {}
    for section in (config.vehicle, config.boundary, config.scp):
        for key, value in section.model_dump().items():
            value = list(value) if isinstance(value, tuple) else value
            flat[key] = _to_degrees(value) if key in ANGLE_KEYS else value
    flat["output_dir"] = config.output_dir
    return flat
