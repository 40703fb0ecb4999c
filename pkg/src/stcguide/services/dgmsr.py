"""Generalized-mean smooth robustness and the state-triggered residuals.

The two means are evaluated through their excess over ``c`` in log space, so
the difference of square roots in the robustness functions keeps an exact sign
even when the excess is many orders of magnitude below ``c``.
"""

import math
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.special import expit, logsumexp

from stcguide.errors import DomainError, StructureError

# smallest positive double; stands in for a strictly signed result that underflows
_TINY = float(np.finfo(float).smallest_subnormal)


class GmsrParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    c: float = Field(1e-4, gt=0)
    p: int = Field(1, ge=1)
    w: Optional[Tuple[int, ...]] = None

    @field_validator("w")
    @classmethod
    def _weights_at_least_one(cls, value):
        if value is not None and any(int(v) < 1 for v in value):
            raise ValueError("every weight must be >= 1")
        return value

    def weights(self, n: int) -> np.ndarray:
        if self.w is None:
            return np.ones(n)
        if len(self.w) != n:
            raise StructureError(f"{len(self.w)} weights given for arity {n}")
        return np.asarray(self.w, dtype=float)


DEFAULT_PARAMS = GmsrParams()


class FormulaNode(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["predicate", "conjunction", "disjunction", "negation", "implication"]
    children: List["FormulaNode"] = []
    predicate_index: Optional[int] = None

    @classmethod
    def predicate(cls, index: int) -> "FormulaNode":
        return cls(kind="predicate", predicate_index=index)

    @classmethod
    def conj(cls, *children: "FormulaNode") -> "FormulaNode":
        return cls(kind="conjunction", children=list(children))

    @classmethod
    def disj(cls, *children: "FormulaNode") -> "FormulaNode":
        return cls(kind="disjunction", children=list(children))

    @classmethod
    def neg(cls, child: "FormulaNode") -> "FormulaNode":
        return cls(kind="negation", children=[child])

    @classmethod
    def implies(cls, antecedent: "FormulaNode", consequent: "FormulaNode") -> "FormulaNode":
        return cls(kind="implication", children=[antecedent, consequent])


FormulaNode.model_rebuild()


def _vector(values, nonnegative: bool = False) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise StructureError(f"expected a non-empty vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError("non-finite input")
    if nonnegative and np.any(arr < 0):
        raise DomainError("mean arguments must be nonnegative")
    return arr


def _zero_excess(log_z: np.ndarray, w: np.ndarray, c: float) -> tuple[float, float]:
    """M0(z) - c for strictly positive z given as logs; also returns log(prod / c^W)."""
    total = w.sum()
    log_ratio = float(np.dot(w, log_z) - total * math.log(c))
    return c * float(np.expm1(np.logaddexp(0.0, log_ratio) / total)), log_ratio


def _p_excess(log_z: np.ndarray, w_sub: np.ndarray, total: float, c: float, p: int) -> float:
    """Mp(z) - c where only the entries in log_z are nonzero."""
    log_s = logsumexp(p * log_z, b=w_sub) - math.log(total)
    log_ratio = log_s - p * math.log(c)
    return c * float(np.expm1(np.logaddexp(0.0, log_ratio) / p))


def gmean_zero(z: Sequence[float], params: GmsrParams = DEFAULT_PARAMS) -> float:
    z = _vector(z, nonnegative=True)
    w = params.weights(z.size)
    if np.any(z == 0):
        return params.c
    excess, _ = _zero_excess(np.log(z), w, params.c)
    return params.c + excess


def gmean_p(z: Sequence[float], params: GmsrParams = DEFAULT_PARAMS) -> float:
    z = _vector(z, nonnegative=True)
    w = params.weights(z.size)
    nonzero = z > 0
    if not nonzero.any():
        return params.c
    return params.c + _p_excess(np.log(z[nonzero]), w[nonzero], w.sum(), params.c, params.p)


def conj_robustness(y: Sequence[float], params: GmsrParams = DEFAULT_PARAMS) -> float:
    y = _vector(y)
    w = params.weights(y.size)
    c = params.c
    negative = y < 0
    if negative.any():
        d = _p_excess(2.0 * np.log(-y[negative]), w[negative], w.sum(), c, params.p)
        h = -d / (math.sqrt(c) + math.sqrt(c + d))
        return h if h != 0.0 else -_TINY
    if np.any(y == 0):
        return 0.0
    a, _ = _zero_excess(2.0 * np.log(y), w, c)
    h = a / (math.sqrt(c + a) + math.sqrt(c))
    return h if h != 0.0 else _TINY


def disj_robustness(y: Sequence[float], params: GmsrParams = DEFAULT_PARAMS) -> float:
    return -conj_robustness(-_vector(y), params)


def conj_robustness_gradient(y: Sequence[float], params: GmsrParams = DEFAULT_PARAMS) -> np.ndarray:
    y = _vector(y)
    w = params.weights(y.size)
    total = w.sum()
    c, p = params.c, params.p
    grad = np.zeros_like(y)
    if np.all(y > 0):
        a, log_ratio = _zero_excess(2.0 * np.log(y), w, c)
        grad = math.sqrt(c + a) * w * expit(log_ratio) / (total * y)
    negative = y < 0
    if negative.any():
        mag = -y[negative]
        s = float(np.dot(w[negative], mag ** (2 * p))) / total
        d = _p_excess(2.0 * np.log(mag), w[negative], total, c, p)
        grad[negative] = math.sqrt(c + d) * w[negative] * mag ** (2 * p - 1) / (total * (c**p + s))
    return grad


def disj_robustness_gradient(y: Sequence[float], params: GmsrParams = DEFAULT_PARAMS) -> np.ndarray:
    return conj_robustness_gradient(-_vector(y), params)


def _check_node(node: FormulaNode) -> None:
    n = len(node.children)
    if node.kind == "predicate":
        if n or node.predicate_index is None:
            raise StructureError("predicate needs an index and no children")
    elif node.kind == "negation" and n != 1:
        raise StructureError(f"negation needs 1 child, got {n}")
    elif node.kind == "implication" and n != 2:
        raise StructureError(f"implication needs 2 children, got {n}")
    elif node.kind in ("conjunction", "disjunction") and n < 2:
        raise StructureError(f"{node.kind} needs at least 2 children, got {n}")


def _predicate_value(node: FormulaNode, values: np.ndarray) -> float:
    idx = node.predicate_index
    if not 0 <= idx < values.size:
        raise StructureError(f"predicate index {idx} out of range for {values.size} values")
    return float(values[idx])


def eval_formula(node: FormulaNode, values: Sequence[float], params: GmsrParams = DEFAULT_PARAMS) -> float:
    values = np.asarray(values, dtype=float)
    _check_node(node)
    if node.kind == "predicate":
        return _predicate_value(node, values)
    if node.kind == "negation":
        return -eval_formula(node.children[0], values, params)
    if node.kind == "implication":
        # a -> b is rewritten as (not a) or b
        a = eval_formula(node.children[0], values, params)
        b = eval_formula(node.children[1], values, params)
        return disj_robustness([-a, b], params)
    inner = [eval_formula(child, values, params) for child in node.children]
    if node.kind == "conjunction":
        return conj_robustness(inner, params)
    return disj_robustness(inner, params)


def eval_boolean(node: FormulaNode, values: Sequence[float]) -> bool:
    """Boolean semantics of the same tree, predicate i true iff values[i] >= 0."""
    values = np.asarray(values, dtype=float)
    _check_node(node)
    if node.kind == "predicate":
        return _predicate_value(node, values) >= 0
    if node.kind == "negation":
        return not eval_boolean(node.children[0], values)
    if node.kind == "implication":
        return (not eval_boolean(node.children[0], values)) or eval_boolean(node.children[1], values)
    inner = [eval_boolean(child, values) for child in node.children]
    return all(inner) if node.kind == "conjunction" else any(inner)


def formula_residual(node: FormulaNode, values: Sequence[float]) -> float:
    """Nonnegative residual of the tree, zero exactly where ``eval_boolean`` is true.

    A predicate contributes ``max(0, -y)**2``, a conjunction sums its children and
    a disjunction multiplies them. Negation flips the predicate hinge to
    ``max(0, y)**2`` and swaps sum and product below it; an implication is
    ``(not a) or b``. A negated predicate at exactly zero has no residual. Deep
    disjunctions of small residuals can underflow to zero.
    """
    return _residual(node, np.asarray(values, dtype=float), True)


def _residual(node: FormulaNode, values: np.ndarray, positive: bool) -> float:
    _check_node(node)
    if node.kind == "predicate":
        y = _predicate_value(node, values)
        return max(0.0, -y if positive else y) ** 2
    if node.kind == "negation":
        return _residual(node.children[0], values, not positive)
    if node.kind == "implication":
        antecedent, consequent = node.children
        parts = [_residual(antecedent, values, not positive), _residual(consequent, values, positive)]
        disjunctive = positive
    else:
        parts = [_residual(child, values, positive) for child in node.children]
        disjunctive = (node.kind == "disjunction") == positive
    return float(np.prod(parts)) if disjunctive else float(sum(parts))


def _residual_inputs(trig, stc) -> tuple[np.ndarray, np.ndarray]:
    trig = np.asarray(trig, dtype=float)
    stc = np.asarray(stc, dtype=float)
    if trig.shape != (4,) or stc.shape != (10,):
        raise StructureError(f"expected 4 trigger and 10 constraint values, got {trig.shape} and {stc.shape}")
    return trig, stc


def stc_residual(trig: Sequence[float], stc: Sequence[float], trigger_margin: float = 0.0) -> np.ndarray:
    """Squared-hinge residuals of the four state-triggered implications.

    Components 1-3 are triggered by ``trig < 0`` and component 4 by
    ``trig_3 > 0 or trig_4 > 0``. A positive ``trigger_margin`` widens every
    activation region by that amount.
    """
    trig, stc = _residual_inputs(trig, stc)
    active = np.maximum(trigger_margin - trig, 0.0) ** 2
    inactive = np.maximum(trig + trigger_margin, 0.0) ** 2
    viol = np.maximum(stc, 0.0) ** 2
    return np.array([
        active[0] * viol[0:5].sum(),
        active[1] * viol[5],
        active[2] * active[3] * (viol[6] + viol[7]),
        (inactive[2] + inactive[3]) * (viol[8] + viol[9]),
    ])


def stc_residual_gradient(
    trig: Sequence[float],
    stc: Sequence[float],
    d_trig: np.ndarray,
    d_stc: np.ndarray,
    trigger_margin: float = 0.0,
) -> np.ndarray:
    trig, stc = _residual_inputs(trig, stc)
    d_trig = np.asarray(d_trig, dtype=float)
    d_stc = np.asarray(d_stc, dtype=float)
    if d_trig.ndim != 2 or d_trig.shape[0] != 4 or d_stc.shape != (10, d_trig.shape[1]):
        raise StructureError(f"inner gradients have shapes {d_trig.shape} and {d_stc.shape}")

    act = np.maximum(trigger_margin - trig, 0.0)
    inact = np.maximum(trig + trigger_margin, 0.0)
    pos = np.maximum(stc, 0.0)
    a, da = act**2, -2.0 * act
    b, db = inact**2, 2.0 * inact
    v, dv = pos**2, 2.0 * pos

    grad = np.empty((4, d_trig.shape[1]))
    grad[0] = v[0:5].sum() * da[0] * d_trig[0] + a[0] * (dv[0:5] @ d_stc[0:5])
    grad[1] = v[5] * da[1] * d_trig[1] + a[1] * dv[5] * d_stc[5]
    grad[2] = (
        (v[6] + v[7]) * (da[2] * a[3] * d_trig[2] + a[2] * da[3] * d_trig[3])
        + a[2] * a[3] * (dv[6] * d_stc[6] + dv[7] * d_stc[7])
    )
    grad[3] = (
        (v[8] + v[9]) * (db[2] * d_trig[2] + db[3] * d_trig[3])
        + (b[2] + b[3]) * (dv[8] * d_stc[8] + dv[9] * d_stc[9])
    )
    return grad
