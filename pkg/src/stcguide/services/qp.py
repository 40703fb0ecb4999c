"""Prox-linear subproblem assembly and an embedded ADMM quadratic-program solver.

Canonical form: minimize 1/2 x'Px + q'x subject to l <= Ax <= u. The solver
runs operator splitting on a Ruiz-equilibrated copy of the problem with a
quasi-definite KKT system, over-relaxation and residual-balancing penalty
updates. Termination uses absolute plus relative tolerances on the unscaled
residuals; it also detects primal infeasibility and polishes the active set.
"""

import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from stcguide.errors import StructureError, SubproblemError
from stcguide.models.problem import ScpConfig
from stcguide.services import vehicle
from stcguide.services.discretization import GridSpec, LinearizedSegment
from stcguide.services.ocp import I_S, I_Y, NUA, NXA, LandingProblem, ScalingMap

logger = logging.getLogger(__name__)

MIN_SCALING = 1e-4
MAX_SCALING = 1e4


class QpStatus(str, Enum):
    SOLVED = "solved"
    SOLVED_INACCURATE = "solved_inaccurate"
    MAX_ITER = "max_iter"
    PRIMAL_INFEASIBLE = "primal_infeasible"

    @property
    def usable(self) -> bool:
        return self in (QpStatus.SOLVED, QpStatus.SOLVED_INACCURATE)


@dataclass(frozen=True)
class SparseQP:
    P: sp.csc_matrix
    q: np.ndarray
    A: sp.csc_matrix
    l: np.ndarray
    u: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        n = self.q.size
        m = self.l.size
        if self.P.shape != (n, n) or self.A.shape != (m, n) or self.u.size != m:
            raise StructureError(f"inconsistent QP shapes P{self.P.shape} A{self.A.shape} q({n}) l({m}) u({self.u.size})")
        if np.any(self.l > self.u):
            raise StructureError("lower bound exceeds upper bound")

    @property
    def n(self) -> int:
        return self.q.size

    @property
    def m(self) -> int:
        return self.l.size

    def objective(self, x) -> float:
        return float(0.5 * x @ (self.P @ x) + self.q @ x + self.offset)


@dataclass
class QpSettings:
    rho: float = 0.1
    rho_eq_scale: float = 1e3
    rho_min: float = 1e-6
    rho_max: float = 1e6
    sigma: float = 1e-6
    alpha: float = 1.6
    eps_prim: float = 1e-8
    eps_dual: float = 1e-8
    eps_rel: float = 1e-8
    eps_prim_inf: float = 1e-9
    # tolerance multiplier under which a capped run is reported as solved_inaccurate
    eps_inaccurate_factor: float = 1e3
    max_iter: int = 200000
    scaling_iter: int = 10
    adaptive_rho_interval: int = 50
    check_interval: int = 25
    polish: bool = True
    polish_threshold: float = 1e-4
    polish_delta: float = 1e-7
    polish_refine_iter: int = 5


@dataclass(frozen=True)
class QpSolution:
    x: np.ndarray
    y: np.ndarray
    status: QpStatus
    prim_res: float
    dual_res: float
    iterations: int
    polished: bool = False
    objective: float = field(default=float("nan"))


def _inf_norm(v) -> float:
    return float(np.max(np.abs(v))) if np.size(v) else 0.0


@dataclass(frozen=True)
class _Residuals:
    prim: float
    dual: float
    prim_scale: float
    dual_scale: float

    def within(self, eps_prim: float, eps_dual: float, eps_rel: float, factor: float = 1.0) -> bool:
        return (self.prim <= factor * (eps_prim + eps_rel * self.prim_scale)
                and self.dual <= factor * (eps_dual + eps_rel * self.dual_scale))

    def converged(self, settings: "QpSettings", factor: float = 1.0) -> bool:
        return self.within(settings.eps_prim, settings.eps_dual, settings.eps_rel, factor)


def _residuals(qp: SparseQP, x, y) -> _Residuals:
    ax = qp.A @ x
    z = np.clip(ax, qp.l, qp.u)
    px, aty = qp.P @ x, qp.A.T @ y
    return _Residuals(
        prim=_inf_norm(ax - z),
        dual=_inf_norm(px + qp.q + aty),
        prim_scale=max(_inf_norm(ax), _inf_norm(z)),
        dual_scale=max(_inf_norm(px), _inf_norm(aty), _inf_norm(qp.q)),
    )


def _col_norms(M) -> np.ndarray:
    if M.shape[0] == 0:
        return np.zeros(M.shape[1])
    return np.asarray(abs(M).max(axis=0).toarray()).ravel()


def _row_norms(M) -> np.ndarray:
    if M.shape[0] == 0:
        return np.zeros(0)
    return np.asarray(abs(M).max(axis=1).toarray()).ravel()


def _limit(norms) -> np.ndarray:
    norms = np.asarray(norms, dtype=float)
    return np.where(norms < MIN_SCALING, 1.0, np.minimum(norms, MAX_SCALING))


@dataclass(frozen=True)
class _Equilibration:
    """x = D x_s and y = E y_s / c for the scaled problem c D P D, c D q, E A D."""

    d: np.ndarray
    e: np.ndarray
    c: float
    scaled: SparseQP

    def to_scaled(self, x, y):
        return x / self.d, self.c * y / self.e

    def from_scaled(self, x_s, y_s, z_s=None):
        x, y = self.d * x_s, self.e * y_s / self.c
        if z_s is None:
            return x, y
        return x, y, z_s / self.e


def equilibrate(qp: SparseQP, iterations: int = 10) -> _Equilibration:
    """Ruiz equilibration of the KKT matrix with cost scaling, in the infinity norm."""
    n, m = qp.n, qp.m
    P, A, q = sp.csc_matrix(qp.P), sp.csc_matrix(qp.A), np.array(qp.q, dtype=float)
    d, e, c = np.ones(n), np.ones(m), 1.0
    for _ in range(iterations):
        d_step = 1.0 / np.sqrt(_limit(np.maximum(_col_norms(P), _col_norms(A))))
        D = sp.diags(d_step)
        P = D @ P @ D
        q = d_step * q
        d *= d_step
        if m:
            e_step = 1.0 / np.sqrt(_limit(_row_norms(A)))
            A = sp.diags(e_step) @ A @ D
            e *= e_step
        p_mean = float(np.mean(_col_norms(P))) if n else 0.0
        c_step = 1.0 / float(_limit([max(p_mean, _inf_norm(q))])[0])
        P = c_step * P
        q = c_step * q
        c *= c_step
    scaled = SparseQP(P=sp.csc_matrix(P), q=q, A=sp.csc_matrix(A), l=e * qp.l, u=e * qp.u)
    return _Equilibration(d=d, e=e, c=c, scaled=scaled)


class _Kkt:
    def __init__(self, qp: SparseQP, settings: QpSettings, rho: float):
        self.qp = qp
        self.settings = settings
        self.set_rho(rho)

    def set_rho(self, rho: float) -> None:
        s = self.settings
        qp = self.qp
        self.rho = rho
        rho_vec = np.full(qp.m, rho)
        rho_vec[qp.l == qp.u] = rho * s.rho_eq_scale
        rho_vec[np.isinf(qp.l) & np.isinf(qp.u)] = s.rho_min
        self.rho_vec = rho_vec
        top = qp.P + s.sigma * sp.eye(qp.n)
        if qp.m:
            kkt = sp.bmat([[top, qp.A.T], [qp.A, -sp.diags(1.0 / rho_vec)]], format="csc")
        else:
            kkt = sp.csc_matrix(top)
        self.lu = spla.splu(kkt)

    def solve(self, rhs):
        return self.lu.solve(rhs)


def _is_primal_infeasible(qp: SparseQP, dy, eps: float) -> bool:
    norm = _inf_norm(dy)
    if norm <= eps:
        return False
    dy = dy / norm
    if _inf_norm(qp.A.T @ dy) >= eps:
        return False
    pos, neg = dy > 0, dy < 0
    if np.any(np.isinf(qp.u[pos])) or np.any(np.isinf(qp.l[neg])):
        return False
    support = qp.u[pos] @ dy[pos] + qp.l[neg] @ dy[neg]
    return bool(support < -eps)


def _polish(qp: SparseQP, x, z, y, settings: QpSettings):
    equality = qp.l == qp.u
    lower = ~equality & np.isfinite(qp.l) & (z - qp.l < -y)
    upper = ~equality & np.isfinite(qp.u) & (qp.u - z < y)
    active = equality | lower | upper
    rows = np.flatnonzero(active)
    bound = np.where(upper, qp.u, qp.l)[rows]
    a_red = qp.A[rows]
    n, k = qp.n, rows.size
    delta = settings.polish_delta

    if k:
        kkt = sp.bmat([[qp.P, a_red.T], [a_red, sp.csc_matrix((k, k))]], format="csc")
        reg = sp.bmat([[qp.P + delta * sp.eye(n), a_red.T], [a_red, -delta * sp.eye(k)]], format="csc")
    else:
        kkt = sp.csc_matrix(qp.P)
        reg = sp.csc_matrix(qp.P + delta * sp.eye(n))
    try:
        lu = spla.splu(reg)
    except RuntimeError:
        return None
    rhs = np.concatenate([-qp.q, bound])
    sol = lu.solve(rhs)
    for _ in range(settings.polish_refine_iter):
        sol = sol + lu.solve(rhs - kkt @ sol)
    if not np.all(np.isfinite(sol)):
        return None

    x_pol = sol[:n]
    y_pol = np.zeros(qp.m)
    y_pol[rows] = sol[n:]
    if np.any(y_pol[lower] > settings.eps_dual) or np.any(y_pol[upper] < -settings.eps_dual):
        return None
    return x_pol, y_pol


def solve_qp(qp: SparseQP, settings: QpSettings | None = None, warm_start=None) -> QpSolution:
    settings = settings or QpSettings()
    scaling = equilibrate(qp, settings.scaling_iter)
    sq = scaling.scaled
    n, m = qp.n, qp.m
    x = np.zeros(n)
    y = np.zeros(m)
    if warm_start is not None:
        x, y = scaling.to_scaled(np.array(warm_start[0], dtype=float), np.array(warm_start[1], dtype=float))
    z = np.clip(sq.A @ x, sq.l, sq.u)
    kkt = _Kkt(sq, settings, settings.rho)
    alpha, sigma = settings.alpha, settings.sigma
    last_active = None
    res = None

    for it in range(1, settings.max_iter + 1):
        x_prev, z_prev, y_prev = x, z, y
        rho_vec = kkt.rho_vec
        sol = kkt.solve(np.concatenate([sigma * x_prev - sq.q, z_prev - y_prev / rho_vec]))
        x_tilde, nu = sol[:n], sol[n:]
        z_tilde = z_prev + (nu - y_prev) / rho_vec
        x = alpha * x_tilde + (1.0 - alpha) * x_prev
        z_relax = alpha * z_tilde + (1.0 - alpha) * z_prev
        z = np.clip(z_relax + y_prev / rho_vec, sq.l, sq.u)
        y = y_prev + rho_vec * (z_relax - z)

        check = it % settings.check_interval == 0 or it == settings.max_iter
        if check:
            x_un, y_un = scaling.from_scaled(x, y)
            res = _residuals(qp, x_un, y_un)
            if res.converged(settings):
                logger.debug("qp solved by ADMM in %d iterations", it)
                return QpSolution(x_un, y_un, QpStatus.SOLVED, res.prim, res.dual, it, objective=qp.objective(x_un))
            if _is_primal_infeasible(qp, scaling.e * (y - y_prev), settings.eps_prim_inf):
                logger.debug("qp primal infeasible after %d iterations", it)
                return QpSolution(x_un, y_un, QpStatus.PRIMAL_INFEASIBLE, res.prim, res.dual, it,
                                  objective=float("nan"))
            near = res.within(settings.polish_threshold, settings.polish_threshold, settings.polish_threshold)
            if settings.polish and near:
                active = tuple(np.flatnonzero((z - sq.l < -y) | (sq.u - z < y)))
                if active != last_active:
                    last_active = active
                    polished = _polish(sq, x, z, y, settings)
                    if polished is not None:
                        x_pol, y_pol = scaling.from_scaled(*polished)
                        res_pol = _residuals(qp, x_pol, y_pol)
                        if res_pol.converged(settings):
                            logger.debug("qp polished after %d iterations", it)
                            return QpSolution(x_pol, y_pol, QpStatus.SOLVED, res_pol.prim, res_pol.dual, it,
                                              polished=True, objective=qp.objective(x_pol))

        if m and it % settings.adaptive_rho_interval == 0:
            ax = sq.A @ x
            prim_admm = _inf_norm(ax - z) / (max(_inf_norm(ax), _inf_norm(z)) + 1e-30)
            dual_admm = _inf_norm(sq.P @ x + sq.q + sq.A.T @ y) / (
                max(_inf_norm(sq.P @ x), _inf_norm(sq.A.T @ y), _inf_norm(sq.q)) + 1e-30)
            ratio = np.sqrt(prim_admm / (dual_admm + 1e-30))
            new_rho = float(np.clip(kkt.rho * ratio, settings.rho_min, settings.rho_max))
            if new_rho > 5.0 * kkt.rho or new_rho < 0.2 * kkt.rho:
                kkt.set_rho(new_rho)

    x_un, y_un = scaling.from_scaled(x, y)
    status = QpStatus.SOLVED_INACCURATE if res.converged(settings, settings.eps_inaccurate_factor) \
        else QpStatus.MAX_ITER
    logger.warning("qp hit max_iter (%d) with residuals %.3e / %.3e: %s",
                   settings.max_iter, res.prim, res.dual, status.value)
    return QpSolution(x_un, y_un, status, res.prim, res.dual, settings.max_iter, objective=qp.objective(x_un))


def solve_qp_by_enumeration(P, q, A, l, u, tol: float = 1e-9) -> np.ndarray:
    """Reference solution of a small dense strictly convex QP by active-set enumeration."""
    P, q, A = np.asarray(P, float), np.asarray(q, float), np.asarray(A, float)
    l, u = np.asarray(l, float), np.asarray(u, float)
    n, m = q.size, l.size
    options = []
    for i in range(m):
        if l[i] == u[i]:
            options.append(("eq",))
        else:
            opts = [None]
            if np.isfinite(l[i]):
                opts.append("lo")
            if np.isfinite(u[i]):
                opts.append("up")
            options.append(tuple(opts))

    for combo in itertools.product(*options):
        rows = [i for i, c in enumerate(combo) if c is not None]
        if len(rows) > n:
            continue
        a_s = A[rows]
        b_s = np.array([u[i] if combo[i] == "up" else l[i] for i in rows])
        kkt = np.block([[P, a_s.T], [a_s, np.zeros((len(rows), len(rows)))]])
        if np.linalg.cond(kkt) > 1e12:
            continue
        sol = np.linalg.solve(kkt, np.concatenate([-q, b_s]))
        x, lam = sol[:n], sol[n:]
        ax = A @ x
        if np.any(ax < l - tol) or np.any(ax > u + tol):
            continue
        signs = [combo[i] for i in rows]
        if any((c == "lo" and lv > tol) or (c == "up" and lv < -tol) for c, lv in zip(signs, lam)):
            continue
        return x
    raise SubproblemError("no KKT point found by enumeration")


@dataclass(frozen=True)
class QpLayout:
    """Index map of the decision vector (x_1..K, u_1..K, nu+_1..K-1, nu-_1..K-1)."""

    K: int

    @property
    def n_x(self) -> int:
        return NXA * self.K

    @property
    def n_u(self) -> int:
        return NUA * self.K

    @property
    def n_nu(self) -> int:
        return NXA * (self.K - 1)

    @property
    def n_var(self) -> int:
        return self.n_x + self.n_u + 2 * self.n_nu

    def x(self, k: int, i: int = 0) -> int:
        return k * NXA + i

    def u(self, k: int, j: int = 0) -> int:
        return self.n_x + k * NUA + j

    def nu_plus(self, k: int, i: int = 0) -> int:
        return self.n_x + self.n_u + k * NXA + i

    def nu_minus(self, k: int, i: int = 0) -> int:
        return self.n_x + self.n_u + self.n_nu + k * NXA + i

    def unpack(self, z):
        z = np.asarray(z, dtype=float)
        xs = z[: self.n_x].reshape(self.K, NXA)
        us = z[self.n_x:self.n_x + self.n_u].reshape(self.K, NUA)
        nu_p = z[self.n_x + self.n_u:self.n_x + self.n_u + self.n_nu].reshape(self.K - 1, NXA)
        nu_m = z[self.n_x + self.n_u + self.n_nu:].reshape(self.K - 1, NXA)
        return xs, us, nu_p, nu_m

    def pack(self, xs, us, nu_p=None, nu_m=None) -> np.ndarray:
        nu_p = np.zeros((self.K - 1, NXA)) if nu_p is None else nu_p
        nu_m = np.zeros((self.K - 1, NXA)) if nu_m is None else nu_m
        return np.concatenate([np.ravel(xs), np.ravel(us), np.ravel(nu_p), np.ravel(nu_m)])


def trapezoid_weights(grid: GridSpec) -> np.ndarray:
    dtau = grid.dtau
    w = np.zeros(grid.K)
    w[:-1] += 0.5 * dtau
    w[1:] += 0.5 * dtau
    return w


class _RowBuilder:
    def __init__(self, n: int):
        self.n = n
        self.rows, self.cols, self.vals = [], [], []
        self.lower, self.upper = [], []

    def add(self, entries, lo: float, hi: float) -> None:
        r = len(self.lower)
        for c, v in entries:
            self.rows.append(r)
            self.cols.append(c)
            self.vals.append(v)
        self.lower.append(lo)
        self.upper.append(hi)

    def matrix(self) -> sp.csc_matrix:
        return sp.csc_matrix((self.vals, (self.rows, self.cols)), shape=(len(self.lower), self.n))


def assemble_subproblem(
    xs_ref,
    us_ref,
    segments: list[LinearizedSegment],
    w_prox: float,
    config: ScpConfig,
    problem: LandingProblem,
    scaling: ScalingMap,
    grid: GridSpec,
) -> SparseQP:
    """Convex subproblem around the scaled reference nodes; segments must be scaled."""
    K = grid.K
    xs_ref = np.asarray(xs_ref, dtype=float)
    us_ref = np.asarray(us_ref, dtype=float)
    if xs_ref.shape != (K, NXA) or us_ref.shape != (K, NUA) or len(segments) != K - 1:
        raise StructureError(f"reference {xs_ref.shape}/{us_ref.shape} with {len(segments)} segments for K={K}")
    for seg in segments:
        mats = (seg.a, seg.b_minus, seg.b_plus, seg.w)
        if not all(np.all(np.isfinite(mat)) for mat in mats):
            raise StructureError(f"segment {seg.index} contains non-finite entries")

    layout = QpLayout(K)
    n = layout.n_var
    inf = np.inf

    # objective
    q = np.zeros(n)
    time_w = trapezoid_weights(grid)
    for k in range(K):
        q[layout.u(k, I_S)] = time_w[k] * scaling.u_scale[I_S]
    q[layout.n_x + layout.n_u:] = config.w_eq_dyn
    z_ref = np.concatenate([xs_ref.ravel(), us_ref.ravel()])
    n_xu = layout.n_x + layout.n_u
    q[:n_xu] -= w_prox * z_ref
    p_diag = np.zeros(n)
    p_diag[:n_xu] = w_prox
    offset = 0.5 * w_prox * float(z_ref @ z_ref) + float(time_w.sum()) * scaling.u_offset[I_S]

    rows = _RowBuilder(n)
    # linearized dynamics with slack split of the defect
    for seg in segments:
        k = seg.index
        for i in range(NXA):
            entries = [(layout.x(k, j), seg.a[i, j]) for j in range(NXA) if seg.a[i, j] != 0.0]
            entries += [(layout.u(k, j), seg.b_minus[i, j]) for j in range(NUA) if seg.b_minus[i, j] != 0.0]
            entries += [(layout.u(k + 1, j), seg.b_plus[i, j]) for j in range(NUA) if seg.b_plus[i, j] != 0.0]
            entries += [(layout.x(k + 1, i), -1.0), (layout.nu_plus(k, i), -1.0), (layout.nu_minus(k, i), 1.0)]
            rows.add(entries, -seg.w[i], -seg.w[i])
    for k in range(K - 1):
        for i in range(NXA):
            rows.add([(layout.nu_plus(k, i), 1.0)], 0.0, inf)
            rows.add([(layout.nu_minus(k, i), 1.0)], 0.0, inf)

    # per-segment growth of the violation accumulator
    for k in range(K - 1):
        rows.add([(layout.x(k + 1, I_Y), 1.0), (layout.x(k, I_Y), -1.0)], -inf, config.eps_licq)

    # dilation floor
    s_floor = (config.s_min - scaling.u_offset[I_S]) / scaling.u_scale[I_S]
    for k in range(K):
        rows.add([(layout.u(k, I_S), 1.0)], s_floor, inf)

    # boundary conditions
    x_init = np.concatenate([problem.boundary.initial_state(), [0.0, 0.0]])
    x_init_s = scaling.scale_state(x_init)
    for i in range(NXA):
        rows.add([(layout.x(0, i), 1.0)], x_init_s[i], x_init_s[i])
    x_final_s = scaling.scale_state(np.concatenate([problem.boundary.final_state(), [0.0, 0.0]]))
    rows.add([(layout.x(K - 1, vehicle.I_M), 1.0)], x_final_s[vehicle.I_M], inf)
    for i in range(1, vehicle.NX):
        rows.add([(layout.x(K - 1, i), 1.0)], x_final_s[i], x_final_s[i])

    # node-wise gimbal and boresight boxes
    p = problem.vehicle
    limits = (p.delta_e_max, p.phi_e_max, p.delta_b_max, p.phi_b_max)
    for k in range(K):
        for j, limit in enumerate(limits, start=1):
            lo = (-limit - scaling.u_offset[j]) / scaling.u_scale[j]
            hi = (limit - scaling.u_offset[j]) / scaling.u_scale[j]
            rows.add([(layout.u(k, j), 1.0)], lo, hi)

    return SparseQP(
        P=sp.diags(p_diag, format="csc"),
        q=q,
        A=rows.matrix(),
        l=np.asarray(rows.lower, dtype=float),
        u=np.asarray(rows.upper, dtype=float),
        offset=offset,
    )


def dump_triplets(qp: SparseQP, path) -> Path:
    """Write P and A as (i, j, value) triplets followed by the q, l, u vectors."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# P {qp.n} {qp.n}"]
    p = qp.P.tocoo()
    lines += [f"{i} {j} {v:.17g}" for i, j, v in zip(p.row, p.col, p.data)]
    lines.append(f"# A {qp.m} {qp.n}")
    a = qp.A.tocoo()
    lines += [f"{i} {j} {v:.17g}" for i, j, v in zip(a.row, a.col, a.data)]
    for name, vec in (("q", qp.q), ("l", qp.l), ("u", qp.u)):
        lines.append(f"# {name} {vec.size}")
        lines += [f"{v:.17g}" for v in vec]
    lines.append(f"# offset {qp.offset:.17g}")
    path.write_text("\n".join(lines) + "\n")
    return path
