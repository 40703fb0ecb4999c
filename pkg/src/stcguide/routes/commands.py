"""Command handlers behind the ``stcguide`` entry point.

Every handler returns the process exit code: 0 success, 1 hard failure,
2 solved but not certified feasible.
"""

import logging
import time
from pathlib import Path

from stcguide.errors import ConfigError, GuidanceError
from stcguide.models.problem import ProblemConfig
from stcguide.models.report import FailureInfo, SolveReport
from stcguide.services import artifacts, scp
from stcguide.services.certify import certify_nodes
from stcguide.services.config_loader import config_from_mapping, config_to_mapping
from stcguide.services.ocp import LandingProblem, make_scaling
from stcguide.services.selftest import run_suites

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INFEASIBLE = 2


def _exit_code(status: str, certified: bool) -> int:
    if status == scp.ScpStatus.SUBPROBLEM_FAILURE.value:
        return EXIT_FAILURE
    if status == scp.ScpStatus.CONVERGED.value and certified:
        return EXIT_OK
    return EXIT_INFEASIBLE


def _finish(report: SolveReport, out_dir: Path) -> int:
    artifacts.write_report(report, out_dir)
    for line in artifacts.summary_lines(report):
        print(line)
    return report.exit_code


def run_solve(config: ProblemConfig, out_dir=None, workers: int = 1, dump_qp_dir=None) -> int:
    out_dir = Path(out_dir or config.output_dir)
    echo = config_to_mapping(config)
    started = time.perf_counter()
    try:
        result = scp.solve(config, workers=workers, dump_qp_dir=dump_qp_dir)
    except GuidanceError as exc:
        logger.error("solve failed: %s", exc)
        report = SolveReport(
            status=scp.ScpStatus.SUBPROBLEM_FAILURE.value, certified=False, exit_code=EXIT_FAILURE,
            failure=FailureInfo(kind=type(exc).__name__, reason=str(exc)),
            config=echo, notes=list(config.notes),
            timing={"solve_s": time.perf_counter() - started},
        )
        return _finish(report, out_dir)
    solved = time.perf_counter()

    failure = None
    if result.status == scp.ScpStatus.SUBPROBLEM_FAILURE:
        failure = FailureInfo(kind="subproblem", reason=result.failure_reason or "subproblem failure")
    elif result.status == scp.ScpStatus.MAX_ITER:
        last = result.history[-1] if result.history else None
        defect = "n/a" if last is None or last.max_defect is None else f"{last.max_defect:.3e}"
        failure = FailureInfo(kind="not_converged",
                              reason=f"max_iter reached; last candidate max defect {defect}")

    cert, table = None, None
    cfg = config.scp
    try:
        trajectory, cert = certify_nodes(result.xs_phys, result.us_phys, result.grid.tau, result.problem,
                                         cfg.cert_points, cfg.cert_tol, cfg.crossing_tol,
                                         state_scale=result.scaling.x_scale)
        table = artifacts.dense_table(trajectory, result.problem, cfg.dense_rate)
    except GuidanceError as exc:
        logger.error("certification failed: %s", exc)
        failure = failure or FailureInfo(kind="certification", reason=str(exc))
    if cert is not None and not cert.passed and failure is None:
        failed = [ch.name for ch in cert.channels if not ch.passed]
        failure = FailureInfo(kind="certification",
                              reason=f"channels {failed} or endpoint error {cert.endpoint_error:.2e} out of tolerance")

    certified = bool(cert is not None and cert.passed)
    report = SolveReport(
        status=result.status.value,
        certified=certified,
        exit_code=_exit_code(result.status.value, certified),
        final_time=result.final_time,
        accepted_iterations=result.accepted_iterations,
        failure=failure,
        nodes=artifacts.nodes_to_report(result.xs, result.us, result.scaling, result.grid.tau),
        dense_columns=list(artifacts.TRAJECTORY_COLUMNS) if table is not None else [],
        dense=table.tolist() if table is not None else [],
        history=result.history,
        certification=cert,
        config=echo,
        notes=list(config.notes),
        timing={"solve_s": solved - started, "certify_s": time.perf_counter() - solved},
    )
    if table is not None:
        artifacts.write_trajectory_csv(table, out_dir / "trajectory.csv")
        artifacts.write_series(table, result.problem, out_dir)
    return _finish(report, out_dir)


def recertify(report: SolveReport) -> SolveReport:
    """Certify the embedded node trajectory again, without solving."""
    if report.nodes is None:
        raise ConfigError("report has no node trajectory to certify")
    config = config_from_mapping(report.config)
    problem = LandingProblem.from_config(config)
    scaling = make_scaling(problem, config.scp.tf_guess, config.scp.K)
    xs, us, tau = artifacts.nodes_from_report(report.nodes, scaling)
    cfg = config.scp
    _, cert = certify_nodes(xs, us, tau, problem, cfg.cert_points, cfg.cert_tol, cfg.crossing_tol,
                            state_scale=scaling.x_scale)
    certified = bool(cert.passed)
    return report.model_copy(update={
        "certification": cert,
        "certified": certified,
        "exit_code": _exit_code(report.status, certified),
    })


def run_certify(report_path) -> int:
    report_path = Path(report_path)
    try:
        report = artifacts.load_report(report_path)
        updated = recertify(report)
    except (OSError, ValueError, GuidanceError) as exc:
        logger.error("cannot certify %s: %s", report_path, exc)
        return EXIT_FAILURE
    _finish(updated, report_path.parent)
    if report.certification is not None and report.certification.passed != updated.certification.passed:
        logger.warning("re-certification changed the verdict for %s", report_path)
    return EXIT_OK if updated.certified else EXIT_INFEASIBLE


def run_selftest(seed: int = 0, inject_fault: bool = False, samples: int = 10_000) -> int:
    suites = run_suites(seed, inject_fault, samples=samples)
    print(f"{'suite':<12} {'cases':>7} {'result':>7}")
    for suite in suites:
        print(f"{suite.name:<12} {suite.cases:>7} {'PASS' if suite.passed else 'FAIL':>7}")
    for suite in suites:
        for failure in suite.failures:
            print(f"  {suite.name}: {failure}")
    return EXIT_OK if all(s.passed for s in suites) else EXIT_FAILURE

