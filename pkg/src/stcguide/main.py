import argparse
import sys
from pathlib import Path

from stcguide.errors import ConfigError
from stcguide.routes import commands
from stcguide.services.config_loader import load_config
from stcguide.settings import RuntimeSettings


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stcguide",
        description="6-DoF powered-descent guidance with continuous-time state-triggered constraints",
    )
    parser.add_argument("--log-level", default=None, help="Override STCGUIDE_LOG_LEVEL (DEBUG, INFO, WARNING)")
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="Solve a landing problem and certify the result")
    solve.add_argument("config", help="Path to the flat JSON problem configuration")
    solve.add_argument("--out", default=None, help="Output directory (defaults to output_dir in the config)")
    solve.add_argument("--check-only", action="store_true", help="Re-certify the existing report in the output directory")
    solve.add_argument("--dump-qp", default=None, metavar="DIR", help="Write the first convex subproblem as triplets")

    certify = sub.add_parser("certify", help="Re-certify the trajectory embedded in a report.json")
    certify.add_argument("report", help="Path to report.json")

    selftest = sub.add_parser("selftest", help="Run the gradient, D-GMSR and QP-oracle property suites")
    selftest.add_argument("--seed", type=int, default=0, help="Base seed for the random cases")
    selftest.add_argument("--inject-jacobian-fault", action="store_true",
                          help="Perturb one dynamics Jacobian entry to check that the gradient suite catches it")
    selftest.add_argument("--samples", type=int, default=10_000,
                          help="Random predicate vectors and operator pairs per D-GMSR tree shape")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    settings = RuntimeSettings(log_level=args.log_level)
    settings.configure_logging()

    if args.command == "selftest":
        return commands.run_selftest(args.seed, args.inject_jacobian_fault, args.samples)
    if args.command == "certify":
        return commands.run_certify(args.report)

    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return commands.EXIT_FAILURE
    out_dir = Path(args.out or config.output_dir)
    if args.check_only:
        return commands.run_certify(out_dir / "report.json")
    return commands.run_solve(config, out_dir, workers=settings.workers, dump_qp_dir=args.dump_qp)


def _cli():
    sys.exit(main())


if __name__ == "__main__":
    _cli()
