"""ADMM-INVERT command line.

    python app.py mesh   --config configs/eit_norm.ini --out outputs/mesh
    python app.py synth  --config configs/qpact.ini --out outputs/synth
    python app.py invert --config configs/eit_norm.ini --set run.method=monolithic
    python app.py study  --config configs/eit_scaling_q.ini --out outputs/scaling_q
    python app.py check

Exit codes: 0 success, 1 invalid usage or configuration, 2 solver failure or a
failed self-check.
"""
import argparse
import logging
import os
import sys

from src.errors import AdmmInvertError, SolverError
from src.experiments.config_loader import load_config
from src.experiments.self_check import results_frame, run_self_checks
from src.experiments.studies import build_mesh, run_study, synthesize_to_directory
from src.fem.mesh import write_mesh
from src.utils import ensure_directories, setup_logging

logger = logging.getLogger("admm_invert")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SOLVER = 2


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that exits with status 1 on usage errors"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    common = CliParser(add_help=False)
    common.add_argument("--config", help="experiment INI file (defaults only when omitted)")
    common.add_argument("--out", help="output directory (overrides run.output_dir)")
    common.add_argument("--seed", type=int, help="random seed (overrides run.seed)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value; repeatable")
    common.add_argument("--verbose", action="store_true", help="debug logging")

    parser = CliParser(prog="admm-invert", description="Consensus ADMM for multi-PDE inverse problems")
    commands = parser.add_subparsers(dest="command", metavar="COMMAND")
    commands.required = True
    commands.add_parser("mesh", parents=[common], help="write the configured mesh")
    commands.add_parser("synth", parents=[common], help="write the phantom and noisy data")
    commands.add_parser("invert", parents=[common], help="run one ADMM or monolithic reconstruction")
    commands.add_parser("study", parents=[common], help="run the configured study")
    commands.add_parser("check", parents=[common], help="run finite-difference and oracle self-checks")
    return parser


def _load(args):
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.out:
        overrides.append(f"run.output_dir={args.out}")
    return load_config(args.config, overrides)


def _run(args):
    if args.command == "check":
        seed = args.seed if args.seed is not None else 0
        results = run_self_checks(seed)
        print(results_frame(results).to_string(index=False))
        failed = [r for r in results if not r.passed]
        print(f"{len(results) - len(failed)} of {len(results)} checks passed")
        return EXIT_SOLVER if failed else EXIT_OK

    config = _load(args)
    if args.command == "mesh":
        mesh = build_mesh(config)
        ensure_directories(config.output_dir)
        path = write_mesh(mesh, os.path.join(config.output_dir, "mesh.txt"))
        logger.info("mesh with %d vertices written to %s", mesh.n_vertices, path)
        return EXIT_OK
    if args.command == "synth":
        synthesize_to_directory(config)
        return EXIT_OK

    kind = "single" if args.command == "invert" else None
    result = run_study(config, kind=kind)
    if result.failed and len(result.failed) == len(result.records):
        logger.error("every run of the %s study failed", result.kind)
        return EXIT_SOLVER
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    setup_logging(logging.DEBUG if args.verbose else logging.INFO)
    try:
        return _run(args)
    except SolverError as exc:
        logger.error("%s", exc)
        return EXIT_SOLVER
    except AdmmInvertError as exc:
        logger.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
