"""Command-line front end: run cases, inspect meshes, render reports."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .cases import MODES, load_config, run_case
from .errors import ConfigurationError, HybridflowError
from .fem import mesh_info, read_mesh

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hybridflow",
        description="Coupled vortex-particle / finite-element flow solver.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a configured case")
    run_p.add_argument("config", type=Path, help="key=value config file")
    run_p.add_argument("--mode", choices=MODES,
                       help="override the solver mode")
    run_p.add_argument("--t-end", type=float, help="override the end time")
    run_p.add_argument("--out", help="override the output directory")
    run_p.add_argument("--resolution-scale", type=float, default=1.0,
                       metavar="S",
                       help="coarsen h, the auto mesh, and both time "
                            "steps by S for desk-scale runs")
    run_p.add_argument("--quiet", action="store_true",
                       help="suppress progress lines")

    mesh_p = sub.add_parser("mesh-info", help="print mesh statistics")
    mesh_p.add_argument("mesh", type=Path)

    verify_p = sub.add_parser("verify", help="run the test suites")
    verify_p.add_argument("suite", choices=("properties", "acceptance",
                                            "all"))

    report_p = sub.add_parser("report",
                              help="render figures from a run directory")
    report_p.add_argument("out_dir", type=Path)
    return parser


def _cmd_run(args) -> int:
    overrides = {}
    if args.mode:
        overrides["mode"] = args.mode
    if args.t_end is not None:
        overrides["t_end"] = args.t_end
    if args.out:
        overrides["out_dir"] = args.out
    cfg = load_config(args.config, scale=args.resolution_scale,
                      overrides=overrides)
    log = None if args.quiet else lambda msg: print(msg, flush=True)
    records = run_case(cfg, log=log)
    print(f"wrote {len(records)} records to "
          f"{Path(cfg.out_dir) / 'diagnostics.csv'}")
    return EXIT_OK


def _cmd_mesh_info(args) -> int:
    for key, value in mesh_info(read_mesh(args.mesh)).items():
        print(f"{key} = {value}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    try:
        import pytest
    except ImportError:
        print("error: pytest is required for 'verify' "
              "(pip install pytest)", file=sys.stderr)
        return EXIT_CONFIG
    tests = Path(__file__).resolve().parents[2] / "tests"
    if not tests.is_dir():
        print("error: test suite not found; 'verify' needs a source "
              "checkout", file=sys.stderr)
        return EXIT_CONFIG
    acceptance = tests / "test_acceptance.py"
    if args.suite == "acceptance":
        target = [str(acceptance)]
    elif args.suite == "properties":
        target = [str(tests), f"--ignore={acceptance}"]
    else:
        target = [str(tests)]
    return EXIT_OK if pytest.main(target + ["-v"]) == 0 else EXIT_NUMERICAL


def _cmd_report(args) -> int:
    from .report import render_report

    for path in render_report(args.out_dir):
        print(path)
    return EXIT_OK


_COMMANDS = {
    "run": _cmd_run,
    "mesh-info": _cmd_mesh_info,
    "verify": _cmd_verify,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigurationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HybridflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
