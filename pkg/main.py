import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from cli.commands import EXIT_INVALID, EXIT_OK, cmd_check, cmd_export_plots, cmd_run
from core.errors import ScenarioError, TraceFormatError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="formation-guard",
                                     description="UAV formation simulation with observer-based attack isolation")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="simulate a scenario and write its trace")
    run_p.add_argument("scenario", type=Path)
    run_p.add_argument("--out", type=Path, required=True, help="output directory")
    run_p.add_argument("--seed", type=int, help="override sim.seed")
    run_p.add_argument("--dt", type=float, help="override sim.dt")
    run_p.add_argument("--no-removal", action="store_true", help="never remove a node")

    check_p = sub.add_parser("check", help="report connectivity, spectra and observer certificates")
    check_p.add_argument("scenario", type=Path)

    export_p = sub.add_parser("export-plots", help="write plot data and figures from a trace")
    export_p.add_argument("trace", type=Path)
    export_p.add_argument("--out", type=Path, required=True)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    if args.command == "run":
        return cmd_run(args.scenario, args.out, args.seed, args.dt, args.no_removal)
    if args.command == "check":
        try:
            lines = cmd_check(args.scenario)
        except ScenarioError as exc:
            logging.getLogger("main").error("Invalid scenario %s: %s", args.scenario, exc)
            return EXIT_INVALID
        print("\n".join(lines))
        return EXIT_OK
    try:
        files = cmd_export_plots(args.trace, args.out)
    except TraceFormatError as exc:
        logging.getLogger("main").error("%s", exc)
        return EXIT_INVALID
    for path in files:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
