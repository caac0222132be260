"""
Command-line interface
Subcommands: spectrum, entanglement, bell, validate-screens, reproduce
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from config import settings
from backend.adaptive_optics import Correction
from backend.entanglement import EncodingSubspace
from backend.errors import ConfigurationError, SimulationError
from backend.experiment import ExperimentConfig, load_config
from backend.harness import FIGURES, SCALES, reproduce_figure, run_sweep, validate_screens
from backend.results_writer import ResultsWriter

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_SIMULATION_ERROR = 1
EXIT_CONFIGURATION_ERROR = 2


def _float_list(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def _int_list(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


def _corrections(text: str) -> List[Correction]:
    try:
        return [Correction.parse(part) for part in text.split(",") if part.strip()]
    except ConfigurationError as e:
        raise argparse.ArgumentTypeError(str(e))


def _subspace(text: str) -> EncodingSubspace:
    try:
        return EncodingSubspace.parse(text)
    except ConfigurationError as e:
        raise argparse.ArgumentTypeError(str(e))


def _common_options(parser: argparse.ArgumentParser):
    parser.add_argument("--config", type=Path, help="JSON experiment document")
    parser.add_argument("--seed", type=int, help="Master seed")
    parser.add_argument("--realizations", type=int, help="Turbulence realizations per point")
    parser.add_argument("--ao", type=_corrections, help="Correction modes, e.g. none,tiptilt,ideal")
    parser.add_argument("--beacon-w0", type=float, help="Beacon waist [m]")
    parser.add_argument("--grid-n", type=int, help="Samples per grid axis")
    parser.add_argument("--grid-extent", type=float, help="Grid side length [m]")
    parser.add_argument("--W", dest="strengths", type=_float_list, help="Turbulence strengths, comma-separated")
    parser.add_argument("--t", type=float, help="Renormalized propagation distance z/z_R")
    parser.add_argument("--n-steps", type=int, help="Force the number of phase screens")
    parser.add_argument("--out", type=Path, help="Output folder")
    parser.add_argument("--format", dest="formats", type=lambda s: [p for p in s.split(",") if p],
                        help="Output formats: csv, json or csv,json")
    parser.add_argument("--workers", type=int, help="Parallel worker processes")
    parser.add_argument("--name", help="Experiment name used in output file names")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true", help="Debug logging")
    verbosity.add_argument("--quiet", action="store_true", help="Warnings only, no progress bars")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oam_link_sim",
        description=f"{settings.APP_NAME} {settings.APP_VERSION}: entangled OAM photons through turbulence",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    spectrum = subparsers.add_parser("spectrum", help="Spiral spectra P(l0 -> l)")
    _common_options(spectrum)
    spectrum.add_argument("--l0", type=_int_list, help="Input modes, comma-separated")
    spectrum.add_argument("--half-window", type=int, help="Output window half width")

    for name, text in (("entanglement", "Concurrence, negativity and trace"), ("bell", "CGLMP Bell parameter")):
        sub = subparsers.add_parser(name, help=text)
        _common_options(sub)
        sub.add_argument("--subspace", action="append", type=_subspace,
                         help="Encoding modes such as --subspace=-1,1 (repeatable)")
        sub.add_argument("--linear-errors", action="store_true", help="Also report linear error propagation")

    screens = subparsers.add_parser("validate-screens", help="Phase-screen structure-function check")
    _common_options(screens)
    screens.add_argument("--n-screens", type=int, default=200, help="Screens in the ensemble")
    screens.add_argument("--max-shift", type=int, help="Largest separation in pixels")

    reproduce = subparsers.add_parser("reproduce", help="Run a figure recipe")
    _common_options(reproduce)
    reproduce.add_argument("figure", choices=FIGURES)
    reproduce.add_argument("--scale", choices=sorted(SCALES), default="desk")

    return parser


def _overrides(args: argparse.Namespace) -> Dict:
    return {
        "seed": args.seed,
        "realizations": args.realizations,
        "ao_modes": args.ao,
        "beacon_w0": args.beacon_w0,
        "grid_n": args.grid_n,
        "grid_extent": args.grid_extent,
        "strengths": args.strengths,
        "t": args.t,
        "n_steps": args.n_steps,
        "output_dir": args.out,
        "output_formats": args.formats,
        "workers": args.workers,
        "name": args.name,
    }


def _base_config(args: argparse.Namespace) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    return config.with_overrides(**_overrides(args))


def _configure_logging(args: argparse.Namespace) -> bool:
    """Apply --verbose/--quiet; returns whether progress bars are shown"""
    root = logging.getLogger()
    if args.verbose:
        root.setLevel(logging.DEBUG)
    elif args.quiet:
        root.setLevel(logging.WARNING)
    return not args.quiet and sys.stderr.isatty()


def _run(args: argparse.Namespace, progress: bool) -> List[Path]:
    if args.command == "reproduce":
        overrides = _overrides(args)
        out_dir = overrides.pop("output_dir")
        base = load_config(args.config) if args.config else None
        return reproduce_figure(args.figure, args.scale, out_dir=out_dir, progress=progress, base=base, **overrides)

    config = _base_config(args)
    writer = ResultsWriter(config.output_dir)

    if args.command == "validate-screens":
        frame = validate_screens(config, n_screens=args.n_screens, max_shift=args.max_shift, progress=progress)
        return [writer.write_table(frame, f"{config.name}_structure_function")]

    if args.command == "spectrum":
        modes = args.l0 or config.spectrum_modes or [3]
        config = config.with_overrides(spectrum_modes=modes, subspaces=[],
                                       spectrum_half_window=args.half_window)
    else:
        subspaces = args.subspace or config.subspaces or [EncodingSubspace.qubit(1)]
        config = config.with_overrides(subspaces=subspaces, spectrum_modes=[],
                                       linear_errors=args.linear_errors or None)

    records = run_sweep(config, progress=progress)
    return writer.write(records, config, kinds=[args.command])


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    progress = _configure_logging(args)

    try:
        outputs = _run(args, progress)
    except ConfigurationError as e:
        print(json.dumps(e.to_dict()), file=sys.stderr)
        return EXIT_CONFIGURATION_ERROR
    except SimulationError as e:
        print(json.dumps(e.to_dict()), file=sys.stderr)
        return EXIT_SIMULATION_ERROR

    print(json.dumps({"success": True, "outputs": [str(p) for p in outputs]}))
    return EXIT_OK
