from .errors import (
    ConfigError,
    ConvergenceError,
    DomainError,
    LidarkitError,
    NoScatterError,
    SingularPointError,
    ValidityError,
)
from .geometry import DetectorGeometry, TimeGrid, check_double_scatter_validity, check_far_field
from .medium import MediumModel, PiecewiseLinearProfile, SeparablePhase, TabulatedPhase
from .single_scatter import AttenuationQuery, attenuation, single_scatter_return
from .double_scatter import (
    D0Point,
    QuadratureConfig,
    d0_contains,
    double_attenuation,
    double_scatter_integrand,
    double_scatter_return,
    i22_bound,
    i23_bound,
)
from .montecarlo import estimate_returns, trace_history
from .tally import McTally, order_ratios
from . import config as config_loader
from . import output, runner

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

logger = logging.getLogger("lidarkit")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_STRICT = 3


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="[%(levelname)s] %(name)s: %(message)s",
    )


def _attach_trajectory_log(out: Optional[str]) -> logging.FileHandler:
    target = Path(f"{out}.trajectories.log" if out else "lidarkit.trajectories.log")
    handler = logging.FileHandler(target, mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(message)s"))
    traj = logging.getLogger("lidarkit.montecarlo.trajectory")
    traj.setLevel(logging.DEBUG)
    traj.propagate = False
    traj.addHandler(handler)
    return handler


def _detach_trajectory_log(handler: logging.FileHandler) -> None:
    traj = logging.getLogger("lidarkit.montecarlo.trajectory")
    traj.removeHandler(handler)
    handler.close()
    traj.setLevel(logging.NOTSET)
    traj.propagate = True


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="lidarkit",
        description="Single- and double-scattering LIDAR returns with a Monte Carlo cross-check.",
    )
    src = ap.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="Run configuration (.json, .json.gz or .toml)")
    src.add_argument("--example", help="Bundled example configuration, e.g. 'homogeneous'")
    src.add_argument("--list-examples", action="store_true", help="List bundled examples and exit")
    ap.add_argument("--mode", choices=["single", "double", "mc", "validate"], help="Override the run mode")
    ap.add_argument("-o", "--out", help="Signal output file (stdout when omitted)")
    ap.add_argument("--seed", type=int, help="Override the Monte Carlo seed")
    ap.add_argument("--histories", type=int, help="Override the number of Monte Carlo histories")
    ap.add_argument("--workers", type=int, help="Worker processes for Monte Carlo blocks")
    ap.add_argument("--strict", action="store_true", help="Exit with status 3 on any regime violation")
    ap.add_argument("--log-trajectories", action="store_true",
                    help="Write one line per Monte Carlo event to <out>.trajectories.log")
    ap.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.verbose)

    if args.list_examples:
        for name in config_loader.list_bundled():
            print(name)
        return EXIT_OK

    try:
        if args.config:
            path = Path(args.config)
            spec = config_loader.validate_document(config_loader.read_document(path))
            base_dir = path.parent
        else:
            spec = config_loader.validate_document(config_loader.bundled_document(args.example))
            base_dir = None
        spec = config_loader.apply_overrides(
            spec,
            mode=args.mode,
            out=args.out,
            seed=args.seed,
            histories=args.histories,
            workers=args.workers,
        )
        cfg = config_loader.resolve(spec, base_dir)
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG

    traj_handler = None
    if args.log_trajectories:
        traj_handler = _attach_trajectory_log(cfg.spec.output.path)
        logger.info("trajectory log: %s", traj_handler.baseFilename)

    try:
        result = runner.run(cfg, strict=args.strict)
    except ValidityError as exc:
        logger.error("%s", exc)
        return EXIT_STRICT
    except LidarkitError as exc:
        logger.error("%s", exc)
        for note in getattr(exc, "__notes__", []):
            logger.error("%s", note)
        return EXIT_ERROR
    finally:
        if traj_handler is not None:
            _detach_trajectory_log(traj_handler)

    out = Path(cfg.spec.output.path) if cfg.spec.output.path else None
    summary_file = output.write_outputs(result.signal, result.summary, out, cfg.spec.output.format, sys.stdout)
    if out is not None:
        logger.info("wrote %s (%d rows) and %s", out, result.summary.rows, summary_file)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
