import logging
import os

from src.core.services.bounds_service import BoundsService
from src.core.utils.errors import BoundParameterError, ExitCode
from src.core.utils.file_operations import FileOperations


def run_bounds_component(
    bounds_service: BoundsService,
    file_ops: FileOperations,
    out_dir: str,
    n_min: int,
    n_max: int,
    d: int,
    mass_ratio: float = 1.0,
    radius_ratio: float = 1.0,
) -> int:
    """
    Validate the bounds arguments, then tabulate

    Returns:
        Process exit code
    """
    logger = logging.getLogger(__name__)
    if n_min < 1 or n_max < n_min:
        logger.error(f"Need 1 <= --n-min <= --n-max, got {n_min}..{n_max}")
        return ExitCode.CONFIG
    if d < 2:
        logger.error(f"--d must be at least 2, got {d}")
        return ExitCode.CONFIG

    try:
        tabulate_bounds(bounds_service, file_ops, out_dir, n_min, n_max, d, mass_ratio, radius_ratio)
    except BoundParameterError as e:
        logger.error(f"Bound evaluation failed: {str(e)}")
        return ExitCode.CONFIG
    return ExitCode.OK


def tabulate_bounds(
    bounds_service: BoundsService,
    file_ops: FileOperations,
    out_dir: str,
    n_min: int,
    n_max: int,
    d: int,
    mass_ratio: float,
    radius_ratio: float,
) -> None:
    """Write bounds.csv, ordering.csv and ordering_summary.json for n in [n_min, n_max]"""
    logger = logging.getLogger(__name__)
    file_ops.ensure_dir(out_dir)
    n_values = range(n_min, n_max + 1)

    logger.info("Step 1/2: Tabulating bound formulas...")
    table = bounds_service.tabulate(n_values, d, mass_ratio, radius_ratio)
    table.to_csv(os.path.join(out_dir, "bounds.csv"), index=False, float_format="%.17g")

    logger.info("Step 2/2: Comparing lower, main and prior bounds...")
    ordering, summary = bounds_service.compare_bounds(n_values, d)
    ordering.to_csv(os.path.join(out_dir, "ordering.csv"), index=False, float_format="%.17g")
    file_ops.write_json({"d": d, "n_min": n_min, "n_max": n_max, **summary},
                        os.path.join(out_dir, "ordering_summary.json"))
    logger.info(f"Bound tables written to {out_dir}")
