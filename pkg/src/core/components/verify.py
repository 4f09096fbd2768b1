import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import List, Optional

from tqdm import tqdm

from src.core.models import RunReport
from src.core.components.analyze import write_analysis_artifacts
from src.core.components.simulate import simulate_scenario
from src.core.services.scenario_service import ScenarioService
from src.core.services.tracking_service import TrackingService
from src.core.services.verification_service import AnalysisResult, VerificationService
from src.core.utils.errors import ExitCode
from src.core.utils.file_operations import BatchEntry, FileOperations

AGGREGATE_FILE = "aggregate.csv"


@dataclass(frozen=True)
class BatchOptions:
    out_dir: str
    horizon: Optional[float]
    max_events: int
    ghost_max_events: int
    strategy: str


def verify_entry(entry: BatchEntry, options: BatchOptions) -> RunReport:
    """
    Simulate (or read) and analyze one batch entry in a fresh service chain

    Never raises: failures end up in the report's error field.
    """
    logger = logging.getLogger(__name__)
    file_ops = FileOperations()
    verification = VerificationService.create(options.max_events, options.ghost_max_events, options.strategy)
    scenario = entry.spec.to_dict() if entry.spec is not None else {"kind": "log", "path": entry.log_path}
    result = AnalysisResult(report=RunReport(run_id=entry.run_id, scenario=scenario, event_count=0))
    run_dir = os.path.join(options.out_dir, "runs", entry.run_id)
    try:
        if entry.spec is not None:
            log = simulate_scenario(ScenarioService(), verification.simulation_service, entry.spec,
                                    options.horizon, options.max_events)
            file_ops.write_event_log(log, os.path.join(run_dir, "log.jsonl"))
        else:
            log = file_ops.read_event_log(entry.log_path)
        result.report.event_count = len(log.events)
        result = verification.analyze(log, entry.run_id, scenario)
    except Exception as e:
        logger.error(f"Run {entry.run_id} failed: {type(e).__name__}: {str(e)}")
        result.report.error = f"{type(e).__name__}: {e}"

    try:
        write_analysis_artifacts(file_ops, result, run_dir)
    except Exception as e:
        logger.error(f"Could not write artifacts for run {entry.run_id}: {type(e).__name__}: {str(e)}")
        if result.report.error is None:
            result.report.error = f"{type(e).__name__}: {e}"
    return result.report


def run_verify_component(
    tracking_service: TrackingService,
    file_ops: FileOperations,
    batch_path: Optional[str],
    out_dir: str,
    jobs: int,
    seed_override: Optional[int],
    max_events: Optional[int],
    ghost_max_events: int,
    horizon: Optional[float],
    strategy: Optional[str],
    default_max_events: int = 100000,
) -> int:
    """
    Validate the verify arguments, then run the batch

    Returns:
        Process exit code
    """
    logger = logging.getLogger(__name__)
    if not batch_path:
        logger.error("verify needs --config pointing at a batch file")
        return ExitCode.CONFIG
    if not os.path.isfile(batch_path):
        logger.error(f"Batch file not found: {batch_path}")
        return ExitCode.CONFIG
    if jobs < 1:
        logger.error(f"--jobs must be positive, got {jobs}")
        return ExitCode.CONFIG

    return verify_batch(tracking_service, file_ops, batch_path, out_dir, jobs, seed_override,
                        max_events, ghost_max_events, horizon, strategy, default_max_events)


def verify_batch(
    tracking_service: TrackingService,
    file_ops: FileOperations,
    batch_path: str,
    out_dir: str,
    jobs: int,
    seed_override: Optional[int],
    max_events: Optional[int],
    ghost_max_events: int,
    horizon: Optional[float],
    strategy: Optional[str],
    default_max_events: int = 100000,
) -> int:
    """Run every batch entry, register the reports and write the aggregate CSV"""
    logger = logging.getLogger(__name__)
    try:
        logger.info("Step 1/3: Loading batch...")
        batch = file_ops.load_batch_config(batch_path, seed_override)
    except Exception as e:
        logger.error(f"Invalid batch: {str(e)}")
        return ExitCode.CONFIG

    options = BatchOptions(
        out_dir=out_dir,
        horizon=horizon if horizon is not None else batch.horizon,
        max_events=max_events or batch.max_events or default_max_events,
        ghost_max_events=ghost_max_events,
        strategy=strategy or batch.strategy or "queue",
    )

    logger.info(f"Step 2/3: Running {len(batch.entries)} runs with {jobs} jobs...")
    reports: List[RunReport] = []
    if jobs == 1:
        for entry in tqdm(batch.entries, desc="Verifying", unit="run"):
            reports.append(verify_entry(entry, options))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            futures = [executor.submit(verify_entry, entry, options) for entry in batch.entries]
            for future in tqdm(futures, desc="Verifying", unit="run"):
                reports.append(future.result())

    logger.info("Step 3/3: Writing aggregate report...")
    for report in reports:
        tracking_service.add_run_record(report)
    df = tracking_service.write_aggregate_csv(os.path.join(out_dir, AGGREGATE_FILE),
                                              [report.run_id for report in reports])

    failed = int((~df["passed"].astype(bool)).sum())
    if failed:
        logger.warning(f"{failed} of {len(df)} runs failed verification")
        return ExitCode.CHECKS_FAILED
    logger.info(f"All {len(df)} runs passed verification")
    return ExitCode.OK
