import logging
import os
from typing import Optional

from src.core.models import RunReport
from src.core.services.tracking_service import TrackingService
from src.core.services.verification_service import AnalysisResult, VerificationService
from src.core.utils.errors import CollisionLabError, ExitCode, exit_code_for
from src.core.utils.file_operations import FileOperations

ARTIFACTS = ("normalized_log.jsonl", "frame_report.json", "tree.json", "coverage.csv", "run_report.json")


def write_analysis_artifacts(file_ops: FileOperations, result: AnalysisResult, out_dir: str) -> None:
    """Write whatever the pipeline produced; the run report is always written"""
    file_ops.ensure_dir(out_dir)
    if result.normalized is not None:
        file_ops.write_event_log(result.normalized, os.path.join(out_dir, "normalized_log.jsonl"))
    if result.frame is not None:
        file_ops.write_frame_report(result.frame, os.path.join(out_dir, "frame_report.json"))
    if result.root is not None:
        file_ops.write_tree(result.root, os.path.join(out_dir, "tree.json"))
    if result.coverage is not None:
        file_ops.write_coverage_csv(result.coverage, os.path.join(out_dir, "coverage.csv"))
    file_ops.write_json(result.report.to_dict(), os.path.join(out_dir, "run_report.json"))


def report_exit_code(report: RunReport) -> int:
    if report.passed:
        return ExitCode.OK
    if any(check.name == "coverage" and not check.passed for check in report.checks):
        return ExitCode.COVERAGE
    return ExitCode.CHECKS_FAILED


def run_analyze_component(
    verification_service: VerificationService,
    tracking_service: TrackingService,
    file_ops: FileOperations,
    log_path: Optional[str],
    out_dir: Optional[str],
    output_dir: str,
) -> int:
    """
    Validate the analyze arguments, then run the worker

    Returns:
        Process exit code
    """
    logger = logging.getLogger(__name__)
    if not log_path:
        logger.error("analyze needs a log path")
        return ExitCode.CONFIG
    if not os.path.isfile(log_path):
        logger.error(f"Log file not found: {log_path}")
        return ExitCode.CONFIG

    run_id = os.path.splitext(os.path.basename(log_path))[0]
    if not out_dir:
        out_dir = os.path.join(output_dir, run_id)
    return analyze_log(verification_service, tracking_service, file_ops, log_path, out_dir, run_id)


def analyze_log(
    verification_service: VerificationService,
    tracking_service: TrackingService,
    file_ops: FileOperations,
    log_path: str,
    out_dir: str,
    run_id: str,
) -> int:
    """
    Read a log, run the full analysis and persist every artifact

    Args:
        verification_service: Pipeline to run
        tracking_service: Registry the run is recorded in
        file_ops: File operations utility instance
        log_path: JSONL log to analyze
        out_dir: Directory receiving the artifacts
        run_id: Identifier for the report and registry
    """
    logger = logging.getLogger(__name__)
    try:
        log = file_ops.read_event_log(log_path)
    except CollisionLabError as e:
        logger.error(f"Could not read {log_path}: {str(e)}")
        return exit_code_for(e)

    result = AnalysisResult(report=RunReport(run_id=run_id, scenario=log.header.scenario,
                                             event_count=len(log.events)))
    try:
        result = verification_service.analyze(log, run_id)
    except CollisionLabError as e:
        logger.error(f"Analysis of {log_path} failed: {str(e)}")
        result.report.error = f"{type(e).__name__}: {e}"
        write_analysis_artifacts(file_ops, result, out_dir)
        tracking_service.add_run_record(result.report)
        return exit_code_for(e)

    write_analysis_artifacts(file_ops, result, out_dir)
    tracking_service.add_run_record(result.report)
    logger.info(f"Artifacts for {run_id} written to {out_dir}")
    return report_exit_code(result.report)
