import argparse
import logging
import sys
from typing import Any, Dict, List, Optional

# Import services
from src.core.services.bounds_service import BoundsService
from src.core.services.decomposition_service import DecompositionService
from src.core.services.frame_service import FrameService
from src.core.services.scenario_service import ScenarioService
from src.core.services.simulation_service import STRATEGIES, SimulationService
from src.core.services.tracking_service import TrackingService
from src.core.services.verification_service import VerificationService

# Import utilities
from src.core.utils.config import Settings
from src.core.utils.errors import ExitCode
from src.core.utils.file_operations import FileOperations

# Import command components
from src.core.components.analyze import run_analyze_component
from src.core.components.bounds import run_bounds_component
from src.core.components.simulate import run_simulate_component
from src.core.components.verify import run_verify_component

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def init_services(settings: Settings, output_dir: str, strategy: Optional[str] = None) -> Dict[str, Any]:
    """Initialize service instances"""
    try:
        valid, error_msg = settings.verify()
        if not valid:
            return {"error": error_msg}

        simulation_service = SimulationService(
            max_events=settings.max_events,
            ghost_max_events=settings.ghost_max_events,
            strategy=strategy or "queue",
        )
        frame_service = FrameService()
        decomposition_service = DecompositionService(simulation_service, frame_service)

        return {
            "simulation_service": simulation_service,
            "frame_service": frame_service,
            "decomposition_service": decomposition_service,
            "verification_service": VerificationService(simulation_service, frame_service, decomposition_service),
            "scenario_service": ScenarioService(),
            "bounds_service": BoundsService(),
            "tracking_service": TrackingService(output_dir),
            "file_ops": FileOperations(),
            "error": None,
        }
    except Exception as e:
        logging.error(f"Error initializing services: {str(e)}")
        return {"error": f"Error initializing services: {str(e)}"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Event-driven hard-ball collisions and the branching-tree collision bound",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    def add_run_flags(sub: argparse.ArgumentParser) -> None:
        sub.add_argument("--config", help="scenario config (simulate) or batch file (verify)")
        sub.add_argument("--seed-override", type=int, default=None, help="replace the seed in every scenario")
        sub.add_argument("--max-events", type=int, default=None, help="event budget per run")
        sub.add_argument("--horizon", type=float, default=None, help="stop before the first collision after this time")
        sub.add_argument("--strategy", choices=STRATEGIES, default=None, help="collision scheduling strategy")

    simulate = subparsers.add_parser("simulate", help="simulate one scenario to a JSONL log")
    add_run_flags(simulate)
    simulate.add_argument("--out", default=None, help="log file to write (default: <output dir>/<run id>.jsonl)")

    analyze = subparsers.add_parser("analyze", help="normalize a log, build its tree and check it")
    analyze.add_argument("log", help="JSONL log to analyze")
    analyze.add_argument("--out", default=None, help="artifact directory (default: <output dir>/<log name>)")

    verify = subparsers.add_parser("verify", help="simulate and analyze a batch, writing an aggregate CSV")
    add_run_flags(verify)
    verify.add_argument("--out", default=None, help="batch output directory (default: the output dir)")
    verify.add_argument("--jobs", type=int, default=None, help="parallel runs (default: COLLISION_JOBS)")

    bounds = subparsers.add_parser("bounds", help="tabulate the closed-form collision bounds")
    bounds.add_argument("--out", default=None, help="output directory (default: <output dir>/bounds)")
    bounds.add_argument("--n-min", type=int, default=2)
    bounds.add_argument("--n-max", type=int, default=100)
    bounds.add_argument("--d", type=int, default=2)
    bounds.add_argument("--mass-ratio", type=float, default=1.0)
    bounds.add_argument("--radius-ratio", type=float, default=1.0)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Command-line entry point"""
    args = build_parser().parse_args(argv)

    try:
        settings = Settings()
    except ValueError as e:
        logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)
        logging.error(str(e))
        return ExitCode.CONFIG
    logging.basicConfig(
        level=getattr(logging, settings.log_level, logging.INFO),
        format=LOG_FORMAT
    )

    output_dir = settings.output_dir
    if args.command in ("verify", "bounds") and args.out:
        output_dir = args.out
    services = init_services(settings, output_dir, getattr(args, "strategy", None))
    if services.get("error"):
        logging.error(services["error"])
        return ExitCode.CONFIG

    file_ops = services["file_ops"]
    if args.command == "simulate":
        return run_simulate_component(
            services["scenario_service"], services["simulation_service"], file_ops,
            config_path=args.config, out_path=args.out, output_dir=settings.output_dir,
            seed_override=args.seed_override, max_events=args.max_events,
            horizon=args.horizon, strategy=args.strategy,
        )
    if args.command == "analyze":
        return run_analyze_component(
            services["verification_service"], services["tracking_service"], file_ops,
            log_path=args.log, out_dir=args.out, output_dir=settings.output_dir,
        )
    if args.command == "verify":
        return run_verify_component(
            services["tracking_service"], file_ops,
            batch_path=args.config, out_dir=output_dir,
            jobs=args.jobs if args.jobs is not None else settings.jobs,
            seed_override=args.seed_override, max_events=args.max_events,
            ghost_max_events=settings.ghost_max_events, horizon=args.horizon, strategy=args.strategy,
            default_max_events=settings.max_events,
        )
    return run_bounds_component(
        services["bounds_service"], file_ops,
        out_dir=args.out or f"{output_dir}/bounds",
        n_min=args.n_min, n_max=args.n_max, d=args.d,
        mass_ratio=args.mass_ratio, radius_ratio=args.radius_ratio,
    )


if __name__ == "__main__":
    sys.exit(int(main()))
