import logging
import os
from typing import Optional

from src.core.models import EventLog, ScenarioSpec, Termination
from src.core.services.scenario_service import ScenarioService
from src.core.services.simulation_service import SimulationService
from src.core.utils.errors import CollisionLabError, ExitCode, exit_code_for
from src.core.utils.file_operations import FileOperations, scenario_run_id


def simulate_scenario(
    scenario_service: ScenarioService,
    simulation_service: SimulationService,
    spec: ScenarioSpec,
    horizon: Optional[float] = None,
    max_events: Optional[int] = None,
    strategy: Optional[str] = None,
) -> EventLog:
    """Generate the scenario's initial state and simulate it"""
    initial = scenario_service.generate(spec)
    header = scenario_service.header_for(spec, horizon)
    return simulation_service.simulate(initial, horizon, max_events, header=header, strategy=strategy)


def run_simulate_component(
    scenario_service: ScenarioService,
    simulation_service: SimulationService,
    file_ops: FileOperations,
    config_path: Optional[str],
    out_path: Optional[str],
    output_dir: str,
    seed_override: Optional[int] = None,
    max_events: Optional[int] = None,
    horizon: Optional[float] = None,
    strategy: Optional[str] = None,
) -> int:
    """
    Validate the simulate arguments, then run the worker

    Returns:
        Process exit code
    """
    logger = logging.getLogger(__name__)
    if not config_path:
        logger.error("simulate needs --config")
        return ExitCode.CONFIG
    if not os.path.isfile(config_path):
        logger.error(f"Config file not found: {config_path}")
        return ExitCode.CONFIG
    if max_events is not None and max_events < 1:
        logger.error(f"--max-events must be positive, got {max_events}")
        return ExitCode.CONFIG

    return simulate_from_config(
        scenario_service=scenario_service,
        simulation_service=simulation_service,
        file_ops=file_ops,
        config_path=config_path,
        out_path=out_path,
        output_dir=output_dir,
        seed_override=seed_override,
        max_events=max_events,
        horizon=horizon,
        strategy=strategy,
    )


def simulate_from_config(
    scenario_service: ScenarioService,
    simulation_service: SimulationService,
    file_ops: FileOperations,
    config_path: str,
    out_path: Optional[str],
    output_dir: str,
    seed_override: Optional[int],
    max_events: Optional[int],
    horizon: Optional[float],
    strategy: Optional[str],
) -> int:
    """
    Simulate one scenario config and write its JSONL log

    Command-line values win over the config file's horizon, max_events and strategy.
    """
    logger = logging.getLogger(__name__)
    try:
        logger.info("Step 1/3: Loading scenario config...")
        config = file_ops.load_run_config(config_path, seed_override)
        horizon = horizon if horizon is not None else config.horizon
        max_events = max_events if max_events is not None else config.max_events
        strategy = strategy or config.strategy

        logger.info(f"Step 2/3: Simulating {config.spec.kind.value} with n={config.spec.n}, d={config.spec.d}...")
        log = simulate_scenario(scenario_service, simulation_service, config.spec, horizon, max_events, strategy)

        logger.info("Step 3/3: Writing event log...")
        if not out_path:
            out_path = os.path.join(output_dir, f"{scenario_run_id(config.spec)}.jsonl")
        file_ops.write_event_log(log, out_path)
    except CollisionLabError as e:
        logger.error(f"Simulation failed: {str(e)}")
        return exit_code_for(e)

    if log.termination == Termination.BUDGET:
        logger.warning(f"Event budget reached after {len(log.events)} events; log written to {out_path}")
        return ExitCode.BUDGET
    logger.info(f"Simulated {len(log.events)} events ({log.termination.value}); log written to {out_path}")
    return ExitCode.OK
