import json
import logging
import math
import os
from dataclasses import dataclass, fields
from typing import Any, Dict, List, Optional

import pandas as pd

from src.core.models import (
    CollisionEvent,
    CoverageReport,
    EventLog,
    FrameReport,
    LogHeader,
    ScenarioKind,
    ScenarioSpec,
    Sextuple,
    SystemState,
    Termination,
    json_number,
)
from src.core.utils.config import FORMAT_VERSION, RNG_ALGORITHM
from src.core.utils.errors import ConfigError

SCENARIO_FIELDS = {f.name: f for f in fields(ScenarioSpec)}
RUN_CONFIG_KEYS = {"scenario", "horizon", "max_events", "strategy"}
BATCH_KEYS = {"runs", "sweeps", "horizon", "max_events", "strategy"}
SWEEP_KEYS = {"scenario", "seed_start", "seed_count"}
EVENT_KEYS = ("t", "i", "j", "xi", "xj", "vi_pre", "vj_pre", "vi_post", "vj_post")


@dataclass(frozen=True)
class RunConfig:
    spec: ScenarioSpec
    horizon: Optional[float] = None
    max_events: Optional[int] = None
    strategy: Optional[str] = None


@dataclass(frozen=True)
class BatchEntry:
    run_id: str
    spec: Optional[ScenarioSpec] = None
    log_path: Optional[str] = None


@dataclass(frozen=True)
class BatchConfig:
    entries: List[BatchEntry]
    horizon: Optional[float] = None
    max_events: Optional[int] = None
    strategy: Optional[str] = None



def _decode_float(value: Any) -> float:
    if value == "inf":
        return math.inf
    if value == "-inf":
        return -math.inf
    return float(value)


def validate_scenario(raw: Any, seed_override: Optional[int] = None) -> ScenarioSpec:
    """
    Validate a scenario object field by field

    Raises:
        ConfigError: on unknown fields, missing fields or wrong types
    """
    if not isinstance(raw, dict):
        raise ConfigError(f"scenario must be an object, got {type(raw).__name__}")
    unknown = set(raw) - set(SCENARIO_FIELDS)
    if unknown:
        raise ConfigError(f"Unknown scenario fields: {', '.join(sorted(unknown))}")
    for required in ("kind", "n"):
        if required not in raw:
            raise ConfigError(f"scenario.{required} is required")
    try:
        kind = ScenarioKind(raw["kind"])
    except ValueError:
        raise ConfigError(f"scenario.kind must be one of {[k.value for k in ScenarioKind]}, got {raw['kind']!r}")

    values: Dict[str, Any] = {"kind": kind}
    for name, value in raw.items():
        if name == "kind":
            continue
        expected = SCENARIO_FIELDS[name].type
        if expected in (int, "int"):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"scenario.{name} must be an integer, got {value!r}")
        elif isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(f"scenario.{name} must be a finite number, got {value!r}")
        else:
            value = float(value)
        values[name] = value
    if seed_override is not None:
        values["seed"] = seed_override
    if values["n"] < 1:
        raise ConfigError(f"scenario.n must be positive, got {values['n']}")
    return ScenarioSpec(**values)


def _validate_run_options(raw: Dict[str, Any], where: str) -> Dict[str, Any]:
    options: Dict[str, Any] = {}
    horizon = raw.get("horizon")
    if horizon is not None:
        if isinstance(horizon, bool) or not isinstance(horizon, (int, float)):
            raise ConfigError(f"{where}.horizon must be a number, got {horizon!r}")
        options["horizon"] = float(horizon)
    max_events = raw.get("max_events")
    if max_events is not None:
        if isinstance(max_events, bool) or not isinstance(max_events, int) or max_events < 1:
            raise ConfigError(f"{where}.max_events must be a positive integer, got {max_events!r}")
        options["max_events"] = max_events
    strategy = raw.get("strategy")
    if strategy is not None:
        if strategy not in ("queue", "scan"):
            raise ConfigError(f"{where}.strategy must be 'queue' or 'scan', got {strategy!r}")
        options["strategy"] = strategy
    return options


def scenario_run_id(spec: ScenarioSpec) -> str:
    return f"{spec.kind.value}-n{spec.n}-d{spec.d}-seed{spec.seed}"


class FileOperations:
    def __init__(self):
        """Reads and writes every on-disk artifact: logs, reports, trees, coverage and configs"""
        self.logger = logging.getLogger(__name__)

    @staticmethod
    def ensure_dir(path: str) -> str:
        os.makedirs(path, exist_ok=True)
        return path

    def _read_json_file(self, path: str) -> Any:
        try:
            with open(path, "r") as f:
                return json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"File not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path} is not valid JSON: {e}")

    def write_json(self, data: Any, path: str) -> None:
        parent = os.path.dirname(path)
        if parent:
            self.ensure_dir(parent)
        with open(path, "w") as f:
            json.dump(data, f, indent=2, sort_keys=True, allow_nan=False)
            f.write("\n")

    def load_run_config(self, path: str, seed_override: Optional[int] = None) -> RunConfig:
        """
        Load a simulate config: {"scenario": {...}, "horizon": ..., "max_events": ..., "strategy": ...}

        Raises:
            ConfigError: on any schema problem
        """
        raw = self._read_json_file(path)
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        unknown = set(raw) - RUN_CONFIG_KEYS
        if unknown:
            raise ConfigError(f"{path}: unknown fields {', '.join(sorted(unknown))}")
        if "scenario" not in raw:
            raise ConfigError(f"{path}: scenario is required")
        spec = validate_scenario(raw["scenario"], seed_override)
        return RunConfig(spec=spec, **_validate_run_options(raw, "config"))

    def load_batch_config(self, path: str, seed_override: Optional[int] = None) -> BatchConfig:
        """
        Load a verify batch

        Entries come from "runs" ({"scenario": {...}} or {"log": "path"}, paths relative to the
        batch file) and from "sweeps" ({"scenario": {...}, "seed_start": s, "seed_count": k}).

        Raises:
            ConfigError: on any schema problem
        """
        raw = self._read_json_file(path)
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: batch must be a JSON object")
        unknown = set(raw) - BATCH_KEYS
        if unknown:
            raise ConfigError(f"{path}: unknown fields {', '.join(sorted(unknown))}")
        base_dir = os.path.dirname(os.path.abspath(path))
        entries: List[BatchEntry] = []

        runs = raw.get("runs", [])
        if not isinstance(runs, list):
            raise ConfigError(f"{path}: runs must be a list")
        for k, run in enumerate(runs):
            if not isinstance(run, dict) or len(run) != 1 or not set(run) <= {"scenario", "log"}:
                raise ConfigError(f"{path}: runs[{k}] must be {{'scenario': ...}} or {{'log': path}}")
            if "scenario" in run:
                spec = validate_scenario(run["scenario"], seed_override)
                entries.append(BatchEntry(run_id=f"{len(entries):03d}-{scenario_run_id(spec)}", spec=spec))
            else:
                log_path = run["log"]
                if not isinstance(log_path, str) or not log_path:
                    raise ConfigError(f"{path}: runs[{k}].log must be a path")
                if not os.path.isabs(log_path):
                    log_path = os.path.join(base_dir, log_path)
                stem = os.path.splitext(os.path.basename(log_path))[0]
                entries.append(BatchEntry(run_id=f"{len(entries):03d}-log-{stem}", log_path=log_path))

        sweeps = raw.get("sweeps", [])
        if not isinstance(sweeps, list):
            raise ConfigError(f"{path}: sweeps must be a list")
        for k, sweep in enumerate(sweeps):
            if not isinstance(sweep, dict) or set(sweep) - SWEEP_KEYS or "scenario" not in sweep:
                raise ConfigError(f"{path}: sweeps[{k}] must have scenario, seed_start and seed_count only")
            start = sweep.get("seed_start", 0)
            count = sweep.get("seed_count", 1)
            for name, value in (("seed_start", start), ("seed_count", count)):
                if isinstance(value, bool) or not isinstance(value, int) or value < 0:
                    raise ConfigError(f"{path}: sweeps[{k}].{name} must be a non-negative integer")
            for seed in range(start, start + count):
                spec = validate_scenario(dict(sweep["scenario"], seed=seed))
                entries.append(BatchEntry(run_id=f"{len(entries):03d}-{scenario_run_id(spec)}", spec=spec))

        if not entries:
            raise ConfigError(f"{path}: batch has no runs")
        self.logger.info(f"Loaded batch of {len(entries)} runs from {path}")
        return BatchConfig(entries=entries, **_validate_run_options(raw, "batch"))

    def write_event_log(self, log: EventLog, path: str) -> None:
        """Write a log as JSON lines: header, one line per event, trailer"""
        parent = os.path.dirname(path)
        if parent:
            self.ensure_dir(parent)
        header = {
            "format_version": log.header.format_version,
            "n": log.n,
            "d": log.dim,
            "seed": log.header.seed,
            "scenario": log.header.scenario,
            "rng": log.header.rng,
            "t0": log.initial.t,
            "horizon": log.header.horizon,
            "positions": log.initial.positions.tolist(),
            "velocities": log.initial.velocities.tolist(),
            "backward_free_flight": log.backward_free_flight,
            "ball_ids": list(log.ball_ids),
        }
        with open(path, "w") as f:
            f.write(json.dumps(header, allow_nan=False) + "\n")
            for event in log.events:
                f.write(json.dumps(event.to_dict(), allow_nan=False) + "\n")
            f.write(json.dumps({"terminated": log.termination.value, "event_count": len(log.events)}) + "\n")
        self.logger.info(f"Wrote {len(log.events)} events to {path}")

    def read_event_log(self, path: str) -> EventLog:
        """
        Read a JSON-lines log written by write_event_log

        Raises:
            ConfigError: when the file is missing, truncated or malformed
        """
        try:
            with open(path, "r") as f:
                lines = [json.loads(line) for line in f if line.strip()]
        except FileNotFoundError:
            raise ConfigError(f"Log not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path} has a malformed line: {e}")
        if len(lines) < 2:
            raise ConfigError(f"{path} needs at least a header and a trailer line")

        header_raw, event_lines, trailer = lines[0], lines[1:-1], lines[-1]
        try:
            if header_raw["format_version"] != FORMAT_VERSION:
                raise ConfigError(f"{path}: unsupported format_version {header_raw['format_version']}")
            header = LogHeader(
                n=int(header_raw["n"]),
                d=int(header_raw["d"]),
                seed=header_raw.get("seed"),
                scenario=header_raw.get("scenario") or {},
                horizon=header_raw.get("horizon"),
                format_version=FORMAT_VERSION,
                rng=header_raw.get("rng", RNG_ALGORITHM),
            )
            initial = SystemState(header.d, header_raw["t0"], header_raw["positions"], header_raw["velocities"])
            events = tuple(
                CollisionEvent(
                    t=e["t"], i=e["i"], j=e["j"], x_i=e["xi"], x_j=e["xj"],
                    v_i_pre=e["vi_pre"], v_j_pre=e["vj_pre"], v_i_post=e["vi_post"], v_j_post=e["vj_post"],
                )
                for e in event_lines
            )
            termination = Termination(trailer["terminated"])
            if trailer["event_count"] != len(events):
                raise ConfigError(f"{path}: trailer counts {trailer['event_count']} events, found {len(events)}")
            return EventLog(
                header=header,
                initial=initial,
                events=events,
                termination=termination,
                backward_free_flight=bool(header_raw.get("backward_free_flight", False)),
                ball_ids=header_raw.get("ball_ids"),
            )
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"{path}: malformed log ({type(e).__name__}: {e})")

    def write_frame_report(self, report: FrameReport, path: str) -> None:
        self.write_json(report.to_dict(), path)

    def tree_to_dict(self, node: Sextuple) -> Dict[str, Any]:
        return {
            "node_id": node.node_id,
            "kind": node.kind,
            "depth": node.depth,
            "family": list(node.family),
            "r": json_number(node.r),
            "T1": json_number(node.T1),
            "T2": json_number(node.T2),
            "U1": json_number(node.U1),
            "U2": json_number(node.U2),
            "t_star": json_number(node.t_star),
            "x_norm_t_star": json_number(node.x_norm_t_star),
            "S1": json_number(node.S1),
            "S2": json_number(node.S2),
            "T0": json_number(node.T0),
            "x_norm_T0": json_number(node.x_norm_T0),
            "v_norm": json_number(node.v_norm),
            "beta": json_number(node.beta),
            "k_star": node.k_star,
            "is_leaf": node.is_leaf,
            "leaf_rule": node.leaf_rule,
            "offspring": [self.tree_to_dict(child) for child in node.offspring],
        }

    def tree_from_dict(self, data: Dict[str, Any]) -> Sextuple:
        def number(key: str) -> Optional[float]:
            value = data.get(key)
            return None if value is None else _decode_float(value)

        return Sextuple(
            node_id=data["node_id"], family=tuple(data["family"]), T1=number("T1"), T2=number("T2"),
            depth=data["depth"], kind=data["kind"],
            r=number("r") if data.get("r") is not None else math.nan,
            t_star=number("t_star") if data.get("t_star") is not None else math.nan,
            x_norm_t_star=number("x_norm_t_star") if data.get("x_norm_t_star") is not None else math.nan,
            U1=number("U1"), U2=number("U2"), S1=number("S1"), S2=number("S2"), T0=number("T0"),
            x_norm_T0=number("x_norm_T0"), v_norm=number("v_norm") or 0.0,
            is_leaf=data["is_leaf"], leaf_rule=data.get("leaf_rule"),
            beta=number("beta"), k_star=data.get("k_star"),
            offspring=[self.tree_from_dict(child) for child in data.get("offspring", [])],
        )

    def write_tree(self, root: Sextuple, path: str) -> None:
        self.write_json(self.tree_to_dict(root), path)

    def read_tree(self, path: str) -> Sextuple:
        return self.tree_from_dict(self._read_json_file(path))

    def write_coverage_csv(self, coverage: CoverageReport, path: str) -> None:
        """Coverage as CSV with one row per collision: event_id, leaf_id, bucket (plus node and pair)"""
        df = pd.DataFrame(
            [
                {
                    "event_id": row.event_id,
                    "leaf_id": row.leaf_id,
                    "bucket": row.bucket,
                    "node_id": row.node_id,
                    "t": row.t,
                    "i": row.i,
                    "j": row.j,
                }
                for row in coverage.rows
            ],
            columns=["event_id", "leaf_id", "bucket", "node_id", "t", "i", "j"],
        )
        df["leaf_id"] = df["leaf_id"].astype("Int64")
        df["node_id"] = df["node_id"].astype("Int64")
        df.to_csv(path, index=False, float_format="%.17g")
