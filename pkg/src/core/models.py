"""Immutable domain records passed between the services."""

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core.utils.config import FORMAT_VERSION, RNG_ALGORITHM


def _frozen_array(values, ndim: int) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValueError(f"Expected a {ndim}-dimensional array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def json_number(value: Optional[float]) -> Any:
    """JSON-safe float: infinities as strings, nan as null"""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return None
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return float(value)


class Termination(str, Enum):
    FREE_FLIGHT = "free_flight"
    HORIZON = "horizon"
    BUDGET = "budget"


@dataclass(frozen=True, eq=False)
class SystemState:
    """Positions and velocities of n unit balls in R^d at time t"""
    dim: int
    t: float
    positions: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        positions = _frozen_array(self.positions, 2)
        velocities = _frozen_array(self.velocities, 2)
        if positions.shape != velocities.shape:
            raise ValueError(f"positions {positions.shape} and velocities {velocities.shape} differ in shape")
        if positions.shape[0] < 1:
            raise ValueError("A state needs at least one ball")
        if positions.shape[1] != self.dim:
            raise ValueError(f"Vectors have length {positions.shape[1]}, expected dim={self.dim}")
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "velocities", velocities)
        object.__setattr__(self, "t", float(self.t))

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def advanced_to(self, t: float) -> "SystemState":
        """Free flight of every ball to time t"""
        return SystemState(self.dim, t, self.positions + (t - self.t) * self.velocities, self.velocities)

    def with_velocities(self, velocities) -> "SystemState":
        return SystemState(self.dim, self.t, self.positions, velocities)

    def restricted(self, indices: Sequence[int]) -> "SystemState":
        idx = list(indices)
        return SystemState(self.dim, self.t, self.positions[idx], self.velocities[idx])

    def reversed(self) -> "SystemState":
        return SystemState(self.dim, self.t, self.positions, -self.velocities)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "t": self.t,
            "positions": self.positions.tolist(),
            "velocities": self.velocities.tolist(),
        }


@dataclass(frozen=True, eq=False)
class CollisionEvent:
    """One elastic collision between balls i < j"""
    t: float
    i: int
    j: int
    x_i: np.ndarray
    x_j: np.ndarray
    v_i_pre: np.ndarray
    v_j_pre: np.ndarray
    v_i_post: np.ndarray
    v_j_post: np.ndarray

    def __post_init__(self):
        if self.i >= self.j:
            raise ValueError(f"Collision indices must satisfy i < j, got ({self.i}, {self.j})")
        for name in ("x_i", "x_j", "v_i_pre", "v_j_pre", "v_i_post", "v_j_post"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name), 1))
        object.__setattr__(self, "t", float(self.t))

    @property
    def pair(self) -> Tuple[int, int]:
        return (self.i, self.j)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "t": self.t,
            "i": self.i,
            "j": self.j,
            "xi": self.x_i.tolist(),
            "xj": self.x_j.tolist(),
            "vi_pre": self.v_i_pre.tolist(),
            "vj_pre": self.v_j_pre.tolist(),
            "vi_post": self.v_i_post.tolist(),
            "vj_post": self.v_j_post.tolist(),
        }


@dataclass(frozen=True)
class LogHeader:
    n: int
    d: int
    seed: Optional[int] = None
    scenario: Dict[str, Any] = field(default_factory=dict)
    horizon: Optional[float] = None
    format_version: int = FORMAT_VERSION
    rng: str = RNG_ALGORITHM


class TrajectoryIndex:
    """Full states at the initial time and right after every event, for piecewise-linear lookup"""

    def __init__(self, initial: SystemState, events: Sequence[CollisionEvent]):
        count = len(events)
        n, d = initial.positions.shape
        self.base_times = np.empty(count + 1)
        self.positions = np.empty((count + 1, n, d))
        self.velocities = np.empty((count + 1, n, d))

        self.base_times[0] = initial.t
        self.positions[0] = initial.positions
        self.velocities[0] = initial.velocities
        for k, event in enumerate(events):
            # same arithmetic as the simulator so replayed states are bit-identical
            self.base_times[k + 1] = event.t
            self.positions[k + 1] = self.positions[k] + (event.t - self.base_times[k]) * self.velocities[k]
            self.velocities[k + 1] = self.velocities[k]
            self.velocities[k + 1, event.i] = event.v_i_post
            self.velocities[k + 1, event.j] = event.v_j_post
        self._times_list = self.base_times.tolist()

    def piece_index(self, t: float) -> int:
        """Index of the last base state at or before t (-1 before the initial time)"""
        return bisect_right(self._times_list, t) - 1

    def positions_at(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        k = max(self.piece_index(t), 0)
        return self.positions[k] + (t - self.base_times[k]) * self.velocities[k], self.velocities[k]


@dataclass(frozen=True, eq=False)
class EventLog:
    """Initial state plus the time-ordered collisions that follow it"""
    header: LogHeader
    initial: SystemState
    events: Tuple[CollisionEvent, ...]
    termination: Termination
    backward_free_flight: bool = False
    ball_ids: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        object.__setattr__(self, "termination", Termination(self.termination))
        if self.ball_ids is None:
            object.__setattr__(self, "ball_ids", tuple(range(self.initial.n)))
        else:
            object.__setattr__(self, "ball_ids", tuple(int(b) for b in self.ball_ids))
        if len(self.ball_ids) != self.initial.n:
            raise ValueError(f"{len(self.ball_ids)} ball ids for {self.initial.n} balls")

    @property
    def n(self) -> int:
        return self.initial.n

    @property
    def dim(self) -> int:
        return self.initial.dim

    @property
    def terminal_free_flight(self) -> bool:
        return self.termination == Termination.FREE_FLIGHT

    @property
    def tails_certified(self) -> bool:
        return self.terminal_free_flight and self.backward_free_flight

    @cached_property
    def index(self) -> TrajectoryIndex:
        return TrajectoryIndex(self.initial, self.events)

    @cached_property
    def event_times(self) -> np.ndarray:
        times = np.array([e.t for e in self.events], dtype=np.float64)
        times.setflags(write=False)
        return times

    @property
    def span_start(self) -> float:
        return -math.inf if self.backward_free_flight else self.initial.t

    @property
    def span_end(self) -> float:
        if self.terminal_free_flight:
            return math.inf
        if self.termination == Termination.HORIZON and self.header.horizon is not None:
            return max(self.header.horizon, self.events[-1].t if self.events else self.initial.t)
        return self.events[-1].t if self.events else self.initial.t

    def final_state(self) -> SystemState:
        k = len(self.events)
        return SystemState(self.dim, self.index.base_times[k], self.index.positions[k], self.index.velocities[k])

    def pair_sequence(self) -> List[Tuple[int, int]]:
        return [e.pair for e in self.events]

    def global_pair(self, event: CollisionEvent) -> Tuple[int, int]:
        a, b = self.ball_ids[event.i], self.ball_ids[event.j]
        return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class FrameReport:
    """How a log was moved into the normalized frame"""
    momentum_shift: Tuple[float, ...]
    center_at_origin: Tuple[float, ...]
    origin_time: float
    speed_scale: float
    t0: Optional[float] = None
    x_norm_at_t0: Optional[float] = None
    alpha_profile: Optional[Tuple[Tuple[float, float], ...]] = None

    def center_shift(self, t: float) -> np.ndarray:
        """The affine center-of-mass trajectory z1(t) removed from positions (original time axis)"""
        return np.asarray(self.center_at_origin) + (t - self.origin_time) * np.asarray(self.momentum_shift)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "momentum_shift": list(self.momentum_shift),
            "center_at_origin": list(self.center_at_origin),
            "origin_time": self.origin_time,
            "speed_scale": self.speed_scale,
            "t0": json_number(self.t0),
            "x_norm_at_t0": json_number(self.x_norm_at_t0),
            "alpha_profile": [[json_number(v) for v in p] for p in self.alpha_profile] if self.alpha_profile is not None else None,
        }


@dataclass(frozen=True)
class GhostLog:
    """Subfamily evolution in its own center-of-mass frame, extended to free flight both ways"""
    log: EventLog
    family: Tuple[int, ...]
    T1: float
    T2: float
    speed: float

    @property
    def n(self) -> int:
        return len(self.family)

    @property
    def degenerate(self) -> bool:
        return self.speed == 0.0


@dataclass
class Sextuple:
    """Node of the branching family: (F, r, T1, T2, U1, U2) plus the quantities used to build it"""
    node_id: int
    family: Tuple[int, ...]
    T1: float
    T2: float
    depth: int
    kind: str = "root"
    r: float = math.nan
    t_star: float = math.nan
    x_norm_t_star: float = math.nan
    U1: float = math.nan
    U2: float = math.nan
    S1: Optional[float] = None
    S2: Optional[float] = None
    T0: Optional[float] = None
    x_norm_T0: Optional[float] = None
    v_norm: float = 0.0
    is_leaf: bool = False
    leaf_rule: Optional[str] = None
    beta: Optional[float] = None
    k_star: Optional[int] = None
    offspring: List["Sextuple"] = field(default_factory=list)

    @property
    def n_F(self) -> int:
        return len(self.family)

    @property
    def sextuple(self) -> Tuple[Tuple[int, ...], float, float, float, float, float]:
        return (self.family, self.r, self.T1, self.T2, self.U1, self.U2)

    def walk(self):
        """Pre-order traversal of this node and its descendants"""
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.offspring))

    def leaves(self) -> List["Sextuple"]:
        return [node for node in self.walk() if node.is_leaf]


class BoundFormula(str, Enum):
    MAIN_THM = "main_thm"
    BFK1 = "bfk1"
    BFK5 = "bfk5"
    LOWER = "lower"
    WINDOW = "window"
    INTERVAL = "interval"
    TREE_SIZE = "tree_size"
    OFFSPRING = "offspring"
    PER_LEAF = "per_leaf"
    OPEN_INTERVAL_TOTAL = "open_interval_total"
    ENDPOINT_TOTAL = "endpoint_total"


@dataclass(frozen=True)
class LogBound:
    """A bound held as its natural logarithm, with the formula and parameters that produced it"""
    formula_id: BoundFormula
    params: Tuple[Tuple[str, Any], ...]
    ln_value: float

    @property
    def log10_value(self) -> float:
        return self.ln_value / math.log(10.0)

    @property
    def param_dict(self) -> Dict[str, Any]:
        return dict(self.params)


class ScenarioKind(str, Enum):
    RANDOM_BOX = "random_box"
    LINE_CHAIN = "line_chain"
    CONVERGING_CLUSTER = "converging_cluster"
    TWO_CLUSTER = "two_cluster"


@dataclass(frozen=True)
class ScenarioSpec:
    kind: ScenarioKind
    n: int
    d: int = 2
    seed: int = 0
    box_side: float = 20.0
    spacing: float = 6.0
    cluster_gap: float = 100.0
    speed: float = 1.0
    clearance: float = 1e-3
    position_jitter: float = 0.5
    cluster_drift: float = 1.5
    max_retries: int = 1000

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "n": self.n,
            "d": self.d,
            "seed": self.seed,
            "box_side": self.box_side,
            "spacing": self.spacing,
            "cluster_gap": self.cluster_gap,
            "speed": self.speed,
            "clearance": self.clearance,
            "position_jitter": self.position_jitter,
            "cluster_drift": self.cluster_drift,
            "max_retries": self.max_retries,
        }


@dataclass(frozen=True)
class CoverageRow:
    event_id: int
    t: float
    i: int
    j: int
    bucket: str                 # "open", "endpoint" or "uncovered"
    leaf_id: Optional[int] = None
    node_id: Optional[int] = None


@dataclass
class CoverageReport:
    rows: List[CoverageRow]
    leaf_counts: Dict[int, int]
    double_covered: List[int]
    leaf_bound_violations: List[int]
    leaf_radius_violations: List[int]
    worst_leaf_ratio: float = 0.0   # max over leaves of ln(count) - ln(bound)

    @property
    def uncovered(self) -> List[int]:
        return [row.event_id for row in self.rows if row.bucket == "uncovered"]

    @property
    def complete(self) -> bool:
        return not self.uncovered and not self.double_covered


@dataclass
class TreeStatistics:
    depth: int = 0
    node_count: int = 0
    leaf_count: int = 0
    forced_leaves: int = 0
    max_offspring: int = 0
    max_offspring_ratio: float = 0.0         # offspring / (1000 n_F^{9/2})
    worst_radius_ratio: float = 0.0          # |x_F(t*)| / (sqrt(n_F) r(F))
    worst_interval_ratio: float = 0.0        # (U2 - U1)|v_F| / (200 n_F^3 |x_F(t*)|)
    worst_split_ratio: float = 0.0           # max side of (S - T0)|v_F| / (100 n_F^3 |x_F(T0)|)
    chain_violations: List[Tuple[int, int, float, float]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "depth": self.depth,
            "node_count": self.node_count,
            "leaf_count": self.leaf_count,
            "forced_leaves": self.forced_leaves,
            "max_offspring": self.max_offspring,
            "max_offspring_ratio": json_number(self.max_offspring_ratio),
            "worst_radius_ratio": json_number(self.worst_radius_ratio),
            "worst_interval_ratio": json_number(self.worst_interval_ratio),
            "worst_split_ratio": json_number(self.worst_split_ratio),
            "chain_violations": [[i, j, json_number(a), json_number(b)] for i, j, a, b in self.chain_violations],
        }


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    margin: float
    detail: str = ""

    def __post_init__(self):
        # numpy bools and scalars do not serialize to JSON
        object.__setattr__(self, "passed", bool(self.passed))
        object.__setattr__(self, "margin", float(self.margin))


@dataclass
class RunReport:
    run_id: str
    scenario: Dict[str, Any]
    event_count: int
    t0: Optional[float] = None
    x_norm_at_t0: Optional[float] = None
    root_split: Optional[Tuple[float, float]] = None
    tree: Optional[TreeStatistics] = None
    checks: List[CheckResult] = field(default_factory=list)
    error: Optional[str] = None

    @property
    def passed(self) -> bool:
        return self.error is None and all(check.passed for check in self.checks)

    def add_check(self, check: CheckResult) -> None:
        if any(existing.name == check.name for existing in self.checks):
            raise ValueError(f"Check {check.name} recorded twice")
        self.checks.append(check)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "run_id": self.run_id,
            "scenario": self.scenario,
            "event_count": self.event_count,
            "t0": json_number(self.t0),
            "x_norm_at_t0": json_number(self.x_norm_at_t0),
            "root_split": [json_number(s) for s in self.root_split] if self.root_split is not None else None,
            "tree": self.tree.to_dict() if self.tree is not None else None,
            "checks": [
                {"name": c.name, "passed": c.passed, "margin": json_number(c.margin), "detail": c.detail}
                for c in self.checks
            ],
            "passed": self.passed,
            "error": self.error,
        }
