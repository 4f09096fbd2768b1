import heapq
import logging
import math
from dataclasses import replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.core.models import CollisionEvent, EventLog, LogHeader, SystemState, Termination
from src.core.utils.config import CONTACT_DISTANCE, EPS_GEOM, EPS_NUM, EPS_T
from src.core.utils.errors import (
    EventBudgetError,
    NonApproachingError,
    NonContactError,
    OutOfSpanError,
    OverlapError,
    ReplayMismatchError,
    SimultaneityError,
)

STRATEGIES = ("queue", "scan")


def _row_dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # explicit per-component sum keeps every row bit-identical however many rows are stacked
    out = a[..., 0] * b[..., 0]
    for k in range(1, a.shape[-1]):
        out = out + a[..., k] * b[..., k]
    return out


def _pair_times(w: np.ndarray, u: np.ndarray, eps_geom: float = EPS_GEOM) -> np.ndarray:
    """
    Contact times for stacked relative positions w and velocities u

    Args:
        w: (m, d) array of x_i - x_j
        u: (m, d) array of v_i - v_j
        eps_geom: overlap tolerance on center distance

    Returns:
        (m,) array of times from now, np.inf where the pair never collides
    """
    ww = _row_dot(w, w)
    if np.any(np.sqrt(ww) < CONTACT_DISTANCE - eps_geom):
        k = int(np.argmin(ww))
        raise OverlapError(f"Centers {math.sqrt(ww[k]):.12g} apart, below contact distance {CONTACT_DISTANCE}")

    c = ww - CONTACT_DISTANCE ** 2
    b = _row_dot(w, u)
    uu = _row_dot(u, u)
    disc = b * b - uu * c

    # strict approach and a transversal crossing; grazing (disc == 0) is not a collision
    hits = (b < 0.0) & (disc > 0.0)
    root = np.sqrt(np.where(hits, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        # c / (-b + sqrt(disc)) is the smaller root without cancellation
        times = np.where(hits, c / (-b + root), np.inf)
    return np.where(hits & (c <= 0.0), 0.0, times)


def pair_collision_time(w, u, eps_geom: float = EPS_GEOM) -> Optional[float]:
    """
    First time at which two unit balls with relative position w and relative velocity u touch
    while approaching

    Returns:
        Time from now, or None when they recede, miss or only graze
    """
    w = np.asarray(w, dtype=np.float64).reshape(1, -1)
    u = np.asarray(u, dtype=np.float64).reshape(1, -1)
    t = float(_pair_times(w, u, eps_geom)[0])
    return None if math.isinf(t) else t


def _exchange(x_i, x_j, v_i, v_j, eps_geom: float = EPS_GEOM) -> Tuple[np.ndarray, np.ndarray]:
    w = x_i - x_j
    dist = math.sqrt(float(_row_dot(w, w)))
    if abs(dist - CONTACT_DISTANCE) > eps_geom:
        raise NonContactError(f"Pair is {dist:.12g} apart, not in contact")
    e = w / dist
    approach = float(_row_dot(v_i - v_j, w))
    if approach >= 0.0:
        raise NonApproachingError(f"Pair is not approaching (relative normal velocity {approach:.3e})")
    delta = float(_row_dot(v_j - v_i, e)) * e
    return v_i + delta, v_j - delta


def apply_collision(state: SystemState, i: int, j: int, eps_geom: float = EPS_GEOM) -> SystemState:
    """Exchange the normal velocity components of touching balls i and j"""
    v_i, v_j = _exchange(state.positions[i], state.positions[j], state.velocities[i], state.velocities[j], eps_geom)
    velocities = state.velocities.copy()
    velocities[i] = v_i
    velocities[j] = v_j
    return state.with_velocities(velocities)


def next_event(state: SystemState, eps_t: float = EPS_T,
               eps_geom: float = EPS_GEOM) -> Optional[Tuple[float, Tuple[int, int]]]:
    """
    Full O(n^2) scan for the next collision

    Returns:
        (absolute time, (i, j)) or None when the system is in permanent free flight

    Raises:
        SimultaneityError: when two distinct pairs collide within eps_t of each other
    """
    if state.n < 2:
        return None
    rows, cols = np.triu_indices(state.n, 1)
    w = state.positions[rows] - state.positions[cols]
    u = state.velocities[rows] - state.velocities[cols]
    dt = _pair_times(w, u, eps_geom)

    k = int(np.argmin(dt))
    if math.isinf(dt[k]):
        return None
    first = (int(rows[k]), int(cols[k]))
    if dt.size > 1:
        runner_up = dt.copy()
        runner_up[k] = np.inf
        k2 = int(np.argmin(runner_up))
        if runner_up[k2] - dt[k] < eps_t:
            raise SimultaneityError(state.t + dt[k], first, (int(rows[k2]), int(cols[k2])), float(runner_up[k2] - dt[k]))
    return state.t + float(dt[k]), first


class CollisionScheduler:
    """
    Event queue over all pairs with per-ball invalidation counters

    An entry (t, i, j, stamp_i, stamp_j) is live while neither ball has collided since it was pushed.
    The popped pair's time is recomputed from the current state, so it matches the full scan exactly.
    """

    def __init__(self, state: SystemState, eps_t: float = EPS_T, eps_geom: float = EPS_GEOM):
        self.eps_t = eps_t
        self.eps_geom = eps_geom
        self.stamps = [0] * state.n
        self.heap: List[Tuple[float, int, int, int, int]] = []
        if state.n >= 2:
            rows, cols = np.triu_indices(state.n, 1)
            self._push(state, rows, cols)

    def _push(self, state: SystemState, rows, cols) -> None:
        rows = np.asarray(rows)
        cols = np.asarray(cols)
        dt = _pair_times(state.positions[rows] - state.positions[cols],
                         state.velocities[rows] - state.velocities[cols], self.eps_geom)
        for a, b, step in zip(rows.tolist(), cols.tolist(), dt.tolist()):
            if not math.isinf(step):
                heapq.heappush(self.heap, (state.t + step, a, b, self.stamps[a], self.stamps[b]))

    def _live(self, entry) -> bool:
        _, a, b, stamp_a, stamp_b = entry
        return self.stamps[a] == stamp_a and self.stamps[b] == stamp_b

    def _drop_stale(self) -> None:
        while self.heap and not self._live(self.heap[0]):
            heapq.heappop(self.heap)

    def peek(self, state: SystemState) -> Optional[Tuple[float, Tuple[int, int]]]:
        while True:
            self._drop_stale()
            if not self.heap:
                return None
            entry = heapq.heappop(self.heap)
            _, a, b, _, _ = entry
            step = _pair_times((state.positions[a] - state.positions[b]).reshape(1, -1),
                               (state.velocities[a] - state.velocities[b]).reshape(1, -1), self.eps_geom)[0]
            if math.isinf(step):
                continue
            t = state.t + float(step)
            self._drop_stale()
            if self.heap and self.heap[0][0] - t < self.eps_t:
                rival = self.heap[0]
                raise SimultaneityError(t, (a, b), (rival[1], rival[2]), rival[0] - t)
            heapq.heappush(self.heap, (t, a, b, self.stamps[a], self.stamps[b]))
            return t, (a, b)

    def notify(self, state: SystemState, i: int, j: int) -> None:
        """Invalidate every entry of balls i and j and predict their pairs again from state"""
        self.stamps[i] += 1
        self.stamps[j] += 1
        others = [k for k in range(state.n) if k != i and k != j]
        rows = [min(i, j)] + [min(i, k) for k in others] + [min(j, k) for k in others]
        cols = [max(i, j)] + [max(i, k) for k in others] + [max(j, k) for k in others]
        self._push(state, rows, cols)


def mirror_event(event: CollisionEvent) -> CollisionEvent:
    """The same collision seen on a reversed clock"""
    return CollisionEvent(
        t=-event.t, i=event.i, j=event.j, x_i=event.x_i, x_j=event.x_j,
        v_i_pre=-event.v_i_post, v_j_pre=-event.v_j_post,
        v_i_post=-event.v_i_pre, v_j_post=-event.v_j_pre,
    )


def _reversed_clock(state: SystemState) -> SystemState:
    return SystemState(state.dim, -state.t, state.positions, -state.velocities)


def state_at(log: EventLog, t: float) -> SystemState:
    """
    State of a logged trajectory at time t

    Velocities are v(t+): at an event time the post-collision velocities are returned.

    Raises:
        OutOfSpanError: when t lies outside the covered span
    """
    if t < log.span_start or t > log.span_end or math.isnan(t):
        raise OutOfSpanError(f"t={t!r} is outside the log span [{log.span_start}, {log.span_end}]")
    positions, velocities = log.index.positions_at(t)
    return SystemState(log.dim, t, positions, velocities)


def _min_pair_distance(positions: np.ndarray) -> float:
    """Smallest center distance for each stacked configuration of shape (..., n, d)"""
    n = positions.shape[-2]
    rows, cols = np.triu_indices(n, 1)
    diff = positions[..., rows, :] - positions[..., cols, :]
    return float(np.sqrt(_row_dot(diff, diff)).min())


def _tail_min_distance(positions: np.ndarray, velocities: np.ndarray, direction: float) -> float:
    """Exact minimum center distance over a free-flight ray t >= 0 (direction 1) or t <= 0 (direction -1)"""
    rows, cols = np.triu_indices(positions.shape[0], 1)
    w = positions[rows] - positions[cols]
    u = direction * (velocities[rows] - velocities[cols])
    uu = _row_dot(u, u)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(uu > 0.0, np.maximum(-_row_dot(w, u) / uu, 0.0), 0.0)
    closest = w + s[:, None] * u
    return float(np.sqrt(_row_dot(closest, closest)).min())


def min_gap(log: EventLog, sample_count: int = 32) -> float:
    """
    Smallest center distance seen along a log

    Finite pieces between events are sampled at sample_count evenly spaced times (ends included);
    certified free-flight tails are minimized exactly.
    """
    if log.n < 2:
        return math.inf
    index = log.index
    best = math.inf
    pieces = len(index.base_times)
    for k in range(pieces):
        start = index.base_times[k]
        if k + 1 < pieces:
            end = index.base_times[k + 1]
        elif log.terminal_free_flight:
            best = min(best, _tail_min_distance(index.positions[k], index.velocities[k], 1.0))
            continue
        else:
            end = log.span_end
        offsets = np.linspace(0.0, end - start, max(sample_count, 2))
        sampled = index.positions[k][None, :, :] + offsets[:, None, None] * index.velocities[k][None, :, :]
        best = min(best, _min_pair_distance(sampled))
    if log.backward_free_flight:
        best = min(best, _tail_min_distance(index.positions[0], index.velocities[0], -1.0))
    return best


def window_statistics(log: EventLog, width: float = 1.0) -> Tuple[int, int]:
    """
    Sliding-window collision statistics over windows [u, u + width]

    Returns:
        (max distinct partners of a single ball in a window, max collisions in a window)
    """
    times = log.event_times
    events = log.events
    max_partners = 0
    max_count = 0
    end = 0
    for start in range(len(events)):
        # a busiest window can always be moved to start at an event
        while end < len(events) and times[end] <= times[start] + width:
            end += 1
        max_count = max(max_count, end - start)
        partners: Dict[int, set] = {}
        for event in events[start:end]:
            partners.setdefault(event.i, set()).add(event.j)
            partners.setdefault(event.j, set()).add(event.i)
        max_partners = max(max_partners, max(len(p) for p in partners.values()))
    return max_partners, max_count


def replay_check(log: EventLog, eps_num: float = EPS_NUM) -> float:
    """
    Replay the initial state through the recorded events

    Returns:
        Worst relative deviation between replayed and recorded positions, pre-velocities and post-velocities

    Raises:
        ReplayMismatchError: when the deviation exceeds eps_num
    """
    positions = log.initial.positions.copy()
    velocities = log.initial.velocities.copy()
    t = log.initial.t
    speed_scale = max(1.0, float(np.sqrt(_row_dot(velocities, velocities)).max()))
    worst = 0.0
    for event_id, event in enumerate(log.events):
        positions = positions + (event.t - t) * velocities
        t = event.t
        position_scale = max(1.0, float(np.abs(positions).max()))
        try:
            v_i_post, v_j_post = _exchange(event.x_i, event.x_j, event.v_i_pre, event.v_j_pre, math.inf)
        except NonApproachingError as e:
            raise ReplayMismatchError(f"Event {event_id} at t={event.t!r}: {e}")
        deviations = (
            np.abs(positions[event.i] - event.x_i).max() / position_scale,
            np.abs(positions[event.j] - event.x_j).max() / position_scale,
            np.abs(velocities[event.i] - event.v_i_pre).max() / speed_scale,
            np.abs(velocities[event.j] - event.v_j_pre).max() / speed_scale,
            np.abs(v_i_post - event.v_i_post).max() / speed_scale,
            np.abs(v_j_post - event.v_j_post).max() / speed_scale,
        )
        deviation = float(max(deviations))
        if deviation > eps_num:
            raise ReplayMismatchError(f"Event {event_id} at t={event.t!r} deviates by {deviation:.3e} on replay")
        worst = max(worst, deviation)
        velocities = velocities.copy()
        velocities[event.i] = event.v_i_post
        velocities[event.j] = event.v_j_post
    return worst


class SimulationService:
    def __init__(self, max_events: int = 100000, ghost_max_events: int = 100000,
                 strategy: str = "queue", eps_t: float = EPS_T, eps_geom: float = EPS_GEOM):
        """
        Initialize the simulation service

        Args:
            max_events: Default event budget for simulate
            ghost_max_events: Event budget for each free-flight extension
            strategy: "queue" (heap scheduler) or "scan" (full O(n^2) scan per event)
            eps_t: Simultaneity guard between distinct collision times
            eps_geom: Contact and overlap tolerance
        """
        self.logger = logging.getLogger(__name__)
        if strategy not in STRATEGIES:
            raise ValueError(f"Unknown scheduling strategy {strategy!r}, expected one of {STRATEGIES}")
        self.max_events = max_events
        self.ghost_max_events = ghost_max_events
        self.strategy = strategy
        self.eps_t = eps_t
        self.eps_geom = eps_geom

    def simulate(self, initial: SystemState, horizon: Optional[float] = None,
                 max_events: Optional[int] = None, header: Optional[LogHeader] = None,
                 strategy: Optional[str] = None) -> EventLog:
        """
        Advance the system from collision to collision

        Args:
            initial: Non-overlapping start state
            horizon: Stop before the first collision later than this time
            max_events: Event budget (defaults to the service budget)
            header: Header to record; n, d and horizon are filled in
            strategy: Override the service's scheduling strategy

        Returns:
            EventLog terminated by free flight, horizon or budget
        """
        budget = self.max_events if max_events is None else max_events
        strategy = strategy or self.strategy
        if strategy not in STRATEGIES:
            raise ValueError(f"Unknown scheduling strategy {strategy!r}, expected one of {STRATEGIES}")
        if header is None:
            header = LogHeader(n=initial.n, d=initial.dim)
        header = replace(header, n=initial.n, d=initial.dim, horizon=horizon)

        scheduler = CollisionScheduler(initial, self.eps_t, self.eps_geom) if strategy == "queue" else None
        state = initial
        positions = initial.positions
        velocities = initial.velocities.copy()
        events: List[CollisionEvent] = []

        while True:
            upcoming = scheduler.peek(state) if scheduler else next_event(state, self.eps_t, self.eps_geom)
            if upcoming is None:
                termination = Termination.FREE_FLIGHT
                break
            t, (i, j) = upcoming
            if horizon is not None and t > horizon:
                termination = Termination.HORIZON
                break
            if len(events) >= budget:
                termination = Termination.BUDGET
                break

            positions = positions + (t - state.t) * velocities
            v_i, v_j = _exchange(positions[i], positions[j], velocities[i], velocities[j], self.eps_geom)
            events.append(CollisionEvent(
                t=t, i=i, j=j, x_i=positions[i], x_j=positions[j],
                v_i_pre=velocities[i], v_j_pre=velocities[j], v_i_post=v_i, v_j_post=v_j,
            ))
            velocities = velocities.copy()
            velocities[i] = v_i
            velocities[j] = v_j
            state = SystemState(initial.dim, t, positions, velocities)
            if scheduler:
                scheduler.notify(state, i, j)

        self.logger.debug(f"Simulated {len(events)} events for n={initial.n}, d={initial.dim}: {termination.value}")
        return EventLog(header=header, initial=initial, events=tuple(events), termination=termination)

    def _run_to_free_flight(self, start: SystemState, budget: int, direction: str) -> EventLog:
        run = self.simulate(start, None, budget, strategy=self.strategy)
        if run.termination != Termination.FREE_FLIGHT:
            error_msg = f"{direction} extension needed more than {budget} events"
            self.logger.error(error_msg)
            raise EventBudgetError(error_msg)
        return run

    def extend_to_free_flight(self, log: EventLog, max_events: Optional[int] = None) -> EventLog:
        """
        Continue a log forward and backward until no further collision can happen

        Backward collisions are found on a reversed clock and mirrored back. When any are found
        the new initial state sits one time unit before the earliest of them.

        Raises:
            EventBudgetError: when either direction exceeds the budget
        """
        budget = self.ghost_max_events if max_events is None else max_events
        forward: Tuple[CollisionEvent, ...] = ()
        if not log.terminal_free_flight:
            forward = self._run_to_free_flight(log.final_state(), budget, "Forward").events

        initial = log.initial
        backward: List[CollisionEvent] = []
        if not log.backward_free_flight:
            reverse_run = self._run_to_free_flight(_reversed_clock(log.initial), budget, "Backward")
            if reverse_run.events:
                backward = [mirror_event(e) for e in reversed(reverse_run.events)]
                last = reverse_run.final_state()
                initial = _reversed_clock(last.advanced_to(last.t + 1.0))

        if forward or backward:
            self.logger.debug(f"Extended log by {len(backward)} backward and {len(forward)} forward events")
        return EventLog(
            header=log.header,
            initial=initial,
            events=tuple(backward) + log.events + tuple(forward),
            termination=Termination.FREE_FLIGHT,
            backward_free_flight=True,
            ball_ids=log.ball_ids,
        )

    def reverse_replay(self, log: EventLog, at: float, max_events: Optional[int] = None) -> EventLog:
        """
        Negate all velocities at a non-event time and simulate forward on a reversed clock

        The returned log's times are -t; mirror its events to compare them with the events before `at`.
        """
        if np.any(np.abs(log.event_times - at) < self.eps_t):
            raise ValueError(f"t={at!r} coincides with a collision")
        start = _reversed_clock(state_at(log, at))
        horizon = None if math.isinf(log.span_start) else -log.span_start
        return self.simulate(start, horizon, max_events, header=log.header)

    def time_reversal_deviation(self, log: EventLog, at: float) -> Tuple[bool, float]:
        """
        Compare the reversed replay from `at` with the events recorded before `at`

        Returns:
            Tuple of (pair sequences match, worst event-time difference)
        """
        replay = self.reverse_replay(log, at)
        mirrored = [mirror_event(e) for e in reversed(replay.events)]
        prior = [e for e in log.events if e.t < at]
        if [e.pair for e in mirrored] != [e.pair for e in prior]:
            return False, math.inf
        worst = max((abs(a.t - b.t) for a, b in zip(mirrored, prior)), default=0.0)
        return True, worst
