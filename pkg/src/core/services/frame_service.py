import logging
import math
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from src.core.models import CollisionEvent, EventLog, FrameReport, LogHeader, SystemState, Termination
from src.core.services.simulation_service import state_at
from src.core.utils.config import EPS_NUM
from src.core.utils.errors import ExternalCollisionError, UncertifiedTailError, ZeroEnergyError


def configuration_pieces(log: EventLog) -> List[Tuple[float, float, np.ndarray, np.ndarray, float]]:
    """
    Free-flight pieces of the composite configuration vector x(t) in R^{nd}

    Returns:
        List of (start, end, X, V, anchor) with x(t) = X + (t - anchor) V on [start, end];
        certified tails open the first and last piece to -inf / +inf
    """
    index = log.index
    count = len(index.base_times)
    pieces = []
    for k in range(count):
        start = index.base_times[k]
        end = index.base_times[k + 1] if k + 1 < count else log.span_end
        if k == 0 and log.backward_free_flight:
            start = -math.inf
        pieces.append((start, end, index.positions[k].ravel(), index.velocities[k].ravel(), index.base_times[k]))
    return pieces


def _clamped_vertex(X: np.ndarray, V: np.ndarray, lo: float, hi: float) -> Optional[float]:
    """Minimizer offset of |X + s V|^2 over s in [lo, hi] (earliest point when V = 0)"""
    a = float(V @ V)
    if a == 0.0:
        return lo if math.isfinite(lo) else (0.0 if lo <= 0.0 <= hi else hi)
    s = -float(X @ V) / a
    return min(max(s, lo), hi)


class FrameService:
    def __init__(self, eps_num: float = EPS_NUM):
        """Frame changes on recorded logs: normalized frame, pivot time, subfamily frames"""
        self.logger = logging.getLogger(__name__)
        self.eps_num = eps_num

    def normalize(self, log: EventLog) -> Tuple[EventLog, FrameReport]:
        """
        Move a log to the frame with zero momentum, center of mass at the origin and |v| = 1

        Times are rescaled about the initial time so straight-line paths are unchanged.

        Raises:
            ZeroEnergyError: when every ball moves with the same velocity
        """
        n = log.n
        origin = log.initial.t
        drift = log.initial.velocities.sum(axis=0) / n
        center0 = log.initial.positions.mean(axis=0)
        relative = log.initial.velocities - drift
        energy = float((relative ** 2).sum())
        velocity_scale = max(1.0, float(np.abs(log.initial.velocities).max()))
        if energy == 0.0 or math.sqrt(energy) <= self.eps_num * velocity_scale:
            raise ZeroEnergyError(f"Kinetic energy {energy:.3e} in the center-of-mass frame is zero")
        c1 = 1.0 / math.sqrt(energy)

        def to_time(t: float) -> float:
            return origin + (t - origin) / c1

        def to_position(x: np.ndarray, t: float) -> np.ndarray:
            return x - (center0 + (t - origin) * drift)

        def to_velocity(v: np.ndarray) -> np.ndarray:
            return c1 * (v - drift)

        initial = SystemState(log.dim, origin, to_position(log.initial.positions, origin), to_velocity(log.initial.velocities))
        events = tuple(
            CollisionEvent(
                t=to_time(e.t), i=e.i, j=e.j,
                x_i=to_position(e.x_i, e.t), x_j=to_position(e.x_j, e.t),
                v_i_pre=to_velocity(e.v_i_pre), v_j_pre=to_velocity(e.v_j_pre),
                v_i_post=to_velocity(e.v_i_post), v_j_post=to_velocity(e.v_j_post),
            )
            for e in log.events
        )
        horizon = to_time(log.header.horizon) if log.header.horizon is not None else None
        header = LogHeader(n=n, d=log.dim, seed=log.header.seed, scenario=log.header.scenario,
                           horizon=horizon, format_version=log.header.format_version, rng=log.header.rng)
        normalized = EventLog(header, initial, events, log.termination, log.backward_free_flight, log.ball_ids)

        t0 = x_norm = alpha = None
        if normalized.tails_certified:
            t0, x_norm = self.find_t0(normalized)
            alpha = self.alpha_profile(normalized, self._alpha_sample_times(normalized, t0))

        report = FrameReport(
            momentum_shift=tuple(drift.tolist()),
            center_at_origin=tuple(center0.tolist()),
            origin_time=origin,
            speed_scale=c1,
            t0=t0,
            x_norm_at_t0=x_norm,
            alpha_profile=alpha,
        )
        self.logger.info(f"Normalized {len(events)}-event log: speed scale {c1:.6g}, t0={t0}")
        return normalized, report

    def find_t0(self, log: EventLog) -> Tuple[float, float]:
        """
        Global minimizer of |x(t)| over a log with certified free-flight tails

        |x(t)|^2 is a quadratic a t^2 + 2 b t + c on each piece with a = |v|^2 >= 0; the vertex
        is clamped into each piece and the smallest value wins, ties going to the earliest time.

        Returns:
            Tuple of (t0, |x(t0)|)

        Raises:
            UncertifiedTailError: when either tail is not certified free flight
        """
        if not log.tails_certified:
            raise UncertifiedTailError("Both tails must be certified free flight to locate the pivot time")
        best_t, best_norm = math.nan, math.inf
        for start, end, X, V, anchor in configuration_pieces(log):
            offset = _clamped_vertex(X, V, start - anchor, end - anchor)
            norm = float(np.linalg.norm(X + offset * V))
            if norm < best_norm:
                # clamped vertices land on the piece ends exactly
                if offset == end - anchor:
                    t = end
                elif offset == start - anchor:
                    t = start
                else:
                    t = anchor + offset
                best_t, best_norm = t, norm
        return float(best_t), best_norm

    def alpha_profile(self, log: EventLog, times: Iterable[float]) -> Tuple[Tuple[float, float], ...]:
        """Angle between x(t) and v(t+) at the given times (nan where either vector vanishes)"""
        profile = []
        for t in times:
            state = state_at(log, t)
            x = state.positions.ravel()
            v = state.velocities.ravel()
            denom = float(np.linalg.norm(x) * np.linalg.norm(v))
            if denom == 0.0:
                profile.append((t, math.nan))
                continue
            cosine = min(1.0, max(-1.0, float(x @ v) / denom))
            profile.append((t, math.acos(cosine)))
        return tuple(profile)

    @staticmethod
    def _alpha_sample_times(log: EventLog, t0: float, per_side: int = 8) -> List[float]:
        times = log.event_times
        lo = float(times[0]) - 1.0 if times.size else t0 - 1.0
        hi = float(times[-1]) + 1.0 if times.size else t0 + 1.0
        lo, hi = min(lo, t0 - 1.0), max(hi, t0 + 1.0)
        before = np.linspace(lo, t0, per_side, endpoint=False)
        after = np.linspace(hi, t0, per_side, endpoint=False)[::-1]
        return before.tolist() + after.tolist()

    def subfamily_frame(self, log: EventLog, family: Sequence[int], T1: float, T2: float) -> Tuple[EventLog, float]:
        """
        Restrict a log to an isolated subfamily on [T1, T2] and move it to the subfamily's
        center-of-mass frame

        Events exactly at T1 are already folded into v(T1+); internal events at T2 are kept and
        external events at T2 are dropped.

        Returns:
            Tuple of (restricted log with local indices, |v_F| in that frame)

        Raises:
            ExternalCollisionError: when a ball of the family collides with an outside ball in (T1, T2)
        """
        family = tuple(sorted(int(b) for b in family))
        members = set(family)
        local = {ball: k for k, ball in enumerate(family)}

        internal: List[CollisionEvent] = []
        for event in log.events:
            if event.t > T2:
                break
            inside = (event.i in members) + (event.j in members)
            if T1 < event.t < T2 and inside == 1:
                error_msg = f"Family {family} collides externally with pair {event.pair} at t={event.t!r}"
                self.logger.error(error_msg)
                raise ExternalCollisionError(error_msg)
            if inside == 2 and event.t > T1:
                internal.append(event)

        start = log.initial if math.isinf(T1) else state_at(log, T1)
        start = start.restricted(family)
        n_f = len(family)
        drift = start.velocities.sum(axis=0) / n_f
        center0 = start.positions.mean(axis=0)
        origin = start.t

        def to_position(x: np.ndarray, t: float) -> np.ndarray:
            return x - (center0 + (t - origin) * drift)

        initial = SystemState(log.dim, origin, start.positions - center0, start.velocities - drift)
        events = tuple(
            CollisionEvent(
                t=e.t, i=local[e.i], j=local[e.j],
                x_i=to_position(e.x_i, e.t), x_j=to_position(e.x_j, e.t),
                v_i_pre=e.v_i_pre - drift, v_j_pre=e.v_j_pre - drift,
                v_i_post=e.v_i_post - drift, v_j_post=e.v_j_post - drift,
            )
            for e in internal
        )
        speed = float(np.linalg.norm(initial.velocities))

        if math.isinf(T2):
            termination, horizon = log.termination, None
        else:
            termination, horizon = Termination.HORIZON, T2
        header = LogHeader(n=n_f, d=log.dim, seed=log.header.seed, scenario=log.header.scenario,
                           horizon=horizon, format_version=log.header.format_version, rng=log.header.rng)
        restricted = EventLog(
            header=header,
            initial=initial,
            events=events,
            termination=termination,
            backward_free_flight=log.backward_free_flight if math.isinf(T1) else False,
            ball_ids=tuple(log.ball_ids[b] for b in family),
        )
        return restricted, speed
