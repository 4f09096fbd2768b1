import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import numpy as np

from src.core.models import (
    CheckResult,
    CoverageReport,
    EventLog,
    FrameReport,
    RunReport,
    Sextuple,
    TreeStatistics,
)
from src.core.services.bounds_service import ln_main_bound, ln_tree_size_bound, ln_window_bound
from src.core.services.decomposition_service import DecompositionService
from src.core.services.frame_service import FrameService
from src.core.services.simulation_service import (
    SimulationService,
    min_gap,
    replay_check,
    window_statistics,
)
from src.core.utils.config import CONTACT_DISTANCE, EPS_GEOM, EPS_NUM, EPS_T
from src.core.utils.errors import CollisionLabError

EXCHANGE_TOL = 1e-12
REVERSAL_TOL = 1e-8
RATIO_TOL = 1e-8
ALPHA_TOL = 1e-7
T0_SAMPLES = 1000


@dataclass
class AnalysisResult:
    """Everything the analyze pipeline produces for one log"""
    report: RunReport
    extended: Optional[EventLog] = None
    normalized: Optional[EventLog] = None
    frame: Optional[FrameReport] = None
    root: Optional[Sextuple] = None
    coverage: Optional[CoverageReport] = None
    stats: Optional[TreeStatistics] = None


def _ratio_check(name: str, ratio: float, detail: str) -> CheckResult:
    return CheckResult(name, bool(ratio <= 1.0 + RATIO_TOL), float(1.0 - ratio), detail)


class VerificationService:
    def __init__(self, simulation_service: SimulationService, frame_service: FrameService,
                 decomposition_service: DecompositionService, eps_num: float = EPS_NUM,
                 eps_geom: float = EPS_GEOM, eps_t: float = EPS_T):
        """
        Runs the analysis pipeline on a log and records every invariant as a named check

        A check's margin is positive when it passes: tolerance minus observed deviation for
        conservation-type checks, one minus the observed ratio for bound-type checks.
        """
        self.logger = logging.getLogger(__name__)
        self.simulation_service = simulation_service
        self.frame_service = frame_service
        self.decomposition_service = decomposition_service
        self.eps_num = eps_num
        self.eps_geom = eps_geom
        self.eps_t = eps_t

    @classmethod
    def create(cls, max_events: int = 100000, ghost_max_events: int = 100000,
               strategy: str = "queue") -> "VerificationService":
        """Build the full service chain; used by batch workers that cannot share the parent's instances"""
        simulation = SimulationService(max_events=max_events, ghost_max_events=ghost_max_events, strategy=strategy)
        frames = FrameService()
        return cls(simulation, frames, DecompositionService(simulation, frames))

    # -- dynamics checks on the recorded log --

    def check_energy(self, log: EventLog) -> CheckResult:
        velocities = log.index.velocities
        energies = (velocities ** 2).sum(axis=(1, 2))
        scale = max(float(energies[0]), 1e-300)
        drift = float(np.abs(energies - energies[0]).max()) / scale
        return CheckResult("energy", drift <= self.eps_num, self.eps_num - drift,
                           f"relative energy drift {drift:.3e} over {len(log.events)} events")

    def check_momentum(self, log: EventLog) -> CheckResult:
        velocities = log.index.velocities
        momenta = velocities.sum(axis=1)
        scale = max(float(np.linalg.norm(velocities[0])) * math.sqrt(log.n), 1e-300)
        drift = float(np.abs(momenta - momenta[0]).max()) / scale
        return CheckResult("momentum", drift <= self.eps_num, self.eps_num - drift,
                           f"relative momentum drift {drift:.3e}")

    def check_min_gap(self, log: EventLog) -> CheckResult:
        gap = min_gap(log)
        floor = CONTACT_DISTANCE - self.eps_geom
        return CheckResult("min_gap", gap >= floor, gap - floor, f"smallest center distance {gap}")

    def check_exchange_law(self, log: EventLog) -> CheckResult:
        """Normal components swapped, tangential components unchanged at every event"""
        worst = 0.0
        for event in log.events:
            normal = event.x_j - event.x_i
            normal = normal / np.linalg.norm(normal)
            scale = max(1.0, float(np.abs(np.concatenate([event.v_i_pre, event.v_j_pre])).max()))
            pre_i, pre_j = event.v_i_pre @ normal, event.v_j_pre @ normal
            post_i, post_j = event.v_i_post @ normal, event.v_j_post @ normal
            deviations = (
                abs(post_i - pre_j),
                abs(post_j - pre_i),
                float(np.abs((event.v_i_post - post_i * normal) - (event.v_i_pre - pre_i * normal)).max()),
                float(np.abs((event.v_j_post - post_j * normal) - (event.v_j_pre - pre_j * normal)).max()),
            )
            worst = max(worst, max(deviations) / scale)
        return CheckResult("exchange_law", worst <= EXCHANGE_TOL, EXCHANGE_TOL - worst,
                           f"worst exchange deviation {worst:.3e}")

    def check_event_order(self, log: EventLog) -> CheckResult:
        times = log.event_times
        if times.size < 2:
            return CheckResult("event_order", True, math.inf, "fewer than two events")
        gap = float(np.diff(times).min())
        return CheckResult("event_order", gap > self.eps_t, gap - self.eps_t,
                           f"closest consecutive events {gap:.3e} apart")

    def check_contact(self, log: EventLog) -> CheckResult:
        worst = 0.0
        for event in log.events:
            worst = max(worst, abs(float(np.linalg.norm(event.x_i - event.x_j)) - CONTACT_DISTANCE))
        return CheckResult("contact", worst <= self.eps_geom, self.eps_geom - worst,
                           f"worst contact residual {worst:.3e}")

    def check_replay(self, log: EventLog) -> CheckResult:
        try:
            worst = replay_check(log, self.eps_num)
        except CollisionLabError as e:
            return CheckResult("replay", False, -math.inf, str(e))
        return CheckResult("replay", True, self.eps_num - worst, f"worst replay deviation {worst:.3e}")

    @staticmethod
    def _reversal_time(log: EventLog) -> Optional[float]:
        if not log.events:
            return None
        last = log.events[-1].t
        if log.span_end > last:
            return last + min(1.0, log.span_end - last) / 2.0
        if len(log.events) >= 2:
            return (log.events[-2].t + last) / 2.0
        return (log.initial.t + last) / 2.0

    def check_time_reversal(self, log: EventLog) -> CheckResult:
        at = self._reversal_time(log)
        if at is None:
            return CheckResult("time_reversal", True, REVERSAL_TOL, "no events to reverse")
        try:
            match, worst = self.simulation_service.time_reversal_deviation(log, at)
        except CollisionLabError as e:
            return CheckResult("time_reversal", False, -math.inf, f"reversed replay from t={at} failed: {e}")
        if not match:
            return CheckResult("time_reversal", False, -math.inf, f"pair sequence differs on reversal from t={at}")
        tol = REVERSAL_TOL * max(1.0, abs(at), abs(log.initial.t))
        return CheckResult("time_reversal", worst <= tol, tol - worst,
                           f"worst event-time difference {worst:.3e} reversing from t={at}")

    # -- checks on the normalized log --

    def check_locality(self, normalized: EventLog) -> List[CheckResult]:
        partners, count = window_statistics(normalized)
        cap = 5 ** normalized.dim
        ln_count = math.log(count) if count else -math.inf
        ln_bound = ln_window_bound(normalized.n, normalized.dim)
        return [
            CheckResult("locality", partners <= cap, float(cap - partners),
                        f"max {partners} distinct partners per ball in a unit window (cap {cap})"),
            CheckResult("window_count", ln_count <= ln_bound, ln_bound - ln_count,
                        f"max {count} collisions in a unit window"),
        ]

    def check_t0_minimality(self, normalized: EventLog, frame: FrameReport) -> CheckResult:
        """|x(t0)| against a dense sample of |x(t)| around all the events"""
        t0, x_norm = frame.t0, frame.x_norm_at_t0
        times = normalized.event_times
        lo = min(float(times[0]) if times.size else t0, t0) - 1.0
        hi = max(float(times[-1]) if times.size else t0, t0) + 1.0
        index = normalized.index
        sampled = min(
            float(np.linalg.norm(index.positions_at(float(t))[0])) for t in np.linspace(lo, hi, T0_SAMPLES)
        )
        slack = sampled - x_norm + self.eps_num * max(1.0, x_norm)
        return CheckResult("t0_minimality", slack >= 0.0, slack,
                           f"|x(t0)|={x_norm}, smallest sampled {sampled}")

    @staticmethod
    def check_alpha_sign(frame: FrameReport) -> CheckResult:
        """x(t).v(t+) is non-positive before t0 and non-negative after"""
        worst = math.inf
        for t, alpha in frame.alpha_profile or ():
            if math.isnan(alpha):
                continue
            slack = (alpha - math.pi / 2) if t < frame.t0 else (math.pi / 2 - alpha)
            worst = min(worst, slack + ALPHA_TOL)
        if math.isinf(worst):
            return CheckResult("alpha_sign", True, math.inf, "no samples")
        return CheckResult("alpha_sign", worst >= 0.0, worst, "angle between x and v on each side of t0")

    @staticmethod
    def check_root_split(root: Sextuple, n: int) -> CheckResult:
        """S2 - T0 and T0 - S1 both within 100 n^3 |x(T0)| / |v|"""
        if root.S1 is None or root.x_norm_T0 is None:
            return CheckResult("root_split", True, math.inf, "single ball")
        reach = max(root.S2 - root.T0, root.T0 - root.S1) * root.v_norm
        allowed = 100 * n ** 3 * root.x_norm_T0
        ratio = reach / allowed if allowed > 0.0 else (0.0 if reach == 0.0 else math.inf)
        return _ratio_check("root_split", ratio,
                            f"S1={root.S1}, S2={root.S2}, T0={root.T0}, S2-S1={root.S2 - root.S1}")

    # -- tree checks --

    @staticmethod
    def check_tree(stats: TreeStatistics, n: int) -> List[CheckResult]:
        ln_nodes = math.log(stats.node_count)
        ln_size = ln_tree_size_bound(n)
        return [
            CheckResult("tree_depth", stats.depth <= n, float(n - stats.depth), f"depth {stats.depth} for n={n}"),
            _ratio_check("offspring", stats.max_offspring_ratio, f"max offspring {stats.max_offspring}"),
            CheckResult("tree_size", ln_nodes <= ln_size, ln_size - ln_nodes, f"{stats.node_count} nodes"),
            _ratio_check("node_radius", stats.worst_radius_ratio, "|x_F(t*)| against sqrt(n_F) r(F)"),
            _ratio_check("node_interval", stats.worst_interval_ratio, "(U2 - U1)|v_F| against 200 n_F^3 |x_F(t*)|"),
            _ratio_check("node_split", stats.worst_split_ratio, "split reach against 100 n_F^3 |x_F(T0)|"),
            CheckResult("chain_isolation", not stats.chain_violations, -float(len(stats.chain_violations)),
                        f"{len(stats.chain_violations)} chain pieces with cross collisions"),
        ]

    @staticmethod
    def check_coverage(coverage: CoverageReport, event_count: int, n: int, d: int) -> List[CheckResult]:
        ln_total = math.log(event_count) if event_count else -math.inf
        ln_main = ln_main_bound(n, d)
        return [
            CheckResult("coverage", coverage.complete, -float(len(coverage.uncovered) + len(coverage.double_covered)),
                        f"{len(coverage.uncovered)} uncovered, {len(coverage.double_covered)} doubly covered"),
            CheckResult("leaf_counts", not coverage.leaf_bound_violations, -coverage.worst_leaf_ratio,
                        f"{len(coverage.leaf_bound_violations)} leaves over their interval bound"),
            CheckResult("leaf_radius", not coverage.leaf_radius_violations,
                        -float(len(coverage.leaf_radius_violations)),
                        f"{len(coverage.leaf_radius_violations)} leaves with r(F) > 4 n_F"),
            CheckResult("total_count", ln_total <= ln_main, ln_main - ln_total,
                        f"{event_count} collisions against the population bound"),
        ]

    def analyze(self, log: EventLog, run_id: str, scenario: Optional[Dict[str, Any]] = None) -> AnalysisResult:
        """
        Full pipeline for one log: dynamics checks, free-flight extension, normalization,
        branching tree, coverage and tree checks

        Args:
            log: Recorded log, any termination
            run_id: Identifier recorded in the report
            scenario: Scenario description for the report (defaults to the log header's)

        Returns:
            AnalysisResult whose report carries every check; domain errors propagate
        """
        report = RunReport(run_id=run_id, scenario=scenario if scenario is not None else log.header.scenario,
                           event_count=len(log.events))
        result = AnalysisResult(report=report)

        self.logger.info(f"[{run_id}] Step 1/5: Checking {len(log.events)} recorded events...")
        for check in (self.check_energy(log), self.check_momentum(log), self.check_min_gap(log),
                      self.check_exchange_law(log), self.check_event_order(log), self.check_contact(log),
                      self.check_replay(log), self.check_time_reversal(log)):
            report.add_check(check)

        self.logger.info(f"[{run_id}] Step 2/5: Extending to free flight and normalizing...")
        result.extended = self.simulation_service.extend_to_free_flight(log)
        result.normalized, result.frame = self.frame_service.normalize(result.extended)
        report.event_count = len(result.normalized.events)
        report.t0, report.x_norm_at_t0 = result.frame.t0, result.frame.x_norm_at_t0
        for check in self.check_locality(result.normalized):
            report.add_check(check)
        report.add_check(self.check_t0_minimality(result.normalized, result.frame))
        report.add_check(self.check_alpha_sign(result.frame))

        self.logger.info(f"[{run_id}] Step 3/5: Building branching tree...")
        result.root = self.decomposition_service.build_tree(result.normalized)
        if result.root.S1 is not None:
            report.root_split = (result.root.S1, result.root.S2)
        report.add_check(self.check_root_split(result.root, log.n))

        self.logger.info(f"[{run_id}] Step 4/5: Assigning collisions to leaves...")
        result.coverage = self.decomposition_service.assign_collisions(result.normalized, result.root)
        for check in self.check_coverage(result.coverage, len(result.normalized.events), log.n, log.dim):
            report.add_check(check)

        self.logger.info(f"[{run_id}] Step 5/5: Checking tree inequalities...")
        result.stats = self.decomposition_service.tree_statistics(result.root)
        report.tree = result.stats
        for check in self.check_tree(result.stats, log.n):
            report.add_check(check)

        failed = [check.name for check in report.checks if not check.passed]
        if failed:
            self.logger.warning(f"[{run_id}] {len(failed)} checks failed: {', '.join(failed)}")
        else:
            self.logger.info(f"[{run_id}] All {len(report.checks)} checks passed")
        return result
