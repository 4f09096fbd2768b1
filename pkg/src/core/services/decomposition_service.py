import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import pdist

from src.core.models import (
    CoverageReport,
    CoverageRow,
    EventLog,
    GhostLog,
    Sextuple,
    TreeStatistics,
)
from src.core.services.bounds_service import ln_interval_bound, ln_offspring_bound
from src.core.services.frame_service import FrameService
from src.core.services.simulation_service import SimulationService, state_at
from src.core.utils.config import CONTACT_DISTANCE
from src.core.utils.errors import ChainLemmaError, CoverageError, DegenerateFamilyError, TreeDepthError
from src.core.utils.union_find import UnionFind

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
SEARCH_ITERATIONS = 200
RELATIVE_TOL = 1e-12


@dataclass(frozen=True)
class SplitResult:
    S1: float
    S2: float
    T0: float
    x_norm_T0: float
    before: Tuple[Tuple[int, ...], Tuple[int, ...]]
    after: Tuple[Tuple[int, ...], Tuple[int, ...]]


def u_interval(S1: float, S2: float, T1: float, T2: float) -> Tuple[float, float]:
    """Inner interval [max(S1, T1), min(S2, T2)], collapsed to a clamped point when empty"""
    U1 = max(S1, T1)
    U2 = min(S2, T2)
    if U1 > U2:
        U1 = U2 = min(max(U1, T1), T2)
    return U1, U2


def chain_schedule(U1: float, U2: float, v_norm: float, beta: float) -> Tuple[int, Tuple[float, ...]]:
    """
    Cut [U1, U2] into pieces short enough that families more than beta apart cannot meet

    Returns:
        Tuple of (k_star, (t_1, ..., t_{k_star + 1})); k_star = 0 means no piece at all
    """
    if not beta > 0.0:
        raise ValueError(f"beta must be positive, got {beta!r}")
    if U2 <= U1:
        return 0, (U1,)
    if v_norm <= 0.0:
        return 1, (U1, U2)
    ratio = (U2 - U1) * v_norm / beta
    k_star = max(1, math.ceil(ratio - 1e-12))
    times = [U1 + (k - 1) * beta / v_norm for k in range(1, k_star + 1)]
    times.append(U2)
    return k_star, tuple(times)


def _split_partition(count: int, edges: Sequence[Tuple[int, int]], ball_ids: Sequence[int]):
    uf = UnionFind(count)
    for a, b in edges:
        uf.union(a, b)
    components = uf.components()
    first = tuple(sorted(ball_ids[k] for k in components[0]))
    rest = tuple(sorted(ball_ids[k] for comp in components[1:] for k in comp))
    return first, rest


def _minimize_convex(f: Callable[[float], float], lo: float, hi: float) -> Tuple[float, float]:
    """Golden-section search on a convex function, returning the earliest minimizer found"""
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(SEARCH_ITERATIONS):
        if b - a <= RELATIVE_TOL * max(1.0, abs(a), abs(b)):
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    candidates = [(lo, f(lo)), ((a + b) / 2.0, f((a + b) / 2.0)), (hi, f(hi))]
    best_value = min(value for _, value in candidates)
    level = best_value + RELATIVE_TOL * max(1.0, best_value)
    t_best = min(t for t, value in candidates if value <= level)

    # the sublevel set of a convex function is an interval; find its left end
    if t_best > lo and f(lo) > level:
        left, right = lo, t_best
        for _ in range(SEARCH_ITERATIONS):
            if right - left <= RELATIVE_TOL * max(1.0, abs(left), abs(right)):
                break
            mid = (left + right) / 2.0
            if f(mid) <= level:
                right = mid
            else:
                left = mid
        t_best = right
    elif f(lo) <= level:
        t_best = lo
    return t_best, f(t_best)


class DecompositionService:
    def __init__(self, simulation_service: SimulationService, frame_service: FrameService,
                 tolerance: float = 1e-8):
        """
        Builds the branching family of subfamilies over a normalized log

        Args:
            simulation_service: Used for free-flight extension of subfamilies
            frame_service: Used for subfamily restriction and pivot times
            tolerance: Relative slack on the per-node inequalities
        """
        self.logger = logging.getLogger(__name__)
        self.simulation_service = simulation_service
        self.frame_service = frame_service
        self.tolerance = tolerance

    def ghost_extend(self, log: EventLog, family: Sequence[int], T1: float, T2: float) -> GhostLog:
        """
        Evolution of an isolated family on [T1, T2], continued with internal collisions only
        until free flight in both directions
        """
        family = tuple(sorted(int(b) for b in family))
        restricted, speed = self.frame_service.subfamily_frame(log, family, T1, T2)
        extended = self.simulation_service.extend_to_free_flight(restricted)
        return GhostLog(log=extended, family=family, T1=T1, T2=T2, speed=speed)

    def split_times(self, ghost: GhostLog) -> SplitResult:
        """
        Smallest [S1, S2] around the pivot time T0 outside of which the family splits in two
        non-interacting parts

        Raises:
            DegenerateFamilyError: when the family has fewer than two balls
        """
        if ghost.n < 2:
            raise DegenerateFamilyError(f"Split times need at least two balls, family is {ghost.family}")
        log = ghost.log
        T0, x_norm = self.frame_service.find_t0(log)
        events = log.events
        n = ghost.n

        # latest p such that events p..m alone connect the family
        S2 = T0
        uf = UnionFind(n)
        for event in reversed(events):
            uf.union(event.i, event.j)
            if uf.connected:
                S2 = max(T0, event.t)
                break

        # earliest q such that events 1..q already connect it
        S1 = T0
        uf = UnionFind(n)
        for event in events:
            uf.union(event.i, event.j)
            if uf.connected:
                S1 = min(T0, event.t)
                break

        before = _split_partition(n, [e.pair for e in events if e.t < S1], log.ball_ids)
        after = _split_partition(n, [e.pair for e in events if e.t > S2], log.ball_ids)
        return SplitResult(S1=S1, S2=S2, T0=T0, x_norm_T0=x_norm, before=before, after=after)

    def r_profile(self, ghost: GhostLog, T1: float, T2: float) -> Tuple[float, float]:
        """
        r(F) = inf over [T1, T2] of the largest center distance within the family, and the
        earliest time attaining it

        The largest distance is convex on each free-flight piece. Infinite ends are cut at the
        last vertex of the pairwise distance parabolas, beyond which nothing decreases.
        """
        if T1 > T2:
            raise ValueError(f"Empty interval [{T1}, {T2}]")
        log = ghost.log
        index = log.index
        count = len(index.base_times)
        if ghost.n < 2:
            first = T1 if math.isfinite(T1) else (T2 if math.isfinite(T2) else index.base_times[0])
            return 0.0, float(first)

        rows, cols = np.triu_indices(ghost.n, 1)
        best_r, best_t = math.inf, math.nan
        for k in range(count):
            anchor = index.base_times[k]
            start = -math.inf if (k == 0 and log.backward_free_flight) else anchor
            end = index.base_times[k + 1] if k + 1 < count else log.span_end
            lo, hi = max(start, T1), min(end, T2)
            if lo > hi:
                continue
            P, V = index.positions[k], index.velocities[k]

            if math.isinf(lo) or math.isinf(hi):
                w = P[rows] - P[cols]
                u = V[rows] - V[cols]
                uu = (u * u).sum(axis=1)
                moving = uu > 0.0
                vertices = -(w[moving] * u[moving]).sum(axis=1) / uu[moving] + anchor
                if math.isinf(lo):
                    lo = min(vertices.min(), hi) if vertices.size else (hi if math.isfinite(hi) else anchor)
                if math.isinf(hi):
                    hi = max(vertices.max(), lo) if vertices.size else lo

            def spread(t: float, P=P, V=V, anchor=anchor) -> float:
                return float(pdist(P + (t - anchor) * V).max())

            t_piece, r_piece = _minimize_convex(spread, lo, hi)
            if math.isinf(best_r) or r_piece < best_r - RELATIVE_TOL * max(1.0, best_r):
                best_r, best_t = r_piece, t_piece
        return float(best_r), float(best_t)

    def beta_partition(self, ghost: GhostLog, t: float, beta: float) -> Tuple[Tuple[int, ...], Tuple[int, ...]]:
        """
        Split the family at time t into the beta-proximity component of its lowest ball and the rest

        Raises:
            ChainLemmaError: when every ball is chained to every other one
        """
        state = state_at(ghost.log, t)
        gaps = pdist(state.positions) - CONTACT_DISTANCE
        rows, cols = np.triu_indices(ghost.n, 1)
        close = gaps <= beta
        adjacency = csr_matrix((np.ones(int(close.sum())), (rows[close], cols[close])), shape=(ghost.n, ghost.n))
        _, labels = connected_components(adjacency, directed=False)
        ids = ghost.log.ball_ids
        first = tuple(sorted(ids[k] for k in range(ghost.n) if labels[k] == labels[0]))
        rest = tuple(sorted(ids[k] for k in range(ghost.n) if labels[k] != labels[0]))
        if not rest:
            error_msg = f"Family {ghost.family} is beta-connected at t={t!r} with beta={beta!r}"
            self.logger.error(error_msg)
            raise ChainLemmaError(error_msg)
        return first, rest

    def _fill_node(self, node: Sextuple, root_log: EventLog) -> Tuple[Optional[GhostLog], Optional[SplitResult]]:
        if node.n_F < 2:
            node.r, node.t_star = 0.0, math.nan
            node.U1, node.U2 = node.T1, node.T2
            return None, None
        ghost = self.ghost_extend(root_log, node.family, node.T1, node.T2)
        split = self.split_times(ghost)
        node.v_norm = ghost.speed
        node.S1, node.S2, node.T0, node.x_norm_T0 = split.S1, split.S2, split.T0, split.x_norm_T0
        node.r, node.t_star = self.r_profile(ghost, node.T1, node.T2)
        node.x_norm_t_star = float(np.linalg.norm(state_at(ghost.log, node.t_star).positions))
        node.U1, node.U2 = u_interval(split.S1, split.S2, node.T1, node.T2)
        return ghost, split

    def _cross_collisions(self, root_log: EventLog, first: Sequence[int], second: Sequence[int],
                          t_a: float, t_b: float) -> List[int]:
        a_set, b_set = set(first), set(second)
        hits = []
        for event_id, event in enumerate(root_log.events):
            if event.t < t_a:
                continue
            if event.t > t_b:
                break
            a, b = root_log.global_pair(event)
            if (a in a_set and b in b_set) or (a in b_set and b in a_set):
                hits.append(event_id)
        return hits

    def build_tree(self, log: EventLog) -> Sextuple:
        """
        Build the branching family over a log with certified free-flight tails

        Returns:
            Root sextuple (all balls on (-inf, inf)) with node ids in pre-order

        Raises:
            TreeDepthError: when a branch is deeper than n + 1 levels
        """
        counter = [0]
        max_depth = log.n + 1

        def grow(family: Tuple[int, ...], T1: float, T2: float, depth: int, kind: str) -> Sextuple:
            if depth > max_depth:
                raise TreeDepthError(f"Branch for family {family} reached depth {depth} > {max_depth}")
            node = Sextuple(node_id=counter[0], family=family, T1=T1, T2=T2, depth=depth, kind=kind)
            counter[0] += 1
            ghost, split = self._fill_node(node, log)

            if node.n_F <= 2:
                node.is_leaf, node.leaf_rule = True, "small"
                return node
            if node.U1 == node.T1 and node.U2 == node.T2:
                node.is_leaf, node.leaf_rule = True, "full_interval"
                return node

            F1, F2 = split.before
            F3, F4 = split.after
            for child in (F1, F2):
                node.offspring.append(grow(child, node.T1, node.U1, depth + 1, "split_before"))
            for child in (F3, F4):
                node.offspring.append(grow(child, node.U2, node.T2, depth + 1, "split_after"))

            if node.r <= 4 * node.n_F:
                # same family and frame, so the parent ghost serves the sub-interval
                inner_r, inner_t_star = self.r_profile(ghost, node.U1, node.U2)
                inner = Sextuple(
                    node_id=counter[0], family=family, T1=node.U1, T2=node.U2, depth=depth + 1, kind="inner",
                    r=inner_r, t_star=inner_t_star,
                    x_norm_t_star=float(np.linalg.norm(state_at(ghost.log, inner_t_star).positions)),
                    U1=node.U1, U2=node.U2, S1=node.S1, S2=node.S2, T0=node.T0, x_norm_T0=node.x_norm_T0,
                    v_norm=node.v_norm, is_leaf=True, leaf_rule="inner",
                )
                counter[0] += 1
                node.offspring.append(inner)
                return node

            node.beta = (node.r - 2 * node.n_F) / (node.n_F - 1)
            node.k_star, times = chain_schedule(node.U1, node.U2, node.v_norm, node.beta)
            for k in range(node.k_star):
                t_a, t_b = times[k], times[k + 1]
                H1, H2 = self.beta_partition(ghost, t_a, node.beta)
                crossing = self._cross_collisions(log, H1, H2, t_a, t_b)
                if crossing:
                    self.logger.warning(
                        f"Chain piece {k + 1} of node {node.node_id} on [{t_a}, {t_b}] has "
                        f"{len(crossing)} cross collisions; keeping the whole family as a leaf"
                    )
                    forced = grow_forced(family, t_a, t_b, depth + 1)
                    node.offspring.append(forced)
                    continue
                node.offspring.append(grow(H1, t_a, t_b, depth + 1, "chain"))
                node.offspring.append(grow(H2, t_a, t_b, depth + 1, "chain"))
            return node

        def grow_forced(family: Tuple[int, ...], T1: float, T2: float, depth: int) -> Sextuple:
            node = Sextuple(node_id=counter[0], family=family, T1=T1, T2=T2, depth=depth, kind="chain")
            counter[0] += 1
            self._fill_node(node, log)
            node.U1, node.U2 = T1, T2
            node.is_leaf, node.leaf_rule = True, "forced"
            return node

        root = grow(tuple(range(log.n)), -math.inf, math.inf, 1, "root")
        self.logger.info(f"Built branching tree with {counter[0]} nodes over {len(log.events)} events")
        return root

    def assign_collisions(self, log: EventLog, root: Sextuple, strict: bool = False) -> CoverageReport:
        """
        Assign every collision to the leaf whose open interval holds it, or else to an endpoint
        bucket of a node containing both balls

        Raises:
            CoverageError: in strict mode, when a collision is uncovered or covered twice
        """
        nodes = list(root.walk())
        leaves = [node for node in nodes if node.is_leaf]
        families = {node.node_id: set(node.family) for node in nodes}
        leaf_counts: Dict[int, int] = {leaf.node_id: 0 for leaf in leaves}
        rows: List[CoverageRow] = []
        double_covered: List[int] = []

        for event_id, event in enumerate(log.events):
            a, b = log.global_pair(event)
            t = event.t
            holders = [
                leaf for leaf in leaves
                if a in families[leaf.node_id] and b in families[leaf.node_id] and leaf.T1 < t < leaf.T2
            ]
            if holders:
                if len(holders) > 1:
                    double_covered.append(event_id)
                leaf_counts[holders[0].node_id] += 1
                rows.append(CoverageRow(event_id, t, a, b, "open", leaf_id=holders[0].node_id,
                                        node_id=holders[0].node_id))
                continue
            endpoint = next(
                (node for node in nodes
                 if a in families[node.node_id] and b in families[node.node_id] and t in (node.T1, node.T2)),
                None,
            )
            if endpoint is None:
                endpoint = next((node for node in nodes if t in (node.T1, node.T2)), None)
            if endpoint is not None:
                rows.append(CoverageRow(event_id, t, a, b, "endpoint", node_id=endpoint.node_id))
            else:
                rows.append(CoverageRow(event_id, t, a, b, "uncovered"))

        bound_violations: List[int] = []
        radius_violations: List[int] = []
        worst_ratio = -math.inf
        for leaf in leaves:
            count = leaf_counts[leaf.node_id]
            if leaf.n_F <= 2:
                ln_bound = 0.0
            elif leaf.x_norm_t_star > 0.0:
                ln_bound = ln_interval_bound(leaf.n_F, log.dim, leaf.x_norm_t_star)
            else:
                ln_bound = -math.inf
            if count > 0:
                ratio = math.log(count) - ln_bound
                worst_ratio = max(worst_ratio, ratio)
                if ratio > 0.0:
                    bound_violations.append(leaf.node_id)
            if leaf.T1 < leaf.T2 and leaf.n_F > 2 and leaf.r > 4 * leaf.n_F * (1.0 + self.tolerance):
                radius_violations.append(leaf.node_id)

        report = CoverageReport(
            rows=rows,
            leaf_counts=leaf_counts,
            double_covered=double_covered,
            leaf_bound_violations=bound_violations,
            leaf_radius_violations=radius_violations,
            worst_leaf_ratio=worst_ratio if math.isfinite(worst_ratio) else 0.0,
        )
        if not report.complete:
            error_msg = (f"{len(report.uncovered)} uncovered and {len(double_covered)} doubly covered "
                         f"collisions out of {len(rows)}")
            if strict:
                self.logger.error(error_msg)
                raise CoverageError(error_msg)
            self.logger.warning(error_msg)
        return report

    def tree_statistics(self, root: Sextuple) -> TreeStatistics:
        """Structural counts and the worst per-node inequality ratios of a built tree"""
        stats = TreeStatistics()
        parents: Dict[int, Sextuple] = {}
        for node in root.walk():
            for child in node.offspring:
                parents[child.node_id] = node
            stats.node_count += 1
            stats.depth = max(stats.depth, node.depth)
            if node.is_leaf:
                stats.leaf_count += 1
            if node.leaf_rule == "forced":
                stats.forced_leaves += 1
                parent = parents[node.node_id]
                stats.chain_violations.append((parent.node_id, node.node_id, node.T1, node.T2))
            offspring = len(node.offspring)
            stats.max_offspring = max(stats.max_offspring, offspring)
            if offspring:
                stats.max_offspring_ratio = max(stats.max_offspring_ratio,
                                                offspring / math.exp(ln_offspring_bound(node.n_F)))

            if node.n_F < 2 or node.kind == "inner":
                continue
            n3 = node.n_F ** 3
            if node.r > 0.0:
                stats.worst_radius_ratio = max(stats.worst_radius_ratio,
                                               node.x_norm_t_star / (math.sqrt(node.n_F) * node.r))
            width = (node.U2 - node.U1) * node.v_norm
            if width > 0.0:
                ratio = width / (200 * n3 * node.x_norm_t_star) if node.x_norm_t_star > 0.0 else math.inf
                stats.worst_interval_ratio = max(stats.worst_interval_ratio, ratio)
            reach = max(node.S2 - node.T0, node.T0 - node.S1) * node.v_norm
            if reach > 0.0:
                ratio = reach / (100 * n3 * node.x_norm_T0) if node.x_norm_T0 > 0.0 else math.inf
                stats.worst_split_ratio = max(stats.worst_split_ratio, ratio)
        return stats
