import math

import numpy as np
import pytest
from scipy.spatial.distance import pdist

from src.core.models import EventLog, GhostLog, LogHeader, Sextuple, Termination
from src.core.services.decomposition_service import DecompositionService, chain_schedule, u_interval
from src.core.services.frame_service import FrameService
from src.core.services.simulation_service import state_at
from src.core.utils.errors import ChainLemmaError, CoverageError, DegenerateFamilyError
from src.core.utils.union_find import UnionFind
from tests.conftest import state, static_log, synthetic_event


class FixedPivotFrames:
    """Frame service stand-in whose pivot time is fixed"""

    def __init__(self, T0):
        self.T0 = T0

    def find_t0(self, log):
        return self.T0, 1.0


class PinnedPivotFrames(FrameService):
    """Real subfamily frames, but every family pivots at the same time"""

    def __init__(self, T0):
        super().__init__()
        self.T0 = T0

    def find_t0(self, log):
        return self.T0, float(np.linalg.norm(state_at(log, self.T0).positions))


def chain_ghost(event_specs, n=3):
    initial = state(np.zeros((n, 2)), np.zeros((n, 2)))
    events = tuple(synthetic_event(t, i, j) for t, i, j in event_specs)
    log = EventLog(LogHeader(n=n, d=2), initial, events, Termination.FREE_FLIGHT, backward_free_flight=True)
    return GhostLog(log=log, family=tuple(range(n)), T1=-math.inf, T2=math.inf, speed=1.0)


def ghost_of(log):
    return GhostLog(log=log, family=tuple(range(log.n)), T1=-math.inf, T2=math.inf, speed=1.0)


class TestUInterval:
    def test_inside(self):
        assert u_interval(1.0, 3.0, 0.0, 5.0) == (1.0, 3.0)

    def test_clipped(self):
        assert u_interval(1.0, 3.0, 2.0, 5.0) == (2.0, 3.0)

    def test_empty_collapses_to_a_point(self):
        assert u_interval(4.0, 6.0, 0.0, 2.0) == (2.0, 2.0)

    def test_infinite_node(self):
        assert u_interval(1.0, 1.0, -math.inf, math.inf) == (1.0, 1.0)


class TestChainSchedule:
    def test_pieces(self):
        assert chain_schedule(0.0, 10.0, 1.0, 3.0) == (4, (0.0, 3.0, 6.0, 9.0, 10.0))

    def test_exact_multiple(self):
        assert chain_schedule(0.0, 9.0, 1.0, 3.0) == (3, (0.0, 3.0, 6.0, 9.0))

    def test_point_interval(self):
        assert chain_schedule(2.0, 2.0, 1.0, 3.0) == (0, (2.0,))

    def test_frozen_family(self):
        assert chain_schedule(0.0, 10.0, 0.0, 3.0) == (1, (0.0, 10.0))

    def test_beta_must_be_positive(self):
        with pytest.raises(ValueError):
            chain_schedule(0.0, 1.0, 1.0, 0.0)


class TestSplitTimes:
    EVENTS = [(1.0, 0, 1), (2.0, 1, 2), (3.0, 0, 1)]

    def service(self, simulation_service, T0):
        return DecompositionService(simulation_service, FixedPivotFrames(T0))

    def test_pivot_before_connection(self, simulation_service):
        split = self.service(simulation_service, 1.5).split_times(chain_ghost(self.EVENTS))
        assert (split.S1, split.S2) == (1.5, 2.0)
        assert split.before == ((0, 1), (2,))
        assert split.after == ((0, 1), (2,))

    def test_pivot_after_connection(self, simulation_service):
        split = self.service(simulation_service, 2.5).split_times(chain_ghost(self.EVENTS))
        assert (split.S1, split.S2) == (2.0, 2.5)
        assert split.before == ((0, 1), (2,))
        assert split.after == ((0, 1), (2,))

    def test_no_events(self, simulation_service):
        split = self.service(simulation_service, 4.0).split_times(chain_ghost([]))
        assert (split.S1, split.S2, split.T0) == (4.0, 4.0, 4.0)
        assert split.before == ((0,), (1, 2))

    def test_partitions_use_global_ids(self, simulation_service):
        ghost = chain_ghost(self.EVENTS)
        log = ghost.log
        relabelled = EventLog(log.header, log.initial, log.events, log.termination, True, ball_ids=(4, 7, 9))
        ghost = GhostLog(log=relabelled, family=(4, 7, 9), T1=-math.inf, T2=math.inf, speed=1.0)
        split = self.service(simulation_service, 1.5).split_times(ghost)
        assert split.before == ((4, 7), (9,))

    def test_single_ball(self, simulation_service):
        with pytest.raises(DegenerateFamilyError):
            self.service(simulation_service, 0.0).split_times(chain_ghost([], n=1))


class TestRProfile:
    def test_static_triangle(self, decomposition_service):
        ghost = ghost_of(static_log([[0.0, 0.0], [3.0, 0.0], [0.0, 4.0]]))
        r, t = decomposition_service.r_profile(ghost, -math.inf, math.inf)
        assert r == pytest.approx(5.0)
        assert t == 0.0

    def test_passing_pair(self, decomposition_service):
        ghost = ghost_of(static_log([[-5.0, 6.0], [5.0, 0.0]], [[1.0, 0.0], [-1.0, 0.0]]))
        r, t = decomposition_service.r_profile(ghost, -math.inf, math.inf)
        assert r == pytest.approx(6.0)
        assert t == pytest.approx(5.0)

    def test_bounded_interval(self, decomposition_service):
        ghost = ghost_of(static_log([[-5.0, 6.0], [5.0, 0.0]], [[1.0, 0.0], [-1.0, 0.0]]))
        r, t = decomposition_service.r_profile(ghost, 0.0, 2.0)
        assert r == pytest.approx(math.hypot(6.0, 6.0), rel=1e-9)
        assert t == pytest.approx(2.0)

    def test_empty_interval(self, decomposition_service):
        ghost = ghost_of(static_log([[0.0, 0.0], [3.0, 0.0]]))
        with pytest.raises(ValueError):
            decomposition_service.r_profile(ghost, 2.0, 1.0)


class TestBetaPartition:
    def test_lowest_ball_component(self, decomposition_service):
        ghost = ghost_of(static_log([[0.0, 0.0], [3.0, 0.0], [15.0, 0.0]]))
        assert decomposition_service.beta_partition(ghost, 0.0, 7.0) == ((0, 1), (2,))

    def test_bridged_by_a_middle_ball(self, decomposition_service):
        ghost = ghost_of(static_log([[0.0, 0.0], [20.0, 0.0], [10.0, 0.0], [40.0, 0.0]]))
        assert decomposition_service.beta_partition(ghost, 0.0, 8.0) == ((0, 1, 2), (3,))

    def test_connected_family_raises(self, decomposition_service):
        ghost = ghost_of(static_log([[0.0, 0.0], [3.0, 0.0], [15.0, 0.0]]))
        with pytest.raises(ChainLemmaError):
            decomposition_service.beta_partition(ghost, 0.0, 20.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_union_find(self, decomposition_service, seed):
        rng = np.random.default_rng(seed)
        positions = rng.uniform(-30.0, 30.0, (6, 2))
        beta = 6.0
        uf = UnionFind(6)
        gaps = pdist(positions) - 2.0
        rows, cols = np.triu_indices(6, 1)
        for a, b, gap in zip(rows, cols, gaps):
            if gap <= beta:
                uf.union(int(a), int(b))
        expected_first = tuple(sorted(uf.components()[0]))
        ghost = ghost_of(static_log(positions))
        if uf.connected:
            with pytest.raises(ChainLemmaError):
                decomposition_service.beta_partition(ghost, 0.0, beta)
            return
        first, rest = decomposition_service.beta_partition(ghost, 0.0, beta)
        assert first == expected_first
        assert sorted(first + rest) == list(range(6))


class TestGhostExtend:
    def test_receding_pair_met_in_the_past(self, decomposition_service, simulation_service, make_state):
        log = simulation_service.simulate(make_state([[-3.0, 0.0], [3.0, 0.0]], [[-1.0, 0.0], [1.0, 0.0]]))
        ghost = decomposition_service.ghost_extend(log, (0, 1), -math.inf, math.inf)
        assert ghost.log.tails_certified
        assert ghost.log.event_times.tolist() == [-2.0]
        assert ghost.speed == pytest.approx(math.sqrt(2.0))

    def test_horizon_cut_collides_later(self, decomposition_service, simulation_service, head_on_state):
        log = simulation_service.simulate(head_on_state, horizon=1.0)
        ghost = decomposition_service.ghost_extend(log, (0, 1), -math.inf, 1.0)
        assert ghost.log.tails_certified
        assert ghost.log.event_times.tolist() == [2.0]

    def test_spectator_is_left_out(self, decomposition_service, spectator_log, normalize):
        normalized, frame = normalize(spectator_log)
        ghost = decomposition_service.ghost_extend(normalized, (0, 1), -math.inf, frame.t0)
        assert ghost.family == (0, 1)
        assert ghost.log.n == 2
        assert len(ghost.log.events) == 1


class TestBuildTree:
    def test_pair_is_a_leaf(self, decomposition_service, head_on_log, normalize):
        normalized, _ = normalize(head_on_log)
        root = decomposition_service.build_tree(normalized)
        assert root.is_leaf
        assert root.leaf_rule == "small"
        assert root.offspring == []

    def test_spectator_splits_at_the_pivot(self, decomposition_service, spectator_log, normalize):
        normalized, frame = normalize(spectator_log)
        root = decomposition_service.build_tree(normalized)
        assert root.T0 == pytest.approx(frame.t0)
        assert root.S1 == root.S2 == root.T0
        assert root.U1 == root.U2 == root.T0
        assert [child.family for child in root.offspring] == [(0, 1), (2,), (0,), (1, 2)]
        assert [child.node_id for child in root.offspring] == [1, 2, 3, 4]
        assert all(child.is_leaf for child in root.offspring)
        assert root.offspring[0].T2 == root.U1
        assert root.offspring[3].T1 == root.U2
        singleton = root.offspring[1]
        assert singleton.r == 0.0
        assert math.isnan(singleton.t_star)

    def test_coverage_and_statistics(self, decomposition_service, spectator_log, normalize):
        normalized, _ = normalize(spectator_log)
        root = decomposition_service.build_tree(normalized)
        coverage = decomposition_service.assign_collisions(normalized, root, strict=True)
        assert coverage.complete
        assert [(row.bucket, row.leaf_id) for row in coverage.rows] == [("open", 1)]
        assert coverage.leaf_counts == {1: 1, 2: 0, 3: 0, 4: 0}

        stats = decomposition_service.tree_statistics(root)
        assert (stats.depth, stats.node_count, stats.leaf_count, stats.max_offspring) == (2, 5, 4, 4)
        assert stats.forced_leaves == 0
        assert stats.worst_radius_ratio <= 1.0

    @pytest.fixture
    def compact_triple_log(self, simulation_service, make_state):
        # (0, 1) at t=8, (1, 2) at t=8.15, (0, 1) at t=8.3; the system is most compact at t=8.15
        return simulation_service.simulate(make_state([[-10.0, 0.0], [0.0, 0.0], [10.3, 0.0]],
                                                      [[1.0, 0.0], [0.0, 0.0], [-1.0, 0.0]]))

    def test_compact_family_gets_an_inner_node(self, decomposition_service, compact_triple_log, normalize):
        normalized, frame = normalize(compact_triple_log)
        assert [normalized.global_pair(e) for e in normalized.events] == [(0, 1), (1, 2), (0, 1)]
        root = decomposition_service.build_tree(normalized)

        assert root.r == pytest.approx(4.15, rel=1e-6)
        assert root.r <= 4 * root.n_F
        assert root.T0 == normalized.events[1].t
        assert root.S1 == root.S2 == root.U1 == root.U2 == root.T0
        assert root.k_star is None
        assert [child.family for child in root.offspring] == [(0, 1), (2,), (0, 1), (2,), (0, 1, 2)]
        assert [child.kind for child in root.offspring] == [
            "split_before", "split_before", "split_after", "split_after", "inner",
        ]
        assert [child.node_id for child in root.offspring] == [1, 2, 3, 4, 5]
        assert all(child.is_leaf for child in root.offspring)
        assert [child.leaf_rule for child in root.offspring] == ["small"] * 4 + ["inner"]

        before, _, after, _, inner = root.offspring
        assert (before.T1, before.T2) == (-math.inf, root.U1)
        assert (after.T1, after.T2) == (root.U2, math.inf)
        assert (inner.T1, inner.T2) == (root.U1, root.U2)
        assert inner.depth == root.depth + 1

        before_ghost = decomposition_service.ghost_extend(normalized, (0, 1), -math.inf, root.U1)
        after_ghost = decomposition_service.ghost_extend(normalized, (0, 1), root.U2, math.inf)
        assert before_ghost.family == after_ghost.family == (0, 1)
        assert before_ghost.log.event_times.tolist() == [normalized.events[0].t]
        assert after_ghost.log.event_times.tolist() == [normalized.events[2].t]

    def test_inner_radius_is_taken_over_its_own_interval(self, decomposition_service, compact_triple_log,
                                                         normalize):
        normalized, _ = normalize(compact_triple_log)
        root = decomposition_service.build_tree(normalized)
        inner = root.offspring[-1]
        ghost = decomposition_service.ghost_extend(normalized, root.family, -math.inf, math.inf)
        r, t_star = decomposition_service.r_profile(ghost, root.U1, root.U2)
        assert inner.r == pytest.approx(r)
        assert inner.t_star == t_star
        assert root.U1 <= inner.t_star <= root.U2
        assert inner.r <= 4 * inner.n_F

    def test_compact_family_coverage(self, decomposition_service, compact_triple_log, normalize):
        normalized, _ = normalize(compact_triple_log)
        root = decomposition_service.build_tree(normalized)
        coverage = decomposition_service.assign_collisions(normalized, root, strict=True)
        assert coverage.complete
        assert [(row.bucket, row.node_id) for row in coverage.rows] == [("open", 1), ("endpoint", 5), ("open", 3)]
        assert coverage.leaf_counts == {1: 1, 2: 0, 3: 1, 4: 0, 5: 0}

        stats = decomposition_service.tree_statistics(root)
        assert (stats.depth, stats.node_count, stats.leaf_count, stats.max_offspring) == (2, 6, 5, 5)

    def test_wide_family_is_cut_into_a_chain(self, simulation_service, make_state):
        # (0, 1) meet at t=8, then ball 1 crosses to ball 2 at t=196; the spread never drops below 192
        log = simulation_service.extend_to_free_flight(simulation_service.simulate(make_state(
            [[-100.0, 0.0], [-90.0, 0.0], [100.0, 0.0]], [[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]])))
        assert log.event_times.tolist() == pytest.approx([8.0, 196.0])
        service = DecompositionService(simulation_service, PinnedPivotFrames(0.0))
        root = service.build_tree(log)

        assert root.r == pytest.approx(192.0, rel=1e-6)
        assert root.t_star == pytest.approx(8.0)
        assert (root.S1, root.U1) == (0.0, 0.0)
        assert root.S2 == root.U2 == pytest.approx(8.0)
        assert root.v_norm == pytest.approx(math.sqrt(2.0 / 3.0))
        assert root.beta == pytest.approx(93.0, rel=1e-6)
        assert root.k_star == 1

        assert [child.family for child in root.offspring] == [(0,), (1, 2), (0,), (1, 2), (0, 1), (2,)]
        assert [child.kind for child in root.offspring] == ["split_before"] * 2 + ["split_after"] * 2 + ["chain"] * 2
        assert [child.node_id for child in root.offspring] == [1, 2, 3, 4, 5, 6]
        assert all(child.is_leaf and child.leaf_rule == "small" for child in root.offspring)
        assert [child.T2 for child in root.offspring[:2]] == [0.0, 0.0]
        assert [child.T1 for child in root.offspring[2:4]] == [root.U2, root.U2]
        for piece in root.offspring[4:]:
            assert (piece.T1, piece.T2) == (0.0, root.U2)

        piece_ghost = service.ghost_extend(log, (0, 1), 0.0, root.U2)
        assert piece_ghost.family == (0, 1)
        assert piece_ghost.log.event_times.tolist() == pytest.approx([8.0])
        after_ghost = service.ghost_extend(log, (1, 2), root.U2, math.inf)
        assert after_ghost.family == (1, 2)
        assert after_ghost.log.event_times.tolist() == pytest.approx([196.0])

        coverage = service.assign_collisions(log, root, strict=True)
        assert [(row.bucket, row.node_id) for row in coverage.rows] == [("endpoint", 5), ("open", 4)]
        stats = service.tree_statistics(root)
        assert stats.forced_leaves == 0
        assert stats.max_offspring == 6


class TestAssignCollisions:
    def leaf(self):
        return Sextuple(node_id=0, family=(0, 1), T1=0.0, T2=1.0, depth=1, r=2.0, x_norm_t_star=1.0,
                        is_leaf=True, leaf_rule="small")

    def test_uncovered_collision(self, decomposition_service):
        log = chain_ghost([(5.0, 0, 1)], n=2).log
        report = decomposition_service.assign_collisions(log, self.leaf())
        assert report.uncovered == [0]
        assert not report.complete

    def test_strict_mode_raises(self, decomposition_service):
        log = chain_ghost([(5.0, 0, 1)], n=2).log
        with pytest.raises(CoverageError):
            decomposition_service.assign_collisions(log, self.leaf(), strict=True)

    def test_endpoint_bucket(self, decomposition_service):
        log = chain_ghost([(1.0, 0, 1)], n=2).log
        report = decomposition_service.assign_collisions(log, self.leaf())
        assert report.complete
        assert report.rows[0].bucket == "endpoint"
        assert report.rows[0].node_id == 0
        assert report.leaf_counts == {0: 0}
