import numpy as np
import pytest
from scipy.spatial.distance import pdist

from src.core.models import ScenarioKind, ScenarioSpec
from src.core.services.scenario_service import ScenarioService
from src.core.utils.errors import InfeasibleScenarioError


@pytest.fixture
def scenario_service():
    return ScenarioService()


@pytest.mark.parametrize("kind", list(ScenarioKind))
def test_generation_is_deterministic(scenario_service, kind):
    spec = ScenarioSpec(kind=kind, n=6, d=2, seed=11)
    first = scenario_service.generate(spec)
    second = scenario_service.generate(spec)
    assert first.positions.tolist() == second.positions.tolist()
    assert first.velocities.tolist() == second.velocities.tolist()


def test_seeds_differ(scenario_service):
    a = scenario_service.generate(ScenarioSpec(kind=ScenarioKind.RANDOM_BOX, n=5, seed=0))
    b = scenario_service.generate(ScenarioSpec(kind=ScenarioKind.RANDOM_BOX, n=5, seed=1))
    assert not np.array_equal(a.positions, b.positions)


@pytest.mark.parametrize("kind", [ScenarioKind.RANDOM_BOX, ScenarioKind.CONVERGING_CLUSTER])
@pytest.mark.parametrize("d", [2, 3])
def test_packing_keeps_clearance(scenario_service, kind, d):
    spec = ScenarioSpec(kind=kind, n=8, d=d, seed=3)
    state = scenario_service.generate(spec)
    assert state.positions.shape == (8, d)
    assert pdist(state.positions).min() >= 2.0 + spec.clearance


def test_line_chain(scenario_service, simulation_service):
    state = scenario_service.generate(ScenarioSpec(kind=ScenarioKind.LINE_CHAIN, n=3, d=2, seed=0))
    assert state.positions[:, 1].tolist() == [0.0, 0.0, 0.0]
    assert state.velocities[:, 0].tolist() == [1.0, 0.0, -1.0]
    assert len(simulation_service.simulate(state).events) == 3


def test_converging_cluster_collides(scenario_service, simulation_service):
    state = scenario_service.generate(ScenarioSpec(kind=ScenarioKind.CONVERGING_CLUSTER, n=6, d=2, seed=2))
    assert len(simulation_service.simulate(state).events) > 0


def test_two_clusters_never_meet(scenario_service, simulation_service):
    spec = ScenarioSpec(kind=ScenarioKind.TWO_CLUSTER, n=6, d=2, seed=4)
    state = scenario_service.generate(spec)
    assert (state.positions[:3, 0] < 0.0).all()
    assert (state.positions[3:, 0] > 0.0).all()
    log = simulation_service.simulate(state)
    for event in log.events:
        assert (event.i < 3) == (event.j < 3)


@pytest.mark.parametrize("spec", [
    ScenarioSpec(kind=ScenarioKind.RANDOM_BOX, n=1),
    ScenarioSpec(kind=ScenarioKind.RANDOM_BOX, n=3, d=1),
    ScenarioSpec(kind=ScenarioKind.RANDOM_BOX, n=3, speed=0.0),
    ScenarioSpec(kind=ScenarioKind.RANDOM_BOX, n=50, box_side=4.0, max_retries=5),
    ScenarioSpec(kind=ScenarioKind.LINE_CHAIN, n=4, spacing=3.0),
    ScenarioSpec(kind=ScenarioKind.TWO_CLUSTER, n=4, cluster_drift=0.5),
    ScenarioSpec(kind=ScenarioKind.TWO_CLUSTER, n=8, cluster_gap=3.0),
])
def test_infeasible(scenario_service, spec):
    with pytest.raises(InfeasibleScenarioError):
        scenario_service.generate(spec)


def test_header_records_the_generator(scenario_service):
    spec = ScenarioSpec(kind=ScenarioKind.LINE_CHAIN, n=4, seed=9)
    header = scenario_service.header_for(spec, horizon=10.0)
    assert header.rng == "PCG64"
    assert header.seed == 9
    assert header.horizon == 10.0
    assert header.scenario["kind"] == "line_chain"
