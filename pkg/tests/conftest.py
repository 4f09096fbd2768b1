import numpy as np
import pytest

from src.core.models import CollisionEvent, EventLog, LogHeader, SystemState, Termination
from src.core.services.decomposition_service import DecompositionService
from src.core.services.frame_service import FrameService
from src.core.services.simulation_service import SimulationService
from src.core.services.verification_service import VerificationService


def state(positions, velocities, t=0.0) -> SystemState:
    positions = np.asarray(positions, dtype=float)
    return SystemState(positions.shape[1], t, positions, velocities)


def static_log(positions, velocities=None) -> EventLog:
    """A collision-free log with both tails certified"""
    positions = np.asarray(positions, dtype=float)
    if velocities is None:
        velocities = np.zeros_like(positions)
    initial = state(positions, velocities)
    return EventLog(LogHeader(n=initial.n, d=initial.dim), initial, (), Termination.FREE_FLIGHT,
                    backward_free_flight=True)


def synthetic_event(t, i, j, d=2) -> CollisionEvent:
    zero = np.zeros(d)
    return CollisionEvent(t=t, i=i, j=j, x_i=zero, x_j=zero, v_i_pre=zero, v_j_pre=zero,
                          v_i_post=zero, v_j_post=zero)


@pytest.fixture
def make_state():
    return state


@pytest.fixture
def simulation_service():
    return SimulationService(max_events=10000, ghost_max_events=10000)


@pytest.fixture
def frame_service():
    return FrameService()


@pytest.fixture
def decomposition_service(simulation_service, frame_service):
    return DecompositionService(simulation_service, frame_service)


@pytest.fixture
def verification_service(simulation_service, frame_service, decomposition_service):
    return VerificationService(simulation_service, frame_service, decomposition_service)


@pytest.fixture
def head_on_state():
    # one collision at t=2 with the centers at (-1, 0) and (1, 0)
    return state([[-3.0, 0.0], [3.0, 0.0]], [[1.0, 0.0], [-1.0, 0.0]])


@pytest.fixture
def spectator_state():
    # the head-on pair plus a third ball falling past it without touching
    return state([[-3.0, 0.0], [3.0, 0.0], [0.0, 50.0]], [[1.0, 0.0], [-1.0, 0.0], [0.0, -1.0]])


@pytest.fixture
def head_on_log(simulation_service, head_on_state):
    return simulation_service.simulate(head_on_state)


@pytest.fixture
def spectator_log(simulation_service, spectator_state):
    return simulation_service.simulate(spectator_state)


@pytest.fixture
def normalize(simulation_service, frame_service):
    def run(log):
        return frame_service.normalize(simulation_service.extend_to_free_flight(log))
    return run
