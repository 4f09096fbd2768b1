import logging
import math
from typing import Optional

import numpy as np

from src.core.models import LogHeader, ScenarioKind, ScenarioSpec, SystemState
from src.core.services.simulation_service import next_event
from src.core.utils.config import CONTACT_DISTANCE, RNG_ALGORITHM
from src.core.utils.errors import InfeasibleScenarioError, SimultaneityError


def make_rng(seed: int) -> np.random.Generator:
    """Portable seeded generator; the algorithm name is recorded in every log header"""
    return np.random.Generator(np.random.PCG64(seed))


class ScenarioService:
    def __init__(self):
        """Deterministic initial conditions for the supported scenario kinds"""
        self.logger = logging.getLogger(__name__)

    def header_for(self, spec: ScenarioSpec, horizon: Optional[float] = None) -> LogHeader:
        return LogHeader(n=spec.n, d=spec.d, seed=spec.seed, scenario=spec.to_dict(),
                         horizon=horizon, rng=RNG_ALGORITHM)

    def generate(self, spec: ScenarioSpec) -> SystemState:
        """
        Draw a valid initial state for a scenario

        Draws are repeated from the same generator while they overlap, carry no energy in the
        center-of-mass frame or start with simultaneous collisions.

        Raises:
            InfeasibleScenarioError: when the parameters cannot work or retries run out
        """
        self._check_spec(spec)
        rng = make_rng(spec.seed)
        for attempt in range(spec.max_retries):
            state = self._draw(spec, rng)
            if state is None:
                continue
            relative = state.velocities - state.velocities.mean(axis=0)
            if float((relative ** 2).sum()) == 0.0:
                continue
            try:
                next_event(state)
            except SimultaneityError as e:
                self.logger.debug(f"Attempt {attempt + 1} for {spec.kind.value} rejected: {e}")
                continue
            if attempt:
                self.logger.info(f"Scenario {spec.kind.value} seed={spec.seed} accepted after {attempt + 1} draws")
            return state

        error_msg = f"No valid {spec.kind.value} state for n={spec.n}, d={spec.d} after {spec.max_retries} draws"
        self.logger.error(error_msg)
        raise InfeasibleScenarioError(error_msg)

    @staticmethod
    def _check_spec(spec: ScenarioSpec) -> None:
        if spec.n < 2:
            raise InfeasibleScenarioError(f"Scenarios need at least two balls, got n={spec.n}")
        if spec.d < 2:
            raise InfeasibleScenarioError(f"Dimension must be at least 2, got d={spec.d}")
        if spec.max_retries < 1:
            raise InfeasibleScenarioError("max_retries must be positive")
        if spec.speed <= 0.0:
            raise InfeasibleScenarioError(f"speed must be positive, got {spec.speed}")
        if spec.kind == ScenarioKind.LINE_CHAIN:
            if spec.spacing - 2 * spec.position_jitter < CONTACT_DISTANCE + spec.clearance:
                raise InfeasibleScenarioError(
                    f"Line spacing {spec.spacing} with jitter {spec.position_jitter} can overlap"
                )
        if spec.kind == ScenarioKind.TWO_CLUSTER and spec.cluster_drift <= spec.speed:
            raise InfeasibleScenarioError(
                f"cluster_drift {spec.cluster_drift} must exceed the internal speed {spec.speed}"
            )

    def _draw(self, spec: ScenarioSpec, rng: np.random.Generator) -> Optional[SystemState]:
        if spec.kind == ScenarioKind.RANDOM_BOX:
            positions = self._pack(rng, spec.n, spec.d, spec.box_side, spec.clearance, spec.max_retries)
            if positions is None:
                return None
            velocities = spec.speed * rng.standard_normal((spec.n, spec.d))
        elif spec.kind == ScenarioKind.LINE_CHAIN:
            positions = np.zeros((spec.n, spec.d))
            offsets = (np.arange(spec.n) - (spec.n - 1) / 2.0) * spec.spacing
            positions[:, 0] = offsets + rng.uniform(-spec.position_jitter, spec.position_jitter, spec.n)
            velocities = np.zeros((spec.n, spec.d))
            velocities[:, 0] = np.linspace(spec.speed, -spec.speed, spec.n)
        elif spec.kind == ScenarioKind.CONVERGING_CLUSTER:
            side = spec.spacing * spec.n ** (1.0 / spec.d)
            positions = self._pack(rng, spec.n, spec.d, side, spec.clearance, spec.max_retries)
            if positions is None:
                return None
            velocities = self._converging(rng, positions, spec.speed)
        else:
            positions, velocities = self._two_clusters(spec, rng)
            if positions is None:
                return None
        return SystemState(spec.d, 0.0, positions, velocities)

    @staticmethod
    def _pack(rng: np.random.Generator, n: int, d: int, side: float, clearance: float,
              retries: int) -> Optional[np.ndarray]:
        """Random sequential addition in a cube of the given side centered at the origin"""
        placed = []
        min_dist = CONTACT_DISTANCE + clearance
        for _ in range(n):
            for _ in range(retries):
                candidate = rng.uniform(-side / 2.0, side / 2.0, d)
                if all(np.linalg.norm(candidate - other) >= min_dist for other in placed):
                    placed.append(candidate)
                    break
            else:
                return None
        return np.array(placed)

    @staticmethod
    def _converging(rng: np.random.Generator, positions: np.ndarray, speed: float) -> np.ndarray:
        center = positions.mean(axis=0)
        inward = center - positions
        norms = np.linalg.norm(inward, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        noise = 0.1 * rng.standard_normal(positions.shape)
        return speed * (inward / norms + noise)

    def _two_clusters(self, spec: ScenarioSpec, rng: np.random.Generator):
        sizes = (spec.n // 2, spec.n - spec.n // 2)
        clusters_x, clusters_v = [], []
        for sign, size in zip((-1.0, 1.0), sizes):
            side = spec.spacing * size ** (1.0 / spec.d)
            local = self._pack(rng, size, spec.d, side, spec.clearance, spec.max_retries)
            if local is None:
                return None, None
            internal = self._converging(rng, local, 1.0)
            internal = internal - internal.mean(axis=0)
            energy = float((internal ** 2).sum())
            if energy > 0.0:
                # each cluster carries internal energy speed^2, so no ball outruns the drift
                internal = internal * (spec.speed / math.sqrt(energy))
            offset = np.zeros(spec.d)
            offset[0] = sign * spec.cluster_gap / 2.0
            drift = np.zeros(spec.d)
            drift[0] = sign * spec.cluster_drift
            clusters_x.append(local - local.mean(axis=0) + offset)
            clusters_v.append(internal + drift)
        left, right = clusters_x
        if left[:, 0].max() + CONTACT_DISTANCE + spec.clearance > right[:, 0].min():
            raise InfeasibleScenarioError(f"cluster_gap {spec.cluster_gap} is too small for the cluster size")
        return np.vstack(clusters_x), np.vstack(clusters_v)
