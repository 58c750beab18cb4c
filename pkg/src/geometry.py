# relaxed-bubbles/src/geometry.py
"""
Bubble configuration state, admissibility, separation margin, collision
detection and the Hausdorff distance between balls.

Velocity/state vectors use one fixed ordering everywhere in the package:
(r_1..r_N, x_1..x_N) with each x_i contributing its three components in turn.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import pdist

try:
    from .errors import DomainError, InvalidConfigError
except ImportError:
    from errors import DomainError, InvalidConfigError

logger = logging.getLogger(__name__)

Ball = Tuple[Sequence[float], float]


@dataclass(frozen=True)
class BubbleConfig:
    """
    Positions, radii, pressure constants and adiabatic exponent of N bubbles.

    Pressure constants use the relaxed convention p_i = c_i/(4π) r_i^{-3γ}.
    Zero constants are allowed here (a pressureless bubble); run files reject
    them at ingestion.
    """

    centers: np.ndarray
    radii: np.ndarray
    pressure_constants: np.ndarray
    gamma: float = 5.0 / 3.0

    def __post_init__(self):
        centers = np.array(self.centers, dtype=float).reshape(-1, 3)
        radii = np.array(self.radii, dtype=float).reshape(-1)
        constants = np.broadcast_to(
            np.array(self.pressure_constants, dtype=float), radii.shape).copy()
        object.__setattr__(self, 'centers', centers)
        object.__setattr__(self, 'radii', radii)
        object.__setattr__(self, 'pressure_constants', constants)
        object.__setattr__(self, 'gamma', float(self.gamma))

        violations = []
        if len(radii) == 0:
            violations.append(('radii', 'at least one bubble is required'))
        if len(centers) != len(radii):
            violations.append(('centers', f'{len(centers)} centers for {len(radii)} radii'))
        if not np.all(np.isfinite(centers)):
            violations.append(('centers', 'centers must be finite'))
        for i, r in enumerate(radii):
            if not (np.isfinite(r) and r > 0):
                violations.append((f'radii[{i}]', f'radius must be positive, got {r}'))
        for i, c in enumerate(constants):
            if not (np.isfinite(c) and c >= 0):
                violations.append((f'pressure_constants[{i}]', f'must be nonnegative, got {c}'))
        if not self.gamma > 1.0:
            violations.append(('gamma', f'gamma must exceed 1, got {self.gamma}'))
        if violations:
            raise InvalidConfigError(violations)

    @property
    def n_bubbles(self) -> int:
        return len(self.radii)

    def ball(self, i: int) -> Ball:
        return self.centers[i], float(self.radii[i])

    def with_state(self, centers, radii) -> 'BubbleConfig':
        """Same constants, new geometry"""
        return BubbleConfig(centers, radii, self.pressure_constants, self.gamma)

    def state_vector(self) -> np.ndarray:
        """Generalized coordinates (r_1..r_N, x_1..x_N)"""
        return np.concatenate([self.radii, self.centers.reshape(-1)])

    @classmethod
    def from_state_vector(cls, q, pressure_constants, gamma) -> 'BubbleConfig':
        q = np.asarray(q, dtype=float)
        n = len(q) // 4
        return cls(q[n:].reshape(n, 3), q[:n], pressure_constants, gamma)

    def diameter(self) -> float:
        """Diameter of the smallest origin-centered ball containing all bubbles, doubled"""
        return 2.0 * float(np.max(np.linalg.norm(self.centers, axis=1) + self.radii))

    def rotated(self, rotation) -> 'BubbleConfig':
        rotation = np.asarray(rotation, dtype=float)
        return self.with_state(self.centers @ rotation.T, self.radii)


@dataclass(frozen=True)
class AdmissibilityReport:
    """Outcome of validate_admissible"""
    admissible: bool
    min_gap: float
    delta: float


def min_gap(centers, radii) -> float:
    """inf over pairs of |x_i - x_j| - r_i - r_j; +inf for a single bubble"""
    centers = np.asarray(centers, dtype=float).reshape(-1, 3)
    radii = np.asarray(radii, dtype=float).reshape(-1)
    if len(radii) < 2:
        return float('inf')
    # pdist's condensed order is the row-major upper triangle
    upper = np.triu_indices(len(radii), 1)
    radius_sums = (radii[:, None] + radii[None, :])[upper]
    return float(np.min(pdist(centers) - radius_sums))


def validate_admissible(config: BubbleConfig) -> AdmissibilityReport:
    """
    Check that bubbles are pairwise strictly separated.

    Args:
        config: bubble configuration

    Returns:
        AdmissibilityReport with min_gap and the separation margin delta
        (a quarter of the gap; half the radius for a single bubble)
    """
    bad = [(f'radii[{i}]', 'radius must be positive')
           for i, r in enumerate(config.radii) if not r > 0]
    if bad:
        raise InvalidConfigError(bad)

    gap = min_gap(config.centers, config.radii)
    if config.n_bubbles == 1:
        return AdmissibilityReport(True, gap, 0.5 * float(config.radii[0]))
    return AdmissibilityReport(gap > 0.0, gap, 0.25 * gap)


def hausdorff_distance(ball_a: Ball, ball_b: Ball) -> float:
    """Hausdorff distance between two closed balls: |c_a - c_b| + |r_a - r_b|"""
    center_a, radius_a = ball_a
    center_b, radius_b = ball_b
    if radius_a <= 0 or radius_b <= 0:
        raise DomainError("ball radii must be positive")
    offset = np.asarray(center_a, dtype=float) - np.asarray(center_b, dtype=float)
    return float(np.linalg.norm(offset) + abs(radius_a - radius_b))


@dataclass
class Trajectory:
    """
    Time-stamped sequence of bubble states.

    Each sample carries centers X, radii R, the velocity coefficient vector
    (4N reals in the package ordering) and an optional event tag. Ledger
    entries live in the EnergyLedger produced alongside the trajectory.
    """

    pressure_constants: np.ndarray
    gamma: float
    times: List[float] = field(default_factory=list)
    centers: List[np.ndarray] = field(default_factory=list)
    radii: List[np.ndarray] = field(default_factory=list)
    coefficients: List[np.ndarray] = field(default_factory=list)
    events: List[Tuple[float, str]] = field(default_factory=list)

    def append(self, time: float, centers, radii, coefficients) -> None:
        if self.times and time <= self.times[-1]:
            raise DomainError(f"trajectory times must increase: {time} after {self.times[-1]}")
        self.times.append(float(time))
        self.centers.append(np.array(centers, dtype=float).reshape(-1, 3))
        self.radii.append(np.array(radii, dtype=float).reshape(-1))
        self.coefficients.append(np.array(coefficients, dtype=float).reshape(-1))

    def add_event(self, time: float, tag: str) -> None:
        logger.info("event %s at t=%.6g", tag, time)
        self.events.append((float(time), tag))

    def __len__(self) -> int:
        return len(self.times)

    def config_at(self, k: int) -> BubbleConfig:
        return BubbleConfig(self.centers[k], self.radii[k], self.pressure_constants, self.gamma)

    def radii_array(self) -> np.ndarray:
        return np.array(self.radii)

    def centers_array(self) -> np.ndarray:
        return np.array(self.centers)

    def coefficients_array(self) -> np.ndarray:
        return np.array(self.coefficients)

    def gaps(self) -> np.ndarray:
        return np.array([min_gap(x, r) for x, r in zip(self.centers, self.radii)])


def detect_collision(trajectory: Trajectory, threshold: float) -> Optional[float]:
    """
    First time where the minimal gap drops to the threshold.

    Args:
        trajectory: samples at increasing times
        threshold: gap length treated as contact

    Returns:
        Event time, linearly interpolated between the bracketing samples,
        or None if the gap stays above the threshold
    """
    if len(trajectory) == 0:
        raise DomainError("cannot detect collisions on an empty trajectory")

    gaps = trajectory.gaps()
    hits = np.nonzero(gaps <= threshold)[0]
    if len(hits) == 0:
        return None
    k = int(hits[0])
    if k == 0:
        return trajectory.times[0]

    t0, t1 = trajectory.times[k - 1], trajectory.times[k]
    g0, g1 = gaps[k - 1], gaps[k]
    return float(t0 + (g0 - threshold) / (g0 - g1) * (t1 - t0))
