# relaxed-bubbles/src/inviscid_dynamics.py
"""
Euler-Lagrange dynamics of L = E_k - E_p over the harmonic basis.

The generalized coordinates are q = (r_1..r_N, x_1..x_N); the fluid velocity
is Σ q̇_a ∇q_a so E_k = ½ q̇ᵀ M(q) q̇ with M the Gram matrix. ∂M/∂q is taken
by central finite differences of re-solved bases.
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.integrate import RK45
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import brentq

try:
    from .config import config as default_config
    from .energy_pressure import EnergyLedger, kinetic_energy, potential_energy
    from .errors import ConvergenceError, DegeneracyError, DomainError, InvalidConfigError
    from .geometry import BubbleConfig, Trajectory, min_gap, validate_admissible
    from .harmonic_basis import GramMatrix, HarmonicBasis, gram, solve_reflections
except ImportError:
    from config import config as default_config
    from energy_pressure import EnergyLedger, kinetic_energy, potential_energy
    from errors import ConvergenceError, DegeneracyError, DomainError, InvalidConfigError
    from geometry import BubbleConfig, Trajectory, min_gap, validate_admissible
    from harmonic_basis import GramMatrix, HarmonicBasis, gram, solve_reflections

logger = logging.getLogger(__name__)

EVENT_COLLISION = 'collision'
EVENT_COLLAPSE = 'collapse'
EVENT_NEAR_CONTACT = 'near_contact'


@dataclass(frozen=True)
class PhaseState:
    """Configuration plus generalized velocities (ṙ_1..ṙ_N, ẋ_1..ẋ_N)"""
    config: BubbleConfig
    qdot: np.ndarray

    def __post_init__(self):
        qdot = np.array(self.qdot, dtype=float).reshape(-1)
        if qdot.shape != (4 * self.config.n_bubbles,):
            raise InvalidConfigError([
                ('qdot', f'expected {4 * self.config.n_bubbles} velocities, got {qdot.size}')])
        object.__setattr__(self, 'qdot', qdot)

    @property
    def rdot(self) -> np.ndarray:
        return self.qdot[:self.config.n_bubbles]

    @property
    def xdot(self) -> np.ndarray:
        return self.qdot[self.config.n_bubbles:].reshape(-1, 3)

    @classmethod
    def from_velocities(cls, config: BubbleConfig, rdot, xdot) -> 'PhaseState':
        rdot = np.asarray(rdot, dtype=float).reshape(-1)
        xdot = np.asarray(xdot, dtype=float).reshape(-1)
        return cls(config, np.concatenate([rdot, xdot]))

    def rotated(self, rotation) -> 'PhaseState':
        rotation = np.asarray(rotation, dtype=float)
        return PhaseState.from_velocities(self.config.rotated(rotation), self.rdot,
                                          self.xdot @ rotation.T)


class MassMatrixEvaluator:
    """
    Gram matrices keyed by the quantized state vector.

    Each new basis is warm-started from the most recently solved one, which
    within a step is a nearby configuration.
    """

    def __init__(self, order: int = None, tolerance: float = None, quantum: float = 1e-13,
                 max_entries: int = 256):
        self.order = order if order is not None else default_config.REFLECTION_ORDER
        self.tolerance = tolerance if tolerance is not None else default_config.REFLECTION_TOLERANCE
        self.quantum = quantum
        self.max_entries = max_entries
        self._cache: 'OrderedDict[bytes, GramMatrix]' = OrderedDict()
        self._last: Optional[HarmonicBasis] = None
        self.solves = 0
        self.hits = 0

    def _key(self, config: BubbleConfig) -> bytes:
        return np.round(config.state_vector() / self.quantum).astype(np.int64).tobytes()

    def basis(self, config: BubbleConfig) -> HarmonicBasis:
        basis = solve_reflections(config, self.order, self.tolerance, initial=self._last)
        self._last = basis
        self.solves += 1
        return basis

    def __call__(self, config: BubbleConfig) -> GramMatrix:
        key = self._key(config)
        cached = self._cache.get(key)
        if cached is not None:
            self._cache.move_to_end(key)
            self.hits += 1
            return cached
        matrix = gram(self.basis(config))
        self._cache[key] = matrix
        if len(self._cache) > self.max_entries:
            self._cache.popitem(last=False)
        return matrix


def mass_matrix(config: BubbleConfig, L: int = None, tol: float = None) -> GramMatrix:
    """Gram matrix of the reflected basis; E_k = ½ q̇ᵀ M q̇"""
    return gram(solve_reflections(config, L, tol))


def _solve(m: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        return cho_solve(cho_factor(m), rhs)
    except LinAlgError as exc:
        raise DegeneracyError(f"mass matrix is not positive definite: {exc}") from exc


def mass_matrix_derivatives(config: BubbleConfig, evaluator: MassMatrixEvaluator,
                            fd_step: float) -> np.ndarray:
    """
    ∂M/∂q_k for every coordinate, shape (4N, 4N, 4N) with k first.

    A single bubble's Gram matrix does not depend on its center, so those
    derivatives are zero without any solve.
    """
    q = config.state_vector()
    n = config.n_bubbles
    dim = 4 * n
    h = fd_step * float(np.min(config.radii))
    derivatives = np.zeros((dim, dim, dim))
    coordinates = range(n) if n == 1 else range(dim)
    for k in coordinates:
        shift = np.zeros(dim)
        shift[k] = h
        plus = evaluator(BubbleConfig.from_state_vector(q + shift, config.pressure_constants,
                                                        config.gamma))
        minus = evaluator(BubbleConfig.from_state_vector(q - shift, config.pressure_constants,
                                                         config.gamma))
        derivatives[k] = (plus.matrix - minus.matrix) / (2.0 * h)
    return derivatives


def pressure_forcing(config: BubbleConfig) -> np.ndarray:
    """-∇_q E_p: c_i r_i^{2-3γ} on the radii, zero on the centers"""
    forcing = np.zeros(4 * config.n_bubbles)
    forcing[:config.n_bubbles] = (config.pressure_constants
                                  * config.radii ** (2.0 - 3.0 * config.gamma))
    return forcing


def lagrange_rhs(state: PhaseState, L: int = None, reflection_tolerance: float = None,
                 fd_step: float = None, evaluator: MassMatrixEvaluator = None) -> np.ndarray:
    """
    Generalized accelerations from M q̈ = -(Σ_k ∂_k M q̇_k) q̇ + ½ ∇_q(q̇ᵀMq̇) - ∇_q E_p.

    Raises:
        DegeneracyError: M is singular or indefinite
    """
    fd_step = fd_step if fd_step is not None else default_config.FD_STEP
    evaluator = evaluator or MassMatrixEvaluator(L, tolerance=reflection_tolerance)
    qdot = state.qdot
    m = evaluator(state.config).matrix
    dm = mass_matrix_derivatives(state.config, evaluator, fd_step)

    # dm[k] @ qdot * qdot_k summed over k, and q̇ᵀ dm[k] q̇ per k
    transport = np.einsum('kab,b,k->a', dm, qdot, qdot)
    gradient = np.einsum('kab,a,b->k', dm, qdot, qdot)
    rhs = -transport + 0.5 * gradient + pressure_forcing(state.config)
    return _solve(m, rhs)


def phase_energy(state: PhaseState, evaluator: MassMatrixEvaluator) -> Tuple[float, float]:
    """(E_k, E_p) of a phase state"""
    config = state.config
    return (kinetic_energy(state.qdot, evaluator(config)),
            potential_energy(config.radii, config.pressure_constants, config.gamma))


def integrate_inviscid(init: PhaseState, t_end: float, tol: float = None,
                       collision_threshold: float = None, L: int = None,
                       fd_step: float = None, r_floor: float = None,
                       evaluator: MassMatrixEvaluator = None) -> Tuple[Trajectory, EnergyLedger]:
    """
    Adaptive 5(4) integration of the Lagrange equations.

    Every accepted step becomes a trajectory sample and a ledger row. The run
    stops at t_end, at the first time the minimal gap reaches
    collision_threshold ('collision'), when a radius reaches r_floor
    ('collapse'), or when the mass matrix degenerates ('near_contact').

    Returns:
        (Trajectory, EnergyLedger)
    """
    tol = tol if tol is not None else default_config.ODE_TOLERANCE
    collision_threshold = (collision_threshold if collision_threshold is not None
                           else default_config.COLLISION_THRESHOLD)
    r_floor = r_floor if r_floor is not None else default_config.R_FLOOR
    fd_step = fd_step if fd_step is not None else default_config.FD_STEP
    evaluator = evaluator or MassMatrixEvaluator(L)

    config0 = init.config
    report = validate_admissible(config0)
    if not report.admissible:
        raise DomainError(f"initial configuration is not admissible: min gap {report.min_gap:.6g}")
    n = config0.n_bubbles
    dim = 4 * n
    constants, gamma = config0.pressure_constants, config0.gamma

    def unpack(y) -> PhaseState:
        q = np.array(y[:dim])
        q[:n] = np.maximum(q[:n], r_floor)
        return PhaseState(BubbleConfig.from_state_vector(q, constants, gamma), y[dim:])

    def fun(_, y):
        state = unpack(y)
        return np.concatenate([state.qdot, lagrange_rhs(state, fd_step=fd_step,
                                                        evaluator=evaluator)])

    trajectory = Trajectory(pressure_constants=constants, gamma=gamma)
    kinetic0, potential0 = phase_energy(init, evaluator)
    ledger = EnergyLedger(E0=kinetic0 + potential0)

    def record(t, y):
        state = unpack(y)
        trajectory.append(t, state.config.centers, state.config.radii, state.qdot)
        kinetic, potential = phase_energy(state, evaluator)
        ledger.append(t, kinetic, potential, 0.0)

    def gap(y):
        return min_gap(y[n:dim].reshape(n, 3), y[:n])

    y0 = np.concatenate([config0.state_vector(), init.qdot])
    record(0.0, y0)
    solver = RK45(fun, 0.0, y0, t_end, rtol=tol, atol=tol)

    while solver.status == 'running':
        t_old = solver.t
        try:
            message = solver.step()
        except (DegeneracyError, DomainError, InvalidConfigError) as exc:
            logger.warning("mass matrix degenerate near t=%.6g: %s", t_old, exc)
            trajectory.add_event(t_old, EVENT_NEAR_CONTACT)
            break
        if solver.status == 'failed':
            raise ConvergenceError(f"inviscid integration failed at t={t_old:.6g}: {message}")

        t, y = solver.t, solver.y
        dense = solver.dense_output()
        if np.min(y[:n]) <= r_floor:
            t_event = brentq(lambda s: np.min(dense(s)[:n]) - r_floor, t_old, t, xtol=1e-14)
            record(t_event, dense(t_event))
            trajectory.add_event(t_event, EVENT_COLLAPSE)
            break
        if n > 1 and gap(y) <= collision_threshold:
            t_event = brentq(lambda s: gap(dense(s)) - collision_threshold, t_old, t,
                             xtol=1e-14)
            record(t_event, dense(t_event))
            trajectory.add_event(t_event, EVENT_COLLISION)
            break
        record(t, y)

    logger.info("inviscid run: %d samples to t=%.6g, %d basis solves, %d cache hits",
                len(trajectory), trajectory.times[-1], evaluator.solves, evaluator.hits)
    return trajectory, ledger
