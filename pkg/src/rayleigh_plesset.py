# relaxed-bubbles/src/rayleigh_plesset.py
"""
Radial single-bubble oracle: r r̈ + (3/2)ṙ² + 4ν ṙ/r = p(r) - p_∞
with p(r) = c/(4π) r^{-3γ} and unit fluid density.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

try:
    from .config import config as default_config
    from .energy_pressure import bubble_pressure
    from .errors import CollapseError, ConvergenceError, InvalidConfigError
except ImportError:
    from config import config as default_config
    from energy_pressure import bubble_pressure
    from errors import CollapseError, ConvergenceError, InvalidConfigError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RPParams:
    c: float
    gamma: float = 5.0 / 3.0
    nu: float = 0.0
    p_inf: float = 0.0

    def __post_init__(self):
        violations = []
        if not (np.isfinite(self.c) and self.c >= 0):
            violations.append(('c', f'must be nonnegative, got {self.c}'))
        if not self.gamma > 1.0:
            violations.append(('gamma', f'must exceed 1, got {self.gamma}'))
        if not self.nu >= 0.0:
            violations.append(('nu', f'must be nonnegative, got {self.nu}'))
        if not self.p_inf >= 0.0:
            violations.append(('p_inf', f'must be nonnegative, got {self.p_inf}'))
        if violations:
            raise InvalidConfigError(violations)


@dataclass(frozen=True)
class RPState:
    r: float
    rdot: float = 0.0

    def __post_init__(self):
        if not self.r > 0:
            raise InvalidConfigError([('r', f'radius must be positive, got {self.r}')])


def _acceleration(r, rdot, params: RPParams):
    p = bubble_pressure(r, params.c, params.gamma)
    return (p - params.p_inf - 1.5 * rdot * rdot - 4.0 * params.nu * rdot / r) / r


def rp_rhs(state: RPState, params: RPParams):
    """
    Returns:
        (ṙ, r̈)

    Raises:
        CollapseError: r <= 0
    """
    if not state.r > 0:
        raise CollapseError(f"radius {state.r} is not positive")
    return state.rdot, _acceleration(state.r, state.rdot, params)


def rp_energy(state: RPState, params: RPParams) -> float:
    """2π r³ṙ² + c/(3γ-3) r^{3-3γ} + (4π/3) p_∞ r³; conserved when ν = 0"""
    r, rdot = state.r, state.rdot
    k = 3.0 * params.gamma - 3.0
    return (2.0 * np.pi * r ** 3 * rdot ** 2 + params.c / k * r ** -k
            + 4.0 * np.pi / 3.0 * params.p_inf * r ** 3)


def rp_dissipation_rate(state: RPState, params: RPParams) -> float:
    """-dE/dt = 16πν r ṙ²"""
    return 16.0 * np.pi * params.nu * state.r * state.rdot ** 2


def rp_equilibrium_radius(params: RPParams) -> float:
    """r* with p(r*) = p_∞"""
    if not params.p_inf > 0:
        raise InvalidConfigError([('p_inf', 'an equilibrium needs positive far pressure')])
    return float((params.c / (4.0 * np.pi * params.p_inf)) ** (1.0 / (3.0 * params.gamma)))


def rp_linear_frequency(params: RPParams) -> float:
    """Angular frequency of small inviscid oscillations about r*: √(3γ p_∞)/r*"""
    r_star = rp_equilibrium_radius(params)
    return float(np.sqrt(3.0 * params.gamma * params.p_inf) / r_star)


@dataclass
class RPTrajectory:
    """
    Accepted steps of an oracle run plus its dense interpolant.

    collapse_time is set when r reached the radius floor; integration
    stopped there. dissipation is the energy removed by viscosity up to
    each sample, integrated with the state.
    """
    params: RPParams
    times: np.ndarray
    r: np.ndarray
    rdot: np.ndarray
    dissipation: np.ndarray
    dense: object
    collapse_time: Optional[float] = None

    @property
    def collapsed(self) -> bool:
        return self.collapse_time is not None

    def at(self, times) -> np.ndarray:
        """(len(times), 2) array of (r, ṙ) from the dense output"""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        return self.dense(times)[:2].T

    def states(self) -> Sequence[RPState]:
        return [RPState(r, v) for r, v in zip(self.r, self.rdot)]

    def energies(self) -> np.ndarray:
        return np.array([rp_energy(s, self.params) for s in self.states()])


def rp_integrate(init: RPState, params: RPParams, t_end: float, tol: float = None,
                 r_floor: float = None, t_eval=None) -> RPTrajectory:
    """
    Adaptive 5(4) Runge-Kutta integration with dense output.

    Args:
        init: initial radius and radial velocity
        params: oracle parameters
        t_end: final time (> 0)
        tol: relative and absolute error tolerance
        r_floor: radius treated as collapse
        t_eval: optional sample times; accepted steps are kept otherwise

    Returns:
        RPTrajectory with the dissipated energy at every sample;
        collapse_time is set if r reached r_floor
    """
    tol = tol if tol is not None else default_config.ODE_TOLERANCE
    r_floor = r_floor if r_floor is not None else default_config.R_FLOOR
    if not tol > 0:
        raise InvalidConfigError([('tol', f'must be positive, got {tol}')])
    if not t_end > 0:
        raise InvalidConfigError([('t_end', f'must be positive, got {t_end}')])

    # y = (r, ṙ, D) with D' = 16πν r ṙ²
    def rhs(_, y):
        r = max(y[0], r_floor)
        return [y[1], _acceleration(r, y[1], params), 16.0 * np.pi * params.nu * r * y[1] ** 2]

    def collapse(_, y):
        return y[0] - r_floor

    collapse.terminal = True
    collapse.direction = -1

    solution = solve_ivp(rhs, (0.0, t_end), [init.r, init.rdot, 0.0], method='RK45',
                         rtol=tol, atol=tol, dense_output=True, events=collapse,
                         t_eval=t_eval)
    if solution.status < 0:
        raise ConvergenceError(f"oracle integration failed: {solution.message}")

    collapse_time = None
    if solution.status == 1 and len(solution.t_events[0]):
        collapse_time = float(solution.t_events[0][0])
        logger.warning("bubble collapsed at t=%.6g", collapse_time)

    logger.debug("oracle run: %d samples, %d rhs evaluations", len(solution.t), solution.nfev)
    return RPTrajectory(params, solution.t, solution.y[0], solution.y[1], solution.y[2],
                        solution.sol, collapse_time)
