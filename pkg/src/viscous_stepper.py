# relaxed-bubbles/src/viscous_stepper.py
"""
Viscous bubble dynamics on a reduced Galerkin basis.

Time is cut into windows of length h. On each window the bubbles follow an
affine prescribed motion whose rates are the previous window's averages of
the accumulated rates ṙ_i[u] = ⨏ u·n and ẋ_i[u] = 3⨏(u·n)n; the first window
is static. The velocity u = Σ U_a b_a lives on the gradient fields of the
current configuration, optionally enlarged by swirl modes, and U follows

    d/dt(G U) = HᵀU + C(U) + M(U) - K U + F

with H_ab = ∫ b_a·∂_t b_b, C the convection, M the normal-velocity mismatch
on the spheres, K the dissipation and F the pressure forcing. Internal steps
use the implicit midpoint rule with a discrete-gradient pressure factor, so
the drop of potential energy equals the pressure work exactly.
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import brentq, minimize_scalar

try:
    from .ale_map import AffinePath
    from .config import config as default_config
    from .energy_pressure import (EnergyLedger, kinetic_energy, potential_energy,
                                  pressure_work_factor, separation_horizon)
    from .errors import (CollapseError, ConvergenceError, DegeneracyError, DomainError,
                         HorizonExceededError, InvalidConfigError)
    from .geometry import BubbleConfig, Trajectory, min_gap, validate_admissible
    from .harmonic_basis import HarmonicBasis, field_labels, solve_reflections
    from .inviscid_dynamics import EVENT_COLLAPSE, EVENT_COLLISION, EVENT_NEAR_CONTACT
    from .quadrature import ExteriorRule, build_exterior_rule
except ImportError:
    from ale_map import AffinePath
    from config import config as default_config
    from energy_pressure import (EnergyLedger, kinetic_energy, potential_energy,
                                 pressure_work_factor, separation_horizon)
    from errors import (CollapseError, ConvergenceError, DegeneracyError, DomainError,
                        HorizonExceededError, InvalidConfigError)
    from geometry import BubbleConfig, Trajectory, min_gap, validate_admissible
    from harmonic_basis import HarmonicBasis, field_labels, solve_reflections
    from inviscid_dynamics import EVENT_COLLAPSE, EVENT_COLLISION, EVENT_NEAR_CONTACT
    from quadrature import ExteriorRule, build_exterior_rule

logger = logging.getLogger(__name__)

__all__ = [
    'CONVECTION_MODES', 'FIELD_SETS', 'EVENT_HORIZON', 'SchemeParams', 'SwirlModes',
    'ReducedBasis', 'FrameBuilder', 'WindowProblem', 'WindowOperators', 'StepRecord',
    'WindowResult', 'SchemeResult', 'gradient_indices', 'dissipation_matrix',
    'convection_tensor', 'accumulator_rates', 'window_operators', 'window_rhs',
    'solve_window', 'run_scheme', 'separation_horizon', 'strong_form_residual',
]

CONVECTION_MODES = ('quadrature', 'boundary', 'off')
FIELD_SETS = ('all', 'monopole')
EVENT_HORIZON = 'horizon'

# D:D of gradient fields decays like |x|^-6, u·(u·∇)b like |x|^-7
_STRAIN_DECAY = 6.0
_CONVECTION_DECAY = 7.0

# _ROTATIONS[k] is the matrix of v ↦ e_k × v
_ROTATIONS = np.stack([np.cross(np.eye(3)[k], np.eye(3)).T for k in range(3)])


@dataclass(frozen=True)
class SchemeParams:
    """
    Settings of one scheme run; fields left as None take their value from config.

    T must be a whole number of windows of length h.
    """
    h: Optional[float] = None
    T: float = 1.0
    nu: float = 0.0
    L: Optional[int] = None
    convection: Optional[str] = None
    fields: str = 'all'
    swirl: bool = False
    substeps: int = 1
    radial_nodes: Optional[int] = None
    angular_degree: Optional[int] = None
    reflection_tolerance: Optional[float] = None
    galerkin_tolerance: Optional[float] = None
    galerkin_max_iters: Optional[int] = None
    energy_tolerance: Optional[float] = None
    max_halvings: Optional[int] = None
    collision_threshold: Optional[float] = None
    r_floor: Optional[float] = None
    override_horizon: bool = False

    def __post_init__(self):
        defaults = {
            'h': default_config.VISCOUS_STEP,
            'L': default_config.REFLECTION_ORDER,
            'convection': default_config.CONVECTION,
            'radial_nodes': default_config.EXTERIOR_RADIAL_NODES,
            'reflection_tolerance': default_config.REFLECTION_TOLERANCE,
            'galerkin_tolerance': default_config.GALERKIN_TOLERANCE,
            'galerkin_max_iters': default_config.GALERKIN_MAX_ITERS,
            'energy_tolerance': default_config.ENERGY_TOLERANCE,
            'max_halvings': default_config.MAX_STEP_HALVINGS,
            'collision_threshold': default_config.COLLISION_THRESHOLD,
            'r_floor': default_config.R_FLOOR,
        }
        for name, value in defaults.items():
            if getattr(self, name) is None:
                object.__setattr__(self, name, value)
        if self.angular_degree is None:
            object.__setattr__(self, 'angular_degree',
                               2 * self.L + default_config.SPHERE_DEGREE_MARGIN)

        violations = []
        if not self.h > 0:
            violations.append(('h', f'window length must be positive, got {self.h}'))
        if not self.T > 0:
            violations.append(('T', f'horizon must be positive, got {self.T}'))
        if self.h > 0 and self.T > 0:
            windows = self.T / self.h
            if round(windows) < 1 or abs(windows - round(windows)) > 1e-9 * max(1.0, windows):
                violations.append(('T', f'T/h = {windows:.12g} must be a positive integer'))
        if not self.nu >= 0:
            violations.append(('nu', f'viscosity must be nonnegative, got {self.nu}'))
        if self.L < 1:
            violations.append(('L', f'reflection order must be at least 1, got {self.L}'))
        if self.convection not in CONVECTION_MODES:
            violations.append(('convection', f'must be one of {CONVECTION_MODES}, '
                                             f'got {self.convection!r}'))
        elif self.swirl and self.convection == 'boundary':
            violations.append(('convection', 'boundary convection needs a gradient-only basis'))
        if self.fields not in FIELD_SETS:
            violations.append(('fields', f'must be one of {FIELD_SETS}, got {self.fields!r}'))
        if self.substeps < 1:
            violations.append(('substeps', f'must be at least 1, got {self.substeps}'))
        for name in ('galerkin_tolerance', 'energy_tolerance', 'reflection_tolerance'):
            if not getattr(self, name) > 0:
                violations.append((name, 'must be positive'))
        if self.max_halvings < 0:
            violations.append(('max_halvings', 'must be nonnegative'))
        if not self.collision_threshold >= 0:
            violations.append(('collision_threshold', 'must be nonnegative'))
        if violations:
            raise InvalidConfigError(violations)

    @property
    def n_windows(self) -> int:
        return int(round(self.T / self.h))

    @property
    def volume_quadrature(self) -> bool:
        """Whether operators need the exterior volume rule"""
        return self.convection == 'quadrature' or self.swirl


def gradient_indices(n_bubbles: int, fields: str = 'all') -> np.ndarray:
    """Harmonic field indices kept in the reduced basis"""
    if fields == 'monopole':
        return np.arange(n_bubbles)
    if fields == 'all':
        return np.arange(4 * n_bubbles)
    raise DomainError(f"field set must be one of {FIELD_SETS}, got {fields!r}")


class SwirlModes:
    """
    Rotations e_{i,k} = φ_i(|x - x_i|) e_k × (x - x_i)/r_i about each bubble.

    φ_i is the quintic smoothstep falling from 1 on the sphere to 0 at
    r_i + w_i/4, with w_i = min(δ, r_i) the near-shell width of the exterior
    rule. Every mode is divergence free, tangent to its own sphere and zero
    on the others. Mode 3i + k belongs to bubble i and axis k.
    """

    def __init__(self, config: BubbleConfig, widths=None):
        self.config = config
        if widths is None:
            widths = np.minimum(validate_admissible(config).delta, config.radii)
        self.reach = 0.25 * np.asarray(widths, dtype=float)

    @property
    def n_modes(self) -> int:
        return 3 * self.config.n_bubbles

    @property
    def labels(self) -> List[str]:
        return [f"e_{i + 1}^{k + 1}" for i in range(self.config.n_bubbles) for k in range(3)]

    def _profile(self, points):
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        offsets = points[:, None, :] - self.config.centers[None, :, :]
        s = np.linalg.norm(offsets, axis=2)
        xi = np.clip((s - self.config.radii) / self.reach, 0.0, 1.0)
        phi = 1.0 - xi ** 3 * (10.0 - 15.0 * xi + 6.0 * xi * xi)
        dphi = -30.0 * xi * xi * (1.0 - xi) ** 2 / self.reach
        turned = np.einsum('kcj,pij->pikc', _ROTATIONS, offsets)
        return offsets, s, phi, dphi, turned

    def velocity(self, points) -> np.ndarray:
        """Mode velocities, shape (P, 3N, 3)"""
        _, _, phi, _, turned = self._profile(points)
        values = (phi / self.config.radii)[:, :, None, None] * turned
        return values.reshape(len(phi), -1, 3)

    def gradient(self, points) -> np.ndarray:
        """[p, mode, c, j] = ∂_j e_c, shape (P, 3N, 3, 3)"""
        offsets, s, phi, dphi, turned = self._profile(points)
        radial = dphi / (np.maximum(s, 1e-300) * self.config.radii)
        grad = (radial[:, :, None, None, None] * turned[:, :, :, :, None]
                * offsets[:, :, None, None, :])
        grad = grad + (phi / self.config.radii)[:, :, None, None, None] * _ROTATIONS[None, None]
        return grad.reshape(len(phi), -1, 3, 3)


class ReducedBasis:
    """
    Galerkin modes b_a: selected gradient fields ∇q_a followed by optional
    swirl modes, with their traces on the sphere nodes.

    Surface terms use the actual normal traces of the fields rather than
    the prescribed Neumann data, so Green's identities hold to quadrature
    accuracy whatever the reflection order.
    """

    def __init__(self, harmonic: HarmonicBasis, indices=None, swirl: Optional[SwirlModes] = None,
                 rule: Optional[ExteriorRule] = None):
        if swirl is not None and rule is None:
            raise DomainError("swirl modes need an exterior rule")
        self.harmonic = harmonic
        self.config = harmonic.config
        self.indices = (np.arange(harmonic.n_fields) if indices is None
                        else np.asarray(indices, dtype=int))
        self.swirl = swirl
        self.rule = rule

        sphere = harmonic.rule
        n, m = self.config.n_bubbles, len(sphere)
        traces = harmonic.gradients[:, :, self.indices]
        if swirl is not None:
            extra = swirl.velocity(harmonic.node_points.reshape(-1, 3)).reshape(n, m, -1, 3)
            traces = np.concatenate([traces, extra], axis=2)
        self.traces = traces
        self.normals = sphere.nodes
        self.normal_traces = np.einsum('imak,mk->ima', traces, sphere.nodes)
        self.surface_weights = self.config.radii[:, None] ** 2 * sphere.weights[None, :]

        mean = sphere.weights / sphere.weights.sum()
        self.flux = np.einsum('m,ima->ia', mean, self.normal_traces)
        self.moment = 3.0 * np.einsum('m,ima,mk->iak', mean, self.normal_traces, sphere.nodes)
        self._gram = None
        self._coupling = 0.0

    @property
    def n_gradient(self) -> int:
        return len(self.indices)

    @property
    def n_modes(self) -> int:
        return self.n_gradient + (self.swirl.n_modes if self.swirl is not None else 0)

    @property
    def labels(self) -> List[str]:
        names = field_labels(self.config.n_bubbles)
        labels = [names[a] for a in self.indices]
        return labels + (self.swirl.labels if self.swirl is not None else [])

    def velocity(self, points) -> np.ndarray:
        """b_a(x), shape (P, M, 3)"""
        values = self.harmonic.gradient(points)[:, self.indices]
        if self.swirl is not None:
            values = np.concatenate([values, self.swirl.velocity(points)], axis=1)
        return values

    def gradient(self, points) -> np.ndarray:
        """[p, a, c, j] = ∂_j b_a,c, shape (P, M, 3, 3)"""
        values = self.harmonic.hessian(points)[:, self.indices]
        if self.swirl is not None:
            values = np.concatenate([values, self.swirl.gradient(points)], axis=1)
        return values

    def gram(self) -> np.ndarray:
        """
        G_ab = ∫_Ω b_a·b_b: -Σ∮ q_a ∂_n q_b on the gradient block, exterior
        quadrature wherever a swirl mode is involved.
        """
        if self._gram is None:
            g = self.n_gradient
            potentials = self.harmonic.potentials[:, :, self.indices]
            block = -np.einsum('im,ima,imb->ab', self.surface_weights, potentials,
                               self.normal_traces[:, :, :g])
            block = 0.5 * (block + block.T)
            if self.swirl is None:
                self._gram = block
            else:
                values = self.velocity(self.rule.points)
                full = np.einsum('p,pak,pbk->ab', self.rule.weights, values, values)
                full = 0.5 * (full + full.T)
                full[:g, :g] = block
                self._coupling = float(np.max(np.abs(full[:g, g:]))) if g else 0.0
                self._gram = full
        return self._gram

    @property
    def block_coupling(self) -> float:
        """Largest gradient/swirl Gram entry; zero for tangent swirl modes"""
        self.gram()
        return self._coupling


def _exterior_rule(config: BubbleConfig, params: 'SchemeParams') -> ExteriorRule:
    return build_exterior_rule(config, radial_nodes=params.radial_nodes,
                               angular_degree=params.angular_degree)


def dissipation_matrix(basis, config: BubbleConfig = None, nu: float = 1.0,
                       method: str = 'quadrature', rule: ExteriorRule = None) -> np.ndarray:
    """
    K_ab = 2ν ∫_Ω D(b_a):D(b_b).

    'quadrature' integrates on the exterior rule with a |x|^-6 tail;
    'boundary' uses ∫ ∇∇q_a:∇∇q_b = -Σ∮ ∇q_a·(∇∇q_b n), exact for gradient
    fields.

    Args:
        basis: ReducedBasis, or a HarmonicBasis (all gradient fields)
        config: configuration used to build the rule when none is at hand
        nu: kinematic viscosity
        method: 'quadrature' or 'boundary'
        rule: exterior rule overriding the basis' own

    Returns:
        symmetric (M, M) matrix
    """
    if isinstance(basis, HarmonicBasis):
        basis = ReducedBasis(basis)
    if not nu >= 0:
        raise DomainError(f"viscosity must be nonnegative, got {nu}")
    size = basis.n_modes
    if nu == 0.0:
        return np.zeros((size, size))

    if method == 'boundary':
        if basis.swirl is not None:
            raise DomainError("boundary dissipation needs a gradient-only basis")
        harmonic = basis.harmonic
        n, m = basis.config.n_bubbles, len(harmonic.rule)
        hessians = harmonic.hessian(harmonic.node_points.reshape(-1, 3))[:, basis.indices]
        hessians = hessians.reshape(n, m, -1, 3, 3)
        pushed = np.einsum('imbkj,mj->imbk', hessians, basis.normals)
        raw = -np.einsum('im,imak,imbk->ab', basis.surface_weights, basis.traces, pushed)
        return nu * (raw + raw.T)
    if method != 'quadrature':
        raise DomainError(f"dissipation method must be 'quadrature' or 'boundary', got {method!r}")

    rule = rule or basis.rule or build_exterior_rule(
        config or basis.config,
        angular_degree=2 * basis.harmonic.order + default_config.SPHERE_DEGREE_MARGIN)

    def strain_products(points):
        grad = basis.gradient(points)
        strain = 0.5 * (grad + np.swapaxes(grad, -1, -2))
        return np.einsum('paij,pbij->pab', strain, strain)

    value, _ = rule.integrate(strain_products(rule.points), strain_products(rule.tail_points),
                              decay=_STRAIN_DECAY)
    return nu * (value + value.T)


def convection_tensor(basis: ReducedBasis) -> np.ndarray:
    """
    T_abc = ∫_Ω b_a·(b_b·∇)b_c on the exterior rule; the convection load is
    C(U)_c = Σ_ab U_a U_b T_abc.
    """
    rule = basis.rule
    if rule is None:
        raise DomainError("convection by quadrature needs an exterior rule")

    def contract(points, weights):
        values = basis.velocity(points)
        advected = np.einsum('pbj,pckj->pbck', values, basis.gradient(points))
        return np.einsum('p,pak,pbck->abc', weights, values, advected, optimize=True)

    tensor = contract(rule.points, rule.weights)
    if rule.tail == 'analytic':
        tensor = tensor + contract(rule.tail_points, rule.tail_weights) / (_CONVECTION_DECAY - 3.0)
    return tensor


def accumulator_rates(basis: ReducedBasis, coefficients):
    """(ṙ[u] = ⨏ u·n per bubble, ẋ[u] = 3⨏(u·n)n per bubble) for u = Σ U_a b_a"""
    coefficients = np.asarray(coefficients, dtype=float)
    return basis.flux @ coefficients, np.einsum('iak,a->ik', basis.moment, coefficients)


class FrameBuilder:
    """
    Reduced bases keyed by the quantized configuration.

    Each new harmonic basis is warm-started from the last one solved, which
    within a run is the neighbouring time.
    """

    def __init__(self, params: SchemeParams, quantum: float = 1e-13, max_entries: int = 8):
        self.params = params
        self.quantum = quantum
        self.max_entries = max_entries
        self._cache: 'OrderedDict[bytes, ReducedBasis]' = OrderedDict()
        self._last: Optional[HarmonicBasis] = None
        self.solves = 0

    def __call__(self, config: BubbleConfig) -> ReducedBasis:
        key = np.round(config.state_vector() / self.quantum).astype(np.int64).tobytes()
        cached = self._cache.get(key)
        if cached is not None:
            self._cache.move_to_end(key)
            return cached

        params = self.params
        harmonic = solve_reflections(config, params.L, params.reflection_tolerance,
                                     initial=self._last)
        self._last = harmonic
        self.solves += 1
        rule = _exterior_rule(config, params) if params.volume_quadrature else None
        swirl = SwirlModes(config, rule.shell_widths) if params.swirl else None
        basis = ReducedBasis(harmonic, gradient_indices(config.n_bubbles, params.fields),
                             swirl, rule)
        self._cache[key] = basis
        if len(self._cache) > self.max_entries:
            self._cache.popitem(last=False)
        return basis


@dataclass(frozen=True)
class WindowProblem:
    """
    One window [t_start, t_start + h]: the prescribed configuration moves
    with constant (ẋ, ṙ); coefficients and accumulators are the values at
    t_start.
    """
    t_start: float
    h: float
    config: BubbleConfig
    xdot: np.ndarray
    rdot: np.ndarray
    coefficients: np.ndarray
    radii_u: np.ndarray
    centers_u: np.ndarray

    def __post_init__(self):
        n = self.config.n_bubbles
        object.__setattr__(self, 'xdot', np.array(self.xdot, dtype=float).reshape(n, 3))
        object.__setattr__(self, 'rdot', np.array(self.rdot, dtype=float).reshape(n))
        object.__setattr__(self, 'coefficients',
                           np.array(self.coefficients, dtype=float).reshape(-1))
        object.__setattr__(self, 'radii_u', np.array(self.radii_u, dtype=float).reshape(n))
        object.__setattr__(self, 'centers_u', np.array(self.centers_u, dtype=float).reshape(n, 3))
        if not self.h > 0:
            raise InvalidConfigError([('h', f'window length must be positive, got {self.h}')])

    @property
    def t_end(self) -> float:
        return self.t_start + self.h

    def config_at(self, t: float) -> BubbleConfig:
        """
        Raises:
            CollapseError: a prescribed radius is no longer positive
        """
        dt = t - self.t_start
        radii = self.config.radii + dt * self.rdot
        if np.any(radii <= 0.0):
            raise CollapseError(f"prescribed radius reached zero at t={t:.6g}")
        return self.config.with_state(self.config.centers + dt * self.xdot, radii)

    def path(self) -> AffinePath:
        return AffinePath([self.t_start, self.t_end],
                          [self.config.centers, self.config.centers + self.h * self.xdot],
                          [self.config.radii, self.config.radii + self.h * self.rdot])

    def min_gap(self) -> float:
        """Smallest gap of the prescribed motion over the window"""
        return self.path().min_gap()

    def boundary_speed(self, normals) -> np.ndarray:
        """ṙ_i + ẋ_i·n at the sphere nodes, shape (N, M)"""
        return self.rdot[:, None] + self.xdot @ np.asarray(normals).T


@dataclass
class WindowOperators:
    """Galerkin operators of one internal step, frozen at its midpoint"""
    basis: ReducedBasis
    transport: np.ndarray
    dissipation: np.ndarray
    boundary_speed: np.ndarray
    convection_mode: str
    tensor: Optional[np.ndarray] = None

    def boundary_velocity(self, coefficients) -> np.ndarray:
        return np.einsum('imak,a->imk', self.basis.traces, coefficients)

    def convection(self, coefficients) -> np.ndarray:
        """∫ u·(u·∇)b_a for every mode"""
        if self.convection_mode == 'off':
            return np.zeros(self.basis.n_modes)
        if self.convection_mode == 'quadrature':
            return np.einsum('a,b,abc->c', coefficients, coefficients, self.tensor)
        # -Σ∮(u·n)(u·b_a) + ½Σ∮|u|²(b_a·n); u and b_a are gradient fields
        u = self.boundary_velocity(coefficients)
        normal = np.einsum('imk,mk->im', u, self.basis.normals)
        along = np.einsum('imak,imk->ima', self.basis.traces, u)
        speed2 = np.einsum('imk,imk->im', u, u)
        w = self.basis.surface_weights
        return (-np.einsum('im,im,ima->a', w, normal, along)
                + 0.5 * np.einsum('im,im,ima->a', w, speed2, self.basis.normal_traces))

    def mismatch(self, coefficients) -> np.ndarray:
        """½Σ∮(u·n - ṙ_i - ẋ_i·n)(b_a·u)"""
        u = self.boundary_velocity(coefficients)
        normal = np.einsum('imk,mk->im', u, self.basis.normals)
        along = np.einsum('imak,imk->ima', self.basis.traces, u)
        return 0.5 * np.einsum('im,im,ima->a', self.basis.surface_weights,
                               normal - self.boundary_speed, along)

    def rhs(self, coefficients, pressure) -> np.ndarray:
        """
        d/dt(G U) for coefficients U and per-bubble pressure factors
        (c_i r_i^{2-3γ} or its discrete gradient)
        """
        coefficients = np.asarray(coefficients, dtype=float)
        return (self.transport.T @ coefficients
                + self.convection(coefficients)
                + self.mismatch(coefficients)
                - self.dissipation @ coefficients
                + self.basis.flux.T @ np.asarray(pressure, dtype=float))


def _transport(basis: ReducedBasis, before: ReducedBasis, after: ReducedBasis,
               dt: float) -> np.ndarray:
    """H_ab = ∫ b_a·∂_t b_b with ∂_t by differences between two frames"""
    size = basis.n_modes
    transport = np.zeros((size, size))
    if dt <= 0.0 or (before is basis and after is basis):
        return transport

    g = basis.n_gradient
    harmonic = basis.harmonic
    n, m = basis.config.n_bubbles, len(harmonic.rule)
    flat = harmonic.node_points.reshape(-1, 3)
    rate = (after.harmonic.potential(flat)[:, after.indices]
            - before.harmonic.potential(flat)[:, before.indices]) / dt
    rate = rate.reshape(n, m, -1)
    # ∫ ∇q_a·∇(∂_t q_b) = -Σ∮ ∂_t q_b ∂_n q_a
    transport[:g, :g] = -np.einsum('im,ima,imb->ab', basis.surface_weights,
                                   basis.normal_traces[:, :, :g], rate)

    if basis.swirl is not None:
        points, weights = basis.rule.points, basis.rule.weights
        rates = (after.velocity(points) - before.velocity(points)) / dt
        volume = np.einsum('p,pak,pbk->ab', weights, basis.velocity(points), rates)
        transport[:, g:] = volume[:, g:]
        transport[g:, :g] = volume[g:, :g]
    return transport


def _operators(problem: WindowProblem, basis: ReducedBasis, before: ReducedBasis,
               after: ReducedBasis, dt: float, params: SchemeParams) -> WindowOperators:
    method = 'quadrature' if params.volume_quadrature else 'boundary'
    tensor = convection_tensor(basis) if params.convection == 'quadrature' else None
    return WindowOperators(
        basis=basis,
        transport=_transport(basis, before, after, dt),
        dissipation=dissipation_matrix(basis, nu=params.nu, method=method),
        boundary_speed=problem.boundary_speed(basis.normals),
        convection_mode=params.convection,
        tensor=tensor,
    )


def window_operators(problem: WindowProblem, params: SchemeParams, t: Optional[float] = None,
                     builder: Optional[FrameBuilder] = None) -> WindowOperators:
    """Operators at time t of the window (default t_start), ∂_t by central differences"""
    builder = builder or FrameBuilder(params)
    t = problem.t_start if t is None else t
    eps = default_config.FD_STEP * problem.h
    basis = builder(problem.config_at(t))
    before = builder(problem.config_at(t - eps))
    after = builder(problem.config_at(t + eps))
    return _operators(problem, basis, before, after, 2.0 * eps, params)


def window_rhs(problem: WindowProblem, coefficients, params: SchemeParams,
               t: Optional[float] = None, radii_u=None,
               builder: Optional[FrameBuilder] = None) -> np.ndarray:
    """
    d/dt(G U) at time t of the window with pressure factor c_i r_i[u]^{2-3γ}.

    Raises:
        DegeneracyError: the Gram matrix of a frame is not positive definite
    """
    ops = window_operators(problem, params, t, builder)
    config = problem.config
    rho = problem.radii_u if radii_u is None else np.asarray(radii_u, dtype=float)
    pressure = config.pressure_constants * rho ** (2.0 - 3.0 * config.gamma)
    coefficients = np.asarray(coefficients, dtype=float)
    if coefficients.shape != (ops.basis.n_modes,):
        raise DomainError(f"expected {ops.basis.n_modes} coefficients, got {coefficients.shape}")
    return ops.rhs(coefficients, pressure)


@dataclass(frozen=True)
class StepRecord:
    """State after one accepted internal step"""
    time: float
    config: BubbleConfig
    coefficients: np.ndarray
    radii_u: np.ndarray
    centers_u: np.ndarray
    kinetic: float
    potential: float
    dissipation: float
    basis: ReducedBasis = field(repr=False, compare=False, default=None)

    @property
    def total(self) -> float:
        return self.kinetic + self.potential + self.dissipation


@dataclass
class WindowResult:
    """Coefficients and accumulators at the window end plus every accepted step"""
    coefficients: np.ndarray
    radii_u: np.ndarray
    centers_u: np.ndarray
    dissipation: float
    steps: List[StepRecord]
    halvings: int = 0
    forced: int = 0


def _factor(gram: np.ndarray):
    try:
        return cho_factor(gram)
    except LinAlgError as exc:
        raise DegeneracyError(f"Gram matrix is not positive definite: {exc}") from exc


def _midpoint_step(problem: WindowProblem, state: StepRecord, t1: float,
                   params: SchemeParams, builder: FrameBuilder) -> StepRecord:
    config = problem.config
    constants, gamma = config.pressure_constants, config.gamma
    t0 = state.time
    dt = t1 - t0
    before = state.basis
    after = builder(problem.config_at(t1))
    middle = builder(problem.config_at(0.5 * (t0 + t1)))
    ops = _operators(problem, middle, before, after, dt, params)

    factor = _factor(after.gram())
    momentum = before.gram() @ state.coefficients
    u0, ru0 = state.coefficients, state.radii_u
    u1 = u0.copy()

    def radii_after(mid):
        ru1 = ru0 + dt * (middle.flux @ mid)
        if np.any(ru1 <= params.r_floor):
            raise CollapseError(f"accumulated radius reached {ru1.min():.3g} at t={t1:.6g}")
        return ru1

    change = np.inf
    for _ in range(params.galerkin_max_iters):
        mid = 0.5 * (u0 + u1)
        pressure = pressure_work_factor(ru0, radii_after(mid), constants, gamma)
        updated = cho_solve(factor, momentum + dt * ops.rhs(mid, pressure))
        change = float(np.max(np.abs(updated - u1), initial=0.0))
        u1 = updated
        if change <= params.galerkin_tolerance * (1.0 + float(np.max(np.abs(u1), initial=0.0))):
            break
    else:
        raise ConvergenceError(f"implicit midpoint iteration stalled at t={t1:.6g}",
                               residual=change)

    mid = 0.5 * (u0 + u1)
    ru1 = radii_after(mid)
    xu1 = state.centers_u + dt * np.einsum('iak,a->ik', middle.moment, mid)
    dissipation = state.dissipation + dt * float(mid @ ops.dissipation @ mid)
    return StepRecord(
        time=t1,
        config=after.config,
        coefficients=u1,
        radii_u=ru1,
        centers_u=xu1,
        kinetic=kinetic_energy(u1, after.gram()),
        potential=potential_energy(ru1, constants, gamma),
        dissipation=dissipation,
        basis=after,
    )


def solve_window(problem: WindowProblem, params: SchemeParams, E0: Optional[float] = None,
                 dissipation: float = 0.0, builder: Optional[FrameBuilder] = None) -> WindowResult:
    """
    Implicit-midpoint integration of one window.

    Each internal step of length Δt may raise the total energy
    E_k + E_p + D by at most energy_tolerance·|E0|·Δt/T; a step over budget
    is redone as two half steps, at most max_halvings deep, after which it
    is accepted with a warning.

    Args:
        problem: window data
        params: scheme settings
        E0: reference energy of the run (the window's initial energy if omitted)
        dissipation: cumulative dissipation at t_start
        builder: frame cache shared across windows

    Returns:
        WindowResult

    Raises:
        CollapseError: an accumulated or prescribed radius reached r_floor
        DegeneracyError: a Gram matrix is not positive definite
        ConvergenceError: the midpoint fixed point did not converge
    """
    builder = builder or FrameBuilder(params)
    config = problem.config
    basis = builder(config)
    coefficients = problem.coefficients
    if coefficients.shape != (basis.n_modes,):
        raise DomainError(f"expected {basis.n_modes} coefficients, got {coefficients.shape}")

    start = StepRecord(
        time=problem.t_start,
        config=config,
        coefficients=coefficients,
        radii_u=problem.radii_u,
        centers_u=problem.centers_u,
        kinetic=kinetic_energy(coefficients, basis.gram()),
        potential=potential_energy(problem.radii_u, config.pressure_constants, config.gamma),
        dissipation=float(dissipation),
        basis=basis,
    )
    E0 = start.total - start.dissipation if E0 is None else E0
    steps: List[StepRecord] = []
    counters = {'halvings': 0, 'forced': 0}

    def advance(state: StepRecord, t1: float, depth: int) -> StepRecord:
        candidate = _midpoint_step(problem, state, t1, params, builder)
        increment = candidate.total - state.total
        budget = params.energy_tolerance * abs(E0) * (t1 - state.time) / params.T
        if increment > budget:
            if depth < params.max_halvings:
                logger.debug("energy rose %.3e over budget %.3e on [%.6g, %.6g]; halving",
                               increment, budget, state.time, t1)
                counters['halvings'] += 1
                half = advance(state, 0.5 * (state.time + t1), depth + 1)
                return advance(half, t1, depth + 1)
            logger.warning("energy budget still exceeded after %d halvings at t=%.6g; "
                           "accepting step", depth, t1)
            counters['forced'] += 1
        steps.append(candidate)
        return candidate

    state = start
    for j in range(params.substeps):
        t1 = problem.t_end if j == params.substeps - 1 else (
            problem.t_start + (j + 1) * problem.h / params.substeps)
        state = advance(state, t1, 0)

    logger.debug("window [%.6g, %.6g]: %d steps, %d halvings", problem.t_start, problem.t_end,
                 len(steps), counters['halvings'])
    return WindowResult(state.coefficients, state.radii_u, state.centers_u, state.dissipation,
                        steps, counters['halvings'], counters['forced'])


@dataclass
class SchemeResult:
    """
    Outcome of run_scheme: the prescribed-geometry trajectory, the energy
    ledger and the accumulated radii and centers at every sample.
    """
    trajectory: Trajectory
    ledger: EnergyLedger
    horizon: float
    labels: List[str]
    radii_u: List[np.ndarray] = field(default_factory=list)
    centers_u: List[np.ndarray] = field(default_factory=list)
    status: str = 'completed'
    windows: int = 0
    halvings: int = 0
    forced_steps: int = 0

    def record(self, step: StepRecord) -> None:
        self.trajectory.append(step.time, step.config.centers, step.config.radii,
                               step.coefficients)
        self.ledger.append(step.time, step.kinetic, step.potential, step.dissipation)
        self.radii_u.append(np.array(step.radii_u))
        self.centers_u.append(np.array(step.centers_u))

    def radii_u_array(self) -> np.ndarray:
        return np.array(self.radii_u)

    def centers_u_array(self) -> np.ndarray:
        return np.array(self.centers_u)

    def geometry_deviation(self) -> float:
        """Largest distance between prescribed and accumulated radii and centers"""
        radii = np.abs(self.trajectory.radii_array() - self.radii_u_array())
        centers = np.linalg.norm(self.trajectory.centers_array() - self.centers_u_array(), axis=2)
        return float(max(radii.max(), centers.max()))


def _initial_coefficients(init, basis: ReducedBasis) -> np.ndarray:
    """Accept reduced coefficients, the gradient block alone, or all 4N field coefficients"""
    init = np.asarray(init, dtype=float).reshape(-1)
    size, g = basis.n_modes, basis.n_gradient
    full = basis.harmonic.n_fields
    if init.size == size:
        return init.copy()
    out = np.zeros(size)
    if init.size == g:
        out[:g] = init
    elif init.size == full:
        out[:g] = init[basis.indices]
    else:
        raise InvalidConfigError([('coefficients', f'expected {size}, {g} or {full} values, '
                                                   f'got {init.size}')])
    return out


def _contact_time(problem: WindowProblem, threshold: float) -> Optional[float]:
    """First time in the window where the prescribed gap reaches threshold"""
    if problem.config.n_bubbles < 2 or problem.min_gap() > threshold:
        return None

    def gap(t):
        dt = t - problem.t_start
        return min_gap(problem.config.centers + dt * problem.xdot,
                       problem.config.radii + dt * problem.rdot)

    t0, t1 = problem.t_start, problem.t_end
    lowest = minimize_scalar(gap, bounds=(t0, t1), method='bounded', options={'xatol': 1e-12})
    times = np.sort(np.append(np.linspace(t0, t1, 65), lowest.x))
    below = [k for k, t in enumerate(times) if gap(t) <= threshold]
    if not below:
        return None
    k = below[0]
    if k == 0:
        return t0
    return brentq(lambda t: gap(t) - threshold, times[k - 1], times[k], xtol=1e-14)


def run_scheme(init, config: BubbleConfig, params: SchemeParams,
               builder: Optional[FrameBuilder] = None) -> SchemeResult:
    """
    Windowed viscous scheme from an initial velocity.

    Window k prescribes the previous window's average (ẋ[u], ṙ[u]); the
    accumulators run continuously across windows. The run stops at T, at a
    collision of the prescribed configuration (the window is truncated at
    the contact time), at collapse, or when a Gram matrix degenerates.

    Args:
        init: initial coefficients (reduced modes, gradient modes, or all 4N
            field coefficients (ṙ_1..ṙ_N, ẋ_1..ẋ_N))
        config: initial configuration
        params: scheme settings

    Returns:
        SchemeResult with trajectory, ledger and accumulators

    Raises:
        HorizonExceededError: T exceeds the separation horizon and
            params.override_horizon is not set
    """
    report = validate_admissible(config)
    if not report.admissible:
        raise DomainError(f"initial configuration is not admissible: min gap {report.min_gap:.6g}")
    builder = builder or FrameBuilder(params)
    basis = builder(config)
    coefficients = _initial_coefficients(init, basis)
    constants, gamma = config.pressure_constants, config.gamma

    kinetic0 = kinetic_energy(coefficients, basis.gram())
    potential0 = potential_energy(config.radii, constants, gamma)
    E0 = kinetic0 + potential0
    horizon = separation_horizon(E0, report.delta, config) if E0 > 0 else float('inf')
    if params.T > horizon:
        if not params.override_horizon:
            raise HorizonExceededError(
                f"T={params.T:.6g} exceeds the separation horizon T0={horizon:.6g}")
        logger.warning("running past the separation horizon T0=%.6g (override)", horizon)

    result = SchemeResult(Trajectory(pressure_constants=constants, gamma=gamma),
                          EnergyLedger(E0=E0), horizon, basis.labels)
    start = StepRecord(0.0, config, coefficients, config.radii.copy(), config.centers.copy(),
                       kinetic0, potential0, 0.0, basis)
    result.record(start)
    logger.info("viscous run: N=%d, %d modes, h=%.3g, T=%.3g, nu=%.3g, convection=%s",
                config.n_bubbles, basis.n_modes, params.h, params.T, params.nu, params.convection)

    geometry = config
    xdot = np.zeros((config.n_bubbles, 3))
    rdot = np.zeros(config.n_bubbles)
    state = start
    for k in range(params.n_windows):
        t_start = k * params.h
        problem = WindowProblem(t_start, params.h, geometry, xdot, rdot, state.coefficients,
                                state.radii_u, state.centers_u)
        try:
            contact = _contact_time(problem, params.collision_threshold)
        except InvalidConfigError as exc:
            logger.warning("prescribed motion collapses in window %d: %s", k, exc)
            result.trajectory.add_event(t_start, EVENT_COLLAPSE)
            result.status = EVENT_COLLAPSE
            break
        if contact is not None and contact > t_start:
            problem = WindowProblem(t_start, contact - t_start, geometry, xdot, rdot,
                                    state.coefficients, state.radii_u, state.centers_u)

        if contact is None or contact > t_start:
            try:
                window = solve_window(problem, params, E0, state.dissipation, builder)
            except CollapseError as exc:
                logger.warning("collapse in window %d: %s", k, exc)
                result.trajectory.add_event(result.trajectory.times[-1], EVENT_COLLAPSE)
                result.status = EVENT_COLLAPSE
                break
            except DegeneracyError as exc:
                logger.warning("Gram degenerate in window %d: %s", k, exc)
                result.trajectory.add_event(result.trajectory.times[-1], EVENT_NEAR_CONTACT)
                result.status = EVENT_NEAR_CONTACT
                break
            for step in window.steps:
                result.record(step)
            result.windows += 1
            result.halvings += window.halvings
            result.forced_steps += window.forced

            previous = state
            state = window.steps[-1]
            rdot = (state.radii_u - previous.radii_u) / problem.h
            xdot = (state.centers_u - previous.centers_u) / problem.h
            geometry = state.config

            if params.override_horizon and t_start < horizon <= problem.t_end:
                result.trajectory.add_event(horizon, EVENT_HORIZON)

        if contact is not None:
            result.trajectory.add_event(contact, EVENT_COLLISION)
            result.status = EVENT_COLLISION
            break

    logger.info("viscous run %s: %d samples to t=%.6g, %d windows, %d halvings, %d basis solves",
                result.status, len(result.trajectory), result.trajectory.times[-1],
                result.windows, result.halvings, builder.solves)
    return result


def strong_form_residual(result: SchemeResult, nu: float) -> float:
    """
    Largest relative residual of the averaged normal-stress balance of a
    single bubble,

        r U̇ + 3/2 ṙ U + 4νU/r = (c/4π) ρ^{2-3γ}/r²,

    at the midpoints of the recorded steps, with r the prescribed radius,
    ρ the accumulated radius and U the monopole coefficient.
    """
    trajectory = result.trajectory
    if trajectory.radii[0].size != 1 or result.labels[0] != 'q_1':
        raise DomainError("strong-form residual needs a single bubble with its monopole field")
    if len(trajectory) < 2:
        raise DomainError("strong-form residual needs at least two samples")

    times = np.array(trajectory.times)
    r = trajectory.radii_array()[:, 0]
    u = trajectory.coefficients_array()[:, 0]
    rho = result.radii_u_array()[:, 0]
    dt = np.diff(times)
    r_mid = 0.5 * (r[1:] + r[:-1])
    u_mid = 0.5 * (u[1:] + u[:-1])
    rho_mid = 0.5 * (rho[1:] + rho[:-1])
    c, gamma = float(trajectory.pressure_constants[0]), trajectory.gamma

    terms = np.stack([
        r_mid * np.diff(u) / dt,
        1.5 * (np.diff(r) / dt) * u_mid,
        4.0 * nu * u_mid / r_mid,
        -c / (4.0 * np.pi) * rho_mid ** (2.0 - 3.0 * gamma) / r_mid ** 2,
    ])
    scale = np.maximum(np.max(np.abs(terms), axis=0), 1e-300)
    return float(np.max(np.abs(terms.sum(axis=0)) / scale))
