# relaxed-bubbles/src/quadrature.py
"""
Deterministic quadrature on spheres and on the fluid domain outside the
bubbles, plus the central-difference operators used by verification checks.

Sphere rules are tensor products of Gauss-Legendre nodes in cos(colatitude)
with equispaced azimuths. The exterior rule attaches a radial rule to every
bubble and blends the per-bubble grids with a partition of unity; beyond a
truncation sphere the integrand is continued by an analytic power-law tail.
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.special import roots_legendre

try:
    from .config import config as default_config
    from .errors import DomainError, QuadratureError
    from .geometry import BubbleConfig, validate_admissible
    from .mollifier import get_mollifier
except ImportError:
    from config import config as default_config
    from errors import DomainError, QuadratureError
    from geometry import BubbleConfig, validate_admissible
    from mollifier import get_mollifier

logger = logging.getLogger(__name__)

MAX_SPHERE_DEGREE = 400
RADIAL_MAPS = ('inverse', 'linear')
TAIL_MODES = ('analytic', 'cutoff')

# near-shell panel breakpoints, in units of the shell width
_SHELL_BREAKS = (0.0, 0.25, 0.75, 1.0)


@dataclass(frozen=True)
class SphereRule:
    """Nodes on the unit sphere with positive weights summing to 4π"""
    nodes: np.ndarray
    weights: np.ndarray
    exactness_degree: int

    def __len__(self) -> int:
        return len(self.weights)

    def points(self, center, radius) -> np.ndarray:
        """Nodes mapped onto the sphere of given center and radius"""
        return np.asarray(center, dtype=float)[None, :] + radius * self.nodes

    def integrate(self, values, radius: float = 1.0):
        """∮ f dS over a sphere of the given radius from samples at the nodes"""
        values = np.asarray(values, dtype=float)
        return radius * radius * np.einsum('k,k...->...', self.weights, values)

    def average(self, values):
        """Mean value ⨏ f over the sphere"""
        return self.integrate(values) / (4.0 * np.pi)


@lru_cache(maxsize=32)
def make_sphere_rule(degree: int) -> SphereRule:
    """
    Product rule exact for spherical polynomials of degree <= degree.

    Gauss-Legendre with degree//2 + 1 nodes in cos θ is exact up to degree
    2(degree//2) + 1; the azimuthal trapezoid with an even number of points
    M > degree is exact for Fourier modes |m| < M. The even count keeps the
    node set symmetric under every coordinate reflection.

    Args:
        degree: required polynomial exactness

    Returns:
        SphereRule with read-only arrays
    """
    if not isinstance(degree, (int, np.integer)) or not 0 <= degree <= MAX_SPHERE_DEGREE:
        raise DomainError(
            f"unsupported sphere rule degree {degree!r}; supported range is 0..{MAX_SPHERE_DEGREE}")
    degree = int(degree)

    n_theta = degree // 2 + 1
    n_phi = 2 * (degree // 2 + 1)
    cos_theta, w_theta = roots_legendre(n_theta)
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    sin_theta = np.sqrt(1.0 - cos_theta ** 2)

    nodes = np.stack([
        np.outer(sin_theta, np.cos(phi)).ravel(),
        np.outer(sin_theta, np.sin(phi)).ravel(),
        np.repeat(cos_theta, n_phi),
    ], axis=1)
    weights = np.repeat(w_theta, n_phi) * (2.0 * np.pi / n_phi)

    nodes.flags.writeable = False
    weights.flags.writeable = False
    logger.debug("sphere rule degree %d: %d nodes", degree, len(weights))
    return SphereRule(nodes, weights, degree)


@dataclass(frozen=True)
class ExteriorRule:
    """
    Volume rule for the fluid region outside all bubbles.

    points/weights cover the region inside each bubble's truncation sphere,
    already multiplied by the partition of unity. tail_points/tail_weights
    sample the truncation spheres; tail_weights hold R_T³ times the sphere
    weight and partition value, so a field decaying like |x|^{-p} has tail
    Σ tail_weights·f/(p - 3).
    """
    points: np.ndarray
    weights: np.ndarray
    tail_points: np.ndarray
    tail_weights: np.ndarray
    truncation_radii: np.ndarray
    shell_widths: np.ndarray
    tail: str = 'analytic'
    radial_map: str = 'inverse'

    def __len__(self) -> int:
        return len(self.weights)

    def integrate(self, values, tail_values=None, decay: float = 4.0):
        """
        Weighted sum of samples at the rule points (any trailing shape).

        Returns:
            (value, truncation_estimate); the tail is added to value only in
            'analytic' mode
        """
        values = np.asarray(values, dtype=float)
        main = np.einsum('p,p...->...', self.weights, values)
        if tail_values is None:
            return main, np.zeros_like(main)
        if decay <= 3.0:
            raise DomainError(f"tail decay exponent must exceed 3, got {decay}")
        tail_values = np.asarray(tail_values, dtype=float)
        estimate = np.einsum('p,p...->...', self.tail_weights, tail_values) / (decay - 3.0)
        if self.tail == 'analytic':
            return main + estimate, estimate
        return main, estimate


class ExteriorIntegral(NamedTuple):
    value: float
    truncation_estimate: float


def partition_of_unity(points, config: BubbleConfig, shell_widths) -> np.ndarray:
    """
    Weights w_i(x), one column per bubble, summing to 1 outside the bubbles.

    Near bubble i the mollified cutoff ρ_i owns the point outright; the
    remainder 1 - Σρ_j is shared in proportion to |x - x_i|^{-4}. Every w_i
    vanishes where another bubble's cutoff equals 1.
    """
    points = np.asarray(points, dtype=float)
    n = config.n_bubbles
    if n == 1:
        return np.ones((len(points), 1))

    mollifier = get_mollifier()
    dist = np.linalg.norm(points[:, None, :] - config.centers[None, :, :], axis=2)
    rho = np.stack([
        mollifier.cutoff(dist[:, j], config.radii[j], shell_widths[j])[0] for j in range(n)
    ], axis=1)
    inverse = np.maximum(dist, 1e-300) ** -4
    share = inverse / inverse.sum(axis=1, keepdims=True)
    remainder = np.clip(1.0 - rho.sum(axis=1, keepdims=True), 0.0, 1.0)
    return rho + remainder * share


def _radial_rule(inner, width, outer, shell_nodes, radial_nodes, radial_map):
    """Radial nodes and weights (including s²) on (inner, outer)"""
    xs, ws = roots_legendre(shell_nodes)
    radii, weights = [], []
    for a, b in zip(_SHELL_BREAKS[:-1], _SHELL_BREAKS[1:]):
        lo, hi = inner + a * width, inner + b * width
        s = 0.5 * (hi - lo) * xs + 0.5 * (hi + lo)
        radii.append(s)
        weights.append(0.5 * (hi - lo) * ws * s * s)

    xr, wr = roots_legendre(radial_nodes)
    lo = inner + width
    if radial_map == 'inverse':
        # τ = 1/s on (1/outer, 1/lo); ds = s² dτ
        t_lo, t_hi = 1.0 / outer, 1.0 / lo
        tau = 0.5 * (t_hi - t_lo) * xr + 0.5 * (t_hi + t_lo)
        s = 1.0 / tau
        radii.append(s)
        weights.append(0.5 * (t_hi - t_lo) * wr * s ** 4)
    else:
        s = 0.5 * (outer - lo) * xr + 0.5 * (outer + lo)
        radii.append(s)
        weights.append(0.5 * (outer - lo) * wr * s * s)
    return np.concatenate(radii), np.concatenate(weights)


def build_exterior_rule(config: BubbleConfig,
                        radial_nodes: int = None,
                        shell_nodes: int = 8,
                        angular_degree: int = None,
                        truncation_factor: float = None,
                        tail: str = 'analytic',
                        radial_map: str = 'inverse') -> ExteriorRule:
    """
    Exterior rule for a bubble configuration.

    Each bubble carries three Gauss-Legendre panels across a near shell of
    width min(δ, r_i) followed by an outer panel reaching the truncation
    radius R_T,i = truncation_factor·max_j(|x_j - x_i| + r_j). The outer panel
    is Gauss-Legendre in τ = 1/s ('inverse', exact for s^{-4}·poly(1/s)) or
    in s ('linear', exact for the volume of the truncated region).

    Args:
        config: admissible bubble configuration
        radial_nodes: nodes on the outer panel (config.EXTERIOR_RADIAL_NODES)
        shell_nodes: nodes per near-shell panel
        angular_degree: sphere rule exactness (2L + margin by default)
        truncation_factor: multiple of the configuration extent
        tail: 'analytic' adds the power-law tail, 'cutoff' only reports it
        radial_map: 'inverse' or 'linear'

    Returns:
        ExteriorRule
    """
    radial_nodes = radial_nodes or default_config.EXTERIOR_RADIAL_NODES
    truncation_factor = truncation_factor or default_config.TRUNCATION_FACTOR
    if angular_degree is None:
        angular_degree = 2 * default_config.REFLECTION_ORDER + default_config.SPHERE_DEGREE_MARGIN
    if tail not in TAIL_MODES:
        raise DomainError(f"tail mode must be one of {TAIL_MODES}, got {tail!r}")
    if radial_map not in RADIAL_MAPS:
        raise DomainError(f"radial map must be one of {RADIAL_MAPS}, got {radial_map!r}")
    if truncation_factor <= 2.0:
        raise DomainError(f"truncation factor must exceed 2, got {truncation_factor}")

    report = validate_admissible(config)
    if not report.admissible:
        raise DomainError(f"exterior rule needs separated bubbles, min gap {report.min_gap:.3g}")

    sphere = make_sphere_rule(angular_degree)
    centers, radii = config.centers, config.radii
    widths = np.minimum(report.delta, radii)

    points, weights, tail_points, tail_weights, truncation = [], [], [], [], []
    for i in range(config.n_bubbles):
        reach = np.linalg.norm(centers - centers[i], axis=1) + radii
        outer = truncation_factor * float(np.max(reach))
        truncation.append(outer)

        s, ws = _radial_rule(radii[i], widths[i], outer, shell_nodes, radial_nodes, radial_map)
        pts = (centers[i][None, None, :]
               + s[:, None, None] * sphere.nodes[None, :, :]).reshape(-1, 3)
        w = (ws[:, None] * sphere.weights[None, :]).ravel()
        w = w * partition_of_unity(pts, config, widths)[:, i]
        keep = w > 0.0
        points.append(pts[keep])
        weights.append(w[keep])

        tail_pts = sphere.points(centers[i], outer)
        tw = sphere.weights * outer ** 3 * partition_of_unity(tail_pts, config, widths)[:, i]
        tail_points.append(tail_pts)
        tail_weights.append(tw)

    rule = ExteriorRule(
        points=np.concatenate(points),
        weights=np.concatenate(weights),
        tail_points=np.concatenate(tail_points),
        tail_weights=np.concatenate(tail_weights),
        truncation_radii=np.array(truncation),
        shell_widths=widths,
        tail=tail,
        radial_map=radial_map,
    )
    logger.debug("exterior rule: %d volume nodes, %d tail nodes", len(rule.weights),
                 len(rule.tail_weights))
    return rule


def _checked(values, points) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    finite = np.isfinite(values.reshape(len(points), -1)).all(axis=1)
    if not finite.all():
        k = int(np.argmin(finite))
        raise QuadratureError(f"non-finite integrand sample at node {k}", location=points[k])
    return values


def exterior_integral(field: Callable, config: BubbleConfig,
                      rule: Optional[ExteriorRule] = None,
                      decay: float = 4.0) -> ExteriorIntegral:
    """
    ∫_Ω f dx for a scalar field sampled on the exterior rule.

    Args:
        field: maps an (P, 3) array of points to P values
        config: bubble configuration
        rule: prebuilt rule (built from config when omitted)
        decay: power p of the assumed |x|^{-p} decay beyond the truncation radius

    Returns:
        ExteriorIntegral(value, truncation_estimate)
    """
    rule = rule or build_exterior_rule(config)
    values = _checked(field(rule.points), rule.points)
    tail_values = _checked(field(rule.tail_points), rule.tail_points)

    # exactly rounded sums make the value independent of reduction order
    main = math.fsum(rule.weights * values)
    estimate = math.fsum(rule.tail_weights * tail_values) / (decay - 3.0)
    value = main + estimate if rule.tail == 'analytic' else main
    return ExteriorIntegral(value, estimate)


_FD_STENCILS = {
    2: ((1.0, 0.5), (-1.0, -0.5)),
    4: ((2.0, -1.0 / 12.0), (1.0, 8.0 / 12.0), (-1.0, -8.0 / 12.0), (-2.0, 1.0 / 12.0)),
}


def fd_gradient(field: Callable, points, step: float, order: int = 2) -> np.ndarray:
    """
    Central-difference derivatives of a vectorized field.

    Args:
        field: maps (P, 3) points to (P, ...) values
        points: (3,) or (P, 3)
        step: spacing h
        order: 2 or 4

    Returns:
        array of shape value_shape + (3,) per point; [..., j] = ∂_j f
    """
    if order not in _FD_STENCILS:
        raise DomainError(f"finite-difference order must be 2 or 4, got {order}")
    points = np.asarray(points, dtype=float)
    single = points.ndim == 1
    points = points.reshape(-1, 3)
    stencil = _FD_STENCILS[order]

    shifted = [points + offset * step * np.eye(3)[j]
               for j in range(3) for offset, _ in stencil]
    values = np.asarray(field(np.concatenate(shifted)), dtype=float)
    values = values.reshape((3, len(stencil), len(points)) + values.shape[1:])

    coeffs = np.array([c for _, c in stencil])
    grad = np.einsum('s,js...->...j', coeffs, values) / step
    # the einsum leaves the point axis first
    return grad[0] if single else grad


def fd_jacobian(field: Callable, point, step: float = None, order: int = 2) -> np.ndarray:
    """J[i, j] = ∂_j f_i by central differences"""
    step = step or default_config.FD_STEP
    return fd_gradient(field, point, step, order)


def fd_divergence(field: Callable, point, step: float = None, order: int = 2):
    """Trace of the finite-difference Jacobian"""
    jac = fd_jacobian(field, point, step, order)
    return np.trace(jac, axis1=-2, axis2=-1)
