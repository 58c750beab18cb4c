# relaxed-bubbles/src/ale_map.py
"""
ALE machinery for a moving bubble configuration.

Given a piecewise-affine reference path t -> (X(t), R(t)), the ALE field

    v(t, x) = Σ_i χ_i(t, |x - x_i(t)|) (ẋ_i + (ṙ_i/r_i)(x - x_i(t)))

moves each bubble rigidly-plus-dilation on B(x_i, r_i + δ/4) and vanishes
beyond r_i + 3δ/4. Its flow Θ maps the initial fluid domain onto the domain at
time t; the Piola transform S(t)v = DΘ v∘Θ⁻¹ / det DΘ carries solenoidal
fields to solenoidal fields and tangent fields to tangent fields.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

try:
    from .config import config as default_config
    from .errors import ConvergenceError, DomainError, InvalidConfigError
    from .geometry import BubbleConfig, Trajectory, validate_admissible
    from .mollifier import get_mollifier
    from .quadrature import fd_divergence, fd_jacobian, make_sphere_rule
except ImportError:
    from config import config as default_config
    from errors import ConvergenceError, DomainError, InvalidConfigError
    from geometry import BubbleConfig, Trajectory, validate_admissible
    from mollifier import get_mollifier
    from quadrature import fd_divergence, fd_jacobian, make_sphere_rule

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AffinePath:
    """Reference trajectory, affine between knots: centers (K, N, 3), radii (K, N)"""

    knots: np.ndarray
    centers: np.ndarray
    radii: np.ndarray

    def __post_init__(self):
        knots = np.array(self.knots, dtype=float).reshape(-1)
        radii = np.array(self.radii, dtype=float).reshape(len(knots), -1)
        centers = np.array(self.centers, dtype=float).reshape(len(knots), radii.shape[1], 3)
        violations = []
        if len(knots) < 2:
            violations.append(('knots', 'a path needs at least two knots'))
        elif np.any(np.diff(knots) <= 0):
            violations.append(('knots', 'knots must increase'))
        if np.any(radii <= 0):
            violations.append(('radii', 'radii must stay positive along the path'))
        if violations:
            raise InvalidConfigError(violations)
        object.__setattr__(self, 'knots', knots)
        object.__setattr__(self, 'centers', centers)
        object.__setattr__(self, 'radii', radii)

    @classmethod
    def from_velocities(cls, config: BubbleConfig, xdot, rdot, t_end: float) -> 'AffinePath':
        """Constant velocities on [0, t_end]"""
        xdot = np.asarray(xdot, dtype=float).reshape(-1, 3)
        rdot = np.asarray(rdot, dtype=float).reshape(-1)
        return cls([0.0, t_end], [config.centers, config.centers + t_end * xdot],
                   [config.radii, config.radii + t_end * rdot])

    @classmethod
    def from_trajectory(cls, trajectory: Trajectory) -> 'AffinePath':
        return cls(trajectory.times, trajectory.centers_array(), trajectory.radii_array())

    @classmethod
    def between(cls, config_a: BubbleConfig, config_b: BubbleConfig,
                duration: float = 1.0) -> 'AffinePath':
        if config_a.n_bubbles != config_b.n_bubbles:
            raise DomainError("configurations have different numbers of bubbles")
        return cls([0.0, duration], [config_a.centers, config_b.centers],
                   [config_a.radii, config_b.radii])

    @property
    def n_bubbles(self) -> int:
        return self.radii.shape[1]

    @property
    def t_start(self) -> float:
        return float(self.knots[0])

    @property
    def t_end(self) -> float:
        return float(self.knots[-1])

    def segment(self, t: float) -> int:
        k = int(np.searchsorted(self.knots, t, side='right')) - 1
        return min(max(k, 0), len(self.knots) - 2)

    def state(self, t: float, segment: int = None) -> Tuple[np.ndarray, np.ndarray]:
        """(centers (N, 3), radii (N,)) at time t"""
        k = self.segment(t) if segment is None else segment
        weight = (t - self.knots[k]) / (self.knots[k + 1] - self.knots[k])
        centers = (1 - weight) * self.centers[k] + weight * self.centers[k + 1]
        radii = (1 - weight) * self.radii[k] + weight * self.radii[k + 1]
        return centers, radii

    def velocity(self, t: float, segment: int = None) -> Tuple[np.ndarray, np.ndarray]:
        """(ẋ (N, 3), ṙ (N,)) on the segment containing t"""
        k = self.segment(t) if segment is None else segment
        span = self.knots[k + 1] - self.knots[k]
        return ((self.centers[k + 1] - self.centers[k]) / span,
                (self.radii[k + 1] - self.radii[k]) / span)

    def min_gap(self) -> float:
        """Smallest gap along the path; each pair gap is convex on a segment"""
        n = self.n_bubbles
        if n < 2:
            return float('inf')
        best = float('inf')
        for k in range(len(self.knots) - 1):
            for i in range(n):
                for j in range(i + 1, n):
                    d0 = self.centers[k, i] - self.centers[k, j]
                    d1 = self.centers[k + 1, i] - self.centers[k + 1, j]
                    s0 = self.radii[k, i] + self.radii[k, j]
                    s1 = self.radii[k + 1, i] + self.radii[k + 1, j]

                    def gap(w):
                        return float(np.linalg.norm((1 - w) * d0 + w * d1) - (1 - w) * s0 - w * s1)

                    res = minimize_scalar(gap, bounds=(0.0, 1.0), method='bounded',
                                          options={'xatol': 1e-12})
                    best = min(best, gap(0.0), gap(1.0), float(res.fun))
        return best


class AleField:
    """
    ALE velocity of a reference path with separation parameter delta.

    The default delta is a quarter of the smallest gap along the path (half
    the smallest radius for a single bubble).

    Raises:
        InvalidConfigError: delta is not positive or the path comes closer
            than 4·delta
    """

    def __init__(self, path: AffinePath, delta: Optional[float] = None):
        self.path = path
        gap = path.min_gap()
        if delta is None:
            delta = 0.25 * gap if path.n_bubbles > 1 else 0.5 * float(path.radii.min())
        if not delta > 0:
            raise InvalidConfigError([('delta', f'must be positive, got {delta}')])
        if gap < 4.0 * delta * (1.0 - 1e-12):
            raise InvalidConfigError([('delta', f'path gap {gap:.6g} is below 4·delta = {4 * delta:.6g}')])
        self.delta = float(delta)
        self.mollifier = get_mollifier()
        reach = np.linalg.norm(path.centers, axis=2) + path.radii
        self.m0 = float(reach.max()) + self.delta

    @property
    def n_bubbles(self) -> int:
        return self.path.n_bubbles

    def chi(self, i: int, t: float, s):
        """Cutoff of bubble i at radial coordinate s"""
        _, radii = self.path.state(t)
        return self.mollifier.cutoff(s, radii[i], self.delta)[0]

    def _terms(self, t, points, segment):
        centers, radii = self.path.state(t, segment)
        xdot, rdot = self.path.velocity(t, segment)
        for i in range(self.n_bubbles):
            offset = points - centers[i]
            s = np.linalg.norm(offset, axis=1)
            value, slope = self.mollifier.cutoff(s, radii[i], self.delta)
            rate = rdot[i] / radii[i]
            local = xdot[i][None, :] + rate * offset
            yield offset, s, value, slope, rate, local

    def velocity(self, t: float, points, segment: int = None) -> np.ndarray:
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        out = np.zeros_like(points)
        for _, _, value, _, _, local in self._terms(t, points, segment):
            out += value[:, None] * local
        return out

    def velocity_jacobian(self, t: float, points, segment: int = None) -> np.ndarray:
        """∂_j v_k at each point, shape (P, 3, 3) indexed [p, k, j]"""
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        out = np.zeros((len(points), 3, 3))
        eye = np.eye(3)
        for offset, s, value, slope, rate, local in self._terms(t, points, segment):
            # slope vanishes on the plateau, so s = 0 never contributes
            radial = np.where(s > 0, slope / np.where(s > 0, s, 1.0), 0.0)
            out += np.einsum('p,pk,pj->pkj', radial, local, offset)
            out += (value * rate)[:, None, None] * eye
        return out


def chi(field: AleField, i: int, t: float, s):
    return field.chi(i, t, s)


def v_ale(field: AleField, t: float, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = field.velocity(t, x)
    return out[0] if x.ndim == 1 else out


def _cofactor(jacobian: np.ndarray) -> np.ndarray:
    """det(A) A^{-T} for a stack of matrices"""
    det = np.linalg.det(jacobian)
    return det[:, None, None] * np.transpose(np.linalg.inv(jacobian), (0, 2, 1))


class FlowMap:
    """
    Flow Θ(t, ·) of an ALE field from the path start to time t.

    Classical RK4 with steps aligned to the path knots; the Jacobian DΘ is
    propagated by the variational equation with the same scheme, so it is
    the exact derivative of the discrete map.
    """

    def __init__(self, field: AleField, t: float, tol: float = None):
        path = field.path
        if not path.t_start <= t <= path.t_end:
            raise DomainError(f"t={t} is outside the path horizon [{path.t_start}, {path.t_end}]")
        self.field = field
        self.t = float(t)
        self.tol = tol if tol is not None else default_config.FLOW_TOLERANCE
        rate = default_config.FLOW_STEPS_PER_UNIT_TIME * (
            default_config.FLOW_TOLERANCE / self.tol) ** 0.25
        self._grid = self._build_grid(rate)
        self._cache = {}

    def _build_grid(self, steps_per_unit: float):
        """(t_a, h, segment) per RK4 step from the path start to t"""
        path = self.field.path
        grid = []
        for k in range(len(path.knots) - 1):
            a, b = path.knots[k], min(path.knots[k + 1], self.t)
            if b <= a:
                break
            steps = max(1, int(np.ceil((b - a) * steps_per_unit)))
            h = (b - a) / steps
            grid.extend((a + m * h, h, k) for m in range(steps))
        return grid

    @property
    def n_steps(self) -> int:
        return len(self._grid)

    def _rk4(self, points, jacobian, backward=False):
        field = self.field
        steps = reversed(self._grid) if backward else self._grid
        x = points.copy()
        jac = None if jacobian is None else jacobian.copy()
        for t_a, h, k in steps:
            t0, dt = (t_a + h, -h) if backward else (t_a, h)
            times = (t0, t0 + 0.5 * dt, t0 + 0.5 * dt, t0 + dt)
            kx, kj = [], []
            for stage, ts in enumerate(times):
                scale = 0.0 if stage == 0 else (0.5 if stage < 3 else 1.0)
                xs = x if stage == 0 else x + scale * dt * kx[-1]
                kx.append(field.velocity(ts, xs, k))
                if jac is not None:
                    js = jac if stage == 0 else jac + scale * dt * kj[-1]
                    kj.append(np.einsum('pkj,pjl->pkl', field.velocity_jacobian(ts, xs, k), js))
            x = x + dt / 6.0 * (kx[0] + 2 * kx[1] + 2 * kx[2] + kx[3])
            if jac is not None:
                jac = jac + dt / 6.0 * (kj[0] + 2 * kj[1] + 2 * kj[2] + kj[3])
        return x, jac

    def map_with_jacobian(self, points) -> Tuple[np.ndarray, np.ndarray]:
        """(Θ (P, 3), DΘ (P, 3, 3)) at reference points"""
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        key = points.tobytes()
        if key not in self._cache:
            if len(self._cache) > 64:
                self._cache.clear()
            eye = np.broadcast_to(np.eye(3), (len(points), 3, 3))
            self._cache[key] = self._rk4(points, eye)
        return self._cache[key]

    def map(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        return self._rk4(points, None)[0]

    def jacobian(self, points) -> np.ndarray:
        return self.map_with_jacobian(points)[1]

    def determinant(self, points) -> np.ndarray:
        return np.linalg.det(self.jacobian(points))

    def cofactor(self, points) -> np.ndarray:
        return _cofactor(self.jacobian(points))

    def inverse(self, points) -> np.ndarray:
        """
        Θ⁻¹ by backward integration refined with Newton on Θ.

        Raises:
            ConvergenceError: Newton did not reach NEWTON_TOLERANCE
        """
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        y = self._rk4(points, None, backward=True)[0]
        threshold = default_config.NEWTON_TOLERANCE * (1.0 + np.abs(points).max())
        eye = np.broadcast_to(np.eye(3), (len(points), 3, 3))
        for _ in range(default_config.NEWTON_MAX_ITERS):
            image, jac = self._rk4(y, eye)
            mismatch = image - points
            err = float(np.abs(mismatch).max()) if len(points) else 0.0
            if err <= threshold:
                return y
            y = y - np.linalg.solve(jac, mismatch[:, :, None])[:, :, 0]
        raise ConvergenceError("inverse flow Newton iteration did not converge", residual=err)


def flow(field: AleField, t: float, x, tol: float = None) -> np.ndarray:
    """Θ(t, x) for one point or an (n, 3) array; FlowMap gives DΘ, det DΘ and Cof DΘ"""
    x = np.asarray(x, dtype=float)
    out = FlowMap(field, t, tol).map(x)
    return out[0] if x.ndim == 1 else out


def pushforward(flow_map: FlowMap, v: Callable) -> Callable:
    """S(t)v: x ↦ DΘ(y) v(y) / det DΘ(y) with y = Θ⁻¹(x)"""

    def transported(points):
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        y = flow_map.inverse(points)
        jac = flow_map.jacobian(y)
        values = np.asarray(v(y), dtype=float).reshape(-1, 3)
        return np.einsum('pkj,pj->pk', jac, values) / np.linalg.det(jac)[:, None]

    return transported


def pullback(flow_map: FlowMap, w: Callable) -> Callable:
    """S(t)⁻¹w: y ↦ det DΘ(y) DΘ(y)⁻¹ w(Θ(y))"""

    def transported(points):
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        image, jac = flow_map.map_with_jacobian(points)
        values = np.asarray(w(image), dtype=float).reshape(-1, 3)
        solved = np.linalg.solve(jac, values[:, :, None])[:, :, 0]
        return np.linalg.det(jac)[:, None] * solved

    return transported


def _scaling_map(field: AleField, i: int, t: float, points) -> Tuple[np.ndarray, float]:
    centers0, radii0 = field.path.state(field.path.t_start)
    centers, radii = field.path.state(t)
    ratio = radii[i] / radii0[i]
    return centers[i] + ratio * (points - centers0[i]), ratio


def near_points(field: AleField, i: int, degree: int = 6,
                fractions=(0.0, 0.5, 1.0)) -> np.ndarray:
    """Sphere-rule points on shells of B(x_i(0), r_i(0) + δ/8)"""
    centers0, radii0 = field.path.state(field.path.t_start)
    rule = make_sphere_rule(degree)
    shells = [rule.points(centers0[i], radii0[i] + f * field.delta / 8.0) for f in fractions]
    return np.concatenate(shells)


def closed_form_residual(flow_map: FlowMap) -> Tuple[float, float]:
    """
    Largest deviation from the scaling map near the bubbles.

    Returns:
        (max |Θ - scaling map|, max |det DΘ - (r_i(t)/r_i(0))³|)
    """
    field = flow_map.field
    worst_map, worst_det = 0.0, 0.0
    for i in range(field.n_bubbles):
        points = near_points(field, i)
        image, jac = flow_map.map_with_jacobian(points)
        expected, ratio = _scaling_map(field, i, flow_map.t, points)
        worst_map = max(worst_map, float(np.abs(image - expected).max()))
        worst_det = max(worst_det, float(np.abs(np.linalg.det(jac) - ratio ** 3).max()))
    return worst_map, worst_det


def piola_residual(flow_map: FlowMap, points, step: float = 5e-4) -> float:
    """max |∂_k Cof(DΘ)_ik| relative to max |Cof(DΘ)|, fourth-order differences"""
    points = np.asarray(points, dtype=float).reshape(-1, 3)

    def cofactor_rows(p):
        return flow_map.cofactor(p).reshape(len(p), 9)

    derivative = fd_jacobian(cofactor_rows, points, step=step, order=4).reshape(len(points), 3, 3, 3)
    divergence = np.einsum('pikk->pi', derivative)
    scale = float(np.abs(flow_map.cofactor(points)).max())
    return float(np.abs(divergence).max()) / scale


def normal_transport_residual(flow_map: FlowMap, degree: int = 8) -> float:
    """Cof(DΘ)n₀/|Cof(DΘ)n₀| against the outward normal of ∂B_i(t)"""
    field = flow_map.field
    rule = make_sphere_rule(degree)
    centers0, radii0 = field.path.state(field.path.t_start)
    centers, radii = field.path.state(flow_map.t)
    worst = 0.0
    for i in range(field.n_bubbles):
        points = rule.points(centers0[i], radii0[i])
        image, jac = flow_map.map_with_jacobian(points)
        transported = np.einsum('pkj,pj->pk', _cofactor(jac), rule.nodes)
        transported /= np.linalg.norm(transported, axis=1)[:, None]
        expected = (image - centers[i]) / radii[i]
        worst = max(worst, float(np.abs(transported - expected).max()))
    return worst


def tangency_residual(flow_map: FlowMap, v: Callable, i: int, degree: int = 8) -> float:
    """max |(S(t)v)·n_t| on ∂B_i(t) for a field v tangent on ∂B_i(0)"""
    field = flow_map.field
    rule = make_sphere_rule(degree)
    centers0, radii0 = field.path.state(field.path.t_start)
    centers, radii = field.path.state(flow_map.t)
    points = rule.points(centers0[i], radii0[i])
    image, jac = flow_map.map_with_jacobian(points)
    values = np.asarray(v(points), dtype=float).reshape(-1, 3)
    transported = np.einsum('pkj,pj->pk', jac, values) / np.linalg.det(jac)[:, None]
    normals = (image - centers[i]) / radii[i]
    return float(np.abs(np.sum(transported * normals, axis=1)).max())


def divergence_residual(flow_map: FlowMap, v: Callable, points, step: float = 1e-3) -> float:
    """max |div S(t)v| at points of Ω(t)"""
    return float(np.abs(fd_divergence(pushforward(flow_map, v), points, step=step, order=4)).max())


def transport_residual(field: AleField, e0: Callable, t: float, points, dt: float = 1e-3,
                       step: float = 1e-3, tol: float = None) -> float:
    """
    Residual of ∂_t e_i + ∂_j(v_j e_i) - e_j ∂_j v_i for e(t) = S(t)e0,
    relative to max |e|; t must lie strictly inside a path segment.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    later = pushforward(FlowMap(field, t + dt, tol), e0)(points)
    earlier = pushforward(FlowMap(field, t - dt, tol), e0)(points)
    e_t = (later - earlier) / (2.0 * dt)

    current = FlowMap(field, t, tol)
    e = pushforward(current, e0)
    segment = field.path.segment(t)

    def flux(p):
        values = e(p)
        velocity = field.velocity(t, p, segment)
        return np.einsum('pi,pj->pij', values, velocity).reshape(len(p), 9)

    derivative = fd_jacobian(flux, points, step=step, order=4).reshape(len(points), 3, 3, 3)
    divergence = np.einsum('pijj->pi', derivative)
    stretching = np.einsum('pij,pj->pi', field.velocity_jacobian(t, points, segment), e(points))
    residual = e_t + divergence - stretching
    return float(np.abs(residual).max()) / float(np.abs(e(points)).max())


@dataclass(frozen=True)
class AleReport:
    t: float
    delta: float
    m0: float
    closed_form: float
    determinant: float
    piola: float
    normal_transport: float
    tangency: float
    divergence: float
    transport: float
    min_determinant: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def sample_fluid_points(field: AleField, t: float, count: int, seed: int = 0) -> np.ndarray:
    """Random points in the fluid at time t inside the radius m0 ball"""
    rng = np.random.default_rng(seed)
    centers, radii = field.path.state(t)
    points = []
    while len(points) < count:
        p = rng.uniform(-field.m0, field.m0, size=3)
        offsets = np.linalg.norm(centers - p, axis=1)
        if np.all(offsets > radii + 0.05 * field.delta) and np.linalg.norm(p) < field.m0:
            points.append(p)
    return np.array(points)


def solenoidal_field(center, moment=(0.4, -0.3, 0.5), omega=(0.0, 0.2, 1.0)) -> Callable:
    """
    Divergence-free test field ω×x + ∇(m·y/|y|³) with y = x - center.

    The dipole part is harmonic away from center, so the field is solenoidal
    on any domain excluding a ball around it.
    """
    center = np.asarray(center, dtype=float)
    moment = np.asarray(moment, dtype=float)
    omega = np.asarray(omega, dtype=float)

    def field(points):
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        y = points - center
        s = np.linalg.norm(y, axis=1)[:, None]
        dipole = moment / s ** 3 - 3.0 * (y @ moment)[:, None] * y / s ** 5
        return np.cross(omega, points) + dipole

    return field


def verify_ale(field: AleField, t: float, tol: float = None, samples: int = 8,
               seed: int = 0) -> AleReport:
    """All ALE identity residuals at time t (strictly inside a path segment)"""
    flow_map = FlowMap(field, t, tol)
    reference = sample_fluid_points(field, field.path.t_start, samples, seed)
    current = sample_fluid_points(field, t, samples, seed + 1)
    closed_map, closed_det = closed_form_residual(flow_map)
    centers0, _ = field.path.state(field.path.t_start)
    solenoidal = solenoidal_field(centers0[0])

    def rotation_about(i):
        axis = np.array([0.3, -0.4, 0.85])
        return lambda p: np.cross(axis, np.asarray(p) - centers0[i])

    tangency = max(tangency_residual(flow_map, rotation_about(i), i)
                   for i in range(field.n_bubbles))
    report = AleReport(
        t=flow_map.t,
        delta=field.delta,
        m0=field.m0,
        closed_form=closed_map,
        determinant=closed_det,
        piola=piola_residual(flow_map, reference),
        normal_transport=normal_transport_residual(flow_map),
        tangency=tangency,
        divergence=divergence_residual(flow_map, solenoidal, current),
        transport=transport_residual(field, solenoidal, t, current, tol=tol),
        min_determinant=float(flow_map.determinant(reference).min()),
    )
    logger.info("ALE check at t=%.4g: piola %.2e divergence %.2e transport %.2e",
                t, report.piola, report.divergence, report.transport)
    return report


def interpolating_diffeomorphism(config_a: BubbleConfig, config_b: BubbleConfig,
                                 delta: float = None, tol: float = None) -> FlowMap:
    """
    Flow over unit time of the straight-line homotopy from config_a to config_b.

    Raises:
        InvalidConfigError: an endpoint is not admissible or the homotopy
            violates the separation condition
    """
    for name, cfg in (('config_a', config_a), ('config_b', config_b)):
        if not validate_admissible(cfg).admissible:
            raise InvalidConfigError([(name, 'configuration is not admissible')])
    field = AleField(AffinePath.between(config_a, config_b), delta)
    return FlowMap(field, 1.0, tol)
