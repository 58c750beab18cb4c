# relaxed-bubbles/src/harmonic_basis.py
"""
Gradients of exterior Neumann harmonics outside N spheres.

For every bubble i the basis holds the monopole field q_i (∂_n q_i = δ_ij on
sphere j) and the three dipole fields q_i^k (∂_n q_i^k = δ_ij n^k), with n the
unit normal pointing out of the bubble. Each field is a sum of exterior
multipoles of degree <= L centered at every bubble, found by Jacobi-style
reflections: each sphere in turn cancels the Neumann data the other spheres
induce on it.

Field index a < N is the monopole of bubble a; index N + 3i + k is the dipole
of bubble i along axis k.
"""

import json
import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, eigvalsh, solve_triangular

try:
    from .config import config as default_config
    from .errors import ConvergenceError, DegeneracyError, DomainError
    from .geometry import BubbleConfig, validate_admissible
    from .quadrature import SphereRule, make_sphere_rule
    from .solid_harmonics import get_solid_harmonics
except ImportError:
    from config import config as default_config
    from errors import ConvergenceError, DegeneracyError, DomainError
    from geometry import BubbleConfig, validate_admissible
    from quadrature import SphereRule, make_sphere_rule
    from solid_harmonics import get_solid_harmonics

logger = logging.getLogger(__name__)

DUMP_FORMAT = "relaxed-bubbles/harmonic-basis/1"


def field_labels(n_bubbles: int) -> List[str]:
    """q_1..q_N followed by q_i^k in (bubble, axis) order"""
    labels = [f"q_{i + 1}" for i in range(n_bubbles)]
    labels += [f"q_{i + 1}^{k + 1}" for i in range(n_bubbles) for k in range(3)]
    return labels


def neumann_targets(n_bubbles: int, normals: np.ndarray) -> np.ndarray:
    """Prescribed Neumann data, shape (N, M, 4N): sphere, node, field"""
    m = len(normals)
    targets = np.zeros((n_bubbles, m, 4 * n_bubbles))
    for i in range(n_bubbles):
        targets[i, :, i] = 1.0
        for k in range(3):
            targets[i, :, n_bubbles + 3 * i + k] = normals[:, k]
    return targets


@dataclass(frozen=True)
class HarmonicField:
    """
    Potential Σ_j Σ_lm α_{j,lm} P_lm(y_j)/|y_j|^{2l+1}, y_j = (x - x_j)/r_j.

    coefficients has shape (N, H) with H = (L+1)² harmonics per sphere.
    normal_convention records the orientation of the Neumann data.
    """
    centers: np.ndarray
    radii: np.ndarray
    coefficients: np.ndarray
    order: int
    normal_convention: str = 'bubble-outward'

    def _terms(self, points, derivatives):
        harmonics = get_solid_harmonics(self.order)
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        out = None
        for center, radius, alpha in zip(self.centers, self.radii, self.coefficients):
            parts = harmonics.irregular((points - center) / radius, derivatives)
            parts = parts if derivatives else (parts,)
            scaled = [part @ alpha if d == 0 else
                      np.einsum('ph...,h->p...', part, alpha) / radius ** d
                      for d, part in enumerate(parts)]
            out = scaled if out is None else [a + b for a, b in zip(out, scaled)]
        return out

    def potential(self, points) -> np.ndarray:
        return self._terms(points, 0)[0]

    def gradient(self, points) -> np.ndarray:
        return self._terms(points, 1)[1]

    def hessian(self, points) -> np.ndarray:
        return self._terms(points, 2)[2]


def _single_sphere(center, radius, data_fn, order=1) -> HarmonicField:
    if not radius > 0:
        raise DomainError(f"radius must be positive, got {radius}")
    harmonics = get_solid_harmonics(order)
    rule = make_sphere_rule(2 * order + 2)
    values = harmonics.regular(rule.nodes)
    lfactor = -1.0 / (harmonics.degrees + 1.0)
    alpha = radius * lfactor * (values.T @ (rule.weights * data_fn(rule.nodes)))
    return HarmonicField(np.asarray(center, dtype=float).reshape(1, 3),
                         np.array([float(radius)]), alpha[None, :], order)


def single_sphere_monopole(center, radius) -> HarmonicField:
    """q(x) = -r²/|x - center|, unit normal derivative on the sphere"""
    return _single_sphere(center, radius, lambda n: np.ones(len(n)))


def single_sphere_dipole(center, radius, axis: int) -> HarmonicField:
    """q(x) = -(r³/2)(x - center)_k/|x - center|³ for axis k in {1, 2, 3}"""
    if axis not in (1, 2, 3):
        raise DomainError(f"dipole axis must be 1, 2 or 3, got {axis}")
    return _single_sphere(center, radius, lambda n: n[:, axis - 1])


class HarmonicBasis:
    """
    The 4N reflected fields of a configuration, plus their traces on the
    sphere quadrature nodes.

    Attributes:
        coefficients: (N, H, 4N) multipole coefficients, sphere-major
        residuals: per-field projected Neumann mismatch (sup over nodes)
        truncation_residuals: per-field raw Neumann mismatch at the nodes
        history: projected residual after each sweep (index 0 = initial guess)
        node_points: (N, M, 3) quadrature nodes on each sphere
        potentials / gradients / normal_derivatives: traces at node_points
    """

    def __init__(self, config: BubbleConfig, order: int, rule: SphereRule,
                 coefficients: np.ndarray, residuals: np.ndarray,
                 truncation_residuals: np.ndarray, history: List[float], sweeps: int):
        self.config = config
        self.order = order
        self.rule = rule
        self.coefficients = coefficients
        self.residuals = residuals
        self.truncation_residuals = truncation_residuals
        self.history = history
        self.sweeps = sweeps
        self.harmonics = get_solid_harmonics(order)

        n = config.n_bubbles
        self.node_points = np.stack([rule.points(config.centers[i], config.radii[i])
                                     for i in range(n)])
        flat = self.node_points.reshape(-1, 3)
        values, grads = self._evaluate(flat, 1)
        m = len(rule)
        self.potentials = values.reshape(n, m, -1)
        self.gradients = grads.reshape(n, m, -1, 3)
        self.normal_derivatives = np.einsum('imak,mk->ima', self.gradients, rule.nodes)
        self.targets = neumann_targets(n, rule.nodes)

    @property
    def n_bubbles(self) -> int:
        return self.config.n_bubbles

    @property
    def n_fields(self) -> int:
        return 4 * self.config.n_bubbles

    @property
    def labels(self) -> List[str]:
        return field_labels(self.n_bubbles)

    def field(self, a: int) -> HarmonicField:
        return HarmonicField(self.config.centers, self.config.radii,
                             self.coefficients[:, :, a], self.order)

    def _evaluate(self, points, derivatives):
        """Values (P, F) and derivatives (P, F, 3[, 3]) of all fields"""
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        out = None
        for j in range(self.n_bubbles):
            center, radius = self.config.centers[j], self.config.radii[j]
            parts = self.harmonics.irregular((points - center) / radius, derivatives)
            parts = parts if derivatives else (parts,)
            alpha = self.coefficients[j]
            scaled = [np.einsum('ph...,ha->pa...', part, alpha) / radius ** d
                      for d, part in enumerate(parts)]
            out = scaled if out is None else [a + b for a, b in zip(out, scaled)]
        return out

    def potential(self, points) -> np.ndarray:
        """q_a(x) for every field, shape (P, 4N)"""
        return self._evaluate(points, 0)[0]

    def gradient(self, points) -> np.ndarray:
        """∇q_a(x), shape (P, 4N, 3)"""
        return self._evaluate(points, 1)[1]

    def hessian(self, points) -> np.ndarray:
        """∇∇q_a(x), shape (P, 4N, 3, 3)"""
        return self._evaluate(points, 2)[2]

    def inside_any(self, points, rtol: float = 1e-12) -> np.ndarray:
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        dist = np.linalg.norm(points[:, None, :] - self.config.centers[None], axis=2)
        return np.any(dist < self.config.radii[None, :] * (1.0 - rtol), axis=1)


def _influence(config, rule, harmonics, i, j) -> np.ndarray:
    """Normal derivative on sphere i of each unit multipole of sphere j, (M, H)"""
    points = rule.points(config.centers[i], config.radii[i])
    y = (points - config.centers[j]) / config.radii[j]
    _, grads = harmonics.irregular(y, 1)
    return np.einsum('mhk,mk->mh', grads, rule.nodes) / config.radii[j]


def solve_reflections(config: BubbleConfig, order: int = None, tolerance: float = None,
                      max_iters: int = None, degree: int = None,
                      initial: Optional[HarmonicBasis] = None) -> HarmonicBasis:
    """
    Method of reflections for the 4N Neumann problems.

    Args:
        config: admissible configuration
        order: multipole order L (>= 1)
        tolerance: stop once the projected residual of every field is below it
        max_iters: maximal number of Jacobi sweeps
        degree: sphere rule degree (2L + margin by default)
        initial: basis of a nearby configuration to warm-start from

    Returns:
        HarmonicBasis

    Raises:
        ConvergenceError: residual still above tolerance after max_iters sweeps
    """
    order = order if order is not None else default_config.REFLECTION_ORDER
    tolerance = tolerance if tolerance is not None else default_config.REFLECTION_TOLERANCE
    max_iters = max_iters if max_iters is not None else default_config.REFLECTION_MAX_SWEEPS
    if order < 1:
        raise DomainError(f"reflection order must be at least 1, got {order}")
    degree = degree if degree is not None else 2 * order + default_config.SPHERE_DEGREE_MARGIN

    report = validate_admissible(config)
    if not report.admissible:
        raise DomainError(f"configuration is not admissible: min gap {report.min_gap:.6g}")

    n = config.n_bubbles
    rule = make_sphere_rule(degree)
    harmonics = get_solid_harmonics(order)
    values = harmonics.regular(rule.nodes)
    weighted = values.T * rule.weights[None, :]
    lfactor = -1.0 / (harmonics.degrees + 1.0)
    targets = neumann_targets(n, rule.nodes)

    influence = [[None if i == j else _influence(config, rule, harmonics, i, j)
                  for j in range(n)] for i in range(n)]

    def fit(j, data):
        return config.radii[j] * lfactor[:, None] * (weighted @ data)

    def own(j, alpha):
        return values @ (alpha / (lfactor[:, None] * config.radii[j]))

    def induced(i, coeffs):
        out = np.zeros_like(targets[i])
        for j in range(n):
            if j != i:
                out += influence[i][j] @ coeffs[j]
        return out

    def residuals(coeffs):
        projected = np.zeros(4 * n)
        raw = np.zeros(4 * n)
        for i in range(n):
            mismatch = targets[i] - own(i, coeffs[i]) - induced(i, coeffs)
            raw = np.maximum(raw, np.max(np.abs(mismatch), axis=0))
            proj = values @ (weighted @ mismatch)
            projected = np.maximum(projected, np.max(np.abs(proj), axis=0))
        return projected, raw

    if initial is not None and initial.n_bubbles == n and initial.order == order:
        coeffs = initial.coefficients.copy()
    else:
        coeffs = np.stack([fit(i, targets[i]) for i in range(n)])

    projected, raw = residuals(coeffs)
    history = [float(projected.max())]
    sweeps = 0
    while projected.max() > tolerance:
        if sweeps >= max_iters:
            raise ConvergenceError(
                f"reflections did not converge in {max_iters} sweeps", residual=float(projected.max()))
        coeffs = np.stack([fit(i, targets[i] - induced(i, coeffs)) for i in range(n)])
        projected, raw = residuals(coeffs)
        sweeps += 1
        history.append(float(projected.max()))
        logger.debug("reflection sweep %d: residual %.3e", sweeps, history[-1])

    logger.debug("reflections done: N=%d L=%d sweeps=%d residual=%.3e truncation=%.3e",
                 n, order, sweeps, projected.max(), raw.max())
    return HarmonicBasis(config, order, rule, coeffs, projected, raw, history, sweeps)


@dataclass(frozen=True)
class GramMatrix:
    """Symmetrized L² Gram matrix of the basis gradients"""
    matrix: np.ndarray
    asymmetry: float
    min_eigenvalue: float

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)

    @property
    def shape(self):
        return self.matrix.shape


def gram(basis: HarmonicBasis, config: BubbleConfig = None) -> GramMatrix:
    """
    G_ab = -Σ_j ∮_{∂B_j} q_a g_b dS with g_b the prescribed Neumann data.

    Raises:
        DegeneracyError: the symmetrized matrix is not positive definite
    """
    config = config or basis.config
    r2 = config.radii ** 2
    raw = -np.einsum('j,m,jma,jmb->ab', r2, basis.rule.weights,
                     basis.potentials, basis.targets)
    asymmetry = float(np.max(np.abs(raw - raw.T)))
    scale = float(np.max(np.abs(np.diag(raw))))
    if asymmetry > 1e-10 * scale:
        logger.warning("Gram asymmetry %.3e before symmetrization (scale %.3e)", asymmetry, scale)
    matrix = 0.5 * (raw + raw.T)

    min_eig = float(eigvalsh(matrix)[0])
    if not min_eig > 0.0:
        raise DegeneracyError(
            f"Gram matrix is not positive definite (smallest eigenvalue {min_eig:.3e}); "
            "bubbles nearly touching or reflection order too small")
    return GramMatrix(matrix, asymmetry, min_eig)


def _matrix(g) -> np.ndarray:
    return g.matrix if isinstance(g, GramMatrix) else np.asarray(g, dtype=float)


def orthonormalize(basis: Optional[HarmonicBasis], gram_matrix) -> np.ndarray:
    """
    Gram-Schmidt in the G inner product, in the fixed field order.

    Returns:
        Lower-triangular Q with Q G Qᵀ = I; row a holds the coefficients of
        the a-th orthonormal field over the original fields
    """
    g = _matrix(gram_matrix)
    n = len(g)
    threshold = default_config.GRAM_PIVOT_THRESHOLD
    q = np.zeros((n, n))
    for a in range(n):
        v = np.zeros(n)
        v[a] = 1.0
        # two passes of modified Gram-Schmidt
        for _ in range(2):
            for b in range(a):
                v = v - (q[b] @ g @ v) * q[b]
        norm2 = float(v @ g @ v)
        if not norm2 > threshold * g[a, a]:
            raise DegeneracyError(f"Gram-Schmidt pivot {norm2:.3e} below threshold at field {a}")
        q[a] = v / np.sqrt(norm2)
    return q


def to_orthonormal_coefficients(coefficients, q) -> np.ndarray:
    """Coefficients over the orthonormal fields of the same velocity"""
    return solve_triangular(np.asarray(q).T, np.asarray(coefficients, dtype=float), lower=False)


def from_orthonormal_coefficients(coefficients, q) -> np.ndarray:
    return np.asarray(q).T @ np.asarray(coefficients, dtype=float)


def evaluate(basis: HarmonicBasis, coefficients, point) -> np.ndarray:
    """
    Velocity Σ c_a ∇q_a at one point (3,) or at many points (P, 3).

    Raises:
        DomainError: a point lies inside a bubble
    """
    coefficients = np.asarray(coefficients, dtype=float)
    if coefficients.shape != (basis.n_fields,):
        raise DomainError(f"expected {basis.n_fields} coefficients, got shape {coefficients.shape}")
    point = np.asarray(point, dtype=float)
    points = point.reshape(-1, 3)
    if np.any(basis.inside_any(points)):
        raise DomainError("evaluation point lies inside a bubble")
    velocity = np.einsum('pak,a->pk', basis.gradient(points), coefficients)
    return velocity[0] if point.ndim == 1 else velocity


def potential(basis: HarmonicBasis, coefficients, points) -> np.ndarray:
    """Σ c_a q_a at points (P, 3)"""
    return basis.potential(points) @ np.asarray(coefficients, dtype=float)


def velocity_gradient(basis: HarmonicBasis, coefficients, points) -> np.ndarray:
    """∇u = Σ c_a ∇∇q_a (symmetric, equal to D(u)), shape (P, 3, 3)"""
    return np.einsum('paij,a->pij', basis.hessian(points), np.asarray(coefficients, dtype=float))


def boundary_fluxes(basis: HarmonicBasis) -> np.ndarray:
    """
    ∮_{∂B_i} ∂_n q_a dS for every sphere i and field a, shape (N, 4N).

    Equals 4π r_i² for the monopole of bubble i and 0 otherwise, up to the
    truncation residual.
    """
    r2 = basis.config.radii ** 2
    return np.einsum('i,m,ima->ia', r2, basis.rule.weights, basis.normal_derivatives)


@dataclass(frozen=True)
class LiouvilleSplit:
    """Projection of a sampled field onto span{∇q_a}"""
    coefficients: np.ndarray
    remainder: np.ndarray

    @property
    def max_remainder(self) -> float:
        return float(np.max(self.remainder))


def liouville_split(samples: Union[Callable, np.ndarray], basis: HarmonicBasis,
                    gram_matrix) -> LiouvilleSplit:
    """
    Gradient part of a divergence-free field from its boundary traces.

    Args:
        samples: velocity callable (P, 3) -> (P, 3), or an (N, M, 3) array of
            velocities at basis.node_points
        basis: harmonic basis of the configuration
        gram_matrix: Gram matrix of the basis

    Returns:
        LiouvilleSplit with coefficients c solving G c = b,
        b_a = -Σ_j ∮ (u·n) q_a dS, and the per-sphere sup-norm of the normal
        trace mismatch u·n - Σ c_a ∂_n q_a
    """
    if callable(samples):
        flat = np.asarray(samples(basis.node_points.reshape(-1, 3)), dtype=float)
        samples = flat.reshape(basis.node_points.shape)
    samples = np.asarray(samples, dtype=float)
    if samples.shape != basis.node_points.shape:
        raise DomainError(f"samples must have shape {basis.node_points.shape}, got {samples.shape}")

    normal_trace = np.einsum('imk,mk->im', samples, basis.rule.nodes)
    r2 = basis.config.radii ** 2
    rhs = -np.einsum('i,m,im,ima->a', r2, basis.rule.weights, normal_trace, basis.potentials)
    g = _matrix(gram_matrix)
    try:
        coefficients = cho_solve(cho_factor(g), rhs)
    except LinAlgError as exc:
        raise DegeneracyError(f"Gram matrix is singular: {exc}") from exc

    mismatch = normal_trace - basis.normal_derivatives @ coefficients
    remainder = np.max(np.abs(mismatch), axis=1)
    return LiouvilleSplit(coefficients, remainder)


def dump_basis(basis: HarmonicBasis) -> str:
    """Structured JSON text; floats are written with round-trip precision"""
    harmonics = basis.harmonics
    fields = []
    for a, label in enumerate(basis.labels):
        terms = [[j, int(harmonics.degrees[h]), int(harmonics.orders[h]),
                  float(basis.coefficients[j, h, a])]
                 for j in range(basis.n_bubbles) for h in range(len(harmonics))]
        fields.append({'field': a, 'label': label, 'terms': terms})
    payload = {
        'format': DUMP_FORMAT,
        'order': basis.order,
        'degree': basis.rule.exactness_degree,
        'centers': basis.config.centers.tolist(),
        'radii': basis.config.radii.tolist(),
        'pressure_constants': basis.config.pressure_constants.tolist(),
        'gamma': basis.config.gamma,
        'sweeps': basis.sweeps,
        'history': basis.history,
        'fields': fields,
    }
    return json.dumps(payload, indent=1)


def load_basis(text: str) -> HarmonicBasis:
    """Rebuild a basis from dump_basis output; residuals are recomputed"""
    payload = json.loads(text)
    if payload.get('format') != DUMP_FORMAT:
        raise DomainError(f"unrecognized basis dump format {payload.get('format')!r}")
    config = BubbleConfig(payload['centers'], payload['radii'],
                          payload['pressure_constants'], payload['gamma'])
    order = int(payload['order'])
    harmonics = get_solid_harmonics(order)
    index = {(int(l), int(m)): h for h, (l, m) in
             enumerate(zip(harmonics.degrees, harmonics.orders))}

    n = config.n_bubbles
    coefficients = np.zeros((n, len(harmonics), 4 * n))
    for entry in payload['fields']:
        for j, l, m, value in entry['terms']:
            coefficients[int(j), index[(int(l), int(m))], int(entry['field'])] = value

    rule = make_sphere_rule(int(payload['degree']))
    basis = HarmonicBasis(config, order, rule, coefficients, np.zeros(4 * n), np.zeros(4 * n),
                          list(payload.get('history', [])), int(payload.get('sweeps', 0)))
    mismatch = basis.targets - basis.normal_derivatives
    basis.truncation_residuals = np.max(np.abs(mismatch), axis=(0, 1))
    values = basis.harmonics.regular(rule.nodes)
    moments = np.einsum('mh,m,ima->iha', values, rule.weights, mismatch)
    projected = np.einsum('mh,iha->ima', values, moments)
    basis.residuals = np.max(np.abs(projected), axis=(0, 1))
    return basis
