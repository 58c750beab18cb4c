# relaxed-bubbles/src/solid_harmonics.py
"""
Real solid harmonics in Cartesian monomial form.

P_lm(y) = |y|^l Y_lm(y/|y|) is a homogeneous harmonic polynomial, so values,
gradients and Hessians follow from monomial power tables with no angular
coordinates (and no pole singularities). Coefficients are generated exactly
with rational arithmetic and normalized numerically on the unit sphere:

    P_l^m(z, ρ²) = Σ_k (-1)^k 2^{-l} C(l,k) C(2l-2k,l) (l-2k)!/(l-2k-m)! ρ^{2k} z^{l-2k-m}
    P_lm = P_l^|m| · Re (x+iy)^m      for m >= 0
    P_lm = P_l^|m| · Im (x+iy)^|m|    for m < 0

The exterior (Kelvin) partner of degree l is P_lm(y)/|y|^{2l+1}.
"""

import logging
from fractions import Fraction
from functools import lru_cache
from math import comb, factorial
from typing import Dict, Tuple

import numpy as np

try:
    from .errors import DomainError
    from .quadrature import make_sphere_rule
except ImportError:
    from errors import DomainError
    from quadrature import make_sphere_rule

logger = logging.getLogger(__name__)

Polynomial = Dict[Tuple[int, int, int], Fraction]


def _multiply(a: Polynomial, b: Polynomial) -> Polynomial:
    out: Polynomial = {}
    for (ea, ca) in a.items():
        for (eb, cb) in b.items():
            key = (ea[0] + eb[0], ea[1] + eb[1], ea[2] + eb[2])
            out[key] = out.get(key, Fraction(0)) + ca * cb
    return {k: v for k, v in out.items() if v != 0}


def _radius_power(k: int) -> Polynomial:
    """(x² + y² + z²)^k expanded by the multinomial theorem"""
    out: Polynomial = {}
    for i in range(k + 1):
        for j in range(k + 1 - i):
            h = k - i - j
            out[(2 * i, 2 * j, 2 * h)] = Fraction(
                factorial(k), factorial(i) * factorial(j) * factorial(h))
    return out


def _associated(l: int, m: int) -> Polynomial:
    out: Polynomial = {}
    for k in range(0, (l - m) // 2 + 1):
        coeff = Fraction((-1) ** k * comb(l, k) * comb(2 * l - 2 * k, l)
                         * factorial(l - 2 * k), 2 ** l * factorial(l - 2 * k - m))
        for exps, c in _radius_power(k).items():
            key = (exps[0], exps[1], exps[2] + l - 2 * k - m)
            out[key] = out.get(key, Fraction(0)) + coeff * c
    return out


def _azimuthal(m: int, imaginary: bool) -> Polynomial:
    """Re or Im of (x + iy)^m"""
    out: Polynomial = {}
    for p in range(m + 1):
        q = (m - p) % 4
        if imaginary:
            sign = {0: 0, 1: 1, 2: 0, 3: -1}[q]
        else:
            sign = {0: 1, 1: 0, 2: -1, 3: 0}[q]
        if sign:
            out[(p, m - p, 0)] = Fraction(sign * comb(m, p))
    return out


def harmonic_polynomial(l: int, m: int) -> Polynomial:
    """Unnormalized real solid harmonic of degree l and order m"""
    if abs(m) > l:
        raise DomainError(f"order {m} exceeds degree {l}")
    return _multiply(_associated(l, abs(m)), _azimuthal(abs(m), imaginary=m < 0))


class SolidHarmonics:
    """
    All real solid harmonics of degree <= order, indexed l-major with
    m = -l..l, orthonormal on the unit sphere.
    """

    def __init__(self, order: int):
        if order < 0:
            raise DomainError(f"harmonic order must be nonnegative, got {order}")
        self.order = order
        self.degrees = np.array([l for l in range(order + 1) for _ in range(2 * l + 1)])
        self.orders = np.array([m for l in range(order + 1) for m in range(-l, l + 1)])

        polys = [harmonic_polynomial(l, m) for l, m in zip(self.degrees, self.orders)]
        exponents = sorted({e for p in polys for e in p})
        index = {e: j for j, e in enumerate(exponents)}
        coefficients = np.zeros((len(polys), len(exponents)))
        for a, poly in enumerate(polys):
            for e, c in poly.items():
                coefficients[a, index[e]] = float(c)

        self.exponents = np.array(exponents, dtype=int)
        self.coefficients = coefficients

        rule = make_sphere_rule(2 * order)
        values = self._monomials(rule.nodes) @ self.coefficients.T
        norms = np.sqrt(np.einsum('k,ka->a', rule.weights, values * values))
        self.coefficients = self.coefficients / norms[:, None]
        logger.debug("solid harmonics up to degree %d: %d functions, %d monomials",
                     order, len(self.degrees), len(exponents))

    def __len__(self) -> int:
        return len(self.degrees)

    def _powers(self, y):
        top = self.order + 1
        return np.stack([y[:, None, c] ** np.arange(top)[None, :] for c in range(3)])

    def _monomials(self, y) -> np.ndarray:
        pw = self._powers(np.asarray(y, dtype=float))
        a, b, c = self.exponents.T
        return pw[0][:, a] * pw[1][:, b] * pw[2][:, c]

    def regular(self, y, derivatives: int = 0):
        """
        Solid harmonics P(y) and optionally their Cartesian derivatives.

        Args:
            y: (P, 3) points
            derivatives: 0, 1 or 2

        Returns:
            values (P, H)[, gradients (P, H, 3)[, Hessians (P, H, 3, 3)]]
        """
        y = np.asarray(y, dtype=float).reshape(-1, 3)
        pw = self._powers(y)
        exps = self.exponents.T

        def table(shift):
            # derivative factor e(e-1)..(e-d+1) times y^(e-d), per axis
            cols = []
            for axis in range(3):
                e = exps[axis]
                d = shift[axis]
                factor = np.ones_like(e, dtype=float)
                for k in range(d):
                    factor = factor * (e - k)
                cols.append(pw[axis][:, np.maximum(e - d, 0)] * factor[None, :])
            return cols[0] * cols[1] * cols[2]

        values = table((0, 0, 0)) @ self.coefficients.T
        if derivatives == 0:
            return values

        unit = np.eye(3, dtype=int)
        grads = np.stack([table(unit[k]) @ self.coefficients.T for k in range(3)], axis=-1)
        if derivatives == 1:
            return values, grads

        hess = np.empty(grads.shape + (3,))
        for i in range(3):
            for j in range(i, 3):
                hess[..., i, j] = table(unit[i] + unit[j]) @ self.coefficients.T
                hess[..., j, i] = hess[..., i, j]
        return values, grads, hess

    def irregular(self, y, derivatives: int = 0):
        """
        Exterior harmonics I(y) = P(y)/|y|^{2l+1} and their derivatives.

        Raises:
            DomainError: a point coincides with the expansion center
        """
        y = np.asarray(y, dtype=float).reshape(-1, 3)
        rho2 = np.einsum('pi,pi->p', y, y)
        if np.any(rho2 == 0.0):
            raise DomainError("exterior harmonics are singular at the expansion center")
        rho = np.sqrt(rho2)
        k = (2 * self.degrees + 1)[None, :]
        inv = rho[:, None] ** -k

        regular = self.regular(y, derivatives)
        if derivatives == 0:
            return regular * inv

        values, grads = regular[0], regular[1]
        inv2 = inv / rho2[:, None]
        out_values = values * inv
        out_grads = grads * inv[..., None] - (k * values * inv2)[..., None] * y[:, None, :]
        if derivatives == 1:
            return out_values, out_grads

        hess = regular[2]
        inv4 = inv2 / rho2[:, None]
        gy = np.einsum('pai,pj->paij', grads, y)
        yy = np.einsum('pi,pj->pij', y, y)[:, None, :, :]
        eye = np.eye(3)[None, None, :, :]
        out_hess = (hess * inv[..., None, None]
                    - (k * inv2)[..., None, None] * (gy + np.swapaxes(gy, -1, -2))
                    - (k * values * inv2)[..., None, None] * eye
                    + (k * (k + 2) * values * inv4)[..., None, None] * yy)
        return out_values, out_grads, out_hess


@lru_cache(maxsize=16)
def get_solid_harmonics(order: int) -> SolidHarmonics:
    return SolidHarmonics(order)
