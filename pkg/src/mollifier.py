# relaxed-bubbles/src/mollifier.py
"""
Compactly supported bump, its cached antiderivative, and the mollified radial
cutoffs built from it.

The bump is ω(u) = exp(-1/(1-u²))/Z on (-1, 1). Its antiderivative W is
tabulated once on a uniform grid and interpolated by a piecewise quintic that
matches W, W' = ω and W'' = ω' at every node, so the interpolant is C² and its
derivative is available exactly (used for velocity Jacobians).
"""

import logging
from functools import lru_cache

import numpy as np
from scipy.interpolate import BPoly
from scipy.special import roots_legendre

try:
    from .config import config
except ImportError:
    from config import config

logger = logging.getLogger(__name__)

_PANEL_NODES = 8


def bump(u) -> np.ndarray:
    """Unnormalized bump exp(-1/(1-u²)), zero outside (-1, 1)"""
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) < 1.0
    safe = np.where(inside, u, 0.0)
    return np.where(inside, np.exp(-1.0 / (1.0 - safe * safe)), 0.0)


def bump_derivative(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) < 1.0
    safe = np.where(inside, u, 0.0)
    one_minus = 1.0 - safe * safe
    return np.where(inside, bump(safe) * (-2.0 * safe / one_minus ** 2), 0.0)


class Mollifier:
    """Normalized bump with support [-1, 1] and its tabulated antiderivative"""

    def __init__(self, table_size: int = None):
        table_size = table_size or config.MOLLIFIER_TABLE_SIZE
        knots = np.linspace(-1.0, 1.0, table_size)

        # Gauss-Legendre per table interval, cumulated left to right
        xi, wi = roots_legendre(_PANEL_NODES)
        half = 0.5 * np.diff(knots)
        mids = 0.5 * (knots[1:] + knots[:-1])
        samples = bump(mids[:, None] + half[:, None] * xi[None, :])
        pieces = half * (samples @ wi)
        cumulative = np.concatenate([[0.0], np.cumsum(pieces)])

        self.normalization = float(cumulative[-1])
        values = cumulative / self.normalization
        values[-1] = 1.0
        slopes = bump(knots) / self.normalization
        curvatures = bump_derivative(knots) / self.normalization

        data = np.stack([values, slopes, curvatures], axis=1)
        self._antiderivative = BPoly.from_derivatives(knots, data)
        self._density = self._antiderivative.derivative()
        logger.debug("mollifier table built: %d knots, Z=%.16f", table_size, self.normalization)

    def density(self, u) -> np.ndarray:
        """ω(u), consistent with the derivative of the tabulated antiderivative"""
        u = np.asarray(u, dtype=float)
        inside = np.abs(u) < 1.0
        return np.where(inside, self._density(np.clip(u, -1.0, 1.0)), 0.0)

    def antiderivative(self, u) -> np.ndarray:
        """W(u) = ∫_{-1}^{u} ω, exactly 0 below -1 and 1 above 1"""
        u = np.asarray(u, dtype=float)
        table = self._antiderivative(np.clip(u, -1.0, 1.0))
        return np.where(u <= -1.0, 0.0, np.where(u >= 1.0, 1.0, table))

    def cutoff(self, s, radius, delta):
        """
        Mollified indicator of [0, radius + delta/2] with mollification width delta/4.

        Equals 1 for s <= radius + delta/4 and 0 for s >= radius + 3 delta/4.

        Returns:
            (value, derivative with respect to s)
        """
        u = 4.0 * (radius + 0.5 * delta - np.asarray(s, dtype=float)) / delta
        return self.antiderivative(u), -4.0 / delta * self.density(u)


@lru_cache(maxsize=4)
def get_mollifier(table_size: int = None) -> Mollifier:
    return Mollifier(table_size)
