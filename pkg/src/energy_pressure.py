# relaxed-bubbles/src/energy_pressure.py
"""
Pressure law, bubble potential energy, fluid kinetic energy, the energy
ledger and a-priori velocity bounds.

Pressure constants use the relaxed convention p_i = c_i/(4π) r_i^{-3γ};
convert_full_model_constant maps a constant ĉ with p = ĉ|B_i|^{-γ} onto it.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd

try:
    from .config import config as default_config
    from .errors import CollapseError, DomainError
    from .geometry import BubbleConfig
except ImportError:
    from config import config as default_config
    from errors import CollapseError, DomainError
    from geometry import BubbleConfig

logger = logging.getLogger(__name__)

LEDGER_COLUMNS = ['time', 'kinetic', 'potential', 'dissipation', 'slack']


def convert_full_model_constant(c_hat, gamma: float):
    """c = ĉ (4π/3)^{-γ} 4π, so that ĉ|B|^{-γ} = c/(4π) r^{-3γ}"""
    return np.asarray(c_hat, dtype=float) * (4.0 * np.pi / 3.0) ** (-gamma) * 4.0 * np.pi


def bubble_pressure(r, c, gamma: float):
    """
    p = c/(4π) r^{-3γ}

    Raises:
        CollapseError: some radius is not positive
    """
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0.0):
        raise CollapseError(f"bubble radius must be positive, got {r.min() if r.ndim else r}")
    p = np.asarray(c, dtype=float) / (4.0 * np.pi) * r ** (-3.0 * gamma)
    return float(p) if p.ndim == 0 else p


def potential_energy(radii, constants, gamma: float) -> float:
    """E_p = Σ c_i/(3γ-3) r_i^{3-3γ}"""
    radii = np.asarray(radii, dtype=float)
    if np.any(radii <= 0.0):
        raise CollapseError("potential energy needs positive radii")
    exponent = 3.0 - 3.0 * gamma
    return float(np.sum(np.asarray(constants, dtype=float) / -exponent * radii ** exponent))


def pressure_work_factor(r_old, r_new, constants, gamma: float) -> np.ndarray:
    """
    Discrete gradient of -Φ(r) = -c/(3γ-3) r^{3-3γ}.

    Equals c r^{2-3γ} in the limit r_new → r_old; multiplying by (r_new - r_old)
    gives the exact drop of the potential energy.
    """
    r_old = np.asarray(r_old, dtype=float)
    r_new = np.asarray(r_new, dtype=float)
    c = np.asarray(constants, dtype=float)
    exponent = 3.0 - 3.0 * gamma
    phi_old = c / -exponent * r_old ** exponent
    phi_new = c / -exponent * r_new ** exponent
    step = r_new - r_old
    close = np.abs(step) <= 1e-10 * np.abs(r_old)
    safe = np.where(close, 1.0, step)
    mid = 0.5 * (r_old + r_new)
    return np.where(close, c * mid ** (2.0 - 3.0 * gamma), -(phi_new - phi_old) / safe)


def kinetic_energy(coefficients, gram) -> float:
    """
    ½ cᵀ G c

    Raises:
        DomainError: dimensions of coefficients and Gram matrix differ
    """
    g = gram.matrix if hasattr(gram, 'matrix') else np.asarray(gram, dtype=float)
    c = np.asarray(coefficients, dtype=float)
    if g.ndim != 2 or c.shape != (g.shape[0],):
        raise DomainError(f"coefficients of shape {c.shape} do not match Gram of shape {g.shape}")
    return float(0.5 * c @ g @ c)


def radius_lower_bound(E0: float, c, gamma: float):
    """Smallest radius compatible with E_p <= E0: (c/((3γ-3)E0))^{1/(3γ-3)}"""
    if not E0 > 0:
        raise DomainError(f"E0 must be positive, got {E0}")
    k = 3.0 * gamma - 3.0
    return (np.asarray(c, dtype=float) / (k * E0)) ** (1.0 / k)


@dataclass
class EnergyLedger:
    """Append-only per-sample energy bookkeeping against the initial energy E0"""

    E0: float
    times: List[float] = field(default_factory=list)
    kinetic: List[float] = field(default_factory=list)
    potential: List[float] = field(default_factory=list)
    dissipation: List[float] = field(default_factory=list)

    def append(self, time: float, kinetic: float, potential: float,
               dissipation: float = 0.0) -> float:
        """Record one sample; returns its slack"""
        if not np.isfinite(potential):
            raise CollapseError(f"non-finite potential energy at t={time}")
        if self.dissipation and dissipation < self.dissipation[-1]:
            raise DomainError("cumulative dissipation must be nondecreasing")
        self.times.append(float(time))
        self.kinetic.append(float(kinetic))
        self.potential.append(float(potential))
        self.dissipation.append(float(dissipation))
        return self.slack[-1]

    def __len__(self) -> int:
        return len(self.times)

    @property
    def slack(self) -> List[float]:
        return [self.E0 - (k + p + d) for k, p, d in
                zip(self.kinetic, self.potential, self.dissipation)]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'time': self.times,
            'kinetic': self.kinetic,
            'potential': self.potential,
            'dissipation': self.dissipation,
            'slack': self.slack,
        }, columns=LEDGER_COLUMNS)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, E0: float) -> 'EnergyLedger':
        ledger = cls(E0)
        for row in frame.itertuples(index=False):
            ledger.append(row.time, row.kinetic, row.potential, row.dissipation)
        return ledger


@dataclass(frozen=True)
class EnergyReport:
    ok: bool
    violations: List[int]
    max_violation: float


def check_energy_inequality(ledger: EnergyLedger, E0: Optional[float] = None,
                            tol: float = None) -> EnergyReport:
    """
    Flag samples where kinetic + potential + dissipation exceeds E0 + tol.

    Returns:
        EnergyReport with the flagged indices and the largest excess
        (negative when every sample satisfies the inequality)
    """
    if len(ledger) == 0:
        raise DomainError("energy check needs a nonempty ledger")
    E0 = ledger.E0 if E0 is None else E0
    tol = default_config.ENERGY_TOLERANCE * abs(E0) if tol is None else tol
    total = (np.array(ledger.kinetic) + np.array(ledger.potential)
             + np.array(ledger.dissipation))
    excess = total - E0
    violations = [int(k) for k in np.nonzero(excess > tol)[0]]
    if violations:
        logger.warning("energy inequality violated at %d samples (max excess %.3e)",
                       len(violations), excess.max())
    return EnergyReport(not violations, violations, float(excess.max()))


def phi_delta(i: int, config: BubbleConfig, delta: float, x) -> float:
    """
    Radial test function equal to 1 on ∂B_i and 0 at distance delta from it:
    ((delta + r_i) r_i/delta)/|x - x_i| - r_i/delta

    Raises:
        DomainError: x is outside the shell r_i <= |x - x_i| <= r_i + delta
    """
    if not delta > 0:
        raise DomainError(f"delta must be positive, got {delta}")
    r = float(config.radii[i])
    s = float(np.linalg.norm(np.asarray(x, dtype=float) - config.centers[i]))
    slack = 1e-12 * (r + delta)
    if s < r - slack or s > r + delta + slack:
        raise DomainError(f"point at distance {s} is outside the shell [{r}, {r + delta}]")
    return (delta + r) * r / delta / s - r / delta


def _shell_norms(r, delta):
    """‖∇φ‖² and ∫ φ²/s² over the shell r < s < r + delta (delta may be inf)"""
    r = np.asarray(r, dtype=float)
    delta = np.broadcast_to(np.asarray(delta, dtype=float), r.shape)
    finite = np.isfinite(delta)
    d = np.where(finite, delta, 1.0)
    grad2 = np.where(finite, 4.0 * np.pi * r * (r + d) / d, 4.0 * np.pi * r)
    a = (d + r) * r / d
    b = r / d
    weighted = a * a * (1.0 / r - 1.0 / (r + d)) - 2.0 * a * b * np.log((r + d) / r) + b * b * d
    weighted = np.where(finite, 4.0 * np.pi * weighted, 4.0 * np.pi * r)
    return grad2, weighted


@dataclass(frozen=True)
class AprioriBounds:
    """
    Per-bubble velocity bounds.

    rdot and xdot follow the distilled formula √(2E0)(1/δ + 1/r)/(4πr²), the
    translation bound scaled by the calibrated XDOT_BOUND_FACTOR. The *_trace
    fields come from Cauchy-Schwarz against the shell test functions and hold
    for any velocity with kinetic energy at most E0.
    """
    rdot: np.ndarray
    xdot: np.ndarray
    rdot_trace: np.ndarray
    xdot_trace: np.ndarray


def apriori_velocity_bounds(E0: float, delta: float, config: BubbleConfig) -> AprioriBounds:
    if not E0 > 0:
        raise DomainError(f"E0 must be positive, got {E0}")
    r = config.radii
    scale = np.sqrt(2.0 * E0) / (4.0 * np.pi * r * r)
    inverse_delta = 0.0 if np.isinf(delta) else 1.0 / delta
    rdot = scale * (inverse_delta + 1.0 / r)
    xdot = default_config.XDOT_BOUND_FACTOR * rdot

    grad2, weighted = _shell_norms(r, delta)
    rdot_trace = scale * np.sqrt(grad2)
    xdot_trace = 3.0 * scale * np.sqrt(grad2 + 2.0 * weighted)
    return AprioriBounds(rdot, xdot, rdot_trace, xdot_trace)


def separation_horizon(E0: float, delta0: float, config: BubbleConfig) -> float:
    """
    Time T0 up to which the trace bounds keep the configuration admissible.

    Velocity bounds are taken at half the smallest initial radius and half
    the initial margin; T0 is the earlier of the time the smallest radius could halve and
    the time 4(C_R + C_X)·t reaches delta0.
    """
    r_low = 0.5 * float(np.min(config.radii))
    shrunk = config.with_state(config.centers, np.full(config.n_bubbles, r_low))
    bounds = apriori_velocity_bounds(E0, 0.5 * delta0, shrunk)
    c_r = float(np.max(bounds.rdot_trace))
    c_x = float(np.max(bounds.xdot_trace))
    horizon = r_low / c_r
    if config.n_bubbles > 1:
        horizon = min(horizon, delta0 / (4.0 * (c_r + c_x)))
    return horizon
