# relaxed-bubbles/src/config.py
"""
Configuration settings for the bubble solver

Defaults live on the Config dataclass; any field can be overridden from the
environment (or a .env file) with the BUBBLES_ prefix, e.g.
BUBBLES_REFLECTION_ORDER=6.
"""

import os
from dataclasses import dataclass, fields

from dotenv import load_dotenv

load_dotenv()

ENV_PREFIX = "BUBBLES_"


def _cast(raw: str, default):
    if isinstance(default, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


@dataclass
class Config:
    """Configuration parameters"""

    # Harmonic basis / method of reflections
    REFLECTION_ORDER: int = 4
    REFLECTION_TOLERANCE: float = 1e-12
    REFLECTION_MAX_SWEEPS: int = 200
    SPHERE_DEGREE_MARGIN: int = 12
    GRAM_PIVOT_THRESHOLD: float = 1e-12

    # Exterior quadrature
    EXTERIOR_RADIAL_NODES: int = 16
    TRUNCATION_FACTOR: float = 4.0

    # ODE integration
    ODE_TOLERANCE: float = 1e-10
    R_FLOOR: float = 1e-9
    FD_STEP: float = 1e-5
    COLLISION_THRESHOLD: float = 1e-3

    # Viscous time stepping
    VISCOUS_STEP: float = 1e-3
    MAX_STEP_HALVINGS: int = 8
    ENERGY_TOLERANCE: float = 1e-7
    GALERKIN_TOLERANCE: float = 1e-13
    GALERKIN_MAX_ITERS: int = 100
    CONVECTION: str = "quadrature"

    # ALE flow
    FLOW_STEPS_PER_UNIT_TIME: int = 400
    FLOW_TOLERANCE: float = 1e-10
    NEWTON_TOLERANCE: float = 1e-13
    NEWTON_MAX_ITERS: int = 30
    MOLLIFIER_TABLE_SIZE: int = 4001

    # Calibrated constants (frozen regression values, not analytic results)
    XDOT_BOUND_FACTOR: float = 3.0
    FAR_FIELD_DECAY_BOUND: float = 5.0

    # Output and logging
    FLOAT_FORMAT: str = "%.17g"
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "%(asctime)s %(levelname)s %(name)s: %(message)s"

    def __post_init__(self):
        for f in fields(self):
            raw = os.getenv(ENV_PREFIX + f.name)
            if raw is not None:
                setattr(self, f.name, _cast(raw, getattr(self, f.name)))

    def calibration_constants(self) -> dict:
        """Frozen constants recorded in every provenance header"""
        return {
            'XDOT_BOUND_FACTOR': self.XDOT_BOUND_FACTOR,
            'FAR_FIELD_DECAY_BOUND': self.FAR_FIELD_DECAY_BOUND,
        }


config = Config()
