# relaxed-bubbles/src/cli_io.py
"""
Run-file ingestion and result emission.

Run files are JSON objects:

    {
      "scenario": "viscous",
      "gamma": 1.6666666666666667,
      "bubbles": [{"center": [0, 0, 0], "radius": 1.0, "pressure_constant": 12.566,
                   "rdot": 0.0, "xdot": [0, 0, 0]}],
      "coefficients": [...],                      (optional, overrides rdot/xdot)
      "params": {"T": 0.5, "h": 0.001, "nu": 0.1},
      "outputs": {"trajectory": "trajectory.jsonl"}
    }

Units are nondimensional: fluid density 1, lengths in units of a reference
radius. Trajectories are written as JSON lines, ledgers as CSV, reports as
JSON; every float is written with 17 significant digits so reading a file
back reproduces the values bit for bit. Each output file gets a
`<file>.header.json` provenance sidecar.
"""

import hashlib
import json
import logging
import math
import os
import platform
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import scipy

try:
    from . import __version__
    from .config import config as default_config
    from .energy_pressure import EnergyLedger
    from .errors import InvalidConfigError
    from .geometry import BubbleConfig, Trajectory, min_gap
    from .viscous_stepper import SchemeParams
except ImportError:
    from __init__ import __version__
    from config import config as default_config
    from energy_pressure import EnergyLedger
    from errors import InvalidConfigError
    from geometry import BubbleConfig, Trajectory, min_gap
    from viscous_stepper import SchemeParams

logger = logging.getLogger(__name__)

SCENARIOS = ('rp', 'inviscid', 'viscous', 'basis', 'ale-verify')
HEADER_SUFFIX = '.header.json'
FILE_FORMAT = 'relaxed-bubbles/1'

DEFAULT_OUTPUTS = {
    'trajectory': 'trajectory.jsonl',
    'ledger': 'ledger.csv',
    'report': 'report.json',
    'basis': 'basis.json',
}

_TOP_LEVEL_KEYS = {'scenario', 'gamma', 'bubbles', 'coefficients', 'params', 'outputs'}
_BUBBLE_KEYS = {'center', 'radius', 'pressure_constant', 'rdot', 'xdot'}

# parameter name -> expected type, per scenario
PARAM_TYPES = {
    'rp': {'T': float, 'nu': float, 'p_inf': float, 'tol': float, 'r_floor': float},
    'inviscid': {'T': float, 'tol': float, 'L': int, 'collision_threshold': float,
                 'fd_step': float, 'r_floor': float},
    'viscous': {
        'h': float, 'T': float, 'nu': float, 'L': int, 'convection': str, 'fields': str,
        'swirl': bool, 'substeps': int, 'radial_nodes': int, 'angular_degree': int,
        'reflection_tolerance': float, 'galerkin_tolerance': float,
        'galerkin_max_iters': int, 'energy_tolerance': float, 'max_halvings': int,
        'collision_threshold': float, 'r_floor': float, 'override_horizon': bool,
    },
    'basis': {'L': int, 'tol': float, 'degree': int},
    'ale-verify': {'T': float, 't': float, 'delta': float, 'samples': int, 'seed': int,
                   'tol': float},
}
REQUIRED_PARAMS = {'rp': ('T',), 'inviscid': ('T',), 'viscous': ('T',), 'basis': (),
                   'ale-verify': ('T',)}


@dataclass(frozen=True)
class RunConfig:
    """A validated run file"""
    scenario: str
    bubbles: BubbleConfig
    rdot: np.ndarray
    xdot: np.ndarray
    params: Dict[str, Any]
    outputs: Dict[str, str]
    source: Dict[str, Any] = field(repr=False)
    coefficients: Optional[np.ndarray] = None

    @property
    def n_bubbles(self) -> int:
        return self.bubbles.n_bubbles

    @property
    def qdot(self) -> np.ndarray:
        """Generalized velocities (ṙ_1..ṙ_N, ẋ_1..ẋ_N)"""
        return np.concatenate([self.rdot, self.xdot.reshape(-1)])

    def initial_coefficients(self) -> np.ndarray:
        return self.qdot if self.coefficients is None else self.coefficients

    def param(self, name: str, default=None):
        return self.params.get(name, default)

    def scheme_params(self) -> SchemeParams:
        return SchemeParams(**self.params)

    def output_path(self, out_dir: str, kind: str) -> str:
        return os.path.join(out_dir, self.outputs.get(kind, DEFAULT_OUTPUTS[kind]))

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form of the run file"""
        return hashlib.sha256(canonical_json(self.source).encode('utf-8')).hexdigest()


@dataclass
class TrajectoryRecord:
    """One trajectory sample with its ledger entry and optional event tag"""
    time: float
    centers: np.ndarray
    radii: np.ndarray
    coefficients: np.ndarray
    kinetic: Optional[float] = None
    potential: Optional[float] = None
    dissipation: Optional[float] = None
    slack: Optional[float] = None
    event: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'time': self.time,
            'centers': np.asarray(self.centers),
            'radii': np.asarray(self.radii),
            'coefficients': np.asarray(self.coefficients),
            'kinetic': self.kinetic,
            'potential': self.potential,
            'dissipation': self.dissipation,
            'slack': self.slack,
            'event': self.event,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'TrajectoryRecord':
        return cls(
            time=float(data['time']),
            centers=np.array(data['centers'], dtype=float).reshape(-1, 3),
            radii=np.array(data['radii'], dtype=float),
            coefficients=np.array(data['coefficients'], dtype=float),
            kinetic=_optional_float(data.get('kinetic')),
            potential=_optional_float(data.get('potential')),
            dissipation=_optional_float(data.get('dissipation')),
            slack=_optional_float(data.get('slack')),
            event=data.get('event'),
        )


def _optional_float(value) -> Optional[float]:
    return None if value is None else float(value)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


def _check_type(value, expected) -> bool:
    if expected is bool:
        return isinstance(value, bool)
    if expected is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if expected is float:
        return _is_number(value)
    if expected is str:
        return isinstance(value, str)
    return True


def _vector(value, path: str, violations: list, default=None) -> Optional[List[float]]:
    if value is None:
        return default
    if not (isinstance(value, list) and len(value) == 3 and all(_is_number(v) for v in value)):
        violations.append((path, 'must be a list of three finite numbers'))
        return default
    return [float(v) for v in value]


def _parse_bubbles(raw, violations: list):
    if not isinstance(raw, list) or not raw:
        violations.append(('bubbles', 'at least one bubble is required'))
        return None
    centers, radii, constants, rdot, xdot = [], [], [], [], []
    for i, bubble in enumerate(raw):
        path = f'bubbles[{i}]'
        if not isinstance(bubble, dict):
            violations.append((path, 'must be an object'))
            continue
        for key in sorted(set(bubble) - _BUBBLE_KEYS):
            violations.append((f'{path}.{key}', 'unknown field'))
        centers.append(_vector(bubble.get('center'), f'{path}.center', violations))
        if bubble.get('center') is None:
            violations.append((f'{path}.center', 'is required'))
        radius = bubble.get('radius')
        if not (_is_number(radius) and radius > 0):
            violations.append((f'{path}.radius', f'radius must be positive, got {radius}'))
        radii.append(radius)
        constant = bubble.get('pressure_constant')
        if not (_is_number(constant) and constant > 0):
            violations.append((f'{path}.pressure_constant',
                               f'must be a positive number, got {constant}'))
        constants.append(constant)
        speed = bubble.get('rdot', 0.0)
        if not _is_number(speed):
            violations.append((f'{path}.rdot', 'must be a finite number'))
        rdot.append(speed)
        xdot.append(_vector(bubble.get('xdot'), f'{path}.xdot', violations, [0.0, 0.0, 0.0]))
    return centers, radii, constants, rdot, xdot


def _parse_params(scenario: str, raw, violations: list) -> Dict[str, Any]:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        violations.append(('params', 'must be an object'))
        return {}
    types = PARAM_TYPES[scenario]
    params = {}
    for key, value in raw.items():
        if key not in types:
            violations.append((f'params.{key}', f'unknown parameter for scenario {scenario!r}'))
        elif not _check_type(value, types[key]):
            violations.append((f'params.{key}', f'must be of type {types[key].__name__}'))
        else:
            params[key] = float(value) if types[key] is float else value
    for key in REQUIRED_PARAMS[scenario]:
        if key not in raw:
            violations.append((f'params.{key}', 'is required'))
    return params


def parse_config(text: str, scenario: Optional[str] = None,
                 overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Parse and validate a run file.

    Args:
        text: JSON text
        scenario: scenario named on the command line; must agree with the file
        overrides: parameters merged over the file's params block

    Returns:
        RunConfig with defaults filled

    Raises:
        InvalidConfigError: listing every violation with its field path
    """
    try:
        source = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidConfigError([('$', f'malformed JSON: {exc}')]) from exc
    if not isinstance(source, dict):
        raise InvalidConfigError([('$', 'run file must be a JSON object')])

    violations = []
    for key in sorted(set(source) - _TOP_LEVEL_KEYS):
        violations.append((key, 'unknown field'))

    declared = source.get('scenario')
    if declared is None:
        declared = scenario
    elif scenario is not None and declared != scenario:
        violations.append(('scenario', f'file declares {declared!r} but {scenario!r} was requested'))
    if declared not in SCENARIOS:
        violations.append(('scenario', f'must be one of {SCENARIOS}, got {declared!r}'))
        raise InvalidConfigError(violations)

    source = dict(source, scenario=declared)
    if overrides:
        merged = dict(source.get('params') or {})
        merged.update(overrides)
        source['params'] = merged

    gamma = source.get('gamma', 5.0 / 3.0)
    if not (_is_number(gamma) and gamma > 1.0):
        violations.append(('gamma', f'gamma must exceed 1, got {gamma}'))
    parsed = _parse_bubbles(source.get('bubbles'), violations)
    params = _parse_params(declared, source.get('params'), violations)

    coefficients = source.get('coefficients')
    if coefficients is not None and not (isinstance(coefficients, list)
                                         and all(_is_number(c) for c in coefficients)):
        violations.append(('coefficients', 'must be a list of finite numbers'))
        coefficients = None

    outputs = source.get('outputs') or {}
    if not isinstance(outputs, dict):
        violations.append(('outputs', 'must be an object'))
        outputs = {}
    for key, value in outputs.items():
        if key not in DEFAULT_OUTPUTS:
            violations.append((f'outputs.{key}', 'unknown output kind'))
        elif not (isinstance(value, str) and value and os.path.basename(value) == value):
            violations.append((f'outputs.{key}', 'must be a plain file name'))

    if violations:
        raise InvalidConfigError(violations)

    centers, radii, constants, rdot, xdot = parsed
    bubbles = BubbleConfig(centers, radii, constants, gamma)
    n = bubbles.n_bubbles
    if n > 1 and not min_gap(bubbles.centers, bubbles.radii) > 0:
        violations.append(('bubbles', 'bubbles overlap or touch'))
    if declared == 'rp' and n != 1:
        violations.append(('bubbles', 'the rp scenario takes exactly one bubble'))
    if coefficients is not None and declared in ('rp', 'inviscid', 'ale-verify'):
        if len(coefficients) != 4 * n:
            violations.append(('coefficients', f'expected {4 * n} values, got {len(coefficients)}'))
    if declared == 'viscous':
        try:
            SchemeParams(**params)
        except InvalidConfigError as exc:
            violations.extend((f'params.{path}', message) for path, message in exc.violations)
    if violations:
        raise InvalidConfigError(violations)

    rdot = np.array(rdot, dtype=float)
    xdot = np.array(xdot, dtype=float).reshape(n, 3)
    if coefficients is not None and declared != 'viscous':
        rdot = np.array(coefficients[:n], dtype=float)
        xdot = np.array(coefficients[n:], dtype=float).reshape(n, 3)
    run = RunConfig(
        scenario=declared,
        bubbles=bubbles,
        rdot=rdot,
        xdot=xdot,
        params=params,
        outputs={k: v for k, v in outputs.items()},
        source=source,
        coefficients=None if coefficients is None else np.array(coefficients, dtype=float),
    )
    logger.debug("parsed %s run file: %d bubbles, params %s", declared, n, sorted(params))
    return run


def load_config(path: str, scenario: Optional[str] = None,
                overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    with open(path, 'r', encoding='utf-8') as f:
        return parse_config(f.read(), scenario, overrides)


# ---------------------------------------------------------------------------
# encoding
# ---------------------------------------------------------------------------

def _float_text(value: float) -> str:
    if math.isnan(value):
        return 'NaN'
    if math.isinf(value):
        return 'Infinity' if value > 0 else '-Infinity'
    return format(value, '.17g')


def encode(value, indent: Optional[int] = None, level: int = 0) -> str:
    """
    JSON text with every float written to 17 significant digits and keys in
    sorted order; numpy scalars and arrays are accepted.
    """
    if isinstance(value, np.ndarray):
        value = value.tolist()
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if value is None:
        return 'null'
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return _float_text(float(value))
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, dict):
        items = [(json.dumps(str(k)), v) for k, v in sorted(value.items(), key=lambda kv: str(kv[0]))]
        if not items:
            return '{}'
        if indent is None:
            return '{' + ','.join(f'{k}:{encode(v)}' for k, v in items) + '}'
        pad = ' ' * (indent * (level + 1))
        body = (',\n').join(f'{pad}{k}: {encode(v, indent, level + 1)}' for k, v in items)
        return '{\n' + body + '\n' + ' ' * (indent * level) + '}'
    if isinstance(value, (list, tuple)):
        return '[' + ','.join(encode(v) for v in value) + ']'
    raise TypeError(f"cannot encode {type(value).__name__}")


def canonical_json(value) -> str:
    return encode(value)


# ---------------------------------------------------------------------------
# provenance
# ---------------------------------------------------------------------------

def provenance_header(run_config: Optional[RunConfig] = None, **extra) -> Dict[str, Any]:
    """Config hash, package versions and the frozen calibration constants"""
    header = {
        'format': FILE_FORMAT,
        'versions': {
            'relaxed-bubbles': __version__,
            'numpy': np.__version__,
            'scipy': scipy.__version__,
            'pandas': pd.__version__,
            'python': platform.python_version(),
        },
        'calibration': default_config.calibration_constants(),
        'float_format': default_config.FLOAT_FORMAT,
    }
    if run_config is not None:
        header['scenario'] = run_config.scenario
        header['config_sha256'] = run_config.config_hash()
    header.update(extra)
    return header


def header_path(path: str) -> str:
    return path + HEADER_SUFFIX


def write_header(path: str, header: Dict[str, Any]) -> str:
    target = header_path(path)
    _write_text(target, encode(dict(header, file=os.path.basename(path)), indent=2) + '\n')
    return target


def read_header(path: str) -> Dict[str, Any]:
    with open(header_path(path), 'r', encoding='utf-8') as f:
        return json.load(f)


def _write_text(path: str, text: str) -> None:
    directory = os.path.dirname(path)
    try:
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

def trajectory_records(trajectory: Trajectory,
                       ledger: Optional[EnergyLedger] = None) -> List[TrajectoryRecord]:
    """
    One record per sample. An event is attached to the first sample at or
    after its time.
    """
    records = []
    slack = ledger.slack if ledger is not None else None
    for k, t in enumerate(trajectory.times):
        record = TrajectoryRecord(t, trajectory.centers[k], trajectory.radii[k],
                                  trajectory.coefficients[k])
        if ledger is not None:
            record.kinetic = ledger.kinetic[k]
            record.potential = ledger.potential[k]
            record.dissipation = ledger.dissipation[k]
            record.slack = slack[k]
        records.append(record)

    times = np.array(trajectory.times)
    for time, tag in trajectory.events:
        if not len(records):
            break
        k = int(np.searchsorted(times, time - 1e-12 * max(1.0, abs(time))))
        k = min(k, len(records) - 1)
        records[k].event = tag if records[k].event is None else f'{records[k].event},{tag}'
    return records


def emit_trajectory(records: Sequence[TrajectoryRecord], path: str,
                    header: Optional[Dict[str, Any]] = None) -> str:
    """
    Write records as JSON lines.

    Raises:
        InvalidConfigError: times do not increase strictly
        OSError: the file cannot be written
    """
    times = [r.time for r in records]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise InvalidConfigError([('records', 'trajectory times must increase strictly')])
    _write_text(path, ''.join(encode(r.to_dict()) + '\n' for r in records))
    if header is not None:
        write_header(path, dict(header, records=len(records)))
    logger.info("wrote %d trajectory records to %s", len(records), path)
    return path


def read_trajectory(path: str) -> List[TrajectoryRecord]:
    with open(path, 'r', encoding='utf-8') as f:
        return [TrajectoryRecord.from_dict(json.loads(line)) for line in f if line.strip()]


# ---------------------------------------------------------------------------
# ledgers and reports
# ---------------------------------------------------------------------------

def emit_ledger(ledger: EnergyLedger, path: str,
                header: Optional[Dict[str, Any]] = None) -> str:
    text = ledger.to_frame().to_csv(index=False, float_format=default_config.FLOAT_FORMAT,
                                    lineterminator='\n')
    _write_text(path, text)
    if header is not None:
        write_header(path, dict(header, E0=ledger.E0, rows=len(ledger)))
    logger.info("wrote %d ledger rows to %s", len(ledger), path)
    return path


def read_ledger(path: str, E0: Optional[float] = None) -> EnergyLedger:
    """
    Read a ledger CSV. E0 comes from the header sidecar when not given, or
    from the first row when there is no sidecar.
    """
    frame = pd.read_csv(path, float_precision='round_trip')
    if E0 is None and os.path.exists(header_path(path)):
        E0 = read_header(path).get('E0')
    if E0 is None:
        if frame.empty:
            raise InvalidConfigError([('E0', f'{path} is empty and has no header')])
        first = frame.iloc[0]
        E0 = float(first.kinetic + first.potential + first.dissipation + first.slack)
    return EnergyLedger.from_frame(frame, float(E0))


def emit_report(diagnostics: Dict[str, Any], path: str,
                header: Optional[Dict[str, Any]] = None) -> str:
    _write_text(path, encode(diagnostics, indent=2) + '\n')
    if header is not None:
        write_header(path, header)
    logger.info("wrote report to %s", path)
    return path


def read_report(path: str) -> Dict[str, Any]:
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)

