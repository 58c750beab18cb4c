# relaxed-bubbles/src/main.py
"""
Main orchestrator for bubble simulation runs
"""

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

try:
    # package mode
    from .ale_map import AffinePath, AleField, verify_ale
    from .cli_io import (SCENARIOS, RunConfig, emit_ledger, emit_report, emit_trajectory,
                         load_config, provenance_header, trajectory_records)
    from .config import config
    from .energy_pressure import (EnergyLedger, apriori_velocity_bounds,
                                  check_energy_inequality)
    from .errors import BubbleSolverError, InvalidConfigError
    from .geometry import Trajectory, validate_admissible
    from .harmonic_basis import dump_basis, gram, solve_reflections
    from .inviscid_dynamics import (EVENT_COLLISION, EVENT_NEAR_CONTACT, PhaseState,
                                    integrate_inviscid)
    from .rayleigh_plesset import (RPParams, RPState, rp_energy,
                                   rp_equilibrium_radius, rp_integrate, rp_linear_frequency)
    from .viscous_stepper import run_scheme, strong_form_residual
except ImportError:
    # script mode
    from ale_map import AffinePath, AleField, verify_ale
    from cli_io import (SCENARIOS, RunConfig, emit_ledger, emit_report, emit_trajectory,
                        load_config, provenance_header, trajectory_records)
    from config import config
    from energy_pressure import EnergyLedger, apriori_velocity_bounds, check_energy_inequality
    from errors import BubbleSolverError, InvalidConfigError
    from geometry import Trajectory, validate_admissible
    from harmonic_basis import dump_basis, gram, solve_reflections
    from inviscid_dynamics import EVENT_COLLISION, EVENT_NEAR_CONTACT, PhaseState, integrate_inviscid
    from rayleigh_plesset import (RPParams, RPState, rp_energy,
                                  rp_equilibrium_radius, rp_linear_frequency, rp_integrate)
    from viscous_stepper import run_scheme, strong_form_residual

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_CONTACT = 4

# runs ending with these events still write outputs but exit with EXIT_CONTACT
CONTACT_EVENTS = (EVENT_COLLISION, EVENT_NEAR_CONTACT)


@dataclass
class ScenarioOutcome:
    """What one scenario produced before anything is written"""
    report: Dict
    trajectory: Optional[Trajectory] = None
    ledger: Optional[EnergyLedger] = None
    basis_text: Optional[str] = None
    events: List[str] = field(default_factory=list)


class BubbleSimulator:
    """Runs validated run files and writes their outputs"""

    def __init__(self, verbose: bool = False):
        """
        Args:
            verbose: print a line per run and per written file
        """
        self.verbose = verbose
        self.stats = {
            'runs': 0,
            'errors': 0,
            'events': {},
            'avg_run_time': 0.0,
        }
        self._timed_runs = 0
        self._handlers = {
            'rp': self._run_rp,
            'inviscid': self._run_inviscid,
            'viscous': self._run_viscous,
            'basis': self._run_basis,
            'ale-verify': self._run_ale_verify,
        }

    def run(self, run_config: RunConfig, out_dir: str) -> Dict:
        """
        Run one scenario and write its outputs under out_dir.

        Returns:
            dict with scenario, status, exit_code, events, outputs and runTime
        """
        start = time.perf_counter()
        result = {
            'scenario': run_config.scenario,
            'config_sha256': run_config.config_hash(),
            'status': 'success',
            'exit_code': EXIT_OK,
            'events': [],
            'outputs': {},
            'runTime': 0.0,
        }
        if self.verbose:
            print(f"Running {run_config.scenario} scenario ({run_config.n_bubbles} bubbles)")

        try:
            outcome = self._handlers[run_config.scenario](run_config)
            result['outputs'] = self._write(run_config, outcome, out_dir)
            result['events'] = outcome.events
            for tag in outcome.events:
                self.stats['events'][tag] = self.stats['events'].get(tag, 0) + 1
            if any(tag in CONTACT_EVENTS for tag in outcome.events):
                result['status'] = 'contact'
                result['exit_code'] = EXIT_CONTACT
            self.stats['runs'] += 1
        except InvalidConfigError as e:
            result['status'] = 'invalid'
            result['exit_code'] = EXIT_CONFIG
            result['error'] = str(e)
            self.stats['errors'] += 1
            logger.error("invalid configuration: %s", e)
        except BubbleSolverError as e:
            result['status'] = 'error'
            result['exit_code'] = EXIT_NUMERICAL
            result['error'] = f"{type(e).__name__}: {e}"
            self.stats['errors'] += 1
            logger.error("%s run failed: %s", run_config.scenario, result['error'])
        except OSError as e:
            result['status'] = 'write_error'
            result['exit_code'] = EXIT_CONFIG
            result['error'] = str(e)
            self.stats['errors'] += 1
            logger.error("cannot write %s outputs under %s: %s", run_config.scenario, out_dir, e)

        elapsed = time.perf_counter() - start
        result['runTime'] = elapsed
        self._timed_runs += 1
        self.stats['avg_run_time'] += (elapsed - self.stats['avg_run_time']) / self._timed_runs
        logger.info("%s run finished: %s (exit %d) in %.2fs", run_config.scenario,
                    result['status'], result['exit_code'], elapsed)
        return result

    def run_file(self, config_path: str, out_dir: str, scenario: Optional[str] = None,
                 overrides: Optional[Dict] = None) -> Dict:
        """Load a run file and run it; configuration errors become an exit-2 result"""
        try:
            run_config = load_config(config_path, scenario, overrides)
        except InvalidConfigError as e:
            self.stats['errors'] += 1
            logger.error("invalid configuration in %s: %s", config_path, e)
            return {
                'scenario': scenario,
                'status': 'invalid',
                'exit_code': EXIT_CONFIG,
                'error': str(e),
                'violations': [list(v) for v in e.violations],
            }
        except OSError as e:
            self.stats['errors'] += 1
            return {'scenario': scenario, 'status': 'invalid', 'exit_code': EXIT_CONFIG,
                    'error': f"cannot read {config_path}: {e}"}
        return self.run(run_config, out_dir)

    def get_statistics(self) -> Dict:
        return self.stats.copy()

    # -- scenarios ---------------------------------------------------------

    def _run_rp(self, run_config: RunConfig) -> ScenarioOutcome:
        bubbles = run_config.bubbles
        params = RPParams(c=float(bubbles.pressure_constants[0]), gamma=bubbles.gamma,
                          nu=run_config.param('nu', 0.0), p_inf=run_config.param('p_inf', 0.0))
        init = RPState(float(bubbles.radii[0]), float(run_config.rdot[0]))
        oracle = rp_integrate(init, params, run_config.param('T'), tol=run_config.param('tol'),
                              r_floor=run_config.param('r_floor'))

        trajectory = Trajectory(pressure_constants=bubbles.pressure_constants, gamma=bubbles.gamma)
        ledger = EnergyLedger(E0=rp_energy(init, params))
        states = oracle.states()
        dissipated = np.maximum.accumulate(np.maximum(oracle.dissipation, 0.0))
        for t, state, d in zip(oracle.times, states, dissipated):
            kinetic = 2.0 * np.pi * state.r ** 3 * state.rdot ** 2
            trajectory.append(t, bubbles.centers, [state.r], [state.rdot, 0.0, 0.0, 0.0])
            ledger.append(t, kinetic, rp_energy(state, params) - kinetic, d)

        events = []
        if oracle.collapsed:
            trajectory.add_event(oracle.collapse_time, 'collapse')
            events.append('collapse')
        report = {
            'samples': len(trajectory),
            'final_time': trajectory.times[-1],
            'final_radius': float(oracle.r[-1]),
            'final_rdot': float(oracle.rdot[-1]),
            'radius_range': [float(np.min(oracle.r)), float(np.max(oracle.r))],
            'collapse_time': oracle.collapse_time,
            'energy': self._energy_summary(ledger),
        }
        if params.p_inf > 0:
            report['equilibrium_radius'] = rp_equilibrium_radius(params)
            report['linear_frequency'] = rp_linear_frequency(params)
        return ScenarioOutcome(report, trajectory, ledger, events=events)

    def _run_inviscid(self, run_config: RunConfig) -> ScenarioOutcome:
        state = PhaseState(run_config.bubbles, run_config.qdot)
        trajectory, ledger = integrate_inviscid(
            state, run_config.param('T'),
            tol=run_config.param('tol'),
            collision_threshold=run_config.param('collision_threshold'),
            L=run_config.param('L'),
            fd_step=run_config.param('fd_step'),
            r_floor=run_config.param('r_floor'),
        )
        total = (np.array(ledger.kinetic) + np.array(ledger.potential))
        report = {
            'samples': len(trajectory),
            'final_time': trajectory.times[-1],
            'final_radii': trajectory.radii[-1],
            'final_centers': trajectory.centers[-1],
            'energy': self._energy_summary(ledger),
            'max_relative_energy_drift': float(np.max(np.abs(total - ledger.E0))
                                               / max(abs(ledger.E0), np.finfo(float).tiny)),
            'velocity_bounds': self._bound_check(trajectory, ledger.E0),
        }
        return ScenarioOutcome(report, trajectory, ledger,
                               events=[tag for _, tag in trajectory.events])

    def _run_viscous(self, run_config: RunConfig) -> ScenarioOutcome:
        params = run_config.scheme_params()
        result = run_scheme(run_config.initial_coefficients(), run_config.bubbles, params)
        trajectory, ledger = result.trajectory, result.ledger
        report = {
            'status': result.status,
            'samples': len(trajectory),
            'final_time': trajectory.times[-1],
            'windows': result.windows,
            'halvings': result.halvings,
            'forced_steps': result.forced_steps,
            'separation_horizon': result.horizon,
            'labels': result.labels,
            'final_radii': trajectory.radii[-1],
            'final_centers': trajectory.centers[-1],
            'accumulated_radii': result.radii_u[-1],
            'accumulated_centers': result.centers_u[-1],
            'geometry_deviation': result.geometry_deviation(),
            'energy': self._energy_summary(ledger),
        }
        if run_config.n_bubbles == 1 and len(trajectory) > 1 and result.labels[0] == 'q_1':
            report['strong_form_residual'] = strong_form_residual(result, params.nu)
        return ScenarioOutcome(report, trajectory, ledger,
                               events=[tag for _, tag in trajectory.events])

    def _run_basis(self, run_config: RunConfig) -> ScenarioOutcome:
        basis = solve_reflections(run_config.bubbles, run_config.param('L'),
                                  run_config.param('tol'), degree=run_config.param('degree'))
        matrix = gram(basis)
        report = {
            'labels': basis.labels,
            'order': basis.order,
            'sweeps': basis.sweeps,
            'history': basis.history,
            'projected_residuals': basis.residuals,
            'truncation_residuals': basis.truncation_residuals,
            'gram': matrix.matrix,
            'gram_asymmetry': matrix.asymmetry,
            'gram_min_eigenvalue': matrix.min_eigenvalue,
        }
        return ScenarioOutcome(report, basis_text=dump_basis(basis))

    def _run_ale_verify(self, run_config: RunConfig) -> ScenarioOutcome:
        t_end = run_config.param('T')
        path = AffinePath.from_velocities(run_config.bubbles, run_config.xdot, run_config.rdot,
                                          t_end)
        ale = AleField(path, delta=run_config.param('delta'))
        ale_report = verify_ale(ale, run_config.param('t', 0.5 * t_end),
                                tol=run_config.param('tol'),
                                samples=run_config.param('samples', 8),
                                seed=run_config.param('seed', 0))
        return ScenarioOutcome(ale_report.as_dict())

    # -- helpers -----------------------------------------------------------

    @staticmethod
    def _energy_summary(ledger: EnergyLedger) -> Dict:
        check = check_energy_inequality(ledger)
        return {
            'E0': ledger.E0,
            'min_slack': float(min(ledger.slack)),
            'final_dissipation': ledger.dissipation[-1],
            'inequality_holds': check.ok,
            'max_excess': check.max_violation,
        }

    @staticmethod
    def _bound_check(trajectory: Trajectory, E0: float) -> Dict:
        """Radial velocities against the trace bound and the distilled bound"""
        if not E0 > 0:
            return {'checked': False}
        n = len(trajectory.radii[0])
        worst_trace, worst_distilled = 0.0, 0.0
        for k in range(len(trajectory)):
            cfg = trajectory.config_at(k)
            bounds = apriori_velocity_bounds(E0, validate_admissible(cfg).delta, cfg)
            speed = np.abs(trajectory.coefficients[k][:n])
            worst_trace = max(worst_trace, float(np.max(speed / bounds.rdot_trace)))
            worst_distilled = max(worst_distilled, float(np.max(speed / bounds.rdot)))
        if worst_distilled > 1.0:
            logger.warning("radial speed reached %.3f times the distilled a-priori bound",
                           worst_distilled)
        return {'checked': True, 'max_ratio_trace': worst_trace,
                'max_ratio_distilled': worst_distilled, 'trace_bound_holds': worst_trace <= 1.0}

    def _write(self, run_config: RunConfig, outcome: ScenarioOutcome, out_dir: str) -> Dict:
        header = provenance_header(run_config)
        written = {}
        if outcome.trajectory is not None:
            path = run_config.output_path(out_dir, 'trajectory')
            emit_trajectory(trajectory_records(outcome.trajectory, outcome.ledger), path, header)
            written['trajectory'] = path
        if outcome.ledger is not None:
            path = run_config.output_path(out_dir, 'ledger')
            emit_ledger(outcome.ledger, path, header)
            written['ledger'] = path
        if outcome.basis_text is not None:
            path = run_config.output_path(out_dir, 'basis')
            try:
                os.makedirs(out_dir, exist_ok=True)
                with open(path, 'w', encoding='utf-8', newline='\n') as f:
                    f.write(outcome.basis_text)
            except OSError as exc:
                raise OSError(f"cannot write {path}: {exc}") from exc
            written['basis'] = path
        report = dict(outcome.report, scenario=run_config.scenario, events=outcome.events)
        path = run_config.output_path(out_dir, 'report')
        emit_report(report, path, header)
        written['report'] = path
        if self.verbose:
            for kind, path in sorted(written.items()):
                print(f"  {kind}: {path}")
        return written


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Relaxed spherical-bubble solver')
    subparsers = parser.add_subparsers(dest='scenario', required=True)
    for scenario in SCENARIOS:
        sub = subparsers.add_parser(scenario, help=f'run a {scenario} scenario')
        sub.add_argument('--config', required=True, help='run file (JSON)')
        sub.add_argument('--out', default='results', help='output directory')
        sub.add_argument('-v', '--verbose', action='store_true', help='debug logging')
        if scenario == 'viscous':
            sub.add_argument('--stokes-mode', action='store_true',
                             help='drop the convection term')
            sub.add_argument('--override-horizon', action='store_true',
                             help='allow T beyond the separation horizon')
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Command-line interface; returns the process exit code"""
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else getattr(logging, config.LOG_LEVEL.upper(),
                                                       logging.INFO)
    logging.basicConfig(level=level, format=config.LOG_FORMAT)

    overrides = {}
    if getattr(args, 'stokes_mode', False):
        overrides['convection'] = 'off'
    if getattr(args, 'override_horizon', False):
        overrides['override_horizon'] = True

    simulator = BubbleSimulator(verbose=args.verbose)
    result = simulator.run_file(args.config, args.out, args.scenario, overrides or None)
    print(json.dumps({k: v for k, v in result.items() if k != 'runTime'}, indent=2))
    return result['exit_code']


if __name__ == "__main__":
    sys.exit(main())
