# relaxed-bubbles/tests/test_cli_io.py
"""
Unit tests for run-file parsing and result emission
"""

import unittest
import sys
import os
import json
import tempfile

import numpy as np

# Add src to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.cli_io import (DEFAULT_OUTPUTS, TrajectoryRecord, emit_ledger, emit_report,
                        emit_trajectory, encode, parse_config, provenance_header, read_header,
                        read_ledger, read_report, read_trajectory, trajectory_records)
from src.energy_pressure import EnergyLedger
from src.errors import InvalidConfigError
from src.geometry import Trajectory


def _run_file(scenario='rp', params=None, bubbles=None, **extra):
    data = {
        'scenario': scenario,
        'bubbles': bubbles or [{'center': [0, 0, 0], 'radius': 1.0,
                                'pressure_constant': 4 * np.pi}],
        'params': params if params is not None else {'T': 0.1},
    }
    data.update(extra)
    return json.dumps(data)


PAIR = [
    {'center': [0, 0, 2.5], 'radius': 1.0, 'pressure_constant': 1.0, 'rdot': 0.1},
    {'center': [0, 0, -2.5], 'radius': 0.8, 'pressure_constant': 2.0, 'xdot': [0, 0, 0.2]},
]


class TestParseConfig(unittest.TestCase):

    def test_minimal_rp_file(self):
        """Test defaults are filled for a minimal rp run file"""
        run = parse_config(_run_file())
        self.assertEqual(run.scenario, 'rp')
        self.assertEqual(run.n_bubbles, 1)
        self.assertAlmostEqual(run.bubbles.gamma, 5.0 / 3.0, places=15)
        self.assertEqual(run.rdot.tolist(), [0.0])
        self.assertEqual(run.xdot.tolist(), [[0.0, 0.0, 0.0]])
        self.assertEqual(run.param('T'), 0.1)
        self.assertIsNone(run.param('nu'))
        self.assertEqual(run.output_path('out', 'ledger'),
                         os.path.join('out', DEFAULT_OUTPUTS['ledger']))

    def test_negative_radius(self):
        """Test a negative radius is reported once with its field path"""
        text = _run_file(bubbles=[{'center': [0, 0, 0], 'radius': -1.0,
                                   'pressure_constant': 1.0}])
        with self.assertRaises(InvalidConfigError) as ctx:
            parse_config(text)
        self.assertEqual(len(ctx.exception.violations), 1)
        self.assertEqual(ctx.exception.violations[0][0], 'bubbles[0].radius')

    def test_all_violations_collected(self):
        """Test several independent problems are reported together"""
        text = _run_file(params={'T': 'long', 'bogus': 1},
                         bubbles=[{'center': [0, 0], 'radius': 1.0, 'pressure_constant': 0.0}],
                         gamma=0.9, extra=True)
        with self.assertRaises(InvalidConfigError) as ctx:
            parse_config(text)
        paths = {path for path, _ in ctx.exception.violations}
        self.assertEqual(paths, {'extra', 'gamma', 'bubbles[0].center',
                                 'bubbles[0].pressure_constant', 'params.T', 'params.bogus'})

    def test_viscous_fractional_windows(self):
        """Test T/h must be an integer for viscous runs"""
        text = _run_file('viscous', params={'T': 0.105, 'h': 0.01}, bubbles=PAIR)
        with self.assertRaises(InvalidConfigError) as ctx:
            parse_config(text)
        self.assertIn('params.T', [path for path, _ in ctx.exception.violations])

    def test_missing_horizon(self):
        """Test T is required for time-dependent scenarios"""
        with self.assertRaises(InvalidConfigError) as ctx:
            parse_config(_run_file(params={}))
        self.assertEqual(ctx.exception.violations[0][0], 'params.T')
        run = parse_config(_run_file('basis', params={'L': 3}, bubbles=PAIR))
        self.assertEqual(run.param('L'), 3)

    def test_malformed_json(self):
        """Test malformed JSON is a configuration error at the root path"""
        with self.assertRaises(InvalidConfigError) as ctx:
            parse_config('{"scenario": "rp",')
        self.assertEqual(ctx.exception.violations[0][0], '$')
        with self.assertRaises(InvalidConfigError):
            parse_config('[1, 2, 3]')

    def test_scenario_mismatch(self):
        """Test the command-line scenario must agree with the file"""
        with self.assertRaises(InvalidConfigError) as ctx:
            parse_config(_run_file(), scenario='inviscid')
        self.assertEqual(ctx.exception.violations[0][0], 'scenario')
        # a file without a scenario takes the requested one
        data = json.loads(_run_file())
        del data['scenario']
        self.assertEqual(parse_config(json.dumps(data), scenario='rp').scenario, 'rp')

    def test_overlapping_bubbles(self):
        """Test overlapping bubbles are rejected"""
        bubbles = [dict(PAIR[0], center=[0, 0, 0.5]), dict(PAIR[1], center=[0, 0, -0.5])]
        with self.assertRaises(InvalidConfigError) as ctx:
            parse_config(_run_file('inviscid', bubbles=bubbles))
        self.assertEqual(ctx.exception.violations[0][0], 'bubbles')

    def test_rp_needs_one_bubble(self):
        """Test the rp scenario takes a single bubble"""
        with self.assertRaises(InvalidConfigError):
            parse_config(_run_file('rp', bubbles=PAIR))

    def test_velocities(self):
        """Test per-bubble velocities and the coefficient override"""
        run = parse_config(_run_file('inviscid', bubbles=PAIR))
        np.testing.assert_array_equal(run.qdot, [0.1, 0.0, 0, 0, 0, 0, 0, 0.2])
        coefficients = [0.3, -0.3, 1, 0, 0, -1, 0, 0]
        run = parse_config(_run_file('inviscid', bubbles=PAIR, coefficients=coefficients))
        np.testing.assert_array_equal(run.qdot, coefficients)
        with self.assertRaises(InvalidConfigError) as ctx:
            parse_config(_run_file('inviscid', bubbles=PAIR, coefficients=[0.0, 1.0]))
        self.assertEqual(ctx.exception.violations[0][0], 'coefficients')

    def test_overrides(self):
        """Test command-line overrides land in the params and the hash"""
        text = _run_file('viscous', params={'T': 0.02, 'h': 0.01}, bubbles=PAIR)
        plain = parse_config(text)
        stokes = parse_config(text, overrides={'convection': 'off'})
        self.assertEqual(stokes.scheme_params().convection, 'off')
        self.assertNotEqual(plain.config_hash(), stokes.config_hash())

    def test_output_names(self):
        """Test output names must be plain file names"""
        with self.assertRaises(InvalidConfigError) as ctx:
            parse_config(_run_file(outputs={'ledger': '../x.csv', 'movie': 'a.mp4'}))
        paths = {path for path, _ in ctx.exception.violations}
        self.assertEqual(paths, {'outputs.ledger', 'outputs.movie'})

    def test_hash_stability(self):
        """Test the config hash ignores formatting but not content"""
        text = _run_file()
        reformatted = json.dumps(json.loads(text), indent=4, sort_keys=False)
        self.assertEqual(parse_config(text).config_hash(),
                         parse_config(reformatted).config_hash())
        changed = _run_file(bubbles=[{'center': [0, 0, 0], 'radius': 1.5,
                                      'pressure_constant': 4 * np.pi}])
        self.assertNotEqual(parse_config(text).config_hash(),
                            parse_config(changed).config_hash())
        self.assertEqual(len(parse_config(text).config_hash()), 64)


class TestEncoding(unittest.TestCase):

    def test_floats(self):
        """Test floats use the shortest exact 17-digit form and special words"""
        self.assertEqual(encode(0.5), '0.5')
        self.assertEqual(encode(np.float64(0.1)), '0.10000000000000001')
        self.assertEqual(encode(float('inf')), 'Infinity')
        self.assertEqual(encode(float('nan')), 'NaN')
        self.assertEqual(float(encode(1.0 / 3.0)), 1.0 / 3.0)

    def test_containers(self):
        """Test keys are sorted and numpy values are accepted"""
        text = encode({'b': np.arange(2), 'a': (True, None, np.int64(3))})
        self.assertEqual(text, '{"a":[true,null,3],"b":[0,1]}')
        with self.assertRaises(TypeError):
            encode(object())

    def test_indented(self):
        """Test indented output parses back to the same value"""
        value = {'z': [1.25, 2.0], 'nested': {'x': -3e-20}}
        self.assertEqual(json.loads(encode(value, indent=2)), value)


class TestTrajectoryFiles(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def _records(self, count):
        rng = np.random.default_rng(7)
        records = []
        for k in range(count):
            records.append(TrajectoryRecord(
                time=k * 0.01 + rng.uniform(0, 1e-3),
                centers=rng.normal(size=(2, 3)),
                radii=rng.uniform(0.5, 2.0, size=2),
                coefficients=rng.normal(size=8),
                kinetic=float(rng.uniform()),
                potential=float(rng.uniform()),
                dissipation=k * 1e-3,
                slack=float(rng.normal() * 1e-12),
                event='collision' if k == count - 1 else None,
            ))
        return records

    def test_bitwise_round_trip(self):
        """Test 100 records are read back bit for bit"""
        records = self._records(100)
        path = os.path.join(self.tmp.name, 'trajectory.jsonl')
        emit_trajectory(records, path, provenance_header())
        back = read_trajectory(path)
        self.assertEqual(len(back), 100)
        for a, b in zip(records, back):
            self.assertEqual(a.time, b.time)
            np.testing.assert_array_equal(a.centers, b.centers)
            np.testing.assert_array_equal(a.radii, b.radii)
            np.testing.assert_array_equal(a.coefficients, b.coefficients)
            self.assertEqual((a.kinetic, a.potential, a.dissipation, a.slack, a.event),
                             (b.kinetic, b.potential, b.dissipation, b.slack, b.event))
        self.assertEqual(read_header(path)['records'], 100)

    def test_empty_trajectory(self):
        """Test an empty trajectory gives an empty file with its sidecar"""
        path = os.path.join(self.tmp.name, 'empty.jsonl')
        emit_trajectory([], path, provenance_header())
        self.assertEqual(os.path.getsize(path), 0)
        self.assertEqual(read_trajectory(path), [])
        self.assertEqual(read_header(path)['records'], 0)

    def test_times_must_increase(self):
        """Test non-increasing times are refused"""
        records = self._records(3)
        records[2].time = records[1].time
        with self.assertRaises(InvalidConfigError):
            emit_trajectory(records, os.path.join(self.tmp.name, 'bad.jsonl'))

    def test_records_from_trajectory(self):
        """Test ledger values and events are attached to samples"""
        trajectory = Trajectory(pressure_constants=np.ones(1), gamma=5.0 / 3.0)
        ledger = EnergyLedger(E0=2.0)
        for k in range(4):
            trajectory.append(0.1 * k, np.zeros((1, 3)), [1.0], [0.0, 0.0, 0.0, 0.0])
            ledger.append(0.1 * k, 0.5, 1.5 - 0.1 * k, 0.1 * k)
        trajectory.add_event(0.25, 'collision')
        records = trajectory_records(trajectory, ledger)
        self.assertEqual([r.event for r in records], [None, None, None, 'collision'])
        self.assertAlmostEqual(records[1].slack, 0.0, places=14)
        self.assertEqual(records[0].kinetic, 0.5)


class TestLedgerAndReportFiles(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        rng = np.random.default_rng(3)
        self.ledger = EnergyLedger(E0=1.0 / 3.0)
        dissipated = 0.0
        for k in range(50):
            dissipated += rng.uniform(0, 1e-3)
            self.ledger.append(k * 0.02, rng.uniform(0, 0.2), rng.uniform(0, 0.1), dissipated)

    def test_ledger_round_trip(self):
        """Test ledger columns are read back bit for bit with E0 from the sidecar"""
        path = os.path.join(self.tmp.name, 'ledger.csv')
        emit_ledger(self.ledger, path, provenance_header())
        back = read_ledger(path)
        self.assertEqual(back.E0, self.ledger.E0)
        self.assertEqual(back.times, self.ledger.times)
        self.assertEqual(back.kinetic, self.ledger.kinetic)
        self.assertEqual(back.potential, self.ledger.potential)
        self.assertEqual(back.dissipation, self.ledger.dissipation)
        header = read_header(path)
        self.assertEqual(header['rows'], 50)
        self.assertEqual(header['file'], 'ledger.csv')

    def test_ledger_without_sidecar(self):
        """Test E0 is recovered from the first row when there is no sidecar"""
        path = os.path.join(self.tmp.name, 'bare.csv')
        emit_ledger(self.ledger, path)
        self.assertAlmostEqual(read_ledger(path).E0, self.ledger.E0, places=14)
        with open(path, 'r', encoding='utf-8') as f:
            self.assertEqual(f.readline().strip(), 'time,kinetic,potential,dissipation,slack')

    def test_reemit_is_byte_identical(self):
        """Test emitting the same data twice gives identical bytes"""
        report = {'final_radius': 1.0 / 7.0, 'labels': ['q_1'], 'ok': True}
        header = provenance_header(parse_config(_run_file()))
        paths = []
        for name in ('a', 'b'):
            directory = os.path.join(self.tmp.name, name)
            emit_report(report, os.path.join(directory, 'report.json'), header)
            emit_ledger(self.ledger, os.path.join(directory, 'ledger.csv'), header)
            paths.append(directory)
        for name in ('report.json', 'ledger.csv', 'ledger.csv.header.json'):
            with open(os.path.join(paths[0], name), 'rb') as f:
                first = f.read()
            with open(os.path.join(paths[1], name), 'rb') as f:
                second = f.read()
            self.assertEqual(first, second)
        back = read_report(os.path.join(paths[0], 'report.json'))
        self.assertEqual(back['final_radius'], 1.0 / 7.0)

    def test_provenance(self):
        """Test the header records versions, calibration and the config hash"""
        run = parse_config(_run_file())
        header = provenance_header(run, note='x')
        self.assertEqual(header['config_sha256'], run.config_hash())
        self.assertEqual(header['scenario'], 'rp')
        self.assertIn('numpy', header['versions'])
        self.assertIn('XDOT_BOUND_FACTOR', header['calibration'])
        self.assertEqual(header['note'], 'x')


if __name__ == '__main__':
    unittest.main(verbosity=2)
