# relaxed-bubbles/tests/test_rayleigh_plesset.py
"""
Unit tests for the radial single-bubble oracle
"""

import unittest
import sys
import os

import numpy as np

# Add src to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.errors import CollapseError, InvalidConfigError
from src.rayleigh_plesset import (RPParams, RPState, rp_dissipation_rate, rp_energy,
                                  rp_equilibrium_radius, rp_integrate, rp_linear_frequency, rp_rhs)


FOUR_PI = 4 * np.pi


class TestRHS(unittest.TestCase):

    def test_unit_bubble(self):
        """Test r̈ = 1 at rest with unit pressure"""
        rdot, rddot = rp_rhs(RPState(1.0, 0.0), RPParams(FOUR_PI))
        self.assertEqual(rdot, 0.0)
        self.assertAlmostEqual(rddot, 1.0, places=14)

    def test_equilibrium(self):
        """Test zero acceleration at r*"""
        params = RPParams(FOUR_PI, p_inf=2.0)
        _, rddot = rp_rhs(RPState(rp_equilibrium_radius(params), 0.0), params)
        self.assertAlmostEqual(rddot, 0.0, places=12)

    def test_viscous_damping(self):
        """Test viscosity lowers r̈ by 4νṙ/r²"""
        state = RPState(2.0, 0.5)
        _, inviscid = rp_rhs(state, RPParams(FOUR_PI))
        _, viscous = rp_rhs(state, RPParams(FOUR_PI, nu=0.1))
        self.assertAlmostEqual(inviscid - viscous, 4 * 0.1 * 0.5 / 4.0, places=14)

    def test_invalid_inputs(self):
        """Test nonpositive radius and invalid parameters are rejected"""
        with self.assertRaises(InvalidConfigError):
            RPState(0.0)
        with self.assertRaises(InvalidConfigError) as ctx:
            RPParams(-1.0, gamma=0.5)
        self.assertEqual(len(ctx.exception.violations), 2)
        with self.assertRaises(CollapseError):
            rp_rhs(_unchecked_state(-1.0), RPParams(FOUR_PI))


def _unchecked_state(r):
    state = object.__new__(RPState)
    object.__setattr__(state, 'r', r)
    object.__setattr__(state, 'rdot', 0.0)
    return state


class TestIntegration(unittest.TestCase):

    def test_energy_conserved(self):
        """Test the first integral along an inviscid free expansion"""
        params = RPParams(FOUR_PI)
        init = RPState(1.0, 0.0)
        traj = rp_integrate(init, params, 1.0, tol=1e-10)
        E0 = rp_energy(init, params)
        self.assertAlmostEqual(E0, 2 * np.pi, places=13)
        self.assertLessEqual(np.max(np.abs(traj.energies() - E0)), 1e-7 * E0)
        self.assertFalse(traj.collapsed)

    def test_rest_at_equilibrium(self):
        """Test the equilibrium solution stays constant"""
        params = RPParams(FOUR_PI, p_inf=1.0)
        traj = rp_integrate(RPState(1.0, 0.0), params, 2.0, tol=1e-10)
        np.testing.assert_allclose(traj.r, 1.0, atol=1e-12)

    def test_small_oscillation_period(self):
        """Test a small perturbation returns after one linear period"""
        params = RPParams(FOUR_PI, p_inf=1.0)
        omega = rp_linear_frequency(params)
        self.assertAlmostEqual(omega, np.sqrt(5.0), places=12)
        init = RPState(1.001, 0.0)
        period = 2 * np.pi / omega
        traj = rp_integrate(init, params, 3 * period, tol=1e-10)
        self.assertLess(np.max(np.abs(traj.r - 1.0)), 1.1e-3)
        r_period = traj.at(period)[0, 0]
        self.assertAlmostEqual(r_period, 1.001, delta=2e-5)

    def test_time_reversal(self):
        """Test integrating forward then backward recovers the initial state"""
        params = RPParams(FOUR_PI, gamma=1.4)
        tol = 1e-10
        init = RPState(0.8, 0.3)
        forward = rp_integrate(init, params, 0.5, tol=tol)
        back = rp_integrate(RPState(forward.r[-1], -forward.rdot[-1]), params, 0.5, tol=tol)
        self.assertAlmostEqual(back.r[-1], init.r, delta=100 * tol)
        self.assertAlmostEqual(-back.rdot[-1], init.rdot, delta=100 * tol)

    def test_drift_shrinks_with_tolerance(self):
        """Test tighter tolerance lowers the energy drift"""
        params = RPParams(FOUR_PI)
        init = RPState(1.0, -0.2)
        E0 = rp_energy(init, params)
        drifts = []
        for tol in (1e-6, 1e-9):
            traj = rp_integrate(init, params, 1.0, tol=tol)
            drifts.append(np.max(np.abs(traj.energies() - E0)))
        self.assertLess(drifts[1], drifts[0] / 10)

    def test_viscous_dissipation(self):
        """Test energy decreases by the integrated dissipation"""
        params = RPParams(FOUR_PI, nu=0.05)
        init = RPState(1.0, 0.0)
        t = np.linspace(0.0, 1.0, 2001)
        traj = rp_integrate(init, params, 1.0, tol=1e-11, t_eval=t)
        rates = [rp_dissipation_rate(s, params) for s in traj.states()]
        dissipated = np.trapezoid(rates, t) if hasattr(np, 'trapezoid') else np.trapz(rates, t)
        loss = rp_energy(init, params) - traj.energies()[-1]
        self.assertGreater(loss, 0.0)
        self.assertAlmostEqual(loss, dissipated, delta=1e-5 * loss)

    def test_dissipation_component(self):
        """Test the integrated dissipation closes the energy balance at every step"""
        params = RPParams(FOUR_PI, nu=0.1)
        init = RPState(1.0, 0.0)
        traj = rp_integrate(init, params, 1.0, tol=1e-10)
        self.assertEqual(traj.dissipation[0], 0.0)
        self.assertTrue(np.all(np.diff(traj.dissipation) >= -1e-14))
        balance = traj.energies() + traj.dissipation - rp_energy(init, params)
        self.assertLess(np.max(np.abs(balance)), 1e-7 * rp_energy(init, params))
        self.assertGreater(traj.dissipation[-1], 0.0)

    def test_collapse_event(self):
        """Test a pressureless bubble pulled inward collapses at t = 0.4"""
        # 2πr³ṙ² conserved: r^{5/2} = 1 - 5t/2
        traj = rp_integrate(RPState(1.0, -1.0), RPParams(0.0), 1.0, tol=1e-10, r_floor=1e-3)
        self.assertTrue(traj.collapsed)
        self.assertAlmostEqual(traj.collapse_time, 0.4 * (1 - 1e-3 ** 2.5), delta=1e-6)
        self.assertLessEqual(traj.times[-1], 0.4)


if __name__ == '__main__':
    unittest.main(verbosity=2)
