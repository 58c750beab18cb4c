# relaxed-bubbles/tests/test_mollifier.py
"""
Unit tests for the bump function and the mollified cutoff
"""

import unittest
import sys
import os

import numpy as np

# Add src to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.mollifier import bump, bump_derivative, get_mollifier


class TestBump(unittest.TestCase):

    def test_support(self):
        """Test the bump vanishes outside (-1, 1) and peaks at e^-1"""
        np.testing.assert_array_equal(bump([-2.0, -1.0, 1.0, 3.0]), 0.0)
        self.assertAlmostEqual(float(bump(0.0)), np.exp(-1.0), places=15)
        self.assertEqual(float(bump_derivative(0.0)), 0.0)

    def test_derivative(self):
        """Test the analytic derivative against central differences"""
        u = np.linspace(-0.9, 0.9, 13)
        h = 1e-6
        fd = (bump(u + h) - bump(u - h)) / (2 * h)
        np.testing.assert_allclose(bump_derivative(u), fd, atol=1e-8)


class TestMollifier(unittest.TestCase):

    def setUp(self):
        self.mollifier = get_mollifier()

    def test_normalization(self):
        """Test the integral of the bump"""
        self.assertAlmostEqual(self.mollifier.normalization, 0.4439938161680794, places=10)

    def test_antiderivative(self):
        """Test W is 0 below the support, 1 above it and 1/2 at the center"""
        m = self.mollifier
        np.testing.assert_array_equal(m.antiderivative([-5.0, -1.0]), [0.0, 0.0])
        np.testing.assert_array_equal(m.antiderivative([1.0, 5.0]), [1.0, 1.0])
        self.assertAlmostEqual(float(m.antiderivative(0.0)), 0.5, places=12)
        u = np.linspace(-0.7, 0.7, 9)
        np.testing.assert_allclose(m.antiderivative(u) + m.antiderivative(-u), 1.0, atol=1e-12)

    def test_density(self):
        """Test the tabulated density matches the normalized bump"""
        u = np.linspace(-0.95, 0.95, 39)
        expected = bump(u) / self.mollifier.normalization
        np.testing.assert_allclose(self.mollifier.density(u), expected, atol=1e-9)
        self.assertEqual(float(self.mollifier.density(1.5)), 0.0)

    def test_cutoff(self):
        """Test the cutoff plateaus, midpoint and derivative"""
        radius, delta = 1.0, 0.4
        value, slope = self.mollifier.cutoff([0.5, radius + delta / 4], radius, delta)
        np.testing.assert_allclose(value, 1.0, atol=1e-12)
        np.testing.assert_allclose(slope, 0.0, atol=1e-10)
        value, slope = self.mollifier.cutoff([radius + 0.75 * delta, 3.0], radius, delta)
        np.testing.assert_allclose(value, 0.0, atol=1e-12)
        np.testing.assert_allclose(slope, 0.0, atol=1e-10)
        value, _ = self.mollifier.cutoff(radius + delta / 2, radius, delta)
        self.assertAlmostEqual(float(value), 0.5, places=12)

        s = np.linspace(radius + 0.26 * delta, radius + 0.74 * delta, 11)
        h = 1e-7
        _, slope = self.mollifier.cutoff(s, radius, delta)
        fd = (self.mollifier.cutoff(s + h, radius, delta)[0]
              - self.mollifier.cutoff(s - h, radius, delta)[0]) / (2 * h)
        self.assertTrue(np.all(slope <= 0.0))
        np.testing.assert_allclose(slope, fd, atol=1e-6)

    def test_cached(self):
        """Test the default mollifier is built once"""
        self.assertIs(get_mollifier(), self.mollifier)


if __name__ == '__main__':
    unittest.main(verbosity=2)
