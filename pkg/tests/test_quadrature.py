# relaxed-bubbles/tests/test_quadrature.py
"""
Unit tests for sphere and exterior quadrature and finite-difference operators
"""

import unittest
import sys
import os

import numpy as np

# Add src to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.errors import DomainError, QuadratureError
from src.geometry import BubbleConfig
from src.quadrature import (build_exterior_rule, exterior_integral, fd_divergence, fd_jacobian,
                            make_sphere_rule, partition_of_unity)


def unit_bubble():
    return BubbleConfig([[0.0, 0.0, 0.0]], [1.0], [4 * np.pi])


def offset_benchmark(a):
    """∫_{|x|>1} |x - a e_z|^{-4} dx in closed form"""
    return 4 * np.pi * (1.0 / (2 * (1 - a * a)) - np.log((1 - a) / (1 + a)) / (4 * a))


class TestSphereRule(unittest.TestCase):

    def test_moments(self):
        """Test ∮1, ∮n_k and ∮n_k n_l on the unit sphere"""
        rule = make_sphere_rule(8)
        self.assertAlmostEqual(rule.weights.sum(), 4 * np.pi, delta=1e-12)
        np.testing.assert_allclose(rule.integrate(rule.nodes), np.zeros(3), atol=1e-13)
        second = rule.integrate(np.einsum('mk,ml->mkl', rule.nodes, rule.nodes))
        np.testing.assert_allclose(second, 4 * np.pi / 3 * np.eye(3), atol=1e-13)

    def test_exactness_degree(self):
        """Test polynomial moments up to the requested degree"""
        for degree in (0, 1, 4, 6, 11, 20):
            with self.subTest(degree=degree):
                rule = make_sphere_rule(degree)
                self.assertEqual(rule.exactness_degree, degree)
                self.assertAlmostEqual(rule.weights.sum(), 4 * np.pi, delta=1e-12)
        x, y, z = make_sphere_rule(6).nodes.T
        rule = make_sphere_rule(6)
        self.assertAlmostEqual(rule.integrate(x ** 4), 4 * np.pi / 5, delta=1e-13)
        self.assertAlmostEqual(rule.integrate(x * x * y * y * z * z), 4 * np.pi / 105, delta=1e-13)
        self.assertAlmostEqual(rule.integrate(x ** 3 * z ** 3), 0.0, delta=1e-13)

    def test_radius_scaling(self):
        """Test the surface area of a sphere of radius 2"""
        rule = make_sphere_rule(4)
        self.assertAlmostEqual(rule.integrate(np.ones(len(rule)), radius=2.0), 16 * np.pi,
                               delta=1e-12)

    def test_unsupported_degree(self):
        """Test the error names the supported range"""
        with self.assertRaises(DomainError) as ctx:
            make_sphere_rule(-1)
        self.assertIn('supported range', str(ctx.exception))

    def test_factor_three_identity(self):
        """Test ⨏(c·n) n dS = c/3 for random constant vectors"""
        rule = make_sphere_rule(2)
        rng = np.random.default_rng(7)
        for _ in range(10):
            c = rng.normal(size=3)
            mean = rule.average((rule.nodes @ c)[:, None] * rule.nodes)
            np.testing.assert_allclose(mean, c / 3, atol=1e-14)


class TestExteriorRule(unittest.TestCase):

    def setUp(self):
        self.config = unit_bubble()
        self.rule = build_exterior_rule(self.config)

    def test_inverse_fourth_power(self):
        """Test ∫|x|^{-4} outside the unit ball"""
        result = exterior_integral(lambda p: np.sum(p * p, axis=1) ** -2, self.config, self.rule)
        self.assertAlmostEqual(result.value, 4 * np.pi, delta=1e-6)
        self.assertGreater(result.truncation_estimate, 0.0)

    def test_inverse_sixth_power(self):
        """Test ∫6|x|^{-6} outside the unit ball with decay exponent 6"""
        result = exterior_integral(lambda p: 6 * np.sum(p * p, axis=1) ** -3, self.config,
                                   self.rule, decay=6.0)
        self.assertAlmostEqual(result.value, 8 * np.pi, delta=1e-6)

    def test_zero_field(self):
        """Test the zero integrand"""
        result = exterior_integral(lambda p: np.zeros(len(p)), self.config, self.rule)
        self.assertEqual(result.value, 0.0)

    def test_cutoff_mode_drops_tail(self):
        """Test cutoff mode reports the tail without adding it"""
        rule = build_exterior_rule(self.config, tail='cutoff')
        result = exterior_integral(lambda p: np.sum(p * p, axis=1) ** -2, self.config, rule)
        self.assertAlmostEqual(result.value + result.truncation_estimate, 4 * np.pi, delta=1e-6)
        self.assertAlmostEqual(result.truncation_estimate, 4 * np.pi / rule.truncation_radii[0],
                               delta=1e-9)

    def test_measure_of_truncated_region(self):
        """Test the linear radial map reproduces the shell volume"""
        rule = build_exterior_rule(self.config, radial_map='linear')
        outer = rule.truncation_radii[0]
        volume = 4 * np.pi / 3 * (outer ** 3 - 1.0)
        self.assertAlmostEqual(rule.weights.sum(), volume, delta=1e-10 * volume)

    def test_radial_convergence(self):
        """Test doubling radial resolution cuts the offset benchmark error by at least 4x"""
        a = 0.5
        exact = offset_benchmark(a)

        def field(p):
            d = p - [0.0, 0.0, a]
            return np.sum(d * d, axis=1) ** -2

        errors = []
        for nodes in (2, 4):
            rule = build_exterior_rule(self.config, radial_nodes=nodes, shell_nodes=nodes,
                                       angular_degree=40, truncation_factor=1000.0)
            errors.append(abs(exterior_integral(field, self.config, rule).value - exact))
        self.assertLess(errors[1], errors[0] / 4)

    def test_deterministic(self):
        """Test repeated integration is bitwise identical"""
        field = lambda p: np.exp(-np.sum(p * p, axis=1))
        first = exterior_integral(field, self.config, self.rule).value
        second = exterior_integral(field, self.config, build_exterior_rule(self.config)).value
        self.assertEqual(first, second)

    def test_non_finite_sample(self):
        """Test a NaN sample is reported with its location"""
        def field(p):
            out = np.ones(len(p))
            out[np.linalg.norm(p, axis=1) > 2.0] = np.nan
            return out

        with self.assertRaises(QuadratureError) as ctx:
            exterior_integral(field, self.config, self.rule)
        self.assertGreater(np.linalg.norm(ctx.exception.location), 2.0)

    def test_partition_of_unity(self):
        """Test partition weights sum to 1 and vanish near other bubbles"""
        cfg = BubbleConfig([[-3.0, 0, 0], [3.0, 0, 0]], [1.0, 1.0], [1.0, 1.0])
        widths = np.array([1.0, 1.0])
        rng = np.random.default_rng(5)
        pts = rng.uniform(-8, 8, size=(200, 3))
        pts = pts[np.min(np.linalg.norm(pts[:, None] - cfg.centers[None], axis=2), axis=1) > 1.0]
        weights = partition_of_unity(pts, cfg, widths)
        np.testing.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-12)
        near = partition_of_unity(np.array([[3.0, 1.1, 0.0]]), cfg, widths)
        np.testing.assert_allclose(near, [[0.0, 1.0]], atol=1e-15)

    def test_two_bubble_volume_integral(self):
        """Test a pair integrates the sum of two monopole energy densities"""
        cfg = BubbleConfig([[-5.0, 0, 0], [5.0, 0, 0]], [1.0, 1.0], [1.0, 1.0])
        rule = build_exterior_rule(cfg, angular_degree=30, truncation_factor=20.0)

        def field(p):
            out = np.zeros(len(p))
            for c in cfg.centers:
                d2 = np.sum((p - c) ** 2, axis=1)
                out += d2 ** -2
            return out

        # 4π outside its own ball, less the ball average d^-4(1 + 1.2/d²) over the other
        inside_other = 4 * np.pi / 3 / 100.0 ** 2 * (1 + 1.2 / 100.0)
        exact = 2 * (4 * np.pi - inside_other)
        value = exterior_integral(field, cfg, rule).value
        self.assertAlmostEqual(value, exact, delta=2e-3 * exact)


class TestFiniteDifferences(unittest.TestCase):

    def test_linear_field(self):
        """Test the Jacobian of A·x is A"""
        a = np.array([[1.0, 2.0, 0.5], [-1.0, 0.0, 3.0], [0.25, 4.0, -2.0]])
        jac = fd_jacobian(lambda p: p @ a.T, np.array([0.3, -0.2, 1.0]), step=1e-3)
        np.testing.assert_allclose(jac, a, atol=1e-10)

    def test_monopole_divergence(self):
        """Test x/|x|³ is solenoidal at (2, 0, 0)"""
        field = lambda p: p / np.linalg.norm(p, axis=1)[:, None] ** 3
        self.assertAlmostEqual(fd_divergence(field, np.array([2.0, 0.0, 0.0]), step=1e-4), 0.0,
                               delta=1e-6)

    def test_rotation(self):
        """Test the symmetric part of a rigid rotation's Jacobian vanishes"""
        omega = np.array([0.3, -1.2, 0.7])
        jac = fd_jacobian(lambda p: np.cross(omega, p), np.array([1.0, 2.0, 3.0]), step=1e-4)
        np.testing.assert_allclose(jac + jac.T, np.zeros((3, 3)), atol=1e-10)

    def test_fourth_order_on_cubic(self):
        """Test the fourth-order stencil differentiates cubics exactly"""
        field = lambda p: (p[:, 0] ** 3 + p[:, 1] ** 2 * p[:, 2])[:, None]
        point = np.array([0.5, -1.0, 2.0])
        grad = fd_jacobian(field, point, step=1e-2, order=4)[0]
        np.testing.assert_allclose(grad, [0.75, -4.0, 1.0], atol=1e-10)

    def test_batched_points(self):
        """Test many points at once give one Jacobian each"""
        pts = np.array([[1.0, 0, 0], [0, 2.0, 0], [0, 0, 3.0]])
        jac = fd_jacobian(lambda p: 2.0 * p, pts, step=1e-3)
        self.assertEqual(jac.shape, (3, 3, 3))
        np.testing.assert_allclose(jac, np.broadcast_to(2 * np.eye(3), (3, 3, 3)), atol=1e-10)


if __name__ == '__main__':
    unittest.main(verbosity=2)
