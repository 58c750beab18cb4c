# relaxed-bubbles/tests/test_ale_map.py
"""
Unit tests for the ALE field, its flow and the Piola transport operators
"""

import unittest
import sys
import os

import numpy as np

# Add src to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.ale_map import (AffinePath, AleField, FlowMap, chi, closed_form_residual,
                         divergence_residual, flow, interpolating_diffeomorphism,
                         normal_transport_residual, piola_residual, pullback, pushforward,
                         sample_fluid_points, solenoidal_field, tangency_residual,
                         transport_residual, v_ale, verify_ale)
from src.errors import DomainError, InvalidConfigError
from src.geometry import BubbleConfig, Trajectory
from src.quadrature import fd_divergence


def moving_triple():
    """Three bubbles with constant velocities on [0, 0.5]"""
    cfg = BubbleConfig([[-3, 0, 0], [3, 0, 0], [0, 3.5, 0]], [1.0, 0.8, 0.9], [1.0, 1.0, 1.0])
    xdot = [[0.2, 0, 0], [-0.1, 0.1, 0], [0, 0, 0.2]]
    rdot = [0.1, -0.1, 0.05]
    return AleField(AffinePath.from_velocities(cfg, xdot, rdot, 0.5))


def uniform(points):
    return np.broadcast_to([1.0, -0.5, 0.25], np.shape(points)).copy()


class TestAffinePath(unittest.TestCase):

    def test_state_and_velocity(self):
        """Test interpolation and per-segment velocities"""
        traj = Trajectory(pressure_constants=np.ones(1), gamma=1.4)
        traj.append(0.0, [[0, 0, 0]], [1.0], np.zeros(4))
        traj.append(1.0, [[1, 0, 0]], [2.0], np.zeros(4))
        traj.append(3.0, [[1, 2, 0]], [2.0], np.zeros(4))
        path = AffinePath.from_trajectory(traj)
        centers, radii = path.state(0.5)
        np.testing.assert_allclose(centers, [[0.5, 0, 0]])
        np.testing.assert_allclose(radii, [1.5])
        xdot, rdot = path.velocity(2.0)
        np.testing.assert_allclose(xdot, [[0, 1, 0]])
        np.testing.assert_allclose(rdot, [0.0])
        self.assertEqual(path.segment(1.0), 1)
        self.assertEqual(path.segment(3.0), 1)

    def test_min_gap_inside_segment(self):
        """Test bubbles passing each other are caught between knots"""
        cfg = BubbleConfig([[-5, 0.0, 0], [5, 3.0, 0]], [1.0, 1.0], [1.0, 1.0])
        path = AffinePath.from_velocities(cfg, [[10, 0, 0], [-10, 0, 0]], [0, 0], 1.0)
        self.assertAlmostEqual(path.min_gap(), 1.0, places=8)

    def test_shrinking_to_zero(self):
        """Test paths with nonpositive radii are rejected"""
        cfg = BubbleConfig([[0, 0, 0]], [1.0], [1.0])
        with self.assertRaises(InvalidConfigError):
            AffinePath.from_velocities(cfg, [[0, 0, 0]], [-2.0], 1.0)


class TestAleField(unittest.TestCase):

    def setUp(self):
        self.field = moving_triple()

    def test_default_delta(self):
        """Test delta is a quarter of the smallest gap along the path"""
        self.assertAlmostEqual(self.field.delta, self.field.path.min_gap() / 4, places=12)
        self.assertLess(self.field.path.min_gap(), 2.72)

    def test_delta_too_large(self):
        """Test the 4·delta separation condition is enforced"""
        with self.assertRaises(InvalidConfigError):
            AleField(self.field.path, delta=1.0)

    def test_chi_support(self):
        """Test χ = 1 on the sphere, 0 beyond r + 3δ/4 and monotone between"""
        delta = self.field.delta
        r = 1.0
        self.assertEqual(chi(self.field, 0, 0.0, r), 1.0)
        self.assertEqual(chi(self.field, 0, 0.0, r + delta), 0.0)
        s = np.linspace(r, r + delta, 400)
        values = chi(self.field, 0, 0.0, s)
        self.assertTrue(np.all(np.diff(values) <= 1e-15))

    def test_boundary_velocity(self):
        """Test v = ẋ_i + ṙ_i n on the sphere"""
        n = np.array([0.0, 0.6, 0.8])
        x = np.array([-3.0, 0, 0]) + 1.0 * n
        np.testing.assert_allclose(v_ale(self.field, 0.0, x), [0.2, 0, 0] + 0.1 * n, atol=1e-14)

    def test_vanishes_far_away(self):
        """Test v = 0 beyond m0 and between the bubbles"""
        self.assertEqual(np.abs(v_ale(self.field, 0.2, [self.field.m0, 0, 0])).max(), 0.0)
        self.assertEqual(np.abs(v_ale(self.field, 0.2, [0.0, 0.0, 0.0])).max(), 0.0)

    def test_velocity_jacobian(self):
        """Test the analytic Jacobian against central differences"""
        rng = np.random.default_rng(4)
        points = np.array([[-3, 0, 0]]) + rng.normal(size=(6, 3)) * 0.7
        points = points[np.linalg.norm(points - [-3, 0, 0], axis=1) > 1.0]
        exact = self.field.velocity_jacobian(0.1, points)
        h = 1e-6
        for j in range(3):
            shift = np.eye(3)[j] * h
            diff = (self.field.velocity(0.1, points + shift)
                    - self.field.velocity(0.1, points - shift)) / (2 * h)
            np.testing.assert_allclose(exact[:, :, j], diff, atol=1e-7)


class TestFlowMap(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.field = moving_triple()
        cls.flow_map = FlowMap(cls.field, 0.5)

    def test_identity_far_away(self):
        """Test Θ(t, x) = x exactly outside the m0 ball"""
        x = np.array([[self.field.m0, 0, 0], [0, -self.field.m0 - 1, 2.0]])
        np.testing.assert_array_equal(flow(self.field, 0.5, x), x)
        np.testing.assert_array_equal(flow(self.field, 0.5, x[1]), x[1])
        np.testing.assert_array_equal(self.flow_map.jacobian(x), np.broadcast_to(np.eye(3), (2, 3, 3)))

    def test_closed_form_near_bubbles(self):
        """Test the scaling map and its determinant near each bubble"""
        worst_map, worst_det = closed_form_residual(self.flow_map)
        self.assertLessEqual(worst_map, 1e-9)
        self.assertLessEqual(worst_det, 1e-9)

    def test_inverse(self):
        """Test Θ⁻¹(Θ(x)) = x in the fluid"""
        points = sample_fluid_points(self.field, 0.0, 10, seed=3)
        image = self.flow_map.map(points)
        np.testing.assert_allclose(self.flow_map.inverse(image), points, atol=1e-11)

    def test_positive_determinant(self):
        """Test det DΘ > 0 at sampled points"""
        points = sample_fluid_points(self.field, 0.0, 40, seed=5)
        self.assertGreater(self.flow_map.determinant(points).min(), 0.0)

    def test_horizon(self):
        """Test maps beyond the path end are refused"""
        with self.assertRaises(DomainError):
            FlowMap(self.field, 0.6)

    def test_piola_identity(self):
        """Test the rows of Cof(DΘ) are divergence free"""
        points = sample_fluid_points(self.field, 0.0, 8, seed=7)
        self.assertLessEqual(piola_residual(self.flow_map, points), 1e-7)

    def test_normal_transport(self):
        """Test Cof(DΘ) maps reference normals to current normals"""
        self.assertLessEqual(normal_transport_residual(self.flow_map), 1e-8)


class TestTransportOperators(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.field = moving_triple()
        cls.flow_map = FlowMap(cls.field, 0.5)

    def test_identity_at_start(self):
        """Test S(0) is the identity"""
        start = FlowMap(self.field, 0.0)
        points = sample_fluid_points(self.field, 0.0, 5, seed=1)
        np.testing.assert_allclose(pushforward(start, uniform)(points), uniform(points), atol=1e-15)

    def test_round_trip(self):
        """Test pullback undoes pushforward"""
        points = sample_fluid_points(self.field, 0.0, 6, seed=2)

        def swirl(p):
            return np.cross([0.0, 0.0, 1.0], p) + 0.3

        back = pullback(self.flow_map, pushforward(self.flow_map, swirl))(points)
        np.testing.assert_allclose(back, swirl(points), atol=1e-8)

    def test_solenoidal_field(self):
        """Test the dipole plus rotation field is divergence free off its center"""
        field = solenoidal_field([-3.0, 0, 0])
        points = sample_fluid_points(self.field, 0.0, 6, seed=10)
        values = field(points)
        self.assertGreater(float(np.ptp(values)), 0.1)
        divergence = fd_divergence(field, points, step=1e-3, order=4)
        self.assertLessEqual(float(np.abs(divergence).max()), 1e-8)

    def test_divergence_preserved(self):
        """Test S(t) keeps constant and dipole fields solenoidal"""
        points = sample_fluid_points(self.field, 0.5, 6, seed=11)
        self.assertLessEqual(divergence_residual(self.flow_map, uniform, points), 1e-6)
        dipole = solenoidal_field([-3.0, 0, 0])
        self.assertLessEqual(divergence_residual(self.flow_map, dipole, points), 1e-6)

    def test_tangency_preserved(self):
        """Test a rotation about a bubble stays tangent to it"""
        center = np.array([3.0, 0, 0])
        rotation = lambda p: np.cross([0.2, 1.0, -0.5], np.asarray(p) - center)
        self.assertLessEqual(tangency_residual(self.flow_map, rotation, 1), 1e-7)

    def test_transport_identity(self):
        """Test ∂_t e + div(v ⊗ e) - (∇v)ᵀe = 0 for transported fields"""
        points = sample_fluid_points(self.field, 0.25, 6, seed=13)
        self.assertLessEqual(transport_residual(self.field, uniform, 0.25, points), 1e-5)
        dipole = solenoidal_field([-3.0, 0, 0])
        self.assertLessEqual(transport_residual(self.field, dipole, 0.25, points), 1e-5)


class TestReports(unittest.TestCase):

    def test_verify_ale(self):
        """Test the bundled report on the moving triple"""
        report = verify_ale(moving_triple(), 0.3, samples=4)
        self.assertLessEqual(report.piola, 1e-7)
        self.assertLessEqual(report.divergence, 1e-6)
        self.assertLessEqual(report.transport, 1e-5)
        self.assertLessEqual(report.closed_form, 1e-9)
        self.assertGreater(report.min_determinant, 0.0)
        self.assertIn('m0', report.as_dict())

    def test_interpolating_diffeomorphism(self):
        """Test the homotopy flow carries one configuration onto the other"""
        a = BubbleConfig([[-2, 0, 0], [2, 0, 0]], [1.0, 0.5], [1.0, 1.0])
        b = BubbleConfig([[-2.5, 0.5, 0], [2, 0, 1]], [0.8, 0.6], [1.0, 1.0])
        flow_map = interpolating_diffeomorphism(a, b)
        for i in range(2):
            on_a = np.array([[1.0, 0, 0], [0, 0, -1.0]]) * a.radii[i] + a.centers[i]
            on_b = flow_map.map(on_a)
            np.testing.assert_allclose(np.linalg.norm(on_b - b.centers[i], axis=1), b.radii[i],
                                       atol=1e-9)

    def test_interpolation_rejects_overlap(self):
        """Test an overlapping endpoint is refused"""
        a = BubbleConfig([[-2, 0, 0], [2, 0, 0]], [1.0, 1.0], [1.0, 1.0])
        b = BubbleConfig([[-0.5, 0, 0], [0.5, 0, 0]], [1.0, 1.0], [1.0, 1.0])
        with self.assertRaises(InvalidConfigError):
            interpolating_diffeomorphism(a, b)


if __name__ == '__main__':
    unittest.main(verbosity=2)
