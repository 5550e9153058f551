import numpy as np
from django.test import SimpleTestCase, tag
from numpy.testing import assert_allclose
from scipy import optimize
from scipy.stats import ortho_group

from .services import (
    ShapeMismatchError,
    frobenius_norm,
    lambda_extremes,
    nuclear_norm,
    operator_norm,
    project_l1_simplex,
    project_nuclear_ball,
    svd,
    svt,
)


def svt_objective(x, m, tau):
    return 0.5 * np.linalg.norm(x - m) ** 2 + tau * nuclear_norm(x)


def bisection_projection(m, radius):
    """Projection through the threshold that puts svt(m, t) on the ball boundary."""

    s = np.linalg.svd(m, compute_uv=False)
    theta = optimize.brentq(lambda t: np.maximum(s - t, 0).sum() - radius, 0.0, s[0], xtol=1e-14)
    return svt(m, theta)


def eigen_svt(m, tau):
    """Soft-threshold the singular values through the eigendecomposition of m^T m."""

    evals, v = np.linalg.eigh(m.T @ m)
    s = np.sqrt(np.maximum(evals, 0.0))
    return m @ v @ np.diag(np.maximum(s - tau, 0.0) / s) @ v.T


class SvdTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(1)

    def test_identity(self):
        assert_allclose(svd(np.eye(3)).singular_values, [1.0, 1.0, 1.0])

    def test_signed_diagonal(self):
        assert_allclose(svd(np.diag([3.0, -4.0])).singular_values, [4.0, 3.0])

    def test_reconstruction(self):
        m = self.rng.standard_normal((20, 15))
        factors = svd(m)
        self.assertLessEqual(
            np.linalg.norm(factors.reconstruct() - m), 1e-8 * np.linalg.norm(m)
        )

    def test_rejects_non_finite(self):
        with self.assertRaises(ValueError):
            svd(np.array([[1.0, np.nan]]))

    def test_rejects_vectors(self):
        with self.assertRaises(ShapeMismatchError):
            svd(np.ones(3))

    @tag("slow")
    def test_factor_invariants_on_random_shapes(self):
        for _ in range(1000):
            rows, cols = self.rng.integers(1, 101, size=2)
            m = self.rng.standard_normal((rows, cols))
            factors = svd(m)
            k = factors.rank_bound
            s = factors.singular_values
            self.assertLessEqual(np.linalg.norm(factors.reconstruct() - m), 1e-8 * np.linalg.norm(m))
            self.assertLessEqual(np.linalg.norm(factors.U.T @ factors.U - np.eye(k)), 1e-8 * k)
            self.assertLessEqual(np.linalg.norm(factors.V.T @ factors.V - np.eye(k)), 1e-8 * k)
            self.assertTrue(np.all(s >= 0))
            self.assertTrue(np.all(np.diff(s) <= 0))


class NormTests(SimpleTestCase):
    def test_identity_norms(self):
        self.assertAlmostEqual(nuclear_norm(np.eye(3)), 3.0)
        self.assertAlmostEqual(operator_norm(np.eye(3)), 1.0)
        self.assertAlmostEqual(frobenius_norm(np.eye(3)), np.sqrt(3.0))

    def test_rank_one_unit_factors(self):
        rng = np.random.default_rng(2)
        u = rng.standard_normal(5)
        v = rng.standard_normal(4)
        m = np.outer(u / np.linalg.norm(u), v / np.linalg.norm(v))
        for norm in (nuclear_norm, operator_norm, frobenius_norm):
            self.assertAlmostEqual(norm(m), 1.0)

    def test_norm_ordering(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            m = rng.standard_normal((10, 8))
            self.assertGreaterEqual(nuclear_norm(m), frobenius_norm(m))
            self.assertGreaterEqual(frobenius_norm(m), operator_norm(m))

    def test_unitary_invariance(self):
        rng = np.random.default_rng(4)
        m = rng.standard_normal((7, 5))
        q = ortho_group.rvs(7, random_state=5)
        q_prime = ortho_group.rvs(5, random_state=6)
        self.assertAlmostEqual(nuclear_norm(q.T @ m @ q_prime), nuclear_norm(m), delta=1e-8)

    def test_lambda_extremes_symmetrises(self):
        low, high = lambda_extremes(np.array([[2.0, 1.0], [0.0, 2.0]]))
        self.assertAlmostEqual(low, 1.5)
        self.assertAlmostEqual(high, 2.5)


class SvtTests(SimpleTestCase):
    def test_zero_threshold_is_identity(self):
        m = np.random.default_rng(5).standard_normal((4, 6))
        assert_allclose(svt(m, 0.0), m)

    def test_diagonal_soft_threshold(self):
        assert_allclose(svt(np.diag([3.0, 1.0]), 2.0), np.diag([1.0, 0.0]), atol=1e-12)

    def test_negative_threshold_rejected(self):
        with self.assertRaises(ValueError):
            svt(np.eye(2), -1.0)

    def test_first_order_optimality_probe(self):
        rng = np.random.default_rng(6)
        m = rng.standard_normal((4, 4))
        x = svt(m, 0.7)
        best = svt_objective(x, m, 0.7)
        for _ in range(100):
            g = rng.standard_normal((4, 4))
            g /= np.linalg.norm(g)
            self.assertLessEqual(best, svt_objective(x + 1e-3 * g, m, 0.7) + 1e-12)

    def test_matches_eigendecomposition_oracle(self):
        rng = np.random.default_rng(10)
        for _ in range(100):
            m = rng.standard_normal((7, 5))
            tau = float(rng.uniform(0.0, np.linalg.norm(m, 2)))
            assert_allclose(svt(m, tau), eigen_svt(m, tau), atol=1e-6)

    def test_nonexpansive(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            a = rng.standard_normal((6, 5))
            b = rng.standard_normal((6, 5))
            self.assertLessEqual(
                np.linalg.norm(svt(a, 0.4) - svt(b, 0.4)), np.linalg.norm(a - b) + 1e-12
            )


class ProjectionTests(SimpleTestCase):
    def test_inside_ball_is_fixed(self):
        m = np.diag([0.3, 0.2])
        self.assertIs(type(project_nuclear_ball(m, 1.0)), np.ndarray)
        np.testing.assert_array_equal(project_nuclear_ball(m, 1.0), m)

    def test_symmetric_diagonal(self):
        assert_allclose(project_nuclear_ball(np.diag([2.0, 2.0]), 2.0), np.eye(2), atol=1e-12)

    def test_zero_radius(self):
        np.testing.assert_array_equal(project_nuclear_ball(np.ones((2, 3)), 0.0), np.zeros((2, 3)))

    def test_simplex_projection(self):
        assert_allclose(project_l1_simplex(np.array([2.0, 2.0]), 2.0), [1.0, 1.0])
        assert_allclose(project_l1_simplex(np.array([3.0, 0.5]), 1.0), [1.0, 0.0])

    def test_matches_bisection_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            m = rng.standard_normal((6, 5))
            assert_allclose(project_nuclear_ball(m, 1.0), bisection_projection(m, 1.0), atol=1e-6)

    def test_feasible_and_idempotent(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            m = 3.0 * rng.standard_normal((5, 7))
            radius = float(rng.uniform(0.1, 4.0))
            once = project_nuclear_ball(m, radius)
            self.assertLessEqual(nuclear_norm(once), radius + 1e-8)
            assert_allclose(project_nuclear_ball(once, radius), once, atol=1e-8)
