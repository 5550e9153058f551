import numpy as np
from django.test import SimpleTestCase, tag
from numpy.testing import assert_allclose, assert_array_equal

from lowrank.services import ShapeMismatchError, nuclear_norm, operator_norm, svt
from quantization.services import QuantConfig, make_generator
from synthdata.services import GenSpec, gen_lowrank_theta, gen_lrmr_dataset

from .services import (
    Dataset,
    QuantizedDataset,
    SurrogateCovs,
    empirical_loss,
    lambda_schedule,
    loss_gradient,
    prediction_error,
    quantize_dataset,
    surrogate_covariances,
    unquantized,
)
from .solvers import (
    SingularCovarianceError,
    SolverConfig,
    StepPolicy,
    constrained_lasso,
    ols_baseline,
    regularized_lasso,
)


def make_covs(sxx, sxy):
    return SurrogateCovs(
        Sxx=np.asarray(sxx, dtype=float), Sxy=np.asarray(sxy, dtype=float), n=1, config=QuantConfig()
    )


def random_convex_covs(rng, d1, d2):
    a = rng.standard_normal((d1, 2 * d1))
    sxx = a @ a.T / (2 * d1) + 0.5 * np.eye(d1)
    return make_covs(sxx, rng.standard_normal((d1, d2)))


ORACLE = SolverConfig(max_iters=100_000, rel_tol=1e-12)


class QuantizeDatasetTests(SimpleTestCase):
    def setUp(self):
        self.data = gen_lrmr_dataset(np.ones((3, 2)), 50, 0.3, make_generator(0))

    def test_zero_deltas_are_identity(self):
        qdata = quantize_dataset(self.data, QuantConfig(0.0, 0.0), make_generator(1))
        assert_array_equal(qdata.Xdot, self.data.X)
        assert_array_equal(qdata.Ydot, self.data.Y)

    def test_responses_on_grid(self):
        qdata = quantize_dataset(self.data, QuantConfig(0.0, 1.0), make_generator(1))
        assert_array_equal(qdata.Xdot, self.data.X)
        offsets = qdata.Ydot - 0.5
        assert_allclose(offsets, np.round(offsets), atol=1e-12)

    def test_non_finite_data_rejected(self):
        with self.assertRaises(ValueError):
            Dataset(X=np.array([[1.0, np.nan]]), Y=np.array([[1.0, 2.0]]))

    def test_sample_counts_must_agree(self):
        with self.assertRaises(ShapeMismatchError):
            Dataset(X=np.ones((2, 3)), Y=np.ones((2, 4)))

    @tag("slow")
    def test_quantized_responses_are_unbiased(self):
        data = gen_lrmr_dataset(np.ones((2, 2)), 5, 0.3, make_generator(2))
        rng = make_generator(3)
        trials = 2000
        draws = np.stack(
            [quantize_dataset(data, QuantConfig(0.0, 1.0), rng).Ydot for _ in range(trials)]
        )
        bound = 4.0 * draws.std(axis=0) / np.sqrt(trials)
        self.assertTrue(np.all(np.abs(draws.mean(axis=0) - data.Y) <= bound))


class SurrogateCovarianceTests(SimpleTestCase):
    def test_single_sample(self):
        data = Dataset(X=np.array([[1.0], [0.0]]), Y=np.array([[0.0], [1.0]]))
        covs = surrogate_covariances(unquantized(data))
        assert_array_equal(covs.Sxx, [[1.0, 0.0], [0.0, 0.0]])
        assert_array_equal(covs.Sxy, [[0.0, 1.0], [0.0, 0.0]])

    def test_correction_term(self):
        qdata = QuantizedDataset(Xdot=np.zeros((3, 4)), Ydot=np.zeros((2, 4)), config=QuantConfig(2.0, 0.0))
        assert_array_equal(surrogate_covariances(qdata).Sxx, -np.eye(3))

    def test_no_correction_without_dither(self):
        config = QuantConfig(2.0, 0.0, dither_enabled=False)
        qdata = QuantizedDataset(Xdot=np.zeros((3, 4)), Ydot=np.zeros((2, 4)), config=config)
        assert_array_equal(surrogate_covariances(qdata).Sxx, np.zeros((3, 3)))

    def test_symmetric(self):
        data = gen_lrmr_dataset(np.ones((6, 2)), 40, 0.1, make_generator(4))
        qdata = quantize_dataset(data, QuantConfig(0.7, 0.3), make_generator(5))
        sxx = surrogate_covariances(qdata).Sxx
        self.assertLessEqual(np.abs(sxx - sxx.T).max(), 1e-12)

    def test_covariance_concentrates(self):
        data = gen_lrmr_dataset(np.ones((5, 1)), 100_000, 0.1, make_generator(6))
        covs = surrogate_covariances(quantize_dataset(data, QuantConfig(0.5, 0.0), make_generator(7)))
        self.assertLessEqual(operator_norm(covs.Sxx - np.eye(5)), 0.06)

    @tag("slow")
    def test_surrogates_are_unbiased(self):
        theta0 = gen_lowrank_theta(GenSpec(d1=5, d2=3, r=2), make_generator(8))
        rng = make_generator(9)
        trials = 2000
        sxx, sxy = [], []
        for _ in range(trials):
            data = gen_lrmr_dataset(theta0, 100, np.sqrt(0.1), rng)
            covs = surrogate_covariances(quantize_dataset(data, QuantConfig(0.5, 0.5), rng))
            sxx.append(covs.Sxx)
            sxy.append(covs.Sxy)
        for draws, truth in ((np.stack(sxx), np.eye(5)), (np.stack(sxy), theta0)):
            # 4 sigma keeps the check meaningful across all entries at once
            bound = 4.0 * draws.std(axis=0) / np.sqrt(trials)
            self.assertTrue(np.all(np.abs(draws.mean(axis=0) - truth) <= bound))


class LossTests(SimpleTestCase):
    def setUp(self):
        self.covs = random_convex_covs(make_generator(10), 4, 3)

    def test_zero_theta(self):
        self.assertEqual(empirical_loss(np.zeros((4, 3)), self.covs), 0.0)
        assert_array_equal(loss_gradient(np.zeros((4, 3)), self.covs), -2.0 * self.covs.Sxy)

    def test_identity_covariance(self):
        covs = make_covs(np.eye(4), np.zeros((4, 3)))
        theta = make_generator(11).standard_normal((4, 3))
        self.assertAlmostEqual(empirical_loss(theta, covs), np.sum(theta**2))

    def test_gradient_matches_finite_differences(self):
        rng = make_generator(12)
        theta = rng.standard_normal((4, 3))
        direction = rng.standard_normal((4, 3))
        h = 1e-6
        numeric = (
            empirical_loss(theta + h * direction, self.covs) - empirical_loss(theta - h * direction, self.covs)
        ) / (2 * h)
        analytic = np.sum(loss_gradient(theta, self.covs) * direction)
        self.assertAlmostEqual(numeric, analytic, delta=1e-6)

    def test_dimension_mismatch(self):
        with self.assertRaises(ShapeMismatchError):
            empirical_loss(np.zeros((3, 4)), self.covs)
        with self.assertRaises(ShapeMismatchError):
            loss_gradient(np.zeros((4, 4)), self.covs)


class ConstrainedLassoTests(SimpleTestCase):
    def test_zero_cross_covariance(self):
        covs = random_convex_covs(make_generator(13), 4, 3)
        covs = make_covs(covs.Sxx, np.zeros((4, 3)))
        report = constrained_lasso(covs, 1.0)
        self.assertTrue(report.converged)
        assert_array_equal(report.theta_hat, np.zeros((4, 3)))

    def test_inactive_constraint_gives_least_squares(self):
        covs = random_convex_covs(make_generator(14), 4, 3)
        solution = np.linalg.solve(covs.Sxx, covs.Sxy)
        report = constrained_lasso(covs, nuclear_norm(solution) + 1.0)
        self.assertTrue(report.converged)
        assert_allclose(report.theta_hat, solution, atol=1e-4)

    def test_output_is_feasible_even_when_capped(self):
        covs = random_convex_covs(make_generator(15), 6, 5)
        report = constrained_lasso(covs, 0.3, SolverConfig(max_iters=3))
        self.assertFalse(report.converged)
        self.assertEqual(report.iterations, 3)
        self.assertLessEqual(nuclear_norm(report.theta_hat), 0.3 + 1e-6)

    def test_matches_long_run_oracle(self):
        covs = random_convex_covs(make_generator(16), 5, 4)
        oracle = constrained_lasso(covs, 1.0, ORACLE)
        report = constrained_lasso(covs, 1.0)
        self.assertLessEqual(report.final_objective, oracle.final_objective + 1e-6)

    def test_rejects_nonpositive_radius(self):
        covs = random_convex_covs(make_generator(17), 2, 2)
        with self.assertRaises(ValueError):
            constrained_lasso(covs, 0.0)

    def test_indefinite_covariance_is_reported(self):
        covs = make_covs(np.diag([1.0, -0.5]), np.ones((2, 2)))
        with self.assertLogs("lrmr.solvers", "WARNING"):
            report = constrained_lasso(covs, 1.0, SolverConfig(max_iters=500))
        self.assertAlmostEqual(report.lambda_min_sxx, -0.5)
        self.assertLessEqual(nuclear_norm(report.theta_hat), 1.0 + 1e-6)


class RegularizedLassoTests(SimpleTestCase):
    def test_zero_above_threshold(self):
        covs = random_convex_covs(make_generator(18), 5, 4)
        report = regularized_lasso(covs, 2.0 * operator_norm(covs.Sxy))
        self.assertLessEqual(np.linalg.norm(report.theta_hat), 1e-10)

    def test_zero_above_threshold_on_many_instances(self):
        rng = make_generator(118)
        for _ in range(100):
            d1, d2 = (int(k) for k in rng.integers(2, 8, size=2))
            covs = random_convex_covs(rng, d1, d2)
            report = regularized_lasso(covs, 2.0 * operator_norm(covs.Sxy))
            self.assertLessEqual(np.linalg.norm(report.theta_hat), 1e-10)

    def test_identity_covariance_closed_form(self):
        sxy = make_generator(19).standard_normal((5, 4))
        report = regularized_lasso(make_covs(np.eye(5), sxy), 0.8)
        assert_allclose(report.theta_hat, svt(sxy, 0.4), atol=1e-6)

    def test_matches_long_run_oracle(self):
        covs = random_convex_covs(make_generator(20), 8, 6)
        oracle = regularized_lasso(covs, 0.5, ORACLE)
        report = regularized_lasso(covs, 0.5)
        self.assertTrue(report.converged)
        self.assertAlmostEqual(report.final_objective, oracle.final_objective, delta=1e-6)

    def test_stationarity_at_exit(self):
        covs = random_convex_covs(make_generator(21), 6, 4)
        cfg = SolverConfig(rel_tol=1e-7)
        report = regularized_lasso(covs, 0.3, cfg)
        theta, eta = report.theta_hat, report.step_size
        residual = np.linalg.norm(theta - svt(theta - eta * loss_gradient(theta, covs), eta * 0.3))
        self.assertLessEqual(residual, cfg.rel_tol * max(1.0, np.linalg.norm(theta)))

    def test_objective_nonincreasing_without_momentum(self):
        covs = random_convex_covs(make_generator(22), 8, 6)
        cfg = SolverConfig(acceleration=False, record_objective=True, max_iters=300)
        trace = np.array(regularized_lasso(covs, 0.2, cfg).objective_trace)
        self.assertGreater(trace.size, 1)
        self.assertTrue(np.all(np.diff(trace) <= 1e-9 * np.maximum(1.0, np.abs(trace[:-1]))))

    def test_fixed_step_policy(self):
        covs = random_convex_covs(make_generator(23), 4, 3)
        _, lambda_max = np.linalg.eigvalsh(covs.Sxx)[[0, -1]]
        fixed = SolverConfig(step_policy=StepPolicy.fixed(1.0 / (2.0 * lambda_max)))
        report = regularized_lasso(covs, 0.3, fixed)
        reference = regularized_lasso(covs, 0.3)
        self.assertTrue(report.converged)
        assert_allclose(report.theta_hat, reference.theta_hat, atol=1e-5)

    def test_agrees_with_constrained_form(self):
        covs = random_convex_covs(make_generator(24), 6, 5)
        tight = SolverConfig(rel_tol=1e-10, max_iters=50_000)
        regularized = regularized_lasso(covs, 0.4, tight)
        constrained = constrained_lasso(covs, nuclear_norm(regularized.theta_hat), tight)
        assert_allclose(constrained.theta_hat, regularized.theta_hat, atol=1e-5)

    def test_constrained_form_attains_regularized_objective(self):
        rng = make_generator(124)
        tight = SolverConfig(rel_tol=1e-10, max_iters=50_000)
        for _ in range(20):
            covs = random_convex_covs(rng, 6, 5)
            lam = 0.5 * operator_norm(covs.Sxy)
            regularized = regularized_lasso(covs, lam, tight)
            constrained = constrained_lasso(covs, nuclear_norm(regularized.theta_hat), tight)
            objectives = [
                empirical_loss(report.theta_hat, covs) + lam * nuclear_norm(report.theta_hat)
                for report in (regularized, constrained)
            ]
            self.assertAlmostEqual(objectives[1], objectives[0], delta=1e-5)

    def test_small_response_step_is_continuous(self):
        theta0 = gen_lowrank_theta(GenSpec(d1=6, d2=5, r=2), make_generator(25))
        data = gen_lrmr_dataset(theta0, 200, 0.3, make_generator(26))
        estimates = []
        for delta2 in (0.0, 1e-6):
            qdata = quantize_dataset(data, QuantConfig(0.0, delta2), make_generator(27))
            estimates.append(regularized_lasso(surrogate_covariances(qdata), 0.1).theta_hat)
        self.assertLessEqual(np.linalg.norm(estimates[0] - estimates[1]), 1e-4)

    def test_rejects_nonpositive_lambda(self):
        covs = random_convex_covs(make_generator(28), 2, 2)
        with self.assertRaises(ValueError):
            regularized_lasso(covs, 0.0)


class OlsBaselineTests(SimpleTestCase):
    def test_identity_covariance(self):
        sxy = make_generator(29).standard_normal((3, 2))
        assert_allclose(ols_baseline(make_covs(np.eye(3), sxy)).theta_hat, sxy)

    def test_noiseless_recovery(self):
        theta0 = gen_lowrank_theta(GenSpec(d1=5, d2=3, r=2), make_generator(30))
        data = gen_lrmr_dataset(theta0, 40, 0.0, make_generator(31))
        report = ols_baseline(surrogate_covariances(unquantized(data)))
        self.assertEqual(report.iterations, 0)
        assert_allclose(report.theta_hat, theta0, atol=1e-8)

    def test_singular_covariance(self):
        with self.assertRaisesMessage(SingularCovarianceError, "OLS requires nonsingular surrogate covariance"):
            ols_baseline(make_covs(np.diag([1.0, 0.0]), np.ones((2, 2))))


class LambdaScheduleTests(SimpleTestCase):
    def test_arithmetic(self):
        self.assertAlmostEqual(lambda_schedule(50, 60, 1100, np.sqrt(10)), 1.0)

    def test_square_root_law(self):
        self.assertAlmostEqual(lambda_schedule(50, 60, 4000, 2.0), lambda_schedule(50, 60, 1000, 2.0) / 2)

    def test_rejects_bad_arguments(self):
        with self.assertRaises(ValueError):
            lambda_schedule(50, 60, 0, 1.0)


class PredictionErrorTests(SimpleTestCase):
    def setUp(self):
        self.theta0 = gen_lowrank_theta(GenSpec(d1=4, d2=3, r=2), make_generator(32))
        self.data = gen_lrmr_dataset(self.theta0, 30, 0.0, make_generator(33))

    def test_exact_on_noiseless_data(self):
        self.assertAlmostEqual(prediction_error(self.theta0, self.data), 0.0, delta=1e-12)

    def test_zero_theta(self):
        self.assertEqual(prediction_error(np.zeros((4, 3)), self.data), 1.0)

    def test_matches_per_column_computation(self):
        theta = make_generator(34).standard_normal((4, 3))
        num = sum(np.sum((self.data.Y[:, k] - theta.T @ self.data.X[:, k]) ** 2) for k in range(self.data.n))
        den = sum(np.sum(self.data.Y[:, k] ** 2) for k in range(self.data.n))
        self.assertAlmostEqual(prediction_error(theta, self.data), np.sqrt(num / den))

    def test_zero_responses(self):
        data = Dataset(X=np.ones((4, 2)), Y=np.zeros((3, 2)))
        with self.assertRaises(ValueError):
            prediction_error(np.zeros((4, 3)), data)
