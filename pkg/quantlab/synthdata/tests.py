import io
import tempfile
from pathlib import Path

import numpy as np
from django.conf import settings
from django.core.management import call_command
from django.test import SimpleTestCase, override_settings
from numpy.testing import assert_allclose, assert_array_equal

from quantization.services import make_generator

from .golden import (
    GOLDEN_FIXTURES,
    golden_bernoulli,
    golden_l2rm_responses,
    golden_lowrank_theta,
    golden_lrmr_responses,
)
from .services import (
    DatasetParseError,
    GenSpec,
    gen_bernoulli_covariates,
    gen_l2rm_dataset,
    gen_lowrank_blocks,
    gen_lowrank_theta,
    gen_lrmr_dataset,
    load_csv_dataset,
    load_matrix_csv,
    make_demo_blocks_l2rm,
    make_demo_theta_lrmr,
    make_shape_blocks,
    resolve_noise_std,
    save_matrix_csv,
    signal_scaled_recipe,
    split_indices,
    train_test_split,
)


class GoldenFixtureMixin:
    """Compare a seeded generator output against its committed CSV fixture."""

    def assert_matches_fixture(self, name, matrix):
        path = Path(settings.QUANTLAB_FIXTURES_DIR) / name
        if not path.exists():
            self.fail(f"missing fixture {path}; write it with `manage.py gen --golden` and commit it")
        assert_array_equal(load_matrix_csv(path), np.atleast_2d(matrix))


class LowRankTruthTests(GoldenFixtureMixin, SimpleTestCase):
    spec = GenSpec(d1=50, d2=60, r=5, seed=2023)

    def test_unit_frobenius_norm(self):
        theta = gen_lowrank_theta(self.spec, make_generator(self.spec.seed))
        self.assertAlmostEqual(np.linalg.norm(theta), 1.0, delta=1e-12)

    def test_rank_bounded_by_r(self):
        theta = gen_lowrank_theta(self.spec, make_generator(self.spec.seed))
        singular = np.linalg.svd(theta, compute_uv=False)
        self.assertTrue(np.all(singular[5:] <= 1e-10))

    def test_rank_above_dimensions_rejected(self):
        with self.assertRaises(ValueError):
            GenSpec(d1=3, d2=4, r=5)

    def test_golden_theta(self):
        self.assert_matches_fixture("lowrank_theta_50x60_r5.csv", golden_lowrank_theta())

    def test_blocks_have_requested_rank(self):
        blocks = gen_lowrank_blocks(4, 10, 12, 2, make_generator(3))
        self.assertEqual(blocks.ranks(), (2, 2, 2, 2))


class LrmrDatasetTests(GoldenFixtureMixin, SimpleTestCase):
    def test_noiseless_is_exact(self):
        rng = make_generator(1)
        theta = gen_lowrank_theta(GenSpec(d1=6, d2=5, r=2), rng)
        data = gen_lrmr_dataset(theta, 40, 0.0, rng)
        assert_allclose(data.Y, theta.T @ data.X, atol=1e-14)

    def test_covariate_covariance(self):
        rng = make_generator(2)
        data = gen_lrmr_dataset(np.eye(5), 100_000, 0.1, rng)
        covariance = data.X @ data.X.T / data.n
        self.assertLessEqual(np.linalg.norm(covariance - np.eye(5), 2), 0.05)

    def test_golden_dataset(self):
        self.assert_matches_fixture("lrmr_dataset_y_4x10.csv", golden_lrmr_responses())

    def test_noise_level_reading(self):
        self.assertAlmostEqual(resolve_noise_std(0.1), np.sqrt(0.1))
        self.assertEqual(resolve_noise_std(0.1, as_std=True), 0.1)


class L2rmDatasetTests(GoldenFixtureMixin, SimpleTestCase):
    def test_noiseless_is_exact(self):
        rng = make_generator(3)
        blocks = gen_lowrank_blocks(3, 4, 5, 1, rng)
        data = gen_l2rm_dataset(blocks, 20, 0.0, rng)
        k = 7
        expected = sum(data.X[i, k] * blocks.blocks[i] for i in range(3))
        assert_allclose(data.Y[k], expected, atol=1e-14)

    def test_covariate_covariance(self):
        data = gen_l2rm_dataset(make_shape_blocks(8), 100_000, 0.1, make_generator(4))
        covariance = data.X @ data.X.T / data.n
        self.assertLessEqual(np.linalg.norm(covariance - np.eye(4), 2), 0.05)

    def test_golden_dataset(self):
        self.assert_matches_fixture("l2rm_dataset_vecy_9x6.csv", golden_l2rm_responses())


class DemoMatrixTests(SimpleTestCase):
    def test_lrmr_demo_entries(self):
        theta = make_demo_theta_lrmr()
        self.assertEqual(theta.shape, (50, 60))
        self.assertEqual(theta[0, 0], 0.5)
        self.assertEqual(theta[1, 0], 0.4)
        self.assertEqual(theta[1, 1], 0.4)
        self.assertEqual(theta[18, 19], 0.5)
        self.assertEqual(np.linalg.matrix_rank(theta), 10)
        outside = theta.copy()
        outside[:20, :20] = 0.0
        self.assertFalse(outside.any())

    def test_lrmr_demo_block_layout(self):
        theta = make_demo_theta_lrmr()
        expected = np.zeros((20, 20))
        for i in range(10):
            expected[2 * i:2 * i + 2, 2 * i:2 * i + 2] = [[0.5, 0.5], [0.4, 0.4]]
        assert_array_equal(theta[:20, :20], expected)

    def test_l2rm_demo_blocks(self):
        blocks = make_demo_blocks_l2rm().blocks
        c = np.kron(np.eye(5), np.ones((2, 2)))
        assert_allclose(blocks[0, :10, :10], 0.5 * c)
        assert_allclose(blocks[1, :10, :10], 0.4 * c)
        assert_allclose(blocks[2, 40:, 50:], 0.5 * c)
        assert_allclose(blocks[3, 40:, 50:], 0.4 * c)
        self.assertFalse(blocks[2, :40, :].any())
        self.assertEqual(make_demo_blocks_l2rm().ranks(), (5, 5, 5, 5))

    def test_shape_blocks_are_binary(self):
        blocks = make_shape_blocks(64).blocks
        self.assertEqual(blocks.shape, (4, 64, 64))
        self.assertTrue(np.isin(blocks, [0.0, 1.0]).all())


class BernoulliCovariateTests(GoldenFixtureMixin, SimpleTestCase):
    def test_entries_and_mean(self):
        x = gen_bernoulli_covariates(10, 100_000, make_generator(6))
        self.assertTrue(np.isin(x, [-1.0, 1.0]).all())
        # 4 sigma with sigma = 1 / sqrt(total draws)
        self.assertLess(abs(x.mean()), 4.0 / np.sqrt(x.size))

    def test_golden(self):
        self.assert_matches_fixture("bernoulli_5x8.csv", golden_bernoulli())


class SignalScaledRecipeTests(SimpleTestCase):
    def test_scales_follow_signal_magnitude(self):
        x = np.array([[1.0, -1.0], [2.0, 0.0]])
        recipe = signal_scaled_recipe(np.eye(2), x)
        self.assertAlmostEqual(recipe.signal_magnitude, 1.0)
        self.assertAlmostEqual(recipe.noise_std, 0.4)
        self.assertAlmostEqual(recipe.delta2, 0.125)


class CsvLoadingTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)

    def write(self, name, text):
        path = self.dir / name
        path.write_text(text)
        return path

    def test_round_trip(self):
        x = np.arange(12.0).reshape(3, 4) / 7.0
        y = -np.arange(12.0).reshape(3, 4)
        data = load_csv_dataset(save_matrix_csv(self.dir / "x.csv", x), save_matrix_csv(self.dir / "y.csv", y))
        assert_array_equal(data.X, x)
        assert_array_equal(data.Y, y)

    def test_header_and_transpose(self):
        path_x = self.write("x.csv", "g1,g2\n1,2\n3,4\n5,6\n")
        path_y = self.write("y.csv", "h1\n7\n8\n9\n")
        data = load_csv_dataset(path_x, path_y, transpose=True)
        self.assertEqual((data.d1, data.d2, data.n), (2, 1, 3))

    def test_ragged_row_reports_line(self):
        path = self.write("x.csv", "1,2,3\n4,5\n")
        with self.assertRaises(DatasetParseError) as ctx:
            load_matrix_csv(path)
        self.assertEqual(ctx.exception.line, 2)

    def test_non_numeric_cell_reports_line(self):
        path = self.write("x.csv", "1,2\n3,4\n5,abc\n")
        with self.assertRaises(DatasetParseError) as ctx:
            load_matrix_csv(path)
        self.assertEqual(ctx.exception.line, 3)

    def test_sample_count_mismatch(self):
        path_x = self.write("x.csv", "1,2,3\n")
        path_y = self.write("y.csv", "1,2\n")
        with self.assertRaisesMessage(DatasetParseError, "sample-count mismatch") as ctx:
            load_csv_dataset(path_x, path_y)
        self.assertIsNone(ctx.exception.line)
        self.assertFalse(str(ctx.exception).startswith(str(path_y)))


class SplitTests(SimpleTestCase):
    def test_sizes_and_partition(self):
        train, test = split_indices(115, 20, make_generator(1))
        self.assertEqual((train.size, test.size), (95, 20))
        self.assertFalse(set(train) & set(test))
        self.assertEqual(sorted(set(train) | set(test)), list(range(115)))

    def test_same_seed_same_partition(self):
        first = split_indices(115, 20, make_generator(4))
        second = split_indices(115, 20, make_generator(4))
        assert_array_equal(first[1], second[1])

    def test_dataset_split(self):
        rng = make_generator(2)
        data = gen_lrmr_dataset(np.eye(3), 30, 0.1, rng)
        train, test = train_test_split(data, 5, rng)
        self.assertEqual((train.n, test.n), (25, 5))


class GenCommandTests(SimpleTestCase):
    def test_writes_truth_and_data(self):
        with tempfile.TemporaryDirectory() as tmp:
            call_command("gen", out=tmp, d1=6, d2=5, r=2, n=30, seed=3, stdout=io.StringIO())
            data = load_csv_dataset(Path(tmp) / "X.csv", Path(tmp) / "Y.csv")
            theta = load_matrix_csv(Path(tmp) / "theta0.csv")
        self.assertEqual(theta.shape, (6, 5))
        self.assertEqual((data.d1, data.d2, data.n), (6, 5, 30))

    def test_golden_writes_every_fixture(self):
        with tempfile.TemporaryDirectory() as tmp, override_settings(QUANTLAB_FIXTURES_DIR=Path(tmp)):
            call_command("gen", golden=True, stdout=io.StringIO())
            written = sorted(path.name for path in Path(tmp).iterdir())
            theta = load_matrix_csv(Path(tmp) / "lowrank_theta_50x60_r5.csv")
        self.assertEqual(written, sorted(GOLDEN_FIXTURES))
        assert_array_equal(theta, golden_lowrank_theta())
