import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from lowrank.services import ShapeMismatchError, svt
from lrmr.services import SurrogateCovs
from lrmr.solvers import regularized_lasso
from quantization.services import QuantConfig, make_generator
from synthdata.services import gen_l2rm_dataset, gen_lowrank_blocks

from .services import (
    BlockCoefficients,
    MatrixResponseDataset,
    as_vectorized,
    block_nuclear_norm,
    blockwise_svt,
    inverse_rearrange,
    l2rm_lambda_schedule,
    l2rm_regularized,
    l2rm_surrogates,
    quantize_matrix_responses,
    rearrange,
    vectorize_responses,
    zero_threshold,
)


class RearrangeTests(SimpleTestCase):
    def test_column_major_layout(self):
        blocks = BlockCoefficients.from_list([[[1, 2], [3, 4]], [[5, 6], [7, 8]]])
        assert_array_equal(rearrange(blocks), [[1, 3, 2, 4], [5, 7, 6, 8]])

    def test_single_block_is_vec(self):
        block = np.arange(6.0).reshape(2, 3)
        assert_array_equal(rearrange(BlockCoefficients.from_list([block])), [block.flatten(order="F")])

    def test_round_trip(self):
        blocks = gen_lowrank_blocks(3, 4, 5, 2, make_generator(1))
        assert_array_equal(inverse_rearrange(rearrange(blocks), 4, 5).blocks, blocks.blocks)

    def test_isometry(self):
        blocks = gen_lowrank_blocks(3, 4, 5, 2, make_generator(2))
        self.assertAlmostEqual(np.linalg.norm(rearrange(blocks)), np.linalg.norm(blocks.concatenated()), places=12)

    def test_concatenated_layout(self):
        blocks = BlockCoefficients.from_list([np.eye(2), 2 * np.eye(2)])
        assert_array_equal(blocks.concatenated(), [[1, 0, 2, 0], [0, 1, 0, 2]])

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeMismatchError):
            inverse_rearrange(np.zeros((2, 5)), 2, 3)
        with self.assertRaises(ShapeMismatchError):
            BlockCoefficients.from_list([np.eye(2), np.eye(3)])

    def test_vectorized_responses_match_model(self):
        blocks = gen_lowrank_blocks(2, 3, 4, 1, make_generator(3))
        data = gen_l2rm_dataset(blocks, 10, 0.0, make_generator(4))
        assert_allclose(vectorize_responses(data.Y), rearrange(blocks).T @ data.X, atol=1e-12)


class QuantizeMatrixResponsesTests(SimpleTestCase):
    def setUp(self):
        blocks = gen_lowrank_blocks(2, 10, 10, 1, make_generator(5))
        self.data = gen_l2rm_dataset(blocks, 10_000, 0.1, make_generator(6))

    def test_zero_delta_is_identity(self):
        qdata = quantize_matrix_responses(self.data, QuantConfig(0.0, 0.0), make_generator(7))
        assert_array_equal(qdata.Xdot, self.data.X)
        assert_array_equal(qdata.Ydot, self.data.Y)

    def test_responses_on_grid(self):
        qdata = quantize_matrix_responses(self.data, QuantConfig(0.5, 1.0), make_generator(8))
        self.assertEqual(qdata.Ydot.shape, self.data.Y.shape)
        offsets = qdata.Ydot - 0.5
        assert_allclose(offsets, np.round(offsets), atol=1e-12)

    def test_noise_mean(self):
        record = quantize_matrix_responses(self.data, QuantConfig(0.0, 1.0), make_generator(9)).y_record
        self.assertEqual(record.size, 1_000_000)
        # noise variance is 1/12 + 1/12 at delta = 1
        self.assertLess(abs(record.noise.mean()), 4.0 * np.sqrt(1.0 / 6.0) / 1000.0)

    def test_mismatched_responses(self):
        with self.assertRaises(ShapeMismatchError):
            MatrixResponseDataset(X=np.ones((2, 3)), Y=np.ones((4, 2, 2)))


class BlockwiseProxTests(SimpleTestCase):
    def test_matches_per_block_svt(self):
        rng = make_generator(10)
        for _ in range(20):
            blocks = rng.standard_normal((3, 4, 5))
            matrix = rearrange(BlockCoefficients(blocks))
            expected = rearrange(BlockCoefficients(np.stack([svt(b, 0.7) for b in blocks])))
            assert_allclose(blockwise_svt(matrix, 0.7, 4, 5), expected, atol=1e-12)

    def test_block_nuclear_norm(self):
        blocks = BlockCoefficients.from_list([np.diag([3.0, 1.0]), np.diag([-2.0, 0.0])])
        self.assertAlmostEqual(block_nuclear_norm(rearrange(blocks), 2, 2), 6.0)


class L2rmRegularizedTests(SimpleTestCase):
    def quantized(self, s, p, q, n, seed, config=QuantConfig()):
        blocks = gen_lowrank_blocks(s, p, q, 1, make_generator(seed))
        data = gen_l2rm_dataset(blocks, n, 0.0, make_generator(seed + 1))
        return blocks, quantize_matrix_responses(data, config, make_generator(seed + 2))

    def test_all_blocks_zero_above_threshold(self):
        _, qdata = self.quantized(3, 4, 5, 50, 11, QuantConfig(0.3, 0.3))
        lam = zero_threshold(l2rm_surrogates(qdata), 4, 5)
        estimate, _ = l2rm_regularized(qdata, lam)
        self.assertLessEqual(np.abs(estimate.blocks).max(), 1e-10)

    def test_single_block_reduces_to_matrix_lasso(self):
        _, qdata = self.quantized(1, 4, 3, 40, 14)
        covs = l2rm_surrogates(qdata)
        estimate, _ = l2rm_regularized(qdata, 0.2)
        reduced = SurrogateCovs(
            Sxx=covs.Sxx[0, 0] * np.eye(4),
            Sxy=inverse_rearrange(covs.Sxy, 4, 3).blocks[0],
            n=covs.n,
            config=covs.config,
        )
        assert_allclose(estimate.blocks[0], regularized_lasso(reduced, 0.2).theta_hat, atol=1e-8)

    def test_noiseless_recovery(self):
        blocks, qdata = self.quantized(2, 3, 3, 200, 17)
        estimate, report = l2rm_regularized(qdata, 1e-4)
        self.assertTrue(report.converged)
        assert_allclose(estimate.blocks, blocks.blocks, atol=1e-2)

    def test_surrogates_match_vectorized_problem(self):
        _, qdata = self.quantized(2, 3, 2, 30, 20)
        covs = l2rm_surrogates(qdata)
        vectorized = as_vectorized(MatrixResponseDataset(X=qdata.Xdot, Y=qdata.Ydot))
        assert_allclose(covs.Sxy, vectorized.X @ vectorized.Y.T / 30)
        self.assertEqual(covs.Sxy.shape, (2, 6))

    def test_rejects_nonpositive_lambda(self):
        _, qdata = self.quantized(2, 2, 2, 10, 23)
        with self.assertRaises(ValueError):
            l2rm_regularized(qdata, -1.0)


class L2rmLambdaScheduleTests(SimpleTestCase):
    def test_arithmetic(self):
        self.assertAlmostEqual(l2rm_lambda_schedule(60, 40, 100, 1.0), 1.0)

    def test_square_root_law(self):
        self.assertAlmostEqual(l2rm_lambda_schedule(60, 40, 400, 1.0), 0.5)
