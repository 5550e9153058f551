import csv
import io
import tempfile
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.test import SimpleTestCase, tag
from numpy.testing import assert_allclose, assert_array_equal
from scipy import stats

from .services import (
    DitherKind,
    NonFiniteSampleError,
    QuantConfig,
    draw_triangular_dither,
    draw_uniform_dither,
    make_generator,
    noise_moment_report,
    quantize_with_dither,
    sample_inputs,
    spawn_generators,
    uniform_quantize,
)


def assert_on_grid(testcase, values, delta):
    scaled = np.asarray(values) / delta - 0.5
    testcase.assertTrue(np.all(np.abs(scaled - np.round(scaled)) < 1e-9))


class UniformQuantizeTests(SimpleTestCase):
    def test_scalar_examples(self):
        self.assertEqual(uniform_quantize(0.3, 1.0), 0.5)
        self.assertEqual(uniform_quantize(-0.2, 1.0), -0.5)
        self.assertAlmostEqual(uniform_quantize(1.26, 0.5), 1.25)
        self.assertEqual(uniform_quantize(0.7, 0), 0.7)

    def test_cell_boundary_uses_floor(self):
        self.assertEqual(uniform_quantize(1.0, 1.0), 1.5)
        self.assertEqual(uniform_quantize(-1.0, 1.0), -0.5)

    def test_array_lands_on_grid(self):
        values = make_generator(3).normal(scale=20.0, size=500)
        assert_on_grid(self, uniform_quantize(values, 0.3), 0.3)

    def test_rejects_non_finite(self):
        with self.assertRaisesMessage(NonFiniteSampleError, "non-finite sample"):
            uniform_quantize(float("nan"), 1.0)
        with self.assertRaises(NonFiniteSampleError):
            uniform_quantize(np.array([1.0, np.inf]), 1.0)


class DitherDrawTests(SimpleTestCase):
    def test_uniform_moments(self):
        samples = draw_uniform_dither(1_000_000, 1.0, make_generator(11))
        self.assertLess(abs(samples.mean()), 0.005)
        self.assertLess(abs(samples.var() - 1.0 / 12.0), 0.001)

    def test_uniform_is_reproducible(self):
        first = draw_uniform_dither(5, 2.0, make_generator(42))
        second = draw_uniform_dither(5, 2.0, make_generator(42))
        assert_array_equal(first, second)

    def test_triangular_moments_and_support(self):
        samples = draw_triangular_dither(1_000_000, 1.0, make_generator(12))
        self.assertLess(abs(samples.var() - 1.0 / 6.0), 0.002)
        self.assertLess(abs(samples.mean()), 0.005)
        self.assertTrue(np.all(np.abs(samples) <= 1.0))

    def test_positive_delta_required(self):
        with self.assertRaises(ValueError):
            draw_uniform_dither(3, 0.0, make_generator(0))
        with self.assertRaises(ValueError):
            draw_triangular_dither(3, -1.0, make_generator(0))

    def test_spawned_streams_differ(self):
        first, second = spawn_generators(5, 2)
        self.assertFalse(np.array_equal(first.random(4), second.random(4)))


class QuantizeWithDitherTests(SimpleTestCase):
    def setUp(self):
        self.rng = make_generator(2024)

    def test_zero_delta_passes_through(self):
        x = self.rng.standard_normal((4, 3))
        record = quantize_with_dither(x, 0.0, "uniform", self.rng)
        assert_array_equal(record.quantized, x)
        assert_array_equal(record.noise, np.zeros_like(x))
        assert_array_equal(record.dither, np.zeros_like(x))
        assert_array_equal(record.error, np.zeros_like(x))

    def test_record_invariants(self):
        x = self.rng.normal(scale=3.0, size=(50, 40))
        for kind in (DitherKind.UNIFORM, DitherKind.TRIANGULAR, DitherKind.NONE):
            record = quantize_with_dither(x, 0.7, kind, self.rng)
            assert_on_grid(self, record.quantized, 0.7)
            self.assertTrue(np.all(np.abs(record.error) <= 0.35 + 1e-12))
            assert_allclose(record.noise, record.dither + record.error, atol=1e-12)
            assert_allclose(record.original, x, atol=1e-12)

    def test_record_arrays_are_read_only(self):
        record = quantize_with_dither(np.ones(3), 1.0, "uniform", self.rng)
        with self.assertRaises(ValueError):
            record.quantized[0] = 0.0

    def test_rejects_non_finite(self):
        with self.assertRaises(NonFiniteSampleError):
            quantize_with_dither(np.array([0.0, np.nan]), 1.0, "uniform", self.rng)

    def test_uniform_error_is_uniform(self):
        x = self.rng.standard_normal(1_000_000)
        record = quantize_with_dither(x, 1.0, DitherKind.UNIFORM, self.rng)
        result = stats.kstest(record.error, "uniform", args=(-0.5, 1.0))
        self.assertGreater(result.pvalue, 0.01)

    def test_triangular_noise_power(self):
        x = self.rng.standard_normal(1_000_000)
        record = quantize_with_dither(x, 1.0, DitherKind.TRIANGULAR, self.rng)
        self.assertLess(abs(np.mean(record.noise**2) - 0.25), 0.003)


class QuantConfigTests(SimpleTestCase):
    def test_negative_levels_rejected(self):
        with self.assertRaises(ValueError):
            QuantConfig(delta1=-0.1)

    def test_dither_kinds(self):
        self.assertEqual(QuantConfig().covariate_kind, DitherKind.TRIANGULAR)
        self.assertEqual(QuantConfig().response_kind, DitherKind.UNIFORM)
        self.assertEqual(QuantConfig(dither_enabled=False).response_kind, DitherKind.NONE)


class NoiseMomentReportTests(SimpleTestCase):
    def setUp(self):
        self.rng = make_generator(77)

    def test_zero_delta_reports_zero(self):
        record = quantize_with_dither(np.arange(5.0), 0.0, "triangular", self.rng)
        moments = noise_moment_report(record)
        self.assertEqual(moments.mean_noise, 0.0)
        self.assertEqual(moments.var_noise, 0.0)
        self.assertEqual(moments.mean_error, 0.0)
        self.assertEqual(moments.ks_stat_error_vs_uniform, 0.0)

    def test_empty_record_rejected(self):
        record = quantize_with_dither(np.array([]), 1.0, "uniform", self.rng)
        with self.assertRaises(ValueError):
            noise_moment_report(record)

    def test_uniform_and_triangular_moments(self):
        x = self.rng.standard_normal(1_000_000)
        uniform = noise_moment_report(quantize_with_dither(x, 1.0, "uniform", self.rng))
        triangular = noise_moment_report(quantize_with_dither(x, 1.0, "triangular", self.rng))
        self.assertLess(abs(uniform.mean_noise), 0.005)
        self.assertLess(abs(uniform.input_error_corr), 0.01)
        self.assertGreaterEqual(triangular.var_noise, 0.247)
        self.assertLessEqual(triangular.var_noise, 0.253)
        self.assertLess(abs(triangular.input_error_corr), 0.01)


@tag("slow")
class WhiteningPropertyTests(SimpleTestCase):
    """Error whitening and signal-independent noise power across input laws."""

    n = 1_000_000

    def test_error_distribution_for_each_input_law(self):
        rng = make_generator(9)
        for law in ("gaussian", "uniform"):
            x = sample_inputs(law, self.n, rng)
            for kind in ("uniform", "triangular"):
                moments = noise_moment_report(quantize_with_dither(x, 1.0, kind, rng))
                with self.subTest(law=law, kind=kind):
                    self.assertGreater(moments.ks_pvalue, 0.01)
                    self.assertLess(abs(moments.input_error_corr), 0.01)

    def test_triangular_noise_power_is_signal_independent(self):
        rng = make_generator(10)
        for law in ("gaussian", "uniform", "constant"):
            x = sample_inputs(law, self.n, rng)
            record = quantize_with_dither(x, 1.0, "triangular", rng)
            squared = record.noise**2
            tolerance = 3.0 * squared.std() / np.sqrt(self.n)
            with self.subTest(law=law):
                self.assertLess(abs(squared.mean() - 0.25), tolerance)


class DitherDemoCommandTests(SimpleTestCase):
    def test_writes_expected_columns(self):
        with tempfile.TemporaryDirectory() as tmp:
            call_command("dither_demo", out=tmp, n=2000, deltas=[1.0], seed=1, stdout=io.StringIO())
            with (Path(tmp) / "dither_demo.csv").open() as f:
                rows = list(csv.reader(f))
        self.assertEqual(
            rows[0], ["kind", "delta", "n", "mean_noise", "var_noise", "mean_error", "ks_stat"]
        )
        self.assertEqual([row[0] for row in rows[1:]], ["uniform", "triangular"])
