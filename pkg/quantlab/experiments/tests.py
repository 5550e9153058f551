import contextlib
import csv
import io
import json
import math
import tempfile
from pathlib import Path

import numpy as np
from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase, override_settings, tag

from quantization.services import make_generator
from quantlab.cli import SUBCOMMANDS, parse_and_dispatch
from synthdata.services import GenSpec, gen_lowrank_theta, save_matrix_csv

from .config import (
    ConfigError,
    ExperimentConfig,
    apply_overrides,
    load_experiment_config,
    parse_experiment_config,
)
from .models import ExperimentRun
from .reporting import RESULTS_HEADER, emit_plot_script, read_results, write_manifest, write_results
from .services import (
    DITHER_STREAM,
    ExperimentResult,
    SlopeFitError,
    TrialRecord,
    calibrate_lambda_scale,
    coarsening_steps,
    degradation_trend,
    derive_seed,
    draw_truth,
    fit_loglog_slope,
    floor_ratio,
    is_monotone_in_delta,
    run_dither_comparison,
    run_error_curve,
    run_lasso_vs_ols,
    run_real_data_study,
    run_trial,
)

SMALL = {
    "name": "smoke",
    "model": "lrmr_regularized",
    "gen": {"d1": 5, "d2": 4, "r": 2, "noise_level": 0.01},
    "n_grid": [200, 400, 800],
    "delta2_grid": [0.0, 0.5],
    "trials": 2,
    "base_seed": 5,
}


def small_config(**changes) -> ExperimentConfig:
    raw = json.loads(json.dumps(SMALL))
    raw.update(changes)
    return parse_experiment_config(raw)


def make_record(n, frob, delta2=0.0, trial=0, delta1=0.0, model="lrmr_regularized") -> TrialRecord:
    return TrialRecord(
        model=model,
        n=n,
        d1=5,
        d2=4,
        r=2,
        delta1=delta1,
        delta2=delta2,
        trial=trial,
        seed=trial,
        frob_error=frob,
        rel_error=frob,
        pred_error=frob,
        iterations=10,
        runtime_ms=0.0,
        converged=math.isfinite(frob),
    )


class ConfigParsingTests(SimpleTestCase):
    def test_defaults_fill_missing_keys(self):
        cfg = parse_experiment_config({"model": "lrmr_constrained"})
        self.assertEqual(cfg.gen.d1, 50)
        self.assertEqual(cfg.gen.d2, 60)
        self.assertEqual(cfg.trials, 50)
        self.assertTrue(cfg.dither_enabled)
        self.assertFalse(cfg.record_runtime)

    def test_unknown_key_reports_dotted_path(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_experiment_config({"model": "lrmr_regularized", "gen": {"rank": 3}})
        self.assertEqual(ctx.exception.key_path, "gen.rank")

    def test_wrong_type_reports_key(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_experiment_config({"model": "lrmr_regularized", "trials": "many"})
        self.assertEqual(ctx.exception.key_path, "trials")
        with self.assertRaises(ConfigError) as ctx:
            parse_experiment_config({"model": "lrmr_regularized", "n_grid": [100, 2.5]})
        self.assertEqual(ctx.exception.key_path, "n_grid[1]")

    def test_integers_are_accepted_for_float_grids(self):
        cfg = parse_experiment_config({"model": "lrmr_regularized", "delta2_grid": [0, 1]})
        self.assertEqual(cfg.delta2_grid, (0.0, 1.0))

    def test_invalid_values_rejected(self):
        cases = [
            ({"model": "lasso"}, "model"),
            ({"model": "ols", "schema_version": 2}, "schema_version"),
            ({"model": "ols", "n_grid": []}, "n_grid"),
            ({"model": "ols", "delta1_grid": [-0.1]}, "delta1_grid"),
            ({"model": "ols", "trials": 0}, "trials"),
            ({"model": "ols", "base_seed": -1}, "base_seed"),
            ({"model": "ols", "gen": {"d1": 3, "d2": 3, "r": 4}}, "gen.r"),
            ({"model": "ols", "gen": {"truth": "matrix"}}, "gen.theta_path"),
            ({"model": "l2rm", "gen": {"truth": "matrix", "theta_path": "t.csv"}}, "gen.truth"),
            ({"model": "lrmr_regularized", "gen": {"truth": "shapes"}}, "gen.truth"),
            ({"model": "ols", "solver": {"step": "fixed"}}, "solver"),
        ]
        for raw, key_path in cases:
            with self.subTest(raw=raw):
                with self.assertRaises(ConfigError) as ctx:
                    parse_experiment_config(raw)
                self.assertEqual(ctx.exception.key_path, key_path)

    def test_paired_deltas_need_equal_lengths(self):
        with self.assertRaises(ConfigError):
            parse_experiment_config(
                {"model": "ols", "paired_deltas": True, "delta1_grid": [0.0, 0.1], "delta2_grid": [0.0]}
            )
        cfg = parse_experiment_config(
            {"model": "ols", "paired_deltas": True, "delta1_grid": [0.0, 0.1], "delta2_grid": [0.0, 0.2]}
        )
        self.assertEqual(cfg.delta_pairs, [(0.0, 0.0), (0.1, 0.2)])

    def test_cells_cover_the_product_grid(self):
        cfg = small_config(delta1_grid=[0.0, 0.1])
        cells = cfg.cells()
        self.assertEqual(len(cells), 3 * 4)
        self.assertEqual(cells[0], (0, 200, 0, 0.0, 0.0))
        self.assertEqual(cells[-1], (2, 800, 3, 0.1, 0.5))

    def test_overrides_follow_dotted_paths(self):
        raw = apply_overrides(
            {"model": "ols", "gen": {"d1": 5}},
            ["gen.d1=7", "delta2_grid=[0.2,0.4]", "name=fig", "solver.acceleration=false"],
        )
        self.assertEqual(raw["gen"]["d1"], 7)
        self.assertEqual(raw["delta2_grid"], [0.2, 0.4])
        self.assertEqual(raw["name"], "fig")
        self.assertEqual(raw["solver"], {"acceleration": False})
        cfg = parse_experiment_config(raw)
        self.assertEqual(cfg.delta2_grid, (0.2, 0.4))

    def test_malformed_overrides(self):
        with self.assertRaises(ConfigError):
            apply_overrides({}, ["novalue"])
        with self.assertRaises(ConfigError) as ctx:
            apply_overrides({"gen": 3}, ["gen.d1=1"])
        self.assertEqual(ctx.exception.key_path, "gen")

    def test_missing_file(self):
        with self.assertRaises(ConfigError) as ctx:
            load_experiment_config("/nonexistent/recipe.json")
        self.assertIn("config file not found: /nonexistent/recipe.json", str(ctx.exception))

    def test_invalid_json_reports_line(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "bad.json"
            path.write_text('{\n  "model": "ols",\n  "trials": \n}\n', encoding="utf-8")
            with self.assertRaises(ConfigError) as ctx:
                load_experiment_config(path)
        self.assertIn("invalid JSON at line 4", str(ctx.exception))

    def test_checked_in_recipes_parse(self):
        paths = sorted(Path(settings.QUANTLAB_CONFIG_DIR).glob("*.json"))
        self.assertTrue(paths)
        for path in paths:
            with self.subTest(recipe=path.name):
                cfg = load_experiment_config(path)
                self.assertEqual(cfg.schema_version, 1)


class SeedTests(SimpleTestCase):
    def test_derive_seed_is_stable(self):
        self.assertEqual(derive_seed(2023, 2, 0, 1, 7), derive_seed(2023, 2, 0, 1, 7))

    def test_streams_are_distinct(self):
        seeds = {
            derive_seed(2023, DITHER_STREAM, 0, 0, 0),
            derive_seed(2023, DITHER_STREAM, 0, 0, 1),
            derive_seed(2023, DITHER_STREAM, 0, 1, 0),
            derive_seed(2023, DITHER_STREAM, 1, 0, 0),
            derive_seed(2024, DITHER_STREAM, 0, 0, 0),
        }
        self.assertEqual(len(seeds), 5)

    def test_seed_fits_in_32_bits(self):
        seed = derive_seed(0, 1, 2, 3)
        self.assertGreaterEqual(seed, 0)
        self.assertLess(seed, 2**32)


class SlopeFitTests(SimpleTestCase):
    def test_exact_power_law(self):
        points = [(n, 3.0 * n**-0.5) for n in (1000, 1500, 2000, 2500, 3000)]
        self.assertAlmostEqual(fit_loglog_slope(points), -0.5, places=12)

    def test_constant_error_is_flat(self):
        self.assertAlmostEqual(fit_loglog_slope([(n, 0.2) for n in (100, 200, 400)]), 0.0, places=12)

    def test_noisy_power_law(self):
        rng = make_generator(3)
        ns = np.arange(1000, 10001, 500)
        errors = 2.0 * ns**-0.5 * np.exp(0.05 * rng.standard_normal(ns.size))
        self.assertAlmostEqual(fit_loglog_slope(zip(ns, errors)), -0.5, delta=0.05)

    def test_rejects_short_or_nonpositive_input(self):
        with self.assertRaises(SlopeFitError):
            fit_loglog_slope([(100, 1.0), (200, 0.7)])
        with self.assertRaises(SlopeFitError):
            fit_loglog_slope([(100, 1.0), (200, 0.0), (400, 0.5)])
        with self.assertRaises(SlopeFitError):
            fit_loglog_slope([(100, 1.0), (200, float("nan")), (400, 0.5)])


class ResultAnalysisTests(SimpleTestCase):
    def test_records_are_sorted_by_cell_and_trial(self):
        result = ExperimentResult(
            (make_record(400, 0.1, trial=1), make_record(200, 0.2, trial=1), make_record(200, 0.3, trial=0))
        )
        self.assertEqual([(r.n, r.trial) for r in result.records], [(200, 0), (200, 1), (400, 1)])
        self.assertEqual(result.cells(), [(200, 0.0, 0.0), (400, 0.0, 0.0)])
        self.assertAlmostEqual(result.mean("frob_error", 200, 0.0, 0.0), 0.25)

    def test_failed_records_are_counted_and_skipped_in_means(self):
        result = ExperimentResult((make_record(200, 0.2), make_record(200, float("nan"), trial=1)))
        self.assertEqual(result.failed, 1)
        self.assertAlmostEqual(result.mean("frob_error", 200, 0.0, 0.0), 0.2)
        entry = result.summary()["n=200,delta1=0.0,delta2=0.0"]
        self.assertEqual(entry["trials"], 2)
        self.assertEqual(entry["failed"], 1)

    def test_monotone_in_delta_allows_slack(self):
        nearly = ExperimentResult(
            (make_record(200, 1.0, 0.0), make_record(200, 1.01, 0.2), make_record(200, 0.995, 0.4))
        )
        self.assertTrue(is_monotone_in_delta(nearly))
        dropping = ExperimentResult((make_record(200, 1.0, 0.0), make_record(200, 0.9, 0.2)))
        self.assertFalse(is_monotone_in_delta(dropping))

    def test_monotone_in_delta_ignores_incomparable_cells(self):
        # (0, 0.5) and (0.5, 0) differ in both coordinates, so their order is irrelevant
        product = ExperimentResult(
            (
                make_record(200, 0.09, 0.0, delta1=0.0),
                make_record(200, 1.2, 0.5, delta1=0.0),
                make_record(200, 0.9, 0.0, delta1=0.5),
                make_record(200, 1.25, 0.5, delta1=0.5),
            )
        )
        self.assertTrue(is_monotone_in_delta(product))

    def test_monotone_in_delta_checks_each_axis_of_a_product_grid(self):
        cells = {(0.0, 0.0): 1.0, (0.0, 0.5): 1.2, (0.5, 0.0): 1.1, (0.5, 0.5): 1.3}
        for step_down in [(0.5, 0.0), (0.5, 0.5)]:
            errors = dict(cells)
            errors[step_down] = 0.8 if step_down == (0.5, 0.0) else 1.0
            result = ExperimentResult(
                tuple(make_record(200, e, d2, delta1=d1) for (d1, d2), e in errors.items())
            )
            with self.subTest(cell=step_down):
                self.assertFalse(is_monotone_in_delta(result))

    def test_monotone_in_delta_follows_a_paired_diagonal(self):
        rising = [(0.0, 1.0), (0.2, 1.1), (0.4, 1.3)]
        result = ExperimentResult(tuple(make_record(200, e, d, delta1=d) for d, e in rising))
        self.assertTrue(is_monotone_in_delta(result))
        falling = ExperimentResult(tuple(make_record(200, e, d, delta1=d) for d, e in [(0.0, 1.0), (0.2, 0.9)]))
        self.assertFalse(is_monotone_in_delta(falling))

    def test_coarsening_steps_on_grids(self):
        product = [(0.0, 0.0), (0.0, 0.5), (0.5, 0.0), (0.5, 0.5)]
        self.assertEqual(
            sorted(coarsening_steps(product)),
            [
                ((0.0, 0.0), (0.0, 0.5)),
                ((0.0, 0.0), (0.5, 0.0)),
                ((0.0, 0.5), (0.5, 0.5)),
                ((0.5, 0.0), (0.5, 0.5)),
            ],
        )
        paired = [(0.0, 0.0), (0.2, 0.2), (0.4, 0.4)]
        self.assertEqual(coarsening_steps(paired), [((0.0, 0.0), (0.2, 0.2)), ((0.2, 0.2), (0.4, 0.4))])

    def test_floor_ratio(self):
        result = ExperimentResult(
            tuple(make_record(n, e, 1.0) for n, e in [(1000, 4.0), (2000, 3.0), (3000, 2.0), (4000, 1.0)])
        )
        self.assertAlmostEqual(floor_ratio(result, 0.0, 1.0), 1.0 / 3.0)

    def test_degradation_trend(self):
        result = ExperimentResult(
            tuple(make_record(100, 0.1 + d, d, trial=t) for d in (0.0, 0.5, 1.0) for t in range(2))
        )
        self.assertAlmostEqual(degradation_trend(result), 1.0)
        self.assertTrue(math.isnan(degradation_trend(ExperimentResult((make_record(100, 0.1),)))))


class ReportingTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.out = Path(self.tmp.name)

    def test_results_header(self):
        self.assertEqual(
            RESULTS_HEADER,
            (
                "model",
                "n",
                "d1",
                "d2",
                "r",
                "delta1",
                "delta2",
                "trial",
                "seed",
                "frob_error",
                "rel_error",
                "pred_error",
                "iterations",
                "runtime_ms",
                "converged",
            ),
        )

    def test_empty_result_writes_header_only(self):
        paths = write_results(ExperimentResult(()), self.out)
        self.assertEqual(paths["results"].read_text(encoding="utf-8"), ",".join(RESULTS_HEADER) + "\n")
        self.assertEqual(json.loads(paths["summary"].read_text(encoding="utf-8")), {})

    def test_written_records_read_back(self):
        result = ExperimentResult((make_record(200, 0.125, 0.5), make_record(400, 1.0 / 3.0, 0.5, trial=1)))
        write_results(result, self.out)
        with (self.out / "results.csv").open(encoding="utf-8", newline="") as f:
            rows = list(csv.reader(f))
        self.assertEqual(rows[1][-1], "true")
        self.assertEqual(read_results(self.out / "results.csv"), result)

    def test_read_rejects_foreign_header(self):
        path = self.out / "results.csv"
        path.write_text("a,b\n1,2\n", encoding="utf-8")
        with self.assertRaises(ValueError):
            read_results(path)

    def test_summary_writes_nan_as_null(self):
        write_results(ExperimentResult((make_record(200, float("nan")),)), self.out)
        summary = json.loads((self.out / "summary.json").read_text(encoding="utf-8"))
        entry = summary["n=200,delta1=0.0,delta2=0.0"]
        self.assertIsNone(entry["frob_error"]["mean"])
        self.assertEqual(entry["failed"], 1)

    def test_manifest_echoes_config(self):
        cfg = small_config()
        path = write_manifest(self.out, cfg.as_dict(), "error_curve", {"": ["results.csv"]})
        manifest = json.loads(path.read_text(encoding="utf-8"))
        self.assertEqual(manifest["kind"], "error_curve")
        self.assertEqual(manifest["config"]["gen"]["d1"], 5)
        self.assertIn("version", manifest)

    def test_plot_script_averages_results_csv(self):
        result = ExperimentResult(
            tuple(make_record(n, n**-0.5, d) for n in (100, 400) for d in (0.0, 0.5))
        )
        script = emit_plot_script(result, self.out, title="smoke").read_text(encoding="utf-8")
        self.assertIn("set logscale xy", script)
        self.assertIn("set datafile separator ','", script)
        self.assertEqual(script.count("'results.csv' skip 1 using ($2)"), 2)
        self.assertEqual(script.count("smooth unique"), 2)
        self.assertIn("abs($7 - 0.5) < 1e-12", script)
        self.assertIn("? $10 : NaN", script)
        self.assertNotIn("EOD", script)
        self.assertIn("n^(-1/2)", script)


class HarnessTests(SimpleTestCase):
    def test_noiseless_trial_recovers_truth(self):
        cfg = small_config(
            gen={"d1": 5, "d2": 4, "r": 2, "noise_level": 0.0}, n_grid=[2000], lambda_scale=1e-4
        )
        record = run_trial(cfg, 0, 2000, 0, 0.0, 0.0, 0)
        self.assertTrue(record.converged)
        self.assertLess(record.frob_error, 1e-3)
        self.assertEqual((record.d1, record.d2, record.r), (5, 4, 2))
        self.assertEqual(record.seed, derive_seed(cfg.base_seed, DITHER_STREAM, 0, 0, 0))
        self.assertEqual(record.runtime_ms, 0.0)

    def test_sweep_covers_every_cell_and_trial(self):
        cfg = small_config()
        result = run_error_curve(cfg, threads=1)
        self.assertEqual(len(result.records), 3 * 2 * 2)
        self.assertEqual(result.failed, 0)
        self.assertEqual(
            [(r.n, r.delta2, r.trial) for r in result.records[:4]],
            [(200, 0.0, 0), (200, 0.0, 1), (200, 0.5, 0), (200, 0.5, 1)],
        )

    def test_sweeps_are_reproducible(self):
        cfg = small_config()
        self.assertEqual(run_error_curve(cfg, threads=1), run_error_curve(cfg, threads=1))

    def test_seed_changes_the_draws(self):
        first = run_error_curve(small_config(), threads=1)
        second = run_error_curve(small_config(base_seed=6), threads=1)
        self.assertNotEqual(first.records[0].frob_error, second.records[0].frob_error)

    def test_runtime_recorded_on_request(self):
        record = run_trial(small_config(record_runtime=True), 0, 200, 0, 0.0, 0.0, 0)
        self.assertGreater(record.runtime_ms, 0.0)

    def test_ols_with_too_few_samples_fails_softly(self):
        cfg = small_config(model="ols", n_grid=[3], delta2_grid=[0.0], trials=1)
        with self.assertLogs("experiments.services", level="WARNING"):
            result = run_error_curve(cfg, threads=1)
        record = result.records[0]
        self.assertTrue(record.failed)
        self.assertFalse(record.converged)
        self.assertTrue(math.isnan(record.pred_error))

    def test_lasso_and_ols_share_data(self):
        cfg = small_config(n_grid=[3, 400], delta2_grid=[0.0], trials=1)
        with self.assertLogs("experiments.services", level="WARNING"):
            comparison = run_lasso_vs_ols(cfg, threads=1)
        lasso, ols = comparison["lasso"], comparison["ols"]
        self.assertEqual(lasso.failed, 0)
        self.assertEqual(ols.failed, 1)
        self.assertEqual([r.seed for r in lasso.records], [r.seed for r in ols.records])
        self.assertEqual({r.model for r in ols.records}, {"ols"})

    def test_vanishing_penalty_on_full_rank_truth_matches_ols(self):
        cfg = small_config(
            gen={"d1": 5, "d2": 4, "r": 4, "noise_level": 0.01},
            n_grid=[2000],
            delta2_grid=[0.3],
            trials=5,
            lambda_scale=1e-4,
        )
        comparison = run_lasso_vs_ols(cfg, threads=1)
        lasso = comparison["lasso"].mean("frob_error", 2000, 0.0, 0.3)
        ols = comparison["ols"].mean("frob_error", 2000, 0.0, 0.3)
        self.assertAlmostEqual(lasso / ols, 1.0, delta=0.1)

    def test_lasso_vs_ols_rejects_matrix_responses(self):
        with self.assertRaises(ConfigError):
            run_lasso_vs_ols(small_config(model="l2rm"), threads=1)

    def test_dither_comparison_labels(self):
        cfg = small_config(n_grid=[200], delta2_grid=[1.0], trials=1)
        comparison = run_dither_comparison(cfg, threads=1)
        self.assertEqual(sorted(label for label, _ in comparison.items()), ["dithered", "undithered"])
        self.assertEqual(
            comparison["dithered"].records[0].seed, comparison["undithered"].records[0].seed
        )

    def test_matrix_response_sweep(self):
        cfg = small_config(
            model="l2rm",
            gen={"s": 2, "p": 3, "q": 3, "block_rank": 1, "noise_level": 0.0},
            n_grid=[300],
            delta2_grid=[0.0],
            trials=1,
            lambda_scale=1e-4,
        )
        record = run_error_curve(cfg, threads=1).records[0]
        self.assertEqual((record.d1, record.d2, record.r), (2, 9, 2))
        self.assertLess(record.rel_error, 1e-2)

    def test_fixed_truth_shares_theta_across_trials(self):
        fixed = small_config(gen={"d1": 5, "d2": 4, "r": 2, "fixed_truth": True})
        np.testing.assert_array_equal(draw_truth(fixed, 0), draw_truth(fixed, 3))
        fresh = small_config()
        self.assertFalse(np.array_equal(draw_truth(fresh, 0), draw_truth(fresh, 3)))

    def test_calibration_prefers_the_moderate_scale(self):
        cfg = small_config(n_grid=[500], delta2_grid=[0.0], trials=1)
        calibration = calibrate_lambda_scale(cfg, (1.0, 1000.0), threads=1)
        self.assertEqual(calibration.best_scale, 1.0)
        self.assertAlmostEqual(calibration.mean_errors[1000.0], 1.0)

    def test_calibration_needs_a_regularized_model(self):
        with self.assertRaises(ConfigError):
            calibrate_lambda_scale(small_config(model="ols"), threads=1)


class RealDataStudyTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.write_data(n=60, signal=1.0, noise=0.1)

    def write_data(self, n, signal, noise):
        rng = make_generator(11)
        theta = signal * gen_lowrank_theta(GenSpec(d1=4, d2=3, r=1), rng)
        x = rng.standard_normal((4, n))
        y = theta.T @ x + noise * rng.standard_normal((3, n))
        self.path_x = save_matrix_csv(Path(self.tmp.name) / "X.csv", x)
        self.path_y = save_matrix_csv(Path(self.tmp.name) / "Y.csv", y)

    def config(self, **data):
        return parse_experiment_config(
            {
                "name": "real",
                "model": "lrmr_regularized",
                "data": {"path_x": str(self.path_x), "path_y": str(self.path_y), **data},
                "delta2_grid": [0.0, 0.5, 1.0],
                "trials": 2,
                "lambda_scale": 0.5,
            }
        )

    def test_unquantized_cell_matches_reference(self):
        result = run_real_data_study(self.config(), threads=1)
        self.assertEqual(len(result.records), 3 * 2)
        for record in result.cell_records(60, 0.0, 0.0):
            self.assertAlmostEqual(record.rel_error, 0.0, places=9)
        self.assertGreater(result.mean("rel_error", 60, 0.0, 1.0), 0.0)
        self.assertGreater(degradation_trend(result), 0.8)

    def test_held_out_split(self):
        result = run_real_data_study(self.config(n_test=10), threads=1)
        self.assertEqual({r.n for r in result.records}, {50})

    def test_held_out_prediction_degrades_slowly(self):
        self.write_data(n=200, signal=10.0, noise=1.0)
        result = run_real_data_study(self.config(n_test=40), threads=1)
        baseline = result.mean("pred_error", 160, 0.0, 0.0)
        self.assertLessEqual(result.mean("pred_error", 160, 0.0, 1.0), 1.25 * baseline)

    def test_needs_a_data_section(self):
        with self.assertRaises(ConfigError):
            run_real_data_study(small_config(), threads=1)


class ExperimentCommandTests(TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)
        self.config_path = self.root / "smoke.json"
        self.config_path.write_text(json.dumps(SMALL), encoding="utf-8")

    def run_command(self, name, out, **options):
        stdout = io.StringIO()
        call_command(name, config=str(self.config_path), out=str(out), threads=1, stdout=stdout, **options)
        return stdout.getvalue()

    def test_run_writes_outputs_and_registers(self):
        out = self.root / "run"
        output = self.run_command("run_lrmr", out)
        self.assertIn("Run smoke complete.", output)
        self.assertIn("log-log slope", output)
        for name in ("results.csv", "summary.json", "manifest.json", "plot.gp"):
            self.assertTrue((out / name).exists(), name)
        run = ExperimentRun.objects.get(code="smoke")
        self.assertEqual(run.status, "finished")
        self.assertEqual(run.kind, "error_curve")
        self.assertEqual(run.record_count, 12)
        self.assertEqual(run.failed_count, 0)
        self.assertEqual(run.config["gen"]["d1"], 5)

    def test_registry_can_be_switched_off(self):
        self.run_command("run_lrmr", self.root / "unregistered", registry=False)
        with override_settings(QUANTLAB_REGISTRY=False):
            self.run_command("run_lrmr", self.root / "unregistered_by_setting")
        self.assertFalse(ExperimentRun.objects.exists())
        self.assertTrue((self.root / "unregistered" / "results.csv").exists())

    def test_fixed_seed_gives_identical_files(self):
        self.run_command("run_lrmr", self.root / "a", seed=11)
        self.run_command("run_lrmr", self.root / "b", seed=11)
        self.assertEqual(
            (self.root / "a" / "results.csv").read_bytes(), (self.root / "b" / "results.csv").read_bytes()
        )
        manifest = json.loads((self.root / "a" / "manifest.json").read_text(encoding="utf-8"))
        self.assertEqual(manifest["config"]["base_seed"], 11)

    def test_overrides_and_trials_flag(self):
        out = self.root / "override"
        self.run_command("run_lrmr", out, overrides=["delta2_grid=[0.25]"], trials=1)
        result = read_results(out / "results.csv")
        self.assertEqual(len(result.records), 3)
        self.assertEqual({r.delta2 for r in result.records}, {0.25})

    def test_comparison_writes_one_directory_per_label(self):
        out = self.root / "dither"
        self.run_command("run_dither_compare", out, overrides=["n_grid=[200,400,800]"], trials=1)
        self.assertTrue((out / "dithered" / "results.csv").exists())
        self.assertTrue((out / "undithered" / "results.csv").exists())
        self.assertEqual(ExperimentRun.objects.get(code="smoke").kind, "dither_comparison")

    def test_calibration_command(self):
        out = self.root / "calibration"
        output = self.run_command("calibrate_lambda", out, multipliers=[1.0, 1000.0], trials=1)
        self.assertIn("Best lambda_scale: 1", output)
        calibration = json.loads((out / "calibration.json").read_text(encoding="utf-8"))
        self.assertEqual(calibration["best_lambda_scale"], 1.0)

    def test_missing_config_exits_with_one(self):
        with self.assertRaises(CommandError) as ctx:
            call_command("run_lrmr", config=str(self.root / "missing.json"), out=str(self.root / "x"))
        self.assertEqual(ctx.exception.returncode, 1)
        self.assertFalse(ExperimentRun.objects.exists())

    def test_wrong_model_exits_with_one(self):
        with self.assertRaises(CommandError) as ctx:
            self.run_command("run_l2rm", self.root / "x")
        self.assertEqual(ctx.exception.returncode, 1)

    def test_real_run_without_data_exits_with_one(self):
        with self.assertRaises(CommandError) as ctx:
            self.run_command("run_real", self.root / "x")
        self.assertEqual(ctx.exception.returncode, 1)

    def test_unreadable_dataset_marks_run_failed(self):
        data = {"path_x": str(self.root / "none_X.csv"), "path_y": str(self.root / "none_Y.csv")}
        with self.assertRaises(CommandError) as ctx:
            self.run_command("run_real", self.root / "x", overrides=[f"data={json.dumps(data)}"])
        self.assertEqual(ctx.exception.returncode, 1)
        self.assertEqual(ExperimentRun.objects.get(code="smoke").status, "failed")


class CliTests(TestCase):
    def dispatch(self, argv):
        stdout, stderr = io.StringIO(), io.StringIO()
        with contextlib.redirect_stdout(stdout), contextlib.redirect_stderr(stderr):
            code = parse_and_dispatch(argv)
        return code, stdout.getvalue(), stderr.getvalue()

    def test_every_subcommand_is_listed(self):
        code, stdout, _ = self.dispatch(["--help"])
        self.assertEqual(code, 0)
        for name in SUBCOMMANDS:
            self.assertIn(name, stdout)

    def test_no_arguments_is_a_usage_error(self):
        self.assertEqual(self.dispatch([])[0], 1)

    def test_unknown_subcommand(self):
        code, _, stderr = self.dispatch(["run-everything"])
        self.assertEqual(code, 1)
        self.assertIn("Unknown subcommand", stderr)

    def test_unknown_flag(self):
        code, _, stderr = self.dispatch(["run-lrmr", "--config", "x.json", "--bogus"])
        self.assertEqual(code, 1)
        self.assertIn("usage:", stderr)

    def test_missing_config_file(self):
        code, _, stderr = self.dispatch(["run-lrmr", "--config", "/nonexistent/x.json"])
        self.assertEqual(code, 1)
        self.assertIn("config file not found", stderr)

    def test_successful_run(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "smoke.json"
            path.write_text(json.dumps(SMALL), encoding="utf-8")
            code, stdout, _ = self.dispatch(
                ["run-lrmr", "--config", str(path), "--out", str(Path(tmp) / "out"), "--threads", "1"]
            )
            self.assertEqual(code, 0)
            self.assertTrue((Path(tmp) / "out" / "results.csv").exists())


@tag("slow")
class AcceptanceTests(SimpleTestCase):
    """Full-size recipes; run with ``manage.py test --tag slow``."""

    def recipe(self, name, **changes):
        return load_experiment_config(Path(settings.QUANTLAB_CONFIG_DIR) / name).replace(**changes)

    def test_regularized_error_decays_at_root_n(self):
        result = run_error_curve(self.recipe("partial_quantization.json", delta2_grid=(0.0, 0.2)))
        for delta2 in (0.0, 0.2):
            slope = fit_loglog_slope(result.curve("frob_error", 0.0, delta2))
            self.assertGreaterEqual(slope, -0.65)
            self.assertLessEqual(slope, -0.35)

    def test_complete_quantization_keeps_the_rate(self):
        result = run_error_curve(self.recipe("complete_quantization.json", trials=20))
        for delta in (0.2, 0.3, 0.4):
            with self.subTest(delta=delta):
                slope = fit_loglog_slope(result.curve("frob_error", delta, delta))
                self.assertGreaterEqual(slope, -0.65)
                self.assertLessEqual(slope, -0.35)
        self.assertTrue(is_monotone_in_delta(result))

    def test_error_grows_with_quantization_level(self):
        result = run_error_curve(self.recipe("partial_quantization.json", trials=20))
        self.assertTrue(is_monotone_in_delta(result))

    def test_dithering_removes_the_error_floor(self):
        comparison = run_dither_comparison(self.recipe("dither_compare.json", trials=20))
        self.assertLess(floor_ratio(comparison["dithered"], 0.0, 1.0), 0.8)
        slope = fit_loglog_slope(comparison["dithered"].curve("frob_error", 0.0, 1.0))
        self.assertGreaterEqual(slope, -0.65)
        self.assertLessEqual(slope, -0.35)
        self.assertGreaterEqual(floor_ratio(comparison["undithered"], 0.0, 1.0), 0.8)

    def test_more_trials_narrow_the_mean(self):
        cfg = small_config(n_grid=[400], delta2_grid=[0.5])
        stderr = {}
        for trials in (50, 200):
            errors = [r.frob_error for r in run_error_curve(cfg.replace(trials=trials)).records]
            stderr[trials] = np.std(errors) / np.sqrt(trials)
        self.assertLess(stderr[200], stderr[50])

    def test_dithering_beats_direct_quantization_at_large_n(self):
        comparison = run_dither_comparison(self.recipe("dither_compare.json", trials=20, n_grid=(8000,)))
        self.assertLess(
            comparison["dithered"].mean("frob_error", 8000, 0.0, 1.0),
            comparison["undithered"].mean("frob_error", 8000, 0.0, 1.0),
        )

    def test_lasso_outperforms_ols(self):
        comparison = run_lasso_vs_ols(self.recipe("lasso_vs_ols.json", trials=20))
        lasso = comparison["lasso"].mean("frob_error", 1000, 0.0, 0.3)
        ols = comparison["ols"].mean("frob_error", 1000, 0.0, 0.3)
        self.assertLess(lasso, 0.7 * ols)

    def test_matrix_response_rate_and_ordering(self):
        result = run_error_curve(self.recipe("l2rm.json", trials=10))
        for delta1, delta2 in [(0.0, 0.0), (0.0, 0.5), (0.5, 0.0), (0.5, 0.5)]:
            with self.subTest(delta1=delta1, delta2=delta2):
                slope = fit_loglog_slope(result.curve("frob_error", delta1, delta2))
                self.assertGreaterEqual(slope, -0.65)
                self.assertLessEqual(slope, -0.35)
        self.assertTrue(is_monotone_in_delta(result))

    def test_shape_images_tolerate_moderate_quantization(self):
        result = run_error_curve(self.recipe("l2rm_shapes.json"))
        unquantized = result.mean("rel_error", 2000, 0.0, 0.0)
        self.assertLessEqual(result.mean("rel_error", 2000, 0.0, 0.5), 1.05 * unquantized)
        self.assertGreaterEqual(result.mean("rel_error", 2000, 0.0, 0.5), 0.95 * unquantized)
        self.assertGreater(result.mean("rel_error", 2000, 0.0, 3.0), unquantized)

    def test_vector_response_recipes_share_a_calibrated_scale(self):
        partial = self.recipe("partial_quantization.json")
        self.assertEqual(self.recipe("lasso_vs_ols.json").lambda_scale, partial.lambda_scale)
        self.assertEqual(self.recipe("complete_quantization.json").lambda_scale, partial.lambda_scale)
        pilot = partial.replace(n_grid=(1000, 2000), delta2_grid=(0.2,), trials=10)
        calibration = calibrate_lambda_scale(pilot, multipliers=(0.5, 1.0, 2.0))
        errors = calibration.mean_errors
        self.assertLessEqual(errors[partial.lambda_scale], 1.05 * errors[calibration.best_scale])
