"""Monte Carlo harness: grid sweeps over (n, delta1, delta2), error metrics and rate checks.

Randomness is split into independent streams keyed by position in the sweep,
so every (cell, trial) pair can run on any worker in any order:

* truth stream ``(TRUTH, trial)``, shared by all cells of a trial;
* data stream ``(DATA, n_index, trial)``, shared across delta cells so the
  quantization levels are compared on common data;
* dither stream ``(DITHER, n_index, delta_index, trial)``; its seed is the one
  written to ``results.csv``.
"""

import logging
import time
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from django.conf import settings
from joblib import Parallel, delayed
from scipy import stats
from threadpoolctl import threadpool_limits

from l2rm.services import (
    BlockCoefficients,
    as_vectorized,
    l2rm_lambda_schedule,
    l2rm_regularized,
    quantize_matrix_responses,
    rearrange,
)
from lowrank.services import frozen, nuclear_norm
from lrmr.services import (
    Dataset,
    SurrogateCovs,
    lambda_schedule,
    prediction_error,
    quantize_dataset,
    surrogate_covariances,
    unquantized,
)
from lrmr.solvers import (
    EstimateReport,
    SolverConfig,
    constrained_lasso,
    ols_baseline,
    regularized_lasso,
)
from quantization.services import QuantConfig, make_generator
from synthdata.services import (
    GenSpec,
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
    signal_scaled_recipe,
    train_test_split,
)

from .config import ConfigError, ExperimentConfig

logger = logging.getLogger(__name__)

TRUTH_STREAM, DATA_STREAM, DITHER_STREAM, SPLIT_STREAM = range(4)

METRICS = ("frob_error", "rel_error", "pred_error")

LAMBDA_MULTIPLIERS = (0.5, 1.0, 2.0, 4.0)


class SlopeFitError(ValueError):
    pass


def derive_seed(base_seed: int, *key: int) -> int:
    """Stable 32-bit seed for the stream ``key`` under ``base_seed``."""

    sequence = np.random.SeedSequence(base_seed, spawn_key=tuple(int(k) for k in key))
    return int(sequence.generate_state(1)[0])


def stream(base_seed: int, *key: int) -> np.random.Generator:
    return make_generator(derive_seed(base_seed, *key))


def resolve_threads(threads: Optional[int]) -> int:
    return settings.QUANTLAB_THREADS if threads is None else threads


@dataclass(frozen=True)
class TrialRecord:
    """One row of ``results.csv``; field order is the column order."""

    model: str
    n: int
    d1: int
    d2: int
    r: int
    delta1: float
    delta2: float
    trial: int
    seed: int
    frob_error: float
    rel_error: float
    pred_error: float
    iterations: int
    runtime_ms: float
    converged: bool

    @property
    def cell(self) -> Tuple[int, float, float]:
        return self.n, self.delta1, self.delta2

    @property
    def failed(self) -> bool:
        return not np.isfinite(self.frob_error)

    def sort_key(self):
        return self.n, self.delta1, self.delta2, self.trial, self.model


def _finite_stats(values: Sequence[float]) -> Tuple[float, float]:
    finite = np.asarray([v for v in values if np.isfinite(v)], dtype=float)
    if finite.size == 0:
        return float("nan"), float("nan")
    return float(finite.mean()), float(finite.std())


def cell_key(n: int, delta1: float, delta2: float) -> str:
    return f"n={n},delta1={delta1!r},delta2={delta2!r}"


@dataclass(frozen=True)
class ExperimentResult:
    records: Tuple[TrialRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(sorted(self.records, key=TrialRecord.sort_key)))

    def cells(self) -> List[Tuple[int, float, float]]:
        return sorted({record.cell for record in self.records})

    def cell_records(self, n: int, delta1: float, delta2: float) -> List[TrialRecord]:
        return [record for record in self.records if record.cell == (n, delta1, delta2)]

    def mean(self, metric: str, n: int, delta1: float, delta2: float) -> float:
        return _finite_stats([getattr(r, metric) for r in self.cell_records(n, delta1, delta2)])[0]

    def curve(self, metric: str, delta1: float, delta2: float) -> List[Tuple[int, float]]:
        """``(n, mean metric)`` along the n grid for one quantization setting."""

        ns = sorted({n for n, d1, d2 in self.cells() if (d1, d2) == (delta1, delta2)})
        return [(n, self.mean(metric, n, delta1, delta2)) for n in ns]

    @property
    def failed(self) -> int:
        return sum(record.failed for record in self.records)

    def summary(self) -> Dict[str, Dict]:
        summary = {}
        for n, delta1, delta2 in self.cells():
            records = self.cell_records(n, delta1, delta2)
            entry = {
                "n": n,
                "delta1": delta1,
                "delta2": delta2,
                "trials": len(records),
                "failed": sum(record.failed for record in records),
            }
            for metric in METRICS + ("iterations",):
                mean, std = _finite_stats([getattr(record, metric) for record in records])
                entry[metric] = {"mean": mean, "std": std}
            summary[cell_key(n, delta1, delta2)] = entry
        return summary


@dataclass(frozen=True)
class ComparisonResult:
    """Paired sweeps run on identical data, e.g. ``dithered``/``undithered``."""

    results: Dict[str, ExperimentResult]

    def __getitem__(self, label: str) -> ExperimentResult:
        return self.results[label]

    def items(self):
        return self.results.items()


@dataclass(frozen=True)
class CalibrationResult:
    best_scale: float
    mean_errors: Dict[float, float]


@lru_cache(maxsize=8)
def _load_truth_matrix(path: str) -> np.ndarray:
    return frozen(load_matrix_csv(path))


def draw_truth(cfg: ExperimentConfig, trial: int):
    """The trial's ``Theta0`` (a matrix, or blocks for the l2rm model)."""

    gen = cfg.gen
    rng = stream(cfg.base_seed, TRUTH_STREAM, 0 if gen.fixed_truth else trial)
    if cfg.model == "l2rm":
        if gen.truth == "demo":
            return make_demo_blocks_l2rm()
        if gen.truth == "shapes":
            return make_shape_blocks(gen.shape_size)
        return gen_lowrank_blocks(gen.s, gen.p, gen.q, gen.block_rank, rng)
    if gen.truth == "demo":
        return make_demo_theta_lrmr()
    if gen.truth == "matrix":
        return _load_truth_matrix(gen.theta_path)
    return gen_lowrank_theta(GenSpec(d1=gen.d1, d2=gen.d2, r=gen.r), rng)


def fit(model: str, covs: SurrogateCovs, lam: float, radius: float, solver: SolverConfig) -> EstimateReport:
    if model == "ols":
        return ols_baseline(covs)
    if model == "lrmr_constrained":
        return constrained_lasso(covs, radius, solver)
    return regularized_lasso(covs, lam, solver)


def _estimate_lrmr(cfg, theta0, n, delta1, delta2, data_rng, dither_rng):
    gen = cfg.gen
    solver = cfg.solver.to_solver_config()
    if gen.signal_scaled:
        clean = gen_lrmr_dataset(theta0, n, 0.0, data_rng, gen.covariates)
        recipe = signal_scaled_recipe(theta0, clean.X)
        data = Dataset(X=clean.X, Y=clean.Y + recipe.noise_std * data_rng.standard_normal(clean.Y.shape))
        unit = recipe.signal_magnitude
    else:
        noise_std = resolve_noise_std(gen.noise_level, gen.noise_as_std)
        data = gen_lrmr_dataset(theta0, n, noise_std, data_rng, gen.covariates)
        unit = 1.0
    qconfig = QuantConfig(delta1 * unit, delta2 * unit, cfg.dither_enabled)
    covs = surrogate_covariances(quantize_dataset(data, qconfig, dither_rng))
    d1, d2 = theta0.shape
    radius = cfg.radius if cfg.radius is not None else nuclear_norm(theta0)
    report = fit(cfg.model, covs, lambda_schedule(d1, d2, n, cfg.lambda_scale), radius, solver)
    return report.theta_hat, report, data


def _estimate_l2rm(cfg, blocks: BlockCoefficients, n, delta1, delta2, data_rng, dither_rng):
    gen = cfg.gen
    noise_std = resolve_noise_std(gen.noise_level, gen.noise_as_std)
    data = gen_l2rm_dataset(blocks, n, noise_std, data_rng, gen.covariates)
    qdata = quantize_matrix_responses(data, QuantConfig(delta1, delta2, cfg.dither_enabled), dither_rng)
    p, q = blocks.block_shape
    lam = l2rm_lambda_schedule(p, q, n, cfg.lambda_scale)
    estimate, report = l2rm_regularized(qdata, lam, cfg.solver.to_solver_config())
    return rearrange(estimate), report, as_vectorized(data)


def _truth_shape(truth) -> Tuple[np.ndarray, int]:
    if isinstance(truth, BlockCoefficients):
        return rearrange(truth), sum(truth.ranks())
    return np.asarray(truth), int(np.linalg.matrix_rank(truth))


def _failed_record(model, n, d1, d2, r, delta1, delta2, trial, seed, runtime_ms) -> TrialRecord:
    nan = float("nan")
    return TrialRecord(model, n, d1, d2, r, delta1, delta2, trial, seed, nan, nan, nan, 0, runtime_ms, False)


def _elapsed_ms(cfg: ExperimentConfig, start: float) -> float:
    return round((time.perf_counter() - start) * 1000.0, 3) if cfg.record_runtime else 0.0


def run_trial(
    cfg: ExperimentConfig, n_index: int, n: int, delta_index: int, delta1: float, delta2: float, trial: int
) -> TrialRecord:
    """Generate, quantize and estimate once. Solver failures become a failed record."""

    truth = draw_truth(cfg, trial)
    theta0, r = _truth_shape(truth)
    d1, d2 = theta0.shape
    seed = derive_seed(cfg.base_seed, DITHER_STREAM, n_index, delta_index, trial)
    data_rng = stream(cfg.base_seed, DATA_STREAM, n_index, trial)
    dither_rng = make_generator(seed)

    start = time.perf_counter()
    try:
        with threadpool_limits(limits=1):
            if cfg.model == "l2rm":
                theta_hat, report, data = _estimate_l2rm(cfg, truth, n, delta1, delta2, data_rng, dither_rng)
            else:
                theta_hat, report, data = _estimate_lrmr(cfg, theta0, n, delta1, delta2, data_rng, dither_rng)
            pred = prediction_error(theta_hat, data)
    except (ValueError, ArithmeticError) as exc:
        logger.warning(
            "Trial %d of %s at n=%d delta=(%g, %g) failed: %s", trial, cfg.model, n, delta1, delta2, exc
        )
        return _failed_record(cfg.model, n, d1, d2, r, delta1, delta2, trial, seed, _elapsed_ms(cfg, start))

    frob = float(np.linalg.norm(theta_hat - theta0))
    scale = float(np.linalg.norm(theta0))
    return TrialRecord(
        model=cfg.model,
        n=n,
        d1=d1,
        d2=d2,
        r=r,
        delta1=delta1,
        delta2=delta2,
        trial=trial,
        seed=seed,
        frob_error=frob,
        rel_error=frob / scale if scale > 0 else float("nan"),
        pred_error=pred,
        iterations=report.iterations,
        runtime_ms=_elapsed_ms(cfg, start),
        converged=report.converged,
    )


def run_error_curve(cfg: ExperimentConfig, threads: Optional[int] = None) -> ExperimentResult:
    """Every grid cell times every trial; records are sorted by (n, delta1, delta2, trial)."""

    tasks = [(cfg, *cell, trial) for cell in cfg.cells() for trial in range(cfg.trials)]
    records = Parallel(n_jobs=resolve_threads(threads))(delayed(run_trial)(*task) for task in tasks)
    result = ExperimentResult(tuple(records))
    logger.info(
        "Sweep %s (%s) finished: %d records, %d failed", cfg.name, cfg.model, len(records), result.failed
    )
    return result


def run_dither_comparison(cfg: ExperimentConfig, threads: Optional[int] = None) -> ComparisonResult:
    """The same sweep with and without dither; without it both sides are quantized directly."""

    return ComparisonResult(
        {
            "dithered": run_error_curve(cfg.replace(dither_enabled=True), threads),
            "undithered": run_error_curve(cfg.replace(dither_enabled=False), threads),
        }
    )


def run_lasso_vs_ols(cfg: ExperimentConfig, threads: Optional[int] = None) -> ComparisonResult:
    """Lasso and OLS on identical quantized data (the streams do not depend on the model)."""

    if cfg.model == "l2rm":
        raise ConfigError("the OLS comparison needs vector responses", "model")
    lasso_model = cfg.model if cfg.model != "ols" else "lrmr_regularized"
    return ComparisonResult(
        {
            "lasso": run_error_curve(cfg.replace(model=lasso_model), threads),
            "ols": run_error_curve(cfg.replace(model="ols"), threads),
        }
    )


@dataclass(frozen=True)
class RealDataReference:
    """Lasso fit on unquantized training data, used as ``Theta0``."""

    theta0: np.ndarray
    lambda0: float
    sigma_hat: float
    rank: int


def fit_reference(cfg: ExperimentConfig, train: Dataset) -> RealDataReference:
    lam0 = lambda_schedule(train.d1, train.d2, train.n, cfg.lambda_scale)
    with threadpool_limits(limits=1):
        report = regularized_lasso(surrogate_covariances(unquantized(train)), lam0, cfg.solver.to_solver_config())
    theta0 = report.theta_hat
    sigma_hat = float(np.sqrt(np.mean((train.Y - theta0.T @ train.X) ** 2)))
    return RealDataReference(theta0=theta0, lambda0=lam0, sigma_hat=sigma_hat, rank=int(np.linalg.matrix_rank(theta0)))


def real_data_lambda(reference: RealDataReference, delta1: float, delta2: float) -> float:
    """``lambda0 * (sigma + (delta1 + delta2) / 2) / sigma``: coarser data needs a larger penalty."""

    if reference.sigma_hat == 0:
        return reference.lambda0
    return reference.lambda0 * ((reference.sigma_hat + (delta1 + delta2) / 2.0) / reference.sigma_hat)


def run_real_trial(
    cfg: ExperimentConfig,
    train: Dataset,
    test: Dataset,
    reference: RealDataReference,
    delta_index: int,
    delta1: float,
    delta2: float,
    trial: int,
) -> TrialRecord:
    theta0 = reference.theta0
    d1, d2 = theta0.shape
    seed = derive_seed(cfg.base_seed, DITHER_STREAM, 0, delta_index, trial)
    start = time.perf_counter()
    try:
        with threadpool_limits(limits=1):
            qdata = quantize_dataset(train, QuantConfig(delta1, delta2, cfg.dither_enabled), make_generator(seed))
            radius = cfg.radius if cfg.radius is not None else nuclear_norm(theta0)
            report = fit(
                cfg.model,
                surrogate_covariances(qdata),
                real_data_lambda(reference, delta1, delta2),
                radius,
                cfg.solver.to_solver_config(),
            )
            pred = prediction_error(report.theta_hat, test)
    except (ValueError, ArithmeticError) as exc:
        logger.warning("Real-data trial %d at delta=(%g, %g) failed: %s", trial, delta1, delta2, exc)
        return _failed_record(
            cfg.model, train.n, d1, d2, reference.rank, delta1, delta2, trial, seed, _elapsed_ms(cfg, start)
        )

    frob = float(np.linalg.norm(report.theta_hat - theta0))
    scale = float(np.linalg.norm(theta0))
    return TrialRecord(
        model=cfg.model,
        n=train.n,
        d1=d1,
        d2=d2,
        r=reference.rank,
        delta1=delta1,
        delta2=delta2,
        trial=trial,
        seed=seed,
        frob_error=frob,
        rel_error=frob / scale if scale > 0 else float("nan"),
        pred_error=pred,
        iterations=report.iterations,
        runtime_ms=_elapsed_ms(cfg, start),
        converged=report.converged,
    )


def run_real_data_study(cfg: ExperimentConfig, threads: Optional[int] = None) -> ExperimentResult:
    """Sweep the delta grids on a CSV dataset, measuring error against the unquantized fit.

    With ``data.n_test > 0`` the columns are split once and the prediction
    error is measured on the held-out part; otherwise on the training data.
    """

    if cfg.data is None:
        raise ConfigError("real-data studies need a data section", "data")
    if cfg.model == "l2rm":
        raise ConfigError("real-data studies use vector responses", "model")
    data = load_csv_dataset(cfg.data.path_x, cfg.data.path_y, transpose=cfg.data.transpose)
    if cfg.data.n_test:
        train, test = train_test_split(data, cfg.data.n_test, stream(cfg.base_seed, SPLIT_STREAM))
    else:
        train = test = data

    reference = fit_reference(cfg, train)
    logger.info(
        "Reference fit on %d samples: lambda0=%.4g sigma_hat=%.4g rank=%d",
        train.n,
        reference.lambda0,
        reference.sigma_hat,
        reference.rank,
    )
    tasks = [
        (cfg, train, test, reference, delta_index, delta1, delta2, trial)
        for delta_index, (delta1, delta2) in enumerate(cfg.delta_pairs)
        for trial in range(cfg.trials)
    ]
    records = Parallel(n_jobs=resolve_threads(threads))(delayed(run_real_trial)(*task) for task in tasks)
    result = ExperimentResult(tuple(records))
    logger.info("Real-data sweep %s finished: %d records, %d failed", cfg.name, len(records), result.failed)
    return result


def calibrate_lambda_scale(
    cfg: ExperimentConfig, multipliers: Iterable[float] = LAMBDA_MULTIPLIERS, threads: Optional[int] = None
) -> CalibrationResult:
    """Pilot search for the lambda scale: the multiple of ``cfg.lambda_scale`` with the least mean error."""

    if cfg.model not in ("lrmr_regularized", "l2rm"):
        raise ConfigError("lambda calibration needs a regularized model", "model")
    mean_errors = {}
    for multiplier in multipliers:
        scale = cfg.lambda_scale * multiplier
        result = run_error_curve(cfg.replace(lambda_scale=scale), threads)
        mean_errors[scale] = _finite_stats([record.frob_error for record in result.records])[0]
    finite = {scale: error for scale, error in mean_errors.items() if np.isfinite(error)}
    if not finite:
        raise ArithmeticError("every calibration trial failed")
    best = min(finite, key=finite.get)
    logger.info("Calibrated lambda scale for %s: %g", cfg.name, best)
    return CalibrationResult(best_scale=best, mean_errors=mean_errors)


def fit_loglog_slope(points: Iterable[Tuple[float, float]]) -> float:
    """Least-squares slope of ``log(error)`` against ``log(n)``."""

    points = list(points)
    if len(points) < 3:
        raise SlopeFitError(f"need at least three points, got {len(points)}")
    ns, errors = np.asarray(points, dtype=float).T
    if not (np.all(np.isfinite(errors)) and np.all(ns > 0) and np.all(errors > 0)):
        raise SlopeFitError("slope fitting needs positive, finite sample sizes and errors")
    slope, _ = np.polyfit(np.log(ns), np.log(errors), 1)
    return float(slope)


def coarsening_steps(pairs) -> List[Tuple[Tuple[float, float], Tuple[float, float]]]:
    """Pairs ``(a, b)`` of quantization levels where ``b`` is an immediate componentwise-coarser neighbour of ``a``.

    On a product grid these are the delta2 steps at fixed delta1 and the delta1 steps at fixed
    delta2; on a paired grid they are consecutive diagonal points. Incomparable levels are never paired.
    """

    pairs = sorted(set(pairs))
    steps = []
    for low in pairs:
        above = [high for high in pairs if high != low and high[0] >= low[0] and high[1] >= low[1]]
        for high in above:
            if not any(mid != high and mid[0] <= high[0] and mid[1] <= high[1] for mid in above):
                steps.append((low, high))
    return steps


def is_monotone_in_delta(result: ExperimentResult, metric: str = "frob_error", slack: float = 0.02) -> bool:
    """Mean error never drops by more than ``slack`` (relative) along any coarsening step."""

    for n in sorted({cell[0] for cell in result.cells()}):
        pairs = [(d1, d2) for m, d1, d2 in result.cells() if m == n]
        for low, high in coarsening_steps(pairs):
            if result.mean(metric, n, *high) < result.mean(metric, n, *low) * (1.0 - slack):
                return False
    return True


def floor_ratio(result: ExperimentResult, delta1: float, delta2: float, metric: str = "frob_error") -> float:
    """Mean error at the largest n over the mean error at the middle of the n grid."""

    curve = result.curve(metric, delta1, delta2)
    return curve[-1][1] / curve[(len(curve) - 1) // 2][1]


def degradation_trend(result: ExperimentResult, metric: str = "rel_error") -> float:
    """Spearman correlation between delta2 and the mean error, pooled over n."""

    deltas = sorted({cell[2] for cell in result.cells()})
    if len(deltas) < 2:
        return float("nan")
    means = [
        _finite_stats([getattr(r, metric) for r in result.records if r.delta2 == delta])[0] for delta in deltas
    ]
    return float(stats.spearmanr(deltas, means).statistic)
