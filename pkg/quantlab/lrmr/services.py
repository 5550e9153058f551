"""Quantized low-rank multivariate regression: data, surrogate covariances and loss.

Model: ``y_k = Theta0.T @ x_k + eps_k`` with ``x_k`` in R^d1, ``y_k`` in R^d2.
Samples are stored column-wise, so ``X`` is d1 x n and ``Y`` is d2 x n.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from lowrank.services import ShapeMismatchError, as_matrix, frozen
from quantization.services import QuantConfig, QuantRecord, quantize_with_dither

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        x = as_matrix(self.X, "X")
        y = as_matrix(self.Y, "Y")
        if x.shape[1] != y.shape[1]:
            raise ShapeMismatchError(
                f"X has {x.shape[1]} samples but Y has {y.shape[1]}"
            )
        object.__setattr__(self, "X", frozen(x))
        object.__setattr__(self, "Y", frozen(y))

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @property
    def d1(self) -> int:
        return self.X.shape[0]

    @property
    def d2(self) -> int:
        return self.Y.shape[0]

    def take(self, columns) -> "Dataset":
        return Dataset(X=self.X[:, columns], Y=self.Y[:, columns])


@dataclass(frozen=True)
class QuantizedDataset:
    """Dithered-quantized copy of a :class:`Dataset` plus the per-side records."""

    Xdot: np.ndarray
    Ydot: np.ndarray
    config: QuantConfig
    x_record: Optional[QuantRecord] = None
    y_record: Optional[QuantRecord] = None

    @property
    def n(self) -> int:
        return self.Xdot.shape[1]


@dataclass(frozen=True)
class SurrogateCovs:
    """Bias-corrected covariance surrogates built from quantized samples."""

    Sxx: np.ndarray
    Sxy: np.ndarray
    n: int
    config: QuantConfig

    @property
    def d1(self) -> int:
        return self.Sxx.shape[0]

    @property
    def d2(self) -> int:
        return self.Sxy.shape[1]


def quantize_dataset(data: Dataset, config: QuantConfig, rng: np.random.Generator) -> QuantizedDataset:
    """Triangular dither on covariates at ``delta1``, uniform dither on responses at ``delta2``."""

    x_record = quantize_with_dither(data.X, config.delta1, config.covariate_kind, rng)
    y_record = quantize_with_dither(data.Y, config.delta2, config.response_kind, rng)
    return QuantizedDataset(
        Xdot=x_record.quantized,
        Ydot=y_record.quantized,
        config=config,
        x_record=x_record,
        y_record=y_record,
    )


def unquantized(data: Dataset) -> QuantizedDataset:
    return QuantizedDataset(Xdot=data.X, Ydot=data.Y, config=QuantConfig())


def surrogate_covariances(qdata: QuantizedDataset) -> SurrogateCovs:
    """``Sxx = Xdot Xdot^T / n - delta1^2/4 I`` and ``Sxy = Xdot Ydot^T / n``.

    Both are unbiased for the population covariances; the correction term is
    the (signal-independent) variance of triangular-dither quantization noise.
    """

    n = qdata.n
    if n < 1:
        raise ValueError("surrogate covariances need at least one sample")
    xdot = np.asarray(qdata.Xdot, dtype=float)
    sxx = xdot @ xdot.T / n
    if qdata.config.delta1 > 0 and qdata.config.dither_enabled:
        sxx -= (qdata.config.delta1**2 / 4.0) * np.eye(sxx.shape[0])
    sxx = (sxx + sxx.T) / 2.0
    sxy = xdot @ np.asarray(qdata.Ydot, dtype=float).T / n
    return SurrogateCovs(Sxx=frozen(sxx), Sxy=frozen(sxy), n=n, config=qdata.config)


def _check_theta(theta: np.ndarray, covs: SurrogateCovs) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != covs.Sxy.shape:
        raise ShapeMismatchError(
            f"theta has shape {theta.shape}, expected {covs.Sxy.shape}"
        )
    return theta


def empirical_loss(theta, covs: SurrogateCovs) -> float:
    """``<Theta Theta^T, Sxx> - 2 <Theta, Sxy>``."""

    theta = _check_theta(theta, covs)
    return float(np.sum(theta * (covs.Sxx @ theta)) - 2.0 * np.sum(theta * covs.Sxy))


def loss_gradient(theta, covs: SurrogateCovs) -> np.ndarray:
    theta = _check_theta(theta, covs)
    return 2.0 * (covs.Sxx @ theta) - 2.0 * covs.Sxy


def lambda_schedule(d1: int, d2: int, n: int, scale_C: float) -> float:
    """``scale_C * sqrt((d1 + d2) / n)``; the rank factor is absorbed into ``scale_C``."""

    if min(d1, d2, n) <= 0 or scale_C <= 0:
        raise ValueError("lambda_schedule needs positive dimensions, sample size and scale")
    return float(scale_C * np.sqrt((d1 + d2) / n))


def prediction_error(theta, data: Dataset) -> float:
    """Relative prediction error ``||Y - Theta^T X||_F / ||Y||_F``."""

    theta = np.asarray(theta, dtype=float)
    if theta.shape != (data.d1, data.d2):
        raise ShapeMismatchError(
            f"theta has shape {theta.shape}, expected {(data.d1, data.d2)}"
        )
    scale = np.linalg.norm(data.Y)
    if scale == 0:
        raise ValueError("prediction error is undefined when Y is identically zero")
    return float(np.linalg.norm(data.Y - theta.T @ data.X) / scale)
