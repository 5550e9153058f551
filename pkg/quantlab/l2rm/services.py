"""Low-rank linear regression with matrix responses.

Model: ``Y_k = sum_i x_ki * Theta^(i) + E_k`` with ``s`` coefficient blocks of
shape ``p x q``. Stacking ``vec(Theta^(i))^T`` as rows gives the rearranged
``s x pq`` parameter, and ``vec(Y_k) = Theta_tilde^T x_k + vec(E_k)`` is an
ordinary multivariate regression with ``d1 = s`` and ``d2 = pq``. The penalty
``sum_i ||Theta^(i)||_nu`` is separable across rows of the rearranged
parameter, so its proximal map thresholds each reshaped block on its own.

``vec`` is column-major throughout.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from lowrank.services import ShapeMismatchError, as_matrix, frozen, nuclear_norm, operator_norm, svt
from lrmr.services import Dataset, SurrogateCovs, surrogate_covariances, QuantizedDataset
from lrmr.solvers import EstimateReport, SolverConfig, proximal_gradient
from quantization.services import QuantConfig, QuantRecord, quantize_with_dither

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BlockCoefficients:
    """``s`` coefficient blocks stored as an ``(s, p, q)`` array."""

    blocks: np.ndarray

    def __post_init__(self):
        blocks = np.asarray(self.blocks, dtype=float)
        if blocks.ndim != 3 or 0 in blocks.shape:
            raise ShapeMismatchError(f"blocks must have shape (s, p, q), got {blocks.shape}")
        if not np.all(np.isfinite(blocks)):
            raise ValueError("blocks have non-finite entries")
        object.__setattr__(self, "blocks", frozen(blocks))

    @classmethod
    def from_list(cls, blocks) -> "BlockCoefficients":
        shapes = {np.shape(block) for block in blocks}
        if len(shapes) != 1:
            raise ShapeMismatchError(f"blocks must share one shape, got {sorted(shapes)}")
        return cls(np.stack([np.asarray(block, dtype=float) for block in blocks]))

    @property
    def s(self) -> int:
        return self.blocks.shape[0]

    @property
    def block_shape(self) -> Tuple[int, int]:
        return self.blocks.shape[1], self.blocks.shape[2]

    def concatenated(self) -> np.ndarray:
        """``[Theta^(1), ..., Theta^(s)]`` as one ``p x sq`` matrix."""
        return np.concatenate(list(self.blocks), axis=1)

    def ranks(self, tol: float = 1e-10) -> Tuple[int, ...]:
        return tuple(int(np.linalg.matrix_rank(block, tol=tol)) for block in self.blocks)


@dataclass(frozen=True)
class MatrixResponseDataset:
    """Covariates ``X`` (s x n) and responses ``Y`` stored as an ``(n, p, q)`` array."""

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        x = as_matrix(self.X, "X")
        y = np.asarray(self.Y, dtype=float)
        if y.ndim != 3:
            raise ShapeMismatchError(f"responses must have shape (n, p, q), got {y.shape}")
        if y.shape[0] != x.shape[1]:
            raise ShapeMismatchError(f"X has {x.shape[1]} samples but there are {y.shape[0]} responses")
        if not np.all(np.isfinite(y)):
            raise ValueError("responses have non-finite entries")
        object.__setattr__(self, "X", frozen(x))
        object.__setattr__(self, "Y", frozen(y))

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @property
    def s(self) -> int:
        return self.X.shape[0]

    @property
    def response_shape(self) -> Tuple[int, int]:
        return self.Y.shape[1], self.Y.shape[2]


@dataclass(frozen=True)
class QuantizedMatrixResponseDataset:
    Xdot: np.ndarray
    Ydot: np.ndarray
    config: QuantConfig
    x_record: Optional[QuantRecord] = None
    y_record: Optional[QuantRecord] = None

    @property
    def response_shape(self) -> Tuple[int, int]:
        return self.Ydot.shape[1], self.Ydot.shape[2]


def vectorize_responses(responses: np.ndarray) -> np.ndarray:
    """``(n, p, q)`` responses to the ``pq x n`` matrix of column-major ``vec(Y_k)``."""

    n, p, q = responses.shape
    return np.ascontiguousarray(responses.transpose(0, 2, 1).reshape(n, p * q).T)


def rearrange(blocks: BlockCoefficients) -> np.ndarray:
    """Row ``i`` of the result is ``vec(Theta^(i))^T``."""

    s, p, q = blocks.blocks.shape
    return blocks.blocks.transpose(0, 2, 1).reshape(s, p * q)


def inverse_rearrange(matrix, p: int, q: int) -> BlockCoefficients:
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[1] != p * q:
        raise ShapeMismatchError(f"cannot split a {m.shape} matrix into {p} x {q} blocks")
    return BlockCoefficients(m.reshape(m.shape[0], q, p).transpose(0, 2, 1))


def as_vectorized(data: MatrixResponseDataset) -> Dataset:
    return Dataset(X=data.X, Y=vectorize_responses(data.Y))


def quantize_matrix_responses(
    data: MatrixResponseDataset, config: QuantConfig, rng: np.random.Generator
) -> QuantizedMatrixResponseDataset:
    """Same scheme as vector responses: triangular dither on ``x_k``, uniform on ``Y_k`` entrywise."""

    x_record = quantize_with_dither(data.X, config.delta1, config.covariate_kind, rng)
    y_record = quantize_with_dither(data.Y, config.delta2, config.response_kind, rng)
    return QuantizedMatrixResponseDataset(
        Xdot=x_record.quantized,
        Ydot=y_record.quantized,
        config=config,
        x_record=x_record,
        y_record=y_record,
    )


def l2rm_surrogates(qdata: QuantizedMatrixResponseDataset) -> SurrogateCovs:
    """``Sxx`` is s x s and ``Sxy = (1/n) sum_k xdot_k vec(Ydot_k)^T`` is s x pq."""

    vectorized = QuantizedDataset(
        Xdot=qdata.Xdot, Ydot=vectorize_responses(qdata.Ydot), config=qdata.config
    )
    return surrogate_covariances(vectorized)


def blockwise_svt(matrix, tau: float, p: int, q: int) -> np.ndarray:
    """Proximal map of ``tau * sum_i ||block_i||_nu`` in rearranged coordinates."""

    blocks = inverse_rearrange(matrix, p, q).blocks
    thresholded = np.stack([svt(block, tau) for block in blocks])
    return rearrange(BlockCoefficients(thresholded))


def block_nuclear_norm(matrix, p: int, q: int) -> float:
    return float(sum(nuclear_norm(block) for block in inverse_rearrange(matrix, p, q).blocks))


def zero_threshold(covs: SurrogateCovs, p: int, q: int) -> float:
    """Smallest ``lambda`` at which the regularized estimate is identically zero."""

    blocks = inverse_rearrange(covs.Sxy, p, q).blocks
    return 2.0 * max(operator_norm(block) for block in blocks)


def l2rm_regularized(
    qdata: QuantizedMatrixResponseDataset, lam: float, cfg: SolverConfig = SolverConfig()
) -> Tuple[BlockCoefficients, EstimateReport]:
    """Regularized Lasso ``L1(Theta) + lam * sum_i ||Theta^(i)||_nu`` on quantized data."""

    if lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam!r}")
    p, q = qdata.response_shape
    covs = l2rm_surrogates(qdata)
    report = proximal_gradient(
        covs,
        prox=lambda point, eta: blockwise_svt(point, eta * lam, p, q),
        penalty=lambda theta: lam * block_nuclear_norm(theta, p, q),
        cfg=cfg,
    )
    return inverse_rearrange(report.theta_hat, p, q), report


def l2rm_lambda_schedule(p: int, q: int, n: int, scale_C: float) -> float:
    """``scale_C * sqrt((p + q) / n)``."""

    if min(p, q, n) <= 0 or scale_C <= 0:
        raise ValueError("l2rm_lambda_schedule needs positive dimensions, sample size and scale")
    return float(scale_C * np.sqrt((p + q) / n))
