"""Synthetic data recipes and CSV ingestion.

Gaussian draws come from ``numpy.random.Generator.standard_normal`` (ziggurat
method on a PCG64 stream), so every recipe is reproducible from a seed.
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from scipy import linalg
from sklearn.model_selection import train_test_split as sklearn_split

from l2rm.services import BlockCoefficients, MatrixResponseDataset
from lowrank.services import as_matrix
from lrmr.services import Dataset

logger = logging.getLogger(__name__)

# Printed noise levels of the simulation recipes, read as variances by default.
LRMR_NOISE_LEVEL = 0.1
L2RM_NOISE_LEVEL = 0.01

DEMO_B = np.array([[0.5, 0.5], [0.4, 0.4]])
DEMO_D = np.ones((2, 2))


class DatasetParseError(ValueError):
    def __init__(self, message: str, path=None, line: Optional[int] = None):
        location = f"{path}:{line}: " if path is not None and line is not None else ""
        super().__init__(f"{location}{message}")
        self.path = path
        self.line = line


@dataclass(frozen=True)
class GenSpec:
    d1: int
    d2: int
    r: int
    n: int = 1000
    noise_std: float = float(np.sqrt(LRMR_NOISE_LEVEL))
    seed: int = 0

    def __post_init__(self):
        if min(self.d1, self.d2, self.r, self.n) <= 0:
            raise ValueError("dimensions, rank and sample count must be positive")
        if self.r > min(self.d1, self.d2):
            raise ValueError(f"rank {self.r} exceeds min(d1, d2) = {min(self.d1, self.d2)}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")


def resolve_noise_std(level: float, as_std: bool = False) -> float:
    """Turn a printed noise level into a standard deviation.

    ``N(0, 0.1 I)`` is read as variance 0.1 unless ``as_std`` is set.
    """

    if level < 0:
        raise ValueError("noise level must be nonnegative")
    return float(level) if as_std else float(np.sqrt(level))


def gen_lowrank_theta(spec: GenSpec, rng: np.random.Generator) -> np.ndarray:
    """``Theta1 @ Theta2`` with Gaussian factors, rescaled to unit Frobenius norm."""

    for _ in range(2):
        left = rng.standard_normal((spec.d1, spec.r))
        right = rng.standard_normal((spec.r, spec.d2))
        product = left @ right
        norm = np.linalg.norm(product)
        if norm > 0:
            return product / norm
        logger.warning("Degenerate low-rank draw (zero product); regenerating once.")
    raise ArithmeticError("low-rank generator produced a zero matrix twice")


def gen_lowrank_blocks(s: int, p: int, q: int, block_rank: int, rng: np.random.Generator) -> BlockCoefficients:
    """``s`` independent unit-norm blocks of rank ``block_rank``."""

    spec = GenSpec(d1=p, d2=q, r=block_rank)
    return BlockCoefficients(np.stack([gen_lowrank_theta(spec, rng) for _ in range(s)]))


def gen_bernoulli_covariates(d1: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Symmetric +-1 entries."""

    return 2.0 * rng.integers(0, 2, size=(d1, n)) - 1.0


def gen_covariates(kind: str, d1: int, n: int, rng: np.random.Generator) -> np.ndarray:
    if kind == "gaussian":
        return rng.standard_normal((d1, n))
    if kind == "bernoulli":
        return gen_bernoulli_covariates(d1, n, rng)
    raise ValueError(f"unknown covariate family {kind!r}")


def gen_lrmr_dataset(
    theta0, n: int, noise_std: float, rng: np.random.Generator, covariates: str = "gaussian"
) -> Dataset:
    """``y_k = Theta0^T x_k + eps_k`` with ``eps_k ~ N(0, noise_std^2 I)``."""

    theta0 = as_matrix(theta0, "theta0")
    if noise_std < 0:
        raise ValueError("noise_std must be nonnegative")
    d1, d2 = theta0.shape
    x = gen_covariates(covariates, d1, n, rng)
    y = theta0.T @ x
    if noise_std > 0:
        y = y + noise_std * rng.standard_normal((d2, n))
    return Dataset(X=x, Y=y)


def gen_l2rm_dataset(
    blocks: BlockCoefficients,
    n: int,
    noise_std: float,
    rng: np.random.Generator,
    covariates: str = "gaussian",
) -> MatrixResponseDataset:
    """``Y_k = sum_i x_ki Theta^(i) + E_k`` with i.i.d. ``N(0, noise_std^2)`` entries in ``E_k``."""

    if noise_std < 0:
        raise ValueError("noise_std must be nonnegative")
    s = blocks.s
    p, q = blocks.block_shape
    x = gen_covariates(covariates, s, n, rng)
    y = np.einsum("kn,kpq->npq", x, blocks.blocks)
    if noise_std > 0:
        y = y + noise_std * rng.standard_normal((n, p, q))
    return MatrixResponseDataset(X=x, Y=y)


def make_demo_theta_lrmr() -> np.ndarray:
    """50 x 60 truth with ten copies of ``B`` on the diagonal of its leading 20 x 20 block."""

    theta = np.zeros((50, 60))
    theta[:20, :20] = linalg.block_diag(*([DEMO_B] * 10))
    return theta


def make_demo_blocks_l2rm() -> BlockCoefficients:
    """Four 50 x 60 blocks built from ``C = diag(D, ..., D)`` (five all-ones 2 x 2 ``D``).

    Blocks 1-2 hold ``C/2`` and ``2C/5`` in the top-left 10 x 10 corner, blocks
    3-4 hold the same in the bottom-right corner.
    """

    c = linalg.block_diag(*([DEMO_D] * 5))
    blocks = np.zeros((4, 50, 60))
    blocks[0, :10, :10] = 0.5 * c
    blocks[1, :10, :10] = 0.4 * c
    blocks[2, -10:, -10:] = 0.5 * c
    blocks[3, -10:, -10:] = 0.4 * c
    return BlockCoefficients(blocks)


def make_shape_blocks(size: int = 64) -> BlockCoefficients:
    """Four approximately low-rank 0-1 images: square, cross, triangle and disk."""

    rows, cols = np.mgrid[0:size, 0:size]
    quarter, half = size // 4, size // 2
    square = (rows >= quarter) & (rows < 3 * quarter) & (cols >= quarter) & (cols < 3 * quarter)
    band = size // 8
    cross = (np.abs(rows - half) < band) | (np.abs(cols - half) < band)
    triangle = (rows >= quarter) & (cols >= quarter) & (cols - quarter <= rows - quarter) & (rows < 3 * quarter)
    disk = (rows - half + 0.5) ** 2 + (cols - half + 0.5) ** 2 <= (0.3 * size) ** 2
    return BlockCoefficients(np.stack([square, cross, triangle, disk]).astype(float))


@dataclass(frozen=True)
class SignalScaledRecipe:
    signal_magnitude: float
    noise_std: float
    delta2: float


def signal_scaled_recipe(theta0, x) -> SignalScaledRecipe:
    """Noise ``2e/5`` and ``delta2 = e/8`` where ``e`` is the mean absolute entry of ``Theta0^T X``."""

    e = float(np.mean(np.abs(as_matrix(theta0).T @ as_matrix(x))))
    return SignalScaledRecipe(signal_magnitude=e, noise_std=0.4 * e, delta2=e / 8.0)


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_matrix_csv(path, transpose: bool = False) -> np.ndarray:
    """Read a rectangular numeric CSV; a non-numeric first line is taken as a header."""

    path = Path(path)
    rows: List[List[float]] = []
    width = None
    with path.open(encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        for row in reader:
            line = reader.line_num
            cells = [cell.strip() for cell in row]
            if not cells or all(not cell for cell in cells):
                continue
            if not rows and width is None and not all(_is_number(cell) for cell in cells):
                # header line
                width = len(cells)
                continue
            if width is not None and len(cells) != width:
                raise DatasetParseError(
                    f"expected {width} values, found {len(cells)}", path=path, line=line
                )
            width = len(cells)
            try:
                values = [float(cell) for cell in cells]
            except ValueError as exc:
                raise DatasetParseError(f"non-numeric cell ({exc})", path=path, line=line) from exc
            if not all(np.isfinite(values)):
                raise DatasetParseError("non-finite value", path=path, line=line)
            rows.append(values)
    if not rows:
        raise DatasetParseError(f"{path}: no numeric rows found", path=path)
    matrix = np.array(rows)
    return matrix.T if transpose else matrix


def save_matrix_csv(path, matrix) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.atleast_2d(matrix), delimiter=",", fmt="%.17g")
    return path


def load_csv_dataset(path_x, path_y, transpose: bool = False) -> Dataset:
    """Covariates and responses stored one sample per column (``transpose`` for one per row)."""

    x = load_matrix_csv(path_x, transpose=transpose)
    y = load_matrix_csv(path_y, transpose=transpose)
    if x.shape[1] != y.shape[1]:
        raise DatasetParseError(
            f"sample-count mismatch: {path_x} has {x.shape[1]} samples, {path_y} has {y.shape[1]}",
            path=path_y,
        )
    logger.info("Loaded dataset d1=%d d2=%d n=%d", x.shape[0], y.shape[0], x.shape[1])
    return Dataset(X=x, Y=y)


def split_indices(n: int, n_test: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    if not 0 < n_test < n:
        raise ValueError(f"n_test must lie strictly between 0 and {n}, got {n_test}")
    seed = int(rng.integers(0, 2**31 - 1))
    train, test = sklearn_split(np.arange(n), test_size=n_test, random_state=seed, shuffle=True)
    return np.sort(train), np.sort(test)


def train_test_split(data: Dataset, n_test: int, rng: np.random.Generator) -> Tuple[Dataset, Dataset]:
    """Uniformly random column partition into ``n - n_test`` training and ``n_test`` test samples."""

    train, test = split_indices(data.n, n_test, rng)
    return data.take(train), data.take(test)
