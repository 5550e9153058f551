"""Dithered uniform quantization of scalars, vectors and matrices.

The quantizer maps a real ``a`` to the midpoint of its width-``delta`` cell,
``delta * (floor(a / delta) + 1/2)``. Dithered quantization adds random noise
before quantizing; for the two dithers used here the quantization error is
i.i.d. uniform on ``[-delta/2, delta/2]`` and independent of the input, and
with the triangular dither the noise variance is ``delta**2 / 4`` whatever
the signal.

Randomness always comes from an explicit ``numpy.random.Generator``; callers
running in parallel must hand every worker its own stream (see
``spawn_generators``).
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Union

import numpy as np
from scipy import stats

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


class NonFiniteSampleError(ValueError):
    """Raised when a quantizer input contains NaN or infinity."""

    def __init__(self, message: str = "non-finite sample"):
        super().__init__(message)


class DitherKind(str, Enum):
    UNIFORM = "uniform"
    TRIANGULAR = "triangular"
    # Direct quantization, only used to show why dithering matters.
    NONE = "none"


@dataclass(frozen=True)
class QuantConfig:
    """Quantization levels; ``0`` switches quantization off for that side."""

    delta1: float = 0.0  # covariates, triangular dither
    delta2: float = 0.0  # responses, uniform dither
    dither_enabled: bool = True

    def __post_init__(self):
        for name in ("delta1", "delta2"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be a finite nonnegative number, got {value!r}")

    @property
    def covariate_kind(self) -> DitherKind:
        return DitherKind.TRIANGULAR if self.dither_enabled else DitherKind.NONE

    @property
    def response_kind(self) -> DitherKind:
        return DitherKind.UNIFORM if self.dither_enabled else DitherKind.NONE


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class QuantRecord:
    """Result of quantizing one array, with the diagnostics needed to audit it.

    ``error`` is ``quantized - (input + dither)`` and ``noise`` is
    ``quantized - input``; ``noise == dither + error`` up to rounding.
    """

    quantized: np.ndarray
    dither: np.ndarray
    error: np.ndarray
    noise: np.ndarray
    delta: float
    kind: DitherKind

    @property
    def size(self) -> int:
        return int(self.quantized.size)

    @property
    def original(self) -> np.ndarray:
        return self.quantized - self.noise


def _check_finite(values: np.ndarray) -> None:
    if not np.all(np.isfinite(values)):
        raise NonFiniteSampleError()


def uniform_quantize(a: ArrayLike, delta: float) -> ArrayLike:
    """Apply ``Q_delta`` elementwise; ``delta == 0`` passes ``a`` through.

    Uses the mathematical floor, so inputs exactly on a cell boundary go to
    the cell above. There is no clipping range.
    """

    if delta < 0:
        raise ValueError(f"delta must be nonnegative, got {delta!r}")
    values = np.asarray(a, dtype=float)
    _check_finite(values)
    if delta == 0:
        result = values.copy()
    else:
        result = delta * (np.floor(values / delta) + 0.5)
    if np.ndim(a) == 0:
        return float(result)
    return result


def draw_uniform_dither(count, delta: float, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. samples of U[-delta/2, delta/2]; ``count`` may be an int or a shape."""

    if delta <= 0:
        raise ValueError(f"uniform dither needs delta > 0, got {delta!r}")
    return rng.uniform(-delta / 2.0, delta / 2.0, size=count)


def draw_triangular_dither(count, delta: float, rng: np.random.Generator) -> np.ndarray:
    """Sum of two independent U[-delta/2, delta/2] draws, supported on [-delta, delta]."""

    if delta <= 0:
        raise ValueError(f"triangular dither needs delta > 0, got {delta!r}")
    first = rng.uniform(-delta / 2.0, delta / 2.0, size=count)
    second = rng.uniform(-delta / 2.0, delta / 2.0, size=count)
    return first + second


def quantize_with_dither(
    values: ArrayLike,
    delta: float,
    kind: Union[DitherKind, str],
    rng: np.random.Generator,
) -> QuantRecord:
    """Quantize ``values`` to ``Q_delta(values + dither)`` and keep the diagnostics."""

    kind = DitherKind(kind)
    if delta < 0:
        raise ValueError(f"delta must be nonnegative, got {delta!r}")
    source = np.array(values, dtype=float)
    _check_finite(source)

    if delta == 0:
        zeros = np.zeros_like(source)
        return QuantRecord(
            quantized=_readonly(source),
            dither=_readonly(zeros),
            error=_readonly(zeros.copy()),
            noise=_readonly(zeros.copy()),
            delta=0.0,
            kind=kind,
        )

    if kind is DitherKind.UNIFORM:
        dither = draw_uniform_dither(source.shape, delta, rng)
    elif kind is DitherKind.TRIANGULAR:
        dither = draw_triangular_dither(source.shape, delta, rng)
    else:
        dither = np.zeros_like(source)

    dithered = source + dither
    quantized = delta * (np.floor(dithered / delta) + 0.5)
    return QuantRecord(
        quantized=_readonly(quantized),
        dither=_readonly(dither),
        error=_readonly(quantized - dithered),
        noise=_readonly(quantized - source),
        delta=float(delta),
        kind=kind,
    )


@dataclass(frozen=True)
class NoiseMoments:
    mean_noise: float
    var_noise: float
    mean_sq_noise: float
    mean_error: float
    ks_stat_error_vs_uniform: float
    ks_pvalue: float
    input_error_corr: float

    def as_dict(self) -> Dict[str, float]:
        return {
            "mean_noise": self.mean_noise,
            "var_noise": self.var_noise,
            "mean_sq_noise": self.mean_sq_noise,
            "mean_error": self.mean_error,
            "ks_stat": self.ks_stat_error_vs_uniform,
            "ks_pvalue": self.ks_pvalue,
            "input_error_corr": self.input_error_corr,
        }


def noise_moment_report(record: QuantRecord) -> NoiseMoments:
    """Summary statistics used to check the whitening properties of a dither.

    The KS statistic compares the quantization error with U[-delta/2, delta/2].
    """

    if record.size == 0:
        raise ValueError("cannot summarise an empty quantization record")
    if record.delta == 0:
        return NoiseMoments(0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0)

    noise = record.noise.ravel()
    error = record.error.ravel()
    original = record.original.ravel()
    ks = stats.kstest(error, "uniform", args=(-record.delta / 2.0, record.delta))

    if np.std(original) > 0 and np.std(error) > 0:
        corr = float(np.corrcoef(original, error)[0, 1])
    else:
        # constant input: correlation is undefined, report none
        corr = 0.0

    return NoiseMoments(
        mean_noise=float(noise.mean()),
        var_noise=float(noise.var()),
        mean_sq_noise=float(np.mean(noise**2)),
        mean_error=float(error.mean()),
        ks_stat_error_vs_uniform=float(ks.statistic),
        ks_pvalue=float(ks.pvalue),
        input_error_corr=corr,
    )


def make_generator(seed) -> np.random.Generator:
    """PCG64 generator; ``seed`` may be an int or a ``SeedSequence``."""

    return np.random.Generator(np.random.PCG64(seed))


def spawn_generators(seed, count: int) -> List[np.random.Generator]:
    """Independent child streams for parallel callers."""

    children = np.random.SeedSequence(seed).spawn(count)
    return [make_generator(child) for child in children]


def sample_inputs(distribution: str, n: int, rng: np.random.Generator) -> np.ndarray:
    """Test signals for the dither demo: ``gaussian``, ``uniform`` (U[0, 10]) or ``constant``."""

    if distribution == "gaussian":
        return rng.standard_normal(n)
    if distribution == "uniform":
        return rng.uniform(0.0, 10.0, size=n)
    if distribution == "constant":
        return np.full(n, 0.3)
    raise ValueError(f"unknown input distribution {distribution!r}")
