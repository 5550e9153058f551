"""Seeded generator outputs pinned as CSV fixtures.

The tests compare these against ``QUANTLAB_FIXTURES_DIR``; ``manage.py gen --golden``
writes them there.
"""

from typing import Callable, Dict

import numpy as np

from l2rm.services import vectorize_responses
from quantization.services import make_generator

from .services import (
    GenSpec,
    gen_bernoulli_covariates,
    gen_l2rm_dataset,
    gen_lowrank_blocks,
    gen_lowrank_theta,
    gen_lrmr_dataset,
    make_demo_theta_lrmr,
    resolve_noise_std,
)

LOWRANK_SPEC = GenSpec(d1=50, d2=60, r=5, seed=2023)


def golden_lowrank_theta() -> np.ndarray:
    return gen_lowrank_theta(LOWRANK_SPEC, make_generator(LOWRANK_SPEC.seed))


def golden_lrmr_responses() -> np.ndarray:
    data = gen_lrmr_dataset(make_demo_theta_lrmr()[:6, :4], 10, resolve_noise_std(0.1), make_generator(8))
    return data.Y


def golden_l2rm_responses() -> np.ndarray:
    rng = make_generator(5)
    data = gen_l2rm_dataset(gen_lowrank_blocks(2, 3, 3, 1, rng), 6, 0.1, rng)
    return vectorize_responses(data.Y)


def golden_bernoulli() -> np.ndarray:
    return gen_bernoulli_covariates(5, 8, make_generator(7))


GOLDEN_FIXTURES: Dict[str, Callable[[], np.ndarray]] = {
    "lowrank_theta_50x60_r5.csv": golden_lowrank_theta,
    "lrmr_dataset_y_4x10.csv": golden_lrmr_responses,
    "l2rm_dataset_vecy_9x6.csv": golden_l2rm_responses,
    "bernoulli_5x8.csv": golden_bernoulli,
}
