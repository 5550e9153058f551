"""Lasso estimators on quantized data.

Both programs minimise the surrogate loss ``L(Theta)`` of
:mod:`lrmr.services`:

* constrained Lasso, ``min L(Theta)`` over ``||Theta||_nu <= R``, solved by
  projected gradient;
* regularized Lasso, ``min L(Theta) + lambda ||Theta||_nu``, solved by
  proximal gradient with optional Nesterov momentum.

The iteration itself (:func:`proximal_gradient`) only needs a gradient, a
proximal map and a penalty, so the matrix-response estimator reuses it with a
blockwise proximal map.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np
from scipy import linalg

from lowrank.services import (
    frozen,
    lambda_extremes,
    nuclear_norm,
    project_nuclear_ball,
    svt,
)

from .services import SurrogateCovs, empirical_loss, loss_gradient

logger = logging.getLogger(__name__)

# Prox maps take (point, step) and return the proximal point.
ProxMap = Callable[[np.ndarray, float], np.ndarray]
Penalty = Callable[[np.ndarray], float]

MAX_BACKTRACKS = 60


class SingularCovarianceError(ValueError):
    def __init__(self, message: str = "OLS requires nonsingular surrogate covariance"):
        super().__init__(message)


@dataclass(frozen=True)
class StepPolicy:
    """``fixed`` uses ``eta``; ``backtracking`` starts from ``eta0`` and shrinks by ``beta``.

    ``eta0=None`` starts from ``1 / (2 * lambda_max(Sxx))``, the inverse gradient
    Lipschitz constant of the surrogate loss.
    """

    kind: str = "backtracking"
    eta: Optional[float] = None
    eta0: Optional[float] = None
    beta: float = 0.5

    def __post_init__(self):
        if self.kind not in ("fixed", "backtracking"):
            raise ValueError(f"unknown step policy {self.kind!r}")
        if self.kind == "fixed" and (self.eta is None or self.eta <= 0):
            raise ValueError("fixed step policy needs eta > 0")
        if self.eta0 is not None and self.eta0 <= 0:
            raise ValueError("eta0 must be positive")
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")

    @classmethod
    def fixed(cls, eta: float) -> "StepPolicy":
        return cls(kind="fixed", eta=eta)

    @classmethod
    def backtracking(cls, beta: float = 0.5, eta0: Optional[float] = None) -> "StepPolicy":
        return cls(kind="backtracking", beta=beta, eta0=eta0)


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 20000
    rel_tol: float = 1e-7
    step_policy: StepPolicy = field(default_factory=StepPolicy)
    acceleration: bool = True
    # Keeps the composite objective of every iterate on the report.
    record_objective: bool = False

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")


@dataclass(frozen=True)
class EstimateReport:
    theta_hat: np.ndarray
    iterations: int
    final_objective: float
    converged: bool
    lambda_min_sxx: float = float("nan")
    residual: float = float("nan")
    step_size: float = float("nan")
    objective_trace: Tuple[float, ...] = ()


def initial_step(covs: SurrogateCovs, policy: StepPolicy, lambda_max: float) -> float:
    if policy.kind == "fixed":
        return float(policy.eta)
    if policy.eta0 is not None:
        return float(policy.eta0)
    return 1.0 / max(2.0 * lambda_max, 1e-8)


def check_convexity(covs: SurrogateCovs) -> Tuple[float, float]:
    lambda_min, lambda_max = lambda_extremes(covs.Sxx)
    if lambda_min < 0:
        logger.warning(
            "Surrogate covariance is indefinite (lambda_min=%.3e); "
            "the program is non-convex and only stationarity is guaranteed.",
            lambda_min,
        )
    return lambda_min, lambda_max


def proximal_gradient(
    covs: SurrogateCovs,
    prox: ProxMap,
    penalty: Penalty,
    cfg: SolverConfig,
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    loss: Optional[Callable[[np.ndarray], float]] = None,
) -> EstimateReport:
    """Generic (accelerated) proximal gradient started at zero.

    Stops once the relative iterate change and the prox-stationarity residual
    ``||Theta - prox(Theta - eta * grad(Theta), eta)||_F`` both fall below
    ``rel_tol * max(1, ||Theta||_F)``. Momentum is reset whenever the step
    points against the previous direction.
    """

    gradient = gradient or (lambda theta: loss_gradient(theta, covs))
    loss = loss or (lambda theta: empirical_loss(theta, covs))
    lambda_min, lambda_max = check_convexity(covs)
    policy = cfg.step_policy
    eta = initial_step(covs, policy, lambda_max)

    theta = np.zeros(covs.Sxy.shape)
    anchor = theta
    momentum = 1.0
    converged = False
    residual = float("nan")
    trace = []
    iterations = 0

    for iterations in range(1, cfg.max_iters + 1):
        grad_anchor = gradient(anchor)
        candidate = prox(anchor - eta * grad_anchor, eta)
        if policy.kind == "backtracking":
            loss_anchor = loss(anchor)
            for _ in range(MAX_BACKTRACKS):
                step = candidate - anchor
                upper = loss_anchor + np.sum(grad_anchor * step) + np.sum(step**2) / (2.0 * eta)
                if loss(candidate) <= upper + 1e-12 * max(1.0, abs(upper)):
                    break
                eta *= policy.beta
                candidate = prox(anchor - eta * grad_anchor, eta)

        if cfg.acceleration:
            if np.sum((anchor - candidate) * (candidate - theta)) > 0:
                momentum = 1.0
                anchor = candidate
            else:
                next_momentum = (1.0 + np.sqrt(1.0 + 4.0 * momentum**2)) / 2.0
                anchor = candidate + ((momentum - 1.0) / next_momentum) * (candidate - theta)
                momentum = next_momentum
        else:
            anchor = candidate

        change = np.linalg.norm(candidate - theta)
        theta = candidate
        if cfg.record_objective:
            trace.append(loss(theta) + penalty(theta))

        scale = cfg.rel_tol * max(1.0, np.linalg.norm(theta))
        if change <= scale:
            residual = float(np.linalg.norm(theta - prox(theta - eta * gradient(theta), eta)))
            if residual <= scale:
                converged = True
                break

    if not converged:
        residual = float(np.linalg.norm(theta - prox(theta - eta * gradient(theta), eta)))
        logger.info(
            "Solver stopped at the iteration cap (%d) with residual %.3e", cfg.max_iters, residual
        )

    return EstimateReport(
        theta_hat=frozen(theta),
        iterations=iterations,
        final_objective=float(loss(theta) + penalty(theta)),
        converged=converged,
        lambda_min_sxx=lambda_min,
        residual=residual,
        step_size=eta,
        objective_trace=tuple(trace),
    )


def constrained_lasso(covs: SurrogateCovs, radius: float, cfg: SolverConfig = SolverConfig()) -> EstimateReport:
    """Projected gradient for ``min L(Theta)`` over the nuclear ball of ``radius``."""

    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius!r}")
    return proximal_gradient(
        covs,
        prox=lambda point, eta: project_nuclear_ball(point, radius),
        penalty=lambda theta: 0.0,
        cfg=cfg,
    )


def regularized_lasso(covs: SurrogateCovs, lam: float, cfg: SolverConfig = SolverConfig()) -> EstimateReport:
    """Proximal gradient for ``min L(Theta) + lam * ||Theta||_nu``."""

    if lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam!r}")
    return proximal_gradient(
        covs,
        prox=lambda point, eta: svt(point, eta * lam),
        penalty=lambda theta: lam * nuclear_norm(theta),
        cfg=cfg,
    )


def ols_baseline(covs: SurrogateCovs) -> EstimateReport:
    """Least squares on the surrogate loss: solve ``Sxx Theta = Sxy``."""

    lambda_min, _ = lambda_extremes(covs.Sxx)
    if lambda_min <= 1e-10:
        raise SingularCovarianceError()
    sxx = (covs.Sxx + covs.Sxx.T) / 2.0
    theta = linalg.solve(sxx, covs.Sxy, assume_a="pos")
    return EstimateReport(
        theta_hat=frozen(theta),
        iterations=0,
        final_objective=empirical_loss(theta, covs),
        converged=True,
        lambda_min_sxx=lambda_min,
        residual=float(np.linalg.norm(sxx @ theta - covs.Sxy)),
    )
