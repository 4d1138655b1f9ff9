"""
Squared-exponential Gaussian process core shared by the GP-family emulators.

Hyperparameters live on the log scale as
    theta = [log l_1, ..., log l_p, log sigma^2, log g]
with covariance K = sigma^2 (R + g I), R_ij = exp(-0.5 sum_d (x_id - x_jd)^2 / l_d^2).
Responses are standardized before fitting; the constant mean is their sample mean.
"""
import os
import math
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.optimize import minimize

import sys
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from services.rng import SplitMix64

logger = logging.getLogger("duqbench.gp")

LOG_LENGTHSCALE_BOUNDS = (math.log(0.01), math.log(10.0))
LOG_NUGGET_BOUNDS = (math.log(1e-8), math.log(1e2))
NUGGET_INIT = 1e-6
MAX_JITTER = 1e-2
DEFAULT_MULTISTARTS = 5
MAX_OPTIMIZER_ITERS = 200


class GPNumericalError(np.linalg.LinAlgError):
    """Covariance stayed indefinite after every nugget retry"""


@dataclass
class GPHyperparameters:
    lengthscales: np.ndarray
    variance: float
    nugget: float  # relative to variance

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([
            np.log(self.lengthscales),
            [math.log(self.variance), math.log(self.nugget)],
        ])

    @classmethod
    def from_theta(cls, theta: np.ndarray) -> "GPHyperparameters":
        theta = np.asarray(theta, dtype=np.float64)
        return cls(np.exp(theta[:-2]), float(np.exp(theta[-2])), float(np.exp(theta[-1])))


def standardize(y: np.ndarray) -> Tuple[np.ndarray, float, float]:
    """(y - mean) / sd, with sd taken as 1 for constant responses"""
    mean = float(np.mean(y))
    sd = float(np.std(y))
    if not sd > 0:
        sd = 1.0
    return (y - mean) / sd, mean, sd


def correlation(X1: np.ndarray, X2: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    a = X1 / lengthscales
    b = X2 / lengthscales
    sq = (
        np.sum(a**2, axis=1)[:, None]
        + np.sum(b**2, axis=1)[None, :]
        - 2.0 * a @ b.T
    )
    return np.exp(-0.5 * np.maximum(sq, 0.0))


def cholesky_with_retries(signal: np.ndarray, variance: float, nugget: float) -> Tuple[np.ndarray, float]:
    """
    Lower Cholesky factor of signal + variance * g * I.
    On failure g grows 10x per retry, up to MAX_JITTER.
    Returns (L, g actually used).
    """
    g = nugget
    n = signal.shape[0]
    while True:
        K = signal + variance * g * np.eye(n)
        try:
            return linalg.cholesky(K, lower=True, check_finite=False), g
        except linalg.LinAlgError:
            if g >= MAX_JITTER:
                raise GPNumericalError(
                    f"covariance not positive definite with nugget {g:.1e}"
                ) from None
            g = min(g * 10.0, MAX_JITTER)


def _block_nll(theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> Tuple[float, np.ndarray]:
    hyp = GPHyperparameters.from_theta(theta)
    n, p = X.shape
    signal = hyp.variance * correlation(X, X, hyp.lengthscales)
    L, g = cholesky_with_retries(signal, hyp.variance, hyp.nugget)
    alpha = linalg.cho_solve((L, True), y, check_finite=False)
    value = 0.5 * float(y @ alpha) + float(np.sum(np.log(np.diag(L)))) + 0.5 * n * math.log(2.0 * math.pi)

    K_inv = linalg.cho_solve((L, True), np.eye(n), check_finite=False)
    W = K_inv - np.outer(alpha, alpha)
    grad = np.empty(p + 2)
    # dK/dlog l_d = signal * (x_id - x_jd)^2 / l_d^2
    Ms = W * signal
    row = Ms.sum(axis=1)
    for d in range(p):
        x = X[:, d]
        weighted = 2.0 * float(x**2 @ row) - 2.0 * float(x @ Ms @ x)
        grad[d] = 0.5 * weighted / hyp.lengthscales[d] ** 2
    # dK/dlog sigma^2 = K
    grad[p] = 0.5 * (n - float(y @ alpha))
    # dK/dlog g = sigma^2 g I
    grad[p + 1] = 0.5 * hyp.variance * g * float(np.trace(W))
    return value, grad


def neg_log_marginal_likelihood(
    theta: np.ndarray, blocks: Sequence[Tuple[np.ndarray, np.ndarray]]
) -> Tuple[float, np.ndarray]:
    """Summed negative log marginal likelihood over independent blocks, with gradient"""
    total = 0.0
    grad = np.zeros(len(theta))
    for X, y in blocks:
        value, g = _block_nll(theta, X, y)
        total += value
        grad += g
    return total, grad


def fit_hyperparameters(
    blocks: Sequence[Tuple[np.ndarray, np.ndarray]],
    seed: int,
    multistarts: int = DEFAULT_MULTISTARTS,
    nugget: Optional[float] = None,
) -> GPHyperparameters:
    """
    Maximize the (summed) marginal likelihood with bounded L-BFGS-B from
    seed-derived starting points. A fixed nugget removes log g from the search.
    """
    p = blocks[0][0].shape[1]
    rng = SplitMix64(seed)
    starts = np.empty((multistarts, p + 2))
    u = rng.random((multistarts, p + 2))
    starts[:, :p] = math.log(0.05) + u[:, :p] * (math.log(2.0) - math.log(0.05))
    starts[:, p] = math.log(0.5) + u[:, p] * (math.log(2.0) - math.log(0.5))
    starts[:, p + 1] = math.log(1e-6) + u[:, p + 1] * (math.log(1e-1) - math.log(1e-6))
    starts[0, p + 1] = math.log(NUGGET_INIT)

    bounds = [LOG_LENGTHSCALE_BOUNDS] * p + [(None, None)]
    if nugget is None:
        bounds.append(LOG_NUGGET_BOUNDS)

    def objective(free: np.ndarray) -> Tuple[float, np.ndarray]:
        theta = free if nugget is None else np.append(free, math.log(nugget))
        try:
            value, grad = neg_log_marginal_likelihood(theta, blocks)
        except np.linalg.LinAlgError:
            return 1e25, np.zeros_like(free)
        return value, (grad if nugget is None else grad[:-1])

    best_value, best_theta = np.inf, None
    for start in starts:
        x0 = start if nugget is None else start[:-1]
        result = minimize(
            objective, x0, jac=True, method="L-BFGS-B", bounds=bounds,
            options={"maxiter": MAX_OPTIMIZER_ITERS},
        )
        if np.isfinite(result.fun) and result.fun < best_value:
            best_value, best_theta = result.fun, result.x

    if best_theta is None or best_value >= 1e25:
        raise GPNumericalError("no multistart produced a finite likelihood")
    theta = best_theta if nugget is None else np.append(best_theta, math.log(nugget))
    hyp = GPHyperparameters.from_theta(theta)
    logger.debug("GP hyperparameters: l=%s var=%.3g g=%.3g", hyp.lengthscales, hyp.variance, hyp.nugget)
    return hyp


@dataclass
class GPPosterior:
    """A GP conditioned on (X, y) in standardized units"""
    X: np.ndarray
    L: np.ndarray
    alpha: np.ndarray
    hyp: GPHyperparameters
    nugget_used: float

    @property
    def noise_variance(self) -> float:
        return self.hyp.variance * self.nugget_used

    def predict(self, X_new: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Latent mean and variance at X_new"""
        cross = self.hyp.variance * correlation(X_new, self.X, self.hyp.lengthscales)
        mean = cross @ self.alpha
        v = linalg.solve_triangular(self.L, cross.T, lower=True, check_finite=False)
        var = np.maximum(self.hyp.variance - np.sum(v**2, axis=0), 0.0)
        return mean, var


def condition(X: np.ndarray, y: np.ndarray, hyp: GPHyperparameters) -> GPPosterior:
    signal = hyp.variance * correlation(X, X, hyp.lengthscales)
    L, g = cholesky_with_retries(signal, hyp.variance, hyp.nugget)
    alpha = linalg.cho_solve((L, True), y, check_finite=False)
    return GPPosterior(X, L, alpha, hyp, g)


def gaussian_draws(mean: np.ndarray, var: np.ndarray, M: int, seed: int) -> np.ndarray:
    """M x n independent normal draws per column"""
    z = SplitMix64(seed).normal((M, mean.shape[0]))
    return mean[None, :] + np.sqrt(var)[None, :] * z


@dataclass
class ScaledGP:
    """A conditioned GP plus the response standardization it was fit under"""
    posterior: GPPosterior
    y_mean: float
    y_sd: float

    def predict(self, X_new: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Predictive mean and observation variance on the original scale"""
        mean, var = self.posterior.predict(X_new)
        var = var + self.posterior.noise_variance
        return mean * self.y_sd + self.y_mean, var * self.y_sd**2

    def draws(self, X_new: np.ndarray, M: int, seed: int) -> np.ndarray:
        mean, var = self.predict(X_new)
        return gaussian_draws(mean, var, M, seed)


def fit_scaled_gp(
    X: np.ndarray,
    y: np.ndarray,
    seed: int,
    multistarts: int = DEFAULT_MULTISTARTS,
    nugget: Optional[float] = None,
) -> ScaledGP:
    z, y_mean, y_sd = standardize(y)
    hyp = fit_hyperparameters([(X, z)], seed, multistarts=multistarts, nugget=nugget)
    return ScaledGP(condition(X, z, hyp), y_mean, y_sd)
