"""
Conjugate normal-inverse-gamma regression, shared by blm and rffgp.

    y | beta, s2 ~ N(Phi beta, s2 I)
    beta | s2    ~ N(0, s2 diag(1 / prior_precision))
    s2           ~ InvGamma(a0, b0)
"""
import os
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import gammaincinv, gammaln

import sys
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from services.rng import SplitMix64

DEFAULT_PRIOR_PRECISION = 1e-6
DEFAULT_A0 = 1e-3
DEFAULT_B0 = 1e-3


@dataclass
class NIGPosterior:
    mean: np.ndarray      # posterior coefficient mean
    chol: np.ndarray      # lower Cholesky factor of the posterior precision (Phi'Phi + Lambda)
    a: float
    b: float
    log_evidence: float

    @property
    def df(self) -> float:
        return 2.0 * self.a


def nig_posterior(
    Phi: np.ndarray,
    y: np.ndarray,
    prior_precision=DEFAULT_PRIOR_PRECISION,
    a0: float = DEFAULT_A0,
    b0: float = DEFAULT_B0,
) -> NIGPosterior:
    n, k = Phi.shape
    lam = np.broadcast_to(np.asarray(prior_precision, dtype=np.float64), (k,))
    A = Phi.T @ Phi + np.diag(lam)
    C = linalg.cholesky(A, lower=True, check_finite=False)
    mean = linalg.cho_solve((C, True), Phi.T @ y, check_finite=False)

    resid = y - Phi @ mean
    # residual form keeps b positive for exactly fitted data
    b = b0 + 0.5 * (float(resid @ resid) + float(mean @ (lam * mean)))
    a = a0 + 0.5 * n

    log_evidence = (
        -0.5 * n * math.log(2.0 * math.pi)
        + 0.5 * float(np.sum(np.log(lam)))
        - float(np.sum(np.log(np.diag(C))))
        + a0 * math.log(b0) - a * math.log(b)
        + float(gammaln(a)) - float(gammaln(a0))
    )
    return NIGPosterior(mean, C, a, b, log_evidence)


def predictive_draws(post: NIGPosterior, Phi_new: np.ndarray, M: int, seed: int) -> np.ndarray:
    """
    M x m joint draws from the multivariate-t predictive:
    s2 from its inverse gamma, beta given s2, then observation noise.
    """
    rng = SplitMix64(seed)
    u = np.maximum(rng.random(M), 2.0**-53)
    s2 = post.b / gammaincinv(post.a, u)
    k = post.mean.shape[0]
    z = rng.normal((M, k))
    # C^-T z has covariance (C C^T)^-1
    offsets = linalg.solve_triangular(post.chol, z.T, lower=True, trans="T", check_finite=False).T
    beta = post.mean[None, :] + np.sqrt(s2)[:, None] * offsets
    eps = rng.normal((M, Phi_new.shape[0]))
    return beta @ Phi_new.T + np.sqrt(s2)[:, None] * eps


def predictive_mean(post: NIGPosterior, Phi_new: np.ndarray) -> np.ndarray:
    return Phi_new @ post.mean


def with_intercept(X: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((X.shape[0], 1)), X])


def random_fourier_features(X: np.ndarray, frequencies: np.ndarray, phases: np.ndarray) -> np.ndarray:
    """sqrt(2/D) cos(X W^T + b) for D rows of W"""
    D = frequencies.shape[0]
    return math.sqrt(2.0 / D) * np.cos(X @ frequencies.T + phases[None, :])
