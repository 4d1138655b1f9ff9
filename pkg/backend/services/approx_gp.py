"""
Scalable GP approximations: subset of data, local nearest-neighbor GPs and
the robust Bayesian committee machine. All share the squared-exponential
core in services.gp.
"""
import os
import math
import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy import linalg
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

import sys
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from services.rng import SplitMix64
from services.gp import (
    DEFAULT_MULTISTARTS,
    GPHyperparameters,
    ScaledGP,
    cholesky_with_retries,
    condition,
    correlation,
    fit_hyperparameters,
    fit_scaled_gp,
    gaussian_draws,
    standardize,
)

logger = logging.getLogger("duqbench.approx_gp")

LOCAL_HYPER_SUBSET = 300
KMEDOIDS_SAMPLE = 1000
KMEDOIDS_MAX_SWAPS = 20
# batch of test points solved together by local_nn_gp
LOCAL_BATCH = 128


# Size formulas

def neighborhood_size(n: int) -> int:
    """min(max(30, floor(sqrt n)), 100)"""
    return min(max(30, math.isqrt(n)), 100)


def sod_subset_size(n: int) -> int:
    """min(max(100, 2 floor(sqrt n)), 300, n - 1)"""
    return min(max(100, 2 * math.isqrt(n)), 300, n - 1)


def rff_feature_count(n: int) -> int:
    """min(512, 2 floor(sqrt n))"""
    return min(512, 2 * math.isqrt(n))


def partition_count(n: int) -> int:
    """floor(sqrt(n) / 2), at least one"""
    return max(1, math.isqrt(n) // 2)


# sod_gp

def maximin_subset(X: np.ndarray, size: int, seed: int) -> np.ndarray:
    """
    Greedy farthest-point selection. The first index is seed-determined; each
    next point maximizes its distance to those already chosen (lowest index on ties).
    """
    n = X.shape[0]
    size = min(int(size), n)
    first = int(SplitMix64(seed).integers(n, 1)[0])
    chosen = [first]
    nearest = np.linalg.norm(X - X[first], axis=1)
    nearest[first] = -np.inf
    for _ in range(size - 1):
        nxt = int(np.argmax(nearest))
        chosen.append(nxt)
        nearest = np.minimum(nearest, np.linalg.norm(X - X[nxt], axis=1))
        nearest[chosen] = -np.inf
    return np.array(chosen, dtype=np.int64)


def fit_sod_gp(
    X: np.ndarray,
    y: np.ndarray,
    seed: int,
    subset_size: Optional[int] = None,
    multistarts: int = DEFAULT_MULTISTARTS,
) -> ScaledGP:
    n = X.shape[0]
    size = int(subset_size) if subset_size else sod_subset_size(n)
    idx = maximin_subset(X, max(1, size), seed)
    logger.debug("sod_gp: subset of %d / %d", idx.shape[0], n)
    return fit_scaled_gp(X[idx], y[idx], seed, multistarts=multistarts)


def predict_sod_gp(state: ScaledGP, X: np.ndarray, M: int, seed: int) -> np.ndarray:
    return state.draws(X, M, seed)


# local_nn_gp

@dataclass
class LocalGPState:
    X: np.ndarray
    z: np.ndarray
    y_mean: float
    y_sd: float
    hyp: GPHyperparameters
    tree: cKDTree
    neighborhood: int


def fit_local_nn_gp(
    X: np.ndarray,
    y: np.ndarray,
    seed: int,
    neighborhood: Optional[int] = None,
    hyper_subset: int = LOCAL_HYPER_SUBSET,
    multistarts: int = DEFAULT_MULTISTARTS,
) -> LocalGPState:
    """
    Hyperparameters are fit once on a random subset; neighbors are searched
    in lengthscale-scaled input space.
    """
    n = X.shape[0]
    z, y_mean, y_sd = standardize(y)
    idx = SplitMix64(seed).choice(n, min(int(hyper_subset), n))
    hyp = fit_hyperparameters([(X[idx], z[idx])], seed, multistarts=multistarts)
    k = int(neighborhood) if neighborhood else neighborhood_size(n)
    k = max(1, min(k, n))
    return LocalGPState(X, z, y_mean, y_sd, hyp, cKDTree(X / hyp.lengthscales), k)


def _local_solve_single(Xn: np.ndarray, zn: np.ndarray, x: np.ndarray, hyp: GPHyperparameters):
    signal = hyp.variance * correlation(Xn, Xn, hyp.lengthscales)
    L, g = cholesky_with_retries(signal, hyp.variance, hyp.nugget)
    cross = hyp.variance * correlation(x[None, :], Xn, hyp.lengthscales)[0]
    alpha = linalg.cho_solve((L, True), zn, check_finite=False)
    v = linalg.solve_triangular(L, cross, lower=True, check_finite=False)
    return float(cross @ alpha), max(hyp.variance - float(v @ v), 0.0), hyp.variance * g


def predict_local_nn_gp(state: LocalGPState, X: np.ndarray, M: int, seed: int) -> np.ndarray:
    hyp = state.hyp
    ell = hyp.lengthscales
    k = state.neighborhood
    _, nbrs = state.tree.query(X / ell, k=k)
    nbrs = np.asarray(nbrs).reshape(X.shape[0], k)

    m = X.shape[0]
    mean = np.empty(m)
    var = np.empty(m)
    eye = np.eye(k)
    for start in range(0, m, LOCAL_BATCH):
        stop = min(start + LOCAL_BATCH, m)
        idx = nbrs[start:stop]
        a = state.X[idx] / ell                       # (b, k, p)
        x = X[start:stop] / ell                       # (b, p)
        sq_a = np.sum(a**2, axis=2)
        gram = np.einsum("bip,bjp->bij", a, a)
        R = np.exp(-0.5 * np.maximum(sq_a[:, :, None] + sq_a[:, None, :] - 2.0 * gram, 0.0))
        K = hyp.variance * (R + hyp.nugget * eye)
        cross = hyp.variance * np.exp(-0.5 * np.sum((a - x[:, None, :]) ** 2, axis=2))
        try:
            np.linalg.cholesky(K)
        except np.linalg.LinAlgError:
            for b, row in enumerate(range(start, stop)):
                mean[row], latent, noise = _local_solve_single(
                    state.X[idx[b]], state.z[idx[b]], X[row], hyp
                )
                var[row] = latent + noise
            continue
        rhs = np.stack([state.z[idx], cross], axis=2)  # (b, k, 2)
        sol = np.linalg.solve(K, rhs)
        mean[start:stop] = np.sum(cross * sol[:, :, 0], axis=1)
        latent = np.maximum(hyp.variance - np.sum(cross * sol[:, :, 1], axis=1), 0.0)
        var[start:stop] = latent + hyp.variance * hyp.nugget

    draws = gaussian_draws(mean, var, M, seed)
    return draws * state.y_sd + state.y_mean


# rbcm

def k_medoids(X: np.ndarray, k: int, seed: int) -> np.ndarray:
    """
    PAM medoids (BUILD then SWAP) on a seed-determined sample of at most
    KMEDOIDS_SAMPLE points. Returns indices into X.
    """
    n = X.shape[0]
    sample = np.sort(SplitMix64(seed).choice(n, min(KMEDOIDS_SAMPLE, n)))
    D = cdist(X[sample], X[sample])
    s = sample.shape[0]
    k = min(k, s)

    # BUILD: start at the most central point, then add the largest cost reduction
    medoids = [int(np.argmin(D.sum(axis=1)))]
    nearest = D[:, medoids[0]].copy()
    for _ in range(k - 1):
        gain = np.maximum(nearest[:, None] - D, 0.0).sum(axis=0)
        gain[medoids] = -np.inf
        c = int(np.argmax(gain))
        medoids.append(c)
        nearest = np.minimum(nearest, D[:, c])

    # SWAP: best improving (medoid, non-medoid) exchange until none improves
    for _ in range(KMEDOIDS_MAX_SWAPS):
        Dm = D[:, medoids]
        order = np.argsort(Dm, axis=1, kind="stable")
        d1 = Dm[np.arange(s), order[:, 0]]
        d2 = Dm[np.arange(s), order[:, 1]] if k > 1 else np.full(s, np.inf)
        current = d1.sum()
        best_cost, best_swap = current, None
        for i in range(k):
            base = np.where(order[:, 0] == i, d2, d1)
            cost = np.minimum(base[:, None], D).sum(axis=0)
            cost[medoids] = np.inf
            h = int(np.argmin(cost))
            if cost[h] < best_cost - 1e-12:
                best_cost, best_swap = cost[h], (i, h)
        if best_swap is None:
            break
        medoids[best_swap[0]] = best_swap[1]

    return sample[np.array(medoids, dtype=np.int64)]


def assign_partitions(X: np.ndarray, medoids: np.ndarray) -> List[np.ndarray]:
    labels = np.argmin(cdist(X, X[medoids]), axis=1)
    return [np.flatnonzero(labels == j) for j in range(medoids.shape[0])]


@dataclass
class RBCMState:
    experts: List[ScaledGP]


def fit_rbcm(
    X: np.ndarray,
    y: np.ndarray,
    seed: int,
    partitions: Optional[int] = None,
    multistarts: int = DEFAULT_MULTISTARTS,
) -> RBCMState:
    """
    Experts on k-medoids partitions with hyperparameters shared across
    experts, chosen by the summed expert marginal likelihoods.
    """
    n = X.shape[0]
    k = int(partitions) if partitions else partition_count(n)
    if k <= 1:
        groups = [np.arange(n)]
    else:
        groups = [g for g in assign_partitions(X, k_medoids(X, k, seed)) if g.size]
    z, y_mean, y_sd = standardize(y)
    hyp = fit_hyperparameters([(X[g], z[g]) for g in groups], seed, multistarts=multistarts)
    experts = [ScaledGP(condition(X[g], z[g], hyp), y_mean, y_sd) for g in groups]
    logger.debug("rbcm: %d experts, sizes %s", len(experts), [g.size for g in groups])
    return RBCMState(experts)


def rbcm_aggregate(means: np.ndarray, variances: np.ndarray, prior_variance: float):
    """
    Robust BCM combination of expert latent predictions (experts x points).
    beta_k = 0.5 (log prior_variance - log var_k).
    """
    variances = np.clip(variances, 1e-12 * prior_variance, prior_variance)
    beta = 0.5 * (math.log(prior_variance) - np.log(variances))
    precision = np.sum(beta / variances, axis=0) + (1.0 - np.sum(beta, axis=0)) / prior_variance
    var = 1.0 / precision
    mean = var * np.sum(beta * means / variances, axis=0)
    return mean, var


def predict_rbcm(state: RBCMState, X: np.ndarray, M: int, seed: int) -> np.ndarray:
    if len(state.experts) == 1:
        return state.experts[0].draws(X, M, seed)

    first = state.experts[0]
    hyp = first.posterior.hyp
    latent = [e.posterior.predict(X) for e in state.experts]
    means = np.stack([mu for mu, _ in latent])
    variances = np.stack([v for _, v in latent])
    mean, var = rbcm_aggregate(means, variances, hyp.variance)
    noise = max(e.posterior.noise_variance for e in state.experts)
    draws = gaussian_draws(mean, var + noise, M, seed)
    return draws * first.y_sd + first.y_mean
