"""
Space-filling and random designs on the unit hypercube
"""
import os
import csv
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

import sys
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config import MAXIMIN_ITERS_PER_POINT
from errors import DomainError
from services.rng import SplitMix64


class DesignType(Enum):
    """Available design families"""
    LHS = "LHS"
    MAXIMIN_LHS = "maximin_LHS"
    UNIFORM = "uniform"


@dataclass
class DesignMatrix:
    """n x p points in [0, 1]^p with provenance"""
    points: np.ndarray
    design_type: DesignType
    seed: int

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def p(self) -> int:
        return self.points.shape[1]


def _check_size(n: int, p: int) -> None:
    if int(n) < 1 or int(p) < 1:
        raise DomainError(f"Design needs n >= 1 and p >= 1, got n={n}, p={p}")


def _lhs_points(n: int, p: int, rng: SplitMix64) -> np.ndarray:
    strata = np.empty((n, p), dtype=np.float64)
    for j in range(p):
        strata[:, j] = rng.permutation(n)
    jitter = rng.random((n, p))
    points = (strata + jitter) / n
    # (k + u) / n may round up onto the next stratum boundary
    upper = np.nextafter((strata + 1.0) / n, 0.0)
    return np.minimum(points, upper)


def lhs(n: int, p: int, seed: int) -> DesignMatrix:
    """Latin hypercube: each column has one point per stratum [i/n, (i+1)/n)"""
    _check_size(n, p)
    rng = SplitMix64(seed)
    return DesignMatrix(_lhs_points(int(n), int(p), rng), DesignType.LHS, int(seed))


def min_pairwise_distance(points: np.ndarray) -> float:
    if points.shape[0] < 2:
        return float("inf")
    return float(np.min(pdist(points)))


def maximin_lhs(n: int, p: int, seed: int, iters: Optional[int] = None) -> DesignMatrix:
    """
    Latin hypercube improved by random within-column swaps.

    Starts from lhs(n, p, seed) and continues the same stream. Each iteration
    swaps the entries of two rows in one column, which keeps the stratum
    property, and keeps the swap only when the minimum pairwise distance
    does not decrease.
    """
    _check_size(n, p)
    n, p = int(n), int(p)
    if iters is None:
        iters = MAXIMIN_ITERS_PER_POINT * n
    if iters < 0:
        raise DomainError(f"iters must be >= 0, got {iters}")

    rng = SplitMix64(seed)
    points = _lhs_points(n, p, rng)
    if iters == 0 or n < 3:
        return DesignMatrix(points, DesignType.MAXIMIN_LHS, int(seed))

    dist = squareform(pdist(points))
    np.fill_diagonal(dist, np.inf)
    row_min = dist.min(axis=1)
    current = row_min.min()

    cols = rng.integers(p, iters)
    pairs = rng.integers(n, (iters, 2))
    for t in range(iters):
        a, b = int(pairs[t, 0]), int(pairs[t, 1])
        if a == b:
            continue
        j = int(cols[t])
        candidate = points[[a, b]].copy()
        candidate[0, j], candidate[1, j] = candidate[1, j], candidate[0, j]

        new_rows = cdist(candidate, points)
        new_rows[0, a] = new_rows[1, b] = np.inf
        new_rows[0, b] = new_rows[1, a] = np.linalg.norm(candidate[0] - candidate[1])

        # rows other than a, b keep their old distances except to a and b
        others = np.minimum(new_rows[0], new_rows[1])
        stale = (dist[:, a] <= row_min) | (dist[:, b] <= row_min)
        rest_min = row_min.copy()
        if np.any(stale):
            masked = dist[stale].copy()
            masked[:, [a, b]] = np.inf
            rest_min[stale] = masked.min(axis=1)
        new_row_min = np.minimum(rest_min, others)
        new_row_min[a] = new_rows[0].min()
        new_row_min[b] = new_rows[1].min()
        proposed = new_row_min.min()

        if proposed >= current:
            points[[a, b]] = candidate
            dist[a, :] = dist[:, a] = new_rows[0]
            dist[b, :] = dist[:, b] = new_rows[1]
            row_min = new_row_min
            current = proposed

    return DesignMatrix(points, DesignType.MAXIMIN_LHS, int(seed))


def uniform(n: int, p: int, seed: int) -> DesignMatrix:
    """i.i.d. uniform points"""
    _check_size(n, p)
    rng = SplitMix64(seed)
    return DesignMatrix(rng.random((int(n), int(p))), DesignType.UNIFORM, int(seed))


def make_design(design_type, n: int, p: int, seed: int) -> DesignMatrix:
    design_type = DesignType(design_type) if not isinstance(design_type, DesignType) else design_type
    if design_type is DesignType.LHS:
        return lhs(n, p, seed)
    if design_type is DesignType.MAXIMIN_LHS:
        return maximin_lhs(n, p, seed)
    return uniform(n, p, seed)


def design_to_csv(design: DesignMatrix, path: str) -> None:
    """One row per point, header x1..xp"""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([f"x{j + 1}" for j in range(design.p)])
        for row in design.points:
            writer.writerow([repr(float(v)) for v in row])
