"""
Proper scoring rules and summary metrics for ensemble predictions
"""
import os
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Tuple

import numpy as np

import sys
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config import (
    DEFAULT_CAP,
    DEFAULT_CRPS_QUANTILES,
    DEFAULT_CRPS_VARIANT,
    DEFAULT_EPSILON,
    DEFAULT_INTERVAL_ALPHA,
)
from errors import DomainError

# Below this reference sd a response is treated as constant
REF_SD_GUARD = 1e-12

CRPS_VARIANTS = ("printed", "fair")


@dataclass
class PredictiveEnsemble:
    """M x n_test matrix of predictive draws"""
    draws: np.ndarray

    def __post_init__(self):
        self.draws = np.asarray(self.draws, dtype=np.float64)
        if self.draws.ndim != 2:
            raise DomainError(f"Ensemble must be an M x n matrix, got shape {self.draws.shape}")
        if self.draws.shape[0] < 2:
            raise DomainError(f"Ensemble needs M >= 2 draws, got {self.draws.shape[0]}")
        if not np.all(np.isfinite(self.draws)):
            raise DomainError("Ensemble contains non-finite draws")

    @property
    def M(self) -> int:
        return self.draws.shape[0]

    @property
    def n_test(self) -> int:
        return self.draws.shape[1]


@dataclass
class ScoreConfig:
    epsilon: float = DEFAULT_EPSILON
    cap: float = DEFAULT_CAP
    interval_alpha: float = DEFAULT_INTERVAL_ALPHA
    crps_quantiles: List[float] = field(default_factory=lambda: list(DEFAULT_CRPS_QUANTILES))
    crps_variant: str = DEFAULT_CRPS_VARIANT

    def __post_init__(self):
        if not self.epsilon > 0:
            raise DomainError(f"epsilon must be > 0, got {self.epsilon}")
        if not 0 < self.interval_alpha < 1:
            raise DomainError(f"interval_alpha must lie in (0, 1), got {self.interval_alpha}")
        if not self.cap > 1:
            raise DomainError(f"cap must be > 1, got {self.cap}")
        if any(not 0 <= q <= 1 for q in self.crps_quantiles):
            raise DomainError("crps_quantiles must be probabilities")
        if self.crps_variant not in CRPS_VARIANTS:
            raise DomainError(f"Unknown crps_variant: {self.crps_variant}")

    @classmethod
    def from_settings(cls, settings) -> "ScoreConfig":
        return cls(
            epsilon=settings.epsilon,
            cap=settings.cap,
            interval_alpha=settings.interval_alpha,
            crps_quantiles=list(settings.crps_quantiles),
            crps_variant=settings.crps_variant,
        )


@dataclass
class MetricBundle:
    RMSE: float
    FVU: float
    CRPS_mean: float
    CRPS_median: float
    CRPS_quantiles: Dict[float, float]
    coverage: float
    interval_score: float
    fvu_defined: bool = True


def _pairwise_sums(sorted_draws: np.ndarray) -> np.ndarray:
    """sum_{j<k} |x_j - x_k| per column, from draws sorted along axis 0"""
    m = sorted_draws.shape[0]
    weights = 2.0 * np.arange(1, m + 1) - m - 1.0
    return weights @ sorted_draws


def _check_draws(y, draws) -> Tuple[float, np.ndarray]:
    draws = np.asarray(draws, dtype=np.float64).reshape(-1)
    if draws.shape[0] < 2:
        raise DomainError(f"CRPS needs at least 2 draws, got {draws.shape[0]}")
    y = float(y)
    if not math.isfinite(y) or not np.all(np.isfinite(draws)):
        raise DomainError("CRPS inputs must be finite")
    return y, draws


def crps_ensemble(y: float, draws) -> float:
    """
    Sample CRPS with pairwise constant 1/(2M(M-1)):
        (1/M) sum_j |x_j - y| - 1/(2M(M-1)) sum_{j<k} |x_j - x_k|
    """
    y, draws = _check_draws(y, draws)
    m = draws.shape[0]
    spread = _pairwise_sums(np.sort(draws)[:, None])[0]
    return float(np.mean(np.abs(draws - y)) - spread / (2.0 * m * (m - 1)))


def crps_fair(y: float, draws) -> float:
    """Fair (unbiased) ensemble CRPS; pairwise constant 1/(M(M-1))"""
    y, draws = _check_draws(y, draws)
    m = draws.shape[0]
    spread = _pairwise_sums(np.sort(draws)[:, None])[0]
    return float(np.mean(np.abs(draws - y)) - spread / (m * (m - 1)))


def crps_columns(y_test: np.ndarray, draws: np.ndarray, variant: str = DEFAULT_CRPS_VARIANT) -> np.ndarray:
    """Per-test-point CRPS for an M x n ensemble"""
    m = draws.shape[0]
    accuracy = np.mean(np.abs(draws - y_test[None, :]), axis=0)
    spread = _pairwise_sums(np.sort(draws, axis=0))
    if variant == "fair":
        return accuracy - spread / (m * (m - 1))
    return accuracy - spread / (2.0 * m * (m - 1))


def summary_metrics(y_test, ensemble: PredictiveEnsemble, cfg: ScoreConfig = None) -> MetricBundle:
    cfg = cfg or ScoreConfig()
    y_test = np.asarray(y_test, dtype=np.float64).reshape(-1)
    draws = ensemble.draws
    if draws.shape[1] != y_test.shape[0]:
        raise DomainError(
            f"Ensemble has {draws.shape[1]} columns for {y_test.shape[0]} test responses"
        )

    mean_pred = draws.mean(axis=0)
    mse = float(np.mean((mean_pred - y_test) ** 2))
    variance = float(np.var(y_test))
    fvu_defined = variance > 0.0
    fvu = mse / variance if fvu_defined else float("nan")

    crps = crps_columns(y_test, draws, cfg.crps_variant)
    quantiles = {
        float(q): float(v)
        for q, v in zip(cfg.crps_quantiles, np.quantile(crps, cfg.crps_quantiles))
    } if cfg.crps_quantiles else {}

    alpha = cfg.interval_alpha
    lower = np.quantile(draws, alpha / 2.0, axis=0)
    upper = np.quantile(draws, 1.0 - alpha / 2.0, axis=0)
    inside = (y_test >= lower) & (y_test <= upper)
    score = (
        (upper - lower)
        + (2.0 / alpha) * (lower - y_test) * (y_test < lower)
        + (2.0 / alpha) * (y_test - upper) * (y_test > upper)
    )

    return MetricBundle(
        RMSE=math.sqrt(mse),
        FVU=fvu,
        CRPS_mean=float(np.mean(crps)),
        CRPS_median=float(np.median(crps)),
        CRPS_quantiles=quantiles,
        coverage=float(np.mean(inside)),
        interval_score=float(np.mean(score)),
        fvu_defined=fvu_defined,
    )


def rescale_to_unit_variance(scores, ref_sd: float) -> Tuple[np.ndarray, bool]:
    """
    Divide scale-dependent scores (CRPS, RMSE, interval score) by ref_sd.
    Returns (rescaled, guarded); guarded is True when ref_sd is ~0 and the
    scores come back unchanged.
    """
    if ref_sd < 0:
        raise DomainError(f"ref_sd must be >= 0, got {ref_sd}")
    scores = np.asarray(scores, dtype=np.float64)
    if ref_sd < REF_SD_GUARD:
        return scores.copy(), True
    return scores / ref_sd, False


def relative_scores(scores_by_method: Mapping[str, float], cfg: ScoreConfig = None) -> Dict[str, float]:
    """r_m = min(cap, (s_m + eps) / (min_s + eps)) within one scenario"""
    cfg = cfg or ScoreConfig()
    if not scores_by_method:
        raise DomainError("relative_scores needs at least one method")
    values = {m: float(s) for m, s in scores_by_method.items()}
    if not all(math.isfinite(s) for s in values.values()):
        raise DomainError("relative_scores needs finite scores")
    best = min(values.values())
    denom = best + cfg.epsilon
    return {m: min(cfg.cap, (s + cfg.epsilon) / denom) for m, s in values.items()}
