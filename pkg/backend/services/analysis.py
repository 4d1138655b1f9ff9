"""
Analysis of result tables: cumulative rank curves, CRPS heatmaps, Pareto
frontiers of accuracy against runtime, and rank-based performance clustering.
"""
import os
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.spatial.distance import pdist, squareform
from scipy.stats import spearmanr
from sklearn.cluster import DBSCAN

import sys
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config import HEATMAP_CEIL, HEATMAP_FLOOR
from errors import AnalysisError
from services.harness import key_columns, table_kind
from services.metrics import ScoreConfig, relative_scores

logger = logging.getLogger("duqbench.analysis")

CLUSTER_AXES = ("methods", "problems")
DEFAULT_MIN_SAMPLES = 3
EPS_FLOOR = 1e-9
DEFAULT_SIZE_THRESHOLD = 2000


def problem_column(t: pd.DataFrame) -> str:
    return "fname" if table_kind(t) == "synthetic" else "dname"


def _require_rows(t: pd.DataFrame, what: str) -> None:
    if t is None or t.empty:
        raise AnalysisError(f"{what} needs a nonempty result table")


def scenario_ranks(t: pd.DataFrame) -> pd.DataFrame:
    """Per-scenario competition ("min") ranks of CRPS, ascending"""
    keys = key_columns(t)
    counts = t.groupby(keys)["method"].nunique()
    if (counts < 2).any():
        raise AnalysisError(f"{int((counts < 2).sum())} scenario(s) have fewer than 2 methods")
    out = t[["method"] + keys].copy()
    out["rank"] = t.groupby(keys)["CRPS"].rank(method="min")
    return out


# Rank curves

@dataclass
class RankCurve:
    method: str
    proportions: np.ndarray  # index r - 1 holds P(rank <= r)
    auc: float


def cumulative_ranks(t: pd.DataFrame) -> List[RankCurve]:
    """
    proportions[r - 1] = share of all scenarios in which the method ranks in
    the top r. Sorted by auc descending (method name breaks ties).
    """
    _require_rows(t, "cumulative_ranks")
    ranks = scenario_ranks(t)
    keys = key_columns(t)
    n_scenarios = ranks.groupby(keys).ngroups
    methods = sorted(ranks["method"].unique())
    K = len(methods)
    thresholds = np.arange(1, K + 1)

    curves = []
    for method in methods:
        r = ranks.loc[ranks["method"] == method, "rank"].to_numpy()
        proportions = np.array([np.sum(r <= k) for k in thresholds], dtype=np.float64) / n_scenarios
        curves.append(RankCurve(method, proportions, float(np.mean(proportions))))
    curves.sort(key=lambda c: (-c.auc, c.method))
    return curves


def rank_summary(t: pd.DataFrame) -> pd.DataFrame:
    """Win rate (share of all scenarios ranked first) and average rank per method"""
    _require_rows(t, "rank_summary")
    ranks = scenario_ranks(t)
    n_scenarios = ranks.groupby(key_columns(t)).ngroups
    summary = ranks.groupby("method")["rank"].agg(
        wins=lambda r: int((r == 1).sum()),
        average_rank="mean",
        n_scenarios="count",
    ).reset_index()
    summary["win_rate"] = summary["wins"] / n_scenarios
    summary = summary.sort_values(["average_rank", "method"]).reset_index(drop=True)
    return summary[["method", "win_rate", "average_rank", "n_scenarios"]]


# Heatmap

@dataclass
class HeatmapMatrix:
    raw: pd.DataFrame       # problems x methods, NaN where absent
    display: pd.DataFrame   # raw clamped to [floor, ceil]
    column_order: List[str]

    def long(self) -> pd.DataFrame:
        rows = []
        for problem in self.raw.index:
            for method in self.column_order:
                raw = self.raw.at[problem, method]
                rows.append({
                    "problem": problem,
                    "method": method,
                    "raw": raw,
                    "display": self.display.at[problem, method],
                    "absent": bool(pd.isna(raw)),
                })
        return pd.DataFrame(rows)


def heatmap_matrix(t: pd.DataFrame, floor: float = HEATMAP_FLOOR, ceil: float = HEATMAP_CEIL) -> HeatmapMatrix:
    """
    Cell = mean over replications (or folds) of the per-row median CRPS.
    Columns are ordered by their mean raw cell value, ascending.
    """
    _require_rows(t, "heatmap_matrix")
    value = "CRPS_median"
    if value not in t.columns:
        logger.warning("No CRPS_median column; heatmap falls back to mean CRPS")
        value = "CRPS"
    problem = problem_column(t)
    raw = t.groupby([problem, "method"])[value].mean().unstack("method").sort_index()
    averages = raw.mean(axis=0, skipna=True)
    order = sorted(raw.columns, key=lambda m: (averages[m], m))
    raw = raw[order]
    return HeatmapMatrix(raw, raw.clip(lower=floor, upper=ceil), list(order))


# Pareto frontier

@dataclass
class ParetoPoint:
    method: str
    avg_rel_crps: float
    avg_rel_runtime: float
    dominated: bool


def dominated_flags(points: np.ndarray) -> np.ndarray:
    """
    points: K x 2 (lower is better in both). A point is dominated when another
    is <= in both coordinates and < in at least one.
    """
    flags = np.zeros(points.shape[0], dtype=bool)
    for i in range(points.shape[0]):
        le = np.all(points <= points[i], axis=1)
        lt = np.any(points < points[i], axis=1)
        flags[i] = bool(np.any(le & lt))
    return flags


def pareto_frontier(t: pd.DataFrame, cfg: Optional[ScoreConfig] = None) -> List[ParetoPoint]:
    """
    Relative CRPS (capped) and relative runtime (uncapped) per scenario,
    each averaged over the scenarios a method appears in.
    """
    _require_rows(t, "pareto_frontier")
    cfg = cfg or ScoreConfig()
    if t["t_tot"].isna().any() or (t["t_tot"] < 0).any():
        raise AnalysisError("t_tot must be present and nonnegative")

    rel_crps: Dict[str, List[float]] = {}
    rel_time: Dict[str, List[float]] = {}
    for _, group in t.groupby(key_columns(t)):
        crps = relative_scores(dict(zip(group["method"], group["CRPS"])), cfg)
        fastest = float(group["t_tot"].min())
        for method, seconds in zip(group["method"], group["t_tot"]):
            rel_crps.setdefault(method, []).append(crps[method])
            rel_time.setdefault(method, []).append((float(seconds) + cfg.epsilon) / (fastest + cfg.epsilon))

    methods = sorted(rel_crps)
    coords = np.array([[np.mean(rel_crps[m]), np.mean(rel_time[m])] for m in methods])
    flags = dominated_flags(coords)
    points = [ParetoPoint(m, float(c[0]), float(c[1]), bool(f)) for m, c, f in zip(methods, coords, flags)]
    points.sort(key=lambda p: (p.avg_rel_crps, p.method))
    return points


# Clustering

@dataclass
class ClusterResult:
    items: List[str]
    coords: np.ndarray     # items x 2
    labels: np.ndarray     # -1 marks noise
    distances: np.ndarray
    eps: float


def rank_vectors(t: pd.DataFrame, axis: str) -> pd.DataFrame:
    """
    methods: one row per method, ranks across scenarios.
    problems: one row per problem, ranks of methods by their mean CRPS on it.
    """
    if axis == "methods":
        ranks = scenario_ranks(t)
        keys = key_columns(t)
        return ranks.pivot_table(index="method", columns=keys, values="rank", aggfunc="first")
    if axis == "problems":
        problem = problem_column(t)
        means = t.groupby([problem, "method"])["CRPS"].mean().unstack("method")
        return means.rank(axis=1, method="min")
    raise AnalysisError(f"Unknown cluster axis: {axis}")


def spearman_distance(u: np.ndarray, v: np.ndarray) -> float:
    """1 - Spearman correlation over jointly observed entries; identical vectors give 0"""
    both = ~(np.isnan(u) | np.isnan(v))
    a, b = u[both], v[both]
    if a.size and np.array_equal(a, b):
        return 0.0
    if a.size < 2:
        return 1.0
    rho = spearmanr(a, b)[0]
    if not np.isfinite(rho):
        return 1.0
    return float(np.clip(1.0 - rho, 0.0, 2.0))


def distance_matrix(vectors: np.ndarray) -> np.ndarray:
    n = vectors.shape[0]
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            D[i, j] = D[j, i] = spearman_distance(vectors[i], vectors[j])
    return D


def classical_mds(D: np.ndarray, dims: int = 2) -> np.ndarray:
    """Double-centering MDS; negative eigenvalues are dropped"""
    n = D.shape[0]
    J = np.eye(n) - np.full((n, n), 1.0 / n)
    B = -0.5 * J @ (D**2) @ J
    values, vectors = np.linalg.eigh(B)
    order = np.argsort(values)[::-1][:dims]
    values = np.clip(values[order], 0.0, None)
    vectors = vectors[:, order]
    # sign convention: largest-magnitude entry of each axis is positive
    for k in range(vectors.shape[1]):
        if vectors[np.argmax(np.abs(vectors[:, k])), k] < 0:
            vectors[:, k] = -vectors[:, k]
    coords = vectors * np.sqrt(values)
    if coords.shape[1] < dims:
        coords = np.hstack([coords, np.zeros((n, dims - coords.shape[1]))])
    return coords


def default_eps(coords: np.ndarray) -> float:
    """Median distance to the k-th nearest neighbor, k = min(4, n - 1)"""
    n = coords.shape[0]
    k = min(4, n - 1)
    dist = np.sort(squareform(pdist(coords)), axis=1)
    return max(float(np.median(dist[:, k])), EPS_FLOOR)


def cluster_performance(
    t: pd.DataFrame,
    axis: str = "methods",
    eps: Optional[float] = None,
    min_samples: int = DEFAULT_MIN_SAMPLES,
) -> ClusterResult:
    _require_rows(t, "cluster_performance")
    if axis not in CLUSTER_AXES:
        raise AnalysisError(f"Unknown cluster axis: {axis}")
    table = rank_vectors(t, axis)
    items = [str(i) for i in table.index]
    if len(items) < 3:
        raise AnalysisError(f"Clustering needs >= 3 {axis}, got {len(items)}")

    D = distance_matrix(table.to_numpy(dtype=np.float64))
    coords = classical_mds(D)
    if np.all(D == 0.0):
        return ClusterResult(items, coords, np.zeros(len(items), dtype=np.int64), D, EPS_FLOOR)

    eps = default_eps(coords) if eps is None else float(eps)
    labels = DBSCAN(eps=eps, min_samples=min_samples).fit_predict(coords)
    return ClusterResult(items, coords, labels.astype(np.int64), D, eps)


# Supplementary views

def boxplot_data(t: pd.DataFrame, problem: str) -> Dict[str, np.ndarray]:
    """Per-row CRPS for one function or dataset, methods ordered by median"""
    _require_rows(t, "boxplot_data")
    column = problem_column(t)
    subset = t[t[column] == problem]
    if subset.empty:
        raise AnalysisError(f"No rows for {column}={problem}")
    groups = {m: g["CRPS"].to_numpy() for m, g in subset.groupby("method")}
    return dict(sorted(groups.items(), key=lambda kv: (float(np.median(kv[1])), kv[0])))


def split_by_size(t: pd.DataFrame, threshold: int = DEFAULT_SIZE_THRESHOLD) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    (small, large) by problem size: n_train for synthetic and bootstrap rows,
    n_train + fold_size for cross-validation rows.
    """
    size = t["n_train"].copy()
    if "fold_size" in t.columns and "cv_type" in t.columns:
        cv = t["cv_type"] == "cross_validation"
        size[cv] = t.loc[cv, "n_train"] + t.loc[cv, "fold_size"]
    small = size < threshold
    return t[small].reset_index(drop=True), t[~small].reset_index(drop=True)
