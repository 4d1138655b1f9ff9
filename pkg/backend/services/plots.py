"""
Artifact writers for the analysis products: a CSV plus an SVG sibling with
the same basename for each of rank, heatmap, pareto, cluster and boxplot.
"""
import os
import logging
from typing import Dict, List

import numpy as np
import pandas as pd
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

import sys
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from services.analysis import ClusterResult, HeatmapMatrix, ParetoPoint, RankCurve  # noqa: E402

logger = logging.getLogger("duqbench.plots")

# fixed ids and no timestamp keep SVG output byte-stable
plt.rcParams["svg.hashsalt"] = "duqbench"
SVG_METADATA = {"Date": None}


def _save(fig, path: str) -> str:
    fig.savefig(path, format="svg", metadata=SVG_METADATA, bbox_inches="tight")
    plt.close(fig)
    logger.info("Wrote %s", path)
    return path


def write_rank_artifacts(curves: List[RankCurve], summary: pd.DataFrame, out_dir: str) -> List[str]:
    os.makedirs(out_dir, exist_ok=True)
    rows = [
        {"method": c.method, "r": r, "proportion": float(p), "auc": c.auc}
        for c in curves
        for r, p in enumerate(c.proportions, start=1)
    ]
    csv_path = os.path.join(out_dir, "rank.csv")
    pd.DataFrame(rows, columns=["method", "r", "proportion", "auc"]).to_csv(csv_path, index=False)
    summary_path = os.path.join(out_dir, "summary.csv")
    summary.to_csv(summary_path, index=False)

    fig, ax = plt.subplots(figsize=(8, 5))
    for c in curves:
        r = np.arange(1, len(c.proportions) + 1)
        ax.step(r, c.proportions, where="post", label=f"{c.method} ({c.auc:.2f})")
    ax.set_xlabel("r")
    ax.set_ylabel("Proportion of scenarios in the top r")
    ax.set_ylim(0, 1.02)
    ax.grid(True, alpha=0.3, linestyle="--")
    ax.legend(loc="lower right", fontsize=8)
    return [csv_path, summary_path, _save(fig, os.path.join(out_dir, "rank.svg"))]


def write_heatmap_artifacts(heatmap: HeatmapMatrix, out_dir: str) -> List[str]:
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "heatmap.csv")
    heatmap.long().to_csv(csv_path, index=False)

    values = np.log10(heatmap.display.to_numpy(dtype=np.float64))
    masked = np.ma.masked_invalid(values)
    cmap = plt.get_cmap("viridis").copy()
    cmap.set_bad("lightgrey")
    fig, ax = plt.subplots(figsize=(1 + 0.6 * masked.shape[1], 1 + 0.4 * masked.shape[0]))
    image = ax.imshow(masked, cmap=cmap, aspect="auto")
    ax.set_xticks(range(len(heatmap.column_order)))
    ax.set_xticklabels(heatmap.column_order, rotation=60, ha="right")
    ax.set_yticks(range(len(heatmap.raw.index)))
    ax.set_yticklabels([str(i) for i in heatmap.raw.index])
    fig.colorbar(image, ax=ax, label="log10 median CRPS")
    return [csv_path, _save(fig, os.path.join(out_dir, "heatmap.svg"))]


def write_pareto_artifacts(points: List[ParetoPoint], out_dir: str) -> List[str]:
    os.makedirs(out_dir, exist_ok=True)
    frame = pd.DataFrame(
        [(p.method, p.avg_rel_crps, p.avg_rel_runtime, p.dominated) for p in points],
        columns=["method", "avg_rel_crps", "avg_rel_runtime", "dominated"],
    )
    csv_path = os.path.join(out_dir, "pareto.csv")
    frame.to_csv(csv_path, index=False)

    fig, ax = plt.subplots(figsize=(8, 6))
    ax.scatter(frame["avg_rel_runtime"], frame["avg_rel_crps"], c="lightgray", edgecolors="gray")
    front = frame[~frame["dominated"]].sort_values("avg_rel_runtime")
    ax.scatter(front["avg_rel_runtime"], front["avg_rel_crps"], c="red", marker="D", zorder=3)
    ax.plot(front["avg_rel_runtime"], front["avg_rel_crps"], "r--", alpha=0.6)
    for _, row in frame.iterrows():
        ax.annotate(row["method"], (row["avg_rel_runtime"], row["avg_rel_crps"]),
                    xytext=(5, 5), textcoords="offset points", fontsize=8)
    ax.set_xscale("log")
    ax.set_xlabel("Average relative runtime")
    ax.set_ylabel("Average relative CRPS")
    ax.grid(True, alpha=0.3, linestyle="--")
    return [csv_path, _save(fig, os.path.join(out_dir, "pareto.svg"))]


def write_cluster_artifacts(result: ClusterResult, out_dir: str) -> List[str]:
    os.makedirs(out_dir, exist_ok=True)
    frame = pd.DataFrame({
        "item": result.items,
        "x": result.coords[:, 0],
        "y": result.coords[:, 1],
        "label": result.labels,
    })
    csv_path = os.path.join(out_dir, "clusters.csv")
    frame.to_csv(csv_path, index=False)

    fig, ax = plt.subplots(figsize=(7, 6))
    ax.scatter(frame["x"], frame["y"], c=frame["label"], cmap="tab10")
    for _, row in frame.iterrows():
        ax.annotate(row["item"], (row["x"], row["y"]), xytext=(4, 4), textcoords="offset points", fontsize=8)
    ax.set_xlabel("MDS 1")
    ax.set_ylabel("MDS 2")
    ax.set_title(f"DBSCAN eps={result.eps:.3g} (-1 = noise)")
    return [csv_path, _save(fig, os.path.join(out_dir, "clusters.svg"))]


def write_boxplot_artifacts(data: Dict[str, np.ndarray], problem: str, out_dir: str) -> List[str]:
    os.makedirs(out_dir, exist_ok=True)
    rows = [{"method": m, "CRPS": float(v)} for m, values in data.items() for v in values]
    base = os.path.join(out_dir, f"boxplot_{problem}")
    pd.DataFrame(rows, columns=["method", "CRPS"]).to_csv(base + ".csv", index=False)

    fig, ax = plt.subplots(figsize=(1 + 0.7 * len(data), 5))
    ax.boxplot(list(data.values()))
    ax.set_xticks(range(1, len(data) + 1))
    ax.set_xticklabels(list(data.keys()), rotation=60, ha="right")
    ax.set_yscale("log")
    ax.set_ylabel("CRPS")
    ax.set_title(problem)
    return [base + ".csv", _save(fig, base + ".svg")]
