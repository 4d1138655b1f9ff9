"""
Tests for rank curves, heatmaps, Pareto frontiers and performance clustering
"""
import os
import sys
import logging
import pytest
import numpy as np
import pandas as pd
from scipy.spatial.distance import pdist, squareform

# Add backend to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from errors import AnalysisError
from services.analysis import (
    boxplot_data,
    classical_mds,
    cluster_performance,
    cumulative_ranks,
    distance_matrix,
    dominated_flags,
    heatmap_matrix,
    pareto_frontier,
    problem_column,
    rank_summary,
    scenario_ranks,
    spearman_distance,
    split_by_size,
)
from services.metrics import ScoreConfig


def crps_table(scores, fname="borehole", t_tot=None):
    """
    scores: {replication: {method: CRPS}}. One synthetic scenario per
    replication; t_tot maps method -> seconds (default 1.0).
    """
    rows = []
    for rep, by_method in scores.items():
        for method, crps in by_method.items():
            rows.append({
                "method": method, "fname": fname, "n_train": 1000, "NSR": 0.0,
                "design_type": "LHS", "replication": rep,
                "RMSE": crps, "FVU": crps, "CRPS": crps, "CRPS_median": crps,
                "t_fit": 0.0, "t_pred": 0.0, "t_tot": (t_tot or {}).get(method, 1.0),
                "failure_type": "none",
            })
    return pd.DataFrame(rows)


def random_table(methods, fnames, reps, seed):
    rng = np.random.default_rng(seed)
    frames = []
    for fname in fnames:
        scores = {r: {m: float(rng.random()) for m in methods} for r in reps}
        frames.append(crps_table(scores, fname))
    return pd.concat(frames, ignore_index=True)


def dataset_rows(n_train, fold_size, cv_type):
    return {
        "method": "blm", "dname": "concrete", "cv_type": cv_type, "n_train": n_train,
        "fold": 1, "fold_size": fold_size, "RMSE": 1.0, "FVU": 0.1, "CRPS": 0.5,
        "t_fit": 0.1, "t_pred": 0.1, "t_tot": 0.2, "failure_type": "none",
    }


class TestRanks:
    """Test per-scenario ranks and cumulative rank curves"""

    def test_split_wins(self):
        """Each of two methods wins one of two scenarios"""
        t = crps_table({1: {"a": 0.1, "b": 0.2}, 2: {"a": 0.3, "b": 0.2}})
        curves = {c.method: c for c in cumulative_ranks(t)}

        np.testing.assert_allclose(curves["a"].proportions, [0.5, 1.0])
        np.testing.assert_allclose(curves["b"].proportions, [0.5, 1.0])
        assert curves["a"].auc == pytest.approx(0.75)
        # equal auc falls back to method name
        assert [c.method for c in cumulative_ranks(t)] == ["a", "b"]

    def test_always_first_and_always_last(self):
        """A method that always wins reaches 1 at r=1, one that always loses only at r=K"""
        scores = {r: {"best": 0.1, "mid": 0.5, "worst": 0.9} for r in range(1, 4)}
        curves = cumulative_ranks(crps_table(scores))

        assert [c.method for c in curves] == ["best", "mid", "worst"]
        np.testing.assert_allclose(curves[0].proportions, [1.0, 1.0, 1.0])
        np.testing.assert_allclose(curves[2].proportions, [0.0, 0.0, 1.0])
        assert curves[2].auc == pytest.approx(1 / 3)

    def test_ties_share_minimum_rank(self):
        """Tied methods both get rank 1 and the next method gets rank 3"""
        t = crps_table({1: {"a": 0.1, "b": 0.1, "c": 0.5}})
        ranks = scenario_ranks(t).set_index("method")["rank"]

        assert ranks["a"] == 1 and ranks["b"] == 1
        assert ranks["c"] == 3
        summary = rank_summary(t).set_index("method")
        assert summary.at["a", "win_rate"] == 1.0
        assert summary.at["b", "win_rate"] == 1.0

    def test_curves_monotone_and_complete(self):
        """Every curve is nondecreasing and ends at 1"""
        t = random_table(["a", "b", "c", "d"], ["borehole", "ishigami"], range(1, 6), seed=0)
        for curve in cumulative_ranks(t):
            assert np.all(np.diff(curve.proportions) >= 0)
            assert curve.proportions[-1] == pytest.approx(1.0)

    def test_auc_matches_average_rank(self):
        """With every method in every scenario, auc = (K + 1 - average rank) / K"""
        methods = ["a", "b", "c", "d", "e"]
        t = random_table(methods, ["borehole", "ishigami", "piston"], range(1, 8), seed=1)
        K = len(methods)
        curves = cumulative_ranks(t)
        summary = rank_summary(t).set_index("method")

        for curve in curves:
            expected = (K + 1 - summary.at[curve.method, "average_rank"]) / K
            assert curve.auc == pytest.approx(expected)

    def test_single_method_scenario_rejected(self):
        """A scenario with one method cannot be ranked"""
        t = crps_table({1: {"a": 0.1, "b": 0.2}, 2: {"a": 0.3}})
        with pytest.raises(AnalysisError):
            cumulative_ranks(t)

    def test_empty_table_rejected(self):
        t = crps_table({1: {"a": 0.1, "b": 0.2}}).iloc[0:0]
        with pytest.raises(AnalysisError):
            rank_summary(t)


class TestHeatmap:
    """Test the problem x method CRPS matrix"""

    def test_clamp_keeps_raw(self):
        """Display cells are clamped to [0.001, 1]; raw cells are untouched"""
        t = pd.concat([
            crps_table({1: {"a": 1e-5, "b": 5.0}}, "borehole"),
            crps_table({1: {"a": 0.2, "b": 0.4}}, "ishigami"),
        ], ignore_index=True)
        hm = heatmap_matrix(t)

        assert hm.raw.at["borehole", "a"] == 1e-5
        assert hm.display.at["borehole", "a"] == 0.001
        assert hm.display.at["borehole", "b"] == 1.0
        assert hm.display.at["ishigami", "b"] == 0.4

    def test_columns_ordered_by_mean(self):
        """Columns run from the lowest average cell to the highest"""
        t = pd.concat([
            crps_table({1: {"a": 0.9, "b": 0.1, "c": 0.5}}, "borehole"),
            crps_table({1: {"a": 0.8, "b": 0.2, "c": 0.4}}, "ishigami"),
        ], ignore_index=True)
        hm = heatmap_matrix(t)

        assert hm.column_order == ["b", "c", "a"]
        assert list(hm.raw.columns) == ["b", "c", "a"]

    def test_cells_average_replications(self):
        t = crps_table({1: {"a": 0.2, "b": 0.3}, 2: {"a": 0.4, "b": 0.3}})
        hm = heatmap_matrix(t)
        assert hm.raw.at["borehole", "a"] == pytest.approx(0.3)

    def test_absent_cells(self):
        """A method missing on one problem leaves an absent cell"""
        t = pd.concat([
            crps_table({1: {"a": 0.2, "b": 0.3}}, "borehole"),
            crps_table({1: {"a": 0.2}}, "ishigami"),
        ], ignore_index=True)
        long = heatmap_matrix(t).long().set_index(["problem", "method"])

        assert bool(long.at[("ishigami", "b"), "absent"])
        assert not bool(long.at[("borehole", "b"), "absent"])

    def test_falls_back_to_mean_crps(self, caplog):
        t = crps_table({1: {"a": 0.2, "b": 0.3}}).drop(columns=["CRPS_median"])
        with caplog.at_level(logging.WARNING, logger="duqbench.analysis"):
            hm = heatmap_matrix(t)
        assert hm.raw.at["borehole", "b"] == pytest.approx(0.3)
        assert "CRPS_median" in caplog.text


class TestPareto:
    """Test dominance and the accuracy/runtime frontier"""

    @staticmethod
    def brute_force(points):
        flags = []
        for i, p in enumerate(points):
            flags.append(any(
                j != i and q[0] <= p[0] and q[1] <= p[1] and (q[0] < p[0] or q[1] < p[1])
                for j, q in enumerate(points)
            ))
        return np.array(flags)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            K = int(rng.integers(1, 12))
            # coarse grid so ties in one coordinate occur
            points = rng.integers(0, 5, size=(K, 2)).astype(np.float64)
            np.testing.assert_array_equal(dominated_flags(points), self.brute_force(points))

    def test_frontier_on_random_tables(self):
        """Averages and flags agree with a by-hand computation on random tables"""
        rng = np.random.default_rng(11)
        eps, cap = 0.001, 100.0
        for _ in range(100):
            methods = [f"m{k}" for k in range(int(rng.integers(2, 7)))]
            reps = range(1, int(rng.integers(2, 6)))
            scores = {r: {m: float(rng.choice([0.0, 0.5, 1.0, rng.random()])) for m in methods} for r in reps}
            seconds = {r: {m: float(rng.integers(0, 4)) for m in methods} for r in reps}
            frames = [crps_table({r: scores[r]}, t_tot=seconds[r]) for r in reps]
            t = pd.concat(frames, ignore_index=True)
            # some methods skip some scenarios
            keep = rng.random(len(t)) > 0.2
            keep[t["method"] == methods[0]] = True
            t = t[keep].reset_index(drop=True)

            expected = {}
            for m in methods:
                crps, runtime = [], []
                for r in reps:
                    present = set(t[t["replication"] == r]["method"])
                    if m not in present:
                        continue
                    best = min(scores[r][k] for k in present)
                    fastest = min(seconds[r][k] for k in present)
                    crps.append(min(cap, (scores[r][m] + eps) / (best + eps)))
                    runtime.append((seconds[r][m] + eps) / (fastest + eps))
                if crps:
                    expected[m] = (sum(crps) / len(crps), sum(runtime) / len(runtime))

            points = pareto_frontier(t, ScoreConfig(epsilon=eps, cap=cap))
            assert sorted(p.method for p in points) == sorted(expected)
            for p in points:
                assert p.avg_rel_crps == pytest.approx(expected[p.method][0])
                assert p.avg_rel_runtime == pytest.approx(expected[p.method][1])
            coords = [(p.avg_rel_crps, p.avg_rel_runtime) for p in points]
            np.testing.assert_array_equal([p.dominated for p in points], self.brute_force(coords))

    def test_identical_points_not_dominated(self):
        points = np.array([[1.0, 1.0], [1.0, 1.0]])
        assert not dominated_flags(points).any()

    def test_swap_and_monotone_invariance(self):
        """Swapping the axes or transforming them monotonically keeps the flags"""
        rng = np.random.default_rng(3)
        points = rng.random((15, 2)) + 0.5
        flags = dominated_flags(points)

        np.testing.assert_array_equal(dominated_flags(points[:, ::-1]), flags)
        np.testing.assert_array_equal(dominated_flags(np.log(points)), flags)

    def test_sole_best_method(self):
        """A method best and fastest everywhere sits at (1, 1) and dominates the rest"""
        scores = {r: {"fast": 0.1, "slow": 0.2, "slower": 0.4} for r in range(1, 4)}
        t = crps_table(scores, t_tot={"fast": 1.0, "slow": 2.0, "slower": 3.0})
        points = {p.method: p for p in pareto_frontier(t)}

        assert points["fast"].avg_rel_crps == pytest.approx(1.0)
        assert points["fast"].avg_rel_runtime == pytest.approx(1.0)
        assert not points["fast"].dominated
        assert points["slow"].dominated and points["slower"].dominated

    def test_tradeoff_keeps_both(self):
        """Accurate-but-slow and cheap-but-rough are both on the frontier"""
        t = crps_table({1: {"accurate": 0.1, "cheap": 0.5}}, t_tot={"accurate": 10.0, "cheap": 0.1})
        points = pareto_frontier(t)

        assert [p.method for p in points] == ["accurate", "cheap"]
        assert not any(p.dominated for p in points)

    def test_negative_runtime_rejected(self):
        t = crps_table({1: {"a": 0.1, "b": 0.2}}, t_tot={"a": -1.0})
        with pytest.raises(AnalysisError):
            pareto_frontier(t)


class TestClustering:
    """Test rank distances, MDS and DBSCAN grouping"""

    def test_spearman_distance_extremes(self):
        u = np.array([1.0, 2.0, 3.0, 4.0])
        assert spearman_distance(u, u.copy()) == 0.0
        assert spearman_distance(u, u[::-1].copy()) == pytest.approx(2.0)

    def test_spearman_distance_skips_missing(self):
        u = np.array([1.0, 2.0, np.nan, 3.0])
        v = np.array([1.0, 2.0, 5.0, 3.0])
        assert spearman_distance(u, v) == 0.0

    def test_distance_matrix_symmetric(self):
        vectors = np.random.default_rng(0).random((5, 8))
        D = distance_matrix(vectors)
        np.testing.assert_array_equal(D, D.T)
        np.testing.assert_array_equal(np.diag(D), np.zeros(5))

    def test_mds_equilateral(self):
        """Three points at mutual distance 1 embed exactly in the plane"""
        D = np.ones((3, 3)) - np.eye(3)
        coords = classical_mds(D)
        assert coords.shape == (3, 2)
        np.testing.assert_allclose(squareform(pdist(coords)), D, atol=1e-9)

    def test_mds_collinear(self):
        x = np.array([0.0, 1.0, 3.0, 7.0])
        D = np.abs(x[:, None] - x[None, :])
        coords = classical_mds(D)
        np.testing.assert_allclose(squareform(pdist(coords)), D, atol=1e-9)
        np.testing.assert_allclose(coords[:, 1], 0.0, atol=1e-6)

    def test_duplicate_method_shares_cluster(self):
        """A method with identical scores sits at distance 0 in the same cluster"""
        t = random_table(["a", "b", "c", "d"], ["borehole", "ishigami"], range(1, 7), seed=11)
        copy = t[t["method"] == "a"].assign(method="a_copy")
        t = pd.concat([t, copy], ignore_index=True)
        result = cluster_performance(t, "methods", eps=1e-6, min_samples=2)

        i, j = result.items.index("a"), result.items.index("a_copy")
        assert result.distances[i, j] == 0.0
        assert result.labels[i] == result.labels[j]
        assert result.labels[i] != -1

    def test_all_identical_one_cluster(self):
        """All-zero distances give a single cluster without DBSCAN"""
        scores = {r: {"a": 0.1, "b": 0.1, "c": 0.1} for r in range(1, 4)}
        result = cluster_performance(crps_table(scores))

        np.testing.assert_array_equal(result.labels, [0, 0, 0])
        assert not result.distances.any()

    def test_problems_axis(self):
        t = random_table(["a", "b", "c", "d"], ["borehole", "ishigami", "piston", "wingweight"], [1, 2], seed=5)
        result = cluster_performance(t, "problems")
        assert sorted(result.items) == ["borehole", "ishigami", "piston", "wingweight"]
        assert result.coords.shape == (4, 2)
        assert result.eps > 0

    def test_too_few_items(self):
        t = crps_table({1: {"a": 0.1, "b": 0.2}})
        with pytest.raises(AnalysisError):
            cluster_performance(t)

    def test_unknown_axis(self):
        t = random_table(["a", "b", "c"], ["borehole"], [1, 2], seed=0)
        with pytest.raises(AnalysisError):
            cluster_performance(t, "replications")


class TestSupplementaryViews:
    """Test boxplot data and the problem-size split"""

    def test_boxplot_ordered_by_median(self):
        scores = {r: {"a": 0.5 + r, "b": 0.1 * r, "c": 0.2 + r} for r in range(1, 4)}
        data = boxplot_data(crps_table(scores), "borehole")

        assert list(data) == ["b", "c", "a"]
        assert len(data["a"]) == 3

    def test_boxplot_unknown_problem(self):
        with pytest.raises(AnalysisError):
            boxplot_data(crps_table({1: {"a": 0.1}}), "ishigami")

    def test_problem_column(self):
        assert problem_column(crps_table({1: {"a": 0.1}})) == "fname"
        assert problem_column(pd.DataFrame([dataset_rows(100, 10, "cross_validation")])) == "dname"

    def test_split_synthetic(self):
        t = pd.concat([
            crps_table({1: {"a": 0.1}}).assign(n_train=500),
            crps_table({1: {"a": 0.1}}).assign(n_train=5000),
        ], ignore_index=True)
        small, large = split_by_size(t)
        assert list(small["n_train"]) == [500]
        assert list(large["n_train"]) == [5000]

    def test_split_counts_held_out_fold(self):
        """Cross-validation size is n_train + fold_size; bootstrap size is n_train"""
        t = pd.DataFrame([
            dataset_rows(1800, 200, "cross_validation"),
            dataset_rows(1800, 600, "bootstrap"),
        ])
        small, large = split_by_size(t, threshold=2000)
        assert list(small["cv_type"]) == ["bootstrap"]
        assert list(large["cv_type"]) == ["cross_validation"]
