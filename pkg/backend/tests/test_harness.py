"""
Tests for datasets, the study harness and result tables
"""
import os
import sys
import time
import logging
import pytest
import numpy as np
import pandas as pd

# Add backend to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from errors import ConfigError, DomainError, IngestionError, NotFoundError, SchemaError
from services.datasets import Dataset, load_dataset, make_folds, scale_to_unit
from services.emulators import BUILTIN_METHODS, EMULATORS, EmulatorMethod, EmulatorSpec, register_emulator
from services.functions import evaluate
from services.harness import (
    TIMING_COLUMNS,
    filter_sim_study,
    generate_training_data,
    join_sim_study,
    read_results,
    required_columns,
    run_sim_study,
    run_sim_study_data,
    shared_test_set,
    write_results,
)
from services.metrics import ScoreConfig
from services.seeding import Scenario
from tests.test_emulators import STUB_EMULATOR

CHEAP_SPECS = [
    EmulatorSpec("baseline_t"),
    EmulatorSpec("blm"),
    EmulatorSpec("rffgp"),
    EmulatorSpec("blm", {"prior_precision": 1e-2}, "ridge"),
]


def without_timing(t: pd.DataFrame) -> pd.DataFrame:
    return t.drop(columns=TIMING_COLUMNS).reset_index(drop=True)


def write_csv(path, n=60, seed=0, extra=None):
    rng = np.random.default_rng(seed)
    frame = pd.DataFrame({
        "a": rng.random(n),
        "b": rng.random(n) * 10.0,
        "c": np.full(n, 4.0),
    })
    frame["target"] = 2.0 * frame["a"] - 0.1 * frame["b"] + 0.01 * rng.normal(size=n)
    if extra:
        for column, values in extra.items():
            frame[column] = values
    frame.to_csv(path, index=False)
    return path


def result_table(methods, fnames, reps, n_train=(1000,), nsr=(0.0,), seed=0):
    """Hand-built synthetic result table with the required columns"""
    rng = np.random.default_rng(seed)
    rows = []
    for fname in fnames:
        for n in n_train:
            for v in nsr:
                for rep in reps:
                    for method in methods:
                        rows.append({
                            "method": method, "fname": fname, "n_train": n, "NSR": v,
                            "design_type": "LHS", "replication": rep,
                            "RMSE": rng.random(), "FVU": rng.random(), "CRPS": rng.random(),
                            "t_fit": 1.0, "t_pred": 0.5, "t_tot": 1.5, "failure_type": "none",
                        })
    return pd.DataFrame(rows)


@pytest.fixture
def scratch_method():
    """Register throwaway emulators for one test"""
    names = []

    def register(name, fit_fn, predict_fn):
        register_emulator(EmulatorMethod(name, "test method", fit_fn, predict_fn))
        names.append(name)

    yield register
    for name in names:
        EMULATORS.pop(name, None)


@pytest.fixture
def external_command(tmp_path):
    """Command list for the line-delimited JSON stub emulator in a given mode"""
    script = tmp_path / "stub_emulator.py"
    script.write_text(STUB_EMULATOR)

    def command(mode):
        return [sys.executable, str(script), mode]

    return command


class TestDatasets:
    """Tests for CSV ingestion, folds and scaling"""

    def test_load(self, tmp_path):
        dataset = load_dataset(write_csv(str(tmp_path / "toy.csv")), "target")
        assert dataset.name == "toy"
        assert dataset.X.shape == (60, 3)
        assert dataset.predictors == ["a", "b", "c"]

    def test_missing_response(self, tmp_path):
        with pytest.raises(IngestionError):
            load_dataset(write_csv(str(tmp_path / "toy.csv")), "nope")

    def test_missing_file(self, tmp_path):
        with pytest.raises(IngestionError):
            load_dataset(str(tmp_path / "absent.csv"), "target")

    def test_non_numeric(self, tmp_path):
        path = write_csv(str(tmp_path / "toy.csv"), extra={"label": ["x"] * 60})
        with pytest.raises(IngestionError):
            load_dataset(path, "target")

    def test_missing_values(self, tmp_path):
        values = np.ones(60)
        values[5] = np.nan
        path = write_csv(str(tmp_path / "toy.csv"), extra={"d": values})
        with pytest.raises(IngestionError):
            load_dataset(path, "target")

    def test_cross_validation_partition(self):
        """10 folds of 138 rows have sizes 13 and 14 and partition the rows"""
        folds = make_folds(138, "cross_validation", 10, seed=42)
        assert {f.fold_size for f in folds} == {13, 14}
        tests = np.concatenate([f.test for f in folds])
        assert sorted(tests.tolist()) == list(range(138))
        for f in folds:
            assert np.intersect1d(f.train, f.test).size == 0
            assert f.train.size + f.test.size == 138

    def test_folds_reproducible(self):
        a = make_folds(50, "cross_validation", 5, seed=3)
        b = make_folds(50, "cross_validation", 5, seed=3)
        for fa, fb in zip(a, b):
            np.testing.assert_array_equal(fa.test, fb.test)

    def test_bootstrap_out_of_bag_fraction(self):
        """Out-of-bag share is close to exp(-1)"""
        folds = make_folds(200, "bootstrap", 60, seed=9)
        fraction = np.mean([f.fold_size / 200 for f in folds])
        assert abs(fraction - np.exp(-1)) < 0.03

    def test_fold_errors(self):
        with pytest.raises(DomainError):
            make_folds(10, "cross_validation", 1, seed=0)
        with pytest.raises(DomainError):
            make_folds(10, "jackknife", 5, seed=0)

    def test_scale_to_unit(self):
        """Training columns span [0, 1]; constant columns sit at 0.5"""
        train = np.array([[1.0, 5.0], [3.0, 5.0], [2.0, 5.0]])
        test = np.array([[4.0, 7.0]])
        scaled_train, scaled_test = scale_to_unit(train, test)
        np.testing.assert_allclose(scaled_train[:, 0], [0.0, 1.0, 0.5])
        np.testing.assert_allclose(scaled_train[:, 1], [0.5, 0.5, 0.5])
        np.testing.assert_allclose(scaled_test, [[1.5, 0.5]])


class TestTrainingData:
    """Tests for scenario data generation"""

    def test_noise_free_matches_function(self):
        data = generate_training_data(Scenario.synthetic("friedman", 30, 0.0, "LHS", 1))
        np.testing.assert_array_equal(data.y_train, evaluate("friedman", data.X_train))

    def test_noise_added(self):
        s = Scenario.synthetic("friedman", 200, 0.1, "LHS", 1)
        data = generate_training_data(s)
        noise = data.y_train - data.f_train
        assert np.std(noise) == pytest.approx(np.sqrt(0.1 * np.var(data.f_train)), rel=0.2)

    def test_training_data_deterministic(self):
        """Design and noise are pure functions of the scenario"""
        a = generate_training_data(Scenario.synthetic("friedman", 30, 0.1, "LHS", 2))
        b = generate_training_data(Scenario.synthetic("friedman", 30, 0.1, "LHS", 2))
        np.testing.assert_array_equal(a.X_train, b.X_train)
        np.testing.assert_array_equal(a.y_train, b.y_train)

    def test_constant_signal_gets_no_noise(self):
        """Noise sd scales with var(f), so noise_only stays exactly zero at any NSR"""
        data = generate_training_data(Scenario.synthetic("noise_only", 50, 0.5, "LHS", 1))
        np.testing.assert_array_equal(data.y_train, np.zeros(50))

    def test_shared_test_set(self):
        """The test set depends on the function name only"""
        X1, y1 = shared_test_set("ishigami", 40)
        X2, y2 = shared_test_set("ishigami", 40)
        np.testing.assert_array_equal(X1, X2)
        np.testing.assert_array_equal(y1, evaluate("ishigami", X1))


class TestRunSimStudy:
    """Tests for synthetic studies"""

    def test_cartesian_count_and_order(self):
        """2 functions x 2 NSR x 3 replications x 4 specs give 48 rows in grid order"""
        t = run_sim_study(CHEAP_SPECS, ["damped_cosine", "friedman"], [20], NSR=[0.0, 0.1],
                          replications=[1, 2, 3], M=20, n_test=30)
        assert len(t) == 48
        assert list(t.columns[:13]) == required_columns("synthetic")
        assert list(t["method"][:4]) == ["baseline_t", "blm", "rffgp", "blm_ridge"]
        assert set(t["failure_type"]) <= {"none", "fit", "pred"}
        assert t[["RMSE", "FVU", "CRPS"]].notna().all().all()
        assert (t["t_tot"] >= t["t_fit"] + t["t_pred"] - 1e-6).all()

    def test_reproducible_across_studies(self):
        """Rows shared by two differently shaped studies are identical"""
        specs = [EmulatorSpec("baseline_t"), EmulatorSpec("local_nn_gp")]
        big = run_sim_study(specs, ["borehole", "ishigami"], [40], replications=[1, 2, 3],
                            M=20, n_test=30)
        small = run_sim_study(specs, ["ishigami"], [40], replications=[1, 3], M=20, n_test=30)
        shared = filter_sim_study(big, fname="ishigami", replication=[1, 3])
        pd.testing.assert_frame_equal(without_timing(shared), without_timing(small))

    @pytest.mark.slow
    def test_approximate_gps_independent_of_workers(self):
        """local_nn_gp and rbcm rows do not depend on the worker count"""
        specs = [EmulatorSpec("local_nn_gp"), EmulatorSpec("rbcm")]
        args = dict(fnames=["borehole", "ishigami"], n_train=[60], replications=[1, 3],
                    M=20, n_test=30)
        serial = run_sim_study(specs, workers=1, **args)
        parallel = run_sim_study(specs, workers=4, **args)
        pd.testing.assert_frame_equal(without_timing(serial), without_timing(parallel))

    def test_every_builtin_runs_clean(self):
        """All built-in methods fit and predict without falling back"""
        specs = [EmulatorSpec(name) for name in BUILTIN_METHODS]
        t = run_sim_study(specs, ["damped_cosine", "friedman", "ishigami"], [40], M=20, n_test=30)
        assert len(t) == 3 * len(BUILTIN_METHODS)
        assert set(t["method"]) == set(BUILTIN_METHODS)
        assert (t["failure_type"] == "none").all()
        assert t[["RMSE", "FVU", "CRPS"]].notna().all().all()

    def test_external_failures_fall_back(self, external_command):
        """Crashes and overruns of an external process become fit/pred rows with baseline metrics"""
        modes = ["crash-fit", "crash-pred", "sleep-fit", "sleep-pred"]
        specs = [EmulatorSpec("baseline_t")] + [
            EmulatorSpec("external", {"command": external_command(mode)}, mode.replace("-", "_"))
            for mode in modes
        ]
        t = run_sim_study(specs, ["damped_cosine"], [15], M=20, n_test=25, timeout=1.0)
        assert list(t["failure_type"]) == ["none", "fit", "pred", "fit", "pred"]
        assert list(t["method"][1:]) == [f"external_{m.replace('-', '_')}" for m in modes]
        for column in ("RMSE", "FVU", "CRPS", "CRPS_median", "coverage"):
            assert (t[column] == t[column][0]).all()
        # overruns are cut off at the timeout, not the stub's 30 s sleep
        assert t["t_tot"].max() < 10.0

    def test_external_success(self, external_command):
        spec = EmulatorSpec("external", {"command": external_command("ok")}, "stub")
        t = run_sim_study([spec], ["damped_cosine"], [15], M=20, n_test=25, timeout=5.0)
        assert t["failure_type"][0] == "none"
        assert np.isfinite(t["CRPS"][0])

    @pytest.mark.slow
    def test_scheduling_independence(self):
        """One worker and two workers produce the same table"""
        args = dict(fnames=["damped_cosine", "friedman"], n_train=[20], replications=[1, 2],
                    M=20, n_test=30)
        serial = run_sim_study(CHEAP_SPECS, workers=1, **args)
        parallel = run_sim_study(CHEAP_SPECS, workers=2, **args)
        pd.testing.assert_frame_equal(without_timing(serial), without_timing(parallel))

    def test_constant_function_guard(self):
        """Constant responses are predicted exactly and skip rescaling"""
        t = run_sim_study([EmulatorSpec("baseline_t")], ["const_fn"], [10], replications=[1, 2],
                          M=10, n_test=20)
        # constant response: draws equal the truth, guard engaged
        assert (t["CRPS"] == 0.0).all()
        assert t["ref_sd_guard"].all()

    def test_fit_failure_falls_back(self, scratch_method):
        """A failing fit still yields one row with baseline metrics"""
        def broken_fit(X, y, seed):
            raise np.linalg.LinAlgError("not positive definite")

        scratch_method("always_fails", broken_fit, lambda s, X, M, seed: None)
        t = run_sim_study([EmulatorSpec("baseline_t"), EmulatorSpec("always_fails")],
                          ["damped_cosine"], [15], M=20, n_test=25)
        assert list(t["failure_type"]) == ["none", "fit"]
        for column in ("RMSE", "FVU", "CRPS", "CRPS_median", "coverage"):
            assert t[column][0] == t[column][1]

    def test_predict_failure_falls_back(self, scratch_method):
        def broken_predict(state, X, M, seed):
            raise ValueError("bad prediction")

        scratch_method("pred_fails", lambda X, y, seed: None, broken_predict)
        t = run_sim_study([EmulatorSpec("pred_fails")], ["damped_cosine"], [15], M=20, n_test=25)
        assert t["failure_type"][0] == "pred"
        assert np.isfinite(t["CRPS"][0])

    def test_timeout_falls_back(self, scratch_method):
        """An overrun is a fit failure"""
        def slow_fit(X, y, seed):
            time.sleep(3.0)

        scratch_method("too_slow", slow_fit, lambda s, X, M, seed: np.zeros((M, len(X))))
        t = run_sim_study([EmulatorSpec("too_slow")], ["damped_cosine"], [15], M=20, n_test=25,
                          timeout=0.2)
        assert t["failure_type"][0] == "fit"
        assert t["t_fit"][0] < 2.5

    def test_unknown_names(self):
        """Unknown functions and methods fail before anything runs"""
        with pytest.raises(ConfigError):
            run_sim_study([EmulatorSpec("baseline_t")], ["no_such_fn"], [10])
        with pytest.raises(ConfigError):
            run_sim_study([EmulatorSpec("no_such_method")], ["borehole"], [10])
        with pytest.raises(ConfigError):
            run_sim_study([EmulatorSpec("baseline_t")], ["foursquare"], [10])

    def test_progress_callback(self):
        seen = []
        run_sim_study([EmulatorSpec("baseline_t")], ["damped_cosine"], [10], replications=[1, 2],
                      M=10, n_test=10, progress_callback=lambda done, total: seen.append((done, total)))
        assert seen == [(1, 2), (2, 2)]

    @pytest.mark.slow
    def test_sanity_ladder_on_borehole(self):
        """gp beats rffgp beats the baseline on noise-free borehole"""
        specs = [EmulatorSpec("baseline_t"), EmulatorSpec("rffgp"), EmulatorSpec("gp")]
        t = run_sim_study(specs, ["borehole"], [500], replications=[1, 2, 3], M=500, n_test=500,
                          score=ScoreConfig(crps_variant="fair"))
        means = t.groupby("method")["CRPS"].mean()
        assert means["gp"] < means["rffgp"] < means["baseline_t"]
        assert means["gp"] <= 0.2 * means["baseline_t"]
        assert abs(means["baseline_t"] - 0.56) < 0.1


class TestRunSimStudyData:
    """Tests for dataset studies"""

    def test_cross_validation_rows(self, tmp_path):
        dataset = load_dataset(write_csv(str(tmp_path / "toy.csv")), "target")
        t = run_sim_study_data([EmulatorSpec("baseline_t"), EmulatorSpec("blm")], dataset,
                               "cross_validation", 5, M=20)
        assert len(t) == 10
        assert list(t.columns[:13]) == required_columns("dataset")
        assert set(t["fold_size"]) == {12}
        assert set(t["n_train"]) == {48}
        # blm fits the nearly linear response far better than the baseline
        means = t.groupby("method")["CRPS"].mean()
        assert means["blm"] < means["baseline_t"]

    def test_bootstrap_rows(self, tmp_path):
        dataset = load_dataset(write_csv(str(tmp_path / "toy.csv")), "target")
        t = run_sim_study_data([EmulatorSpec("baseline_t")], dataset, "bootstrap", 4, M=20)
        assert len(t) == 4
        assert (t["n_train"] == 60).all()
        assert (t["cv_type"] == "bootstrap").all()

    def test_same_split_across_invocations(self, tmp_path):
        dataset = load_dataset(write_csv(str(tmp_path / "toy.csv")), "target")
        a = run_sim_study_data([EmulatorSpec("blm")], dataset, "cross_validation", 3, M=10)
        b = run_sim_study_data([EmulatorSpec("blm")], dataset, "cross_validation", 3, M=10)
        pd.testing.assert_frame_equal(without_timing(a), without_timing(b))

    def test_bad_folds(self, tmp_path):
        dataset = Dataset("toy", np.zeros((5, 1)), np.arange(5.0), ["x"], "y")
        with pytest.raises(ConfigError):
            run_sim_study_data([EmulatorSpec("baseline_t")], dataset, "cross_validation", 1)


class TestResultTables:
    """Tests for join, filter and CSV persistence"""

    def test_join_identity(self):
        t = result_table(["a", "b"], ["f"], [1, 2])
        pd.testing.assert_frame_equal(join_sim_study(t, t.iloc[0:0]), t)
        pd.testing.assert_frame_equal(join_sim_study(t.iloc[0:0], t), t)

    def test_join_self_warns(self, caplog):
        t = result_table(["a", "b"], ["f"], [1, 2])
        with caplog.at_level(logging.WARNING, logger="duqbench.harness"):
            joined = join_sim_study(t, t)
        pd.testing.assert_frame_equal(joined, t)
        assert "duplicate" in caplog.text

    def test_join_keeps_first(self):
        a = result_table(["a"], ["f"], [1], seed=1)
        b = result_table(["a"], ["f"], [1], seed=2)
        assert join_sim_study(a, b)["CRPS"][0] == a["CRPS"][0]

    def test_join_new_variants(self):
        """Variant rows join as new methods"""
        base = result_table(["gp", "blm"], ["f"], [1, 2])
        variants = result_table(["local_nn_gp_neighborhood=25"], ["f"], [1, 2])
        joined = join_sim_study(base, variants)
        assert len(joined) == 6
        assert set(joined["method"]) == {"gp", "blm", "local_nn_gp_neighborhood=25"}

    def test_join_schema_mismatch(self):
        a = result_table(["a"], ["f"], [1])
        b = result_table(["b"], ["f"], [1])
        b["coverage"] = 0.9
        with pytest.raises(SchemaError) as info:
            join_sim_study(a, b)
        assert "coverage" in str(info.value)
        with pytest.raises(SchemaError):
            join_sim_study(a, a.drop(columns=["RMSE"]))

    def test_filter(self):
        t = result_table(["a", "b"], ["f", "g"], [1, 2], n_train=(500, 1000), nsr=(0.0, 0.1))
        kept = filter_sim_study(t, n_train=1000, NSR=0)
        assert len(kept) == 8
        assert (kept["n_train"] == 1000).all() and (kept["NSR"] == 0).all()
        pd.testing.assert_frame_equal(filter_sim_study(t), t)
        assert len(filter_sim_study(t, n_train="500", fname=["f", "g"])) == 16

    def test_filter_unknown_column(self):
        with pytest.raises(SchemaError):
            filter_sim_study(result_table(["a"], ["f"], [1]), colour="red")

    def test_filter_join_commute(self):
        """Filtering then joining equals joining then filtering on disjoint tables"""
        rng = np.random.default_rng(4)
        for trial in range(20):
            a = result_table(["a", "b", "c"], ["f", "g"], [1, 2], n_train=(500, 1000), seed=trial)
            b = result_table(["a", "b", "c"], ["f", "g"], [3, 4], n_train=(500, 1000), seed=trial + 100)
            n = int(rng.choice([500, 1000]))
            left = filter_sim_study(join_sim_study(a, b), n_train=n)
            right = join_sim_study(filter_sim_study(a, n_train=n), filter_sim_study(b, n_train=n))
            pd.testing.assert_frame_equal(left, right)

    def test_csv_round_trip(self, tmp_path):
        t = run_sim_study([EmulatorSpec("baseline_t")], ["damped_cosine"], [10], M=10, n_test=10)
        path = str(tmp_path / "results.csv")
        write_results(t, path)
        back = read_results(path)
        pd.testing.assert_frame_equal(back, t, check_dtype=False)

    def test_read_missing(self, tmp_path):
        with pytest.raises(NotFoundError):
            read_results(str(tmp_path / "absent.csv"))
