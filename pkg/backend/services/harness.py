"""
Simulation study harness.

Builds every scenario of a grid in the parent process, runs one cell per
(emulator, scenario) with timing and fallback handling, and assembles the
result table in grid order whatever the number of workers.
"""
import os
import math
import time
import logging
import threading
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

import sys
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config import DEFAULT_DESIGN_TYPE, DEFAULT_FOLDS, DEFAULT_M, DEFAULT_N_TEST
from errors import (
    ConfigError,
    DomainError,
    EmulatorFailure,
    FitFailure,
    NotFoundError,
    PredictFailure,
    SchemaError,
)
from services import emulators
from services.datasets import Dataset, make_folds, scale_to_unit
from services.design import make_design, maximin_lhs
from services.emulators import BASELINE_METHOD, EmulatorSpec
from services.functions import evaluate, get_function
from services.metrics import ScoreConfig, rescale_to_unit_variance, summary_metrics
from services.rng import SplitMix64
from services.seeding import (
    CV_TYPES,
    DESIGN_STREAM,
    DESIGN_TYPES,
    FIT_STREAM,
    NOISE_STREAM,
    Scenario,
    canonical_string,
    data_seed,
    predict_seed,
    scenario_seed,
    shared_test_seed,
    substream,
)

logger = logging.getLogger("duqbench.harness")

FAILURE_TYPES = ("none", "fit", "pred")
SYNTHETIC_KEYS = ["fname", "n_train", "NSR", "design_type", "replication"]
DATASET_KEYS = ["dname", "cv_type", "n_train", "fold", "fold_size"]
METRIC_COLUMNS = ["RMSE", "FVU", "CRPS"]
TIMING_COLUMNS = ["t_fit", "t_pred", "t_tot"]

ProgressCallback = Callable[[int, int], None]


def quantile_column(q: float) -> str:
    return f"CRPS_q{int(round(q * 100))}"


def required_columns(kind: str) -> List[str]:
    keys = SYNTHETIC_KEYS if kind == "synthetic" else DATASET_KEYS
    return ["method"] + keys + METRIC_COLUMNS + TIMING_COLUMNS + ["failure_type"]


def table_kind(t: pd.DataFrame) -> str:
    if "fname" in t.columns:
        return "synthetic"
    if "dname" in t.columns:
        return "dataset"
    raise SchemaError("Result table has neither an fname nor a dname column")


def key_columns(t: pd.DataFrame) -> List[str]:
    return SYNTHETIC_KEYS if table_kind(t) == "synthetic" else DATASET_KEYS


@dataclass
class Cell:
    """Everything one (emulator, scenario) evaluation needs; picklable"""
    spec: EmulatorSpec
    key: Dict[str, object]
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    ref_sd: float
    fit_seed: int
    predict_seed: int
    M: int
    score: ScoreConfig
    timeout: Optional[float]


def _call_with_timeout(fn: Callable, timeout: Optional[float], failure_cls):
    """Run fn on a watchdog thread; an overrun becomes a failure and the thread is abandoned"""
    if timeout is None:
        return fn()
    box = {}

    def target():
        try:
            box["value"] = fn()
        except BaseException as e:
            box["error"] = e

    worker = threading.Thread(target=target, daemon=True)
    worker.start()
    worker.join(timeout)
    if worker.is_alive():
        raise failure_cls(f"timeout after {timeout}s")
    if "error" in box:
        raise box["error"]
    return box["value"]


def run_cell(cell: Cell) -> dict:
    spec = cell.spec
    method = emulators.get_emulator(spec.method)
    # methods that enforce their own timeout skip the watchdog
    watchdog = None if method.manages_timeout else cell.timeout

    start = time.perf_counter()
    failure, reason = "none", ""
    ensemble = None
    model = None

    t0 = time.perf_counter()
    try:
        model = _call_with_timeout(
            lambda: emulators.fit(spec, cell.X_train, cell.y_train, cell.fit_seed, cell.timeout),
            watchdog, FitFailure,
        )
    except (EmulatorFailure, DomainError) as e:
        failure, reason = "fit", f"{e} {getattr(e, 'diagnostics', '')}".strip()
    t_fit = time.perf_counter() - t0

    t_pred = 0.0
    if model is not None:
        t0 = time.perf_counter()
        try:
            ensemble = _call_with_timeout(
                lambda: emulators.predict(model, cell.X_test, cell.M, cell.predict_seed),
                watchdog, PredictFailure,
            )
        except (EmulatorFailure, DomainError) as e:
            failure, reason = "pred", f"{e} {getattr(e, 'diagnostics', '')}".strip()
        finally:
            emulators.release(model)
        t_pred = time.perf_counter() - t0

    if failure != "none":
        logger.warning("%s failed at %s on %s: %s; using %s", spec.label, failure,
                       _describe(cell.key), reason, BASELINE_METHOD)
        t0 = time.perf_counter()
        fallback = emulators.fit(EmulatorSpec(BASELINE_METHOD), cell.X_train, cell.y_train, cell.fit_seed)
        t_fit += time.perf_counter() - t0
        t0 = time.perf_counter()
        ensemble = emulators.predict(fallback, cell.X_test, cell.M, cell.predict_seed)
        t_pred += time.perf_counter() - t0

    bundle = summary_metrics(cell.y_test, ensemble, cell.score)
    quantiles = [bundle.CRPS_quantiles[float(q)] for q in cell.score.crps_quantiles]
    raw = np.array([bundle.RMSE, bundle.CRPS_mean, bundle.CRPS_median, bundle.interval_score] + quantiles)
    scaled, guarded = rescale_to_unit_variance(raw, cell.ref_sd)
    t_tot = time.perf_counter() - start

    row = {"method": spec.label}
    row.update(cell.key)
    row.update({
        "RMSE": float(scaled[0]),
        "FVU": bundle.FVU,
        "CRPS": float(scaled[1]),
        "t_fit": t_fit,
        "t_pred": t_pred,
        "t_tot": t_tot,
        "failure_type": failure,
        "CRPS_median": float(scaled[2]),
    })
    for q, value in zip(cell.score.crps_quantiles, scaled[4:]):
        row[quantile_column(q)] = float(value)
    row.update({
        "coverage": bundle.coverage,
        "interval_score": float(scaled[3]),
        "ref_sd_guard": bool(guarded),
    })
    logger.info("%s %s CRPS=%.4g failure=%s t_tot=%.2fs",
                spec.label, _describe(cell.key), row["CRPS"], failure, t_tot)
    return row


def _describe(key: Dict[str, object]) -> str:
    return "|".join(str(v) for v in key.values())


def _execute(cells: List[Cell], workers: int, progress: Optional[ProgressCallback]) -> List[dict]:
    total = len(cells)
    rows = []
    if workers <= 1 or total <= 1:
        for i, cell in enumerate(cells, start=1):
            rows.append(run_cell(cell))
            if progress:
                progress(i, total)
        return rows
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map yields in submission order, so rows follow the grid
        for i, row in enumerate(pool.map(run_cell, cells), start=1):
            rows.append(row)
            if progress:
                progress(i, total)
    return rows


def _validate_specs(specs: Sequence[EmulatorSpec]) -> None:
    if not specs:
        raise ConfigError("At least one emulator spec is required")
    labels = set()
    for spec in specs:
        emulators.validate_spec(spec)
        if spec.label in labels:
            raise ConfigError(f"Duplicate emulator label: {spec.label}")
        labels.add(spec.label)


def _score(score: Optional[ScoreConfig]) -> ScoreConfig:
    return score if score is not None else ScoreConfig()


# Synthetic studies

@dataclass
class ScenarioData:
    scenario: Scenario
    seed: int
    X_train: np.ndarray
    y_train: np.ndarray
    f_train: np.ndarray


def generate_training_data(s: Scenario) -> ScenarioData:
    """
    Design from seed+1, noise from seed+2. The noise sd is
    sqrt(NSR * population variance of the noise-free responses).
    """
    seed = scenario_seed(s)
    fn = get_function(s.name)
    X = make_design(s.design_type, s.n_train, fn.input_dim, substream(seed, DESIGN_STREAM)).points
    f = evaluate(s.name, X)
    sigma = math.sqrt(s.NSR * float(np.var(f)))
    if sigma > 0:
        y = f + sigma * SplitMix64(substream(seed, NOISE_STREAM)).normal(s.n_train)
    else:
        y = f.copy()
    return ScenarioData(s, seed, X, y, f)


def shared_test_set(fname: str, n_test: int) -> Tuple[np.ndarray, np.ndarray]:
    """Maximin LHS seeded by the function name only, with noise-free responses"""
    fn = get_function(fname)
    X = maximin_lhs(n_test, fn.input_dim, shared_test_seed(fname)).points
    return X, evaluate(fname, X)


def study_scenarios(
    fnames: Sequence[str],
    n_train: Sequence[int],
    NSR: Sequence[float],
    design_type: str,
    replications: Sequence[int],
) -> List[Scenario]:
    return [
        Scenario.synthetic(fname, n, nsr, design_type, rep)
        for fname in fnames
        for n in n_train
        for nsr in NSR
        for rep in replications
    ]


def seed_audit(scenarios: Sequence[Scenario]) -> List[dict]:
    return [{"scenario": canonical_string(s), "seed": scenario_seed(s)} for s in scenarios]


def run_sim_study(
    specs: Sequence[EmulatorSpec],
    fnames: Sequence[str],
    n_train: Sequence[int],
    NSR: Sequence[float] = (0.0,),
    design_type: str = DEFAULT_DESIGN_TYPE,
    replications: Sequence[int] = (1,),
    M: int = DEFAULT_M,
    n_test: int = DEFAULT_N_TEST,
    workers: int = 1,
    timeout: Optional[float] = None,
    score: Optional[ScoreConfig] = None,
    progress_callback: Optional[ProgressCallback] = None,
) -> pd.DataFrame:
    """
    One row per (spec, scenario) over fnames x n_train x NSR x replications.

    Test responses are noise-free and every method and replication of a
    function scores against the same test set. Scale-dependent metrics are
    divided by the sd of the test responses.
    """
    _validate_specs(specs)
    if not fnames or not n_train or not NSR or not replications:
        raise ConfigError("fnames, n_train, NSR and replications must be nonempty")
    if design_type not in DESIGN_TYPES:
        raise ConfigError(f"Unknown design_type: {design_type}")
    for fname in fnames:
        try:
            fn = get_function(fname)
        except NotFoundError:
            raise ConfigError(f"Unknown test function: {fname}") from None
        if fn.is_stub:
            raise ConfigError(f"Test function {fname} has no evaluator registered")
    if M < 2 or n_test < 1:
        raise ConfigError("M must be >= 2 and n_test >= 1")
    scenarios = study_scenarios(fnames, n_train, NSR, design_type, replications)
    try:
        for s in scenarios:
            s.validate()
    except DomainError as e:
        raise ConfigError(str(e)) from None

    cfg = _score(score)
    tests: Dict[str, Tuple[np.ndarray, np.ndarray, float]] = {}
    cells = []
    for s in scenarios:
        if s.name not in tests:
            X_test, y_test = shared_test_set(s.name, n_test)
            tests[s.name] = (X_test, y_test, float(np.std(y_test)))
        X_test, y_test, ref_sd = tests[s.name]
        data = generate_training_data(s)
        key = {
            "fname": s.name,
            "n_train": s.n_train,
            "NSR": s.NSR,
            "design_type": s.design_type,
            "replication": s.replication,
        }
        for spec in specs:
            cells.append(Cell(
                spec, key, data.X_train, data.y_train, X_test, y_test, ref_sd,
                substream(data.seed, FIT_STREAM), predict_seed(data.seed),
                int(M), cfg, timeout,
            ))

    logger.info("Running %d cells (%d scenarios x %d emulators) on %d worker(s)",
                len(cells), len(scenarios), len(specs), workers)
    rows = _execute(cells, int(workers), progress_callback)
    return pd.DataFrame(rows)


# Dataset studies

def dataset_scenarios(dataset: Dataset, cv_type: str, folds: int) -> List[Tuple[Scenario, object]]:
    seed = data_seed(dataset.name, cv_type, folds)
    return [
        (Scenario.dataset(dataset.name, fold.train.shape[0], fold.index, cv_type, fold.fold_size), fold)
        for fold in make_folds(dataset.n, cv_type, folds, seed)
    ]


def run_sim_study_data(
    specs: Sequence[EmulatorSpec],
    dataset: Dataset,
    cv_type: str = "cross_validation",
    folds: int = DEFAULT_FOLDS,
    M: int = DEFAULT_M,
    workers: int = 1,
    timeout: Optional[float] = None,
    score: Optional[ScoreConfig] = None,
    progress_callback: Optional[ProgressCallback] = None,
) -> pd.DataFrame:
    """
    Cross validation or bootstrap over a tabular dataset. Inputs are scaled to
    the unit cube by the training fold; metrics are rescaled by the sd of the
    training responses.
    """
    _validate_specs(specs)
    if cv_type not in CV_TYPES:
        raise ConfigError(f"Unknown cv_type: {cv_type}")
    try:
        pairs = dataset_scenarios(dataset, cv_type, int(folds))
    except DomainError as e:
        raise ConfigError(str(e)) from None

    cfg = _score(score)
    cells = []
    for s, fold in pairs:
        seed = scenario_seed(s)
        X_train, X_test = scale_to_unit(dataset.X[fold.train], dataset.X[fold.test])
        y_train = dataset.y[fold.train]
        key = {
            "dname": s.name,
            "cv_type": s.cv_type,
            "n_train": s.n_train,
            "fold": s.fold,
            "fold_size": s.fold_size,
        }
        for spec in specs:
            cells.append(Cell(
                spec, key, X_train, y_train, X_test, dataset.y[fold.test], float(np.std(y_train)),
                substream(seed, FIT_STREAM), predict_seed(seed),
                int(M), cfg, timeout,
            ))

    logger.info("Running %d cells on %s (%s, %d folds)", len(cells), dataset.name, cv_type, folds)
    rows = _execute(cells, int(workers), progress_callback)
    return pd.DataFrame(rows)


# Result tables

def check_schema(t: pd.DataFrame) -> str:
    kind = table_kind(t)
    missing = [c for c in required_columns(kind) if c not in t.columns]
    if missing:
        raise SchemaError(f"Result table is missing column(s): {', '.join(missing)}")
    bad = sorted(set(t["failure_type"].astype(str)) - set(FAILURE_TYPES))
    if bad:
        raise SchemaError(f"Invalid failure_type value(s): {', '.join(bad)}")
    return kind


def join_sim_study(a: pd.DataFrame, b: pd.DataFrame) -> pd.DataFrame:
    """
    Row union of two result tables. Duplicate (method, scenario) keys keep
    the row from `a`.
    """
    if b is None or b.empty:
        return a.copy()
    if a is None or a.empty:
        return b.copy()
    kind_a, kind_b = check_schema(a), check_schema(b)
    if kind_a != kind_b:
        raise SchemaError(f"Cannot join a {kind_a} table with a {kind_b} table")
    req = set(required_columns(kind_a))
    extra_a = set(a.columns) - req
    extra_b = set(b.columns) - req
    if extra_a != extra_b:
        diff = sorted(extra_a ^ extra_b)
        raise SchemaError(f"Result tables disagree on column(s): {', '.join(diff)}")

    joined = pd.concat([a, b[list(a.columns)]], ignore_index=True)
    keys = ["method"] + key_columns(joined)
    dupes = joined.duplicated(subset=keys, keep="first")
    if dupes.any():
        logger.warning("join_sim_study: %d duplicate (method, scenario) row(s) resolved in favor of the first table",
                       int(dupes.sum()))
    return joined.loc[~dupes].reset_index(drop=True)


def _coerce(series: pd.Series, value):
    if isinstance(value, str) and pd.api.types.is_numeric_dtype(series) and not pd.api.types.is_bool_dtype(series):
        try:
            return float(value)
        except ValueError:
            raise SchemaError(f"Filter value {value!r} is not numeric for column {series.name}") from None
    return value


def filter_sim_study(t: pd.DataFrame, **filters) -> pd.DataFrame:
    """Rows matching every column=value filter; list values match any member"""
    unknown = [c for c in filters if c not in t.columns]
    if unknown:
        raise SchemaError(f"Unknown filter column(s): {', '.join(unknown)}")
    mask = pd.Series(True, index=t.index)
    for column, value in filters.items():
        if isinstance(value, (list, tuple, set)):
            mask &= t[column].isin([_coerce(t[column], v) for v in value])
        else:
            mask &= t[column] == _coerce(t[column], value)
    return t.loc[mask].reset_index(drop=True)


def write_results(t: pd.DataFrame, path: str) -> None:
    t.to_csv(path, index=False)


def read_results(path: str) -> pd.DataFrame:
    if not os.path.exists(path):
        raise NotFoundError(f"Results file not found: {path}")
    t = pd.read_csv(path, float_precision="round_trip", dtype={"method": str, "failure_type": str})
    check_schema(t)
    return t


# Studies from a StudyConfig

def specs_from_config(config) -> List[EmulatorSpec]:
    return [emulators.spec_from_config(entry) for entry in config.emulators]


def run_study(config, progress_callback: Optional[ProgressCallback] = None) -> Tuple[pd.DataFrame, dict]:
    """Synthetic study described by a config.StudyConfig; returns (results, manifest)"""
    from config import validate_study_config

    validate_study_config(config)
    if not config.functions:
        raise ConfigError("A synthetic study needs at least one function")
    table = run_sim_study(
        specs_from_config(config),
        config.functions,
        config.n_train,
        config.NSR,
        config.design_type,
        config.replications,
        M=config.M,
        n_test=config.n_test,
        workers=config.resolved_workers(),
        timeout=config.timeout,
        score=ScoreConfig.from_settings(config.score),
        progress_callback=progress_callback,
    )
    scenarios = study_scenarios(
        config.functions, config.n_train, config.NSR, config.design_type, config.replications
    )
    return table, study_manifest(config, seed_audit(scenarios))


def run_data_study(config, progress_callback: Optional[ProgressCallback] = None) -> Tuple[pd.DataFrame, dict]:
    """Every dataset of a config.StudyConfig, joined into one table"""
    from config import validate_study_config
    from services.datasets import load_dataset

    validate_study_config(config)
    if not config.datasets:
        raise ConfigError("A dataset study needs at least one dataset")
    table = pd.DataFrame()
    audit = []
    for entry in config.datasets:
        dataset = load_dataset(entry.path, entry.response, entry.name)
        part = run_sim_study_data(
            specs_from_config(config),
            dataset,
            config.cv_type,
            config.folds,
            M=config.M,
            workers=config.resolved_workers(),
            timeout=config.timeout,
            score=ScoreConfig.from_settings(config.score),
            progress_callback=progress_callback,
        )
        table = join_sim_study(table, part)
        audit.extend(seed_audit([s for s, _ in dataset_scenarios(dataset, config.cv_type, config.folds)]))
    return table, study_manifest(config, audit)


def study_manifest(config, seeds: List[dict]) -> dict:
    """Config, package version and per-scenario seeds; no timestamps, so reruns match"""
    from config import VERSION

    return {
        "version": VERSION,
        "config": config.model_dump(mode="json"),
        "seeds": seeds,
    }


def write_study(out_dir: str, table: pd.DataFrame, manifest: dict) -> Tuple[str, str]:
    import json

    os.makedirs(out_dir, exist_ok=True)
    results_path = os.path.join(out_dir, "results.csv")
    manifest_path = os.path.join(out_dir, "manifest.json")
    write_results(table, results_path)
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    logger.info("Wrote %s (%d rows) and %s", results_path, len(table), manifest_path)
    return results_path, manifest_path
