"""
Configuration management for duqbench
Defaults, study configuration files (TOML) and logging setup
"""
import os
import logging
try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib
from typing import Any, Dict, List, Optional

import tomli_w
from pydantic import BaseModel, Field, ValidationError

from errors import ConfigError

VERSION = "1.0.0"

# Study defaults
DEFAULT_N_TEST = 1000
DEFAULT_M = 1000
DEFAULT_N_TRAIN = [1000]
DEFAULT_NSR = [0.0]
DEFAULT_DESIGN_TYPE = "LHS"
DEFAULT_REPLICATIONS = [1]
DEFAULT_FOLDS = 10
DEFAULT_OUT_DIR = "duqbench_out"
WORKERS_ENV_VAR = "DUQBENCH_WORKERS"

# Maximin LHS swap budget per design point
MAXIMIN_ITERS_PER_POINT = 50

# Scoring defaults
DEFAULT_EPSILON = 0.001
DEFAULT_CAP = 100.0
DEFAULT_INTERVAL_ALPHA = 0.05
DEFAULT_CRPS_QUANTILES = [0.0, 0.25, 0.5, 0.75, 1.0]
DEFAULT_CRPS_VARIANT = "printed"

# Heatmap display truncation
HEATMAP_FLOOR = 0.001
HEATMAP_CEIL = 1.0

# Benchmark grid of the synthetic studies
BENCHMARK_N_TRAIN = [500, 1000, 5000]
BENCHMARK_NSR = [0.0, 0.1]
BENCHMARK_REPLICATIONS = list(range(1, 11))

LOG_FORMAT = "[%(name)s] %(message)s"


def configure_logging(verbose: bool = False) -> None:
    """Tagged log lines on stderr, e.g. "[duqbench.harness] ..." """
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format=LOG_FORMAT,
        force=True,
    )


def get_default_workers() -> int:
    """Workers default from DUQBENCH_WORKERS, else 1"""
    raw = os.environ.get(WORKERS_ENV_VAR)
    if not raw:
        return 1
    try:
        workers = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV_VAR} must be an integer, got {raw!r}") from None
    if workers < 1:
        raise ConfigError(f"{WORKERS_ENV_VAR} must be >= 1, got {workers}")
    return workers


def benchmark_settings() -> dict:
    """The benchmark grid used for the synthetic studies"""
    return {
        "n_train": list(BENCHMARK_N_TRAIN),
        "NSR": list(BENCHMARK_NSR),
        "replications": list(BENCHMARK_REPLICATIONS),
        "n_test": DEFAULT_N_TEST,
        "design_type": DEFAULT_DESIGN_TYPE,
    }


class EmulatorConfig(BaseModel):
    """One emulator entry in a study"""
    method: str
    hyperparameters: Dict[str, Any] = Field(default_factory=dict)
    variant_label: Optional[str] = None


class DatasetConfig(BaseModel):
    """A user-supplied CSV dataset"""
    path: str
    response: str
    name: Optional[str] = None


class ScoreSettings(BaseModel):
    epsilon: float = DEFAULT_EPSILON
    cap: float = DEFAULT_CAP
    interval_alpha: float = DEFAULT_INTERVAL_ALPHA
    crps_quantiles: List[float] = Field(default_factory=lambda: list(DEFAULT_CRPS_QUANTILES))
    crps_variant: str = DEFAULT_CRPS_VARIANT


class StudyConfig(BaseModel):
    """Everything needed to run (and re-run) a study"""
    functions: List[str] = Field(default_factory=list)
    datasets: List[DatasetConfig] = Field(default_factory=list)
    emulators: List[EmulatorConfig] = Field(default_factory=list)
    n_train: List[int] = Field(default_factory=lambda: list(DEFAULT_N_TRAIN))
    NSR: List[float] = Field(default_factory=lambda: list(DEFAULT_NSR))
    design_type: str = DEFAULT_DESIGN_TYPE
    replications: List[int] = Field(default_factory=lambda: list(DEFAULT_REPLICATIONS))
    cv_type: str = "cross_validation"
    folds: int = DEFAULT_FOLDS
    M: int = DEFAULT_M
    n_test: int = DEFAULT_N_TEST
    workers: Optional[int] = None
    timeout: Optional[float] = None
    out: str = DEFAULT_OUT_DIR
    score: ScoreSettings = Field(default_factory=ScoreSettings)

    def resolved_workers(self) -> int:
        return self.workers if self.workers is not None else get_default_workers()


def load_study_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> StudyConfig:
    """
    Load a TOML study config; flag overrides win over file values.
    Overrides with value None are ignored.
    """
    data: Dict[str, Any] = {}
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"Config file not found: {path}")
        try:
            with open(path, "rb") as f:
                data = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"Invalid TOML in {path}: {e}") from None

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "score":
            data.setdefault("score", {}).update(value)
        else:
            data[key] = value

    try:
        return StudyConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid study config: {e}") from None


def dump_study_config(config: StudyConfig) -> str:
    # TOML has no null; unset optionals are simply omitted
    return tomli_w.dumps(config.model_dump(exclude_none=True))


def save_study_config(config: StudyConfig, path: str) -> None:
    with open(path, "w") as f:
        f.write(dump_study_config(config))


def validate_study_config(config: StudyConfig) -> None:
    """Check every name in the config against the registries before running"""
    from services.functions import get_function
    from services.emulators import validate_spec, spec_from_config
    from services.seeding import CV_TYPES, DESIGN_TYPES

    if not config.functions and not config.datasets:
        raise ConfigError("Study needs at least one function or dataset")
    if not config.emulators:
        raise ConfigError("Study needs at least one emulator")
    for name in config.functions:
        try:
            fn = get_function(name)
        except KeyError:
            raise ConfigError(f"Unknown test function: {name}") from None
        if fn.is_stub:
            raise ConfigError(f"Test function {name} has no evaluator registered")
    for dataset in config.datasets:
        if not os.path.exists(dataset.path):
            raise ConfigError(f"Dataset file not found: {dataset.path}")

    labels = set()
    for entry in config.emulators:
        spec = spec_from_config(entry)
        validate_spec(spec)
        if spec.label in labels:
            raise ConfigError(f"Duplicate emulator label: {spec.label}")
        labels.add(spec.label)

    if config.design_type not in DESIGN_TYPES:
        raise ConfigError(f"Unknown design_type: {config.design_type}")
    if config.cv_type not in CV_TYPES:
        raise ConfigError(f"Unknown cv_type: {config.cv_type}")
    if config.functions:
        if not config.n_train or any(n < 1 for n in config.n_train):
            raise ConfigError("n_train values must be >= 1")
        if not config.NSR or any(v < 0 for v in config.NSR):
            raise ConfigError("NSR values must be >= 0")
        if not config.replications or any(r < 1 for r in config.replications):
            raise ConfigError("replications must be positive integers")
    if config.cv_type == "cross_validation" and config.folds < 2:
        raise ConfigError("Cross validation needs folds >= 2")
    if config.M < 2:
        raise ConfigError("M must be >= 2")
    if config.n_test < 1:
        raise ConfigError("n_test must be >= 1")
    if config.timeout is not None and config.timeout <= 0:
        raise ConfigError("timeout must be positive")
    if config.score.crps_variant not in ("printed", "fair"):
        raise ConfigError(f"Unknown crps_variant: {config.score.crps_variant}")
    config.resolved_workers()
