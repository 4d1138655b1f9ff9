"""
Probabilistic emulator interface and the built-in method registry.

Every method is a fit/predict pair:
    fit(X, y, seed, **hyperparameters) -> state
    predict(state, X_test, M, seed)    -> M x m draws
"""
import os
import math
import time
import logging
import itertools
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

import numpy as np
from scipy import stats
from scipy.special import stdtrit

import sys
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from errors import (
    ConfigError,
    ConflictError,
    DomainError,
    EmulatorFailure,
    FitFailure,
    NotFoundError,
    PredictFailure,
)
from services.metrics import PredictiveEnsemble
from services.rng import SplitMix64
from services import linear
from services import approx_gp
from services import external
from services.gp import DEFAULT_MULTISTARTS, fit_scaled_gp

logger = logging.getLogger("duqbench.emulators")

BASELINE_METHOD = "baseline_t"
BASELINE_DF_GRID = (3.0, 5.0, 10.0, 30.0, math.inf)


@dataclass
class EmulatorSpec:
    """One emulator as it appears in a study"""
    method: str
    hyperparameters: Dict[str, Any] = field(default_factory=dict)
    variant_label: Optional[str] = None

    @property
    def label(self) -> str:
        """Name written to the method column"""
        if self.variant_label:
            return f"{self.method}_{self.variant_label}"
        return self.method


@dataclass
class FittedModel:
    method: str
    state: Any
    fit_seed: int
    fit_seconds: float
    input_dim: int


@dataclass
class EmulatorMethod:
    """Registry entry for a fit/predict pair"""
    name: str
    description: str
    fit: Callable[..., Any]
    predict: Callable[..., np.ndarray]
    defaults: Dict[str, Any] = field(default_factory=dict)
    min_n: int = 2
    required: tuple = ()
    # The method enforces its own per-call timeout (passed as `timeout`)
    manages_timeout: bool = False


# baseline_t

@dataclass
class StudentT:
    df: float
    loc: float
    scale: float


def fit_baseline_t(X: np.ndarray, y: np.ndarray, seed: int) -> StudentT:
    """
    Location-scale Student-t on the marginal responses; df by maximum
    likelihood over BASELINE_DF_GRID, location and scale by ML given df.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] == 1 or np.ptp(y) == 0.0:
        return StudentT(math.inf, float(y[0]), 0.0)

    best, best_ll = None, -math.inf
    for df in BASELINE_DF_GRID:
        if math.isinf(df):
            loc, scale = float(np.mean(y)), float(np.std(y))
            ll = float(np.sum(stats.norm.logpdf(y, loc, scale)))
        else:
            _, loc, scale = stats.t.fit(y, fix_df=df)
            ll = float(np.sum(stats.t.logpdf(y, df, loc, scale)))
        if ll > best_ll:
            best, best_ll = StudentT(df, float(loc), float(scale)), ll
    return best


def predict_baseline_t(state: StudentT, X: np.ndarray, M: int, seed: int) -> np.ndarray:
    """Input-independent: every test point receives the same M draws"""
    rng = SplitMix64(seed)
    if math.isinf(state.df):
        z = rng.normal(M)
    else:
        u = np.clip(rng.random(M), 2.0**-53, 1.0 - 2.0**-53)
        z = stdtrit(state.df, u)
    column = state.loc + state.scale * z
    return np.tile(column[:, None], (1, X.shape[0]))


# blm

def fit_blm(
    X: np.ndarray,
    y: np.ndarray,
    seed: int,
    prior_precision: float = linear.DEFAULT_PRIOR_PRECISION,
    a0: float = linear.DEFAULT_A0,
    b0: float = linear.DEFAULT_B0,
) -> linear.NIGPosterior:
    return linear.nig_posterior(linear.with_intercept(X), y, prior_precision, a0, b0)


def predict_blm(state: linear.NIGPosterior, X: np.ndarray, M: int, seed: int) -> np.ndarray:
    return linear.predictive_draws(state, linear.with_intercept(X), M, seed)


# gp

def fit_gp(X, y, seed, multistarts: int = DEFAULT_MULTISTARTS, nugget: Optional[float] = None):
    return fit_scaled_gp(X, y, seed, multistarts=multistarts, nugget=nugget)


def predict_gp(state, X, M, seed):
    return state.draws(X, M, seed)


# rffgp

RFF_LENGTHSCALE_GRID = (0.1, 0.2, 0.5, 1.0, 2.0)
RFF_RIDGE_GRID = (1e-6, 1e-4, 1e-2, 1.0)


@dataclass
class RFFState:
    frequencies: np.ndarray
    phases: np.ndarray
    posterior: linear.NIGPosterior
    y_mean: float
    y_sd: float
    lengthscale: float
    ridge: float


def fit_rffgp(
    X: np.ndarray,
    y: np.ndarray,
    seed: int,
    n_features: Optional[int] = None,
    lengthscales=RFF_LENGTHSCALE_GRID,
    ridges=RFF_RIDGE_GRID,
) -> RFFState:
    """
    Random Fourier features of a squared-exponential kernel. The shared
    lengthscale (relative to sqrt(p)) and the weight-prior precision are
    picked over a grid by log evidence of the conjugate posterior.
    """
    n, p = X.shape
    D = int(n_features) if n_features else approx_gp.rff_feature_count(n)
    rng = SplitMix64(seed)
    base = rng.normal((D, p))
    phases = 2.0 * math.pi * rng.random(D)
    z = (y - np.mean(y))
    y_sd = float(np.std(y)) or 1.0
    z = z / y_sd

    best = None
    for rel in lengthscales:
        ell = float(rel) * math.sqrt(p)
        W = base / ell
        Phi = linear.random_fourier_features(X, W, phases)
        for ridge in ridges:
            post = linear.nig_posterior(Phi, z, prior_precision=float(ridge))
            if best is None or post.log_evidence > best.posterior.log_evidence:
                best = RFFState(W, phases, post, float(np.mean(y)), y_sd, ell, float(ridge))
    logger.debug("rffgp: D=%d lengthscale=%.3g ridge=%.1e", D, best.lengthscale, best.ridge)
    return best


def predict_rffgp(state: RFFState, X: np.ndarray, M: int, seed: int) -> np.ndarray:
    Phi = linear.random_fourier_features(X, state.frequencies, state.phases)
    draws = linear.predictive_draws(state.posterior, Phi, M, seed)
    return draws * state.y_sd + state.y_mean


# Registry

def _builtin_methods() -> List[EmulatorMethod]:
    return [
        EmulatorMethod(
            name=BASELINE_METHOD,
            description="Student-t fit to the marginal training responses (input-independent)",
            fit=fit_baseline_t,
            predict=predict_baseline_t,
            min_n=1,
        ),
        EmulatorMethod(
            name="blm",
            description="Conjugate Bayesian linear regression (normal-inverse-gamma)",
            fit=fit_blm,
            predict=predict_blm,
            defaults={
                "prior_precision": linear.DEFAULT_PRIOR_PRECISION,
                "a0": linear.DEFAULT_A0,
                "b0": linear.DEFAULT_B0,
            },
        ),
        EmulatorMethod(
            name="gp",
            description="Anisotropic squared-exponential GP with nugget, ML-II hyperparameters",
            fit=fit_gp,
            predict=predict_gp,
            defaults={"multistarts": DEFAULT_MULTISTARTS, "nugget": None},
        ),
        EmulatorMethod(
            name="rffgp",
            description="Random Fourier feature regression with min(512, 2 floor(sqrt n)) features",
            fit=fit_rffgp,
            predict=predict_rffgp,
            defaults={
                "n_features": None,
                "lengthscales": list(RFF_LENGTHSCALE_GRID),
                "ridges": list(RFF_RIDGE_GRID),
            },
        ),
        EmulatorMethod(
            name="sod_gp",
            description="Subset-of-data GP on a greedy maximin subset",
            fit=approx_gp.fit_sod_gp,
            predict=approx_gp.predict_sod_gp,
            defaults={"subset_size": None, "multistarts": DEFAULT_MULTISTARTS},
        ),
        EmulatorMethod(
            name="local_nn_gp",
            description="Nearest-neighbor local GP per test point with shared hyperparameters",
            fit=approx_gp.fit_local_nn_gp,
            predict=approx_gp.predict_local_nn_gp,
            defaults={
                "neighborhood": None,
                "hyper_subset": approx_gp.LOCAL_HYPER_SUBSET,
                "multistarts": DEFAULT_MULTISTARTS,
            },
        ),
        EmulatorMethod(
            name="rbcm",
            description="Robust Bayesian committee machine over k-medoids partitions",
            fit=approx_gp.fit_rbcm,
            predict=approx_gp.predict_rbcm,
            defaults={"partitions": None, "multistarts": DEFAULT_MULTISTARTS},
        ),
        EmulatorMethod(
            name="external",
            description="Third-party emulator over the line-delimited JSON subprocess protocol",
            fit=external.fit_external,
            predict=external.predict_external,
            defaults={"command": None, "timeout": None},
            required=("command",),
            manages_timeout=True,
        ),
    ]


EMULATORS: Dict[str, EmulatorMethod] = {m.name: m for m in _builtin_methods()}

BUILTIN_METHODS = tuple(name for name in EMULATORS if name != "external")


def register_emulator(method: EmulatorMethod, replace: bool = False) -> None:
    if method.name in EMULATORS and not replace:
        raise ConflictError(f"Emulator already registered: {method.name}")
    EMULATORS[method.name] = method


def get_emulator(name: str) -> EmulatorMethod:
    if name not in EMULATORS:
        raise NotFoundError(f"Unknown emulator method: {name}")
    return EMULATORS[name]


def get_emulators_list() -> List[dict]:
    """Get registered methods for display"""
    return [
        {
            "name": m.name,
            "description": m.description,
            "defaults": {k: v for k, v in m.defaults.items()},
            "min_n": m.min_n,
        }
        for m in EMULATORS.values()
    ]


def spec_from_config(entry) -> EmulatorSpec:
    """EmulatorSpec from a config.EmulatorConfig (or anything with the same fields)"""
    return EmulatorSpec(
        method=entry.method,
        hyperparameters=dict(entry.hyperparameters or {}),
        variant_label=entry.variant_label,
    )


def validate_spec(spec: EmulatorSpec) -> None:
    if spec.method not in EMULATORS:
        raise ConfigError(f"Unknown emulator method: {spec.method}")
    method = EMULATORS[spec.method]
    unknown = sorted(set(spec.hyperparameters) - set(method.defaults))
    if unknown:
        raise ConfigError(f"Unknown hyperparameter(s) for {spec.method}: {', '.join(unknown)}")
    for key in method.required:
        if spec.hyperparameters.get(key) is None:
            raise ConfigError(f"Emulator {spec.method} requires hyperparameter '{key}'")
    if spec.variant_label is not None and (not spec.variant_label or "|" in spec.variant_label):
        raise ConfigError(f"Invalid variant label: {spec.variant_label!r}")


def variant_grid(method: str, **axes) -> List[EmulatorSpec]:
    """
    Cartesian grid of hyperparameter variants, each labelled so it joins as
    its own method, e.g. variant_grid("local_nn_gp", neighborhood=[25, 50])
    gives local_nn_gp_neighborhood=25 and local_nn_gp_neighborhood=50.
    """
    if not axes:
        return [EmulatorSpec(method)]
    keys = sorted(axes)
    specs = []
    for values in itertools.product(*(axes[k] for k in keys)):
        hyper = dict(zip(keys, values))
        label = ",".join(f"{k}={v}" for k, v in hyper.items())
        spec = EmulatorSpec(method, hyper, label)
        validate_spec(spec)
        specs.append(spec)
    return specs


def _check_training_data(method: EmulatorMethod, X: np.ndarray, y: np.ndarray) -> None:
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise DomainError(f"Training data shapes disagree: X {X.shape}, y {y.shape}")
    if X.shape[0] < method.min_n:
        raise DomainError(f"{method.name} needs n >= {method.min_n}, got {X.shape[0]}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise DomainError("Training data must be finite")


def fit(spec: EmulatorSpec, X, y, seed: int, timeout: Optional[float] = None) -> FittedModel:
    """
    Fit one emulator. Numerical trouble inside the method surfaces as FitFailure;
    malformed input raises DomainError.
    """
    method = get_emulator(spec.method)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_training_data(method, X, y)

    kwargs = dict(spec.hyperparameters)
    if method.manages_timeout and kwargs.get("timeout") is None:
        kwargs["timeout"] = timeout

    start = time.perf_counter()
    try:
        state = method.fit(X, y, int(seed), **kwargs)
    except EmulatorFailure:
        raise
    except Exception as e:
        raise FitFailure(f"{spec.label} fit failed: {type(e).__name__}: {e}") from e
    elapsed = time.perf_counter() - start
    return FittedModel(spec.method, state, int(seed), elapsed, X.shape[1])


def predict(model: FittedModel, X_test, M: int, seed: int) -> PredictiveEnsemble:
    X_test = np.asarray(X_test, dtype=np.float64)
    if X_test.ndim != 2 or X_test.shape[1] != model.input_dim:
        raise DomainError(
            f"X_test must have {model.input_dim} columns, got shape {X_test.shape}"
        )
    if int(M) < 2:
        raise DomainError(f"M must be >= 2, got {M}")

    method = get_emulator(model.method)
    try:
        draws = method.predict(model.state, X_test, int(M), int(seed))
    except EmulatorFailure as e:
        if e.stage != "pred":
            raise PredictFailure(e.reason, e.diagnostics) from e
        raise
    except Exception as e:
        raise PredictFailure(f"{model.method} predict failed: {type(e).__name__}: {e}") from e

    draws = np.asarray(draws, dtype=np.float64)
    if draws.shape != (int(M), X_test.shape[0]):
        raise PredictFailure(
            f"{model.method} returned draws of shape {draws.shape}, expected {(int(M), X_test.shape[0])}"
        )
    if not np.all(np.isfinite(draws)):
        raise PredictFailure(f"{model.method} returned non-finite draws")
    return PredictiveEnsemble(draws)


def release(model: Optional[FittedModel]) -> None:
    """Free resources held by a fitted model (external processes)"""
    if model is None:
        return
    close = getattr(model.state, "close", None)
    if callable(close):
        close()
