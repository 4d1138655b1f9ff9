"""
Tabular datasets: CSV ingestion, fold construction and per-fold input scaling
"""
import os
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

import sys
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from errors import DomainError, IngestionError
from services.rng import SplitMix64
from services.seeding import CV_TYPES

logger = logging.getLogger("duqbench.datasets")


@dataclass
class Dataset:
    name: str
    X: np.ndarray
    y: np.ndarray
    predictors: List[str]
    response: str

    @property
    def n(self) -> int:
        return self.X.shape[0]


@dataclass
class Fold:
    index: int  # 1-based
    train: np.ndarray
    test: np.ndarray

    @property
    def fold_size(self) -> int:
        return int(self.test.shape[0])


def load_dataset(path: str, response: str, name: Optional[str] = None) -> Dataset:
    """
    Read a CSV with a header. Every column except the response is a predictor
    and must be numeric without missing values.
    """
    if not os.path.exists(path):
        raise IngestionError(f"Dataset file not found: {path}")
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise IngestionError(f"Could not parse {path}: {e}") from None

    if response not in frame.columns:
        raise IngestionError(f"Response column '{response}' not in {path}")
    predictors = [c for c in frame.columns if c != response]
    if not predictors:
        raise IngestionError(f"{path} has no predictor columns")
    non_numeric = [c for c in frame.columns if not pd.api.types.is_numeric_dtype(frame[c])]
    if non_numeric:
        raise IngestionError(f"Non-numeric column(s) in {path}: {', '.join(map(str, non_numeric))}")
    if frame.isna().any().any():
        raise IngestionError(f"{path} has missing values")
    if len(frame) < 3:
        raise IngestionError(f"{path} needs at least 3 rows, got {len(frame)}")

    dname = name or os.path.splitext(os.path.basename(path))[0]
    if "|" in dname:
        raise IngestionError(f"Dataset name may not contain '|': {dname}")
    logger.info("Loaded %s: %d rows, %d predictors", dname, len(frame), len(predictors))
    return Dataset(
        name=dname,
        X=frame[predictors].to_numpy(dtype=np.float64),
        y=frame[response].to_numpy(dtype=np.float64),
        predictors=[str(c) for c in predictors],
        response=response,
    )


def make_folds(n: int, cv_type: str, folds: int, seed: int) -> List[Fold]:
    """
    cross_validation: a seeded permutation split into `folds` near-equal parts.
    bootstrap: fold k resamples n rows with replacement using seed + k and
    tests on the out-of-bag rows; folds without out-of-bag rows are skipped.
    """
    if cv_type not in CV_TYPES:
        raise DomainError(f"Unknown cv_type: {cv_type}")
    if cv_type == "cross_validation":
        if folds < 2 or folds > n:
            raise DomainError(f"Cross validation needs 2 <= folds <= n, got folds={folds}, n={n}")
        parts = np.array_split(SplitMix64(seed).permutation(n), folds)
        result = []
        for k, test in enumerate(parts, start=1):
            mask = np.ones(n, dtype=bool)
            mask[test] = False
            result.append(Fold(k, np.flatnonzero(mask), np.sort(test)))
        return result

    if folds < 1:
        raise DomainError(f"Bootstrap needs folds >= 1, got {folds}")
    result = []
    for k in range(1, folds + 1):
        train = SplitMix64(seed + k).integers(n, n)
        oob = np.setdiff1d(np.arange(n), train)
        if oob.size == 0:
            logger.warning("Bootstrap fold %d has no out-of-bag rows; skipped", k)
            continue
        result.append(Fold(k, train, oob))
    return result


def scale_to_unit(X_train: np.ndarray, X_test: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Min/max scale each column by the training fold; constant training columns
    map to 0.5. Test rows may fall outside [0, 1].
    """
    lo = X_train.min(axis=0)
    span = X_train.max(axis=0) - lo
    constant = span == 0
    safe = np.where(constant, 1.0, span)
    train = (X_train - lo) / safe
    test = (X_test - lo) / safe
    train[:, constant] = 0.5
    test[:, constant] = 0.5
    return train, test
