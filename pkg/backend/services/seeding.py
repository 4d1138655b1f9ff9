"""
Deterministic per-scenario seeds.

Canonical strings (UTF-8):
    synthetic: fname|n_train|NSR|design_type|rep=<k>
    dataset:   dname|cv_type|fold_size|fold=<k>

NSR is written as the shortest decimal that round-trips ("0", "0.1", "1e-05").
The seed is the polynomial hash of the string bytes, by Horner's rule:

    h = 0
    for byte in text.encode("utf-8"):
        h = (h * 31 + byte) mod (2^61 - 1)
"""
import os
import math
from dataclasses import dataclass
from typing import Optional

import sys
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from errors import DomainError

HASH_BASE = 31
HASH_MODULUS = 2**61 - 1

# Offsets added to a scenario seed for its stochastic stages. While rep=k and
# rep=k+1 have the same digit count their hashes differ by exactly one, so
# replication k's noise stream is replication k+1's design stream.
DESIGN_STREAM = 1
NOISE_STREAM = 2
FIT_STREAM = 3

DESIGN_TYPES = ("LHS", "maximin_LHS", "uniform")
CV_TYPES = ("cross_validation", "bootstrap")


def polynomial_hash(text: str) -> int:
    h = 0
    for byte in text.encode("utf-8"):
        h = (h * HASH_BASE + byte) % HASH_MODULUS
    return h


def format_nsr(nsr: float) -> str:
    """Shortest round-trip decimal; integral values drop the trailing .0"""
    value = float(nsr)
    if value.is_integer():
        return str(int(value))
    return repr(value)


@dataclass(frozen=True)
class Scenario:
    """
    Identity of one benchmark cell.
    Synthetic scenarios carry a replication; dataset scenarios carry
    fold, cv_type and fold_size instead.
    """
    kind: str
    name: str
    n_train: int
    NSR: float = 0.0
    design_type: Optional[str] = None
    replication: Optional[int] = None
    fold: Optional[int] = None
    cv_type: Optional[str] = None
    fold_size: Optional[int] = None

    @classmethod
    def synthetic(cls, fname: str, n_train: int, NSR: float, design_type: str, replication: int):
        return cls("synthetic", fname, int(n_train), float(NSR), design_type, int(replication))

    @classmethod
    def dataset(cls, dname: str, n_train: int, fold: int, cv_type: str, fold_size: int):
        return cls("dataset", dname, int(n_train), 0.0, None, None, int(fold), cv_type, int(fold_size))

    def validate(self) -> None:
        if not self.name or "|" in self.name:
            raise DomainError(f"Scenario name must be non-empty without '|': {self.name!r}")
        if self.n_train < 1:
            raise DomainError(f"n_train must be >= 1, got {self.n_train}")
        if not math.isfinite(self.NSR) or self.NSR < 0:
            raise DomainError(f"NSR must be finite and >= 0, got {self.NSR}")
        dataset_keys = (self.fold, self.cv_type, self.fold_size)
        if self.kind == "synthetic":
            if self.replication is None or any(v is not None for v in dataset_keys):
                raise DomainError("Synthetic scenarios take a replication and no fold keys")
            if self.replication < 1:
                raise DomainError(f"replication must be positive, got {self.replication}")
            if self.design_type not in DESIGN_TYPES:
                raise DomainError(f"Unknown design_type: {self.design_type}")
        elif self.kind == "dataset":
            if self.replication is not None or any(v is None for v in dataset_keys):
                raise DomainError("Dataset scenarios take fold, cv_type and fold_size")
            if self.fold < 1 or self.fold_size < 1:
                raise DomainError("fold and fold_size must be positive")
            if self.cv_type not in CV_TYPES:
                raise DomainError(f"Unknown cv_type: {self.cv_type}")
        else:
            raise DomainError(f"Unknown scenario kind: {self.kind}")


def canonical_string(s: Scenario) -> str:
    if s.kind == "synthetic":
        return f"{s.name}|{s.n_train}|{format_nsr(s.NSR)}|{s.design_type}|rep={s.replication}"
    return f"{s.name}|{s.cv_type}|{s.fold_size}|fold={s.fold}"


def scenario_seed(s: Scenario) -> int:
    s.validate()
    return polynomial_hash(canonical_string(s))


def substream(seed: int, stage: int) -> int:
    return int(seed) + int(stage)


def predict_seed(seed: int) -> int:
    """Seed of the predictive draws; hashed so it stays clear of the +k offsets of any scenario"""
    return polynomial_hash(f"{int(seed)}|predict")


def shared_test_seed(fname: str) -> int:
    """Shared test set seed; depends on the function name only"""
    return polynomial_hash(f"{fname}|test")


def data_seed(dname: str, cv_type: str, folds: int) -> int:
    """Seed of a dataset's fold assignment"""
    return polynomial_hash(f"{dname}|{cv_type}|folds={int(folds)}")
