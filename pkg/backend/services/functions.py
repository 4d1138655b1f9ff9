"""
Test function registry for duqbench
Named deterministic functions on native box domains, evaluated from unit-cube inputs
"""
import os
import json
import math
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np

import sys
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from errors import ConflictError, DomainError, NotFoundError, StubFunctionError

logger = logging.getLogger("duqbench.functions")

TAGS = frozenset({
    "stationary",
    "nonstationary",
    "smooth",
    "discontinuous",
    "has-inert-inputs",
    "constant",
    "low-effective-dim",
})


@dataclass(frozen=True)
class TestFunction:
    """A named map from a native box domain to a scalar"""
    __test__ = False  # not a pytest class

    name: str
    domain: Tuple[Tuple[float, float], ...]
    evaluator: Optional[Callable[[np.ndarray], np.ndarray]]
    tags: FrozenSet[str] = frozenset()
    inert: Tuple[int, ...] = ()  # zero-based native coordinates with no effect
    description: str = ""

    @property
    def input_dim(self) -> int:
        return len(self.domain)

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.domain], dtype=np.float64)

    @property
    def upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.domain], dtype=np.float64)

    @property
    def is_stub(self) -> bool:
        return self.evaluator is None

    def validate(self) -> None:
        if not self.name:
            raise DomainError("Function name must be non-empty")
        if self.input_dim < 1:
            raise DomainError(f"{self.name}: input_dim must be positive")
        for lo, hi in self.domain:
            if not (math.isfinite(lo) and math.isfinite(hi)) or not lo < hi:
                raise DomainError(f"{self.name}: invalid bounds ({lo}, {hi})")
        unknown = set(self.tags) - TAGS
        if unknown:
            raise DomainError(f"{self.name}: unknown tags {sorted(unknown)}")
        if any(i < 0 or i >= self.input_dim for i in self.inert):
            raise DomainError(f"{self.name}: inert coordinate out of range")
        if self.inert and "has-inert-inputs" not in self.tags:
            raise DomainError(f"{self.name}: inert coordinates need the has-inert-inputs tag")

    def to_manifest(self) -> dict:
        return {
            "name": self.name,
            "input_dim": self.input_dim,
            "domain": [[lo, hi] for lo, hi in self.domain],
            "tags": sorted(self.tags),
        }


# Closed-form evaluators, each on an (n, p) array in the native domain

def borehole(x: np.ndarray) -> np.ndarray:
    """Water flow through a borehole (8 inputs)"""
    rw, r, tu, hu, tl, hl, length, kw = (x[:, i] for i in range(8))
    log_ratio = np.log(r / rw)
    denom = log_ratio * (1.0 + 2.0 * length * tu / (log_ratio * rw**2 * kw) + tu / tl)
    return 2.0 * np.pi * tu * (hu - hl) / denom


def ishigami(x: np.ndarray, a: float = 7.0, b: float = 0.1) -> np.ndarray:
    return np.sin(x[:, 0]) + a * np.sin(x[:, 1]) ** 2 + b * x[:, 2] ** 4 * np.sin(x[:, 0])


def friedman(x: np.ndarray) -> np.ndarray:
    """Friedman's regression function; only the first five inputs are used"""
    return (
        10.0 * np.sin(np.pi * x[:, 0] * x[:, 1])
        + 20.0 * (x[:, 2] - 0.5) ** 2
        + 10.0 * x[:, 3]
        + 5.0 * x[:, 4]
    )


def piston(x: np.ndarray) -> np.ndarray:
    """Cycle time of a piston (7 inputs)"""
    m, s, v0, k, p0, ta, t0 = (x[:, i] for i in range(7))
    a = p0 * s + 19.62 * m - k * v0 / s
    v = s / (2.0 * k) * (np.sqrt(a**2 + 4.0 * k * p0 * v0 * ta / t0) - a)
    return 2.0 * np.pi * np.sqrt(m / (k + s**2 * p0 * v0 * ta / (t0 * v**2)))


def otl_circuit(x: np.ndarray) -> np.ndarray:
    """Midpoint voltage of an output transformerless push-pull circuit (6 inputs)"""
    rb1, rb2, rf, rc1, rc2, beta = (x[:, i] for i in range(6))
    vb1 = 12.0 * rb2 / (rb1 + rb2)
    bc = beta * (rc2 + 9.0)
    return (
        (vb1 + 0.74) * bc / (bc + rf)
        + 11.35 * rf / (bc + rf)
        + 0.74 * rf * bc / ((bc + rf) * rc1)
    )


def wing_weight(x: np.ndarray) -> np.ndarray:
    """Light aircraft wing weight (10 inputs, sweep angle in degrees)"""
    sw, wfw, aspect, sweep, q, taper, tc, nz, wdg, wp = (x[:, i] for i in range(10))
    cos_sweep = np.cos(np.deg2rad(sweep))
    return (
        0.036
        * sw**0.758
        * wfw**0.0035
        * (aspect / cos_sweep**2) ** 0.6
        * q**0.006
        * taper**0.04
        * (100.0 * tc / cos_sweep) ** -0.3
        * (nz * wdg) ** 0.49
        + sw * wp
    )


def robot_arm(x: np.ndarray) -> np.ndarray:
    """Distance of a four-segment robot arm's end from the origin (8 inputs)"""
    theta = np.cumsum(x[:, :4], axis=1)
    lengths = x[:, 4:8]
    u = np.sum(lengths * np.cos(theta), axis=1)
    v = np.sum(lengths * np.sin(theta), axis=1)
    return np.sqrt(u**2 + v**2)


def gramacy_lee(x: np.ndarray) -> np.ndarray:
    """One-dimensional Gramacy & Lee (2012) function"""
    t = x[:, 0]
    return np.sin(10.0 * np.pi * t) / (2.0 * t) + (t - 1.0) ** 4


def dette_pepelyshev(x: np.ndarray) -> np.ndarray:
    """Eight-dimensional Dette & Pepelyshev curved function"""
    out = (
        4.0 * (x[:, 0] - 2.0 + 8.0 * x[:, 1] - 8.0 * x[:, 1] ** 2) ** 2
        + (3.0 - 4.0 * x[:, 1]) ** 2
        + 16.0 * np.sqrt(x[:, 2] + 1.0) * (2.0 * x[:, 2] - 1.0) ** 2
    )
    partial = np.cumsum(x[:, 2:8], axis=1)  # sum_{j=3}^{i} x_j for i = 3..8
    for i in range(4, 9):
        out = out + i * np.log(1.0 + partial[:, i - 3])
    return out


def michalewicz(x: np.ndarray, m: int = 10) -> np.ndarray:
    idx = np.arange(1, x.shape[1] + 1)
    return -np.sum(np.sin(x) * np.sin(idx * x**2 / np.pi) ** (2 * m), axis=1)


def damped_cosine(x: np.ndarray) -> np.ndarray:
    t = x[:, 0]
    return np.exp(-1.4 * t) * np.cos(3.5 * np.pi * t)


def constant(x: np.ndarray, value: float = 1.0) -> np.ndarray:
    return np.full(x.shape[0], value, dtype=np.float64)


def _inert_padded(active: Callable[[np.ndarray], np.ndarray], n_active: int):
    def evaluator(x: np.ndarray) -> np.ndarray:
        return active(x[:, :n_active])

    return evaluator


BOREHOLE_DOMAIN = (
    (0.05, 0.15), (100.0, 50000.0), (63070.0, 115600.0), (990.0, 1110.0),
    (63.1, 116.0), (700.0, 820.0), (1120.0, 1680.0), (9855.0, 12045.0),
)
ISHIGAMI_DOMAIN = ((-math.pi, math.pi),) * 3
UNIT = (0.0, 1.0)


def _builtin_functions() -> List[TestFunction]:
    return [
        TestFunction("borehole", BOREHOLE_DOMAIN, borehole,
                     frozenset({"stationary", "smooth"}),
                     description="Water flow rate through a borehole"),
        TestFunction("ishigami", ISHIGAMI_DOMAIN, ishigami,
                     frozenset({"stationary", "smooth"}),
                     description="Ishigami function, a=7, b=0.1"),
        TestFunction("friedman", (UNIT,) * 5, friedman,
                     frozenset({"stationary", "smooth"}),
                     description="Friedman regression function"),
        TestFunction("friedman10", (UNIT,) * 10, _inert_padded(friedman, 5),
                     frozenset({"stationary", "smooth", "has-inert-inputs", "low-effective-dim"}),
                     inert=tuple(range(5, 10)),
                     description="Friedman function with five inert inputs"),
        TestFunction("piston", ((30.0, 60.0), (0.005, 0.020), (0.002, 0.010), (1000.0, 5000.0),
                                (90000.0, 110000.0), (290.0, 296.0), (340.0, 360.0)),
                     piston, frozenset({"stationary", "smooth"}),
                     description="Piston cycle time"),
        TestFunction("otlcircuit", ((50.0, 150.0), (25.0, 70.0), (0.5, 3.0), (1.2, 2.5),
                                    (0.25, 1.2), (50.0, 300.0)),
                     otl_circuit, frozenset({"stationary", "smooth"}),
                     description="OTL push-pull circuit midpoint voltage"),
        TestFunction("wingweight", ((150.0, 200.0), (220.0, 300.0), (6.0, 10.0), (-10.0, 10.0),
                                    (16.0, 45.0), (0.5, 1.0), (0.08, 0.18), (2.5, 6.0),
                                    (1700.0, 2500.0), (0.025, 0.08)),
                     wing_weight, frozenset({"stationary", "smooth", "low-effective-dim"}),
                     description="Light aircraft wing weight"),
        TestFunction("robot", ((0.0, 2.0 * math.pi),) * 4 + (UNIT,) * 4, robot_arm,
                     frozenset({"nonstationary", "smooth"}),
                     description="Robot arm end-point distance"),
        TestFunction("grlee12", ((0.5, 2.5),), gramacy_lee,
                     frozenset({"nonstationary", "smooth"}),
                     description="Gramacy & Lee (2012) 1-d function"),
        TestFunction("detpep8d", (UNIT,) * 8, dette_pepelyshev,
                     frozenset({"nonstationary", "smooth", "low-effective-dim"}),
                     description="Dette & Pepelyshev 8-d curved function"),
        TestFunction("michalewicz", ((0.0, math.pi),) * 2, michalewicz,
                     frozenset({"nonstationary", "smooth"}),
                     description="Michalewicz function, d=2, m=10"),
        TestFunction("damped_cosine", (UNIT,), damped_cosine,
                     frozenset({"stationary", "smooth"}),
                     description="exp(-1.4x) cos(3.5 pi x)"),
        TestFunction("const_fn", (UNIT,) * 2, constant,
                     frozenset({"constant", "smooth"}),
                     description="Constant function, value 1"),
        TestFunction("noise_only", (UNIT,) * 3, lambda x: constant(x, 0.0),
                     frozenset({"constant", "smooth"}),
                     description="Zero signal; NSR scales by var(f) = 0, so responses carry no noise either"),
        TestFunction("borehole_inert20", BOREHOLE_DOMAIN + (UNIT,) * 12,
                     _inert_padded(borehole, 8),
                     frozenset({"stationary", "smooth", "has-inert-inputs", "low-effective-dim"}),
                     inert=tuple(range(8, 20)),
                     description="Borehole embedded in 20 dimensions"),
        TestFunction("ishigami_inert10", ISHIGAMI_DOMAIN + (UNIT,) * 7,
                     _inert_padded(ishigami, 3),
                     frozenset({"stationary", "smooth", "has-inert-inputs", "low-effective-dim"}),
                     inert=tuple(range(3, 10)),
                     description="Ishigami embedded in 10 dimensions"),
        # Named without a closed form; callers must register an evaluator
        TestFunction("foursquare", (UNIT,) * 2, None, frozenset({"nonstationary"})),
        TestFunction("squiggle", (UNIT,) * 2, None, frozenset({"nonstationary"})),
        TestFunction("star2", (UNIT,) * 2, None, frozenset({"nonstationary"})),
        TestFunction("ignition", (UNIT,) * 10, None, frozenset({"nonstationary"})),
    ]


# Populated at import; treat as read-only once a study starts
REGISTRY: Dict[str, TestFunction] = {}


def register_function(fn: TestFunction, replace_stub: bool = False) -> None:
    """
    Add a function to the registry.
    A stub may be replaced by a real evaluator when replace_stub is set.
    """
    fn.validate()
    existing = REGISTRY.get(fn.name)
    if existing is not None:
        if not (replace_stub and existing.is_stub):
            raise ConflictError(f"Function already registered: {fn.name}")
        logger.info("Replacing stub %s with a user evaluator", fn.name)
    REGISTRY[fn.name] = fn


def get_function(name: str) -> TestFunction:
    try:
        return REGISTRY[name]
    except KeyError:
        raise NotFoundError(f"Unknown test function: {name}") from None


def to_native(fn: TestFunction, X: np.ndarray) -> np.ndarray:
    """Map unit-cube rows to the native domain: lo + u * (hi - lo)"""
    return fn.lower + X * (fn.upper - fn.lower)


def evaluate(name: str, X) -> np.ndarray:
    """Evaluate a registered function at unit-cube points"""
    fn = get_function(name)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != fn.input_dim:
        raise DomainError(
            f"{name} expects an (n, {fn.input_dim}) matrix, got shape {X.shape}"
        )
    if not np.all(np.isfinite(X)) or np.any(X < 0.0) or np.any(X > 1.0):
        raise DomainError(f"{name}: inputs must lie in [0, 1]")
    if fn.is_stub:
        raise StubFunctionError(
            f"{name} has no closed form shipped; register an evaluator for it"
        )
    out = np.asarray(fn.evaluator(to_native(fn, X)), dtype=np.float64).reshape(-1)
    if out.shape[0] != X.shape[0]:
        raise DomainError(f"{name} returned {out.shape[0]} values for {X.shape[0]} points")
    return out


def list_functions(
    input_dim: Optional[int] = None,
    tags: Optional[Iterable[str]] = None,
    implemented_only: bool = False,
    predicate: Optional[Callable[[int, FrozenSet[str]], bool]] = None,
) -> List[str]:
    """Registered names in lexicographic order; all filters apply conjunctively"""
    wanted = frozenset(tags or ())
    names = []
    for name, fn in REGISTRY.items():
        if input_dim is not None and fn.input_dim != input_dim:
            continue
        if not wanted <= fn.tags:
            continue
        if implemented_only and fn.is_stub:
            continue
        if predicate is not None and not predicate(fn.input_dim, fn.tags):
            continue
        names.append(name)
    return sorted(names)


def get_benchmark_functions() -> List[str]:
    """Every shipped function with an evaluator"""
    return list_functions(implemented_only=True)


def registry_manifest(names: Optional[Sequence[str]] = None) -> List[dict]:
    names = list_functions() if names is None else names
    return [get_function(name).to_manifest() for name in names]


def export_manifest(path: str) -> None:
    with open(path, "w") as f:
        json.dump(registry_manifest(), f, indent=2)


for _fn in _builtin_functions():
    register_function(_fn)
