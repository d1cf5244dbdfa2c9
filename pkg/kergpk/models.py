"""
kergpk - Domain models
Immutable containers passed between the kernel, aggregates, statistics,
inference and simulation modules.
"""

from dataclasses import dataclass, field, asdict
from functools import cached_property
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from kergpk.exceptions import DataValidationError, ParameterError, SizeError

KERNEL_KINDS = ("gaussian", "precomputed")
SCHEMES = ("random_permutation", "exhaustive")
FAMILIES = ("gaussian", "student_t20", "chisq3")
COVARIANCES = ("ar04", "identity")
SUBCOMMANDS = ("test", "simulate", "diagnose", "benchmark")
PERMUTATION_SUFFIX = "_perm"


def is_permutation_method(name: str) -> bool:
    return name.endswith(PERMUTATION_SUFFIX)


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


# ========================
# DATA AND LAYOUT
# ========================

@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Observations as rows, coordinates as columns"""

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=float, copy=True)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if arr.ndim != 2:
            raise DataValidationError(f"observations must be a 2-d table, got {arr.ndim} dimensions")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DataValidationError(f"observations must have at least one row and one column, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            bad = int(np.argwhere(~np.isfinite(arr))[0][0])
            raise DataValidationError(f"observations contain NaN or Inf (first at row {bad})")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class SampleLayout:
    """
    Group labels of the pooled sample: 0 marks sample X, 1 marks sample Y.
    Operations that use within-sample pairs call require_pairs().
    """

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1 or labels.size < 2:
            raise DataValidationError("labels must be a vector with at least two entries")
        if not np.all((labels == 0) | (labels == 1)):
            raise DataValidationError("labels must be 0 (sample X) or 1 (sample Y)")
        labels = _frozen_array(labels, dtype=np.int8)
        object.__setattr__(self, "labels", labels)
        if self.m < 1 or self.n < 1:
            raise SizeError(f"both samples need at least one observation (m={self.m}, n={self.n})")

    @classmethod
    def contiguous(cls, m: int, n: int) -> "SampleLayout":
        """First m pooled observations belong to X, the remaining n to Y"""
        if m < 1 or n < 1:
            raise SizeError(f"both samples need at least one observation (m={m}, n={n})")
        return cls(np.concatenate([np.zeros(m, dtype=np.int8), np.ones(n, dtype=np.int8)]))

    @cached_property
    def m(self) -> int:
        return int(np.count_nonzero(self.labels == 0))

    @cached_property
    def n(self) -> int:
        return int(np.count_nonzero(self.labels == 1))

    @property
    def size(self) -> int:
        return int(self.labels.size)

    @cached_property
    def x_index(self) -> np.ndarray:
        return np.flatnonzero(self.labels == 0)

    @cached_property
    def y_index(self) -> np.ndarray:
        return np.flatnonzero(self.labels == 1)

    def require_pairs(self) -> None:
        if self.m < 2 or self.n < 2:
            raise SizeError(f"each sample needs at least two observations (m={self.m}, n={self.n})")

    def swapped(self) -> "SampleLayout":
        """Same pooled order with the roles of X and Y exchanged"""
        return SampleLayout(1 - self.labels)


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    entries: np.ndarray
    kernel_kind: str
    bandwidth: Optional[float] = None
    bandwidth_rule: Optional[str] = None
    exponent_scale: Optional[float] = None

    def __post_init__(self):
        if self.kernel_kind not in KERNEL_KINDS:
            raise ParameterError(f"kernel_kind must be one of {KERNEL_KINDS}, got {self.kernel_kind!r}")
        entries = np.array(self.entries, dtype=float, copy=True)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise DataValidationError(f"kernel matrix must be square, got shape {entries.shape}")
        if not np.all(np.isfinite(entries)):
            raise DataValidationError("kernel matrix contains NaN or Inf")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @cached_property
    def off_diagonal(self) -> np.ndarray:
        """Copy of the entries with a zero diagonal"""
        k0 = np.array(self.entries, copy=True)
        np.fill_diagonal(k0, 0.0)
        k0.setflags(write=False)
        return k0

    def metadata(self) -> Dict[str, Any]:
        return {
            "kernel_kind": self.kernel_kind,
            "bandwidth": self.bandwidth,
            "bandwidth_rule": self.bandwidth_rule,
            "exponent_scale": self.exponent_scale,
        }


# ========================
# MOMENTS AND STATISTICS
# ========================

@dataclass(frozen=True, eq=False)
class KernelAggregates:
    """
    Off-diagonal kernel sums. S = total, A = sum k_ij^2, B = sum over
    ordered triples sharing the first index, C = sum over four distinct
    indices. The centered_* fields are the same sums for the kernel
    with k_bar subtracted off the diagonal (whose total is zero up to
    rounding).
    """

    size: int
    total: float
    kbar: float
    a: float
    b: float
    c: float
    row_sums: np.ndarray
    centered_total: float
    centered_a: float
    centered_b: float
    centered_row_sums: np.ndarray

    @property
    def centered_c(self) -> float:
        return self.centered_total ** 2 - 2.0 * self.centered_a - 4.0 * self.centered_b

    @property
    def centered_kbar(self) -> float:
        return self.centered_total / (self.size * (self.size - 1))


@dataclass(frozen=True, eq=False)
class PermutationMoments:
    m: int
    n: int
    e_alpha: float
    e_beta: float
    cov_ab: np.ndarray
    e_w: float
    var_w: float
    e_d: float
    var_d: float
    degenerate: bool = False

    @property
    def size(self) -> int:
        return self.m + self.n

    @property
    def kbar(self) -> float:
        return self.e_alpha

    def to_dict(self) -> Dict[str, Any]:
        return {
            "e_alpha": self.e_alpha,
            "e_beta": self.e_beta,
            "cov_ab": [[float(v) for v in row] for row in self.cov_ab],
            "e_w": self.e_w,
            "var_w": self.var_w,
            "e_d": self.e_d,
            "var_d": self.var_d,
            "degenerate": self.degenerate,
        }


@dataclass(frozen=True)
class PairSums:
    alpha: float
    beta: float
    gamma: float


@dataclass(frozen=True)
class StatisticBundle:
    mmd_u: float
    gpk: float
    z_w: float
    z_d: float
    w: float
    d: float
    z_w_r: Dict[float, float] = field(default_factory=dict)
    mmd_b: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["z_w_r"] = {f"{r:g}": v for r, v in self.z_w_r.items()}
        return data


@dataclass(frozen=True)
class DegeneracyReport:
    c1_violated: bool
    c2_violated: bool
    c2_given_order: bool
    c2_pivots: Tuple[int, ...]
    condition1_ratio: float
    condition2_ratio: float

    @property
    def case(self) -> Optional[str]:
        if self.c1_violated:
            return "C1"
        if self.c2_violated:
            return "C2"
        return None

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["c2_pivots"] = list(self.c2_pivots)
        for key in ("condition1_ratio", "condition2_ratio"):
            if not np.isfinite(data[key]):
                data[key] = None
        return data


# ========================
# INFERENCE
# ========================

@dataclass(frozen=True)
class ResamplingPlan:
    replicates: int = 10000
    seed: int = 0
    scheme: str = "random_permutation"
    enumeration_cap: int = 1_000_000

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ParameterError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.scheme == "random_permutation" and self.replicates < 1:
            raise ParameterError(f"replicates must be >= 1, got {self.replicates}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ParameterError(f"seed must be a 64-bit unsigned value, got {self.seed}")


@dataclass
class TestReport:
    method: str
    p_value: float
    reject: bool
    level: float
    statistics: Dict[str, float] = field(default_factory=dict)
    component_p: Dict[str, float] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)

    __test__ = False  # not a pytest test class

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise ParameterError(f"p-value must lie in [0, 1], got {self.p_value}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "method": self.method,
            "p_value": float(self.p_value),
            "reject": bool(self.reject),
            "level": float(self.level),
            "statistics": {k: _jsonable(v) for k, v in self.statistics.items()},
            "component_p": {k: float(v) for k, v in self.component_p.items()},
            "metadata": {k: _jsonable(v) for k, v in self.metadata.items()},
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TestReport":
        return cls(
            method=data["method"],
            p_value=data["p_value"],
            reject=data["reject"],
            level=data["level"],
            statistics=dict(data.get("statistics", {})),
            component_p=dict(data.get("component_p", {})),
            metadata=dict(data.get("metadata", {})),
        )


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if np.isfinite(value) else None
    return value


# ========================
# SIMULATION
# ========================

@dataclass(frozen=True)
class ScenarioSpec:
    """
    X ~ family(0, Sigma), Y ~ family(a * 1_d, sigma2 * Sigma). With
    cov='ar04', Sigma_ij = 0.4 ** |i - j|.
    """

    family: str
    d: int
    m: int
    n: int
    a: float = 0.0
    sigma2: float = 1.0
    cov: str = "ar04"
    label: str = ""

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ParameterError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.cov not in COVARIANCES:
            raise ParameterError(f"cov must be one of {COVARIANCES}, got {self.cov!r}")
        if self.d < 1:
            raise ParameterError(f"d must be >= 1, got {self.d}")
        if self.sigma2 <= 0:
            raise ParameterError(f"sigma2 must be positive, got {self.sigma2}")
        if self.m < 2 or self.n < 2:
            raise SizeError(f"each sample needs at least two observations (m={self.m}, n={self.n})")

    @classmethod
    def from_delta(cls, family: str, d: int, m: int, n: int, delta: float, **kwargs) -> "ScenarioSpec":
        """Location given as Delta = ||a * 1_d||_2, so a = Delta / sqrt(d)"""
        return cls(family=family, d=d, m=m, n=n, a=delta / np.sqrt(d), **kwargs)

    @property
    def delta(self) -> float:
        return float(abs(self.a) * np.sqrt(self.d))

    @property
    def is_null(self) -> bool:
        return self.a == 0.0 and self.sigma2 == 1.0

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["delta"] = self.delta
        return data


@dataclass(frozen=True)
class SubsampleSpec:
    """m rows drawn without replacement from one data set, n from another"""

    source_x: str
    source_y: str
    d: int
    m: int
    n: int
    pool_x: int
    pool_y: int
    label: str = ""

    def __post_init__(self):
        if self.m < 2 or self.n < 2:
            raise SizeError(f"each subsample needs at least two observations (m={self.m}, n={self.n})")
        if self.m > self.pool_x or self.n > self.pool_y:
            raise SizeError(
                f"cannot draw m={self.m} of {self.pool_x} and n={self.n} of {self.pool_y} rows without replacement"
            )

    @property
    def family(self) -> str:
        return "subsample"

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["family"] = self.family
        return data


@dataclass(frozen=True)
class PowerEstimate:
    scenario: Union[ScenarioSpec, SubsampleSpec]
    method: str
    trials: int
    level: float
    rejections: int
    invalid: int = 0

    @property
    def valid(self) -> int:
        return self.trials - self.invalid

    @property
    def power(self) -> float:
        return self.rejections / self.valid if self.valid else float("nan")

    @property
    def mc_stderr(self) -> float:
        if not self.valid:
            return float("nan")
        p = self.power
        return float(np.sqrt(p * (1.0 - p) / self.valid))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scenario": self.scenario.to_dict(),
            "method": self.method,
            "trials": self.trials,
            "valid": self.valid,
            "invalid": self.invalid,
            "level": self.level,
            "rejections": self.rejections,
            "power": _jsonable(self.power),
            "mc_stderr": _jsonable(self.mc_stderr),
        }


# ========================
# COMMAND LINE
# ========================

@dataclass
class RunConfig:
    subcommand: str
    methods: List[str] = field(default_factory=list)
    path_x: Optional[str] = None
    path_y: Optional[str] = None
    precomputed: Optional[str] = None
    m: Optional[int] = None
    bandwidth: Any = "median"
    permutations: int = 10000
    exhaustive: bool = False
    seed: int = 0
    level: float = 0.05
    output_format: str = "pretty"
    output: Optional[str] = None
    from_z: Optional[Tuple[float, float, float]] = None
    preset: Optional[str] = None
    scenarios: List[ScenarioSpec] = field(default_factory=list)
    trials: int = 1000
    bandwidth_sweep: bool = False
    sizes: List[int] = field(default_factory=list)
    dimension: int = 100
    repeats: int = 10
    threads: Optional[int] = None
    subsample: List[int] = field(default_factory=list)

    def __post_init__(self):
        if self.subcommand not in SUBCOMMANDS:
            raise ParameterError(f"subcommand must be one of {SUBCOMMANDS}, got {self.subcommand!r}")
        if not 0.0 < self.level < 1.0:
            raise ParameterError(f"level must lie in (0, 1), got {self.level}")
        if self.subcommand == "simulate" and self.trials < 1:
            raise ParameterError(f"trials must be >= 1, got {self.trials}")
        if self.resamples and not self.exhaustive and self.permutations < 1:
            raise ParameterError("permutation methods need --permutations >= 1")
        if self.output_format not in ("json", "tsv", "pretty"):
            raise ParameterError(f"unknown output format {self.output_format!r}")
        if any(size < 2 for size in self.subsample):
            raise ParameterError(f"--subsample sizes must be >= 2, got {self.subsample}")

    @property
    def resamples(self) -> bool:
        """True when any requested method draws label permutations"""
        return any(is_permutation_method(name) for name in self.methods)
