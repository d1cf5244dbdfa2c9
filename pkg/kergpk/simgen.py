"""
kergpk - Simulation harness
Synthetic Gaussian, Student t20 and chi-square(3) alternatives, preset
scenario grids, Monte Carlo power and size estimates, the bandwidth sweep,
runtime comparison and the normal-approximation check.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import cholesky, toeplitz
from scipy.stats import kstest

from kergpk.config import DEFAULT_LEVEL, get_threads
from kergpk.exceptions import DegeneracyError, ParameterError, UnknownPresetError
from kergpk.inference import METHODS, MethodContext, check_methods, permutation_replicates
from kergpk.kernel import build_kernel, median_heuristic_bandwidth, pairwise_distances, pool_samples
from kergpk.models import ObservationSet, PowerEstimate, ResamplingPlan, ScenarioSpec, SubsampleSpec
from kergpk.statistics import analyze
from kergpk.utils import derive_seed, keyed_generator

logger = logging.getLogger(__name__)

AR_COEFFICIENT = 0.4
T_DEGREES = 20
CHISQ_DEGREES = 3
POWER_DIMENSIONS = (50, 100, 500, 1000)
WEIGHT_STUDY_DIMENSIONS = (10, 30, 50, 70, 90, 100)
WEIGHT_STUDY_DELTAS = (0.3, 0.5, 0.7, 0.8, 0.9, 1.0)


# ========================
# DATA GENERATION
# ========================

@lru_cache(maxsize=32)
def covariance_factor(d: int, cov: str = "ar04") -> np.ndarray:
    """Lower Cholesky factor L of Sigma, Sigma = L L^T"""
    if cov == "identity":
        factor = np.eye(d)
    else:
        factor = cholesky(toeplitz(AR_COEFFICIENT ** np.arange(d)), lower=True)
    factor.setflags(write=False)
    return factor


def sample_scenario(spec: ScenarioSpec, seed: int) -> Tuple[ObservationSet, ObservationSet]:
    rng = keyed_generator(seed)
    factor = covariance_factor(spec.d, spec.cov)
    sigma = np.sqrt(spec.sigma2)
    m, n, d = spec.m, spec.n, spec.d

    if spec.family == "gaussian":
        x = rng.standard_normal((m, d)) @ factor.T
        y = spec.a + sigma * rng.standard_normal((n, d)) @ factor.T
    elif spec.family == "student_t20":
        # sigma2 * Sigma is the scale matrix, not the covariance
        x = rng.standard_normal((m, d)) @ factor.T
        x /= np.sqrt(rng.chisquare(T_DEGREES, size=(m, 1)) / T_DEGREES)
        y = rng.standard_normal((n, d)) @ factor.T
        y /= np.sqrt(rng.chisquare(T_DEGREES, size=(n, 1)) / T_DEGREES)
        y = spec.a + sigma * y
    else:
        x = rng.chisquare(CHISQ_DEGREES, size=(m, d)) @ factor.T
        y = sigma * rng.chisquare(CHISQ_DEGREES, size=(n, d)) @ factor.T + spec.a
    return ObservationSet(x), ObservationSet(y)


# ========================
# PRESETS
# ========================

def _grid(family: str, m: int, n: int, deltas=None, sigma2s=None, dims=POWER_DIMENSIONS, tag: str = "",
          cov: str = "ar04") -> List[ScenarioSpec]:
    specs = []
    for i, d in enumerate(dims):
        delta = deltas[i] if deltas else 0.0
        sigma2 = sigma2s[i] if sigma2s else 1.0
        label = f"{tag} d={d}" if tag else f"d={d}"
        specs.append(ScenarioSpec.from_delta(family, d, m, n, delta, sigma2=sigma2, cov=cov, label=label))
    return specs


def _table1() -> List[ScenarioSpec]:
    settings = ((0.21, 1.0), (0.21, 1.04), (0.0, 1.1))
    return [
        ScenarioSpec("gaussian", 50, 50, 50, a=a, sigma2=b, label=f"setting {i}")
        for i, (a, b) in enumerate(settings, start=1)
    ]


def _null_sizes() -> List[ScenarioSpec]:
    return _grid("gaussian", 50, 50, tag="gaussian null") + _grid("chisq3", 50, 50, tag="chisq3 null")


PRESETS = {
    "table1": _table1,
    "table2": lambda: _grid("gaussian", 50, 50, dims=WEIGHT_STUDY_DIMENSIONS, tag="gaussian null"),
    # run with WEIGHTED_PERM_METHODS to compare Z_W,r across r
    "table3": lambda: _grid("gaussian", 100, 100, deltas=WEIGHT_STUDY_DELTAS, dims=WEIGHT_STUDY_DIMENSIONS,
                            tag="weight study", cov="identity"),
    "table4_loc": lambda: _grid("gaussian", 50, 50, deltas=(1.13, 1.50, 2.23, 2.84)),
    "table4_scale": lambda: _grid("gaussian", 50, 50, sigma2s=(1.11, 1.09, 1.05, 1.04)),
    "table5_loc": lambda: _grid("gaussian", 100, 50, deltas=(0.98, 1.30, 2.01, 2.84)),
    "table5_scale": lambda: _grid("gaussian", 100, 50, sigma2s=(1.11, 1.09, 1.04, 1.04)),
    "table6_loc": lambda: _grid("student_t20", 50, 50, deltas=(0.8, 1.2, 1.9, 2.5)),
    "table6_scale": lambda: _grid("student_t20", 50, 50, sigma2s=(1.15, 1.13, 1.08, 1.08)),
    "table7_loc": lambda: _grid("chisq3", 50, 50, deltas=(2.05, 2.90, 5.36, 7.90)),
    "table7_scale": lambda: _grid("chisq3", 50, 50, sigma2s=(1.12, 1.11, 1.06, 1.06)),
    "null_sizes": _null_sizes,
}


def scenario_table(preset: str) -> List[ScenarioSpec]:
    try:
        builder = PRESETS[preset]
    except KeyError:
        raise UnknownPresetError(f"unknown preset {preset!r}; available: {', '.join(PRESETS)}")
    return builder()


# ========================
# POWER ESTIMATION
# ========================

Draw = Callable[[int], Tuple[ObservationSet, ObservationSet]]


def _run_trial(draw: Draw, methods, level, seed, plan, bandwidth, t) -> Dict[str, Optional[bool]]:
    """Rejection flag per method for trial t; None marks a degenerate trial"""
    x, y = draw(t)
    kernel, layout = build_kernel(x, y, bandwidth=bandwidth)
    trial_plan = replace(plan, seed=derive_seed(seed, t, 1))
    ctx = MethodContext(analysis=analyze(kernel, layout), level=level, plan=trial_plan, parallel=False)

    outcome = {}
    for name in methods:
        try:
            outcome[name] = METHODS[name](ctx).reject
        except DegeneracyError as exc:
            logger.warning("trial %d: %s is undefined (%s)", t, name, exc)
            outcome[name] = None
    return outcome


def _rejection_counts(
    draw: Draw,
    title: str,
    methods: Sequence[str],
    trials: int,
    level: float,
    seed: int,
    plan: Optional[ResamplingPlan],
    bandwidth: Union[str, float],
    threads: Optional[int],
) -> Tuple[List[str], Dict[str, int], Dict[str, int]]:
    if trials < 1:
        raise ParameterError(f"trials must be >= 1, got {trials}")
    if not 0.0 < level < 1.0:
        raise ParameterError(f"significance level must lie in (0, 1), got {level}")
    methods = check_methods(methods)
    plan = plan or ResamplingPlan(replicates=1000)
    workers = max(1, min(threads or get_threads(), trials))

    rejections = dict.fromkeys(methods, 0)
    invalid = dict.fromkeys(methods, 0)
    step = max(1, trials // 10)
    logger.info("simulating %s (%s) with %d trials on %d workers", title, ", ".join(methods), trials, workers)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        outcomes = pool.map(lambda t: _run_trial(draw, methods, level, seed, plan, bandwidth, t), range(trials))
        for done, outcome in enumerate(outcomes, start=1):
            for name, rejected in outcome.items():
                if rejected is None:
                    invalid[name] += 1
                elif rejected:
                    rejections[name] += 1
            if done % step == 0:
                logger.info("%d/%d trials done", done, trials)
    return methods, rejections, invalid


def estimate_power(
    spec: ScenarioSpec,
    methods: Sequence[str],
    trials: int,
    level: float = DEFAULT_LEVEL,
    seed: int = 0,
    plan: Optional[ResamplingPlan] = None,
    bandwidth: Union[str, float] = "median",
    threads: Optional[int] = None,
) -> List[PowerEstimate]:
    """
    Monte Carlo rejection rates. Trial t draws its data from a seed derived
    from (seed, t), so every method sees the same data and kernel, and the
    counts do not depend on the worker count.
    """
    methods, rejections, invalid = _rejection_counts(
        lambda t: sample_scenario(spec, derive_seed(seed, t)),
        spec.label or spec.family, methods, trials, level, seed, plan, bandwidth, threads,
    )
    return [
        PowerEstimate(spec, name, trials, level, rejections[name], invalid[name])
        for name in methods
    ]


def draw_subsample(x: ObservationSet, y: ObservationSet, m: int, n: int, seed: int) -> Tuple[ObservationSet, ObservationSet]:
    """m rows of x and n rows of y, each drawn without replacement"""
    rng = keyed_generator(seed)
    rows_x = np.sort(rng.choice(x.rows, size=m, replace=False))
    rows_y = np.sort(rng.choice(y.rows, size=n, replace=False))
    return ObservationSet(x.values[rows_x]), ObservationSet(y.values[rows_y])


def estimate_subsample_power(
    x: ObservationSet,
    y: ObservationSet,
    m: int,
    methods: Sequence[str],
    trials: int,
    level: float = DEFAULT_LEVEL,
    seed: int = 0,
    plan: Optional[ResamplingPlan] = None,
    bandwidth: Union[str, float] = "median",
    threads: Optional[int] = None,
    n: Optional[int] = None,
    sources: Tuple[str, str] = ("x", "y"),
) -> List[PowerEstimate]:
    """
    Empirical power on real data: each trial draws m rows from x and n rows
    (default m) from y and runs every method on the drawn pair.
    """
    n = m if n is None else n
    if x.dim != y.dim:
        raise ParameterError(f"samples differ in dimension ({x.dim} vs {y.dim})")
    spec = SubsampleSpec(sources[0], sources[1], x.dim, m, n, x.rows, y.rows, label=f"subsample m={m} n={n}")
    methods, rejections, invalid = _rejection_counts(
        lambda t: draw_subsample(x, y, m, n, derive_seed(seed, t)),
        spec.label, methods, trials, level, seed, plan, bandwidth, threads,
    )
    return [
        PowerEstimate(spec, name, trials, level, rejections[name], invalid[name])
        for name in methods
    ]


def average_median_bandwidth(spec: ScenarioSpec, trials: int, seed: int = 0) -> float:
    values = []
    for t in range(trials):
        x, y = sample_scenario(spec, derive_seed(seed, t))
        pool, _ = pool_samples(x, y)
        values.append(median_heuristic_bandwidth(pairwise_distances(pool)))
    return float(np.mean(values))


def bandwidth_sweep(
    spec: ScenarioSpec,
    trials: int,
    level: float = DEFAULT_LEVEL,
    seed: int = 0,
    plan: Optional[ResamplingPlan] = None,
    offsets: Sequence[float] = tuple(range(-8, 10, 2)),
    methods: Sequence[str] = ("gpk_perm",),
    threads: Optional[int] = None,
) -> List[Tuple[float, PowerEstimate]]:
    """Power at bandwidths spaced around the trial-averaged median heuristic"""
    centre = average_median_bandwidth(spec, trials, seed)
    logger.info("averaged median heuristic %.4g", centre)
    rows = []
    for offset in offsets:
        bandwidth = centre + offset
        if bandwidth <= 0:
            continue
        for estimate in estimate_power(spec, methods, trials, level, seed, plan, bandwidth=bandwidth, threads=threads):
            rows.append((bandwidth, estimate))
    return rows


# ========================
# RUNTIME AND NORMAL APPROXIMATION
# ========================

def time_methods(
    sizes: Sequence[int] = (100, 250, 500, 1000),
    d: int = 100,
    repeats: int = 10,
    methods: Sequence[str] = ("fgpk_m", "fgpk", "mmd_perm"),
    seed: int = 0,
    plan: Optional[ResamplingPlan] = None,
) -> List[Dict[str, float]]:
    """
    Wall-clock seconds for each method, end to end from raw data, with both
    samples standard Gaussian and m = n.
    """
    if repeats < 1:
        raise ParameterError(f"repeats must be >= 1, got {repeats}")
    methods = check_methods(methods)
    plan = plan or ResamplingPlan()
    rows = []
    for m in sizes:
        spec = ScenarioSpec("gaussian", d, m, m, cov="identity")
        timings = {name: [] for name in methods}
        for rep in range(repeats):
            x, y = sample_scenario(spec, derive_seed(seed, m, rep))
            for name in methods:
                started = time.perf_counter()
                kernel, layout = build_kernel(x, y)
                ctx = MethodContext(analysis=analyze(kernel, layout), level=DEFAULT_LEVEL, plan=plan)
                METHODS[name](ctx)
                timings[name].append(time.perf_counter() - started)
        for name, values in timings.items():
            rows.append({"m": m, "method": name, "mean_seconds": float(np.mean(values)), "std_seconds": float(np.std(values))})
            logger.info("m=%d %s: %.4fs", m, name, rows[-1]["mean_seconds"])
    return rows


def normal_approximation_distance(
    spec: ScenarioSpec,
    replicates: int = 10000,
    seed: int = 0,
    kinds: Sequence[Tuple[str, Optional[float]]] = (("z_d", None), ("z_w_r", 1.2)),
) -> Dict[str, float]:
    """
    Kolmogorov-Smirnov distance between permutation replicates of the
    standardized statistics and N(0, 1), on one dataset drawn from `spec`.
    """
    x, y = sample_scenario(spec, seed)
    kernel, layout = build_kernel(x, y)
    analysis = analyze(kernel, layout)
    plan = ResamplingPlan(replicates=replicates, seed=derive_seed(seed, 1))

    out = {}
    for kind, r in kinds:
        _, values = permutation_replicates(kernel, layout, kind, plan, r=r, analysis=analysis, signed=True)
        key = kind if r is None else f"{kind}_{r:g}"
        out[key] = float(kstest(values, "norm").statistic)
        logger.info("KS distance of %s from N(0, 1): %.4f", key, out[key])
    return out
