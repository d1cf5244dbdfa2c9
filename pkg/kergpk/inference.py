"""
kergpk - Inference
Permutation p-values, analytic normal-tail p-values of the standardized
statistics, and the Bonferroni and Simes combined fast tests. `run_methods`
runs any set of registered methods on one kernel matrix.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import norm

from kergpk.aggregates import alpha_beta_from_sums, weighted_moments
from kergpk.config import DEFAULT_LEVEL
from kergpk.exceptions import DegeneracyError, ParameterError
from kergpk.models import KernelMatrix, ResamplingPlan, SampleLayout, StatisticBundle, TestReport
from kergpk.resampling import all_subsets, random_subset_sums, subset_sums
from kergpk.statistics import KernelAnalysis, analyze, covariance_inverse, gpk_from_deviations

logger = logging.getLogger(__name__)

STATISTIC_KINDS = ("gpk", "mmd", "z_w", "z_d", "z_w_r")
COMPONENT_KEYS = ("p_W_1.2", "p_W_0.8", "p_D")
FAST_WEIGHTS = (1.2, 0.8)
WEIGHT_GRID = (0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3)
TIE_RTOL = 1e-10
SIMES_CAVEAT = "Simes combination has no proven validity guarantee for these dependent components"


# ========================
# PERMUTATION ENGINE
# ========================

def permutation_p_value(observed: float, replicates: np.ndarray, include_observed: bool = True) -> float:
    """
    Upper-tail p-value. Ties count toward the tail. With include_observed the
    observed labelling is added as one extra replicate (random permutations);
    without it the replicates are the full permutation null (enumeration).
    """
    replicates = np.asarray(replicates, dtype=float)
    scale = max(abs(observed), float(np.max(np.abs(replicates))) if replicates.size else 0.0)
    hits = int(np.count_nonzero(replicates >= observed - TIE_RTOL * scale))
    if include_observed:
        return (1 + hits) / (replicates.size + 1)
    return hits / replicates.size


def _statistic_from_pairs(kind: str, alpha, beta, analysis: KernelAnalysis, r: Optional[float]):
    moments = analysis.moments
    m, n, size = moments.m, moments.n, moments.size

    if kind == "mmd":
        gamma = (analysis.aggregates.total - m * (m - 1) * alpha - n * (n - 1) * beta) / (2.0 * m * n)
        return alpha + beta - 2.0 * gamma
    if kind == "gpk":
        try:
            inverse = covariance_inverse(moments)
        except DegeneracyError as exc:
            raise analysis.named_degeneracy(exc) from exc
        return gpk_from_deviations(alpha - moments.e_alpha, beta - moments.e_beta, inverse)

    if kind == "z_d":
        mean, variance, name = moments.e_d, moments.var_d, "D"
        value = m * (m - 1) * alpha - n * (n - 1) * beta
    else:
        weight = 1.0 if kind == "z_w" else r
        mean, variance = weighted_moments(moments, weight)
        name = f"W_{weight:g}"
        value = weight * m * alpha / size + n * beta / size
    if variance <= 0:
        raise analysis.named_degeneracy(DegeneracyError(f"{name} has zero permutation variance"))
    return (value - mean) / np.sqrt(variance)


def permutation_replicates(
    kernel: KernelMatrix,
    layout: SampleLayout,
    kind: str,
    plan: ResamplingPlan,
    r: Optional[float] = None,
    parallel: bool = True,
    analysis: Optional[KernelAnalysis] = None,
    signed: bool = False,
) -> Tuple[float, np.ndarray]:
    """
    (observed, replicates) of a statistic under label resampling. z_d is
    returned as |Z_D| unless `signed`, so by default every kind is an
    upper-tail statistic. The observed
    value goes through the same reduction as the replicates so that ties are
    exact.
    """
    if kind not in STATISTIC_KINDS:
        raise ParameterError(f"statistic kind must be one of {STATISTIC_KINDS}, got {kind!r}")
    if kind == "z_w_r" and r is None:
        raise ParameterError("kind 'z_w_r' needs the weight r")
    analysis = analysis or analyze(kernel, layout)
    agg = analysis.aggregates
    k0 = kernel.off_diagonal
    m, n = layout.m, layout.n

    if plan.scheme == "exhaustive":
        subsets = all_subsets(layout.size, m, plan.enumeration_cap)
        sxx, rx = subset_sums(k0, agg.row_sums, subsets, parallel=parallel)
    else:
        sxx, rx = random_subset_sums(k0, agg.row_sums, m, plan.replicates, plan.seed, parallel=parallel)

    obs_sxx, obs_rx = subset_sums(k0, agg.row_sums, np.sort(layout.x_index), parallel=False)
    alpha, beta = alpha_beta_from_sums(sxx, rx, agg.total, m, n)
    obs_alpha, obs_beta = alpha_beta_from_sums(obs_sxx, obs_rx, agg.total, m, n)

    observed = _statistic_from_pairs(kind, obs_alpha, obs_beta, analysis, r)
    replicates = _statistic_from_pairs(kind, alpha, beta, analysis, r)
    if kind == "z_d" and not signed:
        observed, replicates = np.abs(observed), np.abs(replicates)
    return float(observed[0]), np.asarray(replicates, dtype=float)


def _method_tag(kind: str, r: Optional[float]) -> str:
    if kind == "z_w_r":
        return f"z_w_{r:g}_perm"
    return f"{kind}_perm"


def permutation_pvalue(
    kernel: KernelMatrix,
    layout: SampleLayout,
    statistic_kind: str,
    plan: ResamplingPlan,
    level: float = DEFAULT_LEVEL,
    r: Optional[float] = None,
    parallel: bool = True,
    analysis: Optional[KernelAnalysis] = None,
) -> TestReport:
    _check_level(level)
    observed, replicates = permutation_replicates(kernel, layout, statistic_kind, plan, r, parallel, analysis)
    exhaustive = plan.scheme == "exhaustive"
    p_value = permutation_p_value(observed, replicates, include_observed=not exhaustive)
    logger.info("%s: observed=%.6g, p=%.6g over %d replicates", statistic_kind, observed, p_value, replicates.size)

    return TestReport(
        method=_method_tag(statistic_kind, r),
        p_value=p_value,
        reject=p_value < level,
        level=level,
        statistics={statistic_kind: observed},
        metadata={
            **kernel.metadata(),
            "scheme": plan.scheme,
            "seed": None if exhaustive else int(plan.seed),
            "replicates": int(replicates.size),
        },
    )


# ========================
# ANALYTIC P-VALUES
# ========================

def pvalues_from_z(z_w12: float, z_w08: float, z_d: float) -> Dict[str, float]:
    return {
        "p_W_1.2": float(norm.sf(z_w12)),
        "p_W_0.8": float(norm.sf(z_w08)),
        "p_D": float(2.0 * norm.sf(abs(z_d))),
    }


def normal_tail_pvalues(bundle: StatisticBundle) -> Dict[str, float]:
    missing = [r for r in FAST_WEIGHTS if r not in bundle.z_w_r]
    if missing:
        raise ParameterError(f"statistic bundle lacks Z_W,r for r={missing}")
    return pvalues_from_z(bundle.z_w_r[1.2], bundle.z_w_r[0.8], bundle.z_d)


# ========================
# COMBINED FAST TESTS
# ========================

ComponentInput = Union[Mapping[str, float], Sequence[float]]


def _check_level(level: float) -> None:
    if not 0.0 < level < 1.0:
        raise ParameterError(f"significance level must lie in (0, 1), got {level}")


def _components(values: ComponentInput, keys: Sequence[str]) -> Dict[str, float]:
    if isinstance(values, Mapping):
        out = {key: float(values[key]) for key in keys}
    else:
        values = list(values)
        if len(values) != len(keys):
            raise ParameterError(f"expected {len(keys)} component p-values, got {len(values)}")
        out = {key: float(v) for key, v in zip(keys, values)}
    for key, value in out.items():
        if not 0.0 <= value <= 1.0:
            raise ParameterError(f"component {key} = {value} is not a p-value")
    return out


def _bonferroni(p: Sequence[float]) -> float:
    return min(1.0, len(p) * min(p))


def _simes(p: Sequence[float]) -> float:
    ordered = sorted(p)
    k = len(ordered)
    return min(1.0, min(k * q / (i + 1) for i, q in enumerate(ordered)))


def _combined_report(method: str, components: Dict[str, float], p_value: float, level: float, **metadata) -> TestReport:
    _check_level(level)
    return TestReport(
        method=method,
        p_value=p_value,
        reject=p_value < level,
        level=level,
        component_p=components,
        metadata=metadata,
    )


def fgpk_test(component_p: ComponentInput, level: float = DEFAULT_LEVEL) -> TestReport:
    """Bonferroni over (p_W_1.2, p_W_0.8, p_D)"""
    comps = _components(component_p, COMPONENT_KEYS)
    return _combined_report("fgpk", comps, _bonferroni(list(comps.values())), level)


def fgpk_m_test(p_w12: float, p_w08: float, level: float = DEFAULT_LEVEL) -> TestReport:
    comps = _components((p_w12, p_w08), COMPONENT_KEYS[:2])
    return _combined_report("fgpk_m", comps, _bonferroni(list(comps.values())), level)


def fgpk_simes_test(component_p: ComponentInput, level: float = DEFAULT_LEVEL) -> TestReport:
    comps = _components(component_p, COMPONENT_KEYS)
    return _combined_report("fgpk_simes", comps, _simes(list(comps.values())), level, caveat=SIMES_CAVEAT)


def fgpk_m_simes_test(p_w12: float, p_w08: float, level: float = DEFAULT_LEVEL) -> TestReport:
    comps = _components((p_w12, p_w08), COMPONENT_KEYS[:2])
    return _combined_report("fgpk_m_simes", comps, _simes(list(comps.values())), level, caveat=SIMES_CAVEAT)


# ========================
# METHOD REGISTRY
# ========================

@dataclass
class MethodContext:
    """Shared state for every method run on one kernel"""

    analysis: KernelAnalysis
    level: float
    plan: ResamplingPlan
    parallel: bool = True
    _bundle: Optional[StatisticBundle] = None

    @property
    def bundle(self) -> StatisticBundle:
        if self._bundle is None:
            self._bundle = self.analysis.bundle(FAST_WEIGHTS)
        return self._bundle

    @property
    def components(self) -> Dict[str, float]:
        return normal_tail_pvalues(self.bundle)


MethodRunner = Callable[[MethodContext], TestReport]
METHODS: Dict[str, MethodRunner] = {}


def register_method(name: str):
    """Decorator adding a runner to METHODS; also the slot for competitor tests"""

    def decorator(func: MethodRunner) -> MethodRunner:
        if name in METHODS:
            raise ParameterError(f"method {name!r} is already registered")
        METHODS[name] = func
        return func

    return decorator


def _fast_statistics(bundle: StatisticBundle) -> Dict[str, float]:
    stats = {"gpk": bundle.gpk, "mmd_u": bundle.mmd_u, "mmd_b": bundle.mmd_b, "z_w": bundle.z_w, "z_d": bundle.z_d}
    for r, z in bundle.z_w_r.items():
        stats[f"z_w_{r:g}"] = z
    return stats


@register_method("gpk_perm")
def _run_gpk_perm(ctx: MethodContext) -> TestReport:
    a = ctx.analysis
    return permutation_pvalue(a.kernel, a.layout, "gpk", ctx.plan, ctx.level, parallel=ctx.parallel, analysis=a)


@register_method("mmd_perm")
def _run_mmd_perm(ctx: MethodContext) -> TestReport:
    a = ctx.analysis
    return permutation_pvalue(a.kernel, a.layout, "mmd", ctx.plan, ctx.level, parallel=ctx.parallel, analysis=a)


@register_method("z_d_perm")
def _run_z_d_perm(ctx: MethodContext) -> TestReport:
    a = ctx.analysis
    return permutation_pvalue(a.kernel, a.layout, "z_d", ctx.plan, ctx.level, parallel=ctx.parallel, analysis=a)


def _weighted_perm_runner(r: float) -> MethodRunner:
    def run(ctx: MethodContext) -> TestReport:
        a = ctx.analysis
        return permutation_pvalue(a.kernel, a.layout, "z_w_r", ctx.plan, ctx.level, r=r,
                                  parallel=ctx.parallel, analysis=a)

    return run


# Z_{W,r} permutation tests over the weight grid, named z_w_<r>_perm
WEIGHTED_PERM_METHODS = tuple(_method_tag("z_w_r", r) for r in WEIGHT_GRID)
for _r, _name in zip(WEIGHT_GRID, WEIGHTED_PERM_METHODS):
    register_method(_name)(_weighted_perm_runner(_r))


@register_method("fgpk")
def _run_fgpk(ctx: MethodContext) -> TestReport:
    report = fgpk_test(ctx.components, ctx.level)
    report.statistics = _fast_statistics(ctx.bundle)
    return report


@register_method("fgpk_m")
def _run_fgpk_m(ctx: MethodContext) -> TestReport:
    comps = ctx.components
    report = fgpk_m_test(comps["p_W_1.2"], comps["p_W_0.8"], ctx.level)
    report.statistics = _fast_statistics(ctx.bundle)
    return report


@register_method("fgpk_simes")
def _run_fgpk_simes(ctx: MethodContext) -> TestReport:
    report = fgpk_simes_test(ctx.components, ctx.level)
    report.statistics = _fast_statistics(ctx.bundle)
    return report


@register_method("fgpk_m_simes")
def _run_fgpk_m_simes(ctx: MethodContext) -> TestReport:
    comps = ctx.components
    report = fgpk_m_simes_test(comps["p_W_1.2"], comps["p_W_0.8"], ctx.level)
    report.statistics = _fast_statistics(ctx.bundle)
    return report


def check_methods(methods: Sequence[str]) -> List[str]:
    unknown = [name for name in methods if name not in METHODS]
    if unknown:
        raise ParameterError(f"unknown method(s) {unknown}; available: {sorted(METHODS)}")
    return list(methods)


def run_methods(
    kernel: KernelMatrix,
    layout: SampleLayout,
    methods: Sequence[str],
    level: float = DEFAULT_LEVEL,
    plan: Optional[ResamplingPlan] = None,
    parallel: bool = True,
    analysis: Optional[KernelAnalysis] = None,
) -> List[TestReport]:
    """One TestReport per method, all sharing the same aggregates and moments"""
    _check_level(level)
    check_methods(methods)
    plan = plan or ResamplingPlan()
    ctx = MethodContext(analysis=analysis or analyze(kernel, layout), level=level, plan=plan, parallel=parallel)

    reports = []
    for name in methods:
        report = METHODS[name](ctx)
        report.metadata = {
            **kernel.metadata(),
            "m": layout.m,
            "n": layout.n,
            "degenerate": ctx.analysis.moments.degenerate,
            **report.metadata,
        }
        reports.append(report)
    return reports
