"""
kergpk - Test statistics
alpha, beta, gamma, the two MMD estimators, GPK and its decomposition into
the standardized W and D statistics, and the kernel corner-case checks.
"""

import logging
from dataclasses import dataclass, replace
from typing import Dict, Iterable, Optional, Sequence

import numpy as np

from kergpk.aggregates import compute_aggregates, difference_moments, permutation_moments, weighted_moments
from kergpk.exceptions import DegeneracyError, SizeError
from kergpk.models import (
    DegeneracyReport,
    KernelAggregates,
    KernelMatrix,
    PairSums,
    PermutationMoments,
    SampleLayout,
    StatisticBundle,
)

logger = logging.getLogger(__name__)

DEFAULT_WEIGHTS = (1.2, 0.8)
DETERMINANT_RTOL = 1e-14
EQUALITY_RTOL = 1e-10


# ========================
# PAIR SUMS AND MMD
# ========================

def _blocks(kernel: KernelMatrix, layout: SampleLayout):
    if layout.size != kernel.size:
        raise SizeError(f"layout has {layout.size} labels but the kernel has {kernel.size} rows")
    k = kernel.entries
    ix, iy = layout.x_index, layout.y_index
    return k[np.ix_(ix, ix)], k[np.ix_(iy, iy)], k[np.ix_(ix, iy)]


def pair_sums(kernel: KernelMatrix, layout: SampleLayout) -> PairSums:
    """Within-X, within-Y (diagonal excluded) and cross mean kernel values"""
    layout.require_pairs()
    m, n = layout.m, layout.n
    kxx, kyy, kxy = _blocks(kernel, layout)
    sxx = kxx.sum() - np.trace(kxx)
    syy = kyy.sum() - np.trace(kyy)
    return PairSums(
        alpha=float(sxx / (m * (m - 1))),
        beta=float(syy / (n * (n - 1))),
        gamma=float(kxy.sum() / (m * n)),
    )


def mmd_unbiased(pair: PairSums) -> float:
    """Unbiased MMD^2: alpha + beta - 2 gamma"""
    return pair.alpha + pair.beta - 2.0 * pair.gamma


def mmd_biased(kernel: KernelMatrix, layout: SampleLayout) -> float:
    """Biased estimator; within-sample averages include the diagonal"""
    m, n = layout.m, layout.n
    kxx, kyy, kxy = _blocks(kernel, layout)
    return float(kxx.sum() / (m * m) + kyy.sum() / (n * n) - 2.0 * kxy.sum() / (m * n))


# ========================
# GPK AND ITS DECOMPOSITION
# ========================

def covariance_inverse(moments: PermutationMoments) -> np.ndarray:
    """Adjugate inverse of the 2x2 permutation covariance of (alpha, beta)"""
    cov = moments.cov_ab
    s11, s12, s22 = float(cov[0, 0]), float(cov[0, 1]), float(cov[1, 1])
    det = s11 * s22 - s12 * s12
    scale = max(abs(s11), abs(s12), abs(s22))
    if moments.degenerate or scale == 0.0 or abs(det) <= DETERMINANT_RTOL * scale * scale:
        raise DegeneracyError(
            "GPK is undefined: the permutation covariance of (alpha, beta) is singular "
            "(kernel corner case C1 or C2); run check_degeneracy for details"
        )
    return np.array([[s22, -s12], [-s12, s11]]) / det


def gpk_from_deviations(dev_alpha, dev_beta, inverse: np.ndarray):
    """Quadratic form, vectorized over arrays of deviations"""
    value = (inverse[0, 0] * dev_alpha * dev_alpha
             + 2.0 * inverse[0, 1] * dev_alpha * dev_beta
             + inverse[1, 1] * dev_beta * dev_beta)
    return np.maximum(value, 0.0)


def gpk_statistic(pair: PairSums, moments: PermutationMoments) -> float:
    """
    (alpha - E alpha, beta - E beta) weighted by the inverse permutation
    covariance. Raises DegeneracyError when that covariance is singular.
    """
    inverse = covariance_inverse(moments)
    return float(gpk_from_deviations(pair.alpha - moments.e_alpha, pair.beta - moments.e_beta, inverse))


def _standardize(value: float, mean: float, variance: float, name: str) -> float:
    if variance <= 0:
        raise DegeneracyError(f"{name} has zero permutation variance; the statistic cannot be standardized")
    return float((value - mean) / np.sqrt(variance))


def z_statistics(
    pair: PairSums,
    moments: PermutationMoments,
    layout: SampleLayout,
    weights: Iterable[float] = DEFAULT_WEIGHTS,
) -> StatisticBundle:
    """
    Standardized W and D, plus Z_W,r for every weight r, together with MMD^2
    and GPK. W = (m alpha + n beta) / N, D = m(m-1) alpha - n(n-1) beta and
    W_r = (r m alpha + n beta) / N. A zero permutation variance raises
    DegeneracyError.
    """
    m, n, size = layout.m, layout.n, layout.size
    if (m, n) != (moments.m, moments.n):
        raise SizeError(f"moments were computed for m={moments.m}, n={moments.n}, layout has m={m}, n={n}")

    w = m * pair.alpha / size + n * pair.beta / size
    d = m * (m - 1) * pair.alpha - n * (n - 1) * pair.beta
    z_w = _standardize(w, moments.e_w, moments.var_w, "W")
    z_d = _standardize(d, moments.e_d, moments.var_d, "D")

    z_w_r = {}
    for r in weights:
        mean, variance = weighted_moments(moments, r)
        w_r = r * m * pair.alpha / size + n * pair.beta / size
        z_w_r[float(r)] = _standardize(w_r, mean, variance, f"W_{r:g}")

    return StatisticBundle(
        mmd_u=mmd_unbiased(pair),
        gpk=gpk_statistic(pair, moments),
        z_w=z_w,
        z_d=z_d,
        w=float(w),
        d=float(d),
        z_w_r=z_w_r,
    )


def breakdown(pair: PairSums, moments: PermutationMoments) -> Dict[str, Optional[float]]:
    """alpha - gamma, beta - gamma and their permutation-standardized values"""
    out: Dict[str, Optional[float]] = {
        "alpha_minus_gamma": pair.alpha - pair.gamma,
        "beta_minus_gamma": pair.beta - pair.gamma,
    }
    diffs = difference_moments(moments)
    for key, name in (("alpha_gamma", "alpha_minus_gamma"), ("beta_gamma", "beta_minus_gamma")):
        mean, variance = diffs[key]
        out[f"{name}_std"] = (out[name] - mean) / np.sqrt(variance) if variance > 0 else None
    return out


# ========================
# CORNER CASES
# ========================

def check_degeneracy(kernel: KernelMatrix) -> DegeneracyReport:
    """
    C1: all off-diagonal row sums equal. C2: r_i - (N-2) k_ip equal over
    i != p, checked for the last index p = N-1 and for every other pivot.
    Condition ratios use the centered kernel and shrink when the normal
    approximation of the W and D statistics is adequate.
    """
    size = kernel.size
    if size < 4:
        raise SizeError(f"degeneracy checks need N >= 4, got N={size}")

    k0 = kernel.off_diagonal
    rows = k0.sum(axis=1)
    kbar = rows.sum() / (size * (size - 1))
    tolerance = EQUALITY_RTOL * max(1.0, abs(kbar) * size)

    c1 = bool(rows.max() - rows.min() <= tolerance)

    shifted = rows[:, None] - (size - 2) * k0
    np.fill_diagonal(shifted, np.nan)
    spread = np.nanmax(shifted, axis=0) - np.nanmin(shifted, axis=0)
    pivots = tuple(int(p) for p in np.flatnonzero(spread <= tolerance))
    c2_given = bool(spread[size - 1] <= tolerance)

    centered = k0 - kbar
    np.fill_diagonal(centered, 0.0)
    centered_rows = centered.sum(axis=1)
    denominator = float(centered_rows @ centered_rows)
    if denominator > 0:
        condition1 = float(np.sum(np.abs(centered_rows) ** 3) / denominator ** 1.5)
        condition2 = float(np.sum(centered * centered) / denominator)
    else:
        condition1 = condition2 = float("inf")

    if c1 or pivots:
        logger.info("kernel corner cases: C1=%s, C2 pivots=%s", c1, pivots)
    return DegeneracyReport(
        c1_violated=c1,
        c2_violated=bool(pivots),
        c2_given_order=c2_given,
        c2_pivots=pivots,
        condition1_ratio=condition1,
        condition2_ratio=condition2,
    )


# ========================
# ONE-SHOT ANALYSIS
# ========================

@dataclass(frozen=True, eq=False)
class KernelAnalysis:
    """Everything the tests share for one kernel and one labelling"""

    kernel: KernelMatrix
    layout: SampleLayout
    aggregates: KernelAggregates
    pair: PairSums
    moments: PermutationMoments

    def bundle(self, weights: Sequence[float] = DEFAULT_WEIGHTS) -> StatisticBundle:
        """Standardized statistics; raises DegeneracyError with the corner case named"""
        try:
            bundle = z_statistics(self.pair, self.moments, self.layout, weights)
        except DegeneracyError as exc:
            raise self.named_degeneracy(exc) from exc
        return replace(bundle, mmd_b=mmd_biased(self.kernel, self.layout))

    def named_degeneracy(self, exc: DegeneracyError) -> DegeneracyError:
        if exc.case is not None or self.kernel.size < 4:
            return exc
        report = check_degeneracy(self.kernel)
        return DegeneracyError(str(exc), case=report.case)


def analyze(kernel: KernelMatrix, layout: SampleLayout) -> KernelAnalysis:
    aggregates = compute_aggregates(kernel)
    moments = permutation_moments(aggregates, layout)
    logger.debug("kbar=%.6g var(W)=%.3e var(D)=%.3e", aggregates.kbar, moments.var_w, moments.var_d)
    return KernelAnalysis(
        kernel=kernel,
        layout=layout,
        aggregates=aggregates,
        pair=pair_sums(kernel, layout),
        moments=moments,
    )


def compute_statistics(kernel: KernelMatrix, layout: SampleLayout, weights: Sequence[float] = DEFAULT_WEIGHTS) -> StatisticBundle:
    return analyze(kernel, layout).bundle(weights)
