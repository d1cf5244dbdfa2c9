"""
kergpk - Kernel aggregates and exact permutation-null moments

The moments of (alpha, beta) under the permutation null only depend on the
kernel through the off-diagonal sums A, B and C. The literal definitions of
B and C are triple and quadruple sums; both reduce to O(N^2):

    B = sum_i k_i.^2 - A
    C = S^2 - 2A - 4B          (S^2 expands over ordered index pairs)
"""

import logging
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from kergpk.exceptions import NumericalError, SizeError
from kergpk.models import KernelAggregates, KernelMatrix, PermutationMoments, SampleLayout
from kergpk.resampling import all_subsets, subset_sums

logger = logging.getLogger(__name__)

NEGATIVE_VARIANCE_TOLERANCE = 1e-12
# variances below this fraction of (kernel scale)^2 are rounding residue
ZERO_VARIANCE_RTOL = 1e-20
RELATIVE_ZERO_TOLERANCE = 1e-12


# ========================
# AGGREGATES
# ========================

def compute_aggregates(kernel: KernelMatrix) -> KernelAggregates:
    """S, k_bar, A, B, C and row sums in O(N^2), plus their centered counterparts"""
    size = kernel.size
    if size < 2:
        raise SizeError("kernel aggregates need at least two observations")

    k0 = kernel.off_diagonal
    pairs = size * (size - 1)

    row_sums = k0.sum(axis=1)
    total = float(row_sums.sum())
    kbar = total / pairs
    a = float(np.sum(k0 * k0))
    b = float(row_sums @ row_sums) - a
    c = total * total - 2.0 * a - 4.0 * b

    centered = k0 - kbar
    np.fill_diagonal(centered, 0.0)
    centered_rows = centered.sum(axis=1)
    centered_a = float(np.sum(centered * centered))
    centered_b = float(centered_rows @ centered_rows) - centered_a

    return KernelAggregates(
        size=size,
        total=total,
        kbar=kbar,
        a=a,
        b=b,
        c=c,
        row_sums=row_sums,
        centered_total=float(centered_rows.sum()),
        centered_a=centered_a,
        centered_b=centered_b,
        centered_row_sums=centered_rows,
    )


# ========================
# PERMUTATION MOMENTS
# ========================

def falling_ratio(x: int, size: int, order: int) -> float:
    """x(x-1)...(x-order+1) / N(N-1)...(N-order+1); f1, f2, f3 for order 2, 3, 4"""
    value = 1.0
    for i in range(order):
        value *= (x - i) / (size - i)
    return value


def covariance_alpha_beta(a: float, b: float, c: float, kbar: float, m: int, n: int) -> np.ndarray:
    """
    2x2 permutation covariance of (alpha, beta). The variance of a
    within-sample average over x observations is
    (2A f1(x) + 4B f2(x) + C f3(x)) / (x(x-1))^2 - k_bar^2; the covariance
    only involves four distinct indices.
    """
    size = m + n

    def _var(x: int) -> float:
        numerator = (2.0 * a * falling_ratio(x, size, 2)
                     + 4.0 * b * falling_ratio(x, size, 3)
                     + c * falling_ratio(x, size, 4))
        return numerator / (x * x * (x - 1) * (x - 1)) - kbar * kbar

    cross = c / (size * (size - 1) * (size - 2) * (size - 3)) - kbar * kbar
    return np.array([[_var(m), cross], [cross, _var(n)]])


def w_variance(a: float, b: float, c: float, m: int, n: int) -> float:
    """var(W) for W = (m alpha + n beta) / N"""
    size = m + n
    square = 2.0 * a + 4.0 * b + c
    numerator = m * n * ((size - 2) * 2.0 * a + 2.0 * square / (size - 1) - (4.0 * a + 4.0 * b))
    return numerator / (size ** 3 * (size - 1) * (size - 3) * (m - 1) * (n - 1))


def d_variance(a: float, b: float, c: float, m: int, n: int) -> float:
    """
    D = 2 r_X - S, so var(D) is four times the without-replacement variance
    of a sum of m row sums. This exact form has no (N-4)/(N-3) factor;
    with that factor the result disagrees with full enumeration and
    GPK = Z_W^2 + Z_D^2 no longer holds.
    """
    size = m + n
    square = 2.0 * a + 4.0 * b + c
    return m * n * ((4.0 * a + 4.0 * b) - 4.0 * square / size) / (size * (size - 1))


def _zero_threshold(agg: KernelAggregates) -> float:
    pairs = agg.size * (agg.size - 1)
    scale_sq = agg.a / pairs if agg.a > 0 else 1.0
    return ZERO_VARIANCE_RTOL * scale_sq


def _settle_variance(name: str, value: float, reference: float, zero_floor: float) -> Tuple[float, bool]:
    """Clamp rounding residue to zero; returns (value, is_zero)"""
    if value < -NEGATIVE_VARIANCE_TOLERANCE * max(1.0, reference):
        raise NumericalError(f"{name} = {value:.3e} is negative beyond rounding tolerance")
    if value <= max(zero_floor, RELATIVE_ZERO_TOLERANCE * reference):
        if value < 0:
            logger.warning("clamping %s = %.3e to zero", name, value)
        return 0.0, True
    return value, False


def permutation_moments(agg: KernelAggregates, layout: SampleLayout) -> PermutationMoments:
    """
    Exact mean and covariance of (alpha, beta), W and D over all C(N, m)
    labellings. Needs N >= 4. Variances that are zero up to rounding are
    clamped and flag the result as degenerate; clearly negative ones raise
    NumericalError.
    """
    layout.require_pairs()
    m, n, size = layout.m, layout.n, layout.size
    if size != agg.size:
        raise SizeError(f"layout has {size} labels but the kernel has {agg.size} rows")
    if size < 4:
        raise SizeError(
            f"permutation moments need N >= 4 (f3 and var(W) divide by N-3), got N={size}"
        )

    # The formulas are invariant to a constant shift of the off-diagonal
    # kernel, so evaluate them on the centered aggregates.
    ca, cb, cc, ckbar = agg.centered_a, agg.centered_b, agg.centered_c, agg.centered_kbar
    cov = covariance_alpha_beta(ca, cb, cc, ckbar, m, n)
    var_w = w_variance(ca, cb, cc, m, n)
    var_d = d_variance(ca, cb, cc, m, n)

    floor = _zero_threshold(agg)
    s11, zero11 = _settle_variance("var(alpha)", float(cov[0, 0]), 0.0, floor)
    s22, zero22 = _settle_variance("var(beta)", float(cov[1, 1]), 0.0, floor)
    ref_w = (m * m * s11 + n * n * s22 + 2.0 * m * n * abs(cov[0, 1])) / size ** 2
    ref_d = (m * m * (m - 1) ** 2 * s11 + n * n * (n - 1) ** 2 * s22
             + 2.0 * m * (m - 1) * n * (n - 1) * abs(cov[0, 1]))
    var_w, zero_w = _settle_variance("var(W)", var_w, ref_w, floor)
    var_d, zero_d = _settle_variance("var(D)", var_d, ref_d, floor * (size * size) ** 2)
    cov[0, 0], cov[1, 1] = s11, s22
    cov.setflags(write=False)

    degenerate = zero11 or zero22 or zero_w or zero_d
    if degenerate:
        logger.warning("permutation covariance is degenerate (m=%d, n=%d)", m, n)

    kbar = agg.kbar
    return PermutationMoments(
        m=m,
        n=n,
        e_alpha=kbar,
        e_beta=kbar,
        cov_ab=cov,
        e_w=kbar,
        var_w=var_w,
        e_d=(m - n) * (size - 1) * kbar,
        var_d=var_d,
        degenerate=degenerate,
    )


def weighted_moments(moments: PermutationMoments, r: float) -> Tuple[float, float]:
    """E and var of W_r = r m alpha / N + n beta / N"""
    m, n, size = moments.m, moments.n, moments.size
    weights = np.array([r * m / size, n / size])
    mean = (r * m + n) * moments.kbar / size
    return float(mean), float(weights @ moments.cov_ab @ weights)


def difference_moments(moments: PermutationMoments) -> Dict[str, Tuple[float, float]]:
    """
    E and var of alpha - gamma and beta - gamma. Both are linear in
    (alpha, beta) because m(m-1)alpha + n(n-1)beta + 2mn gamma = S.
    """
    m, n = moments.m, moments.n
    out = {}
    for name, weights in (
        ("alpha_gamma", np.array([1.0 + (m - 1) / (2.0 * n), (n - 1) / (2.0 * m)])),
        ("beta_gamma", np.array([(m - 1) / (2.0 * n), 1.0 + (n - 1) / (2.0 * m)])),
    ):
        out[name] = (0.0, float(weights @ moments.cov_ab @ weights))
    return out


# ========================
# EXACT ENUMERATION
# ========================

@dataclass(frozen=True, eq=False)
class NullEnumeration:
    """(alpha, beta) for every one of the C(N, m) label assignments"""

    alpha: np.ndarray
    beta: np.ndarray
    subsets: np.ndarray

    @property
    def count(self) -> int:
        return int(self.alpha.size)

    def moments(self) -> Dict[str, object]:
        pairs = np.vstack([self.alpha, self.beta])
        return {
            "e_alpha": float(self.alpha.mean()),
            "e_beta": float(self.beta.mean()),
            "cov_ab": np.cov(pairs, bias=True),
        }


def alpha_beta_from_sums(sxx, rx, total: float, m: int, n: int):
    """alpha and beta from the within-X total and the X row-sum total"""
    syy = total - 2.0 * rx + sxx
    return sxx / (m * (m - 1)), syy / (n * (n - 1))


def enumerate_permutation_null(kernel: KernelMatrix, layout: SampleLayout, cap: int = 1_000_000) -> NullEnumeration:
    """(alpha, beta) for every labelling; raises EnumerationCapError above cap"""
    layout.require_pairs()
    agg = compute_aggregates(kernel)
    subsets = all_subsets(layout.size, layout.m, cap)
    sxx, rx = subset_sums(kernel.off_diagonal, agg.row_sums, subsets)
    alpha, beta = alpha_beta_from_sums(sxx, rx, agg.total, layout.m, layout.n)
    return NullEnumeration(alpha=alpha, beta=beta, subsets=subsets)
