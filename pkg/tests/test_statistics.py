import numpy as np
import pytest

from kergpk.aggregates import compute_aggregates, enumerate_permutation_null, permutation_moments
from kergpk.exceptions import DegeneracyError, SizeError
from kergpk.kernel import build_kernel
from kergpk.models import KernelMatrix, ObservationSet, PairSums, SampleLayout
from kergpk.statistics import (
    analyze,
    breakdown,
    check_degeneracy,
    compute_statistics,
    gpk_statistic,
    mmd_biased,
    mmd_unbiased,
    pair_sums,
    z_statistics,
)
from tests.conftest import random_kernel


def constant_kernel(size, value=0.5):
    k = np.full((size, size), value)
    np.fill_diagonal(k, 1.0)
    return KernelMatrix(k, "precomputed")


def moments_of(kernel, layout):
    return permutation_moments(compute_aggregates(kernel), layout)


class TestPairSums:
    def test_constant_kernel(self):
        pair = pair_sums(constant_kernel(6, 0.3), SampleLayout.contiguous(3, 3))
        assert pair.alpha == pytest.approx(0.3)
        assert pair.beta == pytest.approx(0.3)
        assert pair.gamma == pytest.approx(0.3)

    def test_block_example(self):
        k = np.eye(4)
        k[0, 1] = k[1, 0] = 1.0
        k[2, 3] = k[3, 2] = 2.0
        pair = pair_sums(KernelMatrix(k, "precomputed"), SampleLayout.contiguous(2, 2))
        assert (pair.alpha, pair.beta, pair.gamma) == (1.0, 2.0, 0.0)

    def test_total_identity(self, kernel_factory):
        kernel, layout = kernel_factory(11), SampleLayout.contiguous(4, 7)
        pair = pair_sums(kernel, layout)
        m, n = layout.m, layout.n
        lhs = m * (m - 1) * pair.alpha + n * (n - 1) * pair.beta + 2 * m * n * pair.gamma
        agg = compute_aggregates(kernel)
        assert lhs == pytest.approx(agg.size * (agg.size - 1) * agg.kbar, rel=1e-12)

    def test_interleaved_labels(self, kernel_factory):
        kernel = kernel_factory(6)
        layout = SampleLayout(np.array([0, 1, 0, 1, 1, 0]))
        k = kernel.entries
        assert pair_sums(kernel, layout).alpha == pytest.approx((k[0, 2] + k[0, 5] + k[2, 5]) / 3)


class TestMMD:
    def test_equal_averages(self):
        assert mmd_unbiased(PairSums(0.4, 0.4, 0.4)) == 0.0

    def test_arithmetic(self):
        assert mmd_unbiased(PairSums(1.0, 2.0, 0.0)) == 3.0

    def test_breakdown_style_values(self):
        # alpha - gamma = -0.061 and beta - gamma = 0.070
        pair = PairSums(0.5 - 0.061, 0.5 + 0.070, 0.5)
        assert mmd_unbiased(pair) == pytest.approx(0.009)

    def test_biased_identical_singletons(self):
        kernel = build_kernel(ObservationSet([[1.0, 2.0]]), ObservationSet([[1.0, 2.0]]), bandwidth=1.0)[0]
        assert mmd_biased(kernel, SampleLayout.contiguous(1, 1)) == pytest.approx(0.0)

    def test_biased_constant_two_by_two(self):
        c = 0.3
        assert mmd_biased(constant_kernel(4, c), SampleLayout.contiguous(2, 2)) == pytest.approx(1 - c)

    def test_biased_minus_unbiased_is_diagonal_correction(self, kernel_factory):
        kernel, layout = kernel_factory(9), SampleLayout.contiguous(4, 5)
        pair = pair_sums(kernel, layout)
        m, n = layout.m, layout.n
        kxx_diag = np.trace(kernel.entries[:m, :m])
        kyy_diag = np.trace(kernel.entries[m:, m:])
        expected = (kxx_diag / m ** 2 - pair.alpha / m) + (kyy_diag / n ** 2 - pair.beta / n)
        assert mmd_biased(kernel, layout) - mmd_unbiased(pair) == pytest.approx(expected, rel=1e-10)

    def test_unbiased_is_affine_in_w(self, rng):
        for _ in range(50):
            size = int(rng.integers(5, 15))
            m = int(rng.integers(2, size - 1))
            kernel, layout = random_kernel(rng, size), SampleLayout.contiguous(m, size - m)
            bundle = compute_statistics(kernel, layout)
            kbar = compute_aggregates(kernel).kbar
            n = size - m
            assert bundle.mmd_u == pytest.approx(size * (size - 1) / (m * n) * (bundle.w - kbar), rel=1e-10, abs=1e-12)


class TestGPK:
    def test_zero_at_null_mean(self, small_instance):
        kernel, layout = small_instance
        moments = moments_of(kernel, layout)
        assert gpk_statistic(PairSums(moments.e_alpha, moments.e_beta, 0.0), moments) == 0.0

    def test_matches_generic_solve(self, kernel_factory):
        kernel, layout = kernel_factory(6), SampleLayout.contiguous(3, 3)
        moments = moments_of(kernel, layout)
        pair = pair_sums(kernel, layout)
        dev = np.array([pair.alpha - moments.e_alpha, pair.beta - moments.e_beta])
        expected = dev @ np.linalg.solve(moments.cov_ab, dev)
        assert gpk_statistic(pair, moments) == pytest.approx(expected, rel=1e-10)

    def test_constant_kernel_raises(self):
        kernel, layout = constant_kernel(6), SampleLayout.contiguous(3, 3)
        with pytest.raises(DegeneracyError):
            gpk_statistic(pair_sums(kernel, layout), moments_of(kernel, layout))

    def test_decomposition(self, rng):
        for _ in range(1000):
            size = int(rng.integers(6, 20))
            m = int(rng.integers(2, size - 1))
            bundle = compute_statistics(random_kernel(rng, size), SampleLayout.contiguous(m, size - m))
            assert abs(bundle.gpk - bundle.z_w ** 2 - bundle.z_d ** 2) <= 1e-8 * max(1.0, bundle.gpk)

    def test_swapping_samples_keeps_gpk(self, gaussian_kernel):
        kernel, layout = gaussian_kernel
        a = compute_statistics(kernel, layout)
        b = compute_statistics(kernel, layout.swapped())
        assert b.gpk == pytest.approx(a.gpk, rel=1e-9)
        assert b.z_d == pytest.approx(-a.z_d, rel=1e-9)


class TestStandardized:
    def test_weight_one_equals_z_w(self, gaussian_kernel):
        bundle = compute_statistics(*gaussian_kernel, weights=(1.0, 1.2, 0.8))
        assert bundle.z_w_r[1.0] == pytest.approx(bundle.z_w, rel=1e-12)
        assert bundle.mmd_b is not None

    def test_enumeration_standardization(self, kernel_factory):
        kernel, layout = kernel_factory(6), SampleLayout.contiguous(3, 3)
        null = enumerate_permutation_null(kernel, layout)
        moments = moments_of(kernel, layout)
        z_w, z_d = [], []
        for alpha, beta in zip(null.alpha, null.beta):
            bundle = z_statistics(PairSums(alpha, beta, 0.0), moments, layout)
            z_w.append(bundle.z_w)
            z_d.append(bundle.z_d)
        for values in (np.array(z_w), np.array(z_d)):
            assert values.mean() == pytest.approx(0.0, abs=1e-9)
            assert values.var() == pytest.approx(1.0, abs=1e-9)
        assert abs(np.mean(np.array(z_w) * np.array(z_d))) < 1e-9

    def test_zero_variance_raises(self):
        kernel, layout = constant_kernel(8), SampleLayout.contiguous(4, 4)
        with pytest.raises(DegeneracyError):
            z_statistics(pair_sums(kernel, layout), moments_of(kernel, layout), layout)

    def test_analysis_names_the_corner_case(self):
        with pytest.raises(DegeneracyError) as info:
            analyze(constant_kernel(8), SampleLayout.contiguous(4, 4)).bundle()
        assert info.value.case == "C1"
        assert "C1" in str(info.value)

    def test_breakdown(self, gaussian_kernel):
        kernel, layout = gaussian_kernel
        analysis = analyze(kernel, layout)
        details = breakdown(analysis.pair, analysis.moments)
        assert details["alpha_minus_gamma"] == pytest.approx(analysis.pair.alpha - analysis.pair.gamma)
        assert details["alpha_minus_gamma_std"] is not None
        assert details["beta_minus_gamma_std"] is not None


class TestDegeneracy:
    def test_constant_kernel(self):
        report = check_degeneracy(constant_kernel(6))
        assert report.c1_violated
        assert report.case == "C1"
        assert report.to_dict()["condition1_ratio"] is None

    def test_second_corner_case(self):
        # r_i - (N-2) k_iN constant: rows of a block design with one hub
        size = 6
        k = np.full((size, size), 0.2)
        k[-1, :] = k[:, -1] = 0.7
        np.fill_diagonal(k, 1.0)
        report = check_degeneracy(KernelMatrix(k, "precomputed"))
        assert not report.c1_violated
        assert report.c2_violated
        assert report.c2_given_order
        assert size - 1 in report.c2_pivots

    def test_random_gaussian_instance(self):
        rng = np.random.default_rng(3)
        x = ObservationSet(rng.standard_normal((100, 5)))
        y = ObservationSet(rng.standard_normal((100, 5)))
        report = check_degeneracy(build_kernel(x, y)[0])
        assert not report.c1_violated
        assert not report.c2_violated
        assert report.case is None

    def test_condition_ratio_shrinks(self):
        rng = np.random.default_rng(11)
        ratios = []
        for size in (50, 100, 200, 400):
            x = ObservationSet(rng.standard_normal((size // 2, 5)))
            y = ObservationSet(rng.standard_normal((size // 2, 5)))
            ratios.append(check_degeneracy(build_kernel(x, y)[0]).condition2_ratio)
        assert ratios[-1] < ratios[0]

    def test_needs_four_points(self):
        with pytest.raises(SizeError):
            check_degeneracy(constant_kernel(3))
