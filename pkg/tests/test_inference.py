import itertools

import numpy as np
import pytest

from kergpk.exceptions import DegeneracyError, EnumerationCapError, ParameterError
from kergpk.inference import (
    METHODS,
    WEIGHTED_PERM_METHODS,
    fgpk_m_simes_test,
    fgpk_m_test,
    fgpk_simes_test,
    fgpk_test,
    normal_tail_pvalues,
    permutation_p_value,
    permutation_pvalue,
    permutation_replicates,
    pvalues_from_z,
    register_method,
    run_methods,
)
from kergpk.models import KernelMatrix, ResamplingPlan, SampleLayout, StatisticBundle, TestReport
from kergpk.statistics import compute_statistics
from kergpk.utils import configure_threads


def constant_kernel(size, value=0.5):
    k = np.full((size, size), value)
    np.fill_diagonal(k, 1.0)
    return KernelMatrix(k, "precomputed")


EXHAUSTIVE = ResamplingPlan(scheme="exhaustive")


class TestPermutationPValue:
    def test_observed_above_every_replicate(self):
        assert permutation_p_value(10.0, np.arange(999.0) / 1000) == pytest.approx(1 / 1000)

    def test_add_one_convention(self):
        assert permutation_p_value(2.5, np.array([1.0, 2.0, 3.0])) == pytest.approx(0.5)

    def test_ties_count(self):
        assert permutation_p_value(2.0, np.array([1.0, 2.0, 3.0])) == pytest.approx(0.75)

    def test_exhaustive_counts_without_extra_replicate(self):
        assert permutation_p_value(2.0, np.array([1.0, 2.0, 3.0, 0.0]), include_observed=False) == 0.5


class TestPermutationEngine:
    def test_random_scheme_grid(self, gaussian_kernel):
        kernel, layout = gaussian_kernel
        report = permutation_pvalue(kernel, layout, "gpk", ResamplingPlan(replicates=199, seed=5))
        assert report.method == "gpk_perm"
        assert report.metadata["replicates"] == 199
        assert (report.p_value * 200) == pytest.approx(round(report.p_value * 200))
        assert 1 / 200 <= report.p_value <= 1.0

    def test_exhaustive_grid(self, small_instance):
        kernel, layout = small_instance
        report = permutation_pvalue(kernel, layout, "mmd", EXHAUSTIVE)
        assert report.metadata["replicates"] == 56
        assert report.p_value * 56 == pytest.approx(round(report.p_value * 56))
        assert report.p_value > 0

    def test_exhaustive_mmd_by_brute_force(self, small_instance):
        kernel, layout = small_instance
        k = kernel.entries

        def mmd(x_index):
            y_index = [i for i in range(8) if i not in x_index]
            kxx = k[np.ix_(x_index, x_index)]
            kyy = k[np.ix_(y_index, y_index)]
            alpha = (kxx.sum() - np.trace(kxx)) / 6
            beta = (kyy.sum() - np.trace(kyy)) / 20
            return alpha + beta - 2 * k[np.ix_(x_index, y_index)].mean()

        values = np.array([mmd(list(c)) for c in itertools.combinations(range(8), 3)])
        observed = mmd([0, 1, 2])
        expected = np.mean(values >= observed - 1e-12)
        assert permutation_pvalue(kernel, layout, "mmd", EXHAUSTIVE).p_value == pytest.approx(expected)

    def test_z_w_and_mmd_agree_exhaustively(self, rng):
        from tests.conftest import random_kernel

        for size in (6, 7, 8):
            for m in range(2, size - 1):
                kernel, layout = random_kernel(rng, size), SampleLayout.contiguous(m, size - m)
                p_mmd = permutation_pvalue(kernel, layout, "mmd", EXHAUSTIVE).p_value
                p_zw = permutation_pvalue(kernel, layout, "z_w", EXHAUSTIVE).p_value
                assert p_mmd == p_zw

    def test_identical_samples(self, rng):
        values = rng.standard_normal((4, 2))
        from kergpk.kernel import build_kernel
        from kergpk.models import ObservationSet

        kernel, layout = build_kernel(ObservationSet(values), ObservationSet(values))
        report = permutation_pvalue(kernel, layout, "gpk", EXHAUSTIVE)
        assert report.p_value * 70 == pytest.approx(round(report.p_value * 70))
        assert report.p_value >= 1 / 70
        assert compute_statistics(kernel, layout).z_d == pytest.approx(0.0, abs=1e-9)

    def test_super_uniform_over_enumeration(self, small_instance):
        kernel, layout = small_instance
        _, replicates = permutation_replicates(kernel, layout, "gpk", EXHAUSTIVE)
        p = np.array([np.mean(replicates >= value - 1e-12) for value in replicates])
        for q in np.unique(p):
            assert np.mean(p <= q) <= q + 1e-12

    def test_deterministic_across_thread_counts(self, gaussian_kernel):
        kernel, layout = gaussian_kernel
        plan = ResamplingPlan(replicates=700, seed=42)
        configure_threads(1)
        _, single = permutation_replicates(kernel, layout, "gpk", plan)
        configure_threads()
        _, many = permutation_replicates(kernel, layout, "gpk", plan)
        _, serial = permutation_replicates(kernel, layout, "gpk", plan, parallel=False)
        np.testing.assert_array_equal(single, many)
        np.testing.assert_array_equal(single, serial)

    def test_replicate_prefix_is_stable(self, gaussian_kernel):
        kernel, layout = gaussian_kernel
        _, short = permutation_replicates(kernel, layout, "mmd", ResamplingPlan(replicates=300, seed=9))
        _, long = permutation_replicates(kernel, layout, "mmd", ResamplingPlan(replicates=1500, seed=9))
        np.testing.assert_array_equal(short, long[:300])

    def test_observed_matches_statistics(self, gaussian_kernel):
        kernel, layout = gaussian_kernel
        bundle = compute_statistics(kernel, layout)
        observed, _ = permutation_replicates(kernel, layout, "gpk", ResamplingPlan(replicates=10))
        assert observed == pytest.approx(bundle.gpk, rel=1e-7)
        observed, _ = permutation_replicates(kernel, layout, "z_d", ResamplingPlan(replicates=10))
        assert observed == pytest.approx(abs(bundle.z_d), rel=1e-7)

    def test_degenerate_gpk(self):
        with pytest.raises(DegeneracyError) as info:
            permutation_pvalue(constant_kernel(6), SampleLayout.contiguous(3, 3), "gpk", EXHAUSTIVE)
        assert info.value.case == "C1"

    def test_enumeration_cap(self, gaussian_kernel):
        kernel, layout = gaussian_kernel
        with pytest.raises(EnumerationCapError):
            permutation_pvalue(kernel, layout, "gpk", ResamplingPlan(scheme="exhaustive", enumeration_cap=1000))

    def test_unknown_kind(self, small_instance):
        with pytest.raises(ParameterError):
            permutation_pvalue(*small_instance, "energy", EXHAUSTIVE)

    def test_plan_validation(self):
        with pytest.raises(ParameterError):
            ResamplingPlan(replicates=0)
        with pytest.raises(ParameterError):
            ResamplingPlan(scheme="bootstrap")


class TestNormalTails:
    def test_reference_components(self):
        p = pvalues_from_z(-1.164, 2.781, -2.547)
        assert p["p_W_1.2"] == pytest.approx(0.88, abs=0.005)
        assert p["p_W_0.8"] == pytest.approx(0.0027, abs=0.00005)
        assert p["p_D"] == pytest.approx(0.011, abs=0.0005)

    def test_zero(self):
        p = pvalues_from_z(0.0, 0.0, 0.0)
        assert p == {"p_W_1.2": 0.5, "p_W_0.8": 0.5, "p_D": 1.0}

    def test_from_bundle(self):
        bundle = StatisticBundle(mmd_u=0.0, gpk=0.0, z_w=0.0, z_d=-2.547, w=0.0, d=0.0, z_w_r={1.2: -1.164, 0.8: 2.781})
        assert normal_tail_pvalues(bundle)["p_D"] == pytest.approx(0.011, abs=0.0005)

    def test_missing_weight(self):
        bundle = StatisticBundle(mmd_u=0.0, gpk=0.0, z_w=0.0, z_d=0.0, w=0.0, d=0.0, z_w_r={1.2: 0.0})
        with pytest.raises(ParameterError):
            normal_tail_pvalues(bundle)


class TestCombinedTests:
    def test_fgpk(self):
        report = fgpk_test((0.01, 0.5, 0.9), 0.05)
        assert report.p_value == pytest.approx(0.03)
        assert report.reject

    def test_fgpk_capped(self):
        report = fgpk_test((0.4, 0.4, 0.4), 0.05)
        assert report.p_value == 1.0
        assert not report.reject

    def test_reference_fixture(self):
        components = pvalues_from_z(-1.164, 2.781, -2.547)
        fgpk = fgpk_test(components, 0.05)
        fgpk_m = fgpk_m_test(components["p_W_1.2"], components["p_W_0.8"], 0.05)
        assert fgpk.p_value == pytest.approx(0.0081, abs=0.0002)
        assert round(fgpk.p_value, 3) == 0.008
        assert fgpk_m.p_value == pytest.approx(0.0054, abs=0.0002)
        assert round(fgpk_m.p_value, 3) == 0.005
        assert fgpk.reject and fgpk_m.reject

    @pytest.mark.parametrize("p, expected, reject", [
        ((0.0027, 0.88), 0.0054, True),
        ((0.5, 0.5), 1.0, False),
        ((0.02, 0.03), 0.04, True),
    ])
    def test_fgpk_m(self, p, expected, reject):
        report = fgpk_m_test(*p, level=0.05)
        assert report.p_value == pytest.approx(expected)
        assert report.reject is reject

    @pytest.mark.parametrize("p, expected", [
        ((0.02, 0.03, 0.9), 0.045),
        ((0.2, 0.2, 0.2), 0.2),
        ((0.01, 0.5, 0.9), 0.03),
    ])
    def test_fgpk_simes(self, p, expected):
        report = fgpk_simes_test(p, 0.05)
        assert report.p_value == pytest.approx(expected)
        assert "caveat" in report.metadata

    @pytest.mark.parametrize("p, expected", [((0.02, 0.9), 0.04), ((0.4, 0.45), 0.45), ((0.3, 0.3), 0.3)])
    def test_fgpk_m_simes(self, p, expected):
        assert fgpk_m_simes_test(*p, level=0.05).p_value == pytest.approx(expected)

    def test_simes_never_exceeds_bonferroni(self, rng):
        for p in rng.random((500, 3)):
            assert fgpk_simes_test(p, 0.05).p_value <= fgpk_test(p, 0.05).p_value + 1e-15
            assert fgpk_m_simes_test(*p[:2], level=0.05).p_value <= fgpk_m_test(*p[:2], level=0.05).p_value + 1e-15

    def test_monotone_in_components(self, rng):
        for p in rng.random((200, 3)):
            bumped = p.copy()
            bumped[int(rng.integers(3))] += 0.1 * (1 - bumped.max())
            for combine in (fgpk_test, fgpk_simes_test):
                assert combine(bumped, 0.05).p_value >= combine(p, 0.05).p_value

    def test_mapping_input(self):
        report = fgpk_test({"p_W_1.2": 0.9, "p_W_0.8": 0.01, "p_D": 0.5}, 0.05)
        assert report.p_value == pytest.approx(0.03)

    def test_bad_component(self):
        with pytest.raises(ParameterError):
            fgpk_test((0.1, 1.2, 0.3), 0.05)

    def test_bad_level(self):
        with pytest.raises(ParameterError):
            fgpk_m_test(0.1, 0.2, level=1.0)

    def test_reject_is_strict(self):
        assert not fgpk_m_simes_test(0.05, 0.05, level=0.05).reject

    def test_report_rejects_out_of_range_p(self):
        with pytest.raises(ParameterError):
            TestReport(method="fgpk", p_value=1.5, reject=False, level=0.05)


class TestRunMethods:
    def test_all_builtin_methods(self, gaussian_kernel):
        kernel, layout = gaussian_kernel
        names = ["gpk_perm", "mmd_perm", "fgpk", "fgpk_m", "fgpk_simes", "fgpk_m_simes"]
        reports = run_methods(kernel, layout, names, 0.05, ResamplingPlan(replicates=99, seed=1))
        assert [r.method for r in reports] == names
        for report in reports:
            assert 0.0 <= report.p_value <= 1.0
            assert report.metadata["bandwidth"] == kernel.bandwidth
            assert report.metadata["m"] == layout.m
        fgpk = reports[2]
        assert set(fgpk.component_p) == {"p_W_1.2", "p_W_0.8", "p_D"}
        assert fgpk.statistics["gpk"] == pytest.approx(fgpk.statistics["z_w"] ** 2 + fgpk.statistics["z_d"] ** 2)

    def test_round_trip(self, gaussian_kernel):
        report = run_methods(*gaussian_kernel, ["fgpk"])[0]
        data = report.to_dict()
        assert TestReport.from_dict(data).to_dict() == data

    def test_unknown_method(self, gaussian_kernel):
        with pytest.raises(ParameterError):
            run_methods(*gaussian_kernel, ["mmd_pearson"])

    def test_degenerate_fast_test(self):
        with pytest.raises(DegeneracyError) as info:
            run_methods(constant_kernel(8), SampleLayout.contiguous(4, 4), ["fgpk"])
        assert info.value.case == "C1"

    def test_register_competitor(self, gaussian_kernel):
        @register_method("constant_half")
        def _half(ctx):
            return TestReport(method="constant_half", p_value=0.5, reject=False, level=ctx.level)

        try:
            reports = run_methods(*gaussian_kernel, ["constant_half"])
            assert reports[0].p_value == 0.5
            with pytest.raises(ParameterError):
                register_method("constant_half")(_half)
        finally:
            METHODS.pop("constant_half", None)

    def test_weighted_grid_registered(self):
        assert WEIGHTED_PERM_METHODS == (
            "z_w_0.7_perm", "z_w_0.8_perm", "z_w_0.9_perm", "z_w_1_perm", "z_w_1.1_perm", "z_w_1.2_perm", "z_w_1.3_perm",
        )
        assert all(name in METHODS for name in WEIGHTED_PERM_METHODS)
        assert "z_d_perm" in METHODS

    def test_weighted_permutation_matches_direct_call(self, gaussian_kernel):
        kernel, layout = gaussian_kernel
        plan = ResamplingPlan(replicates=99, seed=4)
        report = run_methods(kernel, layout, ["z_w_1.2_perm"], 0.05, plan)[0]
        direct = permutation_pvalue(kernel, layout, "z_w_r", plan, 0.05, r=1.2)
        assert report.method == "z_w_1.2_perm"
        assert report.p_value == direct.p_value
        assert report.metadata["seed"] == 4
        assert report.metadata["replicates"] == 99

    def test_difference_permutation_method(self, small_instance):
        kernel, layout = small_instance
        report = run_methods(kernel, layout, ["z_d_perm"], 0.05, EXHAUSTIVE)[0]
        assert report.method == "z_d_perm"
        assert report.metadata["replicates"] == 56
        assert report.metadata["seed"] is None
        assert 0.0 < report.p_value <= 1.0
