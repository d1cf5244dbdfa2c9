"""
kergpk - Generalized kernel two-sample tests
GPK, fGPK and fGPK_M with exact permutation-null moments, permutation
baselines and a simulation harness.
"""

from kergpk.aggregates import compute_aggregates, enumerate_permutation_null, permutation_moments
from kergpk.exceptions import DegeneracyError, KerGPKError
from kergpk.inference import (
    WEIGHTED_PERM_METHODS,
    fgpk_m_simes_test,
    fgpk_m_test,
    fgpk_simes_test,
    fgpk_test,
    normal_tail_pvalues,
    permutation_pvalue,
    register_method,
    run_methods,
)
from kergpk.kernel import build_kernel, gaussian_kernel_matrix, load_precomputed_kernel, median_heuristic_bandwidth
from kergpk.models import ObservationSet, ResamplingPlan, SampleLayout, ScenarioSpec, TestReport
from kergpk.simgen import estimate_power, estimate_subsample_power, sample_scenario, scenario_table
from kergpk.statistics import check_degeneracy, compute_statistics

__version__ = "1.0.0"
