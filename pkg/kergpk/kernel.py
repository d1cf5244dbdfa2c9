"""
kergpk - Distance and kernel matrices
Euclidean distances of the pooled sample, the median-heuristic bandwidth and
the Gaussian kernel, plus validation of user-supplied kernel matrices.
"""

import logging
from typing import Tuple, Union

import numpy as np
from scipy.spatial.distance import pdist, squareform

from kergpk.exceptions import (
    DataValidationError,
    DegenerateDataError,
    ParameterError,
    SizeError,
)
from kergpk.models import KernelMatrix, ObservationSet, SampleLayout

logger = logging.getLogger(__name__)

BANDWIDTH_RULES = ("median", "median_literal")
SYMMETRY_TOLERANCE = 1e-9


# ========================
# DISTANCES
# ========================

def pairwise_distances(pool: ObservationSet) -> np.ndarray:
    """Symmetric N x N matrix of Euclidean distances between rows"""
    values = pool.values if isinstance(pool, ObservationSet) else ObservationSet(pool).values
    if not np.all(np.isfinite(values)):
        raise DataValidationError("observations contain NaN or Inf")

    squared = squareform(pdist(values, metric="sqeuclidean"))
    distances = np.sqrt(np.maximum(squared, 0.0))
    np.fill_diagonal(distances, 0.0)
    return distances


def _upper_triangle(distances: np.ndarray) -> np.ndarray:
    distances = np.asarray(distances, dtype=float)
    if distances.ndim != 2 or distances.shape[0] != distances.shape[1]:
        raise DataValidationError(f"distance matrix must be square, got shape {distances.shape}")
    if distances.shape[0] < 2:
        raise SizeError("the median heuristic needs at least two observations")
    rows, cols = np.triu_indices(distances.shape[0], k=1)
    return distances[rows, cols]


def median_heuristic_bandwidth(distances: np.ndarray, literal: bool = False) -> float:
    """
    sigma = sqrt(median(d_ij^2) / 2) over pairs i < j, so that the Gaussian
    kernel equals exp(-d^2 / median(d^2)). With literal=True the plain
    median distance is returned instead.
    """
    upper = _upper_triangle(distances)
    if not np.any(upper > 0):
        raise DegenerateDataError(
            "all pairwise distances are zero; the kernel matrix would be constant (corner case C1)"
        )

    if literal:
        sigma = float(np.median(upper))
    else:
        sigma = float(np.sqrt(np.median(upper ** 2) / 2.0))

    if sigma <= 0:
        # more than half the pairs coincide
        raise DegenerateDataError("median pairwise distance is zero; choose a fixed bandwidth")
    logger.debug("median heuristic bandwidth %.6g (literal=%s)", sigma, literal)
    return sigma


# ========================
# KERNELS
# ========================

def _symmetrized(matrix: np.ndarray, what: str, tolerance: float) -> np.ndarray:
    """Average out asymmetry up to tolerance; anything larger is rejected"""
    asymmetry = float(np.max(np.abs(matrix - matrix.T))) if matrix.size else 0.0
    if asymmetry > tolerance:
        raise DataValidationError(
            f"{what} is not symmetric: max |a_ij - a_ji| = {asymmetry:.3g} exceeds {tolerance:g}"
        )
    if asymmetry > 0:
        matrix = (matrix + matrix.T) / 2.0
    return matrix


def gaussian_kernel_matrix(
    distances: np.ndarray,
    bandwidth: float,
    exponent_scale: float = 2.0,
    bandwidth_rule: str = "fixed",
) -> KernelMatrix:
    """k_ij = exp(-d_ij^2 / (exponent_scale * sigma^2))"""
    if not np.isfinite(bandwidth) or bandwidth <= 0:
        raise ParameterError(f"bandwidth must be a positive number, got {bandwidth}")
    if not np.isfinite(exponent_scale) or exponent_scale <= 0:
        raise ParameterError(f"exponent_scale must be positive, got {exponent_scale}")

    distances = np.asarray(distances, dtype=float)
    if distances.ndim != 2 or distances.shape[0] != distances.shape[1]:
        raise DataValidationError(f"distance matrix must be square, got shape {distances.shape}")
    if not np.all(np.isfinite(distances)):
        raise DataValidationError("distance matrix contains NaN or Inf")
    scale = max(1.0, float(np.max(np.abs(distances)))) if distances.size else 1.0
    distances = _symmetrized(distances, "distance matrix", SYMMETRY_TOLERANCE * scale)

    entries = np.exp(-(distances ** 2) / (exponent_scale * bandwidth ** 2))
    np.fill_diagonal(entries, 1.0)
    return KernelMatrix(
        entries=entries,
        kernel_kind="gaussian",
        bandwidth=float(bandwidth),
        bandwidth_rule=bandwidth_rule,
        exponent_scale=float(exponent_scale),
    )


def load_precomputed_kernel(matrix, tolerance: float = SYMMETRY_TOLERANCE) -> KernelMatrix:
    """Validate a user kernel matrix; asymmetry below tolerance is averaged out"""
    entries = np.array(matrix, dtype=float, copy=True)
    if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
        raise DataValidationError(f"kernel matrix must be square, got shape {entries.shape}")
    if not np.all(np.isfinite(entries)):
        raise DataValidationError("kernel matrix contains NaN or Inf")

    entries = _symmetrized(entries, "kernel matrix", tolerance)
    return KernelMatrix(entries=entries, kernel_kind="precomputed")


# ========================
# CONVENIENCE
# ========================

def pool_samples(x: ObservationSet, y: ObservationSet) -> Tuple[ObservationSet, SampleLayout]:
    """Stack X above Y and return the matching contiguous layout"""
    if x.dim != y.dim:
        raise DataValidationError(f"samples have different dimensions: {x.dim} vs {y.dim}")
    pool = ObservationSet(np.vstack([x.values, y.values]))
    return pool, SampleLayout.contiguous(x.rows, y.rows)


def build_kernel(
    x: ObservationSet,
    y: ObservationSet,
    bandwidth: Union[str, float] = "median",
    exponent_scale: float = 2.0,
) -> Tuple[KernelMatrix, SampleLayout]:
    """Gaussian kernel of the pooled sample with the requested bandwidth rule"""
    pool, layout = pool_samples(x, y)
    distances = pairwise_distances(pool)

    if isinstance(bandwidth, str):
        rule = bandwidth.replace("-", "_")
        if rule not in BANDWIDTH_RULES:
            raise ParameterError(f"bandwidth must be one of {BANDWIDTH_RULES} or a positive number, got {bandwidth!r}")
        sigma = median_heuristic_bandwidth(distances, literal=(rule == "median_literal"))
    else:
        rule, sigma = "fixed", float(bandwidth)

    logger.info("gaussian kernel: N=%d, bandwidth=%.6g (%s)", layout.size, sigma, rule)
    kernel = gaussian_kernel_matrix(distances, sigma, exponent_scale=exponent_scale, bandwidth_rule=rule)
    return kernel, layout
