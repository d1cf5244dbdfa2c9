"""
kergpk - Label resampling engine
Draws sample-X index subsets (random or exhaustive) and reduces each subset
to the two sums every statistic needs: S_XX (within-X kernel total) and
r_X (sum of the off-diagonal row sums over X). The kernel stays fixed; only
labels move.
"""

import itertools
import logging
from typing import Tuple

import numpy as np
from numba import njit, prange

from kergpk.exceptions import EnumerationCapError
from kergpk.utils import n_assignments, replicate_uniforms

logger = logging.getLogger(__name__)

CHUNK = 1024


def _subset_sums_impl(k0, row_sums, subsets):
    count, m = subsets.shape
    sxx = np.empty(count)
    rx = np.empty(count)
    for t in prange(count):
        idx = np.sort(subsets[t])
        within = 0.0
        rows = 0.0
        for a in range(m):
            ia = idx[a]
            rows += row_sums[ia]
            for b in range(a + 1, m):
                within += k0[ia, idx[b]]
        sxx[t] = 2.0 * within
        rx[t] = rows
    return sxx, rx


def _fisher_yates_impl(size, uniforms):
    count, m = uniforms.shape
    out = np.empty((count, m), dtype=np.int64)
    for t in prange(count):
        pool = np.arange(size)
        for i in range(m):
            j = i + int(uniforms[t, i] * (size - i))
            if j >= size:
                j = size - 1
            tmp = pool[i]
            pool[i] = pool[j]
            pool[j] = tmp
            out[t, i] = pool[i]
    return out


# Each replicate is reduced sequentially in a fixed order, so both variants
# give bitwise identical results for any thread count.
_subset_sums_parallel = njit(parallel=True)(_subset_sums_impl)
_subset_sums_serial = njit(nogil=True)(_subset_sums_impl)
_fisher_yates_parallel = njit(parallel=True)(_fisher_yates_impl)
_fisher_yates_serial = njit(nogil=True)(_fisher_yates_impl)


# ========================
# PUBLIC HELPERS
# ========================

def subset_sums(k0: np.ndarray, row_sums: np.ndarray, subsets: np.ndarray, parallel: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """(S_XX, r_X) for every row of `subsets` (indices of sample X)"""
    subsets = np.ascontiguousarray(subsets, dtype=np.int64)
    if subsets.ndim == 1:
        subsets = subsets.reshape(1, -1)
    k0 = np.ascontiguousarray(k0, dtype=np.float64)
    row_sums = np.ascontiguousarray(row_sums, dtype=np.float64)
    reducer = _subset_sums_parallel if parallel else _subset_sums_serial
    return reducer(k0, row_sums, subsets)


def random_subsets(size: int, m: int, seed: int, start: int, count: int, parallel: bool = True) -> np.ndarray:
    """Uniform m-subsets of range(size) for replicates start .. start+count-1"""
    uniforms = replicate_uniforms(seed, start, count, m)
    shuffler = _fisher_yates_parallel if parallel else _fisher_yates_serial
    return shuffler(size, uniforms)


def random_subset_sums(
    k0: np.ndarray,
    row_sums: np.ndarray,
    m: int,
    replicates: int,
    seed: int,
    parallel: bool = True,
) -> Tuple[np.ndarray, np.ndarray]:
    """Subset sums for `replicates` random label assignments, in chunks"""
    size = k0.shape[0]
    sxx = np.empty(replicates)
    rx = np.empty(replicates)
    for start in range(0, replicates, CHUNK):
        count = min(CHUNK, replicates - start)
        subsets = random_subsets(size, m, seed, start, count, parallel=parallel)
        sxx[start:start + count], rx[start:start + count] = subset_sums(k0, row_sums, subsets, parallel=parallel)
    return sxx, rx


def all_subsets(size: int, m: int, cap: int) -> np.ndarray:
    """Every m-subset of range(size) in lexicographic order"""
    total = n_assignments(size, m)
    if total > cap:
        raise EnumerationCapError(
            f"exhaustive enumeration needs C({size}, {m}) = {total} assignments, above the cap of {cap}; "
            "use random permutations instead"
        )
    logger.debug("enumerating %d label assignments", total)
    flat = np.fromiter(
        itertools.chain.from_iterable(itertools.combinations(range(size), m)),
        dtype=np.int64,
        count=total * m,
    )
    return flat.reshape(total, m)
