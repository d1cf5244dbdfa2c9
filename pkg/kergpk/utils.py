"""
kergpk - Shared helpers
Seed derivation, per-replicate random streams, worker configuration and
logging setup.
"""

import logging
import math
import sys
from typing import Optional

import numba
import numpy as np

from kergpk.config import get_threads

logger = logging.getLogger(__name__)

# Replicate uniforms are generated in fixed blocks; replicate r always comes
# from block r // REPLICATE_BLOCK of the stream keyed by (seed, block).
REPLICATE_BLOCK = 256


# ========================
# SEEDS AND RANDOM STREAMS
# ========================

def derive_seed(seed: int, *keys: int) -> int:
    """64-bit seed that depends only on (seed, *keys)"""
    sequence = np.random.SeedSequence([int(seed), *[int(k) for k in keys]])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def keyed_generator(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]))


def replicate_uniforms(seed: int, start: int, count: int, width: int) -> np.ndarray:
    """
    Uniforms for replicates start .. start + count - 1, one row of `width`
    values per replicate. Row r depends only on (seed, r).
    """
    out = np.empty((count, width), dtype=np.float64)
    r = start
    stop = start + count
    while r < stop:
        block, offset = divmod(r, REPLICATE_BLOCK)
        take = min(REPLICATE_BLOCK - offset, stop - r)
        rng = keyed_generator(seed, block)
        values = rng.random((offset + take, width))
        out[r - start:r - start + take] = values[offset:]
        r += take
    return out


def n_assignments(size: int, m: int) -> int:
    return math.comb(size, m)


# ========================
# WORKERS AND LOGGING
# ========================

def configure_threads(threads: Optional[int] = None) -> int:
    """Apply the worker cap to numba and return the effective count"""
    wanted = threads if threads is not None else get_threads()
    effective = max(1, min(int(wanted), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(effective)
    logger.debug("using %d worker threads", effective)
    return effective


def setup_logging(level: str = "WARNING") -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
