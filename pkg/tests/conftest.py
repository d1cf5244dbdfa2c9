"""Shared fixtures: seeded generators, random kernels and small datasets."""

import numpy as np
import pytest

from kergpk.kernel import build_kernel
from kergpk.models import KernelMatrix, ObservationSet, SampleLayout

SEED = 12345


@pytest.fixture
def rng():
    return np.random.default_rng(SEED)


def random_kernel(rng, size: int) -> KernelMatrix:
    """Symmetric kernel with unit diagonal and generic off-diagonal values"""
    values = rng.random((size, size))
    values = (values + values.T) / 2.0
    np.fill_diagonal(values, 1.0)
    return KernelMatrix(values, "precomputed")


@pytest.fixture
def kernel_factory(rng):
    return lambda size: random_kernel(rng, size)


@pytest.fixture
def gaussian_samples(rng):
    x = ObservationSet(rng.standard_normal((30, 5)))
    y = ObservationSet(rng.standard_normal((25, 5)) + 0.3)
    return x, y


@pytest.fixture
def gaussian_kernel(gaussian_samples):
    return build_kernel(*gaussian_samples)


@pytest.fixture
def small_instance(rng):
    """Random kernel with N = 8 split 3 / 5, small enough to enumerate"""
    return random_kernel(rng, 8), SampleLayout.contiguous(3, 5)
