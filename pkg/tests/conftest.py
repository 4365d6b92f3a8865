"""Shared fixtures.

Frozen numbers marked [DERIVED] were produced once by an independent oracle
in this package (grid diagonalisation, tensor quadrature or the transfer
matrix) and are pinned here so regressions in either side show up.
"""

import numpy as np
import pytest

from mlmcpimd.model import benchmark_case
from mlmcpimd.oracle import TransferGrid, transfer_level_integrals

# [DERIVED] Fourier-grid diagonalisation, 512 points on [-8, 8], beta = 1
SPECTRAL_VALUE = 0.9877409964394849
# [DERIVED] tensor quadrature, N = 3, 81 points on [-4, 4]
QUAD_N3 = {0: 1.2664482854, 1: 0.9923718690609793}
# [DERIVED] transfer matrix, N = 16, 201 points on [-5, 5]; I_2k0 for k0 = 0..5
TRANSFER_N16 = [1.40228115, 1.01218997, 0.98828741, 0.98786110, 0.98785846, 0.98785845]


@pytest.fixture(scope="session")
def bench():
    return benchmark_case()


@pytest.fixture(scope="session")
def transfer16(bench):
    """Per-level integrals ``(num, den, z0)`` at N = 16 (a few seconds, computed once)."""
    return transfer_level_integrals(bench, 16, TransferGrid())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
