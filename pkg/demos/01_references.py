"""
Ground truth for the benchmark
==============================

Three deterministic routes to the thermal average of the built-in 1D
two-state model.  The grid solve gives the exact quantum value; quadrature
and the transfer matrix give the ring-polymer value at finite bead number,
level by level, which is what the samplers actually estimate.
"""

import time

import numpy as np

from mlmcpimd import benchmark_case
from mlmcpimd.oracle import (SpectralGrid, TransferGrid, quadrature_truncated_average,
                             reference_with_convergence, transfer_level_integrals)

test = benchmark_case()

# exact value on a Fourier grid, checked against a finer, wider grid
t0 = time.perf_counter()
value, delta = reference_with_convergence(test, SpectralGrid(512, 8.0))
print(f"grid value        {value:.10f}  (refinement moves it by {delta:.1e}, "
      f"{time.perf_counter() - t0:.1f} s)")

# three beads are few enough to integrate on a tensor grid
for k0 in (0, 1):
    print(f"N=3  I_{2 * k0:<2d}        {quadrature_truncated_average(test, 3, k0):.10f}")

# the transfer matrix handles N=16 and returns every kink level at once
num, den, _ = transfer_level_integrals(test, 16, TransferGrid())
ladder = np.cumsum(num) / np.cumsum(den)
for k0, v in enumerate(ladder[:6]):
    print(f"N=16 I_{2 * k0:<2d}       {v:.10f}   gap to untruncated {v - ladder[-1]:+.2e}")

# the last line is the ring-polymer value; its distance to the grid value is
# the bead discretisation error, not sampling noise
print(f"N=16 minus grid   {ladder[-1] - value:+.2e}")
