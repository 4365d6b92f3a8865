"""
Equal versus variance-weighted allocation
=========================================

Both estimators combine the same kink-level sub-estimators; they differ only
in how many samples each level gets.  This script runs a handful of
replicates of each at a small budget and compares their spread around the
transfer-matrix value.  About half a minute on one core.  Six replicates at
this budget are too few to order the two methods reliably; the acceptance
suite uses twenty at a budget six times larger.
"""

import numpy as np

from mlmcpimd import LangevinConfig, allocation_plan, benchmark_case
from mlmcpimd.estimators import equal_allocation, mse_estimate, run_replicates
from mlmcpimd.oracle import transfer_truncated_average

N, K0, TOTAL, REPS = 16, 5, 200_000, 6
test = benchmark_case()
cfg = LangevinConfig(n_burn=20_000)

print("MLMC counts", allocation_plan(N, K0, TOTAL).counts)
print("RM counts  ", equal_allocation(N, K0, TOTAL).counts)

target = transfer_truncated_average(test, N, K0)
print(f"target I_{2 * K0} = {target:.8f}")

for i, method in enumerate(("MLMC", "RM")):
    reps = run_replicates(method, test, N, K0, TOTAL, cfg, master_seed=7, replicates=REPS,
                          first_replicate=i * REPS)
    est = np.array([r.estimate for r in reps])
    secs = np.mean([r.wall_clock for r in reps])
    print(f"{method:<5} mean {est.mean():.5f}  MSE {mse_estimate(est, target):.2e}  "
          f"{secs:.1f} s per estimate")

# one report in full, to see what each level contributed
print()
print(reps[0].to_text())
