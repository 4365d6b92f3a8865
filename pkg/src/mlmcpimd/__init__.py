"""Multilevel ring-polymer estimators for two-state quantum thermal averages.

The thermal average of a matrix observable is written as a ratio of sums over
kink levels of the extended ring polymer.  Each level is an expectation under
the Gibbs measure of the all-zeros surface sequence and is sampled by its own
Langevin trajectory.  Sample counts per level follow either an equal split
(``rm_pimd``) or the variance-optimal split (``mlmc_pimd``).  A surface-hopping
sampler (``run_pimdsh``) and two deterministic oracles serve as baselines.
"""

__version__ = "0.1.0"

from .model import (BENCHMARK_PUBLISHED_REFERENCE, ModelDomainError, Observable, PotentialModel,
                    TestCase, benchmark_case, constant_model, harmonic_model, identity_observable)
from .polymer import (RingPolymerState, SurfaceIndexSequence, enumerate_kink_sequences,
                      extended_hamiltonian, kink_count, level_sums, sub_integrand_A,
                      sub_integrand_B, w_estimator, weight_ratio)
from .dynamics import (ConfigError, HopConfig, LangevinConfig, TrajectoryError, baoab_step,
                       hop_rates, pimdsh_step, run_pimdsh)
from .estimators import (AllocationPlan, EstimateReport, allocation_plan, mlmc_pimd,
                         mse_estimate, pimdsh_estimate, rm_pimd, run_replicates,
                         run_sub_estimator)
from .oracle import (QuadratureGrid, SpectralGrid, TransferGrid, pseudospectral_reference,
                     quadrature_reference_expectations, quadrature_truncated_average,
                     reference_with_convergence, transfer_truncated_average)

__all__ = [name for name in dir() if not name.startswith("_")]
