"""Kink-level sub-estimators and their assembly into truncated thermal averages.

The truncated average is a ratio of level sums,

    I_2k0 = sum_k E[A_k] / sum_k E[B_k],   k = 0..k0,

with expectations under the reference measure.  Every ``(level, channel)``
expectation is the time average along its own reference trajectory.  RM-PIMD
gives every level the same number of samples; MLMC-PIMD uses counts
proportional to ``C(N, 2k)^(-1/2) / (2k)!``.

Seeds: a trajectory is keyed by ``(replicate, level, channel)`` and draws from
``SeedSequence(master_seed, spawn_key=key)``, so any single number in a report
can be regenerated without rerunning the rest.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dynamics import (ConfigError, HopConfig, LangevinConfig, TrajectoryError, reference_blocks,
                       run_pimdsh)
from .model import TestCase
from .polymer import level_size, level_sums_from_values, observable_values

CHANNELS = ("A", "B")
_CHANNEL_INDEX = {"A": 0, "B": 1, "SH": 2}
METHODS = ("RM", "MLMC", "PIMD-SH")


# --- allocation ---------------------------------------------------------------

def level_weights(n_beads: int, k0: int) -> list:
    """``i_k = C(N, 2k)^(-1/2) / (2k)!`` for ``k = 0..k0`` (binomials are exact integers)."""
    return [1.0 / (math.sqrt(math.comb(n_beads, 2 * k)) * math.factorial(2 * k))
            for k in range(k0 + 1)]


@dataclass(frozen=True)
class AllocationPlan:
    n_beads: int
    k0: int
    n_total: int
    weights: tuple
    counts: tuple

    def cost(self) -> int:
        """Integrand work ``sum_k 2 N_k C(N, 2k)`` in sequence evaluations."""
        return plan_cost(self.n_beads, self.counts)


def plan_cost(n_beads: int, counts: Sequence[int]) -> int:
    return sum(c * level_size(n_beads, k) for k, c in enumerate(counts))


def _check_levels(n_beads: int, k0: int, n_total: int):
    if n_beads < 2:
        raise ConfigError("need at least two beads")
    if not 0 <= k0 <= n_beads // 2:
        raise ConfigError(f"k0 must lie in [0, {n_beads // 2}] for N={n_beads}")
    if n_total < k0 + 1:
        raise ConfigError(f"n_total={n_total} cannot give each of {k0 + 1} levels a sample")


def allocation_plan(n_beads: int, k0: int, n_total: int) -> AllocationPlan:
    """Variance-optimal per-level sample counts.

    Counts are ``floor(n_total * i_k / sum(i))`` with the remainder added to
    level 0.  A level that would get zero samples is raised to one, taken
    from level 0.
    """
    _check_levels(n_beads, k0, n_total)
    w = level_weights(n_beads, k0)
    total_w = math.fsum(w)
    counts = [int(math.floor(n_total * wk / total_w)) for wk in w]
    counts[0] += n_total - sum(counts)
    for k in range(1, k0 + 1):
        if counts[k] == 0:
            counts[k] = 1
            counts[0] -= 1
    if counts[0] < 1:
        raise ConfigError(f"n_total={n_total} too small for k0={k0}")
    return AllocationPlan(n_beads, k0, n_total, tuple(w), tuple(counts))


def equal_allocation(n_beads: int, k0: int, n_total: int) -> AllocationPlan:
    """RM-PIMD counts: ``floor(n_total / (k0 + 1))`` at every level."""
    _check_levels(n_beads, k0, n_total)
    per = n_total // (k0 + 1)
    return AllocationPlan(n_beads, k0, per * (k0 + 1), tuple([1.0] * (k0 + 1)),
                          tuple([per] * (k0 + 1)))


# --- seeds --------------------------------------------------------------------

def trajectory_seed(master_seed: int, replicate: int, level: int, channel: str) -> np.random.SeedSequence:
    return np.random.SeedSequence(master_seed,
                                  spawn_key=(replicate, level, _CHANNEL_INDEX[channel]))


# --- sub-estimators -----------------------------------------------------------

def batch_means_variance(chunk_sums: np.ndarray, chunk_counts: np.ndarray, n_batches: int = 20):
    """Long-run summand variance from about ``n_batches`` contiguous batches.

    ``chunk_sums`` is ``(C, L)`` (per-chunk sums for ``L`` series) and
    ``chunk_counts`` is ``(C,)``.  Returns ``(L,)``; NaN with fewer than two batches.
    """
    chunk_sums = np.atleast_2d(chunk_sums)
    c = len(chunk_counts)
    if c < 2:
        return np.full(chunk_sums.shape[1], np.nan)
    edges = np.linspace(0, c, min(n_batches, c) + 1).round().astype(int)
    sums = np.add.reduceat(chunk_sums, edges[:-1], axis=0)
    cnt = np.add.reduceat(chunk_counts, edges[:-1])
    means = sums / cnt[:, None]
    grand = sums.sum(axis=0) / cnt.sum()
    # weighted batch-means estimator; exact for equal batch sizes
    return np.sum(cnt[:, None] * (means - grand) ** 2, axis=0) / (len(cnt) - 1)


@dataclass
class ChannelRun:
    """Per-level statistics of one channel along one reference trajectory."""

    channel: str
    kmax: int
    count: int
    sums: np.ndarray
    sq_sums: np.ndarray
    chunk_sums: np.ndarray
    chunk_counts: np.ndarray
    checkpoints: dict
    wall_clock: float

    @property
    def means(self) -> np.ndarray:
        return self.sums / self.count

    @property
    def variances(self) -> np.ndarray:
        """Sample variance of the summands, per level."""
        if self.count < 2:
            return np.full(self.kmax + 1, np.nan)
        return np.maximum(self.sq_sums - self.sums**2 / self.count, 0.0) / (self.count - 1)

    @property
    def batch_variances(self) -> np.ndarray:
        return batch_means_variance(self.chunk_sums, self.chunk_counts)


def run_channel(test: TestCase, n_beads: int, cfg: LangevinConfig, seed, n_samples: int,
                kmax: int, channel: str, chunk: int = 4096, checkpoints: Sequence[int] = (),
                compiled: Optional[bool] = None, trace=None) -> ChannelRun:
    """Time averages of ``A_k`` or ``B_k`` for all ``k <= kmax`` along one trajectory.

    ``checkpoints`` lists prefix lengths at which per-level running sums are
    also kept (``ChannelRun.checkpoints[n]``).  ``trace(values)`` receives each
    chunk's ``(S, kmax + 1)`` integrand values.
    """
    if channel not in CHANNELS:
        raise ConfigError(f"channel must be one of {CHANNELS}")
    if n_samples < 1:
        raise ConfigError("a sub-estimator needs at least one sample")
    if not 0 <= kmax <= n_beads // 2:
        raise ConfigError(f"level {kmax} out of range for N={n_beads}")
    t0 = time.perf_counter()
    bn = test.beta / n_beads
    deg = kmax + 1
    sums = np.zeros(deg)
    sq = np.zeros(deg)
    csums, ccounts = [], []
    # short runs still get about 20 chunks for the batch-means variance;
    # trajectories do not depend on the chunk size
    chunk = min(chunk, max(16, -(-n_samples // 20)))
    marks = sorted(set(int(c) for c in checkpoints if 0 < c <= n_samples))
    snaps = {}
    done = 0
    blocks = reference_blocks(test.model, n_beads, test.beta, cfg, seed, n_samples, chunk, compiled)
    for block in blocks:
        if channel == "A":
            vals, _ = level_sums_from_values(block.v, bn, kmax, observable_values(block.q, test.observable))
        else:
            _, vals = level_sums_from_values(block.v, bn, kmax)
        if not np.all(np.isfinite(vals)):
            raise TrajectoryError("non-finite kink-level integrand")
        s = vals.shape[0]
        for m in marks:
            if done < m <= done + s:
                snaps[m] = sums + vals[:m - done].sum(axis=0)
        bsum = vals.sum(axis=0)
        sums += bsum
        sq += np.einsum("ij,ij->j", vals, vals)
        csums.append(bsum)
        ccounts.append(s)
        done += s
        if trace is not None:
            trace(vals)
    return ChannelRun(channel=channel, kmax=kmax, count=done, sums=sums, sq_sums=sq,
                      chunk_sums=np.array(csums), chunk_counts=np.array(ccounts),
                      checkpoints=snaps, wall_clock=time.perf_counter() - t0)


@dataclass(frozen=True)
class SubEstimate:
    level: int
    channel: str
    count: int
    mean: float
    variance: float
    batch_variance: float


def run_sub_estimator(level: int, count: int, channel: str, test: TestCase, n_beads: int,
                      cfg: LangevinConfig, seed, compiled: Optional[bool] = None) -> SubEstimate:
    """Time average of ``A_level`` (channel ``"A"``) or ``B_level`` (``"B"``)."""
    try:
        run = run_channel(test, n_beads, cfg, seed, count, level, channel, compiled=compiled)
    except TrajectoryError as exc:
        raise TrajectoryError(f"level {level}, channel {channel}: {exc}") from exc
    return SubEstimate(level, channel, run.count, float(run.means[level]),
                       float(run.variances[level]), float(run.batch_variances[level]))


# --- reports ------------------------------------------------------------------

@dataclass(frozen=True)
class LevelResult:
    k: int
    count: int
    mean_A: float
    mean_B: float
    var_A: float
    var_B: float
    bvar_A: float
    bvar_B: float


@dataclass
class EstimateReport:
    """One estimate of the truncated thermal average and how it was obtained."""

    method: str
    estimate: float
    n_beads: int
    k0: int
    n_total: int
    per_level: list
    master_seed: int
    replicate: int
    wall_clock: float
    cost: int
    config: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def seeds(self) -> dict:
        """Spawn keys of every trajectory, keyed by ``(level, channel)``."""
        if self.method == "PIMD-SH":
            return {(0, "SH"): (self.replicate, 0, _CHANNEL_INDEX["SH"])}
        return {(lv.k, ch): (self.replicate, lv.k, _CHANNEL_INDEX[ch])
                for lv in self.per_level for ch in CHANNELS}

    def to_row(self) -> dict:
        row = {"method": self.method, "estimate": self.estimate, "N": self.n_beads,
               "k0": self.k0, "n_total": self.n_total, "master_seed": self.master_seed,
               "replicate": self.replicate, "wall_clock": self.wall_clock, "cost": self.cost}
        for lv in self.per_level:
            for key, val in asdict(lv).items():
                if key != "k":
                    row[f"{key}_{lv.k}"] = val
        row.update(self.extra)
        return row

    def to_text(self) -> str:
        lines = [f"method      {self.method}",
                 f"estimate    {self.estimate:.10g}",
                 f"N={self.n_beads}  k0={self.k0}  n_total={self.n_total}  cost={self.cost}",
                 f"seed        master={self.master_seed} replicate={self.replicate}",
                 f"wall clock  {self.wall_clock:.3f} s"]
        if self.per_level:
            lines.append(f"{'k':>3} {'N_k':>9} {'mean_A':>14} {'mean_B':>14} {'var_A':>11} {'var_B':>11}")
            for lv in self.per_level:
                lines.append(f"{lv.k:>3} {lv.count:>9} {lv.mean_A:>14.8g} {lv.mean_B:>14.8g} "
                             f"{lv.var_A:>11.4g} {lv.var_B:>11.4g}")
        for key, val in self.extra.items():
            lines.append(f"{key:<11} {val}")
        return "\n".join(lines)


def _config_snapshot(test: TestCase, cfg: LangevinConfig) -> dict:
    return {"model": test.model.name, "observable": test.observable.name, "beta": test.beta,
            "mass": test.model.mass, "gamma": cfg.gamma, "dt": cfg.dt, "n_burn": cfg.n_burn}


def estimate_with_counts(method: str, test: TestCase, n_beads: int, counts: Sequence[int],
                         cfg: LangevinConfig, master_seed: int, replicate: int = 0,
                         compiled: Optional[bool] = None) -> EstimateReport:
    """Assemble ``sum_k A_k / sum_k B_k`` from independent level/channel trajectories."""
    t0 = time.perf_counter()
    k0 = len(counts) - 1
    levels = []
    for k, nk in enumerate(counts):
        sub = {ch: run_sub_estimator(k, nk, ch, test, n_beads, cfg,
                                     trajectory_seed(master_seed, replicate, k, ch), compiled)
               for ch in CHANNELS}
        levels.append(LevelResult(k, nk, sub["A"].mean, sub["B"].mean, sub["A"].variance,
                                  sub["B"].variance, sub["A"].batch_variance, sub["B"].batch_variance))
    den = math.fsum(lv.mean_B for lv in levels)
    if not den > 0:
        raise ConfigError("sum of B-channel means is not positive")
    est = math.fsum(lv.mean_A for lv in levels) / den
    return EstimateReport(method=method, estimate=est, n_beads=n_beads, k0=k0,
                          n_total=int(sum(counts)), per_level=levels, master_seed=master_seed,
                          replicate=replicate, wall_clock=time.perf_counter() - t0,
                          cost=plan_cost(n_beads, counts), config=_config_snapshot(test, cfg))


def rm_pimd(test: TestCase, n_beads: int, k0: int, n_total: int, cfg: LangevinConfig,
            master_seed: int, replicate: int = 0, compiled: Optional[bool] = None) -> EstimateReport:
    """Equal allocation: ``floor(n_total / (k0 + 1))`` samples per level and channel."""
    plan = equal_allocation(n_beads, k0, n_total)
    return estimate_with_counts("RM", test, n_beads, plan.counts, cfg, master_seed, replicate, compiled)


def mlmc_pimd(test: TestCase, n_beads: int, k0: int, n_total: int, cfg: LangevinConfig,
              master_seed: int, replicate: int = 0, compiled: Optional[bool] = None) -> EstimateReport:
    """Variance-optimal allocation from :func:`allocation_plan`."""
    plan = allocation_plan(n_beads, k0, n_total)
    return estimate_with_counts("MLMC", test, n_beads, plan.counts, cfg, master_seed, replicate, compiled)


def pimdsh_estimate(test: TestCase, n_beads: int, hop: HopConfig, master_seed: int,
                    n_samples: Optional[int] = None, time_budget: Optional[float] = None,
                    replicate: int = 0, compiled: Optional[bool] = None) -> EstimateReport:
    """Running mean of ``W_N[A]`` along one PIMD-SH trajectory."""
    seed = trajectory_seed(master_seed, replicate, 0, "SH")
    res = run_pimdsh(test.model, test.observable, n_beads, test.beta, hop, seed,
                     n_samples=n_samples, time_budget=time_budget, compiled=compiled)
    bvar = float(batch_means_variance(res.block_sums[:, None], res.block_counts)[0])
    cfg = _config_snapshot(test, hop.base)
    cfg.update({"eta": hop.eta, "hop_scheme": hop.scheme})
    return EstimateReport(method="PIMD-SH", estimate=res.mean, n_beads=n_beads, k0=n_beads // 2,
                          n_total=res.n_samples, per_level=[], master_seed=master_seed,
                          replicate=replicate, wall_clock=res.wall_clock, cost=0, config=cfg,
                          extra={"variance": res.variance, "batch_variance": bvar,
                                 "kink_histogram": " ".join(map(str, res.kink_histogram.tolist()))})


# --- replicates and error -----------------------------------------------------

def mse_estimate(outcomes: Sequence[float], reference: float) -> float:
    """Mean squared deviation of replicate outcomes from ``reference``."""
    x = np.asarray(list(outcomes), dtype=float)
    if x.size == 0:
        raise ValueError("mse_estimate needs at least one outcome")
    return float(np.mean((x - reference) ** 2))


def _one(args):
    method, test, n_beads, k0, n_total, cfg, seed, rep, compiled = args
    fn = rm_pimd if method == "RM" else mlmc_pimd
    return fn(test, n_beads, k0, n_total, cfg, seed, rep, compiled)


def run_replicates(method: str, test: TestCase, n_beads: int, k0: int, n_total: int,
                   cfg: LangevinConfig, master_seed: int, replicates: int, workers: int = 1,
                   first_replicate: int = 0, compiled: Optional[bool] = None) -> list:
    """Independent replicates ordered by replicate index, whatever the worker count.

    With ``workers > 1`` the test case is pickled into a process pool, so its
    callables must be module-level functions (the built-in benchmark is).
    """
    if method not in ("RM", "MLMC"):
        raise ConfigError(f"method must be RM or MLMC, got {method!r}")
    jobs = [(method, test, n_beads, k0, n_total, cfg, master_seed, first_replicate + r, compiled)
            for r in range(replicates)]
    if workers <= 1:
        return [_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_one, jobs))
