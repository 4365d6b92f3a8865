"""Langevin samplers for the ring polymer.

Two samplers are provided:

* BAOAB Langevin dynamics on the all-zeros surface sequence, whose invariant
  law is the reference measure used by the kink-level estimators.
* PIMD-SH: the same Langevin dynamics on the live surface sequence plus a
  surface-hopping jump process over single-bead flips and the global flip.

Single-step functions (:func:`baoab_step`, :func:`pimdsh_step`) are plain
numpy and serve as the readable reference.  The trajectory drivers
(:func:`reference_blocks`, :func:`pimdsh_blocks`) run one trajectory in
chunks, through the compiled loops in ``_kernels`` when the model provides a
field kernel and through the same numpy updates otherwise.  Each trajectory
owns its random streams, so results never depend on the chunk size or on
which other trajectories run alongside it.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional

import numpy as np

from . import _kernels as _k
from .model import ModelDomainError, PotentialModel
from .polymer import (RingPolymerState, SurfaceIndexSequence, bond_actions, bond_factors,
                      observable_values)


class ConfigError(ValueError):
    """Invalid run configuration."""


class TrajectoryError(RuntimeError):
    """A trajectory left the finite domain (integration blow-up)."""


@dataclass(frozen=True)
class LangevinConfig:
    gamma: float = 1.0
    dt: float = 0.005
    n_burn: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.gamma < 0:
            raise ConfigError("gamma must be nonnegative")
        if self.n_burn < 0:
            raise ConfigError("n_burn must be nonnegative")


HOP_SCHEMES = ("linear", "capped")


@dataclass(frozen=True)
class HopConfig:
    """Surface-hopping settings.

    ``scheme="linear"`` hops to neighbour ``l'`` with probability
    ``eta * p * dt`` and aborts when those sum above one.  ``"capped"`` scales
    that probability by ``min(1, 1/(eta dt S(ell)), 1/(eta dt S(ell')))`` with
    ``S`` the total rate.  The factor is symmetric, so detailed balance holds
    exactly, and it equals one whenever the linear scheme would be valid.
    """

    eta: float = 1.0
    base: LangevinConfig = field(default_factory=LangevinConfig)
    scheme: str = "linear"

    def __post_init__(self):
        if self.eta < 0:
            raise ConfigError("eta must be nonnegative")
        if self.scheme not in HOP_SCHEMES:
            raise ConfigError(f"hop scheme must be one of {HOP_SCHEMES}")


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_initial(n_beads: int, dim: int, mass: float, beta_n: float, rng, batch: tuple = ()):
    """Independent N(0, M / beta_n) draws for every position and momentum entry."""
    rng = as_generator(rng)
    sd = math.sqrt(mass / beta_n)
    q = sd * rng.standard_normal(batch + (n_beads, dim))
    p = sd * rng.standard_normal(batch + (n_beads, dim))
    return q, p


# --- forces -------------------------------------------------------------------

def spring_force(q, mass: float, beta_n: float):
    return -(mass / beta_n**2) * (2.0 * q - np.roll(q, 1, axis=-2) - np.roll(q, -1, axis=-2))


def reference_force(q, model: PotentialModel, beta_n: float):
    """-grad_q H_N(q, p, ell_0)."""
    q = np.asarray(q, dtype=float)
    t = np.tanh(beta_n * model.v01(q))[..., None]
    f = spring_force(q, model.mass, beta_n) - model.dv00(q) + t * model.dv01(q)
    if not np.all(np.isfinite(f)):
        raise TrajectoryError("non-finite reference force")
    return f


def extended_force(q, ell, model: PotentialModel, beta_n: float):
    """-grad_q H_N(q, p, ell) for a live surface sequence ``ell`` (shape ``(..., N)``)."""
    q = np.asarray(q, dtype=float)
    a = np.asarray(ell, dtype=np.intp)
    b = np.roll(a, -1, axis=-1)
    x = beta_n * model.v01(q)
    if not np.all(x > 0):
        raise ModelDomainError("off-diagonal coupling must be strictly positive")
    d00, d11, d01 = model.dv00(q), model.dv11(q), model.dv01(q)
    plain = (a == b)[..., None]
    diag = np.where((a == 0)[..., None], d00, d11)
    coef = np.where(a == b, np.tanh(x), 1.0 / np.tanh(x))[..., None]
    dpot = np.where(plain, diag, 0.5 * (d00 + d11)) - coef * d01
    f = spring_force(q, model.mass, beta_n) - dpot
    if not np.all(np.isfinite(f)):
        raise TrajectoryError("non-finite force on live surface sequence")
    return f


def _o_coefficients(cfg: LangevinConfig, mass: float, beta_n: float):
    c1 = math.exp(-cfg.gamma * cfg.dt)
    c2 = math.sqrt((1.0 - c1 * c1) * mass / beta_n)
    return c1, c2


def baoab_step(q, p, cfg: LangevinConfig, model: PotentialModel, beta_n: float, rng,
               force: Optional[Callable] = None):
    """One BAOAB step; the O part is the exact Ornstein-Uhlenbeck update."""
    rng = as_generator(rng)
    force = force or (lambda x: reference_force(x, model, beta_n))
    m = model.mass
    h = 0.5 * cfg.dt
    c1, c2 = _o_coefficients(cfg, m, beta_n)
    p = p + h * force(q)
    q = q + (h / m) * p
    p = c1 * p + c2 * rng.standard_normal(np.shape(p))
    q = q + (h / m) * p
    p = p + h * force(q)
    return q, p


# --- surface hopping ----------------------------------------------------------

def _neighbor_log_rates(u, ell):
    """log p_{ell', ell} for the N single flips and the global flip.

    ``u`` holds bond actions ``(..., N, 2, 2)``; ``ell`` is ``(..., N)``.  With
    ``S(ell)`` the summed bond action, ``beta_n H(ell) - beta_n H(ell')`` equals
    ``S(ell) - S(ell')`` because kinetic and spring terms do not depend on ``ell``.
    """
    a = ell
    fa = 1 - a
    prev = np.roll(a, 1, axis=-1)
    nxt = np.roll(a, -1, axis=-1)
    flat = u.reshape(u.shape[:-2] + (4,))
    flat_prev = np.roll(flat, 1, axis=-2)     # bond j-1 aligned with bead j

    def pick(table, x, y):
        return np.take_along_axis(table, (2 * x + y)[..., None], axis=-1)[..., 0]

    old = pick(flat_prev, prev, a) + pick(flat, a, nxt)
    new = pick(flat_prev, prev, fa) + pick(flat, fa, nxt)
    single = 0.5 * (old - new)
    glob = 0.5 * (np.sum(pick(flat, a, nxt), axis=-1) - np.sum(pick(flat, fa, 1 - nxt), axis=-1))
    return np.concatenate([single, glob[..., None]], axis=-1)


def hop_rates(state: RingPolymerState, model: PotentialModel) -> np.ndarray:
    """Rates p_{ell', ell} for ``ell'`` in the neighbour set.

    Entries ``0..N-1`` flip bead ``j``; entry ``N`` flips every bead.  The
    diagonal generator entry is ``-rates.sum()``.
    """
    if state.n_beads < 2:
        raise ConfigError("surface hopping needs at least two beads")
    f = bond_factors(state.q, model, state.beta_n)
    u = bond_actions(f)
    return np.exp(_neighbor_log_rates(u, state.ell.as_array().astype(np.intp)))


def neighbor(ell: SurfaceIndexSequence, j: int) -> SurfaceIndexSequence:
    return ell.complement() if j == len(ell) else ell.flip(j)


def _hop_draw(ell, rates, eta, dt, uniform, scheme="linear", rates_after=None):
    """Apply at most one hop per trajectory; vectorised over the batch axis.

    ``rates_after(r, ell_row)`` returns the neighbour rates of a proposed
    sequence; the capped scheme needs it to form the acceptance ratio.
    """
    probs = eta * dt * rates
    total = probs.sum(axis=-1)
    cap = np.ones_like(total)
    if scheme == "capped":
        over = total > 1.0
        cap[over] = 1.0 / total[over]
    elif np.any(total > 1.0):
        raise ConfigError(
            f"hop probability per step {float(total.max()):.3g} exceeds 1; reduce dt or eta, "
            "or use the capped hop scheme")
    probs = probs * cap[..., None]
    hop = uniform < total * cap
    n = ell.shape[-1]
    for r in np.nonzero(hop)[0]:
        cum = np.cumsum(probs[r])
        c = int(np.argmax(cum > uniform[r]))
        old = ell[r].copy()
        if c == n:
            ell[r] = 1 - ell[r]
        else:
            ell[r, c] = 1 - ell[r, c]
        if scheme == "capped":
            cap2 = min(1.0, 1.0 / (eta * dt * float(np.sum(rates_after(r, ell[r])))))
            start = cum[c] - probs[r, c]
            if cap2 < cap[r] and uniform[r] - start >= probs[r, c] / cap[r] * cap2:
                ell[r] = old
                hop[r] = False
    return hop


def pimdsh_step(state: RingPolymerState, cfg: HopConfig, model: PotentialModel, rng) -> RingPolymerState:
    """BAOAB on the live sequence followed by one Bernoulli hop attempt."""
    rng = as_generator(rng)
    ell = state.ell.as_array().astype(np.intp)
    q, p = baoab_step(state.q, state.p, cfg.base, model, state.beta_n, rng,
                      force=lambda x: extended_force(x, ell, model, state.beta_n))
    new = RingPolymerState(q, p, state.ell, state.beta_n)
    if cfg.eta > 0:
        u = bond_actions(bond_factors(q, model, state.beta_n))
        rates = np.exp(_neighbor_log_rates(u, ell))
        ell_b = ell[None].copy()
        _hop_draw(ell_b, rates[None], cfg.eta, cfg.base.dt, np.array([rng.random()]), cfg.scheme,
                  lambda r, row: np.exp(_neighbor_log_rates(u, row)))
        new = RingPolymerState(q, p, SurfaceIndexSequence(tuple(ell_b[0])), state.beta_n)
    return new


# --- trajectory drivers -------------------------------------------------------

def trajectory_streams(seed):
    """Independent ``(noise, hop)`` generators for one trajectory.

    Keeping the hop uniforms on their own stream makes every trajectory
    independent of the chunk size used to pre-draw random numbers.
    """
    if isinstance(seed, np.random.Generator):
        return seed, seed.spawn(1)[0]
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    kids = [np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + (c,),
                                   pool_size=ss.pool_size) for c in (0, 1)]
    return np.random.default_rng(kids[0]), np.random.default_rng(kids[1])


def _use_kernel(model: PotentialModel, compiled: Optional[bool]) -> bool:
    has = model.kernel is not None
    if has and model.kernel not in _k.FIELD_KERNELS:
        raise ConfigError(f"unknown field kernel {model.kernel!r}")
    if compiled is None:
        return has
    if compiled and not has:
        raise ConfigError(f"model {model.name!r} has no compiled kernel")
    return bool(compiled)


def _raise_status(status: int, where: str):
    if status == _k.NONFINITE:
        raise TrajectoryError(f"trajectory blow-up in {where}")
    if status == _k.BAD_COUPLING:
        raise ModelDomainError(f"off-diagonal coupling must be strictly positive ({where})")
    if status == _k.HOP_OVERFLOW:
        raise ConfigError("hop probability per step exceeds 1; reduce dt or eta, or use the capped hop scheme")


def potential_values(q, model: PotentialModel) -> np.ndarray:
    """Stack ``(V00, V11, V01)`` of ``q`` (``(..., N, d)``) into ``(..., 3, N)``."""
    v = np.stack([model.v00(q), model.v11(q), model.v01(q)], axis=-2)
    if not np.all(np.isfinite(v)):
        raise ModelDomainError("potential returned a non-finite value")
    if not np.all(v[..., 2, :] > 0):
        raise ModelDomainError("off-diagonal coupling must be strictly positive")
    return v


def _check_finite(q, p, where):
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
        raise TrajectoryError(f"trajectory blow-up in {where}")


@dataclass
class SampleBlock:
    """Recorded states of one chunk: positions ``(S, N, d)``, potentials ``(S, 3, N)``."""

    q: np.ndarray
    v: np.ndarray
    ell: Optional[np.ndarray] = None


def _chunks(total: int, chunk: int):
    while total > 0:
        s = min(chunk, total)
        yield s
        total -= s


def reference_blocks(model: PotentialModel, n_beads: int, beta: float, cfg: LangevinConfig,
                     seed, n_samples: int, chunk: int = 4096,
                     compiled: Optional[bool] = None) -> Iterator[SampleBlock]:
    """Run one reference trajectory and yield its recorded states chunk by chunk.

    ``cfg.n_burn`` unrecorded steps come first, then ``n_samples`` recorded
    ones (the state after every step).  Initial positions and momenta and all
    thermostat noise come from ``seed``.
    """
    if n_beads < 1 or n_samples < 0 or chunk < 1:
        raise ConfigError("need n_beads >= 1, n_samples >= 0 and chunk >= 1")
    rng, _ = trajectory_streams(seed)
    bn = beta / n_beads
    m, d = model.mass, model.dim
    q, p = sample_initial(n_beads, d, m, bn, rng)
    c1, c2 = _o_coefficients(cfg, m, bn)
    fast = _use_kernel(model, compiled)
    no_q = np.empty((0, n_beads, d))
    no_v = np.empty((0, 3, n_beads))
    if fast:
        prm = np.asarray(model.kernel_params, dtype=float)
        kid = _k.FIELD_KERNELS[model.kernel]
        f = np.empty_like(q)
        _raise_status(_k.reference_init(q, prm, kid, f, m, bn), "reference dynamics")
    else:
        f = reference_force(q, model, bn)
    h = 0.5 * cfg.dt
    hm = h / m

    def advance(steps, record):
        nonlocal f
        xi = rng.standard_normal((steps, n_beads, d))
        rq = np.empty((steps, n_beads, d)) if record else no_q
        if fast:
            rv = np.empty((steps, 3, n_beads)) if record else no_v
            _raise_status(_k.reference_chunk(q, p, f, xi, prm, kid, c1, c2, cfg.dt,
                                             m, bn, rq, rv), "reference dynamics")
            return SampleBlock(rq, rv) if record else None
        for i in range(steps):
            p[...] += h * f
            q[...] += hm * p
            p[...] = c1 * p + c2 * xi[i]
            q[...] += hm * p
            f = reference_force(q, model, bn)
            p[...] += h * f
            if record:
                rq[i] = q
        _check_finite(q, p, "reference dynamics")
        return SampleBlock(rq, potential_values(rq, model)) if record else None

    for s in _chunks(cfg.n_burn, chunk):
        advance(s, False)
    for s in _chunks(n_samples, chunk):
        yield advance(s, True)


def w_from_block(block: SampleBlock, obs, beta_n: float) -> np.ndarray:
    """``W_N[A]`` for every recorded step of a PIMD-SH block."""
    a = observable_values(block.q, obs)
    out = np.empty(block.v.shape[0])
    _k.w_values(np.ascontiguousarray(block.v), a, np.ascontiguousarray(block.ell), beta_n, out)
    return out


@dataclass
class PimdshResult:
    """Running statistics of ``W_N[A]`` along one PIMD-SH trajectory."""

    n_samples: int
    total: float
    sq_total: float
    block_sums: np.ndarray
    block_counts: np.ndarray
    kink_histogram: np.ndarray
    wall_clock: float

    @property
    def mean(self) -> float:
        return self.total / self.n_samples

    @property
    def variance(self) -> float:
        """Sample variance of the recorded summands."""
        n = self.n_samples
        if n < 2:
            return float("nan")
        return max(self.sq_total - self.total**2 / n, 0.0) / (n - 1)


def pimdsh_blocks(model: PotentialModel, n_beads: int, beta: float, cfg: HopConfig, seed,
                  n_samples: Optional[int] = None, chunk: int = 4096,
                  compiled: Optional[bool] = None) -> Iterator[SampleBlock]:
    """Run one PIMD-SH trajectory from ``ell_0`` and yield recorded chunks.

    With ``n_samples=None`` the generator runs until the consumer stops it.
    Blocks carry the live surface sequence ``ell`` (``(S, N)``) per step.
    """
    if n_beads < 2:
        raise ConfigError("surface hopping needs at least two beads")
    noise, hops = trajectory_streams(seed)
    lc = cfg.base
    bn = beta / n_beads
    m, d = model.mass, model.dim
    q, p = sample_initial(n_beads, d, m, bn, noise)
    ell = np.zeros(n_beads, dtype=np.int64)
    c1, c2 = _o_coefficients(lc, m, bn)
    fast = _use_kernel(model, compiled)
    no_q = np.empty((0, n_beads, d))
    no_v = np.empty((0, 3, n_beads))
    no_l = np.empty((0, n_beads), dtype=np.int64)
    if fast:
        prm = np.asarray(model.kernel_params, dtype=float)
        kid = _k.FIELD_KERNELS[model.kernel]
        f = np.empty_like(q)
        _raise_status(_k.pimdsh_init(q, ell, prm, kid, f, m, bn), "PIMD-SH")
    else:
        f = extended_force(q, ell, model, bn)
    h = 0.5 * lc.dt
    hm = h / m

    def advance(steps, record):
        nonlocal f
        xi = noise.standard_normal((steps, n_beads, d))
        uni = hops.random(steps)
        rq = np.empty((steps, n_beads, d)) if record else no_q
        rl = np.empty((steps, n_beads), dtype=np.int64) if record else no_l
        if fast:
            rv = np.empty((steps, 3, n_beads)) if record else no_v
            _raise_status(_k.pimdsh_chunk(q, p, ell, f, xi, uni, prm, kid, c1, c2,
                                          lc.dt, m, bn, cfg.eta, cfg.scheme == "capped",
                                          rq, rv, rl), "PIMD-SH")
            return SampleBlock(rq, rv, rl) if record else None
        for i in range(steps):
            p[...] += h * f
            q[...] += hm * p
            p[...] = c1 * p + c2 * xi[i]
            q[...] += hm * p
            f = extended_force(q, ell, model, bn)
            p[...] += h * f
            if cfg.eta > 0:
                u = bond_actions(bond_factors(q, model, bn))
                rates = np.exp(_neighbor_log_rates(u, ell))
                eb = ell[None]
                after = lambda r, row: np.exp(_neighbor_log_rates(u, row))
                if _hop_draw(eb, rates[None], cfg.eta, lc.dt, uni[i:i + 1], cfg.scheme, after)[0]:
                    f = extended_force(q, ell, model, bn)
            if record:
                rq[i] = q
                rl[i] = ell
        _check_finite(q, p, "PIMD-SH")
        return SampleBlock(rq, potential_values(rq, model), rl) if record else None

    for s in _chunks(lc.n_burn, chunk):
        advance(s, False)
    if n_samples is None:
        while True:
            yield advance(chunk, True)
    for s in _chunks(n_samples, chunk):
        yield advance(s, True)


def run_pimdsh(model: PotentialModel, obs, n_beads: int, beta: float, cfg: HopConfig, seed,
               n_samples: Optional[int] = None, time_budget: Optional[float] = None,
               chunk: int = 4096, compiled: Optional[bool] = None,
               trace: Optional[Callable] = None) -> PimdshResult:
    """Time average of ``W_N[A]`` along one PIMD-SH trajectory, sampled every step.

    With ``time_budget`` (seconds, counted from the start including burn-in)
    sampling proceeds in whole chunks until the budget is spent; ``n_samples``
    then acts as an optional cap.  ``trace(w, block)`` sees every chunk.
    """
    if n_samples is None and time_budget is None:
        raise ConfigError("give n_samples or time_budget")
    t0 = time.perf_counter()
    bn = beta / n_beads
    total = sq = 0.0
    bsums, bcounts = [], []
    hist = np.zeros(n_beads + 1, dtype=np.int64)
    recorded = 0
    for block in pimdsh_blocks(model, n_beads, beta, cfg, seed, n_samples, chunk, compiled):
        w = w_from_block(block, obs, bn)
        total += float(w.sum())
        sq += float(np.dot(w, w))
        bsums.append(float(w.sum()))
        bcounts.append(w.size)
        kinks = np.count_nonzero(block.ell != np.roll(block.ell, -1, axis=-1), axis=-1)
        hist += np.bincount(kinks, minlength=n_beads + 1)
        recorded += w.size
        if trace is not None:
            trace(w, block)
        if time_budget is not None and time.perf_counter() - t0 >= time_budget:
            break
    return PimdshResult(n_samples=recorded, total=total, sq_total=sq, block_sums=np.array(bsums),
                        block_counts=np.array(bcounts),
                        kink_histogram=hist, wall_clock=time.perf_counter() - t0)
