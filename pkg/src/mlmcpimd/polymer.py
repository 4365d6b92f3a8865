"""Extended ring-polymer configuration space for two-state systems.

Conventions
-----------
Bead positions ``q`` and momenta ``p`` have shape ``(N, d)`` (or ``(..., N, d)``
for the vectorised helpers).  Bond ``k`` joins bead ``k`` to bead ``k + 1``
(cyclic) and carries the pair of surface indices ``(ell[k], ell[k + 1])``.
A bond is a *kink* when the two indices differ.

Two routes compute the kink-level integrands ``A_k`` and ``B_k``:

* :func:`sub_integrand_A` / :func:`sub_integrand_B` stream over every surface
  sequence with ``2k`` kinks (``2 * C(N, 2k)`` of them) and add up the
  individual weights.  This is the literal definition and the reference path.
* :func:`level_sums` obtains the same numbers for every level at once from a
  product of 2x2 bond matrices whose off-diagonal entries carry a formal kink
  counter.  Cost is ``O(N * kmax)`` per configuration instead of
  ``O(N * C(N, 2k))``; the samplers use this path.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import _kernels as _k
from .model import ModelDomainError, Observable, PotentialModel

_LOG2 = math.log(2.0)


# --- surface index sequences -------------------------------------------------

def kink_count(bits: Sequence[int]) -> int:
    """Number of cyclic neighbours with different surface index."""
    b = np.asarray(bits, dtype=np.int8)
    if b.ndim != 1 or b.size < 2:
        raise ValueError("a surface index sequence needs at least two beads")
    return int(np.count_nonzero(b != np.roll(b, -1)))


@dataclass(frozen=True)
class SurfaceIndexSequence:
    bits: tuple
    kinks: int = field(init=False, compare=False)

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if any(b not in (0, 1) for b in bits):
            raise ValueError("surface indices must be 0 or 1")
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "kinks", kink_count(bits))

    @classmethod
    def zeros(cls, n: int) -> "SurfaceIndexSequence":
        return cls((0,) * n)

    @classmethod
    def ones(cls, n: int) -> "SurfaceIndexSequence":
        return cls((1,) * n)

    def __len__(self):
        return len(self.bits)

    def __iter__(self):
        return iter(self.bits)

    def __getitem__(self, i):
        return self.bits[i]

    def as_array(self) -> np.ndarray:
        return np.array(self.bits, dtype=np.int8)

    def complement(self) -> "SurfaceIndexSequence":
        return SurfaceIndexSequence(tuple(1 - b for b in self.bits))

    def flip(self, j: int) -> "SurfaceIndexSequence":
        b = list(self.bits)
        b[j] = 1 - b[j]
        return SurfaceIndexSequence(tuple(b))

    def rotate(self, shift: int = 1) -> "SurfaceIndexSequence":
        """Same rotation convention as ``np.roll(..., -shift)``."""
        s = shift % len(self.bits)
        return SurfaceIndexSequence(self.bits[s:] + self.bits[:s])

    def kink_bonds(self) -> tuple:
        b = self.bits
        n = len(b)
        return tuple(i for i in range(n) if b[i] != b[(i + 1) % n])


def _sequence_from_kinks(first: int, kinks: Sequence[int], n: int) -> tuple:
    out = [0] * n
    cur = first
    flips = set(kinks)
    for i in range(n):
        out[i] = cur
        if i in flips:
            cur = 1 - cur
    return tuple(out)


def enumerate_kink_sequences(n: int, k: int) -> Iterator[SurfaceIndexSequence]:
    """Lazily yield every length-``n`` sequence with exactly ``2k`` kinks.

    Order: first bit 0 before first bit 1; within each, kink-bond positions in
    lexicographic order of ``itertools.combinations(range(n), 2k)``.
    """
    if n < 2 or k < 0 or 2 * k > n:
        raise ValueError(f"need 0 <= 2k <= N with N >= 2 (got N={n}, k={k})")
    for first in (0, 1):
        for kinks in itertools.combinations(range(n), 2 * k):
            yield SurfaceIndexSequence(_sequence_from_kinks(first, kinks, n))


def level_size(n: int, k: int) -> int:
    return 2 * math.comb(n, 2 * k)


# --- states and bond factors -------------------------------------------------

@dataclass
class RingPolymerState:
    q: np.ndarray
    p: np.ndarray
    ell: SurfaceIndexSequence
    beta_n: float

    def __post_init__(self):
        self.q = np.atleast_2d(np.asarray(self.q, dtype=float))
        self.p = np.atleast_2d(np.asarray(self.p, dtype=float))
        if self.q.shape != self.p.shape:
            raise ValueError("q and p must have the same (N, d) shape")
        if len(self.ell) != self.q.shape[0]:
            raise ValueError("surface sequence length must equal the bead number")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.p))):
            raise ValueError("state contains non-finite entries")
        if not self.beta_n > 0:
            raise ValueError("beta_n must be positive")

    @property
    def n_beads(self) -> int:
        return self.q.shape[0]

    def rotate(self, shift: int = 1) -> "RingPolymerState":
        return RingPolymerState(np.roll(self.q, -shift, axis=0), np.roll(self.p, -shift, axis=0),
                                self.ell.rotate(shift), self.beta_n)


def log_cosh(x):
    x = np.abs(x)
    small = np.log1p(2.0 * np.sinh(0.5 * np.minimum(x, 1.0)) ** 2)
    return np.where(x < 1.0, small, x + np.log1p(np.exp(-2.0 * x)) - _LOG2)


def log_sinh(x):
    """log(sinh(x)) for x > 0 without losing digits at small x."""
    return x + np.log(-np.expm1(-2.0 * x)) - _LOG2


@dataclass
class BondFactors:
    """Per-bead potential data at fixed positions, shaped ``(..., N)``."""

    v00: np.ndarray
    v11: np.ndarray
    mean_v: np.ndarray
    v01: np.ndarray
    log_cosh: np.ndarray
    log_sinh: np.ndarray
    tanh_v: np.ndarray
    beta_n: float

    @property
    def diag_v(self) -> np.ndarray:
        return np.stack([self.v00, self.v11], axis=-1)

    @property
    def log_tanh(self) -> np.ndarray:
        return np.log(self.tanh_v)


def bond_factors(q, model: PotentialModel, beta_n: float) -> BondFactors:
    q = np.asarray(q, dtype=float)
    return factors_from_values(model.v00(q), model.v11(q), model.v01(q), beta_n)


def factors_from_values(v00, v11, v01, beta_n: float) -> BondFactors:
    if not (np.all(np.isfinite(v00)) and np.all(np.isfinite(v11)) and np.all(np.isfinite(v01))):
        raise ModelDomainError("potential returned a non-finite value")
    if not np.all(v01 > 0):
        raise ModelDomainError("off-diagonal coupling must be strictly positive")
    x = beta_n * v01
    return BondFactors(v00=v00, v11=v11, mean_v=0.5 * (v00 + v11), v01=v01,
                       log_cosh=log_cosh(x), log_sinh=log_sinh(x), tanh_v=np.tanh(x),
                       beta_n=beta_n)


def bond_potential(f: BondFactors, a, b):
    """V(q_k, a, b): diagonal entry on a plain bond, the diagonal mean on a kink."""
    a = np.asarray(a)
    b = np.asarray(b)
    diag = np.where(a == 0, f.v00, f.v11)
    return np.where(a == b, diag, f.mean_v)


def bond_actions(f: BondFactors) -> np.ndarray:
    """``beta_n * V(q_k, a, b) - log F(q_k, a, b)`` for all four ``(a, b)``.

    Shape ``(..., N, 2, 2)``.  Kinetic and spring terms are omitted; they are
    identical for every surface sequence.
    """
    bn = f.beta_n
    u = np.empty(f.v00.shape + (2, 2))
    u[..., 0, 0] = bn * f.v00 - f.log_cosh
    u[..., 1, 1] = bn * f.v11 - f.log_cosh
    u[..., 0, 1] = bn * f.mean_v - f.log_sinh
    u[..., 1, 0] = u[..., 0, 1]
    return u


def _ell_pairs(ell):
    a = np.asarray(ell, dtype=np.intp)
    return a, np.roll(a, -1, axis=-1)


# --- Hamiltonian and estimator ----------------------------------------------

def kinetic_spring(q, p, mass: float, beta_n: float):
    """Per-bond kinetic + spring energy, shape ``(..., N)``."""
    q = np.asarray(q, dtype=float)
    dq = q - np.roll(q, -1, axis=-2)
    return (np.sum(np.asarray(p) ** 2, axis=-1) / (2.0 * mass)
            + mass * np.sum(dq**2, axis=-1) / (2.0 * beta_n**2))


def bond_element(state: RingPolymerState, k: int, ell_k: int, ell_k1: int,
                 model: PotentialModel) -> float:
    """Matrix element <ell_k|G_k|ell_k1> for bond ``k`` (0-based, cyclic)."""
    n = state.n_beads
    if not 0 <= k < n:
        raise IndexError("bond index out of range")
    f = bond_factors(state.q[k], model, state.beta_n)
    qk, qn = state.q[k], state.q[(k + 1) % n]
    ks = (np.sum(state.p[k] ** 2) / (2.0 * model.mass)
          + model.mass * np.sum((qk - qn) ** 2) / (2.0 * state.beta_n**2))
    if ell_k == ell_k1:
        pot = f.v00 if ell_k == 0 else f.v11
        return float(ks + pot - f.log_cosh / state.beta_n)
    return float(ks + f.mean_v - f.log_sinh / state.beta_n)


def extended_hamiltonian(state: RingPolymerState, model: PotentialModel) -> float:
    f = bond_factors(state.q, model, state.beta_n)
    u = bond_actions(f)
    a, b = _ell_pairs(state.ell.bits)
    idx = np.arange(state.n_beads)
    h = np.sum(kinetic_spring(state.q, state.p, model.mass, state.beta_n)) + np.sum(u[idx, a, b]) / state.beta_n
    if not np.isfinite(h):
        raise ModelDomainError("extended Hamiltonian is not finite")
    return float(h)


def log_weight_ratio(ell, f: BondFactors):
    """log of exp(-beta_n H(ell)) / exp(-beta_n H(ell_0)) (momentum-free)."""
    a, b = _ell_pairs(ell)
    bn = f.beta_n
    dv = bond_potential(f, a, b) - f.v00
    kink = a != b
    return -bn * np.sum(dv, axis=-1) + np.sum(np.where(kink, np.log(f.tanh_v), 0.0), axis=-1)


def weight_ratio(q, ell, factors: BondFactors):
    """exp(-beta_n H(q, p, ell)) / exp(-beta_n H(q, p, ell_0)); independent of ``p``."""
    bits = ell.bits if isinstance(ell, SurfaceIndexSequence) else ell
    return np.exp(log_weight_ratio(bits, factors))


def offdiag_amplification(ell, f: BondFactors):
    """exp(beta_n (<l_k|G_k|l_k+1> - <lbar_k|G_k|l_k+1>)) per bead.

    Formed from the potential and log-trig parts only; the kinetic and spring
    terms are identical in both elements and never enter.
    """
    a, b = _ell_pairs(ell)
    bn = f.beta_n
    log_t = np.log(f.tanh_v)
    v_aa = np.where(a == 0, f.v00, f.v11)
    v_bb = np.where(b == 0, f.v00, f.v11)
    plain = bn * (v_aa - f.mean_v) + log_t
    kink = bn * (f.mean_v - v_bb) - log_t
    return np.exp(np.where(a == b, plain, kink))


def w_estimator_from_factors(ell, f: BondFactors, a00, a11, a01):
    a, _ = _ell_pairs(ell)
    diag = np.where(a == 0, a00, a11)
    return np.mean(diag - offdiag_amplification(ell, f) * a01, axis=-1)


def w_estimator(state: RingPolymerState, model: PotentialModel, obs: Observable) -> float:
    """Estimator function W_N[A] at an extended state (sign factor fixed to +1)."""
    f = bond_factors(state.q, model, state.beta_n)
    return float(w_estimator_from_factors(state.ell.bits, f, obs.a00(state.q),
                                          obs.a11(state.q), obs.a01(state.q)))


# --- kink-level integrands: enumeration route -------------------------------

def _check_level(n, k):
    if k < 0 or 2 * k > n:
        raise ValueError(f"kink level k={k} out of range for N={n}")


def sub_integrand_B(q, k: int, model: PotentialModel, beta_n: float) -> float:
    """Sum of weight ratios over all sequences with ``2k`` kinks."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    n = q.shape[0]
    _check_level(n, k)
    f = bond_factors(q, model, beta_n)
    total = 0.0
    for ell in enumerate_kink_sequences(n, k):
        total += float(np.exp(log_weight_ratio(ell.bits, f)))
    return total


def sub_integrand_A(q, p, k: int, model: PotentialModel, obs: Observable, beta_n: float) -> float:
    """Sum of ``W_N[A] * weight_ratio`` over all sequences with ``2k`` kinks.

    ``p`` is accepted for interface symmetry; the result does not depend on it.
    """
    q = np.atleast_2d(np.asarray(q, dtype=float))
    n = q.shape[0]
    _check_level(n, k)
    f = bond_factors(q, model, beta_n)
    a00, a11, a01 = obs.a00(q), obs.a11(q), obs.a01(q)
    total = 0.0
    for ell in enumerate_kink_sequences(n, k):
        w = w_estimator_from_factors(ell.bits, f, a00, a11, a01)
        total += float(w * np.exp(log_weight_ratio(ell.bits, f)))
    return total


# --- kink-level integrands: transfer-product route --------------------------

def _shift(x):
    out = np.zeros_like(x)
    out[1:] = x[:-1]
    return out


def level_sums(q, model: PotentialModel, beta_n: float, kmax: int,
               obs: Observable | None = None):
    """``B_k`` (and ``A_k`` when ``obs`` is given) for ``k = 0..kmax`` at once.

    ``q`` has shape ``(..., N, d)``.  Returns ``(A, B)`` with shape
    ``(..., kmax + 1)``; ``A`` is ``None`` without an observable.

    Each bond contributes the 2x2 matrix ``[[1, z r], [z r, s]]`` with
    ``s = exp(-beta_n (V11 - V00))`` and ``r = tanh(beta_n V01) exp(-beta_n
    (V11 - V00) / 2)``; the coefficient of ``z^(2k)`` in the trace of the cyclic
    product is ``B_k``.  ``A_k`` follows from the same product with one bond
    replaced by its observable-weighted counterpart, summed over the position
    of that bond (carried as the upper-right block of a 4x4 block product).
    Polynomials are stored in ``w = z^2``; odd entries carry one implicit ``z``.
    """
    q = np.asarray(q, dtype=float)
    n = q.shape[-2]
    if kmax < 0 or 2 * kmax > n:
        raise ValueError(f"kmax={kmax} out of range for N={n}")
    f = bond_factors(q, model, beta_n)
    batch = f.v00.shape[:-1]
    dv = f.v11 - f.v00
    s = np.exp(-beta_n * dv).reshape(-1, n).T          # (N, S)
    r = (f.tanh_v * np.exp(-0.5 * beta_n * dv)).reshape(-1, n).T
    m = s.shape[1]
    deg = kmax + 1

    e00 = np.zeros((deg, m))
    e11 = np.zeros((deg, m))
    o01 = np.zeros((deg, m))
    o10 = np.zeros((deg, m))
    e00[0] = 1.0
    e11[0] = 1.0

    want_a = obs is not None
    if want_a:
        a00 = np.broadcast_to(obs.a00(q), f.v00.shape).reshape(-1, n).T
        a11 = np.broadcast_to(obs.a11(q), f.v00.shape).reshape(-1, n).T
        a01 = np.broadcast_to(obs.a01(q), f.v00.shape).reshape(-1, n).T
        y00 = np.zeros((deg, m))
        y11 = np.zeros((deg, m))
        y01 = np.zeros((deg, m))
        y10 = np.zeros((deg, m))

    for j in range(n):
        rj, sj = r[j], s[j]
        if want_a:
            d00 = a00[j] - a01[j] * rj
            d11 = a11[j] * sj - a01[j] * rj
            d01 = a00[j] * rj - a01[j] * sj
            d10 = a11[j] * rj - a01[j]
            # Y <- Y T + X D, using the old X
            ny00 = y00 + rj * _shift(y01) + e00 * d00 + _shift(o01) * d10
            ny01 = rj * y00 + sj * y01 + e00 * d01 + o01 * d11
            ny10 = y10 + rj * y11 + o10 * d00 + e11 * d10
            ny11 = rj * _shift(y10) + sj * y11 + _shift(o10) * d01 + e11 * d11
            y00, y01, y10, y11 = ny00, ny01, ny10, ny11
        ne00 = e00 + rj * _shift(o01)
        no01 = rj * e00 + sj * o01
        no10 = o10 + rj * e11
        ne11 = rj * _shift(o10) + sj * e11
        e00, o01, o10, e11 = ne00, no01, no10, ne11

    b = (e00 + e11).T.reshape(batch + (deg,))
    if not want_a:
        return None, b
    a = ((y00 + y11) / n).T.reshape(batch + (deg,))
    return a, b


def level_sums_from_values(v, beta_n: float, kmax: int, a=None):
    """Compiled counterpart of :func:`level_sums` working on stored values.

    ``v`` holds ``(V00, V11, V01)`` as ``(S, 3, N)``; ``a`` optionally holds
    ``(A00, A11, A01)`` with the same shape.  Returns ``(A, B)`` shaped
    ``(S, kmax + 1)``; ``A`` is ``None`` without ``a``.
    """
    v = np.ascontiguousarray(v, dtype=float)
    if v.ndim != 3 or v.shape[1] != 3:
        raise ValueError("values must have shape (S, 3, N)")
    n = v.shape[2]
    if kmax < 0 or 2 * kmax > n:
        raise ValueError(f"kmax={kmax} out of range for N={n}")
    if not np.all(v[:, 2] > 0):
        raise ModelDomainError("off-diagonal coupling must be strictly positive")
    ns = v.shape[0]
    out_b = np.empty((ns, kmax + 1))
    if a is None:
        _k.level_sums_from_values(v, v, beta_n, kmax, False, out_b, out_b)
        return None, out_b
    a = np.ascontiguousarray(np.broadcast_to(a, v.shape), dtype=float)
    out_a = np.empty((ns, kmax + 1))
    _k.level_sums_from_values(v, a, beta_n, kmax, True, out_a, out_b)
    return out_a, out_b


def observable_values(q, obs: Observable) -> np.ndarray:
    """Stack ``(A00, A11, A01)`` of ``q`` (``(..., N, d)``) into ``(..., 3, N)``."""
    shape = np.shape(q)[:-1]
    a = np.stack([np.broadcast_to(obs.a00(q), shape), np.broadcast_to(obs.a11(q), shape),
                  np.broadcast_to(obs.a01(q), shape)], axis=-2)
    if not np.all(np.isfinite(a)):
        raise ModelDomainError("observable returned a non-finite value")
    return a
