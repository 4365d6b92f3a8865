"""Deterministic ground truth for the samplers.

* :func:`pseudospectral_reference` diagonalises the two-state Hamiltonian on a
  Fourier grid and returns the exact quantum thermal average.
* :func:`quadrature_truncated_average` and
  :func:`quadrature_reference_expectations` integrate the ring-polymer
  expressions over a tensor grid in bead positions, enumerating surface
  sequences explicitly.  Only feasible for a handful of beads.
* :func:`transfer_level_expectations` evaluates the same integrals for any
  bead number by writing the ring as a trace of products of a discretised
  bond kernel.  A formal counter ``z`` on kink bonds separates the kink
  levels; traces at the ``2N``-th roots of unity and one FFT recover every
  level at once.

All routes drop the momentum integrals analytically: they contribute the
same Gaussian factor to every term of every ratio.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .model import ModelDomainError, TestCase
from .polymer import enumerate_kink_sequences, log_cosh, log_sinh


class GridError(RuntimeError):
    """A grid is too small or an oracle failed to converge."""


class BudgetError(RuntimeError):
    """A quadrature request exceeds the configured work budget."""


def _x_column(x):
    return np.asarray(x, dtype=float)[:, None]


def _model_on_grid(test: TestCase, x):
    q = _x_column(x)
    m, o = test.model, test.observable
    v = [np.asarray(m.v00(q), float), np.asarray(m.v11(q), float), np.asarray(m.v01(q), float)]
    a = [np.broadcast_to(o.a00(q), x.shape).astype(float),
         np.broadcast_to(o.a11(q), x.shape).astype(float),
         np.broadcast_to(o.a01(q), x.shape).astype(float)]
    if not all(np.all(np.isfinite(t)) for t in v + a):
        raise ModelDomainError("model or observable is not finite on the grid")
    return v, a


def _require_1d(test: TestCase):
    if test.model.dim != 1:
        raise GridError("grid oracles support one-dimensional models only")


# --- pseudo-spectral reference ------------------------------------------------

@dataclass(frozen=True)
class SpectralGrid:
    """Periodic Fourier grid on ``[-L, L)`` with ``n_points`` nodes."""

    n_points: int = 512
    half_width: float = 8.0

    def __post_init__(self):
        if self.n_points < 4 or self.n_points % 2:
            raise GridError("n_points must be an even integer >= 4")
        if not self.half_width > 0:
            raise GridError("half_width must be positive")

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.n_points

    @property
    def points(self) -> np.ndarray:
        return -self.half_width + self.spacing * np.arange(self.n_points)

    def refined(self) -> "SpectralGrid":
        """Twice the points on a domain half again as wide."""
        return SpectralGrid(2 * self.n_points, 1.5 * self.half_width)


def fourier_kinetic(grid: SpectralGrid, mass: float) -> np.ndarray:
    """Real symmetric matrix of ``p^2 / 2M`` on the periodic grid."""
    n = grid.n_points
    k = 2.0 * np.pi * np.fft.fftfreq(n, d=grid.spacing)
    # first column of the circulant, then all shifts
    col = np.real(np.fft.ifft(k**2 / (2.0 * mass)))
    idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    t = col[idx]
    return 0.5 * (t + t.T)


def check_boundary(test: TestCase, grid: SpectralGrid):
    """Both surfaces at ``+-L`` must sit at least ``20 / beta`` above the grid minimum of V00."""
    x = grid.points
    (v00, v11, _), _ = _model_on_grid(test, x)
    edges = _model_on_grid(test, np.array([-grid.half_width, grid.half_width]))[0]
    wall = min(edges[0].min(), edges[1].min()) - v00.min()
    if wall < 20.0 / test.beta:
        raise GridError(f"domain half-width {grid.half_width} too small: boundary potential is only "
                        f"{wall:.3g} above the minimum (need {20.0 / test.beta:.3g})")


def thermal_average_from_matrices(h: np.ndarray, a_diag, a_off, beta: float) -> float:
    """``Tr[exp(-beta H) A] / Tr[exp(-beta H)]`` for a two-block ``H``.

    ``A`` is diagonal within each block: ``a_diag = (a00, a11)`` on the grid
    and ``a_off`` couples the blocks point by point.
    """
    e, u = np.linalg.eigh(h)
    n = len(a_off)
    u0, u1 = u[:n], u[n:]
    expect = (a_diag[0] @ (u0 * u0) + a_diag[1] @ (u1 * u1) + 2.0 * a_off @ (u0 * u1))
    w = np.exp(-beta * (e - e[0]))
    return float(w @ expect / w.sum())


def pseudospectral_reference(test: TestCase, grid: SpectralGrid = SpectralGrid()) -> float:
    """Exact thermal average of the two-state system on ``grid``."""
    _require_1d(test)
    check_boundary(test, grid)
    x = grid.points
    (v00, v11, v01), (a00, a11, a01) = _model_on_grid(test, x)
    t = fourier_kinetic(grid, test.model.mass)
    n = grid.n_points
    h = np.zeros((2 * n, 2 * n))
    h[:n, :n] = t + np.diag(v00)
    h[n:, n:] = t + np.diag(v11)
    h[:n, n:] = np.diag(v01)
    h[n:, :n] = np.diag(v01)
    try:
        return thermal_average_from_matrices(h, (a00, a11), a01, test.beta)
    except np.linalg.LinAlgError as exc:
        raise GridError(f"diagonalisation failed: {exc}") from exc


def reference_with_convergence(test: TestCase, grid: SpectralGrid = SpectralGrid(),
                               tol: float = 1e-6):
    """Reference value and its change on :meth:`SpectralGrid.refined`.

    Raises :class:`GridError` when the change exceeds ``tol``.
    """
    value = pseudospectral_reference(test, grid)
    delta = abs(pseudospectral_reference(test, grid.refined()) - value)
    if delta > tol:
        raise GridError(f"pseudo-spectral value moved by {delta:.3g} under refinement (tol {tol:g})")
    return value, delta


def scalar_spectral_average(v, a, mass: float, beta: float, grid: SpectralGrid = SpectralGrid()) -> float:
    """Thermal average of ``a(x)`` for a single surface ``v(x)``; callables of a 1D grid."""
    x = grid.points
    h = fourier_kinetic(grid, mass) + np.diag(v(x))
    e, u = np.linalg.eigh(h)
    w = np.exp(-beta * (e - e[0]))
    return float(w @ (a(x) @ (u * u)) / w.sum())


# --- tensor-product quadrature (few beads) -----------------------------------

@dataclass(frozen=True)
class QuadratureGrid:
    """Trapezoidal grid on ``[-L, L]`` per bead; ``budget`` caps grid points times sequences."""

    n_points: int = 81
    half_width: float = 4.0
    max_beads: int = 4
    budget: float = 2e9

    @property
    def points(self) -> np.ndarray:
        return np.linspace(-self.half_width, self.half_width, self.n_points)

    @property
    def weights(self) -> np.ndarray:
        w = np.full(self.n_points, self.points[1] - self.points[0])
        w[[0, -1]] *= 0.5
        return w


def _check_quadrature(test: TestCase, n_beads: int, grid: QuadratureGrid, n_sequences: int):
    _require_1d(test)
    if not 2 <= n_beads <= grid.max_beads:
        raise BudgetError(f"quadrature supports 2 <= N <= {grid.max_beads}, got {n_beads}")
    work = float(grid.n_points) ** n_beads * n_sequences
    if work > grid.budget:
        raise BudgetError(f"quadrature work {work:.3g} exceeds budget {grid.budget:.3g}")


class _RingGrid:
    """Bond actions of every bead on the grid and the spring/weight tensor of the ring."""

    def __init__(self, test: TestCase, n_beads: int, grid: QuadratureGrid):
        self.n = n_beads
        bn = test.beta / n_beads
        self.beta_n = bn
        x = grid.points
        (v00, v11, v01), self.a = _model_on_grid(test, x)
        if not np.all(v01 > 0):
            raise ModelDomainError("off-diagonal coupling must be strictly positive")
        self.v = (v00, v11)
        y = bn * v01
        self.lc, self.ls = log_cosh(y), log_sinh(y)
        # u[a][b]: beta_n V(x, a, b) - log F(x, a, b), per grid node
        mean = 0.5 * (v00 + v11)
        self.u = [[bn * v00 - self.lc, bn * mean - self.ls],
                  [bn * mean - self.ls, bn * v11 - self.lc]]
        shift = float(min(self.u[0][0].min(), self.u[1][1].min()))
        self.u = [[ui - shift for ui in row] for row in self.u]
        m = test.model.mass
        spring = np.exp(-m * (x[:, None] - x[None, :]) ** 2 / (2.0 * bn))
        w = grid.weights
        self.pair = spring * np.sqrt(w)[:, None] * np.sqrt(w)[None, :]
        self.n_points = len(x)

    def w_tensor(self, ell):
        """``W_N[A]`` on the full grid for sequence ``ell``."""
        n = self.n
        a00, a11, a01 = self.a
        bn = self.beta_n
        tot = 0.0
        for k in range(n):
            a, b = ell[k], ell[(k + 1) % n]
            va = self.v[a]
            mean = 0.5 * (self.v[0] + self.v[1])
            lt = self.ls - self.lc
            if a == b:
                expo = bn * (va - mean) + lt
            else:
                expo = bn * (mean - self.v[b]) - lt
            term = (a00 if a == 0 else a11) - np.exp(expo) * a01
            sh = [1] * n
            sh[k] = self.n_points
            tot = tot + term.reshape(sh)
        return np.broadcast_to(tot / n, [self.n_points] * n)


def _ring_weight(rg: _RingGrid, ell):
    """Position-space weight of ``ell`` on the full grid (spring and bond factors)."""
    n = rg.n
    out = np.ones([rg.n_points] * n)
    for k in range(n):
        a, b = ell[k], ell[(k + 1) % n]
        sh = [1] * n
        sh[k] = rg.n_points
        out = out * np.exp(-rg.u[a][b]).reshape(sh)
    # the pair factor is symmetric, so axis order within a bond does not matter;
    # with two beads both bonds join the same pair of axes
    for k in range(n):
        sh = [1] * n
        sh[k] = rg.n_points
        sh[(k + 1) % n] = rg.n_points
        out = out * rg.pair.reshape(sh)
    return out


def _level_integrals(rg: _RingGrid, sequences):
    num = den = 0.0
    for ell in sequences:
        bits = ell.bits if hasattr(ell, "bits") else tuple(ell)
        w = _ring_weight(rg, bits)
        den += float(w.sum())
        num += float((rg.w_tensor(bits) * w).sum())
    return num, den


def quadrature_level_integrals(test: TestCase, n_beads: int, k: int,
                               grid: QuadratureGrid = QuadratureGrid()):
    """Unnormalised ``(sum W e^{-beta_n H}, sum e^{-beta_n H})`` over sequences with ``2k`` kinks."""
    _check_quadrature(test, n_beads, grid, 2 * math.comb(n_beads, 2 * k))
    rg = _RingGrid(test, n_beads, grid)
    return _level_integrals(rg, enumerate_kink_sequences(n_beads, k))


def quadrature_truncated_average(test: TestCase, n_beads: int, k0: int,
                                 grid: QuadratureGrid = QuadratureGrid()) -> float:
    """``I_2k0`` by tensor quadrature, summing sequence levels ``k <= k0``."""
    if not 0 <= k0 <= n_beads // 2:
        raise ValueError(f"k0={k0} out of range for N={n_beads}")
    n_seq = sum(2 * math.comb(n_beads, 2 * k) for k in range(k0 + 1))
    _check_quadrature(test, n_beads, grid, n_seq)
    rg = _RingGrid(test, n_beads, grid)
    num = den = 0.0
    for k in range(k0 + 1):
        a, b = _level_integrals(rg, enumerate_kink_sequences(n_beads, k))
        num += a
        den += b
    return num / den


def quadrature_full_average(test: TestCase, n_beads: int,
                            grid: QuadratureGrid = QuadratureGrid()) -> float:
    """Untruncated ``I`` by quadrature over all ``2^N`` sequences in product order."""
    _check_quadrature(test, n_beads, grid, 2**n_beads)
    rg = _RingGrid(test, n_beads, grid)
    num, den = _level_integrals(rg, itertools.product((0, 1), repeat=n_beads))
    return num / den


def quadrature_reference_expectations(test: TestCase, n_beads: int, k: int,
                                      grid: QuadratureGrid = QuadratureGrid()):
    """``(E[A_k], E[B_k])`` under the all-zeros reference measure, by quadrature."""
    _check_quadrature(test, n_beads, grid, 2 * math.comb(n_beads, 2 * k) + 1)
    rg = _RingGrid(test, n_beads, grid)
    _, z0 = _level_integrals(rg, [(0,) * n_beads])
    num, den = _level_integrals(rg, enumerate_kink_sequences(n_beads, k))
    return num / z0, den / z0


# --- transfer-matrix evaluation (any bead number) ----------------------------

@dataclass(frozen=True)
class TransferGrid:
    """Trapezoidal grid on ``[-L, L]`` for the discretised bond kernel."""

    n_points: int = 201
    half_width: float = 5.0

    @property
    def points(self) -> np.ndarray:
        return np.linspace(-self.half_width, self.half_width, self.n_points)


def transfer_level_integrals(test: TestCase, n_beads: int, grid: TransferGrid = TransferGrid()):
    """Per-kink-level numerator and denominator integrals, plus the reference integral.

    Returns ``(num, den, z0)`` where ``num[k]`` and ``den[k]`` integrate
    ``W e^{-beta_n H}`` and ``e^{-beta_n H}`` summed over sequences with ``2k``
    kinks (``k = 0..N//2``) and ``z0`` integrates ``e^{-beta_n H(ell_0)}``.
    """
    _require_1d(test)
    n = n_beads
    if n < 2:
        raise ValueError("need at least two beads")
    bn = test.beta / n
    x = grid.points
    (v00, v11, v01), (a00, a11, a01) = _model_on_grid(test, x)
    if not np.all(v01 > 0):
        raise ModelDomainError("off-diagonal coupling must be strictly positive")
    h = x[1] - x[0]
    m = test.model.mass
    ref = min(v00.min(), v11.min())
    spring = h * np.exp(-m * (x[:, None] - x[None, :]) ** 2 / (2.0 * bn))
    y = bn * v01
    mean = 0.5 * (v00 + v11)
    v = (v00 - ref, v11 - ref)
    # bond factor F e^{-beta_n V} at the left bead of each bond
    g = [[np.exp(-bn * v[0] + log_cosh(y)), np.exp(-bn * (mean - ref) + log_sinh(y))],
         [np.exp(-bn * (mean - ref) + log_sinh(y)), np.exp(-bn * v[1] + log_cosh(y))]]
    adiag = (a00, a11)
    npts = len(x)
    blocks = {}
    ablocks = {}
    for a in (0, 1):
        for b in (0, 1):
            blocks[a, b] = g[a][b][:, None] * spring
            wa = adiag[a] * g[a][b] - a01 * g[1 - a][b]
            ablocks[a, b] = wa[:, None] * spring
    k00 = blocks[0, 0]
    z0 = float(np.trace(np.linalg.matrix_power(k00, n)))
    zs = np.exp(2j * np.pi * np.arange(2 * n) / (2 * n))
    num_t = np.empty(2 * n, complex)
    den_t = np.empty(2 * n, complex)
    for i, z in enumerate(zs):
        kz = np.empty((2 * npts, 2 * npts), complex)
        kaz = np.empty((2 * npts, 2 * npts), complex)
        for a in (0, 1):
            for b in (0, 1):
                fac = 1.0 if a == b else z
                kz[a * npts:(a + 1) * npts, b * npts:(b + 1) * npts] = fac * blocks[a, b]
                kaz[a * npts:(a + 1) * npts, b * npts:(b + 1) * npts] = fac * ablocks[a, b]
        p = np.linalg.matrix_power(kz, n - 1)
        den_t[i] = np.trace(p @ kz)
        # W carries 1/N in front of a sum over N bonds; by cyclic symmetry the
        # sum is N copies of the first bond
        num_t[i] = np.sum(kaz * p.T)
    cn = np.fft.fft(num_t) / (2 * n)
    cd = np.fft.fft(den_t) / (2 * n)
    kk = np.arange(0, n + 1, 2)
    return cn.real[kk], cd.real[kk], z0


def transfer_level_expectations(test: TestCase, n_beads: int, grid: TransferGrid = TransferGrid()):
    """``(E[A_k], E[B_k])`` arrays for ``k = 0..N//2`` under the reference measure."""
    num, den, z0 = transfer_level_integrals(test, n_beads, grid)
    return num / z0, den / z0


def transfer_truncated_average(test: TestCase, n_beads: int, k0: int,
                               grid: TransferGrid = TransferGrid()) -> float:
    """``I_2k0`` for any bead number from the transfer-matrix level integrals."""
    if not 0 <= k0 <= n_beads // 2:
        raise ValueError(f"k0={k0} out of range for N={n_beads}")
    num, den, _ = transfer_level_integrals(test, n_beads, grid)
    return float(num[:k0 + 1].sum() / den[:k0 + 1].sum())
