"""Two-state diabatic potentials and position-dependent matrix observables.

Positions are arrays of shape ``(..., d)``; scalar channels come back with
shape ``(...)`` and gradients with shape ``(..., d)``.  Every function is
vectorised over the leading axes so that a whole batch of ring polymers can be
evaluated in one call.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

ScalarField = Callable[[np.ndarray], np.ndarray]
VectorField = Callable[[np.ndarray], np.ndarray]


class ModelDomainError(ValueError):
    """A model produced a non-finite value or a non-positive coupling."""


@dataclass(frozen=True)
class PotentialModel:
    """Real symmetric 2x2 diabatic potential with analytic gradients.

    The off-diagonal coupling must stay strictly positive wherever the model
    is evaluated; this fixes the sign factor of the off-diagonal estimator
    term to +1.
    """

    dim: int
    mass: float
    v00: ScalarField
    v11: ScalarField
    v01: ScalarField
    dv00: VectorField
    dv11: VectorField
    dv01: VectorField
    name: str = "custom"
    # Name of a compiled field kernel in ``_kernels.FIELD_KERNELS`` that
    # reproduces the callables above, with its numeric parameters.
    kernel: Optional[str] = field(default=None, compare=False, repr=False)
    kernel_params: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be a positive integer")
        if not self.mass > 0:
            raise ValueError("mass must be positive")


@dataclass(frozen=True)
class Observable:
    """Real symmetric matrix observable A(q); ``a10`` is ``a01`` by construction."""

    a00: ScalarField
    a11: ScalarField
    a01: ScalarField
    name: str = "custom"

    def a10(self, q):
        return self.a01(q)


@dataclass(frozen=True)
class TestCase:
    model: PotentialModel
    observable: Observable
    beta: float = 1.0
    reference_value: Optional[float] = None

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")


def _check_dim(model_dim, q):
    q = np.asarray(q, dtype=float)
    if q.ndim == 0 or q.shape[-1] != model_dim:
        raise ValueError(f"position must have trailing dimension {model_dim}, got shape {q.shape}")
    return q


def _finite(name, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ModelDomainError(f"{name} returned a non-finite value")


def evaluate_potential(model: PotentialModel, q):
    """Return ``(v00, v11, v01)`` at ``q``; raises if ``v01 <= 0`` anywhere."""
    q = _check_dim(model.dim, q)
    v00, v11, v01 = model.v00(q), model.v11(q), model.v01(q)
    _finite("potential", v00, v11, v01)
    if not np.all(v01 > 0):
        raise ModelDomainError("off-diagonal coupling must be strictly positive")
    return v00, v11, v01


def evaluate_potential_gradient(model: PotentialModel, q):
    q = _check_dim(model.dim, q)
    g = model.dv00(q), model.dv11(q), model.dv01(q)
    _finite("potential gradient", *g)
    return g


def evaluate_observable(obs: Observable, q):
    q = np.asarray(q, dtype=float)
    a = obs.a00(q), obs.a11(q), obs.a01(q)
    _finite("observable", *a)
    return a


# --- built-in one-dimensional benchmark -------------------------------------

def _x(q):
    return q[..., 0]


def _bench_v00(q):
    x = _x(q)
    return (x**2 + 2.0 * (1.0 - np.cos(x)) - 3.0 * np.exp(-(x - 1.0) ** 2)
            - 2.0 * np.exp(-(x - 1.5) ** 2) + 3.0)


def _bench_v11(q):
    x = _x(q)
    return x**2 + 4.0 * (1.0 - np.cos(x)) - 2.0 * np.exp(-(x - 1.0) ** 2) + 3.0


def _bench_v01(q):
    return np.exp(-_x(q) ** 2)


def _bench_dv00(q):
    x = _x(q)
    d = (2.0 * x + 2.0 * np.sin(x) + 6.0 * (x - 1.0) * np.exp(-(x - 1.0) ** 2)
         + 4.0 * (x - 1.5) * np.exp(-(x - 1.5) ** 2))
    return d[..., None]


def _bench_dv11(q):
    x = _x(q)
    d = 2.0 * x + 4.0 * np.sin(x) + 4.0 * (x - 1.0) * np.exp(-(x - 1.0) ** 2)
    return d[..., None]


def _bench_dv01(q):
    x = _x(q)
    return (-2.0 * x * np.exp(-x**2))[..., None]


def _bench_a_diag(q):
    x = _x(q)
    return 1.0 / (1.0 + x**2) + np.cos(x)


def _bench_a_off(q):
    x = _x(q)
    return np.exp(-x**2) + np.sin(x)


def benchmark_model(mass: float = 1.0) -> PotentialModel:
    """Asymmetric 1D two-state model with a Gaussian coupling peaked at x = 0."""
    return PotentialModel(dim=1, mass=mass, v00=_bench_v00, v11=_bench_v11, v01=_bench_v01,
                          dv00=_bench_dv00, dv11=_bench_dv11, dv01=_bench_dv01,
                          name="benchmark-1d", kernel="benchmark-1d")


def benchmark_observable() -> Observable:
    return Observable(a00=_bench_a_diag, a11=_bench_a_diag, a01=_bench_a_off, name="benchmark-1d")


# Literature value of <A> for the benchmark at beta = 1, M = 1.  Our converged
# grid solve (oracle.pseudospectral_reference) gives 0.98774100 instead.
BENCHMARK_PUBLISHED_REFERENCE = 0.987553


def benchmark_case(beta: float = 1.0, mass: float = 1.0) -> TestCase:
    ref = BENCHMARK_PUBLISHED_REFERENCE if (beta == 1.0 and mass == 1.0) else None
    return TestCase(benchmark_model(mass), benchmark_observable(), beta, ref)


# --- small analytic models used by tests and demos ---------------------------

def _zeros(q):
    return np.zeros(np.shape(q)[:-1])


def _zero_grad(q):
    return np.zeros(np.shape(q))


def constant_model(v00: float, v11: float, v01: float, dim: int = 1, mass: float = 1.0) -> PotentialModel:
    return PotentialModel(
        dim=dim, mass=mass,
        v00=lambda q: np.full(np.shape(q)[:-1], float(v00)),
        v11=lambda q: np.full(np.shape(q)[:-1], float(v11)),
        v01=lambda q: np.full(np.shape(q)[:-1], float(v01)),
        dv00=_zero_grad, dv11=_zero_grad, dv01=_zero_grad, name="constant",
        kernel="constant", kernel_params=(float(v00), float(v11), float(v01)))


def harmonic_model(omega0: float = 1.0, omega1: float = 1.0, shift1: float = 0.0,
                   offset1: float = 0.0, coupling: float = 0.1, width: Optional[float] = None,
                   mass: float = 1.0) -> PotentialModel:
    """Two displaced 1D harmonic surfaces with a constant or Gaussian coupling."""
    def v00(q):
        return 0.5 * mass * omega0**2 * _x(q) ** 2

    def v11(q):
        return 0.5 * mass * omega1**2 * (_x(q) - shift1) ** 2 + offset1

    def dv00(q):
        return (mass * omega0**2 * _x(q))[..., None]

    def dv11(q):
        return (mass * omega1**2 * (_x(q) - shift1))[..., None]

    if width is None:
        def v01(q):
            return np.full(np.shape(q)[:-1], float(coupling))
        dv01 = _zero_grad
    else:
        def v01(q):
            return coupling * np.exp(-_x(q) ** 2 / width**2)

        def dv01(q):
            x = _x(q)
            return (-2.0 * x / width**2 * coupling * np.exp(-x**2 / width**2))[..., None]

    params = (float(mass), float(omega0), float(omega1), float(shift1), float(offset1),
              float(coupling), 0.0 if width is None else float(width))
    return PotentialModel(dim=1, mass=mass, v00=v00, v11=v11, v01=v01,
                          dv00=dv00, dv11=dv11, dv01=dv01, name="harmonic",
                          kernel="harmonic", kernel_params=params)


def identity_observable() -> Observable:
    def one(q):
        return np.ones(np.shape(q)[:-1])
    return Observable(a00=one, a11=one, a01=_zeros, name="identity")


def zero_observable() -> Observable:
    return Observable(a00=_zeros, a11=_zeros, a01=_zeros, name="zero")


MODELS = {"benchmark-1d": benchmark_model}
OBSERVABLES = {"benchmark-1d": benchmark_observable, "identity": identity_observable}
