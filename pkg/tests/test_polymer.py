import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mlmcpimd.dynamics import LangevinConfig, reference_blocks
from mlmcpimd.model import (benchmark_model, benchmark_observable, constant_model,
                            harmonic_model, identity_observable)
from mlmcpimd.polymer import (RingPolymerState, SurfaceIndexSequence, bond_element,
                              bond_factors, enumerate_kink_sequences, extended_hamiltonian,
                              kink_count, level_size, level_sums, level_sums_from_values,
                              log_cosh, log_sinh, observable_values, sub_integrand_A,
                              sub_integrand_B, w_estimator, weight_ratio)

BN = 1.0 / 16


def random_state(rng, n, ell=None, beta_n=BN, scale=1.0):
    q = rng.normal(0, scale, (n, 1))
    p = rng.normal(0, 4, (n, 1))
    if ell is None:
        ell = rng.integers(0, 2, n)
    return RingPolymerState(q, p, SurfaceIndexSequence(tuple(ell)), beta_n)


def direct_ratio(state, ell, model):
    """exp(-beta_n [H(ell) - H(ell_0)]) from two full Hamiltonian evaluations."""
    n = state.n_beads
    s_ell = RingPolymerState(state.q, state.p, SurfaceIndexSequence(tuple(ell)), state.beta_n)
    s_0 = RingPolymerState(state.q, state.p, SurfaceIndexSequence.zeros(n), state.beta_n)
    return math.exp(-state.beta_n * (extended_hamiltonian(s_ell, model) - extended_hamiltonian(s_0, model)))


# --- sequences ----------------------------------------------------------------

@pytest.mark.parametrize("bits,kinks", [((0, 0, 0, 0), 0), ((0, 1, 0, 1), 4), ((0, 0, 1, 1, 1, 0), 2)])
def test_kink_count_examples(bits, kinks):
    assert kink_count(bits) == kinks
    assert SurfaceIndexSequence(bits).kinks == kinks


@given(st.lists(st.integers(0, 1), min_size=2, max_size=24))
def test_kink_count_even_and_cyclic(bits):
    c = kink_count(bits)
    assert c % 2 == 0
    assert c == sum(bits[i] != bits[(i + 1) % len(bits)] for i in range(len(bits)))


def test_sequence_validation():
    with pytest.raises(ValueError):
        SurfaceIndexSequence((0, 2))
    with pytest.raises(ValueError):
        kink_count((1,))


def test_enumerate_small_levels():
    assert {s.bits for s in enumerate_kink_sequences(4, 0)} == {(0, 0, 0, 0), (1, 1, 1, 1)}


def test_enumerate_level_size_ring16():
    # [PAPER] 2 C(N, 2k) sequences per level; N = 16, k = 1 gives 240
    assert sum(1 for _ in enumerate_kink_sequences(16, 1)) == 240


def test_enumerate_matches_exhaustive_filter():
    # [DERIVED] filter all 2^5 sequences by kink count
    got = [s.bits for s in enumerate_kink_sequences(5, 2)]
    want = {b for b in itertools.product((0, 1), repeat=5) if kink_count(b) == 4}
    assert len(got) == 10 == len(set(got))
    assert set(got) == want


def test_enumerate_is_lazy_and_ordered():
    gen = enumerate_kink_sequences(12, 2)
    assert iter(gen) is gen
    seqs = list(gen)
    firsts = [s.bits[0] for s in seqs]
    assert firsts == sorted(firsts)
    half = seqs[:len(seqs) // 2]
    assert [s.kink_bonds() for s in half] == list(itertools.combinations(range(12), 4))


def test_enumerate_range_errors():
    with pytest.raises(ValueError):
        list(enumerate_kink_sequences(4, 3))
    with pytest.raises(ValueError):
        list(enumerate_kink_sequences(4, -1))


def test_level_sizes_sum_to_all_sequences():
    for n in range(2, 21):
        assert sum(level_size(n, k) for k in range(n // 2 + 1)) == 2**n


# --- bond factors and elements ------------------------------------------------

def test_log_trig_helpers_accurate():
    x = np.array([1e-9, 1e-4, 0.0625, 1.0, 5.0, 30.0])
    series = [v * v / 2 - v**4 / 12 if v < 1e-3 else math.log(math.cosh(v)) for v in x]
    np.testing.assert_allclose(log_cosh(x), series, rtol=1e-13)
    ref = [math.log(v) + v * v / 6 if v < 1e-3 else math.log(math.sinh(v)) for v in x]
    np.testing.assert_allclose(log_sinh(x), ref, rtol=1e-13)


def test_log_sinh_below_log_cosh(rng):
    f = bond_factors(rng.uniform(-4, 4, (100, 1)), benchmark_model(), BN)
    assert np.all(f.log_sinh < f.log_cosh)


def test_bond_element_cases(rng):
    m = benchmark_model()
    q = np.full((4, 1), 0.3)
    s = RingPolymerState(q, np.zeros((4, 1)), SurfaceIndexSequence.zeros(4), BN)
    f = bond_factors(q[0], m, BN)
    x = BN * f.v01
    assert bond_element(s, 1, 0, 0, m) == pytest.approx(float(f.v00 - math.log(math.cosh(x)) / BN), rel=1e-13)
    assert bond_element(s, 1, 0, 1, m) == pytest.approx(
        float(f.mean_v - math.log(math.sinh(x)) / BN), rel=1e-13)


def test_bond_element_difference_free_of_kinetic_terms(rng):
    # [DERIVED] subtracting the two branches leaves potential and log-tanh only
    m = benchmark_model()
    s = random_state(rng, 5)
    for k in range(5):
        f = bond_factors(s.q[k], m, BN)
        for lk in (0, 1):
            # diagonal element minus the off-diagonal one sharing ell_{k+1}
            d = bond_element(s, k, lk, lk, m) - bond_element(s, k, 1 - lk, lk, m)
            v_ll = f.v00 if lk == 0 else f.v11
            want = v_ll - f.mean_v + math.log(math.tanh(BN * f.v01)) / BN
            assert d == pytest.approx(float(want), rel=1e-9)


def test_extended_hamiltonian_examples(rng):
    m = benchmark_model()
    q = np.full((2, 1), -0.4)
    s = RingPolymerState(q, np.zeros((2, 1)), SurfaceIndexSequence.zeros(2), 0.5)
    f = bond_factors(q[0], m, 0.5)
    assert extended_hamiltonian(s, m) == pytest.approx(
        float(2 * (f.v00 - math.log(math.cosh(0.5 * f.v01)) / 0.5)), rel=1e-13)
    s = random_state(rng, 7)
    flipped = RingPolymerState(s.q, -s.p, s.ell, s.beta_n)
    assert extended_hamiltonian(flipped, m) == extended_hamiltonian(s, m)
    assert extended_hamiltonian(s.rotate(1), m) == pytest.approx(extended_hamiltonian(s, m), rel=1e-13)


def test_state_validation():
    with pytest.raises(ValueError):
        RingPolymerState(np.zeros((3, 1)), np.zeros((3, 1)), SurfaceIndexSequence.zeros(4), 0.1)
    with pytest.raises(ValueError):
        RingPolymerState(np.full((2, 1), np.nan), np.zeros((2, 1)), SurfaceIndexSequence.zeros(2), 0.1)
    with pytest.raises(ValueError):
        RingPolymerState(np.zeros((2, 1)), np.zeros((2, 1)), SurfaceIndexSequence.zeros(2), 0.0)


# --- weight ratio -------------------------------------------------------------

def test_weight_ratio_trivial_sequences(rng):
    m = benchmark_model()
    q = rng.uniform(-2, 2, (6, 1))
    f = bond_factors(q, m, BN)
    assert weight_ratio(q, SurfaceIndexSequence.zeros(6), f) == 1.0
    want = math.exp(-BN * float(np.sum(f.v11 - f.v00)))
    assert weight_ratio(q, SurfaceIndexSequence.ones(6), f) == pytest.approx(want, rel=1e-13)


@pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
def test_weight_ratio_factorized_equals_direct(rng, n):
    m = benchmark_model()
    for _ in range(10):
        s = random_state(rng, n, beta_n=1.0 / n)
        f = bond_factors(s.q, m, s.beta_n)
        for bits in itertools.product((0, 1), repeat=n):
            got = weight_ratio(s.q, SurfaceIndexSequence(bits), f)
            assert got == pytest.approx(direct_ratio(s, bits, m), rel=1e-12)


def test_weight_ratio_kink_bound(rng):
    # [DERIVED] bound with C1 >= max(V00 - V11, 0) and C2 >= max V01 over a grid
    m = benchmark_model()
    n = 8
    grid = np.linspace(-3, 3, 2001)[:, None]
    c1 = max(float(np.max(m.v00(grid) - m.v11(grid))), 0.0)
    c2 = float(np.max(m.v01(grid)))
    bn = 1.0 / n
    for _ in range(20):
        q = rng.uniform(-3, 3, (n, 1))
        f = bond_factors(q, m, bn)
        for k in range(n // 2 + 1):
            for ell in enumerate_kink_sequences(n, k):
                assert weight_ratio(q, ell, f) <= math.exp(c1) * (m.mass * c2 * bn) ** (2 * k)


def test_weight_ratio_global_flip_covariance(rng):
    m = benchmark_model()
    n = 6
    q = rng.uniform(-2, 2, (n, 1))
    f = bond_factors(q, m, BN)
    for bits in itertools.product((0, 1), repeat=n):
        ell = SurfaceIndexSequence(bits)
        comp = ell.complement()
        assert comp.kink_bonds() == ell.kink_bonds()
        a = np.array(bits)
        b = np.roll(a, -1)
        v = lambda x, y: np.where(x == y, np.where(x == 0, f.v00, f.v11), f.mean_v)  # noqa: E731
        want = math.exp(-BN * float(np.sum(v(1 - a, 1 - b) - v(a, b))))
        got = weight_ratio(q, comp, f) / weight_ratio(q, ell, f)
        assert got == pytest.approx(want, rel=1e-12)


# --- estimator ----------------------------------------------------------------

def test_w_identity_observable_is_one(rng):
    for _ in range(20):
        s = random_state(rng, 9)
        assert w_estimator(s, benchmark_model(), identity_observable()) == pytest.approx(1.0, abs=1e-15)


def test_w_diagonal_observable_on_reference_sequence(rng):
    from mlmcpimd.model import Observable
    obs = Observable(lambda q: q[..., 0] ** 2, lambda q: np.cos(q[..., 0]), lambda q: 0 * q[..., 0])
    s = random_state(rng, 7, ell=np.zeros(7, int))
    assert w_estimator(s, benchmark_model(), obs) == pytest.approx(float(np.mean(s.q[:, 0] ** 2)), rel=1e-14)


def test_w_reference_sequence_closed_form(rng):
    # [DERIVED] on ell_0 every bond is plain and the amplification factor is
    # tanh(b V01) exp(b (V00 - mean)); checked against the Hamiltonian branches
    m, obs = benchmark_model(), benchmark_observable()
    s = random_state(rng, 8, ell=np.zeros(8, int))
    f = bond_factors(s.q, m, BN)
    a00, a01 = obs.a00(s.q), obs.a01(s.q)
    closed = np.mean(a00 - np.tanh(BN * f.v01) * np.exp(BN * (f.v00 - f.mean_v)) * a01)
    direct = np.mean([a00[k] - math.exp(BN * (bond_element(s, k, 0, 0, m) - bond_element(s, k, 1, 0, m)))
                      * a01[k] for k in range(8)])
    assert w_estimator(s, m, obs) == pytest.approx(float(closed), rel=1e-13)
    assert w_estimator(s, m, obs) == pytest.approx(float(direct), rel=1e-9)


def test_w_general_sequence_matches_branch_differences(rng):
    m, obs = benchmark_model(), benchmark_observable()
    n = 6
    s = random_state(rng, n)
    bits = s.ell.bits
    direct = 0.0
    for k in range(n):
        lk, lk1 = bits[k], bits[(k + 1) % n]
        amp = math.exp(BN * (bond_element(s, k, lk, lk1, m) - bond_element(s, k, 1 - lk, lk1, m)))
        direct += float((obs.a00 if lk == 0 else obs.a11)(s.q[k])) - amp * float(obs.a01(s.q[k]))
    assert w_estimator(s, m, obs) == pytest.approx(direct / n, rel=1e-9)


def test_cyclic_invariance(rng):
    m, obs = benchmark_model(), benchmark_observable()
    s = random_state(rng, 8)
    r = s.rotate(3)
    assert w_estimator(r, m, obs) == pytest.approx(w_estimator(s, m, obs), rel=1e-13)
    for k in range(3):
        assert sub_integrand_B(r.q, k, m, BN) == pytest.approx(sub_integrand_B(s.q, k, m, BN), rel=1e-12)
        assert sub_integrand_A(r.q, r.p, k, m, obs, BN) == pytest.approx(
            sub_integrand_A(s.q, s.p, k, m, obs, BN), rel=1e-12)


# --- level integrands ---------------------------------------------------------

def test_b0_symmetric_is_two(rng):
    m = constant_model(0.5, 0.5, 0.3)
    assert sub_integrand_B(rng.normal(size=(6, 1)), 0, m, BN) == 2.0


def test_b0_two_term_form(rng):
    m = benchmark_model()
    q = rng.uniform(-2, 2, (16, 1))
    f = bond_factors(q, m, BN)
    want = 1 + math.exp(-BN * float(np.sum(f.v11 - f.v00)))
    assert sub_integrand_B(q, 0, m, BN) == pytest.approx(want, rel=1e-14)


def test_b_and_weights_independent_of_momentum(rng):
    m = benchmark_model()
    s = random_state(rng, 6)
    f = bond_factors(s.q, m, BN)
    for k in range(4):
        b1 = sub_integrand_B(s.q, k, m, BN)
        assert sub_integrand_B(s.q.copy(), k, m, BN) == b1
        a1 = sub_integrand_A(s.q, s.p, k, m, benchmark_observable(), BN)
        a2 = sub_integrand_A(s.q, rng.normal(size=s.p.shape), k, m, benchmark_observable(), BN)
        assert a1 == a2
    assert weight_ratio(s.q, s.ell, f) == pytest.approx(direct_ratio(s, s.ell.bits, m), rel=1e-12)


def test_level_range_errors():
    with pytest.raises(ValueError):
        sub_integrand_B(np.zeros((4, 1)), 3, benchmark_model(), BN)


@pytest.mark.parametrize("n", [4, 7, 10])
def test_level_sums_match_enumeration(rng, n):
    for model in (benchmark_model(), harmonic_model(1.0, 1.3, 0.4, -0.2, 0.3, width=1.2)):
        obs = benchmark_observable()
        q = rng.uniform(-2, 2, (5, n, 1))
        kmax = n // 2
        a, b = level_sums(q, model, 1.0 / n, kmax, obs)
        for i in range(5):
            for k in range(kmax + 1):
                assert b[i, k] == pytest.approx(sub_integrand_B(q[i], k, model, 1.0 / n), rel=1e-11)
                want = sub_integrand_A(q[i], None, k, model, obs, 1.0 / n)
                assert a[i, k] == pytest.approx(want, rel=1e-10, abs=1e-14 * abs(b[i, 0]))


def test_compiled_level_sums_match_numpy(rng):
    m, obs = benchmark_model(), benchmark_observable()
    q = rng.uniform(-2.5, 2.5, (200, 16, 1))
    a, b = level_sums(q, m, BN, 6, obs)
    v = np.stack([m.v00(q), m.v11(q), m.v01(q)], axis=-2)
    ca, cb = level_sums_from_values(v, BN, 6, observable_values(q, obs))
    np.testing.assert_allclose(ca, a, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(cb, b, rtol=1e-12, atol=1e-15)
    _, cb2 = level_sums_from_values(v, BN, 6)
    np.testing.assert_array_equal(cb2, cb)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 9), st.floats(0.05, 2.0), st.integers(0, 2**31))
def test_level_sums_total_matches_full_sum(n, beta, seed):
    # sum over all levels equals the sum over all 2^n sequences
    rng = np.random.default_rng(seed)
    m = benchmark_model()
    q = rng.uniform(-2, 2, (n, 1))
    bn = beta / n
    f = bond_factors(q, m, bn)
    _, b = level_sums(q, m, bn, n // 2)
    full = sum(weight_ratio(q, SurfaceIndexSequence(bits), f) for bits in itertools.product((0, 1), repeat=n))
    assert b.sum() == pytest.approx(full, rel=1e-11)


def test_level_decay_along_reference_dynamics():
    m, obs = benchmark_model(), benchmark_observable()
    cfg = LangevinConfig(n_burn=20_000)
    blocks = list(reference_blocks(m, 16, 1.0, cfg, 3, 20_000))
    v = np.concatenate([b.v for b in blocks])
    q = np.concatenate([b.q for b in blocks])
    a, b = level_sums_from_values(v, BN, 3, observable_values(q, obs))
    ma = np.abs(a).mean(axis=0)
    mb = b.mean(axis=0)
    assert np.all(np.diff(ma) < 0) and np.all(np.diff(mb) < 0)
    assert np.all(mb[1:] / mb[:-1] < 0.25)
