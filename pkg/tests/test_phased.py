import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sarsa_delta.ladder import TimescaleLadder, build_doubling_ladder
from sarsa_delta.mdp import TabularPolicy, exact_q, make_ring, make_rng, make_self_loop
from sarsa_delta.phased import (
    PhasedState,
    bias_introduction_term,
    phased_td_bound,
    phased_delta_bound,
    hoeffding_eps,
    measure_errors,
    oracle_w,
    phased_delta_update,
    phased_td_update,
    run_phased,
    sample_phase,
    variance_reduction_term,
)
from sarsa_delta.verify import equal_k_gap

LOOP = make_self_loop(1.0)
ONE = TabularPolicy.uniform(1, 1)
SELF = TimescaleLadder([0.5, 0.75], [2, 2], [0, 0], [0.1, 0.1])


def test_hoeffding_values():
    assert hoeffding_eps(4, 0.1, 128) == pytest.approx(0.2617, abs=1e-4)
    assert hoeffding_eps(1, 2 / math.e ** 2, 9) == pytest.approx(math.sqrt(4 / 9))


@given(st.integers(1, 50), st.floats(0.01, 0.99), st.integers(1, 10_000))
def test_hoeffding_quarter_n(k, delta, n):
    assert hoeffding_eps(k, delta, 4 * n) == pytest.approx(hoeffding_eps(k, delta, n) / 2)


def test_hoeffding_domain():
    with pytest.raises(ValueError):
        hoeffding_eps(1, 1.0, 10)


def test_phased_td_self_loop():
    s = PhasedState.zeros(LOOP, 4)
    s = phased_td_update(s, LOOP, ONE, 0.5, 2, 4, make_rng(0))
    assert s.q_hat[0, 0] == pytest.approx(1.5) and s.phase == 1
    s = phased_td_update(s, LOOP, ONE, 0.5, 2, 4, make_rng(0))
    assert s.q_hat[0, 0] == pytest.approx(1.875) and s.phase == 2


def test_phased_td_zero_rewards():
    m = make_ring(4, [0] * 4)
    s = PhasedState.zeros(m, 3)
    for _ in range(5):
        s = phased_td_update(s, m, TabularPolicy.uniform(4, 1), 0.9, 3, 3, make_rng(1))
    assert np.all(s.q_hat == 0)


def test_phased_td_deterministic_ring_is_exact_backup():
    m = make_ring(3, [1.0, -0.5, 0.25])
    pol = TabularPolicy.uniform(3, 1)
    q0 = make_rng(0).normal(size=(3, 1))
    s = phased_td_update(PhasedState(q_hat=q0), m, pol, 0.8, 2, 7, make_rng(2))
    r = m.reward[:, 0]
    expected = r + 0.8 * np.roll(r, -1) + 0.64 * np.roll(q0[:, 0], -2)
    np.testing.assert_allclose(s.q_hat[:, 0], expected, atol=1e-12)


def test_phased_delta_self_loop_first_phase():
    s = phased_delta_update(PhasedState.zeros(LOOP, 3, SELF), LOOP, ONE, SELF, 3, make_rng(0))
    assert s.w_hat[0, 0, 0] == pytest.approx(1.5)
    assert s.w_hat[1, 0, 0] == pytest.approx(0.25)


def test_phased_delta_zero_rewards():
    m = make_ring(3, [0, 0, 0])
    lad = build_doubling_ladder(2)
    s = PhasedState.zeros(m, 2, lad)
    for _ in range(3):
        s = phased_delta_update(s, m, TabularPolicy.uniform(3, 1), lad, 2, make_rng(0))
    assert np.all(s.w_hat == 0)


def test_phased_delta_z0_matches_phased_td_bitwise(small_mdp, uniform):
    lad = build_doubling_ladder(0)
    a = PhasedState.zeros(small_mdp, 8, lad)
    b = PhasedState.zeros(small_mdp, 8)
    ra, rb = make_rng(4), make_rng(4)
    for _ in range(5):
        a = phased_delta_update(a, small_mdp, uniform, lad, 8, ra)
        b = phased_td_update(b, small_mdp, uniform, lad.gamma, lad.k, 8, rb)
        np.testing.assert_array_equal(a.w_hat[0], b.q_hat)


def test_phased_delta_converges_to_oracle():
    m = make_ring(4, [1, 0, -1, 0.5])
    pol = TabularPolicy.uniform(4, 1)
    lad = build_doubling_ladder(2)
    s = PhasedState.zeros(m, 1, lad)
    for _ in range(60):
        s = phased_delta_update(s, m, pol, lad, 1, make_rng(0))
    np.testing.assert_allclose(s.w_hat, oracle_w(m, pol, lad.gammas), atol=1e-10)


def test_phased_td_bound_arithmetic():
    assert phased_td_bound(0.1, 0.5, 2, 0.0) == pytest.approx(0.15)
    assert phased_td_bound(0.1, 0.5, 200, 0.0) == pytest.approx(0.2)
    assert phased_td_bound(0.0, 0.5, 2, 1.0) == pytest.approx(0.25)


def test_phased_delta_bound_doubling_example():
    lad = build_doubling_ladder(1)
    assert phased_delta_bound(0.1, lad, [0.0, 0.0]) == pytest.approx(0.2359375, abs=1e-12)


@given(st.integers(0, 4), st.integers(1, 20), st.floats(0, 1), st.lists(st.floats(0, 3), min_size=5, max_size=5))
def test_phased_delta_bound_equal_k_reduces(Z, k, eps, prev):
    lad = build_doubling_ladder(Z).replace(ks=[k] * (Z + 1))
    prev = prev[: Z + 1]
    assert variance_reduction_term(lad) == 0.0
    assert bias_introduction_term(lad, prev) == 0.0
    assert phased_delta_bound(eps, lad, prev) == pytest.approx(
        phased_td_bound(eps, lad.gamma, k, sum(prev)))


@given(st.lists(st.floats(0.0, 0.99), min_size=1, max_size=6), st.lists(st.integers(1, 64), min_size=6, max_size=6))
def test_variance_reduction_nonpositive(gammas, ks):
    gammas = sorted(gammas)
    ks = sorted(ks[: len(gammas)])
    lad = TimescaleLadder(gammas, ks, [0] * len(gammas), [0.1] * len(gammas))
    assert variance_reduction_term(lad) <= 0.0


def test_measure_errors_examples():
    oracle = oracle_w(LOOP, ONE, SELF.gammas)
    np.testing.assert_allclose(oracle[:, 0, 0], [2.0, 2.0])
    rep = measure_errors(PhasedState.zeros(LOOP, 1, SELF), oracle, bound_rhs=10.0)
    assert rep.delta_w == pytest.approx([2.0, 2.0]) and rep.holds
    exact = measure_errors(PhasedState(w_hat=oracle.copy()), oracle, 0.0)
    assert exact.delta_w == [0.0, 0.0] and exact.holds
    bumped = oracle.copy()
    bumped[1, 0, 0] += 0.3
    assert measure_errors(PhasedState(w_hat=bumped), oracle).delta_w[1] == pytest.approx(0.3)


def test_deterministic_ring_contracts_by_gamma_k():
    m = make_ring(5)
    pol = TabularPolicy.uniform(5, 1)
    gamma, k = 0.9, 3
    recs = run_phased(m, pol, 2, 8, 0.1, make_rng(0), gamma=gamma, k=k)
    errs = [r.report.delta_q for r in recs]
    for a, b in zip(errs, errs[1:]):
        assert b == pytest.approx(gamma ** k * a, rel=1e-9)


def test_phased_delta_on_ring_contracts_by_gamma_k():
    m = make_ring(5)
    pol = TabularPolicy.uniform(5, 1)
    lad = build_doubling_ladder(2).replace(ks=[4, 4, 4])
    recs = run_phased(m, pol, 1, 6, 0.1, make_rng(0), ladder=lad)
    errs = [r.report.delta_q for r in recs]
    for a, b in zip(errs, errs[1:]):
        assert b == pytest.approx(lad.gamma ** 4 * a, rel=1e-9)


def test_equal_k_collapse(small_mdp, uniform):
    lad = build_doubling_ladder(3).replace(ks=[5] * 4)
    assert equal_k_gap(small_mdp, uniform, lad, 16, 10, seed=0) <= 1e-10


def test_sample_phase_shape(small_mdp, uniform):
    b = sample_phase(small_mdp, uniform, 3, 4, make_rng(0))
    assert b.states.shape == (5, 2, 4, 4) and b.rewards.shape == (5, 2, 4, 3)
    assert np.all(b.states[:, :, :, 0] == np.arange(5)[:, None, None])


def test_phased_error_shrinks_with_n(small_mdp, uniform):
    errs = []
    for n in (8, 64, 512):
        recs = run_phased(small_mdp, uniform, n, 15, 0.1, make_rng(0), gamma=0.9, k=4)
        errs.append(np.mean([r.report.delta_q for r in recs[-5:]]))
    assert errs[0] > errs[1] > errs[2]
    q = exact_q(small_mdp, uniform, 0.9)
    assert errs[2] < 0.1 * np.abs(q).max()
