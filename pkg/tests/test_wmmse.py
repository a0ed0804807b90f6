import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import grid_optimum_2user, sum_rate_loop, weighted_mse_loop
from wmmse_learn.instance import ProblemInstance, ic_instance
from wmmse_learn.wmmse import (
    WmmseConfig, WmmseState, allocate_max_power, allocate_random, sum_rate, sum_rate_batch,
    update_u, update_v, update_w, weighted_mse_objective, wmmse, wmmse_batch, wmmse_iterates,
)

gains_2d = st.integers(1, 5).flatmap(
    lambda K: arrays(np.float64, (K, K), elements=st.floats(0.0, 5.0, allow_subnormal=False)))


# sum-rate

def test_sum_rate_single_user_one_bit():
    assert sum_rate(ic_instance([[1.0]]), [1.0]) == pytest.approx(1.0)


def test_sum_rate_zero_power():
    inst = ic_instance(np.ones((3, 3)))
    assert sum_rate(inst, np.zeros(3)) == 0.0


def test_sum_rate_two_users_unit_gains():
    inst = ic_instance(np.ones((2, 2)))
    assert sum_rate(inst, [1.0, 1.0]) == pytest.approx(2 * math.log2(1.5), abs=1e-12)
    assert sum_rate(inst, [1.0, 1.0]) == pytest.approx(1.169925, abs=1e-6)


@given(gains_2d, st.floats(0.1, 3.0))
def test_sum_rate_matches_loop(H, noise):
    K = H.shape[0]
    p = np.linspace(0, 1, K)
    inst = ic_instance(H, noise)
    assert sum_rate(inst, p) == pytest.approx(sum_rate_loop(H, p, noise), rel=1e-10, abs=1e-12)


def test_sum_rate_rejects_wrong_length():
    with pytest.raises(ValueError):
        sum_rate(ic_instance(np.ones((2, 2))), [1.0])


# weighted MSE objective

def test_objective_with_zero_receiver_is_weight_sum():
    inst = ic_instance(np.ones((3, 3)), weights=[1.0, 2.0, 0.5])
    state = WmmseState(v=np.array([0.3, 0.9, 1.0]), u=np.zeros(3), w=np.ones(3))
    assert weighted_mse_objective(inst, state) == pytest.approx(3.5)


def test_objective_hand_value():
    inst = ic_instance([[1.0]])
    state = WmmseState(v=np.array([1.0]), u=np.array([0.5]), w=np.array([2.0]))
    assert weighted_mse_objective(inst, state) == pytest.approx(1 - math.log(2), abs=1e-12)
    assert weighted_mse_objective(inst, state) == pytest.approx(0.306853, abs=1e-6)


@given(gains_2d, st.floats(0.1, 3.0))
def test_objective_matches_loop(H, noise):
    K = H.shape[0]
    rng = np.random.default_rng(K)
    v, u, w = rng.uniform(0, 1, K), rng.uniform(-1, 1, K), rng.uniform(0.5, 3, K)
    alpha = rng.uniform(0.5, 2, K)
    inst = ic_instance(H, noise, alpha)
    got = weighted_mse_objective(inst, WmmseState(v, u, w))
    assert got == pytest.approx(weighted_mse_loop(H, v, u, w, noise, alpha), rel=1e-9, abs=1e-12)


def test_objective_rejects_nonpositive_w():
    inst = ic_instance(np.ones((2, 2)))
    with pytest.raises(ValueError):
        weighted_mse_objective(inst, WmmseState(np.ones(2), np.ones(2), np.array([1.0, 0.0])))


# block updates are exact minimizers

@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2 ** 16))
def test_each_block_update_does_not_increase_objective(K, seed):
    rng = np.random.default_rng(seed)
    H = np.abs(rng.standard_normal((K, K)))
    inst = ic_instance(H)
    v = rng.uniform(0, 1, K)
    u = update_u(H, v, 1.0)
    w = update_w(H, v, u)
    base = weighted_mse_objective(inst, WmmseState(v, u, w))
    for _ in range(5):  # random perturbations of u never beat the update
        du = u + 0.05 * rng.standard_normal(K)
        assert weighted_mse_objective(inst, WmmseState(v, du, w)) >= base - 1e-12
    v2 = update_v(H, u, w, 1.0, 1.0)
    assert weighted_mse_objective(inst, WmmseState(v2, u, w)) <= base + 1e-12
    assert np.all(w >= 1 - 1e-12)


def test_update_v_zero_denominator_gives_full_amplitude():
    H = np.eye(2)
    v = update_v(H, np.zeros(2), np.ones(2), 1.0, 4.0)
    assert np.allclose(v, 2.0)


# full solver

def test_single_user_full_power():
    res = wmmse(ic_instance([[1.0]]))
    assert res.p == pytest.approx([1.0])


def test_weak_interference_both_full_power():
    H = np.array([[2.0, 0.1], [0.1, 2.0]])
    res = wmmse(ic_instance(H))
    assert res.p == pytest.approx([1.0, 1.0], abs=1e-6)
    best, arg = grid_optimum_2user(H)
    assert arg == (1.0, 1.0)
    assert sum_rate(ic_instance(H), res.p) == pytest.approx(best, rel=1e-9)


def test_strong_cross_gains_from_full_power_is_stationary():
    # Full power is a stationary point here: every coordinate of the gradient
    # at (1, 1) points outward, so the solver stays put although one-on,
    # one-off is far better. The grid optimum is exactly 1 bit.
    H = np.array([[1.0, 10.0], [10.0, 1.0]])
    inst = ic_instance(H)
    res = wmmse(inst)
    assert res.p == pytest.approx([1.0, 1.0], abs=1e-9)
    best, arg = grid_optimum_2user(H)
    assert best == pytest.approx(1.0)
    assert arg in ((1.0, 0.0), (0.0, 1.0))
    # from an asymmetric start the solver finds the binary optimum
    res2 = wmmse(inst, WmmseConfig(init=np.array([1.0, 0.1])))
    assert sorted(np.round(res2.p, 6)) == [0.0, 1.0]
    assert sum_rate(inst, res2.p) == pytest.approx(best, rel=1e-2)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2 ** 20), st.floats(0.2, 4.0))
def test_trace_non_increasing_and_box_feasible(K, seed, p_max):
    H = np.abs(np.random.default_rng(seed).standard_normal((K, K)))
    res = wmmse(ic_instance(H, p_max=p_max))
    assert np.all(np.diff(res.trace) <= 1e-9)
    assert np.all(res.p >= 0) and np.all(res.p <= p_max * (1 + 1e-12))


def test_iteration_cap():
    H = np.abs(np.random.default_rng(3).standard_normal((10, 10)))
    res = wmmse(ic_instance(H), WmmseConfig(obj_tol=1e-300, max_iter=7))
    assert res.iterations == 7
    assert len(res.trace) == 8


def test_batch_equals_single_runs():
    rng = np.random.default_rng(5)
    H = np.abs(rng.standard_normal((20, 4, 4)))
    batch = wmmse_batch(H, 1.0, 1.0, 1.0)
    for i in range(20):
        single = wmmse(ic_instance(H[i]))
        assert np.array_equal(batch.p[i], single.p)
        assert batch.iterations[i] == single.iterations


def test_iterates_follow_solver():
    inst = ic_instance(np.abs(np.random.default_rng(1).standard_normal((3, 3))))
    it = wmmse_iterates(inst, 3)
    assert len(it) == 4 and np.allclose(it[0], 1.0)
    res = wmmse(inst, WmmseConfig(obj_tol=1e-300, max_iter=3))
    assert np.allclose(it[-1] ** 2, res.p)


def test_config_validation():
    with pytest.raises(ValueError):
        WmmseConfig(obj_tol=0)
    with pytest.raises(ValueError):
        WmmseConfig(max_iter=0)
    with pytest.raises(ValueError):
        wmmse(ic_instance([[1.0]]), WmmseConfig(init=np.array([2.0])))


def test_weights_shift_power_to_favoured_user():
    H = np.array([[1.0, 0.9], [0.9, 1.0]])
    lo = wmmse(ic_instance(H, weights=[1.0, 1.0], p_max=1.0), WmmseConfig(init=np.array([1.0, 0.5]))).p
    hi = wmmse(ic_instance(H, weights=[1.0, 20.0]), WmmseConfig(init=np.array([1.0, 0.5]))).p
    assert hi[1] >= lo[1] - 1e-9


# baselines

def test_max_power():
    assert np.array_equal(allocate_max_power(ic_instance(np.ones((3, 3)))), np.ones(3))


def test_random_allocation_range_and_mean():
    inst = ic_instance(np.ones((4, 4)), p_max=2.0)
    draws = np.stack([allocate_random(inst, s) for s in range(2500)])
    assert draws.min() >= 0 and draws.max() <= 2.0
    assert draws.mean() == pytest.approx(1.0, abs=0.03)


def test_max_power_not_better_than_wmmse_on_average():
    H = np.abs(np.random.default_rng(11).standard_normal((1000, 10, 10)))
    p = wmmse_batch(H, 1.0, 1.0, 1.0).p
    assert sum_rate_batch(H, p, 1.0).mean() >= sum_rate_batch(H, np.ones((1000, 10)), 1.0).mean()


# instances

def test_instance_validation():
    with pytest.raises(ValueError):
        ic_instance([[1.0, 2.0]])
    with pytest.raises(ValueError):
        ic_instance([[-1.0]])
    with pytest.raises(ValueError):
        ic_instance([[1.0]], noise_power=0.0)
    with pytest.raises(ValueError):
        ProblemInstance("IMAC", np.ones((5, 2)), 1.0, 1.0)


def test_imac_effective_channel_uses_home_base_station():
    gains = np.arange(8, dtype=float).reshape(4, 2) + 1  # 4 users, 2 cells
    inst = ProblemInstance("IMAC", gains, 1.0, 1.0)
    H = inst.channel_matrix()
    home = [0, 0, 1, 1]
    for k in range(4):
        for j in range(4):
            assert H[k, j] == gains[j, home[k]]
