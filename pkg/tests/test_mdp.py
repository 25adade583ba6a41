import itertools

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from trafficdqn.mdp import (ConvergenceError, TabularMdp, TabularPolicy, bellman_residual,
                            build_mdp, evaluate_policy, extract_threshold_map,
                            policy_iteration, value_iteration)
from trafficdqn.traffic import ArrivalModel, phase_step


def two_state_chain(gamma=0.9):
    """Deterministic chain: action 0 stays, action 1 moves to the other state.

    Rewards: staying in A costs 1, staying in B costs 3, moving costs 2.
    """
    nxt = np.array([[[0], [1]], [[1], [0]]])
    probs = np.ones((2, 2, 1))
    reward = np.array([[-1.0, -2.0], [-3.0, -2.0]])
    return TabularMdp(["A", "B"], nxt, probs, reward, gamma)


def brute_force_values(mdp, horizon=200):
    """Best discounted return over every stationary deterministic policy, by simulation."""
    best = np.full(mdp.n_states, -np.inf)
    for pol in itertools.product(range(2), repeat=mdp.n_states):
        for s0 in range(mdp.n_states):
            s, total = s0, 0.0
            for t in range(horizon):
                a = pol[s]
                total += mdp.gamma ** t * mdp.reward[s, a]
                s = mdp.next_idx[s, a, 0]
            best[s0] = max(best[s0], total)
    return best


@pytest.fixture(scope="module")
def base_mdp():
    return build_mdp(ArrivalModel(0.25, 0.25), cap=20, gamma=0.99)


@pytest.fixture(scope="module")
def base_solution(base_mdp):
    return value_iteration(base_mdp, tol=1e-9)


def test_two_state_chain_matches_brute_force():
    mdp = two_state_chain()
    V, Q, P = value_iteration(mdp, tol=1e-12)
    assert_allclose(V.v, brute_force_values(mdp), atol=1e-6)
    V2, P2, _ = policy_iteration(mdp, eval_tol=1e-12)
    assert_array_equal(P.actions, P2.actions)
    assert_array_equal(P.actions, [0, 1])


def test_myopic_limit(base_mdp):
    mdp = build_mdp(ArrivalModel(0.25, 0.25), cap=5, gamma=1e-12)
    V, _, _ = value_iteration(mdp, tol=1e-12)
    assert_allclose(V.v, mdp.reward.max(axis=1), atol=1e-9)


def test_build_rejects_gamma():
    with pytest.raises(ValueError):
        build_mdp(ArrivalModel(), cap=3, gamma=1.0)
    with pytest.raises(ValueError):
        build_mdp(ArrivalModel(), cap=0)


def test_no_arrivals_kernel():
    mdp = build_mdp(ArrivalModel(0.0, 0.0), cap=1, gamma=0.9)
    for y in range(4):
        i = mdp.index[(0, 0, y)]
        for a in (0, 1):
            succ = {mdp.states[j] for j, p in zip(mdp.next_idx[i, a], mdp.probs[i, a]) if p > 0}
            assert succ == {(0, 0, phase_step(y, a))}
            assert mdp.reward[i, a] == 0.0


def test_kernel_shape(base_mdp):
    assert base_mdp.n_states == 21 * 21 * 4 == 1764
    assert_allclose(base_mdp.probs.sum(axis=2), 1.0, atol=1e-12)
    assert (base_mdp.reward <= 0).all()
    expected = sorted([9 / 16, 3 / 16, 3 / 16, 1 / 16])
    for row in base_mdp.probs.reshape(-1, 4):
        assert_allclose(sorted(row), expected)


def test_value_iteration_converges(base_mdp, base_solution):
    V, Q, P = base_solution
    assert bellman_residual(base_mdp, V.v) <= 1e-9
    assert np.max(np.abs(V.v - Q.q.max(axis=1))) <= 1e-9


def test_value_iteration_reports_nonconvergence(base_mdp):
    with pytest.raises(ConvergenceError):
        value_iteration(base_mdp, tol=1e-9, max_iters=5)


def test_contraction(base_mdp):
    h = []
    value_iteration(base_mdp, tol=1e-6, history=h)
    hist = np.array(h)
    # absolute slack covers round-off on values of order 1e5
    assert (hist[1:] <= base_mdp.gamma * hist[:-1] + 1e-10).all()


def test_policy_iteration_agrees(base_mdp, base_solution):
    V, _, P = base_solution
    V2, P2, _ = policy_iteration(base_mdp, eval_tol=1e-9)
    assert_array_equal(P.actions, P2.actions)
    assert np.max(np.abs(V.v - V2.v)) <= 10 * 1e-9 / (1 - base_mdp.gamma)


def test_policy_iteration_zero_arrivals():
    mdp = build_mdp(ArrivalModel(0.0, 0.0), cap=2, gamma=0.9)
    V, P, _ = policy_iteration(mdp, eval_tol=1e-9)
    i0 = [mdp.index[(0, 0, y)] for y in range(4)]
    assert_allclose(V.v[i0], 0.0, atol=1e-12)
    # restarting from the returned policy stops after a single improvement
    assert policy_iteration(mdp, eval_tol=1e-9, initial=P.actions)[2] == 1


def test_evaluate_policy_fixed_point(base_mdp, base_solution):
    V, _, P = base_solution
    assert_allclose(evaluate_policy(base_mdp, P.actions), V.v, atol=1e-6)


def test_yellow_always_switches_when_traffic_waits(base_solution):
    act = base_solution[2].as_dict()
    for (x1, x2, y), a in act.items():
        if y in (1, 3) and x1 + x2 > 0:
            assert a == 1


def test_mirror_symmetry(base_mdp, base_solution):
    V, _, P = base_solution
    act = P.as_dict()
    for (x1, x2, y) in base_mdp.states:
        ym = (y + 2) % 4
        assert act[(x1, x2, y)] == act[(x2, x1, ym)]
        assert abs(V.v[base_mdp.index[(x1, x2, y)]] - V.v[base_mdp.index[(x2, x1, ym)]]) <= 1e-8


def test_truncation_insensitivity(base_solution):
    act20 = base_solution[2].as_dict()
    act30 = value_iteration(build_mdp(ArrivalModel(0.25, 0.25), cap=30, gamma=0.99), tol=1e-9)[2].as_dict()
    for (x1, x2, y), a in act20.items():
        if x1 <= 10 and x2 <= 10:
            assert act30[(x1, x2, y)] == a


def test_threshold_map_all_continue():
    states = [(x1, x2, y) for x1 in range(3) for x2 in range(3) for y in range(4)]
    tm = extract_threshold_map(TabularPolicy(states, np.zeros(len(states), dtype=int)))
    assert all(tm.switch_sets[y] == [] for y in range(4))
    assert all(tm.monotone.values())


def test_threshold_map_detects_non_monotone():
    states = [(x1, x2, y) for x1 in range(3) for x2 in range(3) for y in range(4)]
    acts = np.array([1 if s == (0, 1, 0) else 0 for s in states])
    tm = extract_threshold_map(TabularPolicy(states, acts))
    assert not tm.monotone[0]
    assert tm.monotone[2]


def test_threshold_map_default_policy(base_solution):
    tm = extract_threshold_map(base_solution[2], bound=10)
    assert tm.monotone[0] and tm.monotone[2]
    # direction-1 green with an empty queue switches as soon as direction 2 waits
    assert tm.boundary[0][0] == 1
    for y in (0, 2):
        for x1, x2 in tm.switch_sets[y]:
            assert (x2, x1) in tm.switch_sets[(y + 2) % 4]
