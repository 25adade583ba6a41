"""Acceptance checks, one group per criterion; a PASS/FAIL line per criterion is printed at the end.

The DQN criteria train from scratch with the shipped configs, so this module
takes several minutes (single intersection) plus the artery training run.
"""
import itertools
import json
import time
from pathlib import Path

import numpy as np
import pytest

from trafficdqn import nn
from trafficdqn.agent import DqnAgent
from trafficdqn.harness import io
from trafficdqn.harness.config import load_config
from trafficdqn.harness.experiments import compare_to_oracle, load_agent, run_eval, run_train
from trafficdqn.harness.greenwave import detect_greenwave
from trafficdqn.harness.rollouts import AgentPolicy, UniformRandom, evaluate, rollout, sweep_fixed_cycle
from trafficdqn.mdp import (TabularMdp, bellman_residual, build_mdp, extract_threshold_map,
                            policy_iteration, value_iteration)
from trafficdqn.traffic import (GREEN_1, GREEN_2, ArrivalModel, LinearArteryEnv, LinearConfig,
                                departures_linear, external_mask)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
criterion = pytest.mark.criterion


@pytest.fixture(scope="module")
def oracle():
    mdp = build_mdp(ArrivalModel(0.25, 0.25), cap=20, gamma=0.99)
    t0 = time.perf_counter()
    V, Q, P = value_iteration(mdp, tol=1e-9)
    return mdp, V, Q, P, time.perf_counter() - t0


@pytest.fixture(scope="module")
def single_run(tmp_path_factory):
    cfg = load_config(CONFIGS / "single.yaml", out_dir=str(tmp_path_factory.mktemp("single")))
    t0 = time.perf_counter()
    run_train(cfg)
    return cfg, load_agent(Path(cfg.out_dir) / "checkpoint.json"), time.perf_counter() - t0


@pytest.fixture(scope="module")
def linear_run(tmp_path_factory):
    cfg = load_config(CONFIGS / "linear.yaml", out_dir=str(tmp_path_factory.mktemp("linear")))
    t0 = time.perf_counter()
    run_train(cfg)
    return cfg, load_agent(Path(cfg.out_dir) / "checkpoint.json"), time.perf_counter() - t0


# -- 1 -----------------------------------------------------------------------

C1 = (1, "exact-solver correctness")


@criterion(*C1)
def test_solver_matches_brute_force_on_two_state_chain(record_property):
    nxt = np.array([[[0], [1]], [[1], [0]]])
    mdp = TabularMdp(["A", "B"], nxt, np.ones((2, 2, 1)), np.array([[-1.0, -2.0], [-3.0, -2.0]]), 0.9)
    V, _, _ = value_iteration(mdp, tol=1e-12)
    best = np.full(2, -np.inf)
    for pol in itertools.product(range(2), repeat=2):
        for s0 in range(2):
            s, total = s0, 0.0
            for t in range(200):
                total += 0.9 ** t * mdp.reward[s, pol[s]]
                s = nxt[s, pol[s], 0]
            best[s0] = max(best[s0], total)
    err = float(np.max(np.abs(V.v - best)))
    record_property("measured", f"two-state chain |V - brute force| = {err:.2e} (tol 1e-6)")
    assert err <= 1e-6


@criterion(*C1)
def test_vi_and_pi_agree_on_traffic_mdp(oracle, record_property):
    mdp, V, _, P, vi_seconds = oracle
    t0 = time.perf_counter()
    _, P2, _ = policy_iteration(mdp, eval_tol=1e-9)
    seconds = vi_seconds + time.perf_counter() - t0
    res = bellman_residual(mdp, V.v)
    same = int(np.sum(P.actions == P2.actions))
    record_property("measured", f"{mdp.n_states} states, VI/PI identical actions {same}/{mdp.n_states}, "
                                f"residual {res:.2e}, {seconds:.2f}s")
    assert mdp.n_states == 1764
    assert same == mdp.n_states
    assert res <= 1e-9
    assert seconds <= 60


# -- 2 -----------------------------------------------------------------------

C2 = (2, "threshold structure of the exact policy")


@criterion(*C2)
def test_optimal_policy_is_exhaustive(oracle, record_property):
    mdp, _, Q, P, _ = oracle
    act = P.as_dict()
    bad = [s for s in mdp.states
           if (s[2] == GREEN_1 and s[0] > 0 or s[2] == GREEN_2 and s[1] > 0) and act[s] != 0]
    record_property("measured", f"green-phase states with own queue > 0 that Switch: {len(bad)}"
                                + (f", e.g. {bad[:4]}" if bad else ""))
    assert bad == []


@criterion(*C2)
def test_switch_boundary_is_monotone(oracle, record_property):
    tm = extract_threshold_map(oracle[3], bound=10)
    record_property("measured", f"monotone per phase (queues <= 10): {tm.monotone}; "
                                f"phase-0 boundary {tm.boundary[0]}")
    assert all(tm.monotone.values())


@criterion(*C2)
def test_mirror_symmetry(oracle, record_property):
    mdp, V, _, P, _ = oracle
    act = P.as_dict()
    mismatched = sum(act[(x1, x2, y)] != act[(x2, x1, (y + 2) % 4)] for x1, x2, y in mdp.states)
    dv = max(abs(V[(x1, x2, y)] - V[(x2, x1, (y + 2) % 4)]) for x1, x2, y in mdp.states)
    record_property("measured", f"mirror mismatches {mismatched}, max value difference {dv:.1e}")
    assert mismatched == 0
    assert dv <= 1e-8


# -- 3 -----------------------------------------------------------------------

C3 = (3, "DQN matches the exact optimal policy")


@criterion(*C3)
def test_dqn_matches_oracle(single_run, oracle, record_property):
    cfg, agent, seconds = single_run
    mdp, V, _, P, _ = oracle
    res = compare_to_oracle(agent, mdp, V.v, P.actions, bound=10)
    record_property("measured", f"agreement {res['agreement']:.4f} on {res['region_states']} states, "
                                f"cost gap from empty {res['gap_initial']:.4%}, "
                                f"region-average gap {res['gap_region']:.4%}, training {seconds:.0f}s")
    assert res["agreement"] >= 0.95
    assert res["gap_initial"] <= 0.02
    assert seconds <= 15 * 60


# -- 4 -----------------------------------------------------------------------

C4 = (4, "gradient and optimizer correctness")


def _fd_check(dims, seed):
    rng = np.random.default_rng(seed)
    net = nn.init_mlp(dims, seed)
    for b in net.biases:
        b[:] = rng.normal(0, 0.1, size=b.shape)
    x, a, y = rng.normal(size=dims[0]), int(rng.integers(dims[-1])), float(rng.normal())
    _, grads = nn.loss_and_gradients(net, x, a, y)
    worst, h = 0.0, 1e-5
    for p, g in zip(net.params(), grads):
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            up = (y - nn.forward(net, x)[a]) ** 2
            p[idx] = orig - h
            down = (y - nn.forward(net, x)[a]) ** 2
            p[idx] = orig
            num = (up - down) / (2 * h)
            scale = max(abs(num), abs(g[idx]))
            if scale >= 1e-3:
                worst = max(worst, abs(num - g[idx]) / scale)
            else:
                assert abs(num - g[idx]) <= 1e-6
    return worst


@criterion(*C4)
def test_finite_difference_gradients(record_property):
    t0 = time.perf_counter()
    worst = {dims: _fd_check(dims, i) for i, dims in enumerate([(3, 2), (5, 4, 2), (3, 200, 100, 40, 2)])}
    seconds = time.perf_counter() - t0
    record_property("measured", "max relative error " + ", ".join(
        f"{'/'.join(map(str, d))}: {w:.1e}" for d, w in worst.items()) + f" ({seconds:.0f}s)")
    assert all(w < 1e-4 for w in worst.values())
    assert seconds <= 60


@criterion(*C4)
def test_adam_first_step(record_property):
    net = nn.Mlp([np.array([[0.0]])], [np.array([0.0])], [nn.IDENTITY])
    opt = nn.AdamState.for_net(net, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8)
    nn.adam_step(net, opt, [np.array([[1.0]]), np.array([0.0])])
    err = abs(net.weights[0][0, 0] - (-1e-3 / (1 + 1e-8)))
    record_property("measured", f"Adam first step |error| = {err:.1e}")
    assert err <= 1e-12


# -- 5 -----------------------------------------------------------------------

C5 = (5, "dynamics conservation")


@criterion(*C5)
def test_conservation_under_random_policy(record_property):
    t0 = time.perf_counter()
    env = LinearArteryEnv(LinearConfig(4, 1, ArrivalModel(0.25, 0.125)))
    env.reset()
    rng = np.random.default_rng(2024)
    mask = external_mask(4)
    violations = 0
    for _ in range(100_000):
        s = env.state
        expected = departures_linear(s)
        arrivals = env.sample(rng)
        env.step(rng.integers(0, 2, size=4), arrivals)
        dep = env.last_departures
        violations += not np.array_equal(dep, expected)
        violations += bool(np.any(dep > 1) or np.any(s.queues < 0) or np.any(arrivals[~mask] != 0))
        violations += s.arrived != s.exited + s.dropped + int(s.queues.sum()) + s.in_transit()
    seconds = time.perf_counter() - t0
    record_property("measured", f"1e5 steps, {violations} invariant violations, {seconds:.1f}s")
    assert violations == 0
    assert seconds <= 60


# -- 6 -----------------------------------------------------------------------

C6 = (6, "artery agent beats uniform-random and the best fixed cycle")


@criterion(*C6)
def test_linear_agent_beats_baselines(linear_run, record_property):
    cfg, agent, seconds = linear_run
    seeds = list(range(10))
    dqn = evaluate(cfg, AgentPolicy(agent), seeds=seeds)
    rnd = evaluate(cfg, UniformRandom(), seeds=seeds)
    best, _ = sweep_fixed_cycle(cfg, seeds=seeds)
    record_property("measured", f"mean discounted cost: dqn {dqn['mean_discounted_cost']:.1f}, "
                                f"uniform-random {rnd['mean_discounted_cost']:.1f}, "
                                f"{best['policy']} {best['mean_discounted_cost']:.1f}; training {seconds:.0f}s")
    assert dqn["mean_discounted_cost"] < rnd["mean_discounted_cost"]
    assert dqn["mean_discounted_cost"] < best["mean_discounted_cost"]
    assert seconds <= 2 * 3600


# -- 7 -----------------------------------------------------------------------

C7 = (7, "green-wave emergence")


@criterion(*C7)
def test_greenwave_emergence(linear_run, record_property):
    cfg, agent, _ = linear_run
    wins, lines = 0, []
    for seed in range(10):
        counts = []
        for pol in (AgentPolicy(agent), UniformRandom()):
            traj = rollout(cfg, pol, 10_000, seed, record=True).trajectory
            counts.append(detect_greenwave(traj, cfg.env.travel_delay, 3).counts())
        a, b = counts
        win = a["chains"] > b["chains"] and a["reductions"] > b["reductions"]
        wins += win
        lines.append(f"{a['chains']}/{b['chains']},{a['reductions']}/{b['reductions']}")
    record_property("measured", f"seeds where dqn beats random on both counts: {wins}/10 "
                                f"(chains dqn/random, reductions dqn/random: {' '.join(lines)})")
    assert wins >= 8


# -- 8 -----------------------------------------------------------------------

C8 = (8, "reproducibility")


@criterion(*C8)
def test_train_and_eval_reruns_are_bit_identical(tmp_path, record_property):
    over = ["train.total_steps=1500", "train.warmup=200", "train.hidden=[32, 16]",
            "train.metrics_window=100", "eval.seeds=[0, 1, 2]", "eval.horizon=300",
            "eval.fixed_cycle_greens=[2, 3]"]
    digests = []
    for name in ("a", "b"):
        cfg = load_config(CONFIGS / "linear.yaml", over, seed=5, out_dir=str(tmp_path / name))
        run_train(cfg)
        run_eval(cfg, tmp_path / name / "checkpoint.json")
        digests.append({f: (tmp_path / name / f).read_bytes()
                        for f in ("metrics.csv", "checkpoint.json", "eval.json", "trajectory.jsonl")})
    same = [f for f in digests[0] if digests[0][f] == digests[1][f]]
    record_property("measured", f"bit-identical across reruns: {', '.join(same)}")
    assert len(same) == 4


@criterion(*C8)
def test_checkpoint_round_trip(single_run, tmp_path, record_property):
    _, agent, _ = single_run
    io.write_json(tmp_path / "ck.json", agent.to_json())
    loaded = DqnAgent.from_json(io.read_json(tmp_path / "ck.json"))
    exact = all(np.array_equal(p, q) for p, q in zip(agent.eval_net.params() + agent.target_net.params(),
                                                     loaded.eval_net.params() + loaded.target_net.params()))
    rng = np.random.default_rng(0)
    states = np.column_stack([rng.integers(0, 40, size=(1000, 2)), rng.integers(0, 4, size=1000)])
    agree = int(np.sum(agent.greedy_choices(states) == loaded.greedy_choices(states)))
    again = json.dumps(loaded.to_json()) == json.dumps(agent.to_json())
    record_property("measured", f"parameters bit-exact {exact}, re-serialised identical {again}, "
                                f"greedy actions identical on {agree}/1000 states")
    assert exact and again and agree == 1000
