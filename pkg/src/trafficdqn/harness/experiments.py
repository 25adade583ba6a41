"""Experiment entry points behind the CLI. Each writes its artifacts into ``cfg.out_dir``."""
from __future__ import annotations

import time
from pathlib import Path

import numpy as np

from ..agent import DqnAgent, train
from ..mdp import (bellman_residual, build_mdp, evaluate_policy, extract_threshold_map,
                   policy_iteration, value_iteration)
from . import io
from .config import ConfigError, ExperimentConfig, dump_config
from .greenwave import compare as compare_reports
from .greenwave import detect_greenwave
from .rollouts import (AgentPolicy, TablePolicy, Trajectory, UniformRandom, baseline, evaluate,
                       make_env, rollout, sweep_fixed_cycle)

METRICS_COLUMNS = ("step", "reward", "loss", "epsilon", "windowed_discounted_return")


def _out(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.atomic_write_text(out / "effective_config.yaml", dump_config(cfg))
    return out


def _require_single(cfg: ExperimentConfig, what: str):
    if cfg.scenario != "single":
        raise ConfigError(f"{what} is only defined for the single intersection; "
                          "the artery state space is far too large to enumerate")


def solve(cfg: ExperimentConfig):
    """Value iteration on the truncated single-intersection MDP, cross-checked by policy iteration."""
    _require_single(cfg, "solve")
    mdp = build_mdp(cfg.env.arrivals(), cfg.solve.cap, cfg.solve.gamma)
    V, Q, P = value_iteration(mdp, cfg.solve.tol, cfg.solve.max_iters)
    _, P_pi, n_improve = policy_iteration(mdp, eval_tol=cfg.solve.tol)
    return mdp, V, Q, P, {"policy_iteration_agrees": bool(np.array_equal(P.actions, P_pi.actions)),
                          "policy_iteration_improvements": n_improve}


def run_solve(cfg: ExperimentConfig) -> dict:
    t0 = time.perf_counter()
    mdp, V, Q, P, check = solve(cfg)
    out = _out(cfg)
    tm = extract_threshold_map(P, bound=cfg.eval.compare_bound)
    rows = [(x1, x2, y, repr(float(V.v[i])), repr(float(Q.q[i, 0])), repr(float(Q.q[i, 1])), int(P.actions[i]))
            for i, (x1, x2, y) in enumerate(mdp.states)]
    io.write_csv(out / "oracle.csv", ("x1", "x2", "y", "value", "q_continue", "q_switch", "action"), rows)
    io.write_json(out / "oracle.json", {
        "cap": mdp.cap, "gamma": mdp.gamma, "p1": cfg.env.p1, "p2": cfg.env.p2,
        "states": [list(s) for s in mdp.states],
        "value": V.v.tolist(), "q": Q.q.tolist(), "action": P.actions.tolist(),
    })
    io.write_json(out / "threshold_map.json", tm.to_json())
    summary = {
        "states": mdp.n_states,
        "bellman_residual": bellman_residual(mdp, V.v),
        "value_at_empty": float(V[(0, 0, 0)]),
        "threshold_monotone": {str(y): tm.monotone[y] for y in range(4)},
        "seconds": time.perf_counter() - t0,
        **check,
    }
    io.write_json(out / "solve_summary.json", summary)
    return summary


def load_oracle(path) -> tuple:
    """``(mdp, values, actions)`` rebuilt from an ``oracle.json``."""
    d = io.read_json(path)
    from ..traffic import ArrivalModel
    mdp = build_mdp(ArrivalModel(d["p1"], d["p2"]), d["cap"], d["gamma"])
    if [list(s) for s in mdp.states] != d["states"]:
        raise ValueError(f"{path}: state enumeration does not match")
    return mdp, np.array(d["value"]), np.array(d["action"], dtype=np.int64)


def load_agent(path, expected_obs_dim: int | None = None) -> DqnAgent:
    agent = DqnAgent.from_json(io.read_json(path))
    if expected_obs_dim is not None and agent.obs_dim != expected_obs_dim:
        raise ValueError(f"checkpoint expects {agent.obs_dim}-dimensional observations, "
                         f"environment produces {expected_obs_dim}")
    return agent


# ---------------------------------------------------------------------------


def metrics_rows(metrics) -> list[tuple]:
    windowed = dict(metrics.window_returns)
    rows = []
    for k, (r, loss, eps) in enumerate(zip(metrics.reward, metrics.loss, metrics.epsilon), start=1):
        rows.append((k, repr(float(r)), "" if loss is None else repr(float(loss)), repr(float(eps)),
                     repr(windowed[k]) if k in windowed else ""))
    return rows


def run_train(cfg: ExperimentConfig, progress=None) -> dict:
    out = _out(cfg)
    env = make_env(cfg, training=True)
    t0 = time.perf_counter()
    agent, metrics = train(env, cfg.train, progress=progress)
    seconds = time.perf_counter() - t0
    io.write_csv(out / "metrics.csv", METRICS_COLUMNS, metrics_rows(metrics))
    io.write_json(out / "checkpoint.json", agent.to_json())
    tail = metrics.window_returns[-10:]
    summary = {"scenario": cfg.scenario, "steps": cfg.train.total_steps,
               "learning_steps": agent.learn_steps, "seconds": seconds,
               "final_windowed_return": float(np.mean([r for _, r in tail])) if tail else None}
    io.write_json(out / "train_summary.json", summary)
    return summary


# ---------------------------------------------------------------------------


def compare_to_oracle(agent: DqnAgent, mdp, values, actions, bound: int = 10) -> dict:
    """Greedy-action agreement on ``x1, x2 <= bound`` and exact cost gaps on the tabular kernel."""
    if agent.obs_dim != 3 or agent.n_intersections != 1:
        raise ValueError(f"single-intersection oracle needs a 3-input, 1-intersection agent; "
                         f"checkpoint has obs_dim={agent.obs_dim}, N={agent.n_intersections}")
    X = np.array(mdp.states, dtype=np.float64)
    greedy = agent.greedy_choices(X)[:, 0]
    region = np.array([x1 <= bound and x2 <= bound for x1, x2, _ in mdp.states])
    v_dqn = evaluate_policy(mdp, greedy)
    i0 = mdp.index[(0, 0, 0)]
    mismatches = [list(mdp.states[i]) for i in np.nonzero(region & (greedy != actions))[0]]
    return {
        "agreement": float(np.mean(greedy[region] == actions[region])),
        "region_states": int(region.sum()),
        "gap_initial": float((values[i0] - v_dqn[i0]) / -values[i0]),
        "gap_region": float((values[region].sum() - v_dqn[region].sum()) / -values[region].sum()),
        "cost_optimal_initial": float(-values[i0]),
        "cost_dqn_initial": float(-v_dqn[i0]),
        "mismatches": mismatches,
    }


def run_compare(cfg: ExperimentConfig, checkpoint, oracle=None) -> dict:
    _require_single(cfg, "compare")
    if oracle is None:
        mdp, V, _, P, _ = solve(cfg)
        values, actions = V.v, P.actions
    else:
        mdp, values, actions = load_oracle(oracle)
    agent = load_agent(checkpoint)
    result = compare_to_oracle(agent, mdp, values, actions, cfg.eval.compare_bound)
    io.write_json(_out(cfg) / "compare.json", result)
    return result


# ---------------------------------------------------------------------------


def run_eval(cfg: ExperimentConfig, checkpoint=None, policies=None, trajectory: bool = True) -> dict:
    """Evaluate the checkpoint (if any) and baselines over paired seeds.

    ``policies`` defaults to always-continue, uniform-random, the fixed-cycle
    sweep and, for the single intersection, the exact optimal policy.
    """
    out = _out(cfg)
    env = make_env(cfg)
    results = {}
    candidates = []
    if checkpoint is not None:
        candidates.append(AgentPolicy(load_agent(checkpoint, env.obs_dim)))
    names = ["always-continue", "uniform-random", "fixed-cycle-sweep"] if policies is None else policies
    if policies is None and cfg.scenario == "single":
        names.append("oracle")
    for name in names:
        if name == "fixed-cycle-sweep":
            best, allres = sweep_fixed_cycle(cfg)
            results["fixed-cycle-sweep"] = {r["policy"]: r["mean_discounted_cost"] for r in allres}
            results["best-fixed-cycle"] = best
        elif name == "oracle":
            _require_single(cfg, "oracle policy")
            candidates.append(TablePolicy(solve(cfg)[3]))
        else:
            candidates.append(baseline(name))
    for pol in candidates:
        results[pol.name] = evaluate(cfg, pol)
    if trajectory and candidates:
        traj = rollout(cfg, candidates[0], cfg.eval.horizon, cfg.eval.seeds[0], cfg.eval.gamma,
                       record=True).trajectory
        io.write_jsonl(out / "trajectory.jsonl", traj.records())
    io.write_json(out / "eval.json", results)
    return results


def run_greenwave(cfg: ExperimentConfig, checkpoint, baseline_name: str = "uniform-random") -> dict:
    """Paired-seed green-wave counts: trained policy against a baseline."""
    if cfg.scenario != "linear":
        raise ConfigError("greenwave detection needs the linear scenario")
    out = _out(cfg)
    env = make_env(cfg)
    agent = AgentPolicy(load_agent(checkpoint, env.obs_dim))
    other = baseline(baseline_name)
    per_seed = []
    for seed in cfg.eval.seeds:
        reports = {}
        for pol in (agent, other):
            traj = rollout(cfg, pol, cfg.eval.greenwave_horizon, seed, cfg.eval.gamma, record=True).trajectory
            reports[pol.name] = detect_greenwave(traj, cfg.env.travel_delay, cfg.eval.min_chain)
        a, b = reports[agent.name], reports[other.name]
        ca, cb = a.counts(), b.counts()
        per_seed.append({"seed": seed, agent.name: ca, other.name: cb, "delta": compare_reports(a, b),
                         "more_chains": ca["chains"] > cb["chains"],
                         "more_reductions": ca["reductions"] > cb["reductions"]})
    summary = {
        "baseline": other.name, "min_chain": cfg.eval.min_chain,
        "hop": cfg.env.travel_delay + 1, "horizon": cfg.eval.greenwave_horizon,
        "seeds_more_chains": sum(r["more_chains"] for r in per_seed),
        "seeds_more_both": sum(r["more_chains"] and r["more_reductions"] for r in per_seed),
        "per_seed": per_seed,
    }
    io.write_json(out / "greenwave.json", summary)
    return summary


def load_trajectory(path, travel_delay: int = 1) -> Trajectory:
    return Trajectory.from_records(io.read_jsonl(path), travel_delay)
