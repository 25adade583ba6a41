"""Frozen-policy rollouts, baseline policies and evaluation summaries.

Every rollout draws arrivals from a stream derived only from the evaluation
seed, so two policies evaluated on the same seed see identical arrivals.
Policy randomness comes from a second, independent stream.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial

import numpy as np

from ..agent import DqnAgent
from ..mdp import TabularPolicy
from ..traffic import (CONTINUE, SWITCH, LinearArteryEnv, SingleIntersectionEnv,
                       departures_single)


def make_env(cfg, training: bool = False):
    """Fresh environment for an :class:`ExperimentConfig` (``training`` applies ``train_queue_cap``)."""
    if cfg.scenario == "single":
        return SingleIntersectionEnv(cfg.env.arrivals(), cfg.env.cap(training))
    return LinearArteryEnv(cfg.env.linear(training))


def paired_rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    arrivals, policy = np.random.SeedSequence([seed, 7919]).spawn(2)
    return np.random.default_rng(arrivals), np.random.default_rng(policy)


# ---------------------------------------------------------------------------
# policies: reset(n, rng) once per rollout, then act(obs, env) each slot


class AlwaysContinue:
    name = "always-continue"

    def reset(self, n, rng):
        self.n = n

    def act(self, obs, env):
        return CONTINUE if self.n == 1 else np.zeros(self.n, dtype=np.int64)


class UniformRandom:
    name = "uniform-random"

    def reset(self, n, rng):
        self.n, self.rng = n, rng

    def act(self, obs, env):
        a = self.rng.integers(0, 2, size=self.n)
        return int(a[0]) if self.n == 1 else a


class FixedCycle:
    """Hold green for ``g1``/``g2`` slots and yellow for one slot, synchronised across intersections."""

    def __init__(self, g1: int, g2: int | None = None):
        self.g1, self.g2 = g1, g1 if g2 is None else g2
        self.name = f"fixed-cycle:{self.g1}" if self.g1 == self.g2 else f"fixed-cycle:{self.g1},{self.g2}"
        self.durations = (self.g1, 1, self.g2, 1)

    def reset(self, n, rng):
        self.n = n
        self.dwell = np.zeros(n, dtype=np.int64)

    def act(self, obs, env):
        phases = env.phases()
        self.dwell += 1
        limit = np.array([self.durations[y] for y in phases])
        a = (self.dwell >= limit).astype(np.int64)
        self.dwell[a == SWITCH] = 0
        return int(a[0]) if self.n == 1 else a


class AgentPolicy:
    def __init__(self, agent: DqnAgent, name: str = "dqn"):
        self.agent, self.name = agent, name

    def reset(self, n, rng):
        pass

    def act(self, obs, env):
        return self.agent.to_env_action(self.agent.greedy_choices(obs))


class TablePolicy:
    """Single-intersection lookup policy; queues beyond the table cap are clamped."""

    def __init__(self, policy: TabularPolicy, name: str = "oracle"):
        self.table = policy.as_dict()
        self.cap = max(max(s[0], s[1]) for s in self.table)
        self.name = name

    def reset(self, n, rng):
        if n != 1:
            raise ValueError("tabular policy is defined for the single intersection only")

    def act(self, obs, env):
        x1, x2, y = (int(v) for v in obs)
        return self.table[(min(x1, self.cap), min(x2, self.cap), y)]


def baseline(name: str):
    if name == "always-continue":
        return AlwaysContinue()
    if name == "uniform-random":
        return UniformRandom()
    if name.startswith("fixed-cycle:"):
        greens = [int(g) for g in name.split(":", 1)[1].split(",")]
        return FixedCycle(*greens)
    raise ValueError(f"unknown baseline {name!r}")


# ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    """Per-slot record. ``queues``/``phases`` hold ``T + 1`` states; the rest ``T`` slots.

    Single-intersection queues are stored as ``[x1, x2, 0, 0]``.
    """

    queues: np.ndarray      # (T + 1, N, 4)
    phases: np.ndarray      # (T + 1, N)
    actions: np.ndarray     # (T, N)
    arrivals: np.ndarray    # (T, N, 4) external arrivals
    departures: np.ndarray  # (T, N, 4)
    travel_delay: int = 1

    @property
    def steps(self) -> int:
        return len(self.actions)

    def records(self) -> list[dict]:
        out = []
        for t in range(self.steps):
            out.append({"t": t, "phases": self.phases[t].tolist(), "queues": self.queues[t].tolist(),
                        "actions": self.actions[t].tolist(), "arrivals": self.arrivals[t].tolist(),
                        "departures": self.departures[t].tolist()})
        out.append({"t": self.steps, "phases": self.phases[-1].tolist(),
                    "queues": self.queues[-1].tolist()})
        return out

    @classmethod
    def from_records(cls, records: list[dict], travel_delay: int = 1) -> Trajectory:
        steps = [r for r in records if "actions" in r]
        return cls(np.array([r["queues"] for r in records], dtype=np.int64),
                   np.array([r["phases"] for r in records], dtype=np.int64),
                   np.array([r["actions"] for r in steps], dtype=np.int64).reshape(len(steps), -1),
                   np.array([r["arrivals"] for r in steps], dtype=np.int64),
                   np.array([r["departures"] for r in steps], dtype=np.int64),
                   travel_delay)


def _queue_block(env) -> np.ndarray:
    q = env.queue_matrix()
    if q.shape[1] == 4:
        return q
    out = np.zeros((1, 4), dtype=np.int64)
    out[0, :2] = q[0]
    return out


@dataclass
class RolloutResult:
    discounted_cost: float
    mean_total_queue: float
    phase_occupancy: np.ndarray   # (N, 4) fraction of slots in each phase
    trajectory: Trajectory | None = None


def rollout(cfg, policy, horizon: int, seed: int, gamma: float = 0.99,
            record: bool = False) -> RolloutResult:
    """Run ``policy`` for ``horizon`` slots from the empty state.

    The discounted cost is ``sum_t gamma**t * F(X(t + 1))``, the same
    convention as the tabular value function.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    env = make_env(cfg)
    arrival_rng, policy_rng = paired_rngs(seed)
    obs = env.reset()
    n = env.n_intersections
    policy.reset(n, policy_rng)
    occupancy = np.zeros((n, 4))
    disc, total_q, g = 0.0, 0.0, 1.0
    if record:
        Q = np.zeros((horizon + 1, n, 4), dtype=np.int64)
        Y = np.zeros((horizon + 1, n), dtype=np.int64)
        A = np.zeros((horizon, n), dtype=np.int64)
        C = np.zeros((horizon, n, 4), dtype=np.int64)
        D = np.zeros((horizon, n, 4), dtype=np.int64)
        Q[0], Y[0] = _queue_block(env), env.phases()
    for t in range(horizon):
        phases = env.phases()
        occupancy[np.arange(n), phases] += 1
        action = policy.act(obs, env)
        arrivals = env.sample(arrival_rng)
        if record and n == 1:
            d = departures_single(env.state)
        obs, r = env.step(action, arrivals)
        disc -= g * r
        g *= gamma
        total_q += float(env.queue_matrix().sum())
        if record:
            Q[t + 1], Y[t + 1] = _queue_block(env), env.phases()
            A[t] = np.asarray(action).reshape(-1)
            if n == 1:
                C[t, 0, :2] = arrivals
                D[t, 0, :2] = d
            else:
                C[t], D[t] = arrivals, env.last_departures
    traj = None
    if record:
        u = getattr(getattr(env, "cfg", None), "travel_delay", 1)
        traj = Trajectory(Q, Y, A, C, D, u)
    return RolloutResult(disc, total_q / horizon, occupancy / horizon, traj)


def _rollout_summary(seed, cfg, policy, horizon, gamma):
    res = rollout(cfg, policy, horizon, seed, gamma)
    return {"seed": seed, "discounted_cost": res.discounted_cost,
            "mean_total_queue": res.mean_total_queue,
            "phase_occupancy": res.phase_occupancy.tolist()}


def evaluate(cfg, policy, seeds=None, horizon=None, gamma=None, workers=None) -> dict:
    """Evaluate a frozen policy over paired seeds; parallel across seeds if ``workers > 1``."""
    seeds = list(cfg.eval.seeds if seeds is None else seeds)
    horizon = cfg.eval.horizon if horizon is None else horizon
    gamma = cfg.eval.gamma if gamma is None else gamma
    workers = cfg.eval.workers if workers is None else workers
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    job = partial(_rollout_summary, cfg=cfg, policy=policy, horizon=horizon, gamma=gamma)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            per_seed = list(ex.map(job, seeds))
    else:
        per_seed = [job(s) for s in seeds]
    return {
        "policy": getattr(policy, "name", type(policy).__name__),
        "scenario": cfg.scenario,
        "horizon": horizon,
        "gamma": gamma,
        "mean_discounted_cost": float(np.mean([r["discounted_cost"] for r in per_seed])),
        "mean_total_queue": float(np.mean([r["mean_total_queue"] for r in per_seed])),
        "phase_occupancy": np.mean([r["phase_occupancy"] for r in per_seed], axis=0).tolist(),
        "per_seed": per_seed,
    }


def sweep_fixed_cycle(cfg, greens=None, **kw) -> tuple[dict, list[dict]]:
    """Evaluate fixed cycles with ``g1 = g2 = g`` for each ``g``; return (best, all)."""
    greens = cfg.eval.fixed_cycle_greens if greens is None else greens
    results = [evaluate(cfg, FixedCycle(g), **kw) for g in greens]
    return min(results, key=lambda r: r["mean_discounted_cost"]), results
