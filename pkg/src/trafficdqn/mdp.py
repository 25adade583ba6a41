"""Truncated single-intersection MDP and exact dynamic-programming solvers."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .traffic import (CONTINUE, SWITCH, ArrivalModel, SingleState, cost,
                      step_single)

N_ACTIONS = 2


class ConvergenceError(RuntimeError):
    pass


@dataclass
class TabularMdp:
    """Finite MDP with ``n_out`` sparse successors per state-action pair.

    ``next_idx[s, a, k]`` / ``probs[s, a, k]`` list successor states and
    their probabilities; ``reward[s, a]`` is the expected one-step reward.
    ``states`` holds ``(x1, x2, y)`` keys for the traffic MDP, and is free
    form for hand-built fixtures.
    """

    states: list
    next_idx: np.ndarray   # (S, A, K) int
    probs: np.ndarray      # (S, A, K) float
    reward: np.ndarray     # (S, A) float
    gamma: float
    cap: int | None = None

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        self.index = {s: i for i, s in enumerate(self.states)}

    @property
    def n_states(self) -> int:
        return len(self.states)

    def backup(self, v: np.ndarray) -> np.ndarray:
        """One Jacobi Bellman backup: Q(s, a) = r(s, a) + gamma E[v(s')]."""
        return self.reward + self.gamma * np.einsum("sak,sak->sa", self.probs, v[self.next_idx])

    def transition_matrix(self, actions: np.ndarray) -> sp.csr_matrix:
        rows = np.arange(self.n_states)
        nxt = self.next_idx[rows, actions]
        pr = self.probs[rows, actions]
        k = nxt.shape[1]
        return sp.csr_matrix((pr.ravel(), (np.repeat(rows, k), nxt.ravel())),
                             shape=(self.n_states, self.n_states))


def build_mdp(arrivals: ArrivalModel, cap: int = 20, gamma: float = 0.99) -> TabularMdp:
    if cap < 1:
        raise ValueError("cap must be >= 1")
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    p = arrivals.p1
    outcomes = [((c1, c2), (p if c1 else 1 - p) * (p if c2 else 1 - p))
                for c1, c2 in itertools.product((0, 1), repeat=2)]
    states = [(x1, x2, y) for x1 in range(cap + 1) for x2 in range(cap + 1) for y in range(4)]
    index = {s: i for i, s in enumerate(states)}
    S = len(states)
    next_idx = np.zeros((S, N_ACTIONS, 4), dtype=np.int64)
    probs = np.zeros((S, N_ACTIONS, 4))
    reward = np.zeros((S, N_ACTIONS))
    for i, key in enumerate(states):
        s = SingleState(*key)
        for a in (CONTINUE, SWITCH):
            for k, ((c1, c2), pr) in enumerate(outcomes):
                s2 = step_single(s, a, c1, c2, cap=cap)
                next_idx[i, a, k] = index[s2.key()]
                probs[i, a, k] = pr
                reward[i, a] -= pr * cost(s2)
    return TabularMdp(states, next_idx, probs, reward, gamma, cap)


@dataclass
class ValueFunction:
    states: list
    v: np.ndarray

    def __getitem__(self, state):
        return float(self.v[self.states.index(state)])


@dataclass
class QTable:
    states: list
    q: np.ndarray  # (S, 2)


@dataclass
class TabularPolicy:
    states: list
    actions: np.ndarray  # (S,) int

    def as_dict(self) -> dict:
        return {s: int(a) for s, a in zip(self.states, self.actions)}


def greedy(q: np.ndarray, tie_tol: float = 0.0) -> np.ndarray:
    """Argmax over actions; Switch only when strictly better by more than ``tie_tol``."""
    return (q[:, SWITCH] > q[:, CONTINUE] + tie_tol).astype(np.int64)


def bellman_residual(mdp: TabularMdp, v: np.ndarray) -> float:
    return float(np.max(np.abs(mdp.backup(v).max(axis=1) - v)))


def value_iteration(mdp: TabularMdp, tol: float = 1e-9, max_iters: int = 100_000,
                    v0: np.ndarray | None = None, history: list | None = None):
    """Jacobi value iteration until the sup-norm Bellman residual is <= ``tol``.

    If ``history`` is a list, the residual of every sweep is appended to it.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    v = np.zeros(mdp.n_states) if v0 is None else np.array(v0, dtype=np.float64)
    for _ in range(max_iters):
        q = mdp.backup(v)
        v_new = q.max(axis=1)
        residual = float(np.max(np.abs(v_new - v)))
        if history is not None:
            history.append(residual)
        v = v_new
        if residual <= tol:
            break
    else:
        raise ConvergenceError(f"value iteration did not reach tol={tol} in {max_iters} sweeps")
    # v now differs from the fixed point of its own backup by at most gamma * tol
    q = mdp.backup(v)
    v = q.max(axis=1)
    return (ValueFunction(mdp.states, v), QTable(mdp.states, q),
            TabularPolicy(mdp.states, greedy(q, _tie_tol(mdp, tol))))


def _tie_tol(mdp: TabularMdp, tol: float) -> float:
    # Q-values from two solvers agree to ~tol / (1 - gamma); differences
    # below this are treated as ties and resolved toward Continue.
    return 10 * tol / (1 - mdp.gamma)


def evaluate_policy(mdp: TabularMdp, actions: np.ndarray) -> np.ndarray:
    """Exact discounted value of a deterministic policy by a sparse linear solve."""
    actions = np.asarray(actions, dtype=np.int64)
    P = mdp.transition_matrix(actions)
    r = mdp.reward[np.arange(mdp.n_states), actions]
    A = sp.identity(mdp.n_states, format="csc") - mdp.gamma * P.tocsc()
    return spla.spsolve(A, r)


def policy_iteration(mdp: TabularMdp, eval_tol: float = 1e-9, max_iters: int = 1000,
                     initial: np.ndarray | None = None):
    """Howard policy iteration with exact evaluation.

    Improvement uses the same Continue-favouring tie rule as
    :func:`value_iteration`, so the two solvers are directly comparable.
    Returns ``(ValueFunction, TabularPolicy, n_improvements)``.
    """
    if eval_tol <= 0:
        raise ValueError("eval_tol must be positive")
    actions = (np.zeros(mdp.n_states, dtype=np.int64) if initial is None
               else np.asarray(initial, dtype=np.int64).copy())
    seen = set()
    for it in range(1, max_iters + 1):
        v = evaluate_policy(mdp, actions)
        # one more backup through the linear system removes solve round-off
        new = greedy(mdp.backup(v), _tie_tol(mdp, eval_tol))
        if np.array_equal(new, actions):
            return ValueFunction(mdp.states, v), TabularPolicy(mdp.states, actions), it
        sig = new.tobytes()
        if sig in seen:
            raise ConvergenceError("policy improvement cycled; transition kernel is suspect")
        seen.add(sig)
        actions = new
    raise ConvergenceError(f"policy iteration did not stabilise in {max_iters} improvements")


@dataclass
class ThresholdMap:
    """Switch regions of a single-intersection policy, one per phase."""

    cap: int
    switch_sets: dict      # phase -> sorted list of (x1, x2)
    monotone: dict         # phase -> bool
    boundary: dict         # phase -> {own queue: smallest competing queue that switches}

    def to_json(self) -> dict:
        return {
            "cap": self.cap,
            "phases": {
                str(y): {
                    "switch": [list(p) for p in self.switch_sets[y]],
                    "monotone": self.monotone[y],
                    "boundary": {str(k): v for k, v in self.boundary[y].items()},
                }
                for y in range(4)
            },
        }


def _own_competing(y: int, x1: int, x2: int) -> tuple[int, int]:
    # phases 0/1 belong to direction 1, phases 2/3 to direction 2
    return (x1, x2) if y in (0, 1) else (x2, x1)


def extract_threshold_map(policy: TabularPolicy, bound: int | None = None) -> ThresholdMap:
    """Per-phase Switch regions and a monotonicity verdict.

    With ``bound`` set, only states with both queues ``<= bound`` are
    considered; rows near a truncation cap are distorted by dropped arrivals.
    """
    act = policy.as_dict()
    if bound is not None:
        act = {s: a for s, a in act.items() if s[0] <= bound and s[1] <= bound}
    cap = max(max(s[0], s[1]) for s in act)
    switch_sets, monotone, boundary = {}, {}, {}
    for y in range(4):
        sw = sorted((x1, x2) for (x1, x2, yy), a in act.items() if yy == y and a == SWITCH)
        switch_sets[y] = sw
        swset = set(sw)
        ok = True
        for x1, x2 in sw:
            own, comp = _own_competing(y, x1, x2)
            for own2 in range(own + 1):
                for comp2 in range(comp, cap + 1):
                    pt = (own2, comp2) if y in (0, 1) else (comp2, own2)
                    if (pt[0], pt[1], y) in act and pt not in swset:
                        ok = False
                        break
                if not ok:
                    break
            if not ok:
                break
        monotone[y] = ok
        bnd = {}
        for x1, x2 in sw:
            own, comp = _own_competing(y, x1, x2)
            bnd[own] = min(bnd.get(own, comp), comp)
        boundary[y] = dict(sorted(bnd.items()))
    return ThresholdMap(cap, switch_sets, monotone, boundary)
