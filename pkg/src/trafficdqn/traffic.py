"""Discrete-time traffic dynamics for a single intersection and a linear artery.

Phases cycle ``0 -> 1 -> 2 -> 3 -> 0``:

* 0: green for direction 1 (artery), red for direction 2
* 1: yellow for direction 1
* 2: green for direction 2 (cross street)
* 3: yellow for direction 2

Within a slot the order is: departures from the pre-step phase and queues,
then arrivals, then the phase advances by the action.

Artery directions on the linear topology are indexed ``0..3`` for the conventional
directions ``1..4``: eastbound, southbound, westbound, northbound.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CONTINUE = 0
SWITCH = 1

GREEN_1, YELLOW_1, GREEN_2, YELLOW_2 = 0, 1, 2, 3
N_PHASES = 4

EAST, SOUTH, WEST, NORTH = 0, 1, 2, 3


def phase_step(y: int, a: int) -> int:
    return (y + a) % N_PHASES


@dataclass(frozen=True)
class ArrivalModel:
    """Bernoulli arrival probabilities.

    ``p1`` drives the artery end points (both flows of the single
    intersection), ``p2`` drives the cross streets of the linear topology.
    """

    p1: float = 0.25
    p2: float = 0.125

    def __post_init__(self):
        for name in ("p1", "p2"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")


@dataclass(frozen=True)
class SingleState:
    x1: int = 0
    x2: int = 0
    y: int = GREEN_1
    # arrivals dropped at a capped queue; not part of the Markov state
    overflow: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.x1 < 0 or self.x2 < 0:
            raise ValueError(f"negative queue in {self}")
        if self.y not in (0, 1, 2, 3):
            raise ValueError(f"phase must be in 0..3, got {self.y}")

    def key(self) -> tuple[int, int, int]:
        return (self.x1, self.x2, self.y)


def departures_single(s: SingleState) -> tuple[int, int]:
    d1 = min(1, s.x1) if s.y == GREEN_1 else 0
    d2 = min(1, s.x2) if s.y == GREEN_2 else 0
    return d1, d2


def step_single(s: SingleState, a: int, c1: int, c2: int,
                cap: int | None = None) -> SingleState:
    """Advance one slot. Returns a new state; ``s`` is left untouched."""
    if c1 not in (0, 1) or c2 not in (0, 1):
        raise ValueError(f"arrivals must be 0/1, got ({c1}, {c2})")
    d1, d2 = departures_single(s)
    x1 = s.x1 + c1 - d1
    x2 = s.x2 + c2 - d2
    overflow = s.overflow
    if cap is not None:
        overflow += max(0, x1 - cap) + max(0, x2 - cap)
        x1, x2 = min(x1, cap), min(x2, cap)
    return SingleState(x1, x2, phase_step(s.y, a), overflow)


@dataclass(frozen=True)
class LinearConfig:
    n_intersections: int = 4
    travel_delay: int = 1
    arrivals: ArrivalModel = field(default_factory=ArrivalModel)
    queue_cap: int | None = None

    def __post_init__(self):
        if self.n_intersections < 1:
            raise ValueError("n_intersections must be >= 1")
        if self.travel_delay < 1:
            raise ValueError("travel_delay must be >= 1")
        if self.queue_cap is not None and self.queue_cap < 1:
            raise ValueError("queue_cap must be positive when set")


@dataclass
class LinearState:
    """State of an ``N``-intersection artery plus bookkeeping counters.

    ``east_pipes[n]`` carries vehicles from intersection ``n`` to ``n + 1``;
    ``west_pipes[n]`` carries vehicles from ``n + 1`` to ``n``. All pipes
    share one ring-buffer head: the slot at ``head`` is the one emerging
    this step and is then overwritten with this step's departures.
    """

    queues: np.ndarray        # (N, 4) int64
    phases: np.ndarray        # (N,) int64
    east_pipes: np.ndarray    # (N - 1, u) int64
    west_pipes: np.ndarray    # (N - 1, u) int64
    head: int = 0
    arrived: int = 0
    exited: int = 0
    dropped: int = 0

    @classmethod
    def empty(cls, cfg: LinearConfig) -> LinearState:
        n, u = cfg.n_intersections, cfg.travel_delay
        return cls(
            queues=np.zeros((n, 4), dtype=np.int64),
            phases=np.zeros(n, dtype=np.int64),
            east_pipes=np.zeros((n - 1, u), dtype=np.int64),
            west_pipes=np.zeros((n - 1, u), dtype=np.int64),
        )

    @property
    def n(self) -> int:
        return len(self.phases)

    @property
    def u(self) -> int:
        return self.east_pipes.shape[1]

    def in_transit(self) -> int:
        return int(self.east_pipes.sum() + self.west_pipes.sum())

    def copy(self) -> LinearState:
        return LinearState(self.queues.copy(), self.phases.copy(),
                           self.east_pipes.copy(), self.west_pipes.copy(),
                           self.head, self.arrived, self.exited, self.dropped)


def external_mask(n: int) -> np.ndarray:
    """Boolean (N, 4) mask of queues fed from outside the network."""
    mask = np.zeros((n, 4), dtype=bool)
    mask[0, EAST] = True
    mask[n - 1, WEST] = True
    mask[:, SOUTH] = True
    mask[:, NORTH] = True
    return mask


def departures_linear(s: LinearState) -> np.ndarray:
    """(N, 4) departures: one vehicle per served direction per slot."""
    served = np.zeros((s.n, 4), dtype=bool)
    served[:, [EAST, WEST]] = (s.phases == GREEN_1)[:, None]
    served[:, [SOUTH, NORTH]] = (s.phases == GREEN_2)[:, None]
    return np.where(served, np.minimum(s.queues, 1), 0)


def step_linear(s: LinearState, actions, externals: np.ndarray,
                cap: int | None = None) -> np.ndarray:
    """Advance the artery one slot in place; return this slot's departures.

    ``externals`` is an (N, 4) 0/1 array; only the entries selected by
    :func:`external_mask` may be nonzero.
    """
    actions = np.asarray(actions, dtype=np.int64)
    if actions.shape != (s.n,):
        raise ValueError(f"expected {s.n} actions, got shape {actions.shape}")
    if np.any((actions != 0) & (actions != 1)):
        raise ValueError("actions must be 0 (continue) or 1 (switch)")
    externals = np.asarray(externals, dtype=np.int64)
    if externals.shape != (s.n, 4):
        raise ValueError(f"externals must have shape {(s.n, 4)}")
    if np.any((externals != 0) & (externals != 1)) or np.any(externals[~external_mask(s.n)]):
        raise ValueError("externals must be 0/1 and only at boundary/cross-street queues")

    dep = departures_linear(s)
    arrivals = externals.copy()
    if s.n > 1:
        h = s.head
        arrivals[1:, EAST] += s.east_pipes[:, h]
        arrivals[:-1, WEST] += s.west_pipes[:, h]
        s.east_pipes[:, h] = dep[:-1, EAST]
        s.west_pipes[:, h] = dep[1:, WEST]
        s.head = (h + 1) % s.u

    q = s.queues + arrivals - dep
    if cap is not None:
        over = np.maximum(q - cap, 0)
        s.dropped += int(over.sum())
        q -= over
    s.queues = q
    s.phases = (s.phases + actions) % N_PHASES
    s.arrived += int(externals.sum())
    s.exited += int(dep[:, SOUTH].sum() + dep[:, NORTH].sum()
                    + dep[-1, EAST] + dep[0, WEST])
    return dep


def sample_arrivals(model: ArrivalModel, rng: np.random.Generator,
                    n: int | None = None):
    """Draw one slot of Bernoulli arrivals.

    With ``n=None`` returns ``(c1, c2)`` for the single intersection, both
    with probability ``p1``. Otherwise returns the (N, 4) external-arrival
    array for an ``n``-intersection artery.
    """
    if n is None:
        c = rng.random(2) < model.p1
        return int(c[0]), int(c[1])
    u = rng.random((n, 4))
    probs = np.zeros((n, 4))
    probs[0, EAST] = model.p1
    probs[n - 1, WEST] = model.p1
    probs[:, SOUTH] = model.p2
    probs[:, NORTH] = model.p2
    return (u < probs).astype(np.int64)


def cost(queues) -> float:
    """Quadratic congestion cost: sum of squared queue lengths."""
    if isinstance(queues, SingleState):
        return float(queues.x1 ** 2 + queues.x2 ** 2)
    if isinstance(queues, LinearState):
        queues = queues.queues
    q = np.asarray(queues, dtype=np.float64)
    return float(np.sum(q * q))


# ---------------------------------------------------------------------------
# environment wrappers used by the agent and the harness


class SingleIntersectionEnv:
    """Continuing single-intersection environment with state ``[x1, x2, y]``."""

    n_intersections = 1

    def __init__(self, arrivals: ArrivalModel, queue_cap: int | None = None):
        self.arrivals = arrivals
        self.queue_cap = queue_cap
        self.state = SingleState()

    @property
    def obs_dim(self) -> int:
        return 3

    def reset(self, state: SingleState | None = None) -> np.ndarray:
        self.state = state or SingleState()
        return self.observe()

    def observe(self) -> np.ndarray:
        s = self.state
        return np.array([s.x1, s.x2, s.y], dtype=np.float64)

    def sample(self, rng: np.random.Generator):
        return sample_arrivals(self.arrivals, rng)

    def step(self, action, arrivals) -> tuple[np.ndarray, float]:
        a = int(np.asarray(action).reshape(-1)[0])
        self.state = step_single(self.state, a, *arrivals, cap=self.queue_cap)
        return self.observe(), -cost(self.state)

    def queue_matrix(self) -> np.ndarray:
        return np.array([[self.state.x1, self.state.x2]], dtype=np.int64)

    def phases(self) -> np.ndarray:
        return np.array([self.state.y], dtype=np.int64)


class LinearArteryEnv:
    """Continuing artery environment.

    Observation: queues row-major (``X_11..X_N4``) followed by phases
    (``Y_1..Y_N``), length ``5N``.
    """

    def __init__(self, cfg: LinearConfig):
        self.cfg = cfg
        self.n_intersections = cfg.n_intersections
        self.state = LinearState.empty(cfg)
        self.last_departures = np.zeros((cfg.n_intersections, 4), dtype=np.int64)

    @property
    def obs_dim(self) -> int:
        return 5 * self.cfg.n_intersections

    def reset(self, state: LinearState | None = None) -> np.ndarray:
        self.state = state.copy() if state is not None else LinearState.empty(self.cfg)
        self.last_departures[:] = 0
        return self.observe()

    def observe(self) -> np.ndarray:
        s = self.state
        return np.concatenate([s.queues.ravel(), s.phases]).astype(np.float64)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return sample_arrivals(self.cfg.arrivals, rng, self.cfg.n_intersections)

    def step(self, action, arrivals) -> tuple[np.ndarray, float]:
        self.last_departures = step_linear(self.state, action, arrivals,
                                           cap=self.cfg.queue_cap)
        return self.observe(), -cost(self.state)

    def queue_matrix(self) -> np.ndarray:
        return self.state.queues.copy()

    def phases(self) -> np.ndarray:
        return self.state.phases.copy()
