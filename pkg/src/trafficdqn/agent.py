"""DQN agent: replay memory, evaluate/target networks, epsilon-greedy training loop.

Actions are organised in *groups*. Each group is a block of output units over
which an argmax is taken: the single intersection has one group of width 2,
the factored artery head has ``N`` groups of width 2 (one per intersection,
all sharing the full-state trunk), and the joint artery head has a single
group of width ``2**N``. A stored action is the vector of per-group choices.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn

FORMAT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    total_steps: int = 200_000
    warmup: int = 500
    memory_capacity: int = 20_000
    batch_size: int = 32
    gamma: float = 0.99
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_fraction: float = 0.3
    target_sync: int = 200
    learn_every: int = 1
    seed: int = 0
    hidden: list = field(default_factory=lambda: [200, 100, 40])
    lr: float = 1e-3
    # learning rate decays linearly to lr_end over the learning phase (None: constant)
    lr_end: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    action_head: str = "factored"
    # factored head only: "independent" regresses each group on its own target;
    # "sum" regresses the sum of the chosen outputs on r + gamma * sum of group maxima
    head_mixing: str = "independent"
    # double Q-learning: the evaluate network picks the next action, the target network scores it
    double_q: bool = False
    # constant rescalings; neither changes the greedy policy
    reward_scale: float = 1.0
    input_scale: float = 1.0
    # scale for the trailing phase features (None: same as input_scale)
    phase_scale: float | None = None
    metrics_window: int = 1000

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if self.warmup < 0:
            raise ValueError("warmup must be >= 0")
        if self.memory_capacity < 1 or not 1 <= self.batch_size <= self.memory_capacity:
            raise ValueError("need 1 <= batch_size <= memory_capacity")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not (0.0 <= self.eps_end <= 1.0 and 0.0 <= self.eps_start <= 1.0):
            raise ValueError("epsilon bounds must lie in [0, 1]")
        if not 0.0 <= self.eps_decay_fraction <= 1.0:
            raise ValueError("eps_decay_fraction must lie in [0, 1]")
        if self.target_sync < 1 or self.learn_every < 1 or self.metrics_window < 1:
            raise ValueError("target_sync, learn_every and metrics_window must be >= 1")
        if any(int(h) != h or h < 1 for h in self.hidden):
            raise ValueError("hidden sizes must be positive integers")
        if self.action_head not in ("factored", "joint"):
            raise ValueError("action_head must be 'factored' or 'joint'")
        if self.head_mixing not in ("independent", "sum"):
            raise ValueError("head_mixing must be 'independent' or 'sum'")
        if self.lr <= 0 or (self.lr_end is not None and self.lr_end <= 0):
            raise ValueError("learning rates must be positive")
        if self.reward_scale <= 0 or self.input_scale <= 0 or (self.phase_scale or 1.0) <= 0:
            raise ValueError("reward_scale, input_scale and phase_scale must be positive")

    def learning_rate(self, step: int) -> float:
        if self.lr_end is None:
            return self.lr
        span = max(1, self.total_steps - self.warmup)
        frac = min(1.0, max(0.0, (step - self.warmup) / span))
        return self.lr + frac * (self.lr_end - self.lr)

    def epsilon(self, step: int) -> float:
        """Linear decay from ``eps_start`` to ``eps_end`` over the first fraction of steps."""
        horizon = self.eps_decay_fraction * self.total_steps
        if horizon <= 0:
            return self.eps_end
        frac = min(1.0, (step - 1) / horizon)
        return self.eps_start + frac * (self.eps_end - self.eps_start)


class ReplayMemory:
    """Fixed-capacity ring of transitions, oldest evicted first."""

    def __init__(self, capacity: int, obs_dim: int, n_groups: int):
        self.capacity = capacity
        self.s = np.zeros((capacity, obs_dim))
        self.a = np.zeros((capacity, n_groups), dtype=np.int64)
        self.r = np.zeros(capacity)
        self.s_next = np.zeros((capacity, obs_dim))
        self.inserted = 0

    def __len__(self):
        return min(self.inserted, self.capacity)

    def push(self, s, a, r, s_next):
        i = self.inserted % self.capacity
        self.s[i] = s
        self.a[i] = a
        self.r[i] = r
        self.s_next[i] = s_next
        self.inserted += 1

    def _order(self) -> np.ndarray:
        n = len(self)
        start = self.inserted - n
        return np.arange(start, start + n) % self.capacity

    def transitions(self) -> list[tuple]:
        """Stored transitions, oldest first."""
        return [(self.s[i].copy(), self.a[i].copy(), float(self.r[i]), self.s_next[i].copy())
                for i in self._order()]

    def sample(self, rng: np.random.Generator, batch_size: int):
        """Uniform sample with replacement."""
        idx = rng.integers(0, len(self), size=batch_size)
        return self.s[idx], self.a[idx], self.r[idx], self.s_next[idx]


def head_layout(n_intersections: int, action_head: str) -> tuple[int, int]:
    """``(n_groups, group_width)`` for a topology and head type."""
    if n_intersections == 1:
        return 1, 2
    if action_head == "joint":
        if n_intersections > 3:
            raise ValueError("joint action head is limited to N <= 3")
        return 1, 2 ** n_intersections
    return n_intersections, 2


class DqnAgent:
    def __init__(self, obs_dim: int, n_intersections: int, config: TrainConfig,
                 init_seed=None):
        self.config = config
        self.obs_dim = obs_dim
        self.n_intersections = n_intersections
        self.n_groups, self.group_width = head_layout(n_intersections, config.action_head)
        dims = [obs_dim, *config.hidden, self.n_groups * self.group_width]
        self.eval_net = nn.init_mlp(dims, config.seed if init_seed is None else init_seed)
        self.target_net = self.eval_net.copy()
        self.optimizer = nn.AdamState.for_net(self.eval_net, lr=config.lr, beta1=config.beta1,
                                              beta2=config.beta2, eps=config.adam_eps)
        self.memory = ReplayMemory(config.memory_capacity, obs_dim, self.n_groups)
        # per-feature input scaling; phases are the last n_intersections entries
        self.input_scales = np.full(obs_dim, config.input_scale)
        if config.phase_scale is not None:
            self.input_scales[obs_dim - n_intersections:] = config.phase_scale
        self.global_step = 0
        self.learn_steps = 0

    # -- network evaluation -------------------------------------------------

    def q_values(self, s, target: bool = False) -> np.ndarray:
        net = self.target_net if target else self.eval_net
        return nn.forward(net, np.asarray(s, dtype=np.float64) * self.input_scales)

    def greedy_choices(self, s) -> np.ndarray:
        """Per-group argmax (ties go to the lowest index, i.e. Continue)."""
        q = self.q_values(s)
        return np.argmax(q.reshape(*q.shape[:-1], self.n_groups, self.group_width), axis=-1)

    def to_env_action(self, choices):
        """Map group choices to what the environment consumes."""
        choices = np.asarray(choices)
        if self.n_intersections == 1:
            return int(choices[0])
        if self.n_groups == 1:
            j = int(choices[0])
            return np.array([(j >> n) & 1 for n in range(self.n_intersections)], dtype=np.int64)
        return choices.astype(np.int64)

    def from_env_action(self, action) -> np.ndarray:
        a = np.asarray(action, dtype=np.int64).reshape(-1)
        if self.n_groups == 1 and self.n_intersections > 1:
            return np.array([int(sum(int(b) << n for n, b in enumerate(a)))])
        return a

    def select_choices(self, s, epsilon: float, rng: np.random.Generator) -> np.ndarray:
        if epsilon > 0.0 and rng.random() < epsilon:
            return rng.integers(0, self.group_width, size=self.n_groups)
        return self.greedy_choices(s)

    def select_action(self, s, epsilon: float, rng: np.random.Generator):
        """Epsilon-greedy action: int for one intersection, 0/1 vector for an artery."""
        return self.to_env_action(self.select_choices(s, epsilon, rng))

    # -- learning -----------------------------------------------------------

    @property
    def summed(self) -> bool:
        return self.n_groups > 1 and self.config.head_mixing == "sum"

    def td_targets(self, r, s_next) -> np.ndarray:
        """``r + gamma * max_a' Q_target(s', a')`` per group, shape ``(B, n_groups)``.

        With ``double_q`` the maximising action comes from the evaluate network.

        With summed heads the joint maximum is the sum of group maxima and the
        result has shape ``(B, 1)``.
        """
        q = self.q_values(s_next, target=True)
        q = q.reshape(q.shape[0], self.n_groups, self.group_width)
        if self.config.double_q:
            pick = self.greedy_choices(s_next)
            q = np.take_along_axis(q, pick[..., None], axis=-1)[..., 0]
        else:
            q = q.max(axis=-1)
        if self.summed:
            q = q.sum(axis=1, keepdims=True)
        r = np.asarray(r, dtype=np.float64) * self.config.reward_scale
        return r[:, None] + self.config.gamma * q

    def td_target(self, transition):
        """TD target of one ``(s, a, r, s_next)`` transition (per group for independent artery heads)."""
        _, _, r, s_next = transition
        y = self.td_targets(np.array([r]), np.atleast_2d(s_next))[0]
        return float(y[0]) if len(y) == 1 else y

    def learn_step(self, rng: np.random.Generator) -> float:
        cfg = self.config
        if self.global_step <= cfg.warmup:
            raise RuntimeError(f"learn_step called during warm-up (step {self.global_step} <= {cfg.warmup})")
        if len(self.memory) < cfg.batch_size:
            raise RuntimeError("replay memory holds fewer transitions than one minibatch")
        s, a, r, s_next = self.memory.sample(rng, cfg.batch_size)
        y = self.td_targets(r, s_next)
        out = self.n_groups * self.group_width
        cols = np.arange(self.n_groups) * self.group_width + a
        rows = np.arange(cfg.batch_size)[:, None]
        targets = np.zeros((cfg.batch_size, out))
        mask = np.zeros((cfg.batch_size, out))
        mask[rows, cols] = 1.0
        if self.summed:
            loss, grads = nn.summed_loss_and_gradients(self.eval_net, s * self.input_scales, y[:, 0], mask)
        else:
            targets[rows, cols] = y
            loss, grads = nn.masked_loss_and_gradients(self.eval_net, s * self.input_scales, targets, mask)
        if not math.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss {loss} at step {self.global_step}")
        self.optimizer.lr = cfg.learning_rate(self.global_step)
        nn.adam_step(self.eval_net, self.optimizer, grads)
        self.learn_steps += 1
        if self.learn_steps % cfg.target_sync == 0:
            self.sync_target()
        return loss

    def sync_target(self):
        nn.copy_parameters(self.eval_net, self.target_net)

    def greedy_policy(self):
        """Deterministic (epsilon = 0) policy ``state vector -> action``."""
        return lambda s: self.to_env_action(self.greedy_choices(s))

    # -- checkpointing ------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "obs_dim": self.obs_dim,
            "n_intersections": self.n_intersections,
            "config": asdict(self.config),
            "counters": {"global_step": self.global_step, "learn_steps": self.learn_steps,
                         "memory_inserted": self.memory.inserted},
            "seed_lineage": {"seed": self.config.seed,
                             "streams": list(RNG_STREAMS)},
            "eval_net": nn.mlp_to_json(self.eval_net),
            "target_net": nn.mlp_to_json(self.target_net),
            "optimizer": nn.adam_to_json(self.optimizer),
        }

    @classmethod
    def from_json(cls, d: dict) -> DqnAgent:
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format {d.get('format_version')}")
        agent = cls(d["obs_dim"], d["n_intersections"], TrainConfig(**d["config"]))
        agent.eval_net = nn.mlp_from_json(d["eval_net"])
        agent.target_net = nn.mlp_from_json(d["target_net"])
        agent.optimizer = nn.adam_from_json(d["optimizer"], agent.eval_net)
        agent.global_step = d["counters"]["global_step"]
        agent.learn_steps = d["counters"]["learn_steps"]
        return agent


RNG_STREAMS = ("init", "arrivals", "explore", "replay")


def rng_streams(seed: int) -> dict:
    children = np.random.SeedSequence(seed).spawn(len(RNG_STREAMS))
    return {name: np.random.default_rng(c) for name, c in zip(RNG_STREAMS, children)}


@dataclass
class Metrics:
    """Per-step training record plus windowed discounted returns."""

    gamma: float
    window: int
    reward: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    epsilon: list = field(default_factory=list)
    window_returns: list = field(default_factory=list)

    def discounted_window_return(self, end: int) -> float:
        r = np.asarray(self.reward[end - self.window:end])
        return float(np.sum(r * self.gamma ** np.arange(len(r))))

    def learning_records(self) -> int:
        return sum(1 for x in self.loss if x is not None)


def train(env, config: TrainConfig, agent: DqnAgent | None = None,
          progress=None) -> tuple[DqnAgent, Metrics]:
    """Run the DQN loop on ``env`` from an all-empty state for ``config.total_steps`` steps.

    ``progress``, if given, is called as ``progress(step, metrics)`` once per
    metrics window.
    """
    rngs = rng_streams(config.seed)
    if agent is None:
        init_seed = int(rngs["init"].integers(2 ** 63))
        agent = DqnAgent(env.obs_dim, env.n_intersections, config, init_seed=init_seed)
    metrics = Metrics(config.gamma, config.metrics_window)
    s = env.reset()
    for k in range(1, config.total_steps + 1):
        agent.global_step = k
        eps = config.epsilon(k)
        choices = agent.select_choices(s, eps, rngs["explore"])
        arrivals = env.sample(rngs["arrivals"])
        s_next, r = env.step(agent.to_env_action(choices), arrivals)
        agent.memory.push(s, choices, r, s_next)
        loss = None
        if (k > config.warmup and (k - config.warmup) % config.learn_every == 0
                and len(agent.memory) >= config.batch_size):
            loss = agent.learn_step(rngs["replay"])
        metrics.reward.append(r)
        metrics.loss.append(loss)
        metrics.epsilon.append(eps)
        if k % config.metrics_window == 0:
            metrics.window_returns.append((k, metrics.discounted_window_return(k)))
            if progress is not None:
                progress(k, metrics)
        s = s_next
    return agent, metrics
