"""Deep Q-learning over the adjustment dictionary.

The Q-network maps an observation (plus the previous adjustment vector,
concatenated after the conv stack) to one value per action. Training samples
uniformly from a FIFO replay buffer, bootstraps targets from the live
network (optionally a periodically synced frozen copy), and takes Adam steps
on the squared TD error. Action selection is epsilon-greedy around the
argmax, since pure argmax selection would lock onto its initial choice.
"""

import copy
import math
from collections import deque
from dataclasses import dataclass, replace as dc_replace

import numpy as np
import torch
from torch import nn

from .errors import DimensionError, NotReady
from .features import Observation
from .netio import load_net, save_net


@dataclass
class AgentConfig:
    n_episodes: int = 300
    steps_per_episode: int = 20
    train_frequency: int = 20
    batch_size: int = 50
    gamma: float = 0.99
    no_op_steps: int = 30
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.5  # of total steps
    replay_capacity: int = 2000
    target_sync_interval: int = 0  # 0 = bootstrap from the live network
    learning_rate: float = 1e-3
    conv_filters: tuple = (32, 64, 128)
    conv_kernel: int = 3
    dense_units: int = 256
    leaky_slope: float = 0.01

    def __post_init__(self):
        self.conv_filters = tuple(int(f) for f in self.conv_filters)
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        for name in ("n_episodes", "steps_per_episode", "train_frequency",
                     "batch_size", "replay_capacity"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.no_op_steps < 0 or self.target_sync_interval < 0:
            raise ValueError("step counts must be non-negative")

    @property
    def total_steps(self) -> int:
        return self.n_episodes * self.steps_per_episode


# Small config for fast tests.
DESK_AGENT = AgentConfig(
    n_episodes=20, steps_per_episode=20, train_frequency=4, batch_size=16,
    no_op_steps=16, replay_capacity=500, conv_filters=(8, 16), dense_units=32,
)


@dataclass
class Transition:
    state: Observation
    action: int
    reward: float
    next_state: Observation

    def __post_init__(self):
        if not math.isfinite(self.reward):
            raise ValueError("reward must be finite")


class ReplayBuffer:
    """FIFO-bounded transition store with uniform sampling."""

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: deque = deque(maxlen=capacity)

    def push(self, transition: Transition) -> None:
        self._items.append(transition)

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list:
        if len(self._items) < batch_size:
            raise NotReady(
                f"replay holds {len(self._items)} transitions; need {batch_size}"
            )
        idx = rng.choice(len(self._items), size=batch_size, replace=False)
        items = list(self._items)
        return [items[i] for i in idx]


class QNetwork(nn.Module):
    """Conv stack, flatten, concat previous adjustment, two dense layers,
    one output per action."""

    def __init__(self, obs_shape: tuple, adj_dim: int, n_actions: int, cfg: AgentConfig):
        super().__init__()
        self.obs_shape = tuple(obs_shape)
        self.adj_dim = int(adj_dim)
        self.n_actions = int(n_actions)
        n_mels, n_frames, n_stack = self.obs_shape
        k = cfg.conv_kernel
        blocks = []
        in_ch = n_stack
        for f in cfg.conv_filters:
            blocks += [
                nn.Conv2d(in_ch, f, kernel_size=k, stride=2, padding=k // 2),
                nn.LeakyReLU(cfg.leaky_slope),
            ]
            in_ch = f
        self.conv = nn.Sequential(*blocks)
        with torch.no_grad():
            probe = self.conv(torch.zeros(1, n_stack, n_mels, n_frames))
        flat = int(np.prod(probe.shape[1:]))
        d = cfg.dense_units
        self.dense = nn.Sequential(
            nn.Linear(flat + self.adj_dim, d),
            nn.LeakyReLU(cfg.leaky_slope),
            nn.Linear(d, d),
            nn.LeakyReLU(cfg.leaky_slope),
        )
        self.out = nn.Linear(d, self.n_actions)

    def forward(self, obs: torch.Tensor, adj: torch.Tensor) -> torch.Tensor:
        expect = (self.obs_shape[2], self.obs_shape[0], self.obs_shape[1])
        if tuple(obs.shape[1:]) != expect or adj.shape[1] != self.adj_dim:
            raise DimensionError(
                f"expected obs {expect} and adj dim {self.adj_dim}, "
                f"got {tuple(obs.shape[1:])} and {adj.shape[1]}"
            )
        z = self.conv(obs)
        z = z.reshape(z.shape[0], -1)
        z = torch.cat([z, adj], dim=1)
        return self.out(self.dense(z))


def _state_tensors(states, dtype=torch.float32):
    obs = torch.from_numpy(
        np.stack([np.transpose(s.tensor, (2, 0, 1)) for s in states])
    ).to(dtype)
    adj = torch.tensor(
        [s.cr_adj_context if s.cr_adj_context is not None else () for s in states],
        dtype=dtype,
    )
    return obs, adj


def q_values(state: Observation, net: QNetwork) -> np.ndarray:
    """Inference-mode Q-vector for one state."""
    net.eval()
    with torch.no_grad():
        obs, adj = _state_tensors([state])
        return net(obs, adj)[0].numpy()


def select_action(
    state: Observation, net: QNetwork, epsilon: float, rng: np.random.Generator
) -> int:
    """Epsilon-greedy: argmax with probability 1-epsilon (ties to the lowest
    index), otherwise uniform."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(0, net.n_actions))
    return int(np.argmax(q_values(state, net)))


def q_target(transition: Transition, bootstrap_net: QNetwork, gamma: float) -> float:
    """Bootstrapped target r + gamma * max_a' Q(s', a'). No terminal masking:
    the environment never signals episode ends."""
    next_q = q_values(transition.next_state, bootstrap_net)
    return transition.reward + gamma * float(np.max(next_q))


def epsilon_at(step: int, total_steps: int, cfg: AgentConfig) -> float:
    """Linear decay from epsilon_start to epsilon_end over the first
    ``epsilon_decay_fraction`` of the run, then constant."""
    horizon = max(1, int(total_steps * cfg.epsilon_decay_fraction))
    frac = min(1.0, step / horizon)
    return cfg.epsilon_start + frac * (cfg.epsilon_end - cfg.epsilon_start)


def train_step(
    replay: ReplayBuffer,
    net: QNetwork,
    optimizer: torch.optim.Optimizer,
    cfg: AgentConfig,
    rng: np.random.Generator,
    bootstrap_net: QNetwork | None = None,
) -> float:
    """One Adam step on the mean squared TD error of a uniform batch.

    Targets are computed under no_grad, so no gradient flows through the
    bootstrap term.
    """
    batch = replay.sample(cfg.batch_size, rng)
    bootstrap = bootstrap_net or net

    next_obs, next_adj = _state_tensors([t.next_state for t in batch])
    bootstrap.eval()
    with torch.no_grad():
        next_q = bootstrap(next_obs, next_adj)
        targets = torch.tensor(
            [t.reward for t in batch], dtype=torch.float32
        ) + cfg.gamma * next_q.max(dim=1).values

    net.train()
    obs, adj = _state_tensors([t.state for t in batch])
    actions = torch.tensor([t.action for t in batch], dtype=torch.int64)
    q = net(obs, adj).gather(1, actions.unsqueeze(1)).squeeze(1)
    loss = torch.mean((q - targets) ** 2)
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return loss.item()


@dataclass
class EpisodeMetrics:
    episode: int
    mean_reward: float
    mean_q: float
    epsilon: float
    loss: float  # mean training loss during the episode (nan if none)


class QLearner:
    """Owns the Q-network, optimizer, replay buffer, and step counters so the
    training run can be driven in segments (fine-tune rounds in between)."""

    def __init__(self, obs_shape, adj_dim, n_actions, cfg: AgentConfig, seed: int = 0):
        torch.manual_seed(seed)
        self.cfg = cfg
        self.net = QNetwork(obs_shape, adj_dim, n_actions, cfg)
        self.optimizer = torch.optim.Adam(self.net.parameters(), lr=cfg.learning_rate)
        self.target_net = None
        if cfg.target_sync_interval > 0:
            self.target_net = copy.deepcopy(self.net)
        self.replay = ReplayBuffer(cfg.replay_capacity)
        self.global_step = 0
        self.metrics: list = []
        self._state = None  # carried across training segments

    def train_episodes(self, env, reward_fn, n_episodes: int, rng: np.random.Generator):
        """Run ``n_episodes`` of interaction, training every train_frequency
        steps once no_op_steps have elapsed. Returns the new metric rows."""
        cfg = self.cfg
        if self._state is None:
            self._state = env.reset(rng)
        state = self._state
        new_rows = []
        for _ in range(n_episodes):
            episode = len(self.metrics)
            rewards, qs, losses = [], [], []
            for _ in range(cfg.steps_per_episode):
                eps = epsilon_at(self.global_step, cfg.total_steps, cfg)
                action = select_action(state, self.net, eps, rng)
                qs.append(float(q_values(state, self.net)[action]))
                next_state = env.step(action, rng)
                reward = float(reward_fn(next_state))
                rewards.append(reward)
                self.replay.push(Transition(state, action, reward, next_state))
                self.global_step += 1
                ready = (
                    self.global_step > cfg.no_op_steps
                    and len(self.replay) >= cfg.batch_size
                    and self.global_step % cfg.train_frequency == 0
                )
                if ready:
                    losses.append(
                        train_step(
                            self.replay, self.net, self.optimizer, cfg, rng,
                            bootstrap_net=self.target_net,
                        )
                    )
                if (
                    self.target_net is not None
                    and self.global_step % cfg.target_sync_interval == 0
                ):
                    self.target_net.load_state_dict(self.net.state_dict())
                state = next_state
            row = EpisodeMetrics(
                episode=episode,
                mean_reward=float(np.mean(rewards)),
                mean_q=float(np.mean(qs)),
                epsilon=epsilon_at(self.global_step, cfg.total_steps, cfg),
                loss=float(np.mean(losses)) if losses else float("nan"),
            )
            self.metrics.append(row)
            new_rows.append(row)
        self._state = state
        return new_rows

    @property
    def state(self) -> Observation | None:
        return self._state

    def greedy_action(self, state: Observation) -> int:
        return int(np.argmax(q_values(state, self.net)))

    def save(self, path) -> None:
        config = {
            "obs_shape": list(self.net.obs_shape),
            "adj_dim": self.net.adj_dim,
            "n_actions": self.net.n_actions,
            "conv_filters": list(self.cfg.conv_filters),
            "conv_kernel": self.cfg.conv_kernel,
            "dense_units": self.cfg.dense_units,
            "leaky_slope": self.cfg.leaky_slope,
            "global_step": self.global_step,
        }
        save_net(path, "policy", config, self.net)

    @classmethod
    def load(cls, path, cfg: AgentConfig | None = None) -> "QLearner":
        config, state = load_net(path, expected_kind="policy")
        cfg = dc_replace(
            cfg or AgentConfig(),
            conv_filters=tuple(config["conv_filters"]),
            conv_kernel=config["conv_kernel"],
            dense_units=config["dense_units"],
            leaky_slope=config["leaky_slope"],
        )
        learner = cls(
            tuple(config["obs_shape"]), config["adj_dim"], config["n_actions"], cfg
        )
        learner.net.load_state_dict(state)
        learner.global_step = config.get("global_step", 0)
        return learner


def run_training(env, reward_fn, cfg: AgentConfig, rng: np.random.Generator, seed: int = 0):
    """One uninterrupted training run; returns (learner, episode metrics)."""
    learner = QLearner(
        obs_shape=env.observation_shape,
        adj_dim=env.adjustment_dim,
        n_actions=env.n_actions,
        cfg=cfg,
        seed=seed,
    )
    learner.train_episodes(env, reward_fn, cfg.n_episodes, rng)
    return learner, learner.metrics
