"""Cost-driven device selection with a DDPG agent.

The agent's actor emits one score in [0, 1] per device; the environment runs
the ``n`` highest-scoring devices. The critic is trained on the raw scores, so
the discrete selection problem is handled as a continuous relaxation.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import nn
from .scheduling import ScheduleDecision, Scheduler, top_n


# -- cost model ----------------------------------------------------------------

@dataclass(frozen=True)
class DeviceProfile:
    device_id: int
    data_size: float  # d_i, samples
    compute: float  # mu_i(t), CPU cycles / s
    rate: float  # tau_i, uplink bit/s
    upload_bits: float  # w_i, model size on the wire
    loss: float = 0.0  # sigma_i^t, last observed local loss
    cycles_per_sample: float = 1e6  # T_m

    def __post_init__(self):
        if self.compute <= 0 or self.rate <= 0:
            raise ValueError(f"device {self.device_id}: compute and rate must be > 0")
        if min(self.data_size, self.upload_bits, self.loss, self.cycles_per_sample) < 0:
            raise ValueError(f"device {self.device_id}: negative profile field")

    @property
    def local_time(self) -> float:
        return self.data_size * self.cycles_per_sample / self.compute

    @property
    def comm_time(self) -> float:
        return self.upload_bits / self.rate


@dataclass(frozen=True)
class CostBreakdown:
    selected: tuple[int, ...]
    local_time: tuple[float, ...]
    comm_time: tuple[float, ...]
    c_time: float
    c_qu: float

    @property
    def c_total(self) -> float:
        return self.c_time + self.c_qu


def _by_id(profiles):
    return {p.device_id: p for p in profiles}


def cost_time(profiles, selected) -> tuple[float, tuple[float, ...], tuple[float, ...]]:
    """Mean of (local training + upload time) over the selected devices."""
    selected = list(selected)
    if not selected:
        raise ValueError("empty selection")
    table = _by_id(profiles)
    local = tuple(table[i].local_time for i in selected)
    comm = tuple(table[i].comm_time for i in selected)
    return (sum(local) + sum(comm)) / len(selected), local, comm


def cost_quality(losses, selected) -> float:
    """Sum of last local losses over the selected devices.

    ``losses`` maps device id to loss (a sequence indexed by id works too).
    """
    return float(sum(losses[i] for i in selected))


def cost_breakdown(profiles, selected) -> CostBreakdown:
    selected = tuple(sorted(selected))
    c_time, local, comm = cost_time(profiles, selected)
    table = _by_id(profiles)
    c_qu = cost_quality({i: table[i].loss for i in selected}, selected)
    return CostBreakdown(selected, local, comm, c_time, c_qu)


def reward(profiles, action) -> float:
    """Negative mean per-device cost (time + loss) of the selected devices.

    ``action`` is a 0/1 vector indexed like ``profiles``.
    """
    a = np.asarray(action, dtype=np.float64)
    if len(a) != len(profiles):
        raise ValueError(f"action has {len(a)} entries for {len(profiles)} devices")
    if a.sum() <= 0:
        raise ValueError("reward is undefined when no device is selected")
    per_device = np.array([p.local_time + p.comm_time + p.loss for p in profiles])
    return -float(a @ per_device) / float(a.sum())


def exhaustive_best(profiles, n: int) -> tuple[tuple[int, ...], float]:
    """Best n-subset by reward, found by enumerating all of them."""
    K = len(profiles)
    best, best_r = None, -np.inf
    for combo in itertools.combinations(range(K), n):
        a = np.zeros(K)
        a[list(combo)] = 1
        r = reward(profiles, a)
        if r > best_r:
            best, best_r = combo, r
    return best, best_r


# -- MDP ---------------------------------------------------------------------

FEATURES_PER_DEVICE = 5


def mdp_state(profiles, prev_selected) -> np.ndarray:
    """Flattened (data, compute, rate, loss, last-selected) per device.

    Data volume, compute and rate are divided by their maximum over devices;
    loss is squashed with l / (1 + l). Every feature lands in [0, 1].
    """
    d = np.array([p.data_size for p in profiles], dtype=np.float64)
    mu = np.array([p.compute for p in profiles], dtype=np.float64)
    tau = np.array([p.rate for p in profiles], dtype=np.float64)
    loss = np.array([p.loss for p in profiles], dtype=np.float64)
    prev = np.asarray(prev_selected, dtype=np.float64)
    if len(prev) != len(profiles):
        raise ValueError("prev_selected length differs from device count")
    d = d / d.max() if d.max() > 0 else d
    feats = np.stack([d, mu / mu.max(), tau / tau.max(), loss / (1.0 + loss), prev], axis=1)
    return feats.reshape(-1)


@dataclass(frozen=True)
class SelectionAction:
    raw: np.ndarray  # actor scores in [0, 1]^K
    selected: tuple[int, ...]  # the n highest scores, ascending ids

    @property
    def realized(self) -> np.ndarray:
        a = np.zeros(len(self.raw), dtype=np.int64)
        a[list(self.selected)] = 1
        return a


@dataclass(frozen=True, eq=False)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray

    def __post_init__(self):
        if len(self.state) != len(self.next_state):
            raise ValueError("state and next_state lengths differ")


class ReplayMemory:
    """FIFO experience buffer."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.buffer: deque[Transition] = deque(maxlen=capacity)

    def __len__(self):
        return len(self.buffer)

    def push(self, transition: Transition) -> None:
        self.buffer.append(transition)

    def sample_indices(self, batch_size: int, rng) -> np.ndarray:
        if batch_size > len(self.buffer):
            raise ValueError(f"cannot sample {batch_size} from {len(self.buffer)} transitions")
        return rng.choice(len(self.buffer), size=batch_size, replace=False)

    def sample(self, batch_size: int, rng) -> list[Transition]:
        return [self.buffer[i] for i in self.sample_indices(batch_size, rng)]


def store(memory: ReplayMemory, transition: Transition) -> None:
    memory.push(transition)


# -- agent -------------------------------------------------------------------

@dataclass(frozen=True)
class DdpgConfig:
    hidden: tuple[int, ...] = (64, 64)
    gamma: float = 0.95
    tau: float = 0.01
    capacity: int = 10_000
    batch_size: int = 64
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    noise: float = 0.1
    noise_decay: float = 0.995
    reward_scale: float = 1.0  # rewards are multiplied by this before storage
    seed: int = 0

    def violations(self) -> list[str]:
        out = []
        if not 0 <= self.gamma < 1:
            out.append("gamma must be in [0, 1)")
        if not 0 < self.tau <= 1:
            out.append("tau must be in (0, 1]")
        if self.capacity < 1 or self.batch_size < 1:
            out.append("capacity and batch_size must be >= 1")
        if self.actor_lr < 0 or self.critic_lr < 0:
            out.append("learning rates must be >= 0")
        if self.noise < 0 or not 0 < self.noise_decay <= 1:
            out.append("noise must be >= 0 and noise_decay in (0, 1]")
        if self.reward_scale <= 0:
            out.append("reward_scale must be > 0")
        if any(h < 1 for h in self.hidden):
            out.append("hidden layer sizes must be >= 1")
        return out


@dataclass(frozen=True)
class TrainStats:
    critic_loss: float = float("nan")  # half mean squared TD error
    actor_objective: float = float("nan")  # mean Q(s, pi(s))
    skipped: bool = False


SKIPPED = TrainStats(skipped=True)


class DdpgAgent:
    """Actor pi(s) -> [0,1]^K and critic Q(s ++ a) -> R, each with a target copy."""

    def __init__(self, num_devices: int, config: DdpgConfig = DdpgConfig(),
                 features_per_device: int = FEATURES_PER_DEVICE):
        problems = config.violations()
        if problems:
            raise ValueError("; ".join(problems))
        self.config = config
        self.num_devices = num_devices
        self.state_dim = features_per_device * num_devices
        self.actor_spec = nn.MlpSpec((self.state_dim, *config.hidden, num_devices), "relu", "sigmoid")
        self.critic_spec = nn.MlpSpec((self.state_dim + num_devices, *config.hidden, 1), "relu", "linear")
        ss = np.random.SeedSequence(config.seed)
        actor_seed, critic_seed, rng_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
        self.actor = nn.init_params(self.actor_spec, actor_seed)
        self.critic = nn.init_params(self.critic_spec, critic_seed)
        self.actor_target = self.actor
        self.critic_target = self.critic
        self.rng = np.random.default_rng(rng_seed)
        self.noise_scale = config.noise

    def policy(self, states) -> np.ndarray:
        return nn.forward(self.actor_spec, self.actor, states)

    def q_value(self, states, actions) -> np.ndarray:
        sa = np.concatenate([np.atleast_2d(states), np.atleast_2d(actions)], axis=1)
        return nn.forward(self.critic_spec, self.critic, sa)[:, 0]

    def act(self, state, n: int, noise_scale: float | None = None) -> SelectionAction:
        return act(self, state, n, self.noise_scale if noise_scale is None else noise_scale)

    def decay_noise(self) -> None:
        self.noise_scale *= self.config.noise_decay


def act(agent: DdpgAgent, state, n: int, noise_scale: float = 0.0) -> SelectionAction:
    state = np.asarray(state, dtype=np.float64)
    if len(state) != agent.state_dim:
        raise nn.LayoutError(f"state has {len(state)} features, agent expects {agent.state_dim}")
    if n > agent.num_devices:
        raise ValueError(f"cannot select {n} of {agent.num_devices} devices")
    raw = agent.policy(state)
    if noise_scale > 0:
        raw = raw + agent.rng.normal(0.0, noise_scale, size=raw.shape)
    return realize(np.clip(raw, 0.0, 1.0), n)


def realize(raw, n: int) -> SelectionAction:
    """Run the ``n`` highest scores (ties to the lower id)."""
    raw = np.asarray(raw, dtype=np.float64)
    return SelectionAction(raw, tuple(sorted(top_n(raw, n))))


def policy_gradient(agent: DdpgAgent, states) -> tuple[nn.GradVector, float]:
    """d/d(actor params) of mean_s Q(s, pi(s)), chained through the critic."""
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    m = len(states)
    actions = agent.policy(states)
    sa = np.concatenate([states, actions], axis=1)
    q = nn.forward(agent.critic_spec, agent.critic, sa)
    _, d_sa = nn.backprop(agent.critic_spec, agent.critic, sa, np.full((m, 1), 1.0 / m))
    dq_da = d_sa[:, agent.state_dim:]
    grad, _ = nn.backprop(agent.actor_spec, agent.actor, states, dq_da)
    return grad, float(q.mean())


def soft_update(online: nn.ParamVector, target: nn.ParamVector, tau: float) -> nn.ParamVector:
    if not 0 <= tau <= 1:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    online.check_layout(target)
    if tau == 1:
        return target.with_values(online.values)
    # incremental form keeps target bit-identical when it already equals online
    return target.with_values(target.values + tau * (online.values - target.values))


def train_step(agent: DdpgAgent, memory: ReplayMemory, batch_size: int | None = None) -> TrainStats:
    """One critic step on the TD target, one actor ascent step, then soft target updates."""
    cfg = agent.config
    batch_size = cfg.batch_size if batch_size is None else batch_size
    if len(memory) < batch_size:
        return SKIPPED
    batch = memory.sample(batch_size, agent.rng)
    s = np.stack([tr.state for tr in batch])
    a = np.stack([tr.action for tr in batch])
    r = np.array([tr.reward for tr in batch])
    s2 = np.stack([tr.next_state for tr in batch])

    a2 = nn.forward(agent.actor_spec, agent.actor_target, s2)
    q2 = nn.forward(agent.critic_spec, agent.critic_target, np.concatenate([s2, a2], axis=1))[:, 0]
    y = r + cfg.gamma * q2
    grad_q, critic_loss = nn.backward(agent.critic_spec, agent.critic,
                                      (np.concatenate([s, a], axis=1), y[:, None]))
    if cfg.critic_lr > 0:
        agent.critic = nn.sgd_step(agent.critic, grad_q, cfg.critic_lr)

    grad_pi, objective = policy_gradient(agent, s)
    if cfg.actor_lr > 0:
        # ascent on Q
        agent.actor = nn.sgd_step(agent.actor, -grad_pi, cfg.actor_lr)

    agent.actor_target = soft_update(agent.actor, agent.actor_target, cfg.tau)
    agent.critic_target = soft_update(agent.critic, agent.critic_target, cfg.tau)
    return TrainStats(critic_loss, objective)


# -- scheduler adapter -----------------------------------------------------------

@dataclass
class SelectionFeedback:
    """Outcome of one round, handed to ``Scheduler.observe``."""

    reward: float
    next_state: np.ndarray
    done: bool = False


class DdpgScheduler(Scheduler):
    """Runs the actor as the device scheduler and learns online from round feedback."""

    kind = "ddpg"

    def __init__(self, agent: DdpgAgent, memory: ReplayMemory | None = None, train: bool = True):
        self.agent = agent
        self.memory = memory if memory is not None else ReplayMemory(agent.config.capacity)
        self.train = train
        self.last_stats = SKIPPED
        self._pending = None

    def select(self, n, t, context):
        if context.state is None:
            raise ValueError("the DDPG scheduler needs an MDP state")
        noise = self.agent.noise_scale if self.train else 0.0
        action = act(self.agent, context.state, n, noise)
        self._pending = (np.asarray(context.state, dtype=np.float64), action)
        return ScheduleDecision(t, action.selected)

    def observe(self, feedback: SelectionFeedback) -> None:
        if self._pending is None:
            return
        state, action = self._pending
        self._pending = None
        if not self.train:
            return
        r = feedback.reward * self.agent.config.reward_scale
        store(self.memory, Transition(state, action.raw, r, np.asarray(feedback.next_state, dtype=np.float64)))
        self.last_stats = train_step(self.agent, self.memory)
        if feedback.done:
            self.agent.decay_noise()


# -- stationary toy environment ---------------------------------------------------

class StationarySelectionEnv:
    """Fixed device profiles; the only state dynamics is the last-selected flag.

    Each episode starts from a random previous selection so evaluation
    episodes differ.
    """

    def __init__(self, profiles, n: int, horizon: int = 10, seed: int = 0):
        self.profiles = list(profiles)
        self.K = len(self.profiles)
        self.n = n
        self.horizon = horizon
        self.rng = np.random.default_rng(seed)
        self.t = 0
        self.prev = np.zeros(self.K)

    def reset(self) -> np.ndarray:
        self.t = 0
        self.prev = np.zeros(self.K)
        self.prev[self.rng.choice(self.K, size=self.n, replace=False)] = 1
        return mdp_state(self.profiles, self.prev)

    def step(self, selected) -> tuple[float, np.ndarray, bool]:
        a = np.zeros(self.K)
        a[list(selected)] = 1
        r = reward(self.profiles, a)
        self.prev = a
        self.t += 1
        return r, mdp_state(self.profiles, self.prev), self.t >= self.horizon


def toy_profiles(K: int = 8, cheap=(1, 5), factor: float = 10.0) -> list[DeviceProfile]:
    """K identical devices except ``cheap`` ones, whose time and loss are ``factor`` x lower."""
    out = []
    for i in range(K):
        scale = 1.0 / factor if i in cheap else 1.0
        out.append(DeviceProfile(i, data_size=600 * scale, compute=1e9, rate=1e6,
                                 upload_bits=8e6 * scale, loss=1.0 * scale, cycles_per_sample=1e6))
    return out


def train_on_env(agent: DdpgAgent, env: StationarySelectionEnv, episodes: int,
                 memory: ReplayMemory | None = None) -> list[float]:
    """Off-policy training loop; returns the mean reward of each episode."""
    memory = ReplayMemory(agent.config.capacity) if memory is None else memory
    scale = agent.config.reward_scale
    history = []
    for _ in range(episodes):
        s = env.reset()
        total, done = 0.0, False
        while not done:
            action = act(agent, s, env.n, agent.noise_scale)
            r, s2, done = env.step(action.selected)
            store(memory, Transition(s, action.raw, r * scale, s2))
            train_step(agent, memory)
            total += r
            s = s2
        history.append(total / env.horizon)
        agent.decay_noise()
    return history


def evaluate_greedy(agent: DdpgAgent, env: StationarySelectionEnv, episodes: int,
                    target=None) -> tuple[list[float], list[bool]]:
    """Noise-free rollouts: mean reward per episode and whether every step picked ``target``."""
    rewards, hits = [], []
    target = None if target is None else tuple(sorted(target))
    for _ in range(episodes):
        s = env.reset()
        total, done, all_hit = 0.0, False, True
        while not done:
            action = act(agent, s, env.n, 0.0)
            all_hit &= target is None or action.selected == target
            r, s, done = env.step(action.selected)
            total += r
        rewards.append(total / env.horizon)
        hits.append(bool(all_hit))
    return rewards, hits
