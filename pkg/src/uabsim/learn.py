"""Shared-policy Q-learner: dueling MLP, replay buffer, double targets.

The network is a plain numpy MLP with a value head and an advantage head
combined as Q = V + A - mean(A); gradients are backpropagated by hand and
applied with adaptive-moment updates. Targets decouple action selection
(online net, restricted to the next state's legal actions) from evaluation
(target net). One policy is shared by all agents: selection only ever
reads parameters, training is the single writer.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .actions import Action
from .config import SimConfig
from .env import Experience, Observation
from .errors import CheckpointMismatch, ContractViolation, TrainingDiverged

N_ACTIONS = len(Action)


# ---------------------------------------------------------------------------
# feature encoding
# ---------------------------------------------------------------------------

def feature_dim(config: SimConfig) -> int:
    return 3 + 2 * config.num_agents + config.num_beams


def encode(obs: Observation, config: SimConfig) -> np.ndarray:
    """Normalize an observation into the network's input vector.

    Own position and every fleet position scale by the area extents, time
    by the episode length, and each beam entry by its theoretical maximum
    priority mass num_gues * (window_len + 1).
    """
    w, h = config.area_width_m, config.area_height_m
    beam_scale = config.num_gues * (config.window_len + 1)
    return np.concatenate([
        [obs.self_xy[0] / w, obs.self_xy[1] / h, obs.t / config.episode_len],
        (obs.fleet_xy / np.array([w, h])).ravel(),
        obs.beam_info / beam_scale,
    ])


def encode_batch(observations, config: SimConfig) -> np.ndarray:
    return np.stack([encode(o, config) for o in observations])


# ---------------------------------------------------------------------------
# dueling network
# ---------------------------------------------------------------------------

@dataclass
class QNetwork:
    input_dim: int
    hidden_sizes: tuple
    n_actions: int
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)
    w_value: np.ndarray = None
    b_value: np.ndarray = None
    w_adv: np.ndarray = None
    b_adv: np.ndarray = None

    @classmethod
    def init(cls, input_dim: int, hidden_sizes, n_actions: int,
             rng: np.random.Generator) -> "QNetwork":
        net = cls(input_dim=input_dim, hidden_sizes=tuple(hidden_sizes), n_actions=n_actions)
        fan_in = input_dim
        for width in net.hidden_sizes:
            net.weights.append(rng.standard_normal((fan_in, width)) * np.sqrt(2.0 / fan_in))
            net.biases.append(np.zeros(width))
            fan_in = width
        net.w_value = rng.standard_normal((fan_in, 1)) / np.sqrt(fan_in)
        net.b_value = np.zeros(1)
        net.w_adv = rng.standard_normal((fan_in, n_actions)) / np.sqrt(fan_in)
        net.b_adv = np.zeros(n_actions)
        return net

    def param_arrays(self) -> list:
        """All parameters in a fixed order (shared by optimizer and checkpoints)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        out.extend((self.w_value, self.b_value, self.w_adv, self.b_adv))
        return out

    def copy(self, frozen: bool = False) -> "QNetwork":
        net = QNetwork(
            input_dim=self.input_dim,
            hidden_sizes=self.hidden_sizes,
            n_actions=self.n_actions,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            w_value=self.w_value.copy(),
            b_value=self.b_value.copy(),
            w_adv=self.w_adv.copy(),
            b_adv=self.b_adv.copy(),
        )
        if frozen:
            for p in net.param_arrays():
                p.setflags(write=False)
        return net


def _forward_cached(net: QNetwork, x: np.ndarray):
    zs, acts = [], [x]
    h = x
    for w, b in zip(net.weights, net.biases):
        z = h @ w + b
        h = np.maximum(z, 0.0)
        zs.append(z)
        acts.append(h)
    value = h @ net.w_value + net.b_value      # (batch, 1)
    adv = h @ net.w_adv + net.b_adv            # (batch, A)
    q = value + adv - adv.mean(axis=1, keepdims=True)
    return q, (zs, acts)


def forward(net: QNetwork, feats) -> np.ndarray:
    """Q-values for one feature vector (A,) or a batch (batch, A)."""
    arr = np.asarray(feats, dtype=float)
    x = np.atleast_2d(arr)
    if x.shape[1] != net.input_dim:
        raise ContractViolation(
            f"feature dim {x.shape[1]} does not match network input {net.input_dim}")
    q, _ = _forward_cached(net, x)
    return q[0] if arr.ndim == 1 else q


def td_loss(net: QNetwork, x: np.ndarray, actions: np.ndarray, targets: np.ndarray) -> float:
    q, _ = _forward_cached(net, x)
    picked = q[np.arange(len(actions)), actions]
    return float(np.mean((picked - targets) ** 2))


def td_loss_grads(net: QNetwork, x: np.ndarray, actions: np.ndarray, targets: np.ndarray):
    """Mean-squared TD loss and its gradients w.r.t. every parameter.

    Gradient order matches ``param_arrays``. The dueling aggregation
    backpropagates as dV = sum_a dQ_a and dA = dQ - mean(dQ).
    """
    q, (zs, acts) = _forward_cached(net, x)
    batch = len(actions)
    picked = q[np.arange(batch), actions]
    diff = picked - targets
    loss = float(np.mean(diff ** 2))

    d_q = np.zeros_like(q)
    d_q[np.arange(batch), actions] = 2.0 * diff / batch
    d_value = d_q.sum(axis=1, keepdims=True)
    d_adv = d_q - d_q.mean(axis=1, keepdims=True)

    h_last = acts[-1]
    g_w_value = h_last.T @ d_value
    g_b_value = d_value.sum(axis=0)
    g_w_adv = h_last.T @ d_adv
    g_b_adv = d_adv.sum(axis=0)

    d_h = d_value @ net.w_value.T + d_adv @ net.w_adv.T
    g_weights = [None] * len(net.weights)
    g_biases = [None] * len(net.biases)
    for i in reversed(range(len(net.weights))):
        d_z = d_h * (zs[i] > 0.0)
        g_weights[i] = acts[i].T @ d_z
        g_biases[i] = d_z.sum(axis=0)
        d_h = d_z @ net.weights[i].T

    grads = []
    for gw, gb in zip(g_weights, g_biases):
        grads.extend((gw, gb))
    grads.extend((g_w_value, g_b_value, g_w_adv, g_b_adv))
    return loss, grads


# ---------------------------------------------------------------------------
# action selection
# ---------------------------------------------------------------------------

def select_action(net: QNetwork, feats, mask: np.ndarray, eps: float,
                  rng: np.random.Generator) -> Action:
    """Epsilon-greedy over the legal actions only; ties go to the lowest index."""
    legal = np.flatnonzero(mask)
    if legal.size == 0:
        raise ContractViolation("empty action mask reached the policy")
    if eps > 0.0 and rng.random() < eps:
        return Action(int(rng.choice(legal)))
    q = forward(net, feats)
    return Action(int(np.argmax(np.where(mask, q, -np.inf))))


def epsilon_at(episode: int, config: SimConfig) -> float:
    horizon = config.eps_decay_frac * config.num_train_episodes
    if horizon <= 0:
        return config.eps_final
    frac = min(1.0, episode / horizon)
    return config.eps_start + (config.eps_final - config.eps_start) * frac


# ---------------------------------------------------------------------------
# replay buffer
# ---------------------------------------------------------------------------

class ReplayBuffer:
    """Fixed-capacity ring buffer; insertions are atomic, sampling is serialized."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: list = []
        self._cursor = 0
        self._lock = threading.Lock()

    def push(self, exp: Experience) -> None:
        with self._lock:
            if len(self._items) < self.capacity:
                self._items.append(exp)
            else:
                self._items[self._cursor] = exp
            self._cursor = (self._cursor + 1) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> list:
        with self._lock:
            if len(self._items) < batch_size:
                raise ValueError(f"buffer holds {len(self._items)} < batch {batch_size}")
            idx = rng.choice(len(self._items), size=batch_size, replace=False)
            return [self._items[i] for i in idx]

    def __len__(self) -> int:
        return len(self._items)


# ---------------------------------------------------------------------------
# training state and updates
# ---------------------------------------------------------------------------

class Adam:
    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


@dataclass
class TrainState:
    online: QNetwork
    target: QNetwork
    optimizer: Adam
    grad_steps: int = 0
    epsilon: float = 1.0

    @classmethod
    def init(cls, config: SimConfig, rng: np.random.Generator) -> "TrainState":
        online = QNetwork.init(feature_dim(config), config.hidden_sizes, N_ACTIONS, rng)
        return cls(
            online=online,
            target=online.copy(),
            optimizer=Adam(online.param_arrays(), lr=config.learning_rate),
            epsilon=config.eps_start,
        )


def double_target(batch, online: QNetwork, target: QNetwork, gamma: float,
                  config: SimConfig) -> np.ndarray:
    """Bootstrapped targets with decoupled selection and evaluation.

    The online net picks the best *legal* next action, the target net
    scores it; transitions that end the episode use the bare reward.
    """
    rewards = np.array([e.reward for e in batch])
    terminal = np.array([e.next_obs.t >= config.episode_len for e in batch])
    if gamma == 0.0 or bool(np.all(terminal)):
        return rewards.copy()
    x_next = encode_batch([e.next_obs for e in batch], config)
    masks = np.stack([e.next_mask for e in batch]).astype(bool)
    q_online = forward(online, x_next)
    a_star = np.argmax(np.where(masks, q_online, -np.inf), axis=1)
    q_target = forward(target, x_next)
    bootstrap = q_target[np.arange(len(batch)), a_star]
    return rewards + gamma * np.where(terminal, 0.0, bootstrap)


def clip_gradients(grads, max_norm: float) -> list:
    """Rescale so the global gradient norm does not exceed ``max_norm``."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total <= max_norm or total == 0.0:
        return list(grads)
    scale = max_norm / total
    return [g * scale for g in grads]


def sgd_update(state: TrainState, minibatch, config: SimConfig) -> float:
    """One gradient step on a sampled minibatch; returns the TD loss."""
    x = encode_batch([e.obs for e in minibatch], config)
    actions = np.array([int(e.action) for e in minibatch])
    targets = double_target(minibatch, state.online, state.target, config.gamma, config)
    loss, grads = td_loss_grads(state.online, x, actions, targets)
    if not np.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss at grad step {state.grad_steps}")
    if config.grad_clip_norm > 0.0:
        grads = clip_gradients(grads, config.grad_clip_norm)
    state.optimizer.step(state.online.param_arrays(), grads)
    state.grad_steps += 1
    if state.grad_steps % config.target_sync_period == 0:
        state.target = state.online.copy()
    return loss


def sync_policy(state: TrainState) -> QNetwork:
    """Immutable snapshot of the online policy for distribution to agents."""
    return state.online.copy(frozen=True)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, net: QNetwork, config: SimConfig, extra: dict | None = None) -> None:
    meta = {
        "config_hash": config.config_hash(),
        "input_dim": net.input_dim,
        "hidden_sizes": list(net.hidden_sizes),
        "n_actions": net.n_actions,
    }
    if extra:
        meta.update(extra)
    arrays = {f"param_{i}": p for i, p in enumerate(net.param_arrays())}
    np.savez(path, meta=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path, config: SimConfig) -> tuple:
    """Load a policy checkpoint; refuses to run under a different config."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"][()]))
        if meta["config_hash"] != config.config_hash():
            raise CheckpointMismatch(
                f"checkpoint config hash {meta['config_hash'][:12]}... does not match "
                f"current config {config.config_hash()[:12]}...")
        params = [data[f"param_{i}"] for i in range(len(data.files) - 1)]
    net = QNetwork(input_dim=meta["input_dim"], hidden_sizes=tuple(meta["hidden_sizes"]),
                   n_actions=meta["n_actions"])
    n_hidden = len(net.hidden_sizes)
    for i in range(n_hidden):
        net.weights.append(params[2 * i])
        net.biases.append(params[2 * i + 1])
    net.w_value, net.b_value, net.w_adv, net.b_adv = params[2 * n_hidden:]
    return net, meta
