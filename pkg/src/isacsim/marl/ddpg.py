"""DDPG agent: tanh actor scaled to box bounds, Q critic, target copies and their updates."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .nn import Adam, MlpParams, mlp_backward, mlp_forward, soft_update
from .replay import Batch, ReplayBuffer


@dataclass
class AgentBundle:
    """One learner: main/target actor and critic, optimizers and replay memory.

    The critic sees ``critic_dim`` features (the local observation, optionally
    extended with global features) concatenated with the action.
    """

    name: str
    actor: MlpParams
    critic: MlpParams
    target_actor: MlpParams
    target_critic: MlpParams
    low: np.ndarray
    high: np.ndarray
    buffer: ReplayBuffer
    gamma: float = 0.95
    tau: float = 0.005
    actor_opt: Adam = None
    critic_opt: Adam = None
    updates: int = 0
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError("discount must lie in [0, 1)")
        if not 0 < self.tau < 1:
            raise ValueError("soft-update rate must lie in (0, 1)")
        if self.actor.sizes != self.target_actor.sizes or self.critic.sizes != self.target_critic.sizes:
            raise ValueError("target networks must mirror the main networks")
        self.low = np.asarray(self.low, dtype=float)
        self.high = np.asarray(self.high, dtype=float)
        if np.any(self.high < self.low):
            raise ValueError("action bounds inverted")
        if self.actor.output != "tanh":
            raise ValueError("actor needs a tanh output layer")

    @classmethod
    def create(cls, name: str, obs_dim: int, act_dim: int, low, high, *,
               critic_dim: Optional[int] = None, hidden: Sequence[int] = (256, 256),
               gamma: float = 0.95, tau: float = 0.005, lr_actor: float = 1e-4,
               lr_critic: float = 1e-3, capacity: int = 10_000,
               rng: Optional[np.random.Generator] = None) -> "AgentBundle":
        rng = rng if rng is not None else np.random.default_rng(0)
        critic_dim = obs_dim if critic_dim is None else critic_dim
        actor = MlpParams.init([obs_dim, *hidden, act_dim], "tanh", rng)
        critic = MlpParams.init([critic_dim + act_dim, *hidden, 1], "linear", rng)
        buf = ReplayBuffer(capacity, obs_dim, act_dim, critic_dim,
                           rng=np.random.default_rng(rng.integers(2 ** 63)))
        low = np.broadcast_to(np.asarray(low, dtype=float), (act_dim,)).copy()
        high = np.broadcast_to(np.asarray(high, dtype=float), (act_dim,)).copy()
        return cls(name, actor, critic, actor.copy(), critic.copy(), low, high, buf,
                   gamma, tau, Adam(actor, lr_actor), Adam(critic, lr_critic))

    @property
    def obs_dim(self) -> int:
        return self.actor.sizes[0]

    @property
    def act_dim(self) -> int:
        return self.actor.sizes[-1]

    @property
    def critic_dim(self) -> int:
        return self.critic.sizes[0] - self.act_dim

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.high + self.low)

    @property
    def half(self) -> np.ndarray:
        return 0.5 * (self.high - self.low)

    def networks(self) -> dict:
        return {"actor": self.actor, "critic": self.critic,
                "target_actor": self.target_actor, "target_critic": self.target_critic}

    def is_finite(self) -> bool:
        return all(p.is_finite() for p in self.networks().values())


def policy(agent: AgentBundle, states: np.ndarray, target: bool = False) -> np.ndarray:
    net = agent.target_actor if target else agent.actor
    out, _ = mlp_forward(net, states)
    return agent.center + agent.half * out


def act(agent: AgentBundle, state: np.ndarray, noise: float,
        rng: Optional[np.random.Generator]) -> np.ndarray:
    """Deterministic policy plus Gaussian noise (scaled to the half-range), clipped to bounds."""
    a = policy(agent, np.asarray(state, dtype=float))
    if noise > 0:
        a = a + noise * agent.half * rng.standard_normal(agent.act_dim)
    return np.clip(a, agent.low, agent.high)


def q_value(agent: AgentBundle, critic_states: np.ndarray, actions: np.ndarray,
            target: bool = False) -> np.ndarray:
    net = agent.target_critic if target else agent.critic
    q, _ = mlp_forward(net, np.hstack([np.atleast_2d(critic_states), np.atleast_2d(actions)]))
    return q[:, 0]


def critic_update(agent: AgentBundle, batch: Batch) -> float:
    """One Adam step on the mean squared TD error; returns the pre-step loss."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    next_a = policy(agent, batch.s_next, target=True)
    y = batch.r + agent.gamma * (1.0 - batch.done) * q_value(agent, batch.critic_s_next, next_a, True)
    x = np.hstack([batch.critic_s, batch.a])
    q, cache = mlp_forward(agent.critic, x)
    err = q[:, 0] - y
    loss = float(np.mean(err ** 2))
    grads, _ = mlp_backward(agent.critic, cache, (2.0 / len(batch)) * err[:, None])
    agent.critic_opt.step(agent.critic, grads)
    return loss


def actor_update(agent: AgentBundle, batch: Batch) -> float:
    """One Adam step ascending the mean critic value of the policy; returns the gradient norm."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    raw, a_cache = mlp_forward(agent.actor, batch.s)
    a = agent.center + agent.half * raw
    _, c_cache = mlp_forward(agent.critic, np.hstack([batch.critic_s, a]))
    n = len(batch)
    _, dq_dx = mlp_backward(agent.critic, c_cache, np.full((n, 1), 1.0 / n))
    dq_da = dq_dx[:, agent.critic_dim:]
    # descend on -Q
    grads, _ = mlp_backward(agent.actor, a_cache, -dq_da * agent.half)
    norm = float(np.sqrt(sum(np.sum(g * g) for g in grads)))
    agent.actor_opt.step(agent.actor, grads)
    return norm


def learn_step(agent: AgentBundle, batch_size: int) -> tuple[float, float]:
    """Critic step, actor step, then soft target updates."""
    if len(agent.buffer) == 0:
        raise ValueError(f"{agent.name}: replay buffer is empty")
    batch = agent.buffer.sample(batch_size)
    loss = critic_update(agent, batch)
    gnorm = actor_update(agent, batch)
    soft_update(agent.actor, agent.target_actor, agent.tau)
    soft_update(agent.critic, agent.target_critic, agent.tau)
    agent.updates += 1
    return loss, gnorm
