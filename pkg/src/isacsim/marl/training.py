"""Two-time-scale training loop.

Each episode runs ``long_steps`` slow slots. In every slow slot the long-term
agents pick their action once, then ``T`` fast slots run in which the short-term
agents act. Transitions go to the acting agent's replay buffer; learning steps
are interleaved with environment steps once a buffer holds ``learn_start``
transitions, and every ``update_interval`` episodes the long-term agents
replay extra steps from their memory.

The environment is duck-typed; it must provide::

    long_agents, short_agents            # lists of agent names
    long_steps, short_per_long           # ints
    reset(episode)                       # new episode
    observe(name) -> (obs, critic_obs)
    apply_long(actions)                  # {name: action}, held for the slow slot
    step_short(actions) -> {name: reward}
    finish_long() -> {name: reward}
    finish_episode() -> dict             # per-episode metrics
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .ddpg import AgentBundle, act, learn_step
from .replay import Transition

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, episode: int, agent: str, detail: str):
        super().__init__(f"episode {episode}: agent {agent} diverged ({detail})")
        self.episode = episode
        self.agent = agent


@dataclass(frozen=True)
class Schedule:
    episodes: int = 100
    batch_size: int = 64
    learn_start: Optional[int] = None   # defaults to 10 x batch
    learn_every: int = 1
    update_interval: int = 10
    long_replay_steps: int = 10
    noise_start: float = 0.3
    noise_end: float = 0.02
    noise_decay_episodes: Optional[int] = None  # defaults to 80% of episodes

    def __post_init__(self):
        if self.episodes < 0 or self.batch_size < 1 or self.learn_every < 1 or self.update_interval < 1:
            raise ValueError("invalid schedule")

    @property
    def warmup(self) -> int:
        return 10 * self.batch_size if self.learn_start is None else self.learn_start

    def noise(self, episode: int) -> float:
        """Linearly decaying exploration scale."""
        span = self.noise_decay_episodes
        if span is None:
            span = max(1, int(0.8 * self.episodes))
        frac = min(1.0, episode / span) if span > 0 else 1.0
        return self.noise_start + frac * (self.noise_end - self.noise_start)


@dataclass
class EpisodeResult:
    episode: int
    metrics: dict
    rewards: dict
    critic_loss: dict
    actor_grad: dict
    noise: float
    short_transitions: int = 0
    long_transitions: int = 0


@dataclass
class _Accum:
    losses: dict = field(default_factory=dict)
    grads: dict = field(default_factory=dict)
    steps: int = 0

    def add(self, name, loss, grad):
        self.losses.setdefault(name, []).append(loss)
        self.grads.setdefault(name, []).append(grad)


def _learn(agent: AgentBundle, sched: Schedule, acc: _Accum, episode: int) -> None:
    if len(agent.buffer) < sched.warmup:
        return
    loss, grad = learn_step(agent, sched.batch_size)
    if not (math.isfinite(loss) and math.isfinite(grad)) or not agent.is_finite():
        raise TrainingDiverged(episode, agent.name, f"loss={loss}, grad_norm={grad}")
    acc.add(agent.name, loss, grad)


def run_episode(env, agents: Mapping[str, AgentBundle], episode: int, sched: Schedule,
                rng: np.random.Generator, learn: bool = True, noise: Optional[float] = None,
                on_short: Optional[Callable] = None, on_long: Optional[Callable] = None
                ) -> EpisodeResult:
    """One episode of the two-time-scale loop; ``learn=False`` gives a frozen rollout."""
    eps = sched.noise(episode) if noise is None else noise
    env.reset(episode)
    acc = _Accum()
    rewards = {n: 0.0 for n in list(env.long_agents) + list(env.short_agents)}
    n_short = n_long = 0
    for tau in range(env.long_steps):
        last_long = tau == env.long_steps - 1
        long_obs = {n: env.observe(n) for n in env.long_agents}
        long_act = {n: act(agents[n], long_obs[n][0], eps, rng) for n in env.long_agents}
        env.apply_long(long_act)
        for t in range(env.short_per_long):
            short_obs = {n: env.observe(n) for n in env.short_agents}
            short_act = {n: act(agents[n], short_obs[n][0], eps, rng) for n in env.short_agents}
            r_short = env.step_short(short_act)
            done = last_long and t == env.short_per_long - 1
            for n in env.short_agents:
                s_next, cs_next = env.observe(n)
                rewards[n] += r_short[n]
                if learn:
                    s, cs = short_obs[n]
                    agents[n].buffer.add(Transition(s, short_act[n], r_short[n], s_next, "S", done,
                                                    cs, cs_next))
            n_short += 1
            if on_short is not None:
                on_short(episode, tau, t, short_act, r_short)
            if learn and n_short % sched.learn_every == 0:
                for n in env.short_agents:
                    _learn(agents[n], sched, acc, episode)
        r_long = env.finish_long()
        for n in env.long_agents:
            s_next, cs_next = env.observe(n)
            rewards[n] += r_long[n]
            if learn:
                s, cs = long_obs[n]
                agents[n].buffer.add(Transition(s, long_act[n], r_long[n], s_next, "L", last_long,
                                                cs, cs_next))
            n_long += 1
            if on_long is not None:
                on_long(episode, tau, n, long_act[n], r_long[n])
        if learn:
            for n in env.long_agents:
                _learn(agents[n], sched, acc, episode)
    if learn and (episode + 1) % sched.update_interval == 0:
        for n in env.long_agents:
            for _ in range(sched.long_replay_steps):
                _learn(agents[n], sched, acc, episode)
    metrics = env.finish_episode()
    mean = lambda v: float(np.mean(v)) if v else float("nan")
    return EpisodeResult(
        episode=episode, metrics=metrics, rewards=rewards,
        critic_loss={n: mean(acc.losses.get(n, [])) for n in rewards},
        actor_grad={n: mean(acc.grads.get(n, [])) for n in rewards},
        noise=eps, short_transitions=n_short, long_transitions=n_long,
    )


def train(env, agents: Mapping[str, AgentBundle], sched: Schedule, rng: np.random.Generator,
          on_episode: Optional[Callable[[EpisodeResult], None]] = None, **hooks) -> list[EpisodeResult]:
    results = []
    for ep in range(sched.episodes):
        res = run_episode(env, agents, ep, sched, rng, learn=True, **hooks)
        log.debug("episode %d rewards %s", ep, res.rewards)
        results.append(res)
        if on_episode is not None:
            on_episode(res)
    return results
