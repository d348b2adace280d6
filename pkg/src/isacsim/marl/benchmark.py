"""Single-follower spacing task: a double integrator used as a learning sanity check.

State is the spacing error e and its rate; the follower's acceleration u drives
de/dt = e_rate, d(e_rate)/dt = -u (the leader cruises at constant speed).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .ddpg import AgentBundle
from .training import Schedule, train

AGENT = "follower"


@dataclass
class SpacingTask:
    dt: float = 0.1
    steps: int = 100
    u_max: float = 2.0
    e0: float = 2.0
    rate0: float = 1.0
    seed: int = 0
    reward_scale: float = 0.25
    cost_clip: float = 4.0

    long_agents = (AGENT,)
    short_agents = ()
    short_per_long = 1

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)
        self.e = 0.0
        self.rate = 0.0
        self.abs_err: list = []
        self._u = 0.0

    @property
    def long_steps(self) -> int:
        return self.steps

    def reset(self, episode: int) -> None:
        self.e = self.rng.uniform(-self.e0, self.e0)
        self.rate = self.rng.uniform(-self.rate0, self.rate0)
        self.abs_err = []

    def observe(self, name: str):
        obs = np.array([self.e / 5.0, self.rate / 5.0])
        return obs, obs

    def apply_long(self, actions) -> None:
        self._u = float(actions[AGENT][0])

    def step_short(self, actions) -> dict:
        self.e += self.dt * self.rate
        self.rate -= self.dt * self._u
        return {}

    def finish_long(self) -> dict:
        self.abs_err.append(abs(self.e))
        # clipped quadratic: large excursions early in training must not swamp the critic
        cost = self.e ** 2 + 0.1 * self.rate ** 2 + 0.01 * self._u ** 2
        return {AGENT: -self.reward_scale * min(cost, self.cost_clip)}

    def finish_episode(self) -> dict:
        return {"mean_abs_error": float(np.mean(self.abs_err))}


def run_benchmark(seed: int, episodes: int = 300, hidden=(64, 64), gamma: float = 0.95,
                  task: Optional[SpacingTask] = None) -> list[float]:
    """Train one agent; returns the per-episode mean |e|."""
    task = task if task is not None else SpacingTask(seed=seed)
    ss = np.random.SeedSequence(seed)
    init_ss, act_ss = ss.spawn(2)
    agent = AgentBundle.create(AGENT, 2, 1, -task.u_max, task.u_max, hidden=hidden, gamma=gamma,
                               tau=0.01, lr_actor=1e-3, lr_critic=1e-3, capacity=100_000,
                               rng=np.random.default_rng(init_ss))
    sched = Schedule(episodes=episodes, batch_size=64, learn_start=640,
                     noise_start=0.3, noise_end=0.05, noise_decay_episodes=episodes // 2)
    results = train(task, {AGENT: agent}, sched, np.random.default_rng(act_ss))
    return [r.metrics["mean_abs_error"] for r in results]
