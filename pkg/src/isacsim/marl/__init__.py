"""Multi-agent deep deterministic policy gradient, implemented on numpy."""

from .ddpg import AgentBundle, act, actor_update, critic_update, learn_step, policy, q_value
from .nn import Adam, MlpParams, StaleCacheError, mlp_backward, mlp_forward, soft_update
from .replay import Batch, ReplayBuffer, Transition
from .rewards import TTC_CAP, reward_cav, reward_rsu
from .training import EpisodeResult, Schedule, TrainingDiverged, run_episode, train
