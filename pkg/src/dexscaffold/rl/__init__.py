"""Actor-critic networks, observation assembly and PPO."""

from .checkpoint import CHECKPOINT_VERSION, CheckpointError, load_checkpoint, save_checkpoint
from .network import (MLP, ActorCritic, NonFinite, gaussian_entropy, gaussian_kl,
                      gaussian_log_prob)
from .normalizer import RunningNormalizer, normalize_obs
from .observation import LAYOUT, assemble_batch, assemble_observation, obs_dim, segment_sizes
from .ppo import (Adam, PPOConfig, RolloutBuffer, adapt_lr, clip_grad_norm, gae,
                  normalize_advantages, ppo_loss_and_grads, ppo_update, surrogate)

__all__ = ["CHECKPOINT_VERSION", "CheckpointError", "load_checkpoint", "save_checkpoint", "MLP",
           "ActorCritic", "NonFinite", "gaussian_entropy", "gaussian_kl", "gaussian_log_prob",
           "RunningNormalizer", "normalize_obs", "LAYOUT", "assemble_batch",
           "assemble_observation", "obs_dim", "segment_sizes", "Adam", "PPOConfig",
           "RolloutBuffer", "adapt_lr", "clip_grad_norm", "gae", "normalize_advantages",
           "ppo_loss_and_grads", "ppo_update", "surrogate"]
