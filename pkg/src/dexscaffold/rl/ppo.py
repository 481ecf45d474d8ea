"""Proximal policy optimisation on top of :mod:`dexscaffold.rl.network`."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from ..geometry import Array
from ..kernels import gae as _gae_kernel
from .network import ActorCritic, NonFinite, gaussian_entropy, gaussian_kl, gaussian_log_prob

LR_BOUNDS = (1e-6, 1e-2)


@dataclass(frozen=True)
class PPOConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    value_coef: float = 1.0
    clipped_value: bool = True
    entropy_coef: float = 0.01
    desired_kl: float = 0.01
    learning_rate: float = 3e-4
    epochs: int = 5
    minibatches: int = 16
    max_grad_norm: float = 1.0
    num_envs: int = 256
    steps_per_env: int = 24
    max_iterations: int = 1500
    adaptive_lr: bool = True

    def __post_init__(self):
        for name in ("gamma", "lam", "clip", "learning_rate", "epochs", "minibatches",
                     "max_grad_norm", "num_envs", "steps_per_env", "desired_kl"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.clip >= 1:
            raise ValueError("clip must be < 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


def gae(rewards, values, dones, gamma: float, lam: float, last_values=None):
    """Advantages and returns for a (T, B) rollout; ``dones`` masks episode ends."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.ndim == 1:
        rewards, values = rewards[:, None], values[:, None]
        dones = np.asarray(dones, dtype=np.float64)[:, None]
        last = np.zeros(1) if last_values is None else np.atleast_1d(last_values)
        adv = _gae_kernel(rewards, values, dones, last, gamma, lam)
        return adv[:, 0], adv[:, 0] + values[:, 0]
    last = np.zeros(rewards.shape[1]) if last_values is None else np.asarray(last_values, dtype=np.float64)
    adv = _gae_kernel(rewards, values, np.asarray(dones, dtype=np.float64), last, gamma, lam)
    return adv, adv + values


class RolloutBuffer:
    """Fixed (steps, envs) storage for one PPO iteration."""

    def __init__(self, steps: int, envs: int, obs_dim: int, act_dim: int):
        self.steps, self.envs = steps, envs
        self.obs = np.zeros((steps, envs, obs_dim))
        self.actions = np.zeros((steps, envs, act_dim))
        self.log_probs = np.zeros((steps, envs))
        self.values = np.zeros((steps, envs))
        self.rewards = np.zeros((steps, envs))
        self.dones = np.zeros((steps, envs))
        self.causes = np.zeros((steps, envs), dtype=np.int8)   # 0 running, 1 terminated, 2 timeout
        self.mu = np.zeros((steps, envs, act_dim))
        self.advantages = np.zeros((steps, envs))
        self.returns = np.zeros((steps, envs))
        self.ptr = 0

    @property
    def full(self) -> bool:
        return self.ptr == self.steps

    def add(self, obs, actions, log_probs, values, rewards, dones, causes, mu) -> None:
        if self.full:
            raise IndexError("rollout buffer is full")
        i = self.ptr
        self.obs[i] = obs
        self.actions[i] = actions
        self.log_probs[i] = log_probs
        self.values[i] = values
        self.rewards[i] = rewards
        self.dones[i] = dones
        self.causes[i] = causes
        self.mu[i] = mu
        self.ptr += 1

    def finish(self, last_values, gamma: float, lam: float) -> None:
        self.advantages, self.returns = gae(self.rewards, self.values, self.dones, gamma, lam,
                                            last_values)

    def reset(self) -> None:
        self.ptr = 0


class Adam:
    def __init__(self, params, lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        return {"lr": self.lr, "t": self.t, "m": self.m, "v": self.v}


def surrogate(ratio, advantages, clip: float):
    """Clipped surrogate objective per sample (to be maximised)."""
    return np.minimum(ratio * advantages, np.clip(ratio, 1.0 - clip, 1.0 + clip) * advantages)


def ppo_loss_and_grads(net: ActorCritic, obs, actions, old_log_probs, old_values, advantages,
                       returns, cfg: PPOConfig):
    """Loss terms and parameter gradients of surrogate + value - entropy."""
    n = obs.shape[0]
    mean, log_std, value, cache = net.forward(obs)
    logp = gaussian_log_prob(mean, log_std, actions)
    ratio = np.exp(logp - old_log_probs)
    s1 = ratio * advantages
    s2 = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * advantages
    policy_loss = -np.mean(np.minimum(s1, s2))
    d_logp = np.where(s1 <= s2, -advantages * ratio, 0.0) / n

    if cfg.clipped_value:
        v_clip = old_values + np.clip(value - old_values, -cfg.clip, cfg.clip)
        l1 = (value - returns) ** 2
        l2 = (v_clip - returns) ** 2
        value_loss = np.mean(np.maximum(l1, l2))
        inside = np.abs(value - old_values) < cfg.clip
        d_value = np.where(l1 >= l2, 2.0 * (value - returns),
                           2.0 * (v_clip - returns) * inside) / n
    else:
        value_loss = np.mean((value - returns) ** 2)
        d_value = 2.0 * (value - returns) / n
    entropy = gaussian_entropy(log_std)
    loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy

    inv_var = np.exp(-2.0 * log_std)
    diff = actions - mean
    d_mean = d_logp[:, None] * diff * inv_var
    d_log_std = (d_logp[:, None] * (diff * diff * inv_var - 1.0)).sum(axis=0) - cfg.entropy_coef
    grads = net.backward(cache, d_mean, d_log_std, cfg.value_coef * d_value)
    info = {"loss": float(loss), "policy_loss": float(policy_loss),
            "value_loss": float(value_loss), "entropy": entropy,
            "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > cfg.clip)),
            "mean": mean}
    return loss, grads, info


def clip_grad_norm(grads, max_norm: float) -> float:
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if total > max_norm:
        scale = max_norm / (total + 1e-6)
        for g in grads:
            g *= scale
    return total


def adapt_lr(lr: float, kl: float, desired: float) -> float:
    if kl > 2.0 * desired:
        lr *= 0.5
    elif kl < desired / 2.0:
        lr *= 1.5
    return float(min(max(lr, LR_BOUNDS[0]), LR_BOUNDS[1]))


def normalize_advantages(adv: Array) -> Array:
    if adv.size < 2:
        return adv - adv.mean()
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def ppo_update(net: ActorCritic, buffer: RolloutBuffer, cfg: PPOConfig, opt: Adam,
               rng: np.random.Generator) -> dict:
    """Epochs x minibatches of clipped PPO; restores parameters on non-finite values."""
    D = buffer.obs.shape[-1]
    A = buffer.actions.shape[-1]
    obs = buffer.obs.reshape(-1, D)
    actions = buffer.actions.reshape(-1, A)
    old_logp = buffer.log_probs.reshape(-1)
    old_values = buffer.values.reshape(-1)
    adv_all = buffer.advantages.reshape(-1)
    ret_all = buffer.returns.reshape(-1)
    old_mu = buffer.mu.reshape(-1, A)
    N = obs.shape[0]
    mb = max(1, N // cfg.minibatches)

    backup = net.copy_params()
    opt_backup = ([m.copy() for m in opt.m], [v.copy() for v in opt.v], opt.t, opt.lr)
    old_log_std = net.log_std.copy()
    stats = {"loss": 0.0, "policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0,
             "clip_fraction": 0.0, "kl": 0.0, "grad_norm": 0.0}
    count = 0
    try:
        for _ in range(cfg.epochs):
            perm = rng.permutation(N)
            for j in range(cfg.minibatches):
                idx = perm[j * mb:(j + 1) * mb]
                if idx.size == 0:
                    continue
                adv = normalize_advantages(adv_all[idx])
                log_std_before = net.log_std.copy()
                loss, grads, info = ppo_loss_and_grads(net, obs[idx], actions[idx], old_logp[idx],
                                                       old_values[idx], adv, ret_all[idx], cfg)
                if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                    raise NonFinite("non-finite loss or gradient")
                kl = float(np.mean(gaussian_kl(old_mu[idx], old_log_std, info["mean"],
                                               log_std_before)))
                if cfg.adaptive_lr:
                    opt.lr = adapt_lr(opt.lr, kl, cfg.desired_kl)
                gn = clip_grad_norm(grads, cfg.max_grad_norm)
                opt.step(net.params(), grads)
                for key in ("loss", "policy_loss", "value_loss", "entropy", "clip_fraction"):
                    stats[key] += info[key]
                stats["kl"] += kl
                stats["grad_norm"] += gn
                count += 1
        if not all(np.all(np.isfinite(p)) for p in net.params()):
            raise NonFinite("parameters became non-finite")
    except NonFinite:
        net.set_params(backup)
        opt.m, opt.v, opt.t, opt.lr = opt_backup
        raise
    out = {k: v / max(count, 1) for k, v in stats.items()}
    out["lr"] = opt.lr
    return out
