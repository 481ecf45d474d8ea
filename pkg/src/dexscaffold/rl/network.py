"""Actor-critic MLPs with hand-written reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import Array

LOG_2PI = float(np.log(2.0 * np.pi))


class NonFinite(FloatingPointError):
    pass


def elu(x: Array) -> Array:
    neg = np.minimum(x, 0.0)
    np.expm1(neg, out=neg)
    neg += np.maximum(x, 0.0)
    return neg


def elu_grad(x: Array) -> Array:
    return np.exp(np.minimum(x, 0.0))


def orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float) -> Array:
    a = rng.normal(size=(max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


@dataclass
class MLP:
    """Dense layers with ELU between them and a linear output layer.

    Weights are stored as (in, out) so ``y = x @ W + b``.
    """

    weights: list[Array]
    biases: list[Array]

    @classmethod
    def init(cls, sizes, rng: np.random.Generator, hidden_gain: float = np.sqrt(2.0),
             out_gain: float = 1.0, dtype=np.float64) -> MLP:
        ws, bs = [], []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            gain = out_gain if i == len(sizes) - 2 else hidden_gain
            ws.append(orthogonal(rng, a, b, gain).astype(dtype))
            bs.append(np.zeros(b, dtype=dtype))
        return cls(ws, bs)

    @classmethod
    def zeros(cls, sizes) -> MLP:
        return cls([np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
                   [np.zeros(b) for b in sizes[1:]])

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def params(self) -> list[Array]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def forward(self, x: Array) -> tuple[Array, list[Array]]:
        """Returns the output and the cache: the input, then (pre-activation, activation) per hidden layer."""
        h = np.asarray(x, dtype=self.weights[0].dtype)
        cache = [h]
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W
            z += b
            if i < last:
                h = elu(z)
                cache.extend([z, h])
            else:
                h = z
        if not np.all(np.isfinite(h)):
            raise NonFinite("network output is not finite")
        return h, cache

    def backward(self, cache: list[Array], grad_out: Array) -> list[Array]:
        """Gradients in :meth:`params` order."""
        grads: list[tuple[Array, Array]] = []
        g = np.asarray(grad_out, dtype=self.weights[0].dtype)
        for i in range(len(self.weights) - 1, -1, -1):
            h_in = cache[0] if i == 0 else cache[2 * i]
            grads.append((h_in.T @ g, g.sum(axis=0)))
            if i > 0:
                # d elu / dz = exp(min(z, 0)) = min(h + 1, 1)
                g = g @ self.weights[i].T
                g *= np.minimum(cache[2 * i] + 1.0, 1.0)
        out: list[Array] = []
        for gw, gb in reversed(grads):
            out.extend([gw, gb])
        return out


@dataclass
class ActorCritic:
    actor: MLP
    critic: MLP
    log_std: Array
    obs_dim: int = field(init=False)
    act_dim: int = field(init=False)

    def __post_init__(self):
        self.obs_dim = self.actor.sizes[0]
        self.act_dim = self.actor.sizes[-1]

    @classmethod
    def init(cls, obs_dim: int, act_dim: int, hidden=(512, 512, 512), seed: int = 0,
             init_std: float = 1.0, dtype=np.float64) -> ActorCritic:
        """``dtype`` applies to the MLP weights; the log-std stays float64."""
        from .._rng import make_rng
        rng = make_rng(seed)
        actor = MLP.init([obs_dim, *hidden, act_dim], rng, out_gain=0.01, dtype=dtype)
        critic = MLP.init([obs_dim, *hidden, 1], rng, out_gain=1.0, dtype=dtype)
        return cls(actor, critic, np.full(act_dim, np.log(init_std)))

    def params(self) -> list[Array]:
        return self.actor.params() + self.critic.params() + [self.log_std]

    def set_params(self, values) -> None:
        for p, v in zip(self.params(), values):
            p[...] = v

    def copy_params(self) -> list[Array]:
        return [p.copy() for p in self.params()]

    def n_params(self) -> int:
        return int(sum(p.size for p in self.params()))

    def forward(self, obs: Array):
        mean, ca = self.actor.forward(obs)
        value, cc = self.critic.forward(obs)
        return mean, self.log_std, value[:, 0], (ca, cc)

    def backward(self, cache, d_mean: Array, d_log_std: Array, d_value: Array) -> list[Array]:
        ca, cc = cache
        return (self.actor.backward(ca, d_mean) + self.critic.backward(cc, d_value[:, None])
                + [d_log_std])

    def act(self, obs: Array, rng: np.random.Generator | None = None, deterministic: bool = False):
        mean, log_std, value, _ = self.forward(obs)
        if deterministic or rng is None:
            action = mean
        else:
            action = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
        return action, gaussian_log_prob(mean, log_std, action), value


def gaussian_log_prob(mean: Array, log_std: Array, action: Array) -> Array:
    z = (action - mean) * np.exp(-log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - 0.5 * mean.shape[-1] * LOG_2PI


def gaussian_entropy(log_std: Array) -> float:
    return float(np.sum(log_std + 0.5 * (LOG_2PI + 1.0)))


def gaussian_kl(mu_old, log_std_old, mu_new, log_std_new) -> Array:
    """KL(old || new) per sample for diagonal Gaussians."""
    var_old = np.exp(2 * log_std_old)
    var_new = np.exp(2 * log_std_new)
    return np.sum(log_std_new - log_std_old + (var_old + (mu_old - mu_new) ** 2) / (2 * var_new)
                  - 0.5, axis=-1)
