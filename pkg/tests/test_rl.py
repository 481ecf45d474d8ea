import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dexscaffold.env.sim import Simulator
from dexscaffold.env.tasks import get_task
from dexscaffold.plan import window_indices
from dexscaffold.reward import DimensionMismatch
from dexscaffold.rl.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from dexscaffold.rl.network import (MLP, ActorCritic, NonFinite, elu, elu_grad, gaussian_entropy,
                                    gaussian_kl, gaussian_log_prob)
from dexscaffold.rl.normalizer import STD_FLOOR, RunningNormalizer
from dexscaffold.rl.observation import (LAYOUT, assemble_observation, obs_dim, segment_sizes,
                                        window_table)
from dexscaffold.rl.ppo import (LR_BOUNDS, Adam, PPOConfig, RolloutBuffer, adapt_lr,
                                clip_grad_norm, gae, normalize_advantages, ppo_loss_and_grads,
                                ppo_update, surrogate)

from conftest import oracle_dense

FD_TOL = 1e-4


def rel(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


def fd_grad(f, x, h=1e-6):
    """Central differences of scalar ``f`` with respect to array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


# -- gradient suite ------------------------------------------------------------------

def test_elu_derivative(rng):
    x = rng.normal(size=50)
    x = x[np.abs(x) > 1e-3]
    fd = np.array([(elu(np.array([v + 1e-6])) - elu(np.array([v - 1e-6])))[0] / 2e-6 for v in x])
    assert rel(fd, elu_grad(x)) < FD_TOL


@pytest.mark.parametrize("sizes", [[5, 3], [5, 4, 3], [6, 8, 7, 2]])
def test_mlp_gradients(rng, sizes):
    mlp = MLP.init(sizes, rng, out_gain=1.0)
    x = rng.normal(size=(4, sizes[0]))
    w_out = rng.normal(size=(4, sizes[-1]))

    def f():
        return float(np.sum(mlp.forward(x)[0] * w_out))

    _, cache = mlp.forward(x)
    grads = mlp.backward(cache, w_out)
    for p, g in zip(mlp.params(), grads):
        assert rel(fd_grad(f, p), g) < FD_TOL


def test_gaussian_log_prob_gradients(rng):
    mean = rng.normal(size=(3, 4))
    log_std = rng.normal(scale=0.3, size=4)
    a = rng.normal(size=(3, 4))

    def f():
        return float(np.sum(gaussian_log_prob(mean, log_std, a)))

    inv_var = np.exp(-2 * log_std)
    d_mean = (a - mean) * inv_var
    d_log_std = ((a - mean) ** 2 * inv_var - 1.0).sum(0)
    assert rel(fd_grad(f, mean), d_mean) < FD_TOL
    assert rel(fd_grad(f, log_std), d_log_std) < FD_TOL


def test_gaussian_log_prob_matches_scipy(rng):
    from scipy.stats import norm
    mean, log_std, a = rng.normal(size=5), rng.normal(scale=0.3, size=5), rng.normal(size=5)
    expect = norm.logpdf(a, mean, np.exp(log_std)).sum()
    assert abs(gaussian_log_prob(mean, log_std, a) - expect) < 1e-12


def test_entropy_gradient_and_value(rng):
    from scipy.stats import norm
    log_std = rng.normal(scale=0.3, size=6)
    assert rel(fd_grad(lambda: gaussian_entropy(log_std), log_std), np.ones(6)) < FD_TOL
    assert abs(gaussian_entropy(log_std) - norm.entropy(scale=np.exp(log_std)).sum()) < 1e-12


def test_kl_zero_and_positive(rng):
    mu, ls = rng.normal(size=(4, 3)), rng.normal(scale=0.2, size=3)
    np.testing.assert_allclose(gaussian_kl(mu, ls, mu, ls), 0.0, atol=1e-15)
    assert np.all(gaussian_kl(mu, ls, mu + 0.1, ls * 0.5) > 0)


def tiny_batch(rng, net, n=12):
    obs = rng.normal(size=(n, net.obs_dim))
    mean, log_std, value, _ = net.forward(obs)
    actions = mean + np.exp(log_std) * rng.normal(size=mean.shape)
    logp = gaussian_log_prob(mean, log_std, actions)
    # Ratios and value offsets kept clear of the clip boundaries (FD needs smooth points).
    ratio = rng.choice([0.72, 1.0, 1.3], n) * rng.uniform(0.97, 1.03, n)
    old_logp = logp - np.log(ratio)
    old_values = value + rng.choice([-0.5, -0.05, 0.05, 0.5], n)
    adv = rng.normal(size=n)
    returns = value + rng.normal(size=n)
    return obs, actions, old_logp, old_values, adv, returns


@pytest.mark.parametrize("clipped_value", [True, False])
def test_full_ppo_loss_gradients(rng, clipped_value):
    net = ActorCritic.init(5, 3, hidden=(6, 6), seed=3, init_std=0.8)
    net.actor.weights[-1] *= 50.0        # non-trivial mean head
    cfg = PPOConfig(clipped_value=clipped_value)
    batch = tiny_batch(rng, net)

    def f():
        return float(ppo_loss_and_grads(net, *batch, cfg)[0])

    _, grads, info = ppo_loss_and_grads(net, *batch, cfg)
    assert 0 < info["clip_fraction"] < 1
    for p, g in zip(net.params(), grads):
        assert rel(fd_grad(f, p), g) < FD_TOL


def test_network_rejects_non_finite():
    net = ActorCritic.init(3, 2, hidden=(4,), seed=0)
    with pytest.raises(NonFinite), np.errstate(invalid="ignore"):
        net.forward(np.full((1, 3), np.inf))


def test_initial_std_and_head_scale():
    net = ActorCritic.init(10, 7, hidden=(32, 32), seed=0)
    assert np.all(net.log_std == 0.0)
    W = net.actor.weights[0]
    np.testing.assert_allclose(W @ W.T, 2.0 * np.eye(10), atol=1e-12)   # (10, 32): orthogonal rows
    assert np.abs(net.actor.weights[-1]).max() <= 0.01 + 1e-12


# -- GAE -------------------------------------------------------------------------------

def brute_gae(r, v, d, last, gamma, lam):
    T, B = r.shape
    adv = np.zeros((T, B))
    for b in range(B):
        nxt = np.append(v[1:, b], last[b])
        delta = [r[t, b] + gamma * nxt[t] * (1 - d[t, b]) - v[t, b] for t in range(T)]
        for t in range(T):
            total, weight = 0.0, 1.0
            for j in range(t, T):
                total += weight * delta[j]
                weight *= gamma * lam * (1 - d[j, b])
            adv[t, b] = total
    return adv


def test_gae_matches_double_sum(rng):
    for _ in range(100):
        T, B = rng.integers(1, 9), rng.integers(1, 4)
        r, v = rng.normal(size=(T, B)), rng.normal(size=(T, B))
        d = (rng.random((T, B)) < 0.25).astype(float)
        last = rng.normal(size=B)
        gamma, lam = rng.uniform(0.8, 1.0), rng.uniform(0.8, 1.0)
        adv, ret = gae(r, v, d, gamma, lam, last)
        assert np.max(np.abs(adv - brute_gae(r, v, d, last, gamma, lam))) < 1e-10
        assert np.max(np.abs(ret - (adv + v))) < 1e-12


def test_gae_single_step_and_1d():
    adv, ret = gae([1.0], [0.5], [1.0], 0.99, 0.95)
    assert adv[0] == 0.5 and ret[0] == 1.0
    adv, _ = gae([1.0, 1.0], [0.0, 0.0], [0.0, 0.0], 0.5, 1.0)
    np.testing.assert_allclose(adv, [1.5, 1.0])


# -- PPO pieces --------------------------------------------------------------------------

def test_surrogate_clipping():
    s = surrogate(np.array([1.5, 0.5, 1.5, 0.5]), np.array([1.0, 1.0, -1.0, -1.0]), 0.2)
    np.testing.assert_allclose(s, [1.2, 0.5, -1.5, -0.8])


def test_adapt_lr_rule_and_bounds():
    assert adapt_lr(1e-3, 0.05, 0.01) == 5e-4
    assert adapt_lr(1e-3, 0.001, 0.01) == 1.5e-3
    assert adapt_lr(1e-3, 0.01, 0.01) == 1e-3
    assert adapt_lr(LR_BOUNDS[1], 0.0, 0.01) == LR_BOUNDS[1]
    assert adapt_lr(LR_BOUNDS[0], 1.0, 0.01) == LR_BOUNDS[0]


def test_adam_first_step():
    p = [np.array([1.0, -2.0])]
    g = [np.array([0.5, -4.0])]
    opt = Adam(p, lr=0.1)
    opt.step(p, g)
    np.testing.assert_allclose(p[0], [1.0 - 0.1, -2.0 + 0.1], atol=1e-7)


def test_clip_grad_norm_and_advantages(rng):
    g = [np.array([3.0, 4.0])]
    assert clip_grad_norm(g, 1.0) == 5.0
    assert abs(np.linalg.norm(g[0]) - 1.0) < 1e-6
    a = normalize_advantages(rng.normal(3.0, 2.0, 100))
    assert abs(a.mean()) < 1e-12 and abs(a.std() - 1.0) < 1e-6


def test_config_validation():
    with pytest.raises(ValueError):
        PPOConfig(clip=1.5)
    with pytest.raises(ValueError):
        PPOConfig(max_iterations=-1)
    assert PPOConfig().digest() == PPOConfig().digest() != PPOConfig(gamma=0.9).digest()


def filled_buffer(seed):
    rng = np.random.default_rng(seed)
    net = ActorCritic.init(6, 2, hidden=(8,), seed=seed)
    buf = RolloutBuffer(5, 4, 6, 2)
    for _ in range(5):
        obs = rng.normal(size=(4, 6))
        a, logp, v = net.act(obs, rng)
        mu = net.forward(obs)[0]
        buf.add(obs, a, logp, v, rng.normal(size=4), rng.random(4) < 0.2, 0, mu)
    buf.finish(np.zeros(4), 0.99, 0.95)
    with pytest.raises(IndexError):
        buf.add(obs, a, logp, v, np.zeros(4), np.zeros(4), 0, mu)
    return net, buf


def test_ppo_update_is_reproducible():
    cfg = PPOConfig(epochs=2, minibatches=2)
    runs = []
    for _ in range(2):
        net, buf = filled_buffer(4)
        before = net.copy_params()
        opt = Adam(net.params(), cfg.learning_rate)
        stats = ppo_update(net, buf, cfg, opt, np.random.default_rng(0))
        runs.append((net.copy_params(), stats))
        assert any(not np.array_equal(a, b) for a, b in zip(before, net.params()))
    for a, b in zip(runs[0][0], runs[1][0]):
        assert np.array_equal(a, b)
    assert runs[0][1] == runs[1][1]


# -- normaliser --------------------------------------------------------------------------

def test_normalizer_matches_batch_moments(rng):
    norm = RunningNormalizer.create(3)
    chunks = [rng.normal(2.0, 3.0, (rng.integers(1, 20), 3)) for _ in range(10)]
    for c in chunks:
        norm.update(c)
    allx = np.concatenate(chunks)
    np.testing.assert_allclose(norm.mean, allx.mean(0), atol=1e-12)
    np.testing.assert_allclose(norm.var, allx.var(0), atol=1e-10)
    assert norm.count == len(allx)


def test_normalizer_eval_freezes_and_floor():
    norm = RunningNormalizer.create(2)
    norm.normalize(np.array([[1.0, 5.0], [3.0, 5.0]]))
    frozen = (norm.mean.copy(), norm.count)
    norm.eval()
    out = norm.normalize(np.array([[2.0, 6.0]]))
    assert np.array_equal(norm.mean, frozen[0]) and norm.count == frozen[1]
    assert out[0, 0] == 0.0 and out[0, 1] == 1.0 / STD_FLOOR


@settings(max_examples=30)
@given(st.lists(st.integers(1, 6), min_size=1, max_size=5), st.integers(0, 1000))
def test_normalizer_order_independent(sizes, seed):
    rng = np.random.default_rng(seed)
    chunks = [rng.normal(size=(n, 2)) for n in sizes]
    a, b = RunningNormalizer.create(2), RunningNormalizer.create(2)
    for c in chunks:
        a.update(c)
    b.update(np.concatenate(chunks[::-1]))
    np.testing.assert_allclose(a.mean, b.mean, atol=1e-12)
    np.testing.assert_allclose(a.var, b.var, atol=1e-12)


# -- checkpoints -----------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    net = ActorCritic.init(7, 3, hidden=(5, 4), seed=1)
    norm = RunningNormalizer.create(7)
    norm.update(np.arange(14.0).reshape(2, 7))
    path = save_checkpoint(tmp_path / "c.npz", net, norm, "abc", {"iteration": 3})
    net2, norm2, header = load_checkpoint(path, expect_hash="abc")
    for a, b in zip(net.params(), net2.params()):
        assert np.array_equal(a, b)
    assert np.array_equal(norm.mean, norm2.mean) and not norm2.training
    assert header["meta"] == {"iteration": 3}
    with pytest.raises(CheckpointError):
        load_checkpoint(path, expect_hash="other")
    (tmp_path / "bad.npz").write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad.npz")


# -- observations ------------------------------------------------------------------------

@pytest.mark.parametrize("task,k", [("point_track", 1), ("move_apple", 2)])
def test_observation_dimension(task, k):
    scene, plan = oracle_dense(task, 0)
    sim = Simulator(scene.task)
    state = sim.initial_state([scene])
    obs = assemble_observation(state, plan, 0, k, sim)
    assert obs.shape == (130 + 51 * k,) == (obs_dim(k),)
    assert sum(segment_sizes(k).values()) == obs_dim(k)
    assert tuple(segment_sizes(k)) == LAYOUT
    assert obs_dim(2) == 232


def test_observation_window_content():
    scene, plan = oracle_dense("move_apple", 1)
    sim = Simulator(scene.task)
    state = sim.initial_state([scene])
    t = 37
    obs = assemble_observation(state, plan, t, 2, sim)
    sizes = segment_sizes(2)
    offsets = np.cumsum([0] + list(sizes.values()))
    seg = dict(zip(LAYOUT, zip(offsets[:-1], offsets[1:])))
    lo, hi = seg["planned_keypoints"]
    idx = window_indices(t, plan.T)
    np.testing.assert_array_equal(obs[lo:hi], plan.keypoints[idx].ravel())
    lo, hi = seg["planned_wrist"]
    fut = obs[lo:hi].reshape(5, 6)
    np.testing.assert_array_equal(fut[:, :3], plan.wrist[idx[[0, 3, 6, 9, 12]]])
    lo, hi = seg["initial_keypoints"]
    np.testing.assert_array_equal(obs[lo:hi], plan.keypoints[0].ravel())
    np.testing.assert_array_equal(window_table(plan.T)[t], idx)


def test_observation_k_mismatch():
    scene, plan = oracle_dense("move_apple", 0)
    state = Simulator(scene.task).initial_state([scene])
    with pytest.raises(DimensionMismatch):
        assemble_observation(state, plan, 0, 1)
