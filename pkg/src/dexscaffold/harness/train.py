"""PPO training loop over a bank of planned initial conditions."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .._rng import spawn
from ..env.episode import anneal
from ..env.vec import TIMEOUT, TrackingEnv
from ..rl.checkpoint import save_checkpoint
from ..rl.network import ActorCritic, NonFinite, gaussian_log_prob
from ..rl.normalizer import RunningNormalizer
from ..rl.ppo import Adam, RolloutBuffer, ppo_update
from .config import RunConfig, dump_config
from .planning import TRAIN_SPLIT, PlanBank, build_plan_bank, make_backend, sample_scenes, save_plan_bundles

log = logging.getLogger(__name__)

METRICS_VERSION = 1
METRIC_COLUMNS = ("iteration", "mean_reward", "success_rate", "episodes", "kl", "lr",
                  "tracking_error", "delta", "policy_loss", "value_loss", "entropy",
                  "clip_fraction", "eval_success")


@dataclass
class TrainResult:
    checkpoint: Path
    last_checkpoint: Path
    metrics: Path
    best_success: float
    best_iteration: int
    iterations: int
    wall_time: float
    bank: PlanBank


class Policy:
    """Frozen network plus normaliser for deterministic or sampled actions."""

    def __init__(self, net: ActorCritic, normalizer: RunningNormalizer):
        self.net = net
        self.normalizer = normalizer

    def __call__(self, obs, rng=None) -> np.ndarray:
        x = self.normalizer.normalize(obs, update=False)
        mean, log_std, _, _ = self.net.forward(x)
        if rng is None:
            return mean
        return mean + np.exp(log_std) * rng.standard_normal(mean.shape)


def greedy_success(policy: Policy, bank: PlanBank, run: RunConfig, episodes: int,
                   seed: int) -> float:
    """Deterministic success rate over the first ``episodes`` training conditions (cycled)."""
    spec = run.spec
    n = len(bank)
    assign = np.arange(episodes) % n
    env = TrackingEnv(spec, bank.scenes, bank.plans, episodes, seed, dr=run.dr,
                      delta=anneal(spec.delta_init, 1.0), auto_reset=False, assign=assign)
    obs = env.observe()
    active = np.ones(episodes, dtype=bool)
    success = np.zeros(episodes, dtype=bool)
    for _ in range(env.T):
        obs, _, _, info = env.step(policy(obs))
        done = info["done"] & active
        if done.any():
            idx = np.flatnonzero(info["done"])
            flags = np.zeros(episodes, dtype=bool)
            flags[idx] = info["success"]
            success[done] = flags[done]
            active &= ~done
        if not active.any():
            break
    return float(success.mean())


def _format_row(row: dict) -> list[str]:
    out = []
    for key in METRIC_COLUMNS:
        v = row.get(key, "")
        out.append(v if isinstance(v, str) else (str(v) if isinstance(v, (int, np.integer))
                                                 else f"{v:.6g}"))
    return out


def train(run: RunConfig, bank: PlanBank | None = None, backend=None, progress=None) -> TrainResult:
    """Plan (unless given a bank), then run PPO with the annealed termination cutoff.

    Writes ``config.yaml``, ``plans/``, ``metrics.csv`` and
    ``checkpoints/{best,last}.npz`` under ``run.out_dir``, plus
    ``dr_draws.csv`` (per-env gain draws) when randomisation is on.  The checkpoint
    with the best greedy success on the training conditions is kept.
    """
    t0 = time.perf_counter()
    out = Path(run.out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    dump_config(run, out / "config.yaml")
    spec, cfg = run.spec, run.ppo
    if bank is None:
        scenes = sample_scenes(spec, run.seed, TRAIN_SPLIT, run.n_conditions)
        bank = build_plan_bank(run, scenes, backend or make_backend(run))
    save_plan_bundles(bank, out / "plans", spec.task_id)
    if bank.excluded:
        with open(out / "plans" / "excluded.json", "w") as fh:
            json.dump(bank.excluded, fh, indent=1)

    env = TrackingEnv(spec, bank.scenes, bank.plans, cfg.num_envs,
                      int(spawn(run.seed, 1).integers(2**62)), dr=run.dr)
    net = ActorCritic.init(env.obs_dim, env.act_dim, run.hidden, seed=run.seed,
                           dtype=np.dtype(run.precision))
    norm = RunningNormalizer.create(env.obs_dim)
    opt = Adam(net.params(), cfg.learning_rate)
    rng = spawn(run.seed, 2)
    buf = RolloutBuffer(cfg.steps_per_env, cfg.num_envs, env.obs_dim, env.act_dim)
    digest = run.digest()
    best_path = out / "checkpoints" / "best.npz"
    last_path = out / "checkpoints" / "last.npz"
    meta = {"task": spec.task_id, "iteration": 0, "success": 0.0, "k": spec.k,
            "conditions": len(bank)}
    save_checkpoint(best_path, net, norm, digest, meta)

    metrics_path = out / "metrics.csv"
    fh = open(metrics_path, "w", newline="")
    writer = csv.writer(fh, lineterminator="\n")
    fh.write(f"# metrics v{METRICS_VERSION}\n")
    writer.writerow(METRIC_COLUMNS)
    draws_fh = open(out / "dr_draws.csv", "w", newline="") if run.dr.enabled else None
    if draws_fh is not None:
        draws_fh.write("iteration,env,condition,stiffness,damping\n")
    best, best_it = -1.0, 0
    obs = env.observe()
    try:
        for it in range(cfg.max_iterations):
            env.set_progress(it / cfg.max_iterations)
            buf.reset()
            ep_success, rewards, errors = [], [], []
            for _ in range(cfg.steps_per_env):
                x = norm.normalize(obs)
                mean, log_std, value, _ = net.forward(x)
                action = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
                logp = gaussian_log_prob(mean, log_std, action)
                obs, r, cause, info = env.step(action)
                r = r.copy()
                timeout = cause == TIMEOUT
                if timeout.any():
                    tx = norm.normalize(info["timeout_obs"], update=False)
                    r[timeout] += cfg.gamma * net.forward(tx)[2]
                buf.add(x, action, logp, value, r, cause != 0, cause, mean)
                rewards.append(r.mean())
                errors.append(info["error"].mean())
                if "success" in info:
                    ep_success.extend(info["success"].tolist())
            last_v = net.forward(norm.normalize(obs, update=False))[2]
            buf.finish(last_v, cfg.gamma, cfg.lam)
            try:
                stats = ppo_update(net, buf, cfg, opt, rng)
            except NonFinite as exc:
                log.warning("iteration %d: update aborted (%s); parameters restored", it, exc)
                stats = {"kl": float("nan"), "lr": opt.lr, "policy_loss": float("nan"),
                         "value_loss": float("nan"), "entropy": float("nan"),
                         "clip_fraction": float("nan")}
            row = {"iteration": it, "mean_reward": float(np.mean(rewards)),
                   "success_rate": float(np.mean(ep_success)) if ep_success else 0.0,
                   "episodes": len(ep_success), "tracking_error": float(np.mean(errors)),
                   "delta": env.delta, **{k: stats[k] for k in ("kl", "lr", "policy_loss",
                                                                "value_loss", "entropy",
                                                                "clip_fraction")}}
            if (it + 1) % run.eval_interval == 0 or it + 1 == cfg.max_iterations:
                s = greedy_success(Policy(net, norm), bank, run, run.eval_episodes,
                                   int(spawn(run.seed, 3, it).integers(2**62)))
                row["eval_success"] = s
                if s > best:
                    best, best_it = s, it + 1
                    save_checkpoint(best_path, net, norm, digest,
                                    dict(meta, iteration=it + 1, success=s))
            writer.writerow(_format_row(row))
            fh.flush()
            if draws_fh is not None:
                for e, c, st, dp in env.draws:
                    draws_fh.write(f"{it},{e},{c},{st:.6g},{dp:.6g}\n")
                env.draws.clear()
            if progress is not None:
                progress(row)
    finally:
        fh.close()
        if draws_fh is not None:
            draws_fh.close()
    save_checkpoint(last_path, net, norm, digest,
                    dict(meta, iteration=cfg.max_iterations, success=max(best, 0.0)))
    return TrainResult(best_path, last_path, metrics_path, max(best, 0.0), best_it,
                       cfg.max_iterations, time.perf_counter() - t0, bank)
