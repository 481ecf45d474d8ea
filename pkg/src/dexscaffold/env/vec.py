"""Vectorised keypoint-tracking environment over a bank of (scene, plan) conditions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .._rng import make_rng
from ..geometry import Array
from ..plan import KeypointPlan
from ..reward import RewardParams, reward, tracking_error
from ..rl.observation import assemble_batch, obs_dim, smoothed_action22, window_table
from .episode import anneal
from .scene import Scene
from .sim import SimConfig, Simulator, success_flags
from .tasks import TaskSpec

RUNNING, TERMINATED, TIMEOUT = 0, 1, 2


@dataclass(frozen=True)
class DomainRandomization:
    """Gain and sensor-noise randomisation.

    Stiffness and damping multipliers are drawn once per episode; the joint
    tracking gain of the first-order hand is their ratio, capped at 1.
    Observation noise perturbs the proprioceptive and smoothed-action blocks
    every step.
    """

    enabled: bool = False
    multiplier_range: tuple[float, float] = (0.3, 3.0)
    obs_noise: float = 0.05
    action_noise: float = 0.05

    def __post_init__(self):
        lo, hi = self.multiplier_range
        if not 0 < lo <= hi:
            raise ValueError("multiplier range must be positive and ordered")
        if self.obs_noise < 0 or self.action_noise < 0:
            raise ValueError("noise scales must be non-negative")

    def sample(self, rng: np.random.Generator, n: int) -> tuple[Array, Array]:
        """(stiffness, damping) multipliers for ``n`` envs."""
        lo, hi = self.multiplier_range
        return rng.uniform(lo, hi, n), rng.uniform(lo, hi, n)

    @staticmethod
    def gain(stiffness: Array, damping: Array) -> Array:
        return np.minimum(1.0, stiffness / damping)


class TrackingEnv:
    """``num_envs`` parallel episodes, each replaying one of N stored conditions.

    Condition i pairs ``scenes[i]`` with ``plans[i]``; the plan's first
    keypoint frame is taken as the detected keypoints and bound to the scene
    objects.  Episodes end on timeout (t = T - 1) or when the mean keypoint
    error exceeds the current cutoff ``delta``.  With ``auto_reset`` finished
    envs restart on a random condition; without it they keep stepping and
    the caller ignores them.  ``assign`` fixes the first conditions.
    """

    def __init__(self, spec: TaskSpec, scenes: list[Scene], plans: list[KeypointPlan],
                 num_envs: int, seed: int, dr: DomainRandomization | None = None,
                 sim_config: SimConfig | None = None, reward_params: RewardParams = RewardParams(),
                 delta: float | None = None, auto_reset: bool = True, assign=None):
        if not plans or len(scenes) != len(plans):
            raise ValueError("need one plan per scene and at least one condition")
        if num_envs < 1:
            raise ValueError("num_envs must be >= 1")
        self.spec = spec
        self.sim = Simulator(spec, sim_config)
        self.dr = dr or DomainRandomization()
        self.reward_params = reward_params
        self.T = plans[0].T
        if any(p.T != self.T or p.k != spec.k for p in plans):
            raise ValueError("plans must share horizon and keypoint count")
        self.W = np.stack([p.wrist for p in plans])
        self.KP = np.stack([p.keypoints for p in plans])
        self.table = window_table(self.T)
        self.bank = self.sim.initial_state(scenes)
        self.sim.bind_keypoints(self.bank, self.KP[:, 0])
        self.n_conditions = len(plans)
        self.num_envs = num_envs
        self.rng = make_rng(seed)
        self.delta = spec.delta_init if delta is None else float(delta)
        self.k = spec.k
        self.obs_dim = obs_dim(spec.k)
        self.act_dim = spec.action_dim
        self.cond = np.zeros(num_envs, dtype=np.int64)
        self.state = self.bank.select(self.cond)
        self.max_error = np.zeros(num_envs)
        self.multipliers = np.ones((num_envs, 2))
        self.auto_reset = auto_reset
        self.draws: list[tuple[int, int, float, float]] = []   # (env, condition, stiffness, damping)
        self.reset(np.arange(num_envs), assign)

    def set_progress(self, p: float) -> None:
        self.delta = anneal(self.spec.delta_init, p)

    def reset(self, idx, cond=None) -> None:
        idx = np.asarray(idx, dtype=np.int64)
        if not idx.size:
            return
        if cond is None:
            cond = self.rng.integers(self.n_conditions, size=idx.size)
        cond = np.asarray(cond, dtype=np.int64)
        self.cond[idx] = cond
        self.state.assign(idx, self.bank.select(cond))
        if self.dr.enabled:
            stiff, damp = self.dr.sample(self.rng, idx.size)
            self.multipliers[idx] = np.stack([stiff, damp], -1)
            self.state.gain[idx] = DomainRandomization.gain(stiff, damp)
            self.draws.extend(zip(idx.tolist(), cond.tolist(), stiff.tolist(), damp.tolist()))
        self.max_error[idx] = 0.0

    def planned_keypoints(self) -> Array:
        return self.KP[self.cond, np.minimum(self.state.t, self.T - 1)]

    def observe(self) -> Array:
        s = self.state
        q, qd = s.q, s.qd
        smoothed = smoothed_action22(s.a_smooth, self.sim.hand, self.sim.config.residual)
        if self.dr.enabled:
            B = s.B
            q = q + self.rng.normal(0.0, self.dr.obs_noise, q.shape) if self.dr.obs_noise else q
            qd = qd + self.rng.normal(0.0, self.dr.obs_noise, qd.shape) if self.dr.obs_noise else qd
            if self.dr.action_noise:
                smoothed = smoothed + self.rng.normal(0.0, self.dr.action_noise, (B, 22))
        return assemble_batch(q, qd, smoothed, self.sim.hand.finger_poses(s.q),
                              self.KP[self.cond, 0], s.keypoints, self.KP, self.W,
                              self.sim.default_euler, s.t, self.table, rows=self.cond)

    def step(self, action):
        """Advance all envs; finished envs are reset before the next observation.

        Returns ``(obs, reward, cause, info)`` where ``cause`` is 0 running,
        1 terminated by the error cutoff, 2 timeout.  ``info`` carries the
        final observation of timed-out envs (for value bootstrapping), the
        success flags and worst errors of finished episodes, and the per-env
        tracking error.
        """
        s = self.state
        t_next = np.minimum(s.t + 1, self.T - 1)
        self.sim.step_inplace(s, action, self.W[self.cond, t_next])
        planned = self.KP[self.cond, np.minimum(s.t, self.T - 1)]
        err = tracking_error(s.keypoints, planned)
        r = reward(s.keypoints, planned, s.n_contact, self.reward_params)
        self.max_error = np.maximum(self.max_error, err)
        terminated = err > self.delta
        timeout = ~terminated & (s.t >= self.T - 1)
        done = terminated | timeout
        cause = np.where(terminated, TERMINATED, np.where(timeout, TIMEOUT, RUNNING)).astype(np.int8)
        info = {"error": err, "done": done}
        if done.any():
            succ = success_flags(self.spec, self.sim, s, self.max_error)
            info["success"] = succ[done]
            info["max_error"] = self.max_error[done].copy()
            info["finished_cause"] = cause[done]
            if timeout.any():
                info["timeout_obs"] = self.observe()[timeout]
            if self.auto_reset:
                self.reset(np.flatnonzero(done))
        return self.observe(), r, cause, info
