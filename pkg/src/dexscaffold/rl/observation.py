"""Policy observation assembly.

Layout (k keypoints, 130 + 51k values):

    joint positions            22
    joint velocities           22
    smoothed action            22   scaled wrist residual (6) + finger joint targets (16)
    fingertip poses            28   4 x (position, quaternion w x y z)
    initial keypoints          3k
    current keypoints          3k
    planned keypoints          3 * 15 * k   plan window over [t, T-1]
    current wrist pose          6   position + XYZ Euler
    planned wrist poses        30   window entries 0, 3, 6, 9, 12
"""

from __future__ import annotations

import numpy as np

from ..geometry import Array
from ..plan import WINDOW, KeypointPlan, window_indices
from ..reward import DimensionMismatch

BASE_DIM = 130
WRIST_SAMPLES = (0, 3, 6, 9, 12)
LAYOUT = ("q", "qd", "smoothed_action", "fingertips", "initial_keypoints", "keypoints",
          "planned_keypoints", "wrist", "planned_wrist")


def obs_dim(k: int) -> int:
    return BASE_DIM + 51 * k


def segment_sizes(k: int) -> dict[str, int]:
    return {"q": 22, "qd": 22, "smoothed_action": 22, "fingertips": 28,
            "initial_keypoints": 3 * k, "keypoints": 3 * k, "planned_keypoints": 3 * WINDOW * k,
            "wrist": 6, "planned_wrist": 6 * len(WRIST_SAMPLES)}


def window_table(T: int) -> np.ndarray:
    """(T, 15) plan indices for every step."""
    return np.stack([window_indices(t, T) for t in range(T)])


def assemble_batch(q: Array, qd: Array, smoothed: Array, fingertips: Array, initial_kp: Array,
                   keypoints: Array, plan_kp: Array, plan_wrist: Array, wrist_euler: Array,
                   t: np.ndarray, table: np.ndarray, rows=None) -> Array:
    """Batched assembly.  plan_kp (N, T, k, 3); plan_wrist (N, T, 3); t (B,).

    ``rows`` (B,) selects the plan of every env from the N stored plans;
    by default env b uses plan b.
    """
    _, T, k, _ = plan_kp.shape
    B = q.shape[0]
    if initial_kp.shape != (B, k, 3) or keypoints.shape != (B, k, 3):
        raise DimensionMismatch(f"keypoint arrays {initial_kp.shape}/{keypoints.shape} vs k={k}")
    if q.shape != (B, 22) or qd.shape != (B, 22) or smoothed.shape != (B, 22):
        raise DimensionMismatch("proprioceptive blocks must be (B, 22)")
    if fingertips.shape != (B, 28):
        raise DimensionMismatch("fingertip block must be (B, 28)")
    idx = table[np.minimum(t, T - 1)]                                   # (B, 15)
    rows = (np.arange(B) if rows is None else np.asarray(rows))[:, None]
    fut_kp = plan_kp[rows, idx]                                         # (B, 15, k, 3)
    fut_w = plan_wrist[rows, idx[:, list(WRIST_SAMPLES)]]               # (B, 5, 3)
    euler = np.broadcast_to(wrist_euler, (B, len(WRIST_SAMPLES), 3))
    parts = [q, qd, smoothed, fingertips, initial_kp.reshape(B, -1), keypoints.reshape(B, -1),
             fut_kp.reshape(B, -1), q[:, :6], np.concatenate([fut_w, euler], -1).reshape(B, -1)]
    out = np.concatenate(parts, axis=-1)
    assert out.shape[1] == obs_dim(k)
    return out


def smoothed_action22(a_smooth: Array, hand, scale) -> Array:
    """Observation view of the smoothed raw action."""
    wrist = np.concatenate([a_smooth[:, :3] * scale.translation,
                            a_smooth[:, 3:6] * scale.rotation], axis=-1)
    return np.concatenate([wrist, hand.coupling.targets(a_smooth[:, 6:])], axis=-1)


def assemble_observation(state, plan: KeypointPlan, t: int, k: int, sim=None) -> Array:
    """Observation for env 0 of ``state`` against ``plan`` at step ``t``.

    ``sim`` supplies the hand model, residual scale and default wrist
    orientation; package defaults are used without it.
    """
    if plan.k != k or state.keypoints.shape[1] != k:
        raise DimensionMismatch(f"plan has k={plan.k}, state {state.keypoints.shape[1]}, asked {k}")
    from ..control import ResidualScale
    from ..env.hand import HandModel
    hand = sim.hand if sim is not None else HandModel()
    scale = sim.config.residual if sim is not None else ResidualScale()
    euler = sim.default_euler if sim is not None else np.zeros(3)
    B = state.B
    obs = assemble_batch(state.q, state.qd, smoothed_action22(state.a_smooth, hand, scale),
                         hand.finger_poses(state.q),
                         np.broadcast_to(plan.initial_keypoints, (B, k, 3)), state.keypoints,
                         plan.keypoints[None], plan.wrist[None], euler,
                         np.full(B, t), window_table(plan.T), rows=np.zeros(B, dtype=np.int64))
    return obs[0]
