"""Pure-numpy implementations of the hot kernels.

Signatures mirror ``_ckernels.pyx`` exactly; :mod:`dexscaffold.kernels`
selects one of the two at import time.
"""

from __future__ import annotations

import numpy as np

SPHERE, BOX, CYLINDER = 0, 1, 2


def signed_distances(points, obj_pos, obj_rot, shapes, dims):
    """Signed distance from points to primitive surfaces.

    points (B, P, 3); obj_pos (B, O, 3); obj_rot (B, O, 3, 3); shapes (O,);
    dims (O, 3).  Returns (B, P, O); negative inside.
    """
    points = np.asarray(points, dtype=np.float64)
    B, P, _ = points.shape
    O = len(shapes)
    out = np.empty((B, P, O))
    for o in range(O):
        rel = points - obj_pos[:, o][:, None, :]
        local = np.einsum("bpi,bij->bpj", rel, obj_rot[:, o])
        s = shapes[o]
        d = dims[o]
        if s == SPHERE:
            out[:, :, o] = np.sqrt((local**2).sum(-1)) - d[0]
        elif s == BOX:
            q = np.abs(local) - 0.5 * d
            outside = np.sqrt((np.maximum(q, 0.0) ** 2).sum(-1))
            out[:, :, o] = outside + np.minimum(q.max(-1), 0.0)
        elif s == CYLINDER:
            r = np.sqrt(local[..., 0] ** 2 + local[..., 1] ** 2) - d[0]
            h = np.abs(local[..., 2]) - 0.5 * d[2]
            out[:, :, o] = (np.minimum(np.maximum(r, h), 0.0)
                            + np.sqrt(np.maximum(r, 0.0) ** 2 + np.maximum(h, 0.0) ** 2))
        else:
            raise ValueError(f"unknown shape code {s}")
    return out


def gae(rewards, values, dones, last_values, gamma, lam):
    """Generalised advantage estimates over a (T, B) rollout."""
    rewards = np.asarray(rewards, dtype=np.float64)
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    running = np.zeros(rewards.shape[1:])
    next_v = np.asarray(last_values, dtype=np.float64)
    for t in range(T - 1, -1, -1):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_v * nonterminal - values[t]
        running = delta + gamma * lam * nonterminal * running
        adv[t] = running
        next_v = values[t]
    return adv


def zigzag_update(z, trend, ext, hi, swings, threshold):
    """Advance per-env swing detectors by one sample (in place).

    ``trend``: 0 undecided, +1 rising, -1 falling.  ``ext`` holds the running
    extreme of the current leg (the running minimum while undecided), ``hi``
    the running maximum while undecided.  A swing is a confirmed rise of at
    least ``threshold`` followed by a confirmed fall of at least ``threshold``.
    """
    z = np.asarray(z, dtype=np.float64)
    und = trend == 0
    ext[und] = np.minimum(ext[und], z[und])
    hi[und] = np.maximum(hi[und], z[und])
    go_up = und & (z - ext >= threshold)
    go_down = und & ~go_up & (hi - z >= threshold)

    up = trend == 1
    ext[up] = np.maximum(ext[up], z[up])
    fall = up & (ext - z >= threshold)
    down = trend == -1
    ext[down] = np.minimum(ext[down], z[down])
    rise = down & (z - ext >= threshold)

    swings[fall] += 1
    trend[go_up | rise] = 1
    trend[go_down | fall] = -1
    turned = go_up | go_down | fall | rise
    ext[turned] = z[turned]
