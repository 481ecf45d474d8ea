"""Shared fixtures: seeded generators, small scenes and plans."""

from __future__ import annotations

import numpy as np
import pytest

from dexscaffold._rng import make_rng
from dexscaffold.env.scene import sample_scene
from dexscaffold.env.tasks import get_task
from dexscaffold.plan import interpolate
from dexscaffold.planner.oracle import oracle_waypoints


@pytest.fixture
def rng():
    return make_rng(1234)


def scene_for(task: str, seed: int = 0):
    return sample_scene(get_task(task), seed)


def oracle_dense(task: str, seed: int = 0, n: int = 20):
    sc = scene_for(task, seed)
    return sc, interpolate(oracle_waypoints(sc, n), sc.task.horizon)


@pytest.fixture
def apple_scene():
    return scene_for("move_apple", 3)


@pytest.fixture
def hammer_plan():
    return oracle_dense("hammer", 5)


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), 1e-8)))


def toy_expert(obs):
    """Scripted residual for the point-tracking task: cancels the plan's wrist bias.

    The marker hangs at a fixed mount below the wrist, so the planned wrist
    minus (planned marker - mount) is the bias to remove.
    """
    from dexscaffold.control import ResidualScale
    from dexscaffold.rl.observation import LAYOUT, segment_sizes

    sizes = segment_sizes(1)
    off = dict(zip(LAYOUT, np.cumsum([0] + list(sizes.values()))[:-1]))
    P = obs[:, off["planned_keypoints"]:off["planned_keypoints"] + 3]
    W = obs[:, off["planned_wrist"]:off["planned_wrist"] + 3]
    mount = np.asarray(get_task("point_track").objects[0].position)
    a = np.zeros((obs.shape[0], 7))
    a[:, :3] = -(W - (P - mount)) / ResidualScale().translation
    return a


# -- acceptance verdict lines ---------------------------------------------------------

ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, title: str, ok: bool, detail: str) -> bool:
    """Store a one-line verdict printed in the terminal summary."""
    ACCEPTANCE[number] = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
