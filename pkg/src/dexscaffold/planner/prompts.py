"""Task prompt templates (keypoint query and trajectory query)."""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from string import Template

import numpy as np

from ..env.tasks import TASKS, UnknownTask
from ..plan import HAND

PROMPT_TASKS = ("move_apple", "move_bottle", "open_drawer", "open_fridge", "hammer",
                "wipe_sponge", "close_scissors", "close_pliers", "place_bottle", "slide_box",
                "hammer_three_times", "point_track")

_NAMES = re.compile(r'\{"name": "([^"]+)", "point": \[\.\.\.\]\}')


@dataclass(frozen=True)
class TaskPrompt:
    task_id: str
    keypoint_template: str
    trajectory_template: str
    keypoint_names: tuple[str, ...]
    instruction: str

    def __post_init__(self):
        if not self.keypoint_names:
            raise ValueError("a prompt needs at least one keypoint name")
        for ph in ("$initial_positions", "$n_waypoints"):
            if ph not in self.trajectory_template:
                raise ValueError(f"trajectory template lacks {ph}")

    @property
    def k(self) -> int:
        return len(self.keypoint_names)

    def keypoint_text(self) -> str:
        return self.keypoint_template

    def trajectory_text(self, initial: dict[str, np.ndarray], n: int) -> str:
        """Fill the trajectory template; ``initial`` maps names (and hand) to prompt-frame points."""
        lines = []
        for name in self.keypoint_names + (HAND,):
            x, y, z = (float(v) for v in initial[name])
            lines.append(f"The initial position of the {name} is [{x:.2f}, {y:.2f}, {z:.2f}].")
        return Template(self.trajectory_template).substitute(
            initial_positions="\n".join(lines), n_waypoints=n)


def _read(name: str) -> str:
    return resources.files("dexscaffold.planner").joinpath("prompts", name).read_text()


def load_prompt(task_id: str) -> TaskPrompt:
    if task_id not in PROMPT_TASKS:
        raise UnknownTask(task_id)
    kp = _read(f"{task_id}.keypoints.txt")
    tr = _read(f"{task_id}.trajectory.txt")
    names = tuple(_NAMES.findall(kp))
    spec = TASKS.get(task_id)
    if spec is not None and spec.keypoint_names != names:
        raise ValueError(f"prompt names {names} disagree with task keypoints {spec.keypoint_names}")
    instruction = spec.instruction if spec is not None else tr.splitlines()[0]
    return TaskPrompt(task_id, kp, tr, names, instruction)
