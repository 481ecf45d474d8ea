"""Quasi-static manipulation environment."""

from .hand import N_JOINTS, HandModel
from .scene import Scene, grasp_wrist, sample_scene
from .sim import SimConfig, SimState, Simulator, success_flags
from .tasks import SIM_TASKS, TASKS, TaskSpec, UnknownTask, get_task, load_task, dump_task

__all__ = ["N_JOINTS", "HandModel", "Scene", "grasp_wrist", "sample_scene", "SimConfig",
           "SimState", "Simulator", "success_flags", "SIM_TASKS", "TASKS", "TaskSpec",
           "UnknownTask", "get_task", "load_task", "dump_task"]
