"""High-level planner: prompts, VLM backends, detection and trajectory generation."""

from .backends import (BackendError, CompositeBackend, MissingCredential, OracleBackend,
                       RemoteVLMBackend, ReplayBackend, ReplayMiss, SimulatedVLMBackend, VLMQuery,
                       backend_from_name)
from .core import (FEWSHOT_M, CountMismatch, PlannerRequest, detect_keypoints, generate_waypoints,
                   make_plan, refine_fewshot)
from .oracle import canonical_keyframes, oracle_plan, oracle_waypoints
from .prompts import PROMPT_TASKS, TaskPrompt, load_prompt

__all__ = ["BackendError", "CompositeBackend", "MissingCredential", "OracleBackend",
           "RemoteVLMBackend", "ReplayBackend", "ReplayMiss", "SimulatedVLMBackend", "VLMQuery",
           "backend_from_name", "FEWSHOT_M", "CountMismatch", "PlannerRequest", "detect_keypoints",
           "generate_waypoints", "make_plan", "refine_fewshot", "canonical_keyframes",
           "oracle_plan", "oracle_waypoints", "PROMPT_TASKS", "TaskPrompt", "load_prompt"]
