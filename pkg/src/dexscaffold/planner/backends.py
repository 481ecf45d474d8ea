"""VLM backends: remote HTTPS endpoint, on-disk replay cache, scripted stand-ins."""

from __future__ import annotations

import base64
import hashlib
import json
import os
import re
import tempfile
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol

import numpy as np

from .._rng import make_rng
from ..geometry import normalize_pixel, project_points
from ..plan import HAND, WaypointSequence, emit_keypoint_json, emit_plan_json
from .oracle import oracle_waypoints

ENV_URL = "DEXSCAFFOLD_VLM_URL"
ENV_KEY = "DEXSCAFFOLD_VLM_API_KEY"
ENV_MODEL = "DEXSCAFFOLD_VLM_MODEL"
DEFAULT_MODEL = "gemini-2.5-flash"


class BackendError(RuntimeError):
    pass


class MissingCredential(BackendError):
    pass


class ReplayMiss(BackendError):
    pass


@dataclass(frozen=True, eq=False)
class VLMQuery:
    """One request to a VLM.

    ``context`` carries simulation-side ground truth for scripted backends; it
    is never sent over the wire and never part of the cache key.
    """

    kind: str                       # "keypoints" | "trajectory"
    text: str
    image: bytes | None = None
    temperature: float = 0.5
    thinking_budget: int = 1000
    attempt: int = 0
    context: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("keypoints", "trajectory"):
            raise ValueError(f"unknown query kind {self.kind!r}")

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps({"kind": self.kind, "text": self.text,
                             "temperature": self.temperature,
                             "thinking_budget": self.thinking_budget,
                             "attempt": self.attempt}, sort_keys=True).encode())
        h.update(hashlib.sha256(self.image or b"").digest())
        return h.hexdigest()


class PlannerBackend(Protocol):
    name: str

    def complete(self, query: VLMQuery) -> str: ...


# -- remote -----------------------------------------------------------------

class RemoteVLMBackend:
    """``generateContent``-style JSON endpoint.

    URL, key and model come from the environment unless given explicitly.
    Only HTTPS endpoints are accepted unless ``allow_insecure`` is set.
    """

    name = "remote"

    def __init__(self, url: str | None = None, api_key: str | None = None,
                 model: str | None = None, timeout: float = 120.0, allow_insecure: bool = False):
        self.url = (url or os.environ.get(ENV_URL, "https://generativelanguage.googleapis.com/v1beta")).rstrip("/")
        self.api_key = api_key or os.environ.get(ENV_KEY)
        self.model = model or os.environ.get(ENV_MODEL, DEFAULT_MODEL)
        self.timeout = timeout
        if not self.api_key:
            raise MissingCredential(f"set {ENV_KEY} to use the remote VLM backend")
        if not self.url.startswith("https://") and not allow_insecure:
            raise BackendError(f"refusing non-HTTPS endpoint {self.url}")

    def request_body(self, query: VLMQuery) -> dict:
        parts: list[dict] = [{"text": query.text}]
        if query.image is not None:
            parts.append({"inline_data": {"mime_type": "image/png",
                                          "data": base64.b64encode(query.image).decode()}})
        body: dict[str, Any] = {
            "contents": [{"role": "user", "parts": parts}],
            "generationConfig": {"temperature": query.temperature,
                                 "thinkingConfig": {"thinkingBudget": query.thinking_budget}},
        }
        if query.kind == "trajectory":
            body["tools"] = [{"code_execution": {}}]
        return body

    @staticmethod
    def response_text(payload: dict) -> str:
        """Prefer code-execution output; fall back to concatenated text parts."""
        try:
            parts = payload["candidates"][0]["content"]["parts"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed VLM response: {exc}") from None
        outputs = [p["codeExecutionResult"].get("output", "") for p in parts
                   if "codeExecutionResult" in p]
        outputs = [o for o in outputs if o.strip()]
        if outputs:
            return outputs[-1]
        text = "".join(p.get("text", "") for p in parts)
        if not text.strip():
            raise BackendError("VLM response carries no text")
        return text

    def complete(self, query: VLMQuery) -> str:
        req = urllib.request.Request(
            f"{self.url}/models/{self.model}:generateContent",
            data=json.dumps(self.request_body(query)).encode(),
            headers={"Content-Type": "application/json", "x-goog-api-key": self.api_key},
            method="POST")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = json.loads(resp.read().decode())
        except urllib.error.HTTPError as exc:
            raise BackendError(f"VLM endpoint returned HTTP {exc.code}") from None
        except (urllib.error.URLError, OSError, json.JSONDecodeError) as exc:
            raise BackendError(f"VLM request failed: {exc}") from None
        return self.response_text(payload)


# -- replay cache -----------------------------------------------------------

class ReplayBackend:
    """Content-addressed response store: ``<sha256>.txt`` per request.

    With a ``fallback`` backend, misses are forwarded and recorded; without
    one, a miss raises :class:`ReplayMiss`.
    """

    name = "replay"
    _lock = threading.Lock()

    def __init__(self, directory, fallback: PlannerBackend | None = None):
        self.directory = Path(directory)
        self.fallback = fallback
        self.directory.mkdir(parents=True, exist_ok=True)

    def path(self, query: VLMQuery) -> Path:
        return self.directory / f"{query.digest()}.txt"

    def complete(self, query: VLMQuery) -> str:
        p = self.path(query)
        if p.exists():
            return p.read_text()
        if self.fallback is None:
            raise ReplayMiss(f"no cached response for {query.kind} query {p.stem[:12]}")
        text = self.fallback.complete(query)
        self.store(query, text)
        return text

    def store(self, query: VLMQuery, text: str) -> None:
        p = self.path(query)
        meta = {"kind": query.kind, "temperature": query.temperature,
                "thinking_budget": query.thinking_budget, "attempt": query.attempt,
                "source": getattr(self.fallback, "name", "manual"), "prompt": query.text}
        with self._lock:
            for target, content in ((p, text), (p.with_suffix(".json"), json.dumps(meta, indent=1))):
                fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
                with os.fdopen(fd, "w") as fh:
                    fh.write(content)
                os.replace(tmp, target)


# -- scripted ---------------------------------------------------------------

def _scene_ctx(query: VLMQuery):
    try:
        return query.context["scene"]
    except KeyError:
        raise BackendError("scripted backends need the ground-truth scene in the query context") from None


def oracle_keypoint_response(scene, camera) -> str:
    uv, _ = project_points(scene.keypoints(), camera)
    entries = []
    for name, (u, v) in zip(scene.task.keypoint_names, uv):
        y, x = normalize_pixel(u, v, camera)
        entries.append((name, y, x))
    return emit_keypoint_json(entries)


def relative_response(w: WaypointSequence, origin, precision: int = 4) -> str:
    return emit_plan_json(w.translated(-np.asarray(origin)), precision=precision, indent=None)


class OracleBackend:
    """Answers from ground truth: projected anchors and scripted trajectories."""

    name = "oracle"

    def complete(self, query: VLMQuery) -> str:
        scene = _scene_ctx(query)
        if query.kind == "keypoints":
            return oracle_keypoint_response(scene, query.context["camera"])
        w = oracle_waypoints(scene, query.context.get("n", 20))
        return relative_response(w, query.context["origin"])


class CompositeBackend:
    """Route keypoint and trajectory queries to different backends."""

    def __init__(self, keypoints: PlannerBackend, trajectory: PlannerBackend):
        self.keypoints = keypoints
        self.trajectory = trajectory
        self.name = f"{keypoints.name}+{trajectory.name}"

    def complete(self, query: VLMQuery) -> str:
        target = self.keypoints if query.kind == "keypoints" else self.trajectory
        return target.complete(query)


_EXAMPLE_RE = re.compile(r"^Example \d+:$", re.MULTILINE)


@dataclass
class SimulatedVLMBackend:
    """Seeded error model of a VLM planner built on the oracle.

    Keypoint answers are occasionally moved onto the wrong spot; trajectory
    answers occasionally come back with the x/y axes swapped.  Both rates
    shrink geometrically with the number of in-context examples counted in the
    prompt text; every answer carries small waypoint noise.  Answers depend
    only on (seed, query digest), so replaying a recorded run is exact.
    """

    seed: int = 0
    keypoint_error_rate: float = 0.15
    flip_rate: float = 0.35
    example_decay: float = 0.5
    waypoint_noise: float = 0.004
    name: str = "simulated"

    def _rng(self, query: VLMQuery):
        return make_rng(int(query.digest()[:15], 16) ^ (self.seed * 0x9E3779B1))

    @staticmethod
    def _misplaced(rng, uv, cam):
        """A pixel with valid depth, well away from every true keypoint."""
        for _ in range(64):
            p = rng.uniform((0.0, 0.0), (cam.width - 1.0, cam.height - 1.0))
            far = np.min(np.linalg.norm(uv - p, axis=1)) > 0.1 * cam.width
            if far and (cam.depth is None or cam.depth[int(p[1] + 0.5), int(p[0] + 0.5)] > 0):
                return p
        return np.array([cam.width / 2.0, cam.height - 1.0])

    def complete(self, query: VLMQuery) -> str:
        scene = _scene_ctx(query)
        rng = self._rng(query)
        m = len(_EXAMPLE_RE.findall(query.text))
        decay = self.example_decay ** m
        if query.kind == "keypoints":
            cam = query.context["camera"]
            uv, _ = project_points(scene.keypoints(), cam)
            if rng.random() < self.keypoint_error_rate * decay:
                uv[rng.integers(len(uv))] = self._misplaced(rng, uv, cam)
            entries = []
            for name, (u, v) in zip(scene.task.keypoint_names, uv):
                u = min(max(u, 0.0), cam.width - 1.0)
                v = min(max(v, 0.0), cam.height - 1.0)
                y, x = normalize_pixel(u, v, cam)
                entries.append((name, y, x))
            return emit_keypoint_json(entries)
        w = oracle_waypoints(scene, query.context.get("n", 20))
        rel = w.points - np.asarray(query.context["origin"])
        rel = rel + rng.normal(0.0, self.waypoint_noise, rel.shape) * (np.arange(len(rel)) > 0)[:, None, None]
        if rng.random() < self.flip_rate * decay:
            rel = rel[..., [1, 0, 2]]
        return emit_plan_json(WaypointSequence(w.names, rel), precision=4)


def backend_from_name(name: str, cache_dir=None, seed: int = 0) -> PlannerBackend:
    """Build a backend by CLI name: oracle | simulated | replay | remote | record."""
    if name == "oracle":
        return OracleBackend()
    if name == "simulated":
        return SimulatedVLMBackend(seed=seed)
    if name == "remote":
        return RemoteVLMBackend()
    if name == "replay":
        if cache_dir is None:
            raise BackendError("replay backend needs a cache directory")
        return ReplayBackend(cache_dir)
    if name == "record":
        if cache_dir is None:
            raise BackendError("record backend needs a cache directory")
        return ReplayBackend(cache_dir, fallback=RemoteVLMBackend())
    raise BackendError(f"unknown backend {name!r}")


__all__ = ["BackendError", "MissingCredential", "ReplayMiss", "VLMQuery", "PlannerBackend",
           "RemoteVLMBackend", "ReplayBackend", "OracleBackend", "CompositeBackend",
           "SimulatedVLMBackend", "backend_from_name", "HAND"]
