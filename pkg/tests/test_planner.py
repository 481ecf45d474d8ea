import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest

from dexscaffold.env.render import default_camera, render
from dexscaffold.env.tasks import TASKS, UnknownTask, get_task
from dexscaffold.geometry import CameraModel, look_at
from dexscaffold.kernels import zigzag_update
from dexscaffold.plan import HAND, SchemaError, WaypointSequence, emit_plan_json, interpolate
from dexscaffold.planner import (BackendError, CompositeBackend, CountMismatch, MissingCredential,
                                 OracleBackend, PlannerRequest, RemoteVLMBackend, ReplayBackend,
                                 ReplayMiss, SimulatedVLMBackend, VLMQuery, backend_from_name,
                                 detect_keypoints, generate_waypoints, load_prompt, make_plan,
                                 oracle_plan, refine_fewshot)
from dexscaffold.planner.core import trajectory_prompt
from dexscaffold.planner.prompts import PROMPT_TASKS

from conftest import scene_for

MOVE_APPLE_ANSWER = '[{"name":"apple","point":[500,500]},{"name":"cutting board","point":[250,750]}]'


class Fixed:
    """Backend answering every query with the same text."""

    name = "fixed"

    def __init__(self, text: str):
        self.text = text
        self.queries: list[VLMQuery] = []

    def complete(self, query):
        self.queries.append(query)
        return self.text


def plane_camera(depth=1.2):
    ext = look_at((-0.2, 0.0, 1.0), (0.5, 0.0, 0.0))
    return CameraModel.from_fov(800, 800, 60.0, ext, np.full((800, 800), depth))


def request(task="move_apple", seed=3, n=20, camera=None, examples=()):
    scene = scene_for(task, seed)
    if camera is None:
        snap = render(scene, default_camera(400, 400))
        rgb, camera = snap.png(), snap.camera
    else:
        rgb = b"synthetic"
    return PlannerRequest(rgb, camera, tuple(scene.hand_position), load_prompt(task),
                          tuple(examples), n, context={"scene": scene})


# -- prompts ---------------------------------------------------------------------

def test_prompt_names_match_tasks():
    for task in PROMPT_TASKS:
        p = load_prompt(task)
        if task in TASKS:
            assert p.keypoint_names == TASKS[task].keypoint_names
        assert "$initial_positions" in p.trajectory_template
    assert load_prompt("move_apple").keypoint_names == ("apple", "cutting board")
    with pytest.raises(UnknownTask):
        load_prompt("juggle")


def test_trajectory_prompt_uses_first_keypoint_frame():
    req = request()
    kps = [("apple", np.array([0.4, 0.1, 0.08])), ("cutting board", np.array([0.5, -0.2, 0.02]))]
    text, origin = trajectory_prompt(req, kps)
    np.testing.assert_array_equal(origin, kps[0][1])
    assert "The initial position of the apple is [0.00, 0.00, 0.00]." in text
    assert "The initial position of the cutting board is [0.10, -0.30, -0.06]." in text
    assert "exactly 20 waypoints" in text


# -- keypoint detection ------------------------------------------------------------

def test_detect_move_apple_keypoints_on_synthetic_scene():
    cam = plane_camera()
    req = request(camera=cam)
    out = detect_keypoints(req, Fixed(MOVE_APPLE_ANSWER))
    assert [nm for nm, _ in out] == ["apple", "cutting board"]
    for (_, p), (u, v) in zip(out, [(400.0, 400.0), (600.0, 200.0)]):
        d = 1.2
        pc = np.array([(u - cam.cx) * d / cam.fx, (v - cam.cy) * d / cam.fy, d])
        expect = cam.extrinsic.rotation @ pc + cam.extrinsic.translation
        np.testing.assert_allclose(p, expect, atol=1e-12)


def test_detect_missing_name_is_schema_error():
    req = request(camera=plane_camera())
    with pytest.raises(SchemaError):
        detect_keypoints(req, Fixed('[{"name":"apple","point":[500,500]}]'))


def test_detect_propagates_missing_depth():
    from dexscaffold.geometry import MissingDepth
    req = request(camera=plane_camera(depth=0.0))
    with pytest.raises(MissingDepth):
        detect_keypoints(req, Fixed(MOVE_APPLE_ANSWER))


def test_oracle_detection_lands_on_objects():
    req = request()
    scene = req.context["scene"]
    pts = np.stack([p for _, p in detect_keypoints(req, OracleBackend())])
    assert np.all(scene.surface_distance(pts) < 0.01)


def test_replay_determinism(tmp_path):
    req = request()
    recorder = ReplayBackend(tmp_path, fallback=OracleBackend())
    first = detect_keypoints(req, recorder)
    files = sorted(tmp_path.glob("*.txt"))
    assert len(files) == 1 and files[0].with_suffix(".json").exists()
    replay = ReplayBackend(tmp_path)
    second = detect_keypoints(req, replay)
    for (n1, p1), (n2, p2) in zip(first, second):
        assert n1 == n2 and np.array_equal(p1, p2)
    with pytest.raises(ReplayMiss):
        detect_keypoints(request(seed=4), replay)


# -- trajectory generation ---------------------------------------------------------

def test_oracle_waypoints_are_anchored():
    req = request()
    kps = detect_keypoints(req, OracleBackend())
    w = generate_waypoints(req, kps, OracleBackend())
    assert w.n == 20 and w.names == ("apple", "cutting board", HAND)
    for nm, p in kps:
        assert np.linalg.norm(w.track(nm)[0] - p) < 1e-6
    assert np.linalg.norm(w.track(HAND)[0] - np.asarray(req.wrist)) < 1e-6


def test_reduced_waypoint_request():
    req = request(n=3)
    kps = detect_keypoints(req, OracleBackend())
    assert generate_waypoints(req, kps, OracleBackend()).n == 3


def test_count_mismatch():
    req = request()
    kps = detect_keypoints(req, OracleBackend())
    pts = np.zeros((19, 3, 3))
    pts[:, :, 0] = np.linspace(0, 0.1, 19)[:, None]
    nineteen = emit_plan_json(WaypointSequence(("apple", "cutting board", HAND), pts))
    backend = Fixed(nineteen)
    with pytest.raises(CountMismatch):
        generate_waypoints(req, kps, backend)
    assert len(backend.queries) == 2            # one retry on malformed output
    assert [q.attempt for q in backend.queries] == [0, 1]


def test_make_plan_records_metadata():
    plan = make_plan(request(), OracleBackend(), T=300)
    assert plan.T == 300 and plan.n_waypoints == 20 and plan.source == "vlm"
    assert plan.meta["temperature"] == 0.5 and plan.meta["attempts"] == 1


# -- scripted oracle -----------------------------------------------------------------

@pytest.mark.parametrize("task", ["move_apple", "move_bottle", "place_bottle"])
def test_pick_place_oracle_ends_on_target(task):
    scene = scene_for(task, 1)
    w = oracle_plan(task, scene)
    spec = scene.task
    obj = w.track(spec.keypoint_names[0])
    target = w.track(spec.keypoint_names[1])
    assert obj[:, 2].max() - obj[0, 2] >= spec.script_params["lift"] - 1e-9
    assert np.linalg.norm(obj[-1, :2] - target[-1, :2]) <= 0.01
    assert np.linalg.norm(obj[-1, :2] - target[-1, :2]) <= spec.success_params["radius"]


def test_drawer_oracle_pulls_thirty_centimetres():
    scene = scene_for("open_drawer", 1)
    w = oracle_plan("open_drawer", scene)
    spec = scene.task
    i = spec.object_index("drawer")
    axis = scene.rest_rot[i] @ np.asarray(spec.objects[i].articulation.axis)
    h = w.track("handle")
    assert float((h[-1] - h[0]) @ axis) >= 0.30 - 1e-9


def count_swings(z, threshold=0.05):
    trend = np.zeros(1, dtype=np.int8)
    ext, hi = np.array([z[0]]), np.array([z[0]])
    swings = np.zeros(1, dtype=np.int32)
    for v in z[1:]:
        zigzag_update(np.array([v]), trend, ext, hi, swings, threshold)
    return int(swings[0])


def test_hammer_oracle_has_three_swings():
    w = oracle_plan("hammer", scene_for("hammer", 1))
    assert count_swings(w.track("head")[:, 2]) >= 3


def test_oracle_plan_unknown_or_mismatched_task():
    with pytest.raises(UnknownTask):
        oracle_plan("juggle", scene_for("hammer"))
    with pytest.raises(ValueError):
        oracle_plan("open_drawer", scene_for("hammer"))


@pytest.mark.parametrize("task", sorted(TASKS))
def test_every_oracle_plan_validates(task):
    from dexscaffold.plan import validate_plan
    for seed in range(3):
        scene = scene_for(task, seed)
        spec = get_task(task)
        plan = interpolate(oracle_plan(task, scene), spec.horizon)
        assert validate_plan(plan, spec.workspace, spec.rigid_pairs) == []


# -- few-shot ------------------------------------------------------------------------

def test_refine_fewshot_truncation():
    req = request()
    assert refine_fewshot([], req) is req
    hist = [WaypointSequence(("a", HAND), np.full((2, 2, 3), float(i))) for i in range(5)]
    out = refine_fewshot(hist, req)
    assert out.m == 3 and list(out.examples) == hist[-3:]
    assert refine_fewshot(hist, req, m=0) is req


def test_examples_appear_in_prompt():
    hist = [oracle_plan("move_apple", scene_for("move_apple", s)) for s in range(2)]
    req = refine_fewshot(hist, request())
    text, _ = trajectory_prompt(req, detect_keypoints(req, OracleBackend()))
    assert text.count("Example ") == 2 and '"waypoint_num": 0' in text


# -- backends ------------------------------------------------------------------------

def test_simulated_backend_is_seeded():
    req = request()
    a = detect_keypoints(req, SimulatedVLMBackend(seed=1))
    b = detect_keypoints(req, SimulatedVLMBackend(seed=1))
    assert all(np.array_equal(p, q) for (_, p), (_, q) in zip(a, b))


def test_simulated_error_rate_decays_with_examples():
    sim = SimulatedVLMBackend(seed=0, keypoint_error_rate=1.0, flip_rate=1.0, example_decay=0.0)
    req = request()
    bad = detect_keypoints(req, sim)
    scene = req.context["scene"]
    assert np.any(scene.surface_distance(np.stack([p for _, p in bad])) > 0.05)
    hist = [oracle_plan("move_apple", scene)]
    good = detect_keypoints(refine_fewshot(hist, req), sim)
    assert np.all(scene.surface_distance(np.stack([p for _, p in good])) < 0.01)


def test_composite_routes_by_kind():
    kp, tr = Fixed("k"), Fixed("t")
    c = CompositeBackend(kp, tr)
    assert c.complete(VLMQuery("keypoints", "x")) == "k"
    assert c.complete(VLMQuery("trajectory", "x")) == "t"


def test_backend_from_name(tmp_path, monkeypatch):
    assert isinstance(backend_from_name("oracle"), OracleBackend)
    assert isinstance(backend_from_name("replay", tmp_path), ReplayBackend)
    with pytest.raises(BackendError):
        backend_from_name("replay")
    with pytest.raises(BackendError):
        backend_from_name("telepathy")
    monkeypatch.delenv("DEXSCAFFOLD_VLM_API_KEY", raising=False)
    with pytest.raises(MissingCredential):
        backend_from_name("remote")


def test_query_digest_ignores_context():
    a = VLMQuery("keypoints", "hello", b"img", context={"scene": 1})
    b = VLMQuery("keypoints", "hello", b"img", context={"scene": 2})
    assert a.digest() == b.digest()
    assert a.digest() != VLMQuery("keypoints", "hello", b"img", attempt=1).digest()


class _Handler(BaseHTTPRequestHandler):
    seen: list = []
    status = 200

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).seen.append((self.path, {k.lower(): v for k, v in self.headers.items()}, body))
        payload = {"candidates": [{"content": {"parts": [
            {"text": "thinking out loud"},
            {"executableCode": {"code": "print(...)"}},
            {"codeExecutionResult": {"output": MOVE_APPLE_ANSWER}}]}}]}
        data = json.dumps(payload).encode()
        self.send_response(type(self).status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def vlm_server():
    _Handler.seen, _Handler.status = [], 200
    srv = HTTPServer(("127.0.0.1", 0), _Handler)
    th = threading.Thread(target=srv.serve_forever, daemon=True)
    th.start()
    yield f"http://127.0.0.1:{srv.server_address[1]}"
    srv.shutdown()


def test_remote_backend_round_trip(vlm_server, monkeypatch):
    monkeypatch.setenv("DEXSCAFFOLD_VLM_API_KEY", "secret-key")
    monkeypatch.setenv("DEXSCAFFOLD_VLM_MODEL", "test-model")
    backend = RemoteVLMBackend(url=vlm_server, allow_insecure=True)
    text = backend.complete(VLMQuery("trajectory", "plan please", b"png", temperature=0.5))
    assert text == MOVE_APPLE_ANSWER
    path, headers, body = _Handler.seen[0]
    assert path == "/models/test-model:generateContent"
    assert headers["x-goog-api-key"] == "secret-key"
    cfg = body["generationConfig"]
    assert cfg["temperature"] == 0.5 and cfg["thinkingConfig"]["thinkingBudget"] == 1000
    assert body["tools"] == [{"code_execution": {}}]
    assert body["contents"][0]["parts"][1]["inline_data"]["mime_type"] == "image/png"


def test_remote_backend_errors(vlm_server, monkeypatch):
    monkeypatch.setenv("DEXSCAFFOLD_VLM_API_KEY", "k")
    with pytest.raises(BackendError):
        RemoteVLMBackend(url=vlm_server)                 # plain HTTP refused
    _Handler.status = 500
    backend = RemoteVLMBackend(url=vlm_server, allow_insecure=True)
    with pytest.raises(BackendError):
        backend.complete(VLMQuery("keypoints", "x"))
    with pytest.raises(BackendError):
        RemoteVLMBackend.response_text({"candidates": []})


def test_record_then_replay_through_remote(vlm_server, monkeypatch, tmp_path):
    monkeypatch.setenv("DEXSCAFFOLD_VLM_API_KEY", "k")
    remote = RemoteVLMBackend(url=vlm_server, allow_insecure=True)
    rec = ReplayBackend(tmp_path, fallback=remote)
    q = VLMQuery("keypoints", "where is the apple", b"img")
    assert rec.complete(q) == MOVE_APPLE_ANSWER
    assert ReplayBackend(tmp_path).complete(q) == MOVE_APPLE_ANSWER
    assert len(_Handler.seen) == 1
