import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dexscaffold.plan import (HAND, WINDOW, KeypointPlan, OutOfRange, SchemaError, TooShort,
                              WaypointSequence, emit_keypoint_json, emit_plan_json, extract_json,
                              interpolate, load_bundle, parse_keypoint_json, parse_plan_json,
                              save_bundle, validate_plan, window, window_indices)

finite = st.floats(-1.0, 1.0, allow_nan=False, allow_infinity=False)


def seq(points, names=("a", HAND)):
    return WaypointSequence(tuple(names), np.asarray(points, dtype=np.float64))


def polyline_oracle(points: np.ndarray, T: int) -> np.ndarray:
    """Scalar-loop resampling by waypoint index."""
    n = len(points)
    out = np.empty((T,) + points.shape[1:])
    for i in range(T):
        num, den = i * (n - 1), T - 1
        seg = min(num // den, n - 2)
        f = (num - seg * den) / den
        for j in range(points.shape[1]):
            for c in range(3):
                a, b = points[seg, j, c], points[seg + 1, j, c]
                out[i, j, c] = a if f == 0.0 else (1.0 - f) * a + f * b
    return out


def rounding_oracle(t: int, T: int, H: int = WINDOW) -> list[int]:
    """Integer round-half-up of H evenly spaced positions over [t, T-1]."""
    span = T - 1 - t
    return [t + (2 * i * span + (H - 1)) // (2 * (H - 1)) for i in range(H)]


# -- waypoint sequences --------------------------------------------------------

def test_sequence_invariants():
    with pytest.raises(SchemaError):
        seq(np.zeros((1, 2, 3)))                       # n >= 2
    with pytest.raises(SchemaError):
        seq(np.zeros((3, 2, 3)), names=("a", "b"))     # no hand
    with pytest.raises(SchemaError):
        seq(np.zeros((3, 3, 3)), names=("a", HAND, HAND))
    with pytest.raises(SchemaError):
        seq(np.full((3, 2, 3), np.inf))
    w = seq(np.zeros((3, 2, 3)))
    assert w.n == 3 and w.k == 1 and w.keypoint_names == ("a",)


# -- interpolation -------------------------------------------------------------

def test_two_waypoints_five_steps():
    w = seq([[[0, 0, 0], [0, 0, 0]], [[1, 0, 0], [1, 0, 0]]])
    plan = interpolate(w, 5)
    np.testing.assert_array_equal(plan.keypoints[:, 0, 0], [0.0, 0.25, 0.5, 0.75, 1.0])
    np.testing.assert_array_equal(plan.wrist[:, 0], [0.0, 0.25, 0.5, 0.75, 1.0])


def test_n_equals_T_is_identity(rng):
    pts = rng.normal(size=(7, 3, 3))
    w = seq(pts, ("a", "b", HAND))
    plan = interpolate(w, 7)
    np.testing.assert_array_equal(plan.keypoints, pts[:, :2])
    np.testing.assert_array_equal(plan.wrist, pts[:, 2])


def test_three_waypoints_match_polyline_oracle(rng):
    pts = rng.normal(size=(3, 2, 3))
    plan = interpolate(seq(pts), 101)
    dense = np.concatenate([plan.keypoints, plan.wrist[:, None]], axis=1)
    oracle = polyline_oracle(pts, 101)
    assert np.max(np.abs(dense - oracle)) == 0.0


def test_too_short_and_unknown_mode():
    w = seq(np.zeros((5, 2, 3)))
    with pytest.raises(TooShort):
        interpolate(w, 4)
    with pytest.raises(ValueError):
        interpolate(w, 10, mode="spline")


def test_arclength_mode_keeps_endpoints_and_spacing():
    pts = np.array([[[0, 0, 0]], [[0.1, 0, 0]], [[1.0, 0, 0]]])
    w = seq(np.concatenate([pts, pts], axis=1))
    plan = interpolate(w, 11, mode="arclength")
    np.testing.assert_allclose(np.diff(plan.keypoints[:, 0, 0]), 0.1, atol=1e-12)
    np.testing.assert_array_equal(plan.keypoints[[0, -1], 0], pts[[0, -1], 0])


@settings(max_examples=60)
@given(arrays(np.float64, st.tuples(st.integers(2, 6), st.just(2), st.just(3)), elements=finite),
       st.integers(6, 40))
def test_interpolated_points_are_convex_combinations(pts, T):
    plan = interpolate(seq(pts), T)
    n = len(pts)
    dense = np.concatenate([plan.keypoints, plan.wrist[:, None]], axis=1)
    np.testing.assert_array_equal(dense[0], pts[0])
    np.testing.assert_array_equal(dense[-1], pts[-1])
    for i in range(T):
        s = i * (n - 1) / (T - 1)
        a = min(int(np.floor(s)), n - 2)
        lo = np.minimum(pts[a], pts[a + 1]) - 1e-12
        hi = np.maximum(pts[a], pts[a + 1]) + 1e-12
        assert np.all((dense[i] >= lo) & (dense[i] <= hi))


# -- windows ---------------------------------------------------------------------

def test_window_terminal_saturation():
    plan = interpolate(seq(np.arange(2 * 2 * 3, dtype=float).reshape(2, 2, 3)), 50)
    win = window(plan, plan.T - 1)
    assert np.all(win.indices == plan.T - 1)
    assert np.all(win.keypoints == plan.keypoints[-1]) and np.var(win.wrist, axis=0).max() == 0.0


def test_window_first_step_of_short_plan():
    assert window_indices(0, 15).tolist() == list(range(15))


def test_window_matches_rounding_oracle():
    assert window_indices(0, 150).tolist() == rounding_oracle(0, 150)
    for t in (1, 17, 90, 140, 148):
        assert window_indices(t, 150).tolist() == rounding_oracle(t, 150)


@given(st.integers(1, 400), st.data())
def test_window_shape_and_order(T, data):
    t = data.draw(st.integers(0, T - 1))
    idx = window_indices(t, T)
    assert idx.shape == (WINDOW,) and idx[0] == t and idx[-1] == T - 1
    assert np.all(np.diff(idx) >= 0)


def test_window_out_of_range():
    with pytest.raises(OutOfRange):
        window_indices(-1, 10)
    with pytest.raises(OutOfRange):
        window_indices(10, 10)


# -- JSON ------------------------------------------------------------------------

APPLE = """[{"waypoint_num": 0, "apple": {"x": 0.0, "y": 0.0, "z": 0.0},
 "cutting board": {"x": 0.01, "y": -0.37, "z": -0.03}, "hand": {"x": -0.1, "y": -0.12, "z": 0.26}},
 {"waypoint_num": 1, "apple": {"x": 0.0, "y": 0.0, "z": 0.1},
 "cutting board": {"x": 0.01, "y": -0.37, "z": -0.03}, "hand": {"x": 0.0, "y": 0.0, "z": 0.14}}]"""


def test_move_apple_schema_parses():
    w = parse_plan_json(APPLE)
    assert w.names == ("apple", "cutting board", HAND) and w.k == 2 and w.n == 2
    np.testing.assert_array_equal(w.track("cutting board")[0], [0.01, -0.37, -0.03])


def test_emit_parse_round_trip():
    w = parse_plan_json(APPLE)
    text = emit_plan_json(w)
    assert json.loads(text) == json.loads(APPLE)
    assert parse_plan_json(text) == w


def test_fenced_block_and_garbage():
    w = parse_plan_json(f"Here you go:\n```json\n{APPLE}\n```\n")
    assert w.n == 2
    with pytest.raises(SchemaError):
        extract_json("the answer is forty-two")


def test_non_consecutive_waypoint_num():
    data = json.loads(APPLE)
    data[1]["waypoint_num"] = 2
    with pytest.raises(SchemaError):
        parse_plan_json(json.dumps(data))


def test_unknown_key_and_non_numeric():
    data = json.loads(APPLE)
    data[0]["banana"] = {"x": 0, "y": 0, "z": 0}
    with pytest.raises(SchemaError):
        parse_plan_json(json.dumps(data))
    data = json.loads(APPLE)
    data[0]["apple"]["x"] = "0.1"
    with pytest.raises(SchemaError):
        parse_plan_json(json.dumps(data))


@settings(max_examples=50)
@given(arrays(np.float64, st.tuples(st.integers(2, 8), st.just(3), st.just(3)),
              elements=st.floats(-10, 10, allow_nan=False)))
def test_round_trip_is_bit_stable(pts):
    w = seq(pts, ("apple", "cutting board", HAND))
    assert parse_plan_json(emit_plan_json(w)) == w
    fixed = parse_plan_json(emit_plan_json(w, precision=4))
    assert emit_plan_json(fixed, precision=4) == emit_plan_json(w, precision=4)


def test_keypoint_json_round_trip_and_order():
    text = '[{"name": "cutting board", "point": [250, 750]}, {"name": "apple", "point": [500, 500]}]'
    entries = parse_keypoint_json(text, ("apple", "cutting board"))
    assert entries == [("apple", 500, 500), ("cutting board", 250, 750)]
    assert parse_keypoint_json(emit_keypoint_json(entries), ("apple", "cutting board")) == entries


# -- bundles -------------------------------------------------------------------

def test_bundle_round_trip(tmp_path):
    w = parse_plan_json(APPLE)
    path = tmp_path / "plan.json"
    save_bundle(path, "move_apple", "snap-1", w, 300, {"source": "oracle"})
    doc, w2 = load_bundle(path)
    assert w2 == w and doc["T"] == 300 and doc["snapshot"] == "snap-1"
    doc["version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(SchemaError):
        load_bundle(path)


# -- validation ------------------------------------------------------------------

def test_oracle_hammer_plan_has_no_violations(hammer_plan):
    scene, plan = hammer_plan
    spec = scene.task
    assert validate_plan(plan, spec.workspace, spec.rigid_pairs) == []


def test_rigid_pair_drift_is_reported(hammer_plan):
    scene, plan = hammer_plan
    spec = scene.task
    kp = plan.keypoints.copy()
    ramp = np.linspace(0.0, 0.15, plan.T)
    direction = kp[0, 1] - kp[0, 0]
    direction /= np.linalg.norm(direction)
    kp[:, 1] += ramp[:, None] * direction
    bad = KeypointPlan(plan.wrist, kp, plan.names)
    kinds = [v.kind for v in validate_plan(bad, spec.workspace, spec.rigid_pairs)]
    assert "rigid" in kinds


def test_all_zero_plan_inside_bounds():
    plan = KeypointPlan(np.zeros((10, 3)), np.zeros((10, 2, 3)), ("a", "b"))
    out = validate_plan(plan, ((-1, -1, -1), (1, 1, 1)))
    assert not [v for v in out if v.kind == "workspace"]


def test_workspace_and_proximity_violations():
    kp = np.zeros((10, 1, 3))
    kp[5:, 0, 0] = 0.5                       # keypoint moves at step 5
    wrist = np.zeros((10, 3))
    wrist[:, 2] = 2.0                        # far from the keypoint and outside bounds
    out = validate_plan(KeypointPlan(wrist, kp, ("a",)), ((-1, -1, -1), (1, 1, 1)))
    assert {v.kind for v in out} == {"workspace", "proximity"}
