import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dexscaffold.env.episode import (EpisodeRecord, anneal, check_success, read_traces,
                                     should_terminate, step_record, write_traces)
from dexscaffold.env.render import default_camera, render
from dexscaffold.env.scene import grasp_wrist, sample_scene
from dexscaffold.env.sim import SimConfig, Simulator, success_flags
from dexscaffold.env.tasks import (TASKS, TERMINATION_THRESHOLDS, UnknownTask, get_task,
                                   load_task, dump_task)
from dexscaffold.env.vec import RUNNING, TERMINATED, TIMEOUT, DomainRandomization, TrackingEnv
from dexscaffold.plan import KeypointPlan

from conftest import oracle_dense, scene_for

THRESHOLD_OF = {"move_apple": "apple", "move_bottle": "bottle", "hammer": "hammer",
                "open_drawer": "drawer", "wipe_sponge": "sponge", "close_pliers": "plier",
                "close_scissors": "scissors", "open_fridge": "fridge"}


def settle(sim, s, wrist, close, steps):
    a = np.zeros((s.B, sim.spec.action_dim))
    a[:, 6:] = close
    for _ in range(steps):
        sim.step_inplace(s, a, np.broadcast_to(wrist, (s.B, 3)))


# -- tasks ---------------------------------------------------------------------

def test_threshold_table_rows():
    assert len(TERMINATION_THRESHOLDS) == 8
    for task, row in THRESHOLD_OF.items():
        assert get_task(task).delta_init == TERMINATION_THRESHOLDS[row]
    with pytest.raises(UnknownTask):
        get_task("juggle")


def test_task_file_round_trip(tmp_path):
    spec = get_task("hammer")
    dump_task(spec, tmp_path / "hammer.yaml")
    assert load_task(tmp_path / "hammer.yaml") == spec


# -- termination curriculum ----------------------------------------------------

@pytest.mark.parametrize("row", sorted(TERMINATION_THRESHOLDS))
def test_anneal_is_linear_to_half(row):
    d = TERMINATION_THRESHOLDS[row]
    assert anneal(d, 0.0) == d
    assert anneal(d, 1.0) == d / 2
    assert anneal(d, 0.5) == 0.75 * d
    ps = np.linspace(0.0, 1.0, 11)
    vals = np.array([anneal(d, p) for p in ps])
    np.testing.assert_allclose(np.diff(vals), -d / 20, rtol=1e-12)


def test_anneal_apple_example_and_errors():
    assert anneal(0.10, 1.0) == 0.05
    with pytest.raises(ValueError):
        anneal(0.1, 1.5)
    with pytest.raises(ValueError):
        anneal(0.0, 0.5)


def test_should_terminate_batched():
    tracked = np.zeros((3, 2, 3))
    planned = np.zeros((3, 2, 3))
    planned[1, :, 0] = 0.2
    planned[2, 0, 0] = 0.2                     # mean error 0.1 == delta, not above
    np.testing.assert_array_equal(should_terminate(tracked, planned, 0.1), [False, True, False])


# -- scenes --------------------------------------------------------------------

def test_scene_sampling_is_seeded_and_varied():
    spec = get_task("move_apple")
    a, b = sample_scene(spec, 7), sample_scene(spec, 7)
    np.testing.assert_array_equal(a.rest_pos, b.rest_pos)
    starts = {tuple(np.round(sample_scene(spec, s).rest_pos[0], 9)) for s in range(100)}
    assert len(starts) == 100


def test_true_keypoints_lie_on_surfaces():
    for task in TASKS:
        sc = scene_for(task, 2)
        # Handles stand proud of their part but within fingertip contact range.
        assert np.all(sc.surface_distance(sc.keypoints()) <= 0.015 + 1e-9)


def test_render_snapshot():
    sc = scene_for("move_apple", 3)
    snap = render(sc, default_camera(200, 160))
    assert snap.rgb.shape == (160, 200, 3) and snap.rgb.dtype == np.uint8
    assert snap.camera.depth.shape == (160, 200) and np.any(snap.camera.depth > 0)
    assert snap.png()[:8] == b"\x89PNG\r\n\x1a\n"
    assert render(sc, default_camera(200, 160)).png() == snap.png()


# -- simulator -------------------------------------------------------------------

def test_step_is_deterministic_and_functional():
    spec = get_task("move_apple")
    sim = Simulator(spec)
    s0 = sim.initial_state([scene_for("move_apple", s) for s in range(4)])
    rng = np.random.default_rng(0)
    a = rng.uniform(-1, 1, (4, spec.action_dim))
    w = s0.q[:, :3] + 0.01
    s1, n1, k1 = sim.step(s0, a, w)
    s2, n2, k2 = sim.step(s0, a, w)
    assert np.array_equal(s1.q, s2.q) and np.array_equal(k1, k2) and np.array_equal(n1, n2)
    assert np.all(s0.t == 0) and np.all(s1.t == 1)


def test_non_finite_action_rejected():
    spec = get_task("move_apple")
    sim = Simulator(spec)
    s = sim.initial_state([scene_for("move_apple")])
    with pytest.raises(ValueError):
        sim.step(s, np.full((1, spec.action_dim), np.nan), s.q[:, :3])


def test_closed_grasp_has_four_contacts_and_moves_rigidly():
    spec = get_task("move_apple")
    sim = Simulator(spec)
    sc = scene_for("move_apple", 3)
    s = sim.initial_state([sc])
    w = grasp_wrist(sc.rest_pos[spec.object_index("apple")])
    settle(sim, s, w, 0.0, 40)
    assert s.n_contact[0] == 0 and s.attached[0] == -1        # open hand never grasps
    settle(sim, s, w, 1.0, 60)
    assert s.n_contact[0] == 4 and s.attached[0] == spec.object_index("apple")
    kp0, q0 = s.keypoints.copy(), s.q[0, :3].copy()
    offset = np.array([0.05, 0.02, 0.10])
    settle(sim, s, w + offset, 1.0, 30)
    np.testing.assert_allclose(s.q[0, :3] - q0, offset, atol=1e-12)
    np.testing.assert_allclose(s.keypoints[0, 0] - kp0[0, 0], offset, atol=1e-12)
    np.testing.assert_array_equal(s.keypoints[0, 1], kp0[0, 1])   # the board stays put
    settle(sim, s, w + offset, 0.0, 40)
    assert s.attached[0] == -1
    assert s.rest_gap[0, spec.object_index("apple")] <= 1e-9    # dropped onto a support


def test_prismatic_articulation_is_clamped():
    spec = get_task("open_drawer")
    sim = Simulator(spec)
    sc = scene_for("open_drawer", 1)
    s = sim.initial_state([sc])
    w = grasp_wrist(sc.keypoints()[0])
    settle(sim, s, w, 0.0, 40)
    settle(sim, s, w, 1.0, 40)
    i = spec.object_index("drawer")
    assert s.attached[0] == i
    axis = sc.rest_rot[i] @ np.asarray(spec.objects[i].articulation.axis)
    settle(sim, s, w + 0.15 * axis, 1.0, 30)
    assert abs(s.art[0, i] - 0.15) < 1e-9
    settle(sim, s, w + 0.5 * axis, 1.0, 80)
    assert s.art[0, i] == spec.objects[i].articulation.range[1]


def test_zero_residual_tracks_plan_exactly():
    spec = get_task("move_apple")
    sim = Simulator(spec, SimConfig(smoothing=0.0))
    rng = np.random.default_rng(5)
    limit = sim.rate[:3]
    for seed in range(20):
        sc = scene_for("move_apple", seed)
        s = sim.initial_state([sc])
        ctrl = rng.uniform((0.3, -0.15, 0.2), (0.6, 0.15, 0.45), (4, 3))
        ctrl[0] = sc.hand_position
        W = np.concatenate([np.linspace(ctrl[j], ctrl[j + 1], 20, endpoint=False) for j in range(3)])
        assert np.all(np.abs(np.diff(W, axis=0)) <= limit)
        for t in range(1, len(W)):
            sim.step_inplace(s, np.zeros((1, spec.action_dim)), W[t][None])
            assert np.array_equal(s.q[0, :3], W[t])


def test_wrist_floor_clamps_plan():
    spec = get_task("move_apple")
    sim = Simulator(spec, SimConfig(smoothing=0.0))
    sc = scene_for("move_apple")
    s = sim.initial_state([sc])
    target = sc.hand_position.copy()
    target[2] = 0.0
    settle(sim, s, target, 0.0, 60)
    assert s.q[0, 2] == sim.config.wrist_floor


def test_smoothing_validation():
    with pytest.raises(ValueError):
        SimConfig(smoothing=1.0)


# -- success predicates and traces ---------------------------------------------

def trace_of(spec, steps):
    return EpisodeRecord(spec.task_id, 0, 0, steps)


def fake_step(t, **kw):
    base = dict(tracked=np.zeros((1, 3)), planned=np.zeros((1, 3)), n_contact=0,
                success_point=np.zeros(3), object_xy=np.zeros(2), rest_gap=0.0, art=0.0)
    base.update(kw)
    return step_record(t, **base)


def test_check_success_pick_place():
    spec = get_task("move_apple")
    on = [fake_step(0), fake_step(1, object_xy=[0.5, 0.0], target_xy=[0.55, 0.03])]
    assert check_success(spec, trace_of(spec, on))
    far = [fake_step(0), fake_step(1, object_xy=[0.5, 0.0], target_xy=[0.6, 0.0])]
    assert not check_success(spec, trace_of(spec, far))
    held = [fake_step(0), fake_step(1, object_xy=[0.5, 0.0], target_xy=[0.5, 0.0], rest_gap=0.05)]
    assert not check_success(spec, trace_of(spec, held))


def test_check_success_articulations():
    drawer, pliers = get_task("open_drawer"), get_task("close_pliers")
    assert check_success(drawer, trace_of(drawer, [fake_step(0, art=0.21)]))
    assert not check_success(drawer, trace_of(drawer, [fake_step(0, art=0.19)]))
    assert check_success(pliers, trace_of(pliers, [fake_step(0, art=np.deg2rad(4.0))]))
    assert not check_success(pliers, trace_of(pliers, [fake_step(0, art=np.deg2rad(6.0))]))


def test_check_success_swings_and_tracking():
    hammer = get_task("hammer")
    zs = [0.035] + [0.035 + 0.15 * (i % 2) for i in range(1, 7)]
    steps = [fake_step(t, success_point=[0, 0, z]) for t, z in enumerate(zs)]
    assert check_success(hammer, trace_of(hammer, steps))
    assert not check_success(hammer, trace_of(hammer, steps[:5]))
    toy = get_task("point_track")
    ok = [fake_step(0), fake_step(1, tracked=[[0.01, 0, 0]])]
    bad = [fake_step(0), fake_step(1, tracked=[[0.03, 0, 0]])]
    assert check_success(toy, trace_of(toy, ok)) and not check_success(toy, trace_of(toy, bad))


def test_traces_round_trip(tmp_path):
    spec = get_task("move_apple")
    recs = [trace_of(spec, [fake_step(0), fake_step(1, object_xy=[0.1, 0.2], target_xy=[0, 0])]),
            EpisodeRecord("move_apple", 3, 1, [fake_step(0)], cause="threshold")]
    path = write_traces(tmp_path / "t.jsonl", recs)
    back = read_traces(path)
    assert back == recs


def test_offline_and_online_success_agree(hammer_plan):
    scene, plan = hammer_plan
    spec = scene.task
    sim = Simulator(spec)
    s = sim.initial_state([scene])
    sim.bind_keypoints(s, plan.keypoints[:1])
    steps = [fake_step(0, success_point=s.success_point[0])]
    rng = np.random.default_rng(1)
    for t in range(1, 60):
        sim.step_inplace(s, rng.uniform(-1, 1, (1, spec.action_dim)), plan.wrist[t][None])
        steps.append(fake_step(t, success_point=s.success_point[0]))
    assert bool(success_flags(spec, sim, s)[0]) == check_success(spec, trace_of(spec, steps))


# -- vectorised env ----------------------------------------------------------------

def toy_env(num_envs=4, **kw):
    spec = get_task("point_track")
    bank = [oracle_dense("point_track", s) for s in range(3)]
    return TrackingEnv(spec, [b[0] for b in bank], [b[1] for b in bank], num_envs, seed=0, **kw)


def test_env_observation_shape_and_timeout():
    env = toy_env(auto_reset=False, delta=10.0)
    obs = env.observe()
    assert obs.shape == (4, 130 + 51) and np.all(np.isfinite(obs))
    causes = []
    for _ in range(env.T - 1):
        obs, r, cause, info = env.step(np.zeros((4, env.act_dim)))
        assert np.all((r > 0) & (r < 2))
        causes.append(cause)
    assert np.all(np.stack(causes[:-1]) == RUNNING)
    assert np.all(causes[-1] == TIMEOUT) and "timeout_obs" in info


def test_env_terminates_on_error_cutoff():
    env = toy_env(delta=1e-6)
    a = np.ones((4, env.act_dim))
    causes = [env.step(a)[2] for _ in range(10)]
    assert np.any(np.stack(causes) == TERMINATED)


def test_env_zero_action_follows_toy_plan():
    env = toy_env(auto_reset=False, sim_config=SimConfig(smoothing=0.0))
    for _ in range(env.T - 1):
        env.step(np.zeros((4, env.act_dim)))
    np.testing.assert_array_equal(env.state.q[:, :3], env.W[env.cond, env.T - 1])


def test_domain_randomization_draws_are_seeded_and_logged():
    dr = DomainRandomization(enabled=True)
    a, b = toy_env(dr=dr), toy_env(dr=dr)
    assert a.draws == b.draws and len(a.draws) == 4
    m = np.array([d[2:] for d in a.draws])
    assert np.all((m >= 0.3) & (m <= 3.0))
    np.testing.assert_allclose(a.state.gain, np.minimum(1.0, m[:, 0] / m[:, 1]))
    off = toy_env()
    assert off.draws == [] and np.all(off.state.gain == 1.0)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.3, 3.0), st.floats(0.3, 3.0))
def test_dr_gain_in_unit_interval(k, c):
    g = DomainRandomization.gain(np.array([k]), np.array([c]))[0]
    assert 0.0 < g <= 1.0


def test_env_rejects_mismatched_bank():
    spec = get_task("point_track")
    sc, plan = oracle_dense("point_track", 0)
    short = KeypointPlan(plan.wrist[:50], plan.keypoints[:50], plan.names)
    with pytest.raises(ValueError):
        TrackingEnv(spec, [sc, sc], [plan, short], 2, seed=0)
    with pytest.raises(ValueError):
        TrackingEnv(spec, [sc], [plan], 0, seed=0)
