"""Acceptance suite: one test per criterion, each at its stated tolerance and time budget.

A PASS/FAIL line per criterion is printed in the terminal summary (see conftest.py).
"""

import math
import time

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from coenv.agents import AlwaysFailCodeGen, UnderReachCodeGen
from coenv.cli import main as cli_main
from coenv.errors import ReachLimit
from coenv.fusion import CameraExtrinsic, ViewEstimate, build_scene, fuse_rotations, refine_extrinsics
from coenv.geometry import Pose, quat_angle
from coenv.interactive import InteractiveConfig, eval_checkpoint
from coenv.iterative import IterativeConfig, run_iterative, run_round
from coenv.kb import load_records, replay_matches
from coenv.kinematics import (IkConfig, JointConfig, bundled_model, capsules_world_arrays, fk_batch,
                              inverse_kinematics, tcp_pose)
from coenv.plan import canonical_json, checkpoint
from coenv.script import PlanScript
from coenv.session import run_session
from coenv.tasks import initial_scene, load_task, robot_models, task_names
from coenv.transfer import PrimitiveRecord, interpolate, validate_trajectory
from coenv.world import SceneObject, make_scene
from coenv.shapes import Shape

from oracles import (fk_oracle, quat_angle_oracle, quat_mean_oracle, raw_model, scipy_to_wxyz,
                     segment_distance_batch_oracle)

DOWN = np.diag([1.0, -1.0, -1.0])


# ---------------------------------------------------------------------------
# AC1


def _random_quat_set(rng):
    n = int(rng.integers(2, 7))
    centre = Rotation.random(random_state=rng)
    spread = rng.choice([0.05, 0.3, 0.8, 1.5])
    out = []
    for _ in range(n):
        r = Rotation.from_rotvec(rng.normal(scale=spread, size=3)) * centre
        q = scipy_to_wxyz(r)
        if rng.random() < 0.5:
            q = -q  # q and -q are the same rotation
        out.append(q)
    return np.array(out)


def test_ac1_quaternion_averaging_oracle():
    rng = np.random.default_rng(1)
    sets = [_random_quat_set(rng) for _ in range(1000)]
    assert any((s[:, 0] < 0).any() and (s[:, 0] > 0).any() for s in sets)
    t0 = time.perf_counter()
    got = [fuse_rotations(s) for s in sets]
    elapsed = time.perf_counter() - t0
    worst = max(quat_angle_oracle(g, quat_mean_oracle(s)) for g, s in zip(got, sets))
    assert worst <= 1e-9, worst
    assert elapsed < 5.0


# ---------------------------------------------------------------------------
# AC2


@pytest.mark.parametrize("name", ["franka", "piper"])
def test_ac2_fk_ik_round_trip(name):
    model = bundled_model(name)
    raw = raw_model(name)
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst_p = worst_r = 0.0
    for _ in range(500):
        q = model.lower + (model.upper - model.lower) * rng.random(model.dof)
        target = tcp_pose(model, q)
        sol = inverse_kinematics(model, target, model.home_config())
        # check the solution with the independent FK chain, not the library one
        m = fk_oracle(raw, sol.values)
        worst_p = max(worst_p, float(np.linalg.norm(m[:3, 3] - target.translation)))
        got = scipy_to_wxyz(Rotation.from_matrix(m[:3, :3]))
        worst_r = max(worst_r, quat_angle_oracle(got, target.rotation))
    assert worst_p <= 1e-4 and worst_r <= 1e-3, (worst_p, worst_r)

    centre = model.reach_center()
    rot = tcp_pose(model, model.home).rotation
    for _ in range(50):
        d = rng.normal(size=3)
        d[2] = abs(d[2])
        d /= np.linalg.norm(d)
        r = model.max_reach * rng.uniform(1.05, 1.8)
        with pytest.raises(ReachLimit) as info:
            inverse_kinematics(model, Pose(centre + r * d, rot), model.home_config())
        excess = r - model.max_reach
        assert abs(info.value.residual_gap - excess) <= 0.05 * excess
    assert time.perf_counter() - t0 < 10.0


# ---------------------------------------------------------------------------
# AC3


def test_ac3_interpolation_exactness():
    rng = np.random.default_rng(3)
    model = bundled_model("franka")
    for _ in range(100):
        a = JointConfig(model.lower + (model.upper - model.lower) * rng.random(model.dof))
        b = JointConfig(model.lower + (model.upper - model.lower) * rng.random(model.dof))
        S = 2 * int(rng.integers(1, 40))
        wp = interpolate(a, b, S)
        assert len(wp.waypoints) == S + 1
        assert np.array_equal(wp.waypoints[0].values, a.values)
        assert np.array_equal(wp.waypoints[-1].values, b.values)
        mid = wp.waypoints[S // 2].values
        np.testing.assert_allclose(mid, 0.5 * (a.values + b.values), rtol=0, atol=4 * np.finfo(float).eps)


# ---------------------------------------------------------------------------
# AC4


def _two_arm_models():
    return robot_models(load_task("cube_stacking"))


def _dense_min_distance(models, rec, factor=10, S=20):
    """Minimum true capsule distance between the arms over a resampling ``factor`` times denser."""
    caps = []
    for aid in (0, 1):
        wp = interpolate(rec.start[aid], rec.end[aid], S * factor)
        qs = np.array([c.values for c in wp.waypoints])
        a, b, r = capsules_world_arrays(models[aid], fk_batch(models[aid], qs))
        caps.append((a.reshape(-1, 3), b.reshape(-1, 3), np.tile(r, len(qs))))
    (a1, b1, r1), (a2, b2, r2) = caps
    # sphere bounds around each segment midpoint prune pairs that cannot be the closest
    m1, h1 = 0.5 * (a1 + b1), 0.5 * np.linalg.norm(b1 - a1, axis=1)
    m2, h2 = 0.5 * (a2 + b2), 0.5 * np.linalg.norm(b2 - a2, axis=1)
    centre = np.linalg.norm(m1[:, None] - m2[None], axis=2) - r1[:, None] - r2[None]
    upper = centre.min()
    lower = centre - h1[:, None] - h2[None]
    i, j = np.nonzero(lower <= upper)
    d = segment_distance_batch_oracle(a1[i], b1[i], a2[j], b2[j]) - r1[i] - r2[j]
    return float(d.min())


def _random_config(model, rng, scale):
    home = np.asarray(model.home)
    return JointConfig(model.clamp(home + rng.normal(scale=scale, size=model.dof)))


def _config_at(model, point, seed):
    down = scipy_to_wxyz(Rotation.from_matrix(DOWN))
    return inverse_kinematics(model, Pose(np.asarray(point, float), down), seed)


def test_ac4_swept_volume_conservative():
    models = _two_arm_models()
    rng = np.random.default_rng(4)
    spent = 0.0
    safe_checked = flagged = 0
    for trial in range(50):
        n = int(rng.integers(2, 5))
        scale = rng.choice([0.2, 0.5, 0.9])
        confs = [{aid: _random_config(models[aid], rng, scale) for aid in (0, 1)} for _ in range(n + 1)]
        recs = [PrimitiveRecord(l, confs[l - 1], confs[l]) for l in range(1, n + 1)]
        t = time.perf_counter()
        rep = validate_trajectory(recs, models, 20, 0.01)
        spent += time.perf_counter() - t
        for v, rec in zip(rep.verdicts, recs):
            if v["safe"]:
                safe_checked += 1
                assert _dense_min_distance(models, rec) > 0.0
        # injected crossing: both tool tips driven to the same point at element k
        k = int(rng.integers(1, 4))
        homes = {aid: models[aid].home_config() for aid in (0, 1)}
        seq = [homes] * k
        meet = np.array([rng.uniform(-0.1, 0.1), rng.uniform(0.2, 0.4), rng.uniform(0.15, 0.3)])
        seq.append({aid: _config_at(models[aid], meet, homes[aid]) for aid in (0, 1)})
        inj = [PrimitiveRecord(l, seq[l - 1], seq[l]) for l in range(1, len(seq))]
        t = time.perf_counter()
        rep = validate_trajectory(inj, models, 20, 0.01)
        spent += time.perf_counter() - t
        assert rep.first_violation == k
        flagged += 1
    assert safe_checked >= 20 and flagged == 50
    assert spent < 30.0


# ---------------------------------------------------------------------------
# AC5


def test_ac5_golden_task_runs(tmp_path):
    t0 = time.perf_counter()
    for name in task_names():
        task = load_task(name)
        for mode in ("interactive", "iterative"):
            db = tmp_path / f"{name}_{mode}.ndjson"
            res = run_session(task, mode, "scripted", 10, 7, db_path=db)
            assert res.stats.successes == 10, (name, mode, res.stats.errors)
            assert res.stats.episodes_collected == 10
            for r in res.results:
                assert r.milestones[-1]["satisfied"]
            models = robot_models(task)
            for rec in load_records(db):
                assert rec.milestones[-1]["satisfied"]
                assert validate_trajectory(rec.primitive_records(), models, 20, 0.01).safe
    assert time.perf_counter() - t0 < 60.0


# ---------------------------------------------------------------------------
# AC6


def _gate_scene(pos_err, rot_err):
    """One arm whose tool sits ``pos_err`` m and ``rot_err`` rad away from a cube's grasp pose."""
    model = load_task("cube_stacking")
    arm = robot_models(model)[0]
    yaw = 0.3
    tcp_target = np.array([-0.3, 0.25, 0.12])
    rz = Rotation.from_euler("z", yaw).as_matrix()
    tq = scipy_to_wxyz(Rotation.from_matrix(rz @ DOWN))
    q = inverse_kinematics(arm, Pose(tcp_target, tq), arm.home_config(),
                           IkConfig(pos_tol=1e-10, rot_tol=1e-10, max_iters=500))
    cube_pos = tcp_target + np.array([pos_err, 0.0, 0.0])
    cube_rot = scipy_to_wxyz(Rotation.from_euler("z", yaw + rot_err))
    cube = SceneObject("cube", Pose(cube_pos, cube_rot), Shape.box(0.04, 0.04, 0.04))
    return make_scene([(arm, q)], [cube])


@pytest.mark.parametrize("pos_err,rot_err,phi", [(0.019, 0.0, 1), (0.021, 0.0, 0), (0.0, 0.09, 1), (0.0, 0.11, 0)])
def test_ac6_checkpoint_gating(pos_err, rot_err, phi):
    scene = _gate_scene(pos_err, rot_err)
    ck = checkpoint(1, "at_cube", "grasp", {"type": "tcp_near", "agent": 0, "object": "cube"})
    res = eval_checkpoint(ck, scene, InteractiveConfig())
    assert abs(res.report["pos_error_m"] - pos_err) < 1e-6
    assert abs(res.report["rot_error_rad"] - rot_err) < 1e-6
    assert res.phi == phi


# ---------------------------------------------------------------------------
# AC7


def test_ac7_iterative_contract():
    task = load_task("cube_stacking")
    scene0 = initial_scene(task, 7, 0)
    log = []
    res = run_iterative(scene0, task.goal, UnderReachCodeGen(task), IterativeConfig(), task=task, log=log)
    assert res.success and res.rounds == 2 and res.reset_count == 2
    assert len(res.feedback) == 1
    assert any(m["kind"] == "ReachLimit" for m in res.feedback[0].failure_modes)

    fail = run_iterative(scene0, task.goal, AlwaysFailCodeGen(), IterativeConfig(M_max=3), task=task)
    assert fail.outcome == "Fail" and len(fail.feedback) == 3
    assert [f.round for f in fail.feedback] == [1, 2, 3]

    # round 2 again, alone, from a fresh copy of the initial scene
    script2 = PlanScript.from_dict([r for r in log if r["kind"] == "round"][1]["script"])
    alone = run_round(script2, initial_scene(task, 7, 0))
    assert canonical_json(alone.trajectory.to_dict()) == canonical_json(res.trajectory.to_dict())
    assert alone.final.fingerprint() == res.final_scene.fingerprint()


# ---------------------------------------------------------------------------
# AC8


def test_ac8_determinism_and_persistence(tmp_path, capsys):
    args = ["run", "--task", "cube_stacking", "--mode", "interactive", "--planner", "scripted",
            "--trials", "10", "--seed", "7"]
    assert cli_main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli_main(args + ["--out", str(tmp_path / "b")]) == 0
    capsys.readouterr()
    kb_a = (tmp_path / "a" / "kb.ndjson").read_bytes()
    kb_b = (tmp_path / "b" / "kb.ndjson").read_bytes()
    assert kb_a == kb_b
    records = load_records(tmp_path / "a" / "kb.ndjson")
    assert len(records) == 10
    assert "".join(r.canonical() + "\n" for r in records).encode() == kb_a
    assert all(replay_matches(r) for r in records)


# ---------------------------------------------------------------------------
# AC9


def _unit(rng):
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def test_ac9_fusion_end_to_end():
    rng = np.random.default_rng(9)
    task = load_task("cube_stacking")
    catalog = task.catalog()
    truth = {oid: Pose(np.array([rng.uniform(-0.3, 0.3), rng.uniform(0.0, 0.3), 0.02]),
                       scipy_to_wxyz(Rotation.from_euler("z", rng.uniform(-math.pi, math.pi))))
             for oid in catalog}
    cams = {}
    for k, yaw in enumerate((0.0, 2.1, 4.2)):
        pos = np.array([1.2 * math.cos(yaw), 1.2 * math.sin(yaw), 1.0])
        look = Rotation.from_euler("zyx", [yaw + math.pi, 0.6, 0.0])
        cams[f"cam{k}"] = CameraExtrinsic(f"cam{k}", Pose(pos, scipy_to_wxyz(look)))
    noise = 0.002
    views = []
    for oid, pose in truth.items():
        for cid, ext in cams.items():
            seen = Pose(pose.translation + noise * _unit(rng), pose.rotation)
            views.append(ViewEstimate(cid, oid, ext.world_from_camera.inverse() @ seen))
    models = robot_models(task)
    scene = build_scene(views, cams, catalog, models, [m.home_config() for m in models])
    for oid, pose in truth.items():
        err = float(np.linalg.norm(scene.object(oid).pose.translation - pose.translation))
        assert err <= noise + 1e-12

    true_ext = cams["cam1"]
    pts_world = rng.uniform(-0.4, 0.4, size=(12, 3)) + np.array([0, 0.2, 0.1])
    cam_pts = true_ext.world_from_camera.inverse().apply(pts_world)
    corr = [{"world_point": w.tolist(), "camera_point": c.tolist()} for w, c in zip(pts_world, cam_pts)]
    kick = Pose(np.array([0.05, 0.0, 0.0]) / 1.0, scipy_to_wxyz(Rotation.from_rotvec(math.radians(5) * _unit(rng))))
    bad = CameraExtrinsic("cam1", kick @ true_ext.world_from_camera)
    fixed = refine_extrinsics(corr, bad)
    resid = np.sqrt(np.mean(np.sum((fixed.world_from_camera.apply(cam_pts) - pts_world) ** 2, axis=1)))
    assert resid <= 1e-6
    assert quat_angle(fixed.world_from_camera.rotation, true_ext.world_from_camera.rotation) < 1e-6
