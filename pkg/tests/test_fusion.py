import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from coenv.errors import DegenerateGeometry, DegenerateSpectrum, EmptyInput, MissingExtrinsic, MixedObjects, \
    TooFewPoints, UnknownObject
from coenv.fusion import (CameraExtrinsic, ViewEstimate, build_scene, fuse_object, fuse_rotations, fuse_translations,
                          group_views, kabsch, load_extrinsics, load_views, refine_extrinsics, refine_extrinsics_trace)
from coenv.geometry import Pose, quat_angle
from coenv.tasks import load_task, robot_models

from oracles import quat_mean_oracle, quat_angle_oracle, scipy_to_wxyz

seeds = st.integers(0, 2 ** 31 - 1)


def _rot(rng, scale=None):
    if scale is None:
        return scipy_to_wxyz(Rotation.random(random_state=rng))
    return scipy_to_wxyz(Rotation.from_rotvec(rng.normal(scale=scale, size=3)))


@given(seeds, st.integers(1, 6))
def test_rotation_mean_matches_oracle(seed, n):
    rng = np.random.default_rng(seed)
    base = Rotation.random(random_state=rng)
    qs = [scipy_to_wxyz(Rotation.from_rotvec(rng.normal(scale=0.3, size=3)) * base) * rng.choice([-1, 1])
          for _ in range(n)]
    w = rng.uniform(0.1, 1.0, n)
    assert quat_angle_oracle(fuse_rotations(qs), quat_mean_oracle(qs)) < 1e-9
    assert quat_angle_oracle(fuse_rotations(qs, w), quat_mean_oracle(qs, w)) < 1e-9
    assert fuse_rotations(qs)[0] >= 0


@given(seeds)
def test_rotation_mean_invariances(seed):
    rng = np.random.default_rng(seed)
    qs = np.array([_rot(rng, 0.4) for _ in range(4)])
    m = fuse_rotations(qs)
    # order and sign flips do not matter
    assert quat_angle(fuse_rotations(qs[::-1] * [[1], [-1], [1], [-1]]), m) < 1e-12
    # left-multiplying every input by g moves the mean by g
    g = Rotation.random(random_state=rng)
    moved = [scipy_to_wxyz(g * Rotation.from_quat(np.r_[q[1:], q[0]])) for q in qs]
    want = scipy_to_wxyz(g * Rotation.from_quat(np.r_[m[1:], m[0]]))
    assert quat_angle(fuse_rotations(moved), want) < 1e-9


def test_rotation_mean_single_and_degenerate():
    q = np.array([0.0, 1.0, 0.0, 0.0])
    assert quat_angle(fuse_rotations([q]), q) == 0.0
    with pytest.raises(DegenerateSpectrum):
        fuse_rotations([[1, 0, 0, 0], [0, 1, 0, 0]])
    with pytest.raises(EmptyInput):
        fuse_rotations([])


@given(st.lists(st.tuples(*[st.floats(-5, 5)] * 3), min_size=1, max_size=8))
def test_translation_mean(points):
    p = np.array(points)
    np.testing.assert_allclose(fuse_translations(p), p.mean(axis=0), atol=1e-12)
    # permutation invariant bit for bit
    assert np.array_equal(fuse_translations(p[::-1]), fuse_translations(p))


def _cams():
    return {f"c{k}": CameraExtrinsic(f"c{k}", Pose([np.cos(a), np.sin(a), 1.0], scipy_to_wxyz(
        Rotation.from_euler("zy", [a + np.pi, 0.7]))))
            for k, a in enumerate((0.0, 2.0, 4.0))}


def _views(truth, cams, oid="cube_red", noise=None):
    out = []
    for cid, ext in cams.items():
        p = truth if noise is None else Pose(truth.translation + noise[cid], truth.rotation)
        out.append(ViewEstimate(cid, oid, ext.world_from_camera.inverse() @ p))
    return out


def test_fuse_object_exact_without_noise():
    truth = Pose([0.1, 0.2, 0.02], [0.9, 0, 0, 0.1])
    f = fuse_object(_views(truth, _cams()), _cams())
    assert f.pose.almost_equal(truth, 1e-12)
    assert f.views_used == 3 and f.translation_rms < 1e-12


def test_fuse_object_trims_outlier():
    cams = dict(_cams())
    # a lone outlier sits at most sqrt(n - 1) RMS from the mean, so a 3-RMS cut needs n > 10
    cams.update({f"d{k}": CameraExtrinsic(f"d{k}", Pose([0, -1.0 - k, 1.0])) for k in range(9)})
    truth = Pose([0.1, 0.2, 0.02])
    noise = {cid: np.zeros(3) for cid in cams}
    noise["d8"] = np.array([0.5, 0, 0])
    f = fuse_object(_views(truth, cams, noise=noise), cams)
    assert f.views_used == 11
    assert np.linalg.norm(f.pose.translation - truth.translation) < 1e-12
    untrimmed = fuse_object(_views(truth, cams, noise=noise), cams, trim=False)
    assert untrimmed.views_used == 12


def test_fuse_errors():
    cams = _cams()
    truth = Pose([0, 0, 0])
    with pytest.raises(EmptyInput):
        fuse_object([], cams)
    with pytest.raises(MixedObjects):
        fuse_object(_views(truth, cams, "a") + _views(truth, cams, "b"), cams)
    with pytest.raises(MissingExtrinsic):
        fuse_object(_views(truth, cams), {"c0": cams["c0"]})
    with pytest.raises(ValueError):
        ViewEstimate("c0", "x", truth, confidence=0.0)


def test_build_scene():
    task = load_task("cube_stacking")
    cams = _cams()
    truth = {"cube_red": Pose([0.1, 0.2, 0.02]), "cube_blue": Pose([-0.1, 0.2, 0.02])}
    views = [v for oid, p in truth.items() for v in _views(p, cams, oid)]
    models = robot_models(task)
    scene = build_scene(views, cams, task.catalog(), models, [m.home_config() for m in models])
    for oid, p in truth.items():
        assert scene.object(oid).pose.almost_equal(p, 1e-12)
    assert scene.n_agents == 2
    with pytest.raises(UnknownObject):
        build_scene(_views(truth["cube_red"], cams, "ghost"), cams, task.catalog(), models,
                    [m.home_config() for m in models])


@settings(max_examples=25)
@given(seeds)
def test_kabsch_recovers_transform(seed):
    rng = np.random.default_rng(seed)
    t = Pose(rng.normal(size=3), _rot(rng))
    src = rng.normal(size=(6, 3))
    np.testing.assert_allclose(kabsch(src, t.apply(src)), t.matrix(), atol=1e-9)


@settings(max_examples=25)
@given(seeds)
def test_refine_extrinsics_monotone(seed):
    rng = np.random.default_rng(seed)
    true = Pose(rng.normal(size=3), _rot(rng))
    world = rng.uniform(-0.5, 0.5, size=(10, 3))
    cam = true.inverse().apply(world)
    corr = [{"world_point": w, "camera_point": c} for w, c in zip(world, cam)]
    bad = CameraExtrinsic("c", Pose(rng.normal(scale=0.1, size=3), _rot(rng, 0.2)) @ true)
    fixed, hist = refine_extrinsics_trace(corr, bad)
    assert all(b <= a for a, b in zip(hist, hist[1:]))
    assert fixed.world_from_camera.almost_equal(true, 1e-7)


def test_refine_rejects_bad_input():
    ext = CameraExtrinsic("c", Pose())
    with pytest.raises(TooFewPoints):
        refine_extrinsics([{"world_point": [0, 0, 0], "camera_point": [0, 0, 0]}] * 2, ext)
    line = [{"world_point": [k, 0, 0], "camera_point": [k, 0, 0]} for k in range(5)]
    with pytest.raises(DegenerateGeometry):
        refine_extrinsics(line, ext)


def test_file_loaders(tmp_path):
    cams = _cams()
    views = _views(Pose([0.1, 0, 0]), cams)
    (tmp_path / "v.json").write_text(json.dumps({"schema": "coenv-views/1", "views": [v.to_dict() for v in views]}))
    (tmp_path / "x.json").write_text(json.dumps({"cameras": {c: e.world_from_camera.to_dict()
                                                             for c, e in cams.items()}}))
    vs = load_views(tmp_path / "v.json")
    xs = load_extrinsics(tmp_path / "x.json")
    assert sorted(xs) == sorted(cams)
    assert list(group_views(vs)) == ["cube_red"]
    assert fuse_object(vs, xs).pose.almost_equal(Pose([0.1, 0, 0]), 1e-12)
