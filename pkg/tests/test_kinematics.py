import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coenv.errors import DimensionMismatch, ReachLimit
from coenv.geometry import Pose, quat_angle
from coenv.kinematics import (JointConfig, bundled_model, bundled_model_names, config_distance, fk_batch,
                              forward_kinematics, inverse_kinematics, link_capsules_world, load_model, tcp_matrix,
                              tcp_pose)

from oracles import fk_oracle, raw_model

MODELS = bundled_model_names()
unit = st.lists(st.floats(0, 1), min_size=7, max_size=7)


def _q(model, u):
    return model.lower + (model.upper - model.lower) * np.asarray(u[:model.dof])


def test_bundled_models():
    assert MODELS == ["franka", "piper"]
    assert bundled_model("franka").dof == 7
    assert bundled_model("piper").dof == 6
    with pytest.raises(KeyError):
        bundled_model("nope")


@pytest.mark.parametrize("name", MODELS)
@given(u=unit)
def test_fk_matches_oracle(name, u):
    model = bundled_model(name)
    q = _q(model, u)
    np.testing.assert_allclose(tcp_matrix(model, q), fk_oracle(raw_model(name), q), atol=1e-12)


@pytest.mark.parametrize("name", MODELS)
def test_batch_equals_single(name):
    model = bundled_model(name)
    rng = np.random.default_rng(0)
    qs = model.lower + (model.upper - model.lower) * rng.random((8, model.dof))
    batch = fk_batch(model, qs)
    for k, q in enumerate(qs):
        np.testing.assert_allclose(batch[k], fk_batch(model, q)[0], atol=1e-13)
    fk = forward_kinematics(model, qs[0])
    assert len(fk.link_frames) == model.dof + 1
    np.testing.assert_allclose(fk.tcp.matrix(), tcp_matrix(model, qs[0]), atol=1e-12)


def test_placed_model_moves_with_base():
    m = bundled_model("franka")
    base = Pose([0.5, 0.0, 0.333], [0, 0, 0, 1])
    placed = m.placed(base)
    q = np.asarray(m.home)
    np.testing.assert_allclose(tcp_matrix(placed, q), base.matrix() @ tcp_matrix(m, q), atol=1e-12)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        tcp_pose(bundled_model("franka"), np.zeros(6))


@pytest.mark.parametrize("name", MODELS)
@settings(max_examples=25)
@given(u=unit)
def test_ik_round_trip(name, u):
    model = bundled_model(name)
    target = tcp_pose(model, _q(model, u))
    sol = inverse_kinematics(model, target, model.home_config())
    got = tcp_pose(model, sol)
    assert np.linalg.norm(got.translation - target.translation) <= 1e-4
    assert quat_angle(got.rotation, target.rotation) <= 1e-3
    assert np.all(sol.values >= model.lower) and np.all(sol.values <= model.upper)


def test_ik_keeps_gripper_state():
    m = bundled_model("piper")
    seed = m.home_config().with_gripper(0.0)
    sol = inverse_kinematics(m, tcp_pose(m, m.home), seed)
    assert sol.gripper_state == 0.0


def test_reach_limit_reports_gap():
    m = bundled_model("piper")
    far = Pose(m.reach_center() + np.array([m.max_reach + 0.2, 0.0, 0.0]))
    with pytest.raises(ReachLimit) as info:
        inverse_kinematics(m, far, m.home_config())
    assert info.value.residual_gap == pytest.approx(0.2, rel=0.05)
    np.testing.assert_allclose(tcp_pose(m, info.value.closest_q).translation, info.value.actual)


def test_joint_config_serialization():
    q = JointConfig([0.1, -0.2, 0.3], 0.5)
    assert JointConfig.from_dict(q.to_dict()) == q
    assert config_distance(q, q.with_values([0.1, -0.2, 0.4])) == pytest.approx(0.1)


def test_capsules_follow_links():
    m = bundled_model("franka")
    caps = link_capsules_world(m, m.home)
    assert len(caps) == len(m.link_capsules)
    assert all(c.radius > 0 for c in caps)


def test_load_model_from_file(tmp_path):
    import json

    p = tmp_path / "arm.json"
    p.write_text(json.dumps(raw_model("piper")))
    m = load_model(p)
    np.testing.assert_allclose(tcp_matrix(m, m.home), tcp_matrix(bundled_model("piper"), m.home))
