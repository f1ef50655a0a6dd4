import pytest

from coenv.agents import (FaultyPlanner, RecordingPlanner, ReplayPlanner, ScriptedPlanner, decode_response,
                          encode_response)
from coenv.errors import MalformedResponse, PlannerUnavailable
from coenv.interactive import (InteractiveConfig, detect_stuck, eval_checkpoint, read_episode_log, run_interactive,
                               verify_outcome, write_episode_log)
from coenv.plan import Replan, action, checkpoint
from coenv.tasks import initial_scene, load_task, robot_models, task_names
from coenv.transfer import validate_trajectory
from coenv.world import apply_primitive


@pytest.fixture(scope="module")
def task():
    return load_task("cube_stacking")


@pytest.fixture(scope="module")
def scene(task):
    return initial_scene(task, 0, 0)


def test_verify_move(scene):
    el = action(1, 0, "MOVE", delta_x=0.05, delta_y=0, delta_z=0)
    after = apply_primitive(scene, el).scene
    v = verify_outcome(el, scene, after)
    assert v.ok and v.diagnostics["pose_error_m"] < 1e-3
    far = action(1, 0, "MOVE", delta_x=0, delta_y=0, delta_z=1.5)
    v = verify_outcome(far, scene, apply_primitive(scene, far).scene)
    assert not v.ok and "position" in v.diagnostics["unmet_conditions"]


def test_verify_grasp_miss(scene):
    el = action(1, 0, "GRASP")
    v = verify_outcome(el, scene, apply_primitive(scene, el).scene)
    assert v.verdict == "Fail" and v.diagnostics["unmet_conditions"] == ["attachment"]
    with pytest.raises(ValueError):
        verify_outcome(checkpoint(1, "c", predicate={"type": "grasped", "objects": ["cube_red"]}), scene, scene)


def test_checkpoint_predicates(scene):
    ck = checkpoint(1, "stack", "place", {"type": "stacked", "objects": ["cube_red", "cube_blue"]})
    res = eval_checkpoint(ck, scene)
    assert res.phi == 0 and res.report["unmet"]
    holding = checkpoint(2, "h", "lift", {"type": "holding", "agents": [0], "object": "cube_blue"})
    assert eval_checkpoint(holding, scene).phi == 0
    with pytest.raises(ValueError):
        eval_checkpoint(action(1, 0, "RELEASE"), scene)


def test_stuck_detection():
    cfg = InteractiveConfig(stuck_window=3, stuck_eps=0.005)
    moving = [{"agent": 0, "displacement": 0.01}] * 5
    assert not detect_stuck(moving, cfg)
    assert detect_stuck(moving + [{"agent": 0, "displacement": 0.001}] * 3, cfg)
    # stalls of different agents do not add up
    mixed = [{"agent": 0, "displacement": 0.0}, {"agent": 1, "displacement": 0.0}] * 1
    assert not detect_stuck(mixed, cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        InteractiveConfig(pos_check_tol=0)
    with pytest.raises(ValueError):
        InteractiveConfig(max_replans=-1)


@pytest.mark.parametrize("name", task_names())
def test_scripted_episode(name):
    t = load_task(name)
    s0 = initial_scene(t, 11, 0)
    log = []
    res = run_interactive(s0, t.goal, ScriptedPlanner(t), task=t, log=log)
    assert res.success, res.error
    assert all(m["satisfied"] for m in res.milestones)
    assert validate_trajectory(res.trajectory.primitive_records(), robot_models(t)).safe
    assert log[0]["kind"] == "header" and log[-1]["kind"] == "result"


def test_faulty_planner_recovers_by_replanning(task, scene):
    res = run_interactive(scene, task.goal, FaultyPlanner(task), task=task)
    assert res.success and res.replans >= 1


def test_replan_budget_exhausted(task, scene):
    res = run_interactive(scene, task.goal, FaultyPlanner(task), cfg=InteractiveConfig(max_replans=0), task=task)
    assert res.outcome == "Fail"
    assert not res.milestones[-1]["satisfied"]


def test_record_and_replay(task, scene, tmp_path):
    log = []
    first = run_interactive(scene, task.goal, RecordingPlanner(ScriptedPlanner(task), log), task=task, log=log)
    path = tmp_path / "ep.ndjson"
    write_episode_log(log, path)
    recs = read_episode_log(path)
    assert recs == log
    again = run_interactive(scene, task.goal, ReplayPlanner(recs), task=task)
    assert again.milestones == first.milestones
    assert again.final_scene.fingerprint() == first.final_scene.fingerprint()


def test_replay_diverges(task, scene):
    with pytest.raises(PlannerUnavailable):
        run_interactive(scene, task.goal, ReplayPlanner([]), task=task)


def test_codec_round_trip():
    r = Replan("no way")
    assert decode_response("correct", encode_response("correct", r)) == r
    with pytest.raises(MalformedResponse):
        decode_response("decompose", "<subgoals>nope</subgoals>")
    with pytest.raises(MalformedResponse):
        decode_response("assign", "plain text")


def test_episode_is_deterministic(task):
    a = run_interactive(initial_scene(task, 4, 4), task.goal, ScriptedPlanner(task), task=task)
    b = run_interactive(initial_scene(task, 4, 4), task.goal, ScriptedPlanner(task), task=task)
    assert a.final_scene.fingerprint() == b.final_scene.fingerprint()
    assert a.planner_calls == b.planner_calls
