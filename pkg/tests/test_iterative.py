import json

import pytest

from coenv.agents import AlwaysFailCodeGen, ScriptedCodeGen, UnderReachCodeGen
from coenv.iterative import IterativeConfig, analyze_run, run_iterative, run_round, write_artifacts
from coenv.observe import describe
from coenv.script import PlanScript
from coenv.tasks import initial_scene, load_task


@pytest.fixture(scope="module")
def stacking():
    task = load_task("cube_stacking")
    return task, initial_scene(task, 3, 0)


def test_scripted_codegen_succeeds_in_one_round(stacking):
    task, scene0 = stacking
    res = run_iterative(scene0, task.goal, ScriptedCodeGen(task), task=task)
    assert res.success and res.rounds == 1 and res.feedback == []
    assert all(m["satisfied"] for m in res.milestones)


def test_feedback_lists_reach_limit_with_gap(stacking):
    task, scene0 = stacking
    gen = UnderReachCodeGen(task)
    run = run_round(gen.generate({"initial_state": describe(scene0), "round": 1, "feedback": None}), scene0)
    achieved, fb = analyze_run(run, task.goal, task, 1)
    assert not achieved
    reach = [m for m in fb.failure_modes if m["kind"] == "ReachLimit"]
    assert reach and all(m["gap"] > 0 for m in reach)
    assert "ReachLimit" in fb.suggestions
    assert fb.failure_modes[-1]["kind"] == "UnachievedSubgoal"


def test_static_script_error_is_a_failed_round(stacking):
    task, scene0 = stacking
    bad = PlanScript(({"op": "let", "var": "x", "expr": "nope + 1"},), 1)
    run = run_round(bad, scene0)
    assert run.trajectory.records == [] and run.error is not None
    achieved, fb = analyze_run(run, task.goal, task, 1)
    assert not achieved
    assert {"kind": "ScriptError", "index": 0}.items() <= fb.failure_modes[0].items()


def test_timeout_feedback(stacking):
    task, scene0 = stacking
    script = ScriptedCodeGen(task).generate({"initial_state": describe(scene0), "round": 1})
    run = run_round(script, scene0, IterativeConfig(step_budget=50))
    achieved, fb = analyze_run(run, task.goal, task, 1)
    assert not achieved
    assert any(m["kind"] == "Timeout" for m in fb.failure_modes)


def test_budget_is_respected(stacking):
    task, scene0 = stacking
    gen = AlwaysFailCodeGen()
    res = run_iterative(scene0, task.goal, gen, IterativeConfig(M_max=2), task=task)
    assert res.outcome == "Fail" and res.rounds == 2 and len(res.feedback) == 2


def test_rounds_start_from_the_same_scene(stacking):
    task, scene0 = stacking
    fp = scene0.fingerprint()
    run_iterative(scene0, task.goal, AlwaysFailCodeGen(), IterativeConfig(M_max=2), task=task)
    assert scene0.fingerprint() == fp


def test_feedback_reaches_the_generator(stacking):
    task, scene0 = stacking
    seen = []

    class Spy(AlwaysFailCodeGen):
        def generate(self, req):
            seen.append(req["feedback"])
            return super().generate(req)

    run_iterative(scene0, task.goal, Spy(), IterativeConfig(M_max=3), task=task)
    assert seen[0] is None
    assert [f["round"] for f in seen[1:]] == [1, 2]


def test_artifacts_layout(tmp_path, stacking):
    task, scene0 = stacking
    res = run_iterative(scene0, task.goal, UnderReachCodeGen(task), task=task, out_dir=tmp_path)
    assert res.rounds == 2
    for m in (1, 2):
        d = tmp_path / f"round_{m:02d}"
        summary = json.loads((d / "summary.json").read_text())
        assert summary["round"] == m and summary["achieved"] == (m == 2)
        assert (d / "execution_stdout.txt").exists()
        for c in summary["checkpoints"]:
            assert list((d / "checkpoints").glob("*/states.json"))


def test_write_artifacts_sanitises_names(tmp_path, stacking):
    task, scene0 = stacking
    script = PlanScript(({"op": "checkpoint", "name": "a/b c", "type": "generic"},), 1)
    run = run_round(script, scene0)
    _, fb = analyze_run(run, task.goal, task, 1)
    write_artifacts(tmp_path, run, fb, False)
    assert (tmp_path / "checkpoints" / "a_b_c" / "states.json").exists()


@pytest.mark.parametrize("kw", [{"M_max": 0}, {"step_budget": 0}, {"wall_budget": 0.0}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        IterativeConfig(**kw)
