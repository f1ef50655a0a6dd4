import numpy as np
import pytest
from hypothesis import given, strategies as st

from coenv.errors import ScriptError, ScriptTimeout
from coenv.script import PlanScript, ScriptLimits, check_script, evaluate, execute_script, parse_expr
from coenv.tasks import initial_scene, load_task

nums = st.floats(-100, 100, allow_nan=False)


@given(nums, nums, nums)
def test_arithmetic_matches_python(a, b, c):
    env = {"a": a, "b": b, "c": c}
    assert evaluate("a + b * c - -a", env) == pytest.approx(a + b * c + a)
    v = evaluate("[a, b, c] * 2", env)
    np.testing.assert_allclose(v, [2 * a, 2 * b, 2 * c])
    assert evaluate("[a, b, c][1]", env) == b
    assert evaluate("max(a, b, c)", env) == max(a, b, c)
    assert evaluate("norm([a, b, c])", env) == pytest.approx(np.linalg.norm([a, b, c]))


@pytest.mark.parametrize("src", ["__import__('os')", "a.b", "lambda: 1", "open('x')", "'text'", "True", "a if b else c",
                                 "[x for x in a]", "a ** 2"])
def test_disallowed_syntax(src):
    with pytest.raises(ValueError):
        parse_expr(src)


def test_division_by_zero():
    with pytest.raises(ZeroDivisionError):
        evaluate("1 / (a - a)", {"a": 1.0})


@pytest.mark.parametrize("stmts,index", [
    ([{"op": "jump"}], 0),
    ([{"op": "let", "var": "x", "expr": "y + 1"}], 0),
    ([{"op": "query", "var": "p", "path": "objects.cube_red.colour"}], 0),
    ([{"op": "print", "expr": "1"}, {"op": "act", "type": "MOVE", "agent_id": 0, "params": {"delta_q": "1"}}], 1),
    ([{"op": "act", "type": "MOVE", "params": {}}], 0),
    ([{"op": "let", "var": "norm", "expr": "1"}], 0),
    ([{"op": "checkpoint"}], 0),
])
def test_static_errors(stmts, index):
    with pytest.raises(ScriptError) as info:
        check_script(PlanScript(stmts))
    assert info.value.index == index


@pytest.fixture(scope="module")
def scene():
    return initial_scene(load_task("cube_stacking"), 0, 0)


def test_run_moves_arm_to_object(scene):
    s = PlanScript([
        {"op": "query", "var": "p", "path": "objects.cube_blue.position"},
        {"op": "query", "var": "t", "path": "robots.0.position"},
        {"op": "let", "var": "d", "expr": "p - t + [0, 0, 0.1]"},
        {"op": "act", "type": "MOVE", "agent_id": 0,
         "params": {"delta_x": "d[0]", "delta_y": "d[1]", "delta_z": "d[2]"}},
        {"op": "checkpoint", "name": "above", "type": "generic"},
        {"op": "print", "expr": "norm(d)"},
    ])
    run = execute_script(s, scene)
    assert run.error is None
    tcp = run.final.tcp(0).translation
    np.testing.assert_allclose(tcp, scene.object("cube_blue").position + [0, 0, 0.1], atol=2e-4)
    assert len(run.trajectory.records) == 1
    assert [c["name"] for c in run.checkpoints] == ["above"]
    assert "CHECKPOINT above" in run.stdout
    # the input scene is never modified
    assert scene.step == 0


def test_runtime_error_keeps_partial_trajectory(scene):
    s = PlanScript([
        {"op": "act", "type": "MOVE", "agent_id": 0, "params": {"delta_x": "0.02", "delta_y": "0", "delta_z": "0"}},
        {"op": "query", "var": "p", "path": "objects.nothing.position"},
    ])
    run = execute_script(s, scene)
    assert isinstance(run.error, ScriptError) and run.error.index == 1
    assert len(run.trajectory.records) == 1
    assert "SCRIPT_ERROR" in run.stdout


def test_step_budget(scene):
    s = PlanScript([{"op": "act", "type": "MOVE", "agent_id": 0,
                     "params": {"delta_x": "0.1", "delta_y": "0", "delta_z": "0"}}] * 3)
    run = execute_script(s, scene, limits=ScriptLimits(step_budget=3))
    assert isinstance(run.error, ScriptTimeout)
    assert run.checkpoints[-1]["name"] == "TIMEOUT_ERROR"


def test_reach_limit_reported(scene):
    s = PlanScript([{"op": "act", "type": "MOVE", "agent_id": 0,
                     "params": {"delta_x": "0", "delta_y": "0", "delta_z": "1.5"}}])
    run = execute_script(s, scene)
    assert "REACH_LIMIT agent=0" in run.stdout


def test_script_serialization():
    s = PlanScript([{"op": "print", "expr": "1"}], round=3)
    assert PlanScript.from_dict(s.to_dict()) == s
