import json

import pytest
from hypothesis import given, strategies as st

from coenv.errors import MalformedResponse
from coenv.plan import (ExecutionPlan, NextActions, PlanComplete, Replan, RequestView, SubGoal, TaskGoal, action,
                        canonical_json, checkpoint, format_decision, parse_decision)
from coenv.planning import validate_plan
from coenv.tasks import initial_scene, load_task

small = st.floats(-0.3, 0.3, allow_nan=False)


def _plan():
    els = [
        action(1, 0, "MOVE", delta_x=0.1, delta_y=0.0, delta_z=-0.05, subgoal=1),
        action(2, [0, 1], "ROTATE", delta_yaw=[0.1, -0.1], delta_pitch=[0, 0], delta_roll=[0, 0]),
        action(3, 1, "GRASP", target_width=0.0),
        checkpoint(4, "held", "lift", {"type": "holding", "agents": [1], "object": "cube_red"},
                   agents=1, recommended_view={"azimuth": 0.5, "elevation": 0.8, "radius": 1.2}),
        action(5, 1, "RELEASE"),
    ]
    return ExecutionPlan("cube_stacking", els, "two cubes", (SubGoal(1, "pick"),), {"source": "test"})


def test_plan_serialization_round_trip():
    p = _plan()
    back = ExecutionPlan.parse(p.serialize())
    assert back.serialize() == p.serialize()
    assert [e.index for e in back.elements] == [1, 2, 3, 4, 5]
    assert len(back.actions) == 4 and len(back.checkpoints) == 1


@given(small, small, small)
def test_action_params_round_trip(x, y, z):
    e = action(1, 0, "move", delta_x=x, delta_y=y, delta_z=z)
    assert e.primitive == "MOVE"
    d = json.loads(canonical_json(e.to_dict()))
    assert type(e).from_dict(d) == e


def test_element_validation():
    with pytest.raises(ValueError):
        action(1, 0, "JUMP")
    with pytest.raises(ValueError):
        TaskGoal("")


def test_decision_round_trips():
    p = _plan()
    decisions = [
        RequestView({"azimuth": 1.0, "elevation": 0.5, "radius": 1.0}, "look at the red cube"),
        PlanComplete(p, "cubes on table", "held after grasp"),
        NextActions((action(1, 0, "MOVE", delta_x=0.01, delta_y=0, delta_z=0),), (True,)),
        Replan("target moved"),
    ]
    for d in decisions:
        back = parse_decision(format_decision(d))
        assert type(back) is type(d)
        assert format_decision(back) == format_decision(d)


def test_parse_tolerates_surrounding_prose():
    text = "Thinking about it...\n<replan>\nblocked\n</replan>\nthanks"
    assert parse_decision(text) == Replan("blocked")


@pytest.mark.parametrize("text", ["", "hello", "<action>not json</action>", "<action>[]</action>",
                                  '<next_action>{"type": "TELEPORT"}</next_action>'])
def test_malformed_responses(text):
    with pytest.raises(MalformedResponse) as info:
        parse_decision(text)
    assert info.value.raw == text


def test_validate_plan_clean_and_broken():
    scene = initial_scene(load_task("cube_stacking"), 0, 0)
    assert validate_plan(_plan(), scene) == []
    bad = ExecutionPlan("cube_stacking", [
        action(1, 5, "MOVE", delta_x=0, delta_y=0, delta_z=0),
        action(2, 0, "MOVE", delta_x=0, delta_y=0, delta_z=3.0),
        checkpoint(3, "c", "weird", {"type": "holding", "agents": [0], "object": "ghost"}),
        checkpoint(4, "c", "lift", {"type": "grasped", "objects": ["cube_red"]}),
    ])
    codes = {i.code for i in validate_plan(bad, scene)}
    assert {"UnknownAgent", "BadCheckpoint", "DuplicateCheckpoint"} <= codes
    assert validate_plan(ExecutionPlan("x", []), scene)[0].code == "NoActions"
