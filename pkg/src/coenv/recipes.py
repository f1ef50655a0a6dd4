"""Per-task manipulation recipes shared by the scripted planner and the scripted code generator.

A recipe is a list of steps (plain JSON dicts).  ``realize`` turns a step into a plan
element using a structured state description; ``compile_step`` turns it into script
statements that read the live state at run time.  Both follow the same arithmetic so
the two execution modes drive the same motions.
"""

from __future__ import annotations

import math
from typing import Mapping, Optional, Sequence

import numpy as np

from .plan import PlanElement, SubGoal, action, checkpoint

DEFAULT_CLOSE = {"franka": -0.6, "piper": -0.8}


class StateView:
    """Read access to a structured state description (see ``observe.describe``)."""

    def __init__(self, desc: Mapping, initial: Optional[Mapping] = None):
        self.desc = desc
        self.initial = initial or desc

    def robot(self, i: int) -> Mapping:
        return self.desc["robots"][i]

    def tcp(self, i: int) -> np.ndarray:
        return np.array(self.robot(i)["tcp_position"], dtype=float)

    def home_tcp(self, i: int) -> np.ndarray:
        return np.array(self.initial["robots"][i]["tcp_position"], dtype=float)

    def finger_yaw(self, i: int) -> float:
        return float(self.robot(i)["finger_yaw"])

    def obj(self, oid: str) -> Mapping:
        if oid in self.desc["objects"]:
            return self.desc["objects"][oid]
        return self.initial["objects"][oid]

    def pos(self, oid: str) -> np.ndarray:
        return np.array(self.obj(oid)["position"], dtype=float)

    def half(self, oid: str) -> float:
        return float(self.obj(oid)["half_height"])

    def model(self, i: int) -> str:
        return self.robot(i)["model"]


def yaw_branch(target: Optional[float], current: float, period: float) -> float:
    """Multiple of ``period`` that brings target - current into (-period/2, period/2]."""
    if target is None or period <= 0:
        return 0.0
    diff = target - current
    k = -math.floor(diff / period + 0.5)
    return k * period


def _rot2(yaw: float, v) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]], dtype=float)


def grasp_frame_offset(view: StateView, oid: str, offset) -> np.ndarray:
    """World offset from an object-aligned (along, across, up) offset."""
    yaw = view.obj(oid).get("grasp_yaw")
    return _rot2(yaw or 0.0, offset)


def dest_point(view: StateView, held: str, dest: Mapping) -> np.ndarray:
    """World position the held object's centroid should reach."""
    dxy = np.array(list(dest.get("dxy", (0.0, 0.0))) + [0.0])
    if "xy" in dest:
        x, y = dest["xy"]
        z = dest.get("z", view.half(held) + dest.get("clear", 0.0))
        return np.array([x, y, z], dtype=float) + dxy
    if "on" in dest:
        other = dest["on"]
        base = view.pos(other)
        lift = view.half(other) + view.half(held) + dest.get("clear", 0.0)
        return base + dxy + np.array([0.0, 0.0, lift])
    if "into" in dest:
        other = dest["into"]
        base = view.pos(other)
        floor = -view.half(other) + float(dest.get("floor", 0.0))
        lift = floor + view.half(held) + dest.get("clear", 0.0)
        return base + dxy + np.array([0.0, 0.0, lift])
    if "above" in dest:
        base = view.pos(dest["above"])
        return base + dxy + np.array([0.0, 0.0, float(dest.get("dz", 0.1))])
    raise ValueError(f"unsupported destination {dest!r}")


def _width(view: StateView, agent: int, step: Mapping, pos: int) -> float:
    widths = step.get("widths")
    if widths is not None:
        return float(widths[pos])
    return DEFAULT_CLOSE.get(view.model(agent), -1.0)


def step_deltas(step: Mapping, view: StateView) -> list:
    """Per-agent (dx, dy, dz) or (dyaw,) for a motion step."""
    kind = step["kind"]
    agents = step["agents"]
    out = []
    for pos, a in enumerate(agents):
        if kind == "align":
            oid = step["objects"][pos]
            o = view.obj(oid)
            target = o.get("grasp_yaw")
            cur = view.finger_yaw(a)
            if target is None:
                out.append((0.0,))
            else:
                out.append((target - cur + yaw_branch(target, cur, o["grasp_period"]),))
        elif kind == "approach":
            oid = step["objects"][pos]
            off = grasp_frame_offset(view, oid, step["offsets"][pos])
            out.append(tuple(view.pos(oid) + off - view.tcp(a)))
        elif kind == "move":
            out.append(tuple(float(v) for v in step["deltas"][pos]))
        elif kind == "carry":
            held = step["objects"][pos]
            out.append(tuple(dest_point(view, held, step["dest"][pos]) - view.pos(held)))
        elif kind == "retreat":
            lift = np.array([0.0, 0.0, float(step.get("dz", 0.0))])
            out.append(tuple(view.home_tcp(a) + lift - view.tcp(a)))
        else:
            raise ValueError(f"step kind {kind!r} has no deltas")
    return out


def realize(step: Mapping, view: StateView, index: int, subgoal: Optional[int] = None,
            bias: Optional[Sequence[float]] = None) -> PlanElement:
    """Plan element for a recipe step given the current state description."""
    kind = step["kind"]
    agents = list(step.get("agents", ()))
    aid = agents[0] if len(agents) == 1 else agents
    if kind == "checkpoint":
        return checkpoint(index, step["name"], step.get("type", "generic"), step["predicate"],
                          agents=agents, recommended_view=step.get("view"), subgoal=subgoal)
    if kind == "grasp":
        w = [_width(view, a, step, p) for p, a in enumerate(agents)]
        return action(index, aid, "GRASP", target=dict(step), subgoal=subgoal,
                      target_width=w[0] if len(w) == 1 else w)
    if kind == "release":
        return action(index, aid, "RELEASE", target=dict(step), subgoal=subgoal)
    deltas = step_deltas(step, view)
    if kind == "align":
        ys = [d[0] for d in deltas]
        return action(index, aid, "ROTATE", target=dict(step), subgoal=subgoal,
                      delta_yaw=ys[0] if len(ys) == 1 else ys)
    if bias is not None:
        deltas = [tuple(np.add(d, bias)) for d in deltas]
    cols = list(zip(*deltas))
    prim = "PLACE" if kind == "carry" and step.get("release") else "MOVE"
    params = {}
    for key, col in zip(("delta_x", "delta_y", "delta_z"), cols):
        vals = [float(v) for v in col]
        params[key] = vals[0] if len(vals) == 1 else vals
    return action(index, aid, prim, target=dict(step), subgoal=subgoal, **params)


def predict(desc: Mapping, element: PlanElement) -> dict:
    """Expected state description after ``element``, assuming every motion is achieved.

    Held objects translate with the TCP; a release leaves the object where it is.
    Used to give nominal plans consistent cumulative deltas.
    """
    out = {"step": desc.get("step", 0), "robots": [dict(r) for r in desc["robots"]],
           "objects": {k: dict(v) for k, v in desc["objects"].items()}}
    if element.is_checkpoint:
        return out
    for pos, a in enumerate(element.agents):
        r = out["robots"][a]
        held = list(r.get("holding") or [])
        if element.primitive in ("MOVE", "PLACE"):
            d = np.array([element.param(k, pos) for k in ("delta_x", "delta_y", "delta_z")])
            r["tcp_position"] = [float(v) for v in np.add(r["tcp_position"], d)]
            for oid in held:
                o = out["objects"][oid]
                o["position"] = [float(v) for v in np.add(o["position"], d)]
        elif element.primitive == "ROTATE":
            dy = element.param("delta_yaw", pos)
            r["finger_yaw"] = float(r["finger_yaw"]) + dy
            for oid in held:
                o = out["objects"][oid]
                if o.get("grasp_yaw") is not None:
                    o["grasp_yaw"] = float(o["grasp_yaw"]) + dy
        elif element.primitive == "GRASP":
            tcp = np.array(r["tcp_position"])
            near = min(out["objects"].items(), default=None,
                       key=lambda kv: float(np.linalg.norm(np.subtract(kv[1]["position"], tcp))))
            if near is not None and np.linalg.norm(np.subtract(near[1]["position"], tcp)) < 0.2:
                r["holding"] = held + [near[0]] if near[0] not in held else held
        if element.primitive in ("RELEASE", "PLACE"):
            r["holding"] = []
    return out


# ---------------------------------------------------------------------------
# Script compilation


def _vec(v) -> str:
    return "[" + ", ".join(repr(float(x)) for x in v) + "]"


def compile_step(step: Mapping, view0: StateView, n: int, bias: Optional[Sequence[float]] = None) -> list:
    """Script statements for one recipe step; ``n`` makes variable names unique.

    Constants that do not change during a run (offsets, object sizes, home positions,
    yaw branches) are taken from the initial description ``view0``; positions are
    queried live.
    """
    kind = step["kind"]
    agents = list(step.get("agents", ()))
    aid = agents[0] if len(agents) == 1 else agents
    st: list = []
    if kind == "checkpoint":
        return [{"op": "checkpoint", "name": step["name"], "type": step.get("type", "generic"),
                 "notes": step.get("notes", "")}]
    if kind == "grasp":
        w = [_width(view0, a, step, p) for p, a in enumerate(agents)]
        return [{"op": "act", "type": "GRASP", "agent_id": aid,
                 "params": {"target_width": w[0] if len(w) == 1 else w}}]
    if kind == "release":
        return [{"op": "act", "type": "RELEASE", "agent_id": aid, "params": {}}]
    names = []
    for pos, a in enumerate(agents):
        v = f"d{n}_{pos}"
        names.append(v)
        if kind == "align":
            oid = step["objects"][pos]
            o = view0.obj(oid)
            if o.get("grasp_yaw") is None:
                st.append({"op": "let", "var": v, "expr": "0.0"})
                continue
            k = yaw_branch(o["grasp_yaw"], view0.finger_yaw(a), o["grasp_period"])
            st.append({"op": "query", "var": f"oy{n}_{pos}", "path": f"objects.{oid}.grasp_yaw"})
            st.append({"op": "query", "var": f"ty{n}_{pos}", "path": f"robots.{a}.finger_yaw"})
            st.append({"op": "let", "var": v, "expr": f"oy{n}_{pos} - ty{n}_{pos} + {k!r}"})
            continue
        extra = _vec(bias) if bias is not None else None
        if kind == "approach":
            oid = step["objects"][pos]
            off = grasp_frame_offset(view0, oid, step["offsets"][pos])
            st.append({"op": "query", "var": f"p{n}_{pos}", "path": f"objects.{oid}.position"})
            st.append({"op": "query", "var": f"t{n}_{pos}", "path": f"robots.{a}.position"})
            expr = f"p{n}_{pos} + {_vec(off)} - t{n}_{pos}"
        elif kind == "move":
            expr = _vec(step["deltas"][pos])
        elif kind == "carry":
            held = step["objects"][pos]
            dest = step["dest"][pos]
            st.append({"op": "query", "var": f"h{n}_{pos}", "path": f"objects.{held}.position"})
            if "xy" in dest:
                expr = f"{_vec(dest_point(view0, held, dest))} - h{n}_{pos}"
            else:
                other = dest.get("on") or dest.get("into") or dest.get("above")
                rel = dest_point(view0, held, dest) - view0.pos(other)
                st.append({"op": "query", "var": f"o{n}_{pos}", "path": f"objects.{other}.position"})
                expr = f"o{n}_{pos} + {_vec(rel)} - h{n}_{pos}"
        elif kind == "retreat":
            goal = view0.home_tcp(a) + np.array([0.0, 0.0, float(step.get("dz", 0.0))])
            st.append({"op": "query", "var": f"t{n}_{pos}", "path": f"robots.{a}.position"})
            expr = f"{_vec(goal)} - t{n}_{pos}"
        else:
            raise ValueError(f"unknown step kind {kind!r}")
        if extra is not None:
            expr = f"{expr} + {extra}"
        st.append({"op": "let", "var": v, "expr": expr})

    def pick(fmt: str):
        items = [fmt.format(v) for v in names]
        return items[0] if len(items) == 1 else "[" + ", ".join(items) + "]"

    if kind == "align":
        st.append({"op": "act", "type": "ROTATE", "agent_id": aid, "params": {"delta_yaw": pick("{}")}})
    else:
        prim = "PLACE" if kind == "carry" and step.get("release") else "MOVE"
        st.append({"op": "act", "type": prim, "agent_id": aid,
                   "params": {"delta_x": pick("{}[0]"), "delta_y": pick("{}[1]"), "delta_z": pick("{}[2]")}})
    return st


# ---------------------------------------------------------------------------
# Recipes


def _grasp_checkpoint(name: str, agent: int, oid: str, offset=(0.0, 0.0, 0.0)) -> dict:
    return {"kind": "checkpoint", "name": name, "type": "grasp", "agents": [agent],
            "predicate": {"type": "tcp_near", "agent": agent, "object": oid, "offset": list(offset)}}


def _holding(name: str, agents: Sequence[int], oid: str, ctype: str = "lift", min_lift: float = 0.0) -> dict:
    pred = {"type": "holding", "agents": list(agents), "object": oid}
    if min_lift:
        pred["min_lift"] = min_lift
    return {"kind": "checkpoint", "name": name, "type": ctype, "agents": list(agents), "predicate": pred}


def recipe_cube_stacking(p: Mapping) -> list:
    sx, sy = p.get("stack_xy", (0.0, 0.22))
    return [
        {"sub": 1, "kind": "align", "agents": [0, 1], "objects": ["cube_blue", "cube_red"]},
        {"sub": 1, "kind": "approach", "agents": [0, 1], "objects": ["cube_blue", "cube_red"],
         "offsets": [[0, 0, 0.10], [0, 0, 0.10]]},
        {"sub": 1, "kind": "approach", "agents": [0, 1], "objects": ["cube_blue", "cube_red"],
         "offsets": [[0, 0, 0.0], [0, 0, 0.0]]},
        _grasp_checkpoint("blue_between_fingers", 0, "cube_blue"),
        _grasp_checkpoint("red_between_fingers", 1, "cube_red"),
        {"sub": 1, "kind": "grasp", "agents": [0, 1]},
        {"sub": 1, "kind": "move", "agents": [0, 1], "deltas": [[0, 0, 0.12], [0, 0, 0.12]]},
        _holding("both_cubes_lifted", [0], "cube_blue", min_lift=0.03),
        {"sub": 2, "kind": "carry", "agents": [0], "objects": ["cube_blue"],
         "dest": [{"xy": [sx, sy], "z": 0.14}]},
        {"sub": 2, "kind": "carry", "agents": [0], "objects": ["cube_blue"], "release": True,
         "dest": [{"xy": [sx, sy], "clear": 0.002}]},
        {"sub": 2, "kind": "retreat", "agents": [0], "dz": 0.0},
        {"sub": 2, "kind": "carry", "agents": [1], "objects": ["cube_red"],
         "dest": [{"above": "cube_blue", "dz": 0.10}]},
        {"sub": 2, "kind": "carry", "agents": [1], "objects": ["cube_red"], "release": True,
         "dest": [{"on": "cube_blue", "clear": 0.002}]},
        {"kind": "checkpoint", "name": "cubes_stacked", "type": "place", "agents": [1],
         "predicate": {"type": "stacked", "objects": ["cube_red", "cube_blue"]}},
        {"sub": 2, "kind": "retreat", "agents": [1], "dz": 0.0},
    ]


def recipe_ball_pickup(p: Mapping) -> list:
    side = float(p.get("contact_offset", 0.118))
    return [
        {"sub": 1, "kind": "approach", "agents": [0, 1], "objects": ["ball", "ball"],
         "offsets": [[-side - 0.08, 0, 0.05], [side + 0.08, 0, 0.05]]},
        {"sub": 1, "kind": "approach", "agents": [0, 1], "objects": ["ball", "ball"],
         "offsets": [[-side, 0, 0.0], [side, 0, 0.0]]},
        _grasp_checkpoint("left_contact_pose", 0, "ball", (-side, 0, 0)),
        _grasp_checkpoint("right_contact_pose", 1, "ball", (side, 0, 0)),
        {"sub": 1, "kind": "grasp", "agents": [0, 1]},
        {"kind": "checkpoint", "name": "ball_held_by_both", "type": "grasp", "agents": [0, 1],
         "predicate": {"type": "holding", "agents": [0, 1], "object": "ball"}},
        {"sub": 2, "kind": "move", "agents": [0, 1], "deltas": [[0, 0, 0.12], [0, 0, 0.12]]},
        _holding("ball_lifted", [0, 1], "ball", min_lift=0.05),
    ]


def recipe_transfer_cylinder(p: Mapping) -> list:
    mx, my = p.get("handover_xy", (0.0, 0.15))
    tx, ty = p.get("target_xy", (0.25, 0.15))
    g = float(p.get("grip_offset", 0.06))
    return [
        {"sub": 1, "kind": "align", "agents": [0], "objects": ["cylinder"]},
        {"sub": 1, "kind": "approach", "agents": [0], "objects": ["cylinder"], "offsets": [[-g, 0, 0.10]]},
        {"sub": 1, "kind": "approach", "agents": [0], "objects": ["cylinder"], "offsets": [[-g, 0, 0.0]]},
        _grasp_checkpoint("cylinder_in_first_gripper", 0, "cylinder", (-g, 0, 0)),
        {"sub": 1, "kind": "grasp", "agents": [0]},
        {"sub": 1, "kind": "move", "agents": [0], "deltas": [[0, 0, 0.15]]},
        _holding("cylinder_lifted", [0], "cylinder", min_lift=0.05),
        {"sub": 2, "kind": "carry", "agents": [0], "objects": ["cylinder"], "dest": [{"xy": [mx, my], "z": 0.22}]},
        {"sub": 2, "kind": "align", "agents": [1], "objects": ["cylinder"]},
        {"sub": 2, "kind": "approach", "agents": [1], "objects": ["cylinder"], "offsets": [[g, 0, 0.08]]},
        {"sub": 2, "kind": "approach", "agents": [1], "objects": ["cylinder"], "offsets": [[g, 0, 0.0]]},
        _grasp_checkpoint("second_gripper_aligned", 1, "cylinder", (g, 0, 0)),
        {"sub": 2, "kind": "grasp", "agents": [1]},
        {"kind": "checkpoint", "name": "both_holding", "type": "handover", "agents": [0, 1],
         "predicate": {"type": "holding", "agents": [0, 1], "object": "cylinder"}},
        {"sub": 2, "kind": "release", "agents": [0]},
        {"sub": 2, "kind": "move", "agents": [0], "deltas": [[0, 0, 0.08]]},
        {"sub": 2, "kind": "retreat", "agents": [0], "dz": 0.0},
        {"sub": 3, "kind": "carry", "agents": [1], "objects": ["cylinder"], "dest": [{"xy": [tx, ty], "z": 0.12}]},
        {"sub": 3, "kind": "carry", "agents": [1], "objects": ["cylinder"], "release": True,
         "dest": [{"xy": [tx, ty], "clear": 0.002}]},
        {"kind": "checkpoint", "name": "cylinder_at_target", "type": "place", "agents": [1],
         "predicate": {"type": "object_at", "object": "cylinder", "xy": [tx, ty], "tol": 0.03}},
        {"sub": 3, "kind": "move", "agents": [1], "deltas": [[0, 0, 0.08]]},
    ]


def recipe_place_cucumber(p: Mapping) -> list:
    aside = p.get("lid_aside", (0.0, -0.17, 0.0))
    return [
        {"sub": 1, "kind": "approach", "agents": [0], "objects": ["lid"], "offsets": [[0, 0, 0.10]]},
        {"sub": 1, "kind": "approach", "agents": [0], "objects": ["lid"], "offsets": [[0, 0, 0.012]]},
        _grasp_checkpoint("lid_knob_in_gripper", 0, "lid", (0, 0, 0.012)),
        {"sub": 1, "kind": "grasp", "agents": [0]},
        {"sub": 1, "kind": "move", "agents": [0], "deltas": [[0, 0, 0.12]]},
        {"sub": 1, "kind": "move", "agents": [0], "deltas": [list(aside)]},
        _holding("lid_held", [0], "lid", min_lift=0.05),
        {"sub": 2, "kind": "align", "agents": [1, 2], "objects": ["cucumber_1", "cucumber_2"]},
        {"sub": 2, "kind": "approach", "agents": [1, 2], "objects": ["cucumber_1", "cucumber_2"],
         "offsets": [[0, 0, 0.08], [0, 0, 0.08]]},
        {"sub": 2, "kind": "approach", "agents": [1, 2], "objects": ["cucumber_1", "cucumber_2"],
         "offsets": [[0, 0, 0.0], [0, 0, 0.0]]},
        _grasp_checkpoint("cucumber_1_in_gripper", 1, "cucumber_1"),
        _grasp_checkpoint("cucumber_2_in_gripper", 2, "cucumber_2"),
        {"sub": 2, "kind": "grasp", "agents": [1, 2]},
        {"sub": 2, "kind": "move", "agents": [1, 2], "deltas": [[0, 0, 0.10], [0, 0, 0.10]]},
        _holding("cucumbers_lifted", [1], "cucumber_1", min_lift=0.03),
        {"sub": 3, "kind": "carry", "agents": [1], "objects": ["cucumber_1"],
         "dest": [{"above": "pot", "dz": 0.16, "dxy": [0.0, -0.022]}]},
        {"sub": 3, "kind": "carry", "agents": [1], "objects": ["cucumber_1"], "release": True,
         "dest": [{"into": "pot", "floor": 0.01, "clear": 0.003, "dxy": [0.0, -0.022]}]},
        {"sub": 3, "kind": "move", "agents": [1], "deltas": [[0, 0, 0.14]]},
        {"sub": 3, "kind": "retreat", "agents": [1], "dz": 0.05},
        {"sub": 3, "kind": "carry", "agents": [2], "objects": ["cucumber_2"],
         "dest": [{"above": "pot", "dz": 0.16, "dxy": [0.0, 0.022]}]},
        {"sub": 3, "kind": "carry", "agents": [2], "objects": ["cucumber_2"], "release": True,
         "dest": [{"into": "pot", "floor": 0.01, "clear": 0.003, "dxy": [0.0, 0.022]}]},
        {"kind": "checkpoint", "name": "cucumbers_in_pot", "type": "place", "agents": [2],
         "predicate": {"type": "inside", "objects": ["cucumber_1", "cucumber_2"], "container": "pot"}},
        {"sub": 3, "kind": "move", "agents": [2], "deltas": [[0, 0, 0.14]]},
    ]


def recipe_brush_box(p: Mapping) -> list:
    bx, by = p.get("sweep_xy", (0.08, 0.02))
    stroke = float(p.get("stroke", 0.08))
    steps = [
        {"sub": 1, "kind": "align", "agents": [0], "objects": ["brush"]},
        {"sub": 1, "kind": "approach", "agents": [0], "objects": ["brush"], "offsets": [[0, 0, 0.10]]},
        {"sub": 1, "kind": "approach", "agents": [0], "objects": ["brush"], "offsets": [[0, 0, 0.0]]},
        _grasp_checkpoint("brush_in_gripper", 0, "brush"),
        {"sub": 1, "kind": "grasp", "agents": [0]},
        {"sub": 1, "kind": "move", "agents": [0], "deltas": [[0, 0, 0.10]]},
        {"sub": 2, "kind": "align", "agents": [1], "objects": ["box"]},
        {"sub": 2, "kind": "approach", "agents": [1], "objects": ["box"], "offsets": [[0, 0, 0.08]]},
        {"sub": 2, "kind": "approach", "agents": [1], "objects": ["box"], "offsets": [[0, 0, 0.0]]},
        _grasp_checkpoint("box_in_gripper", 1, "box"),
        {"sub": 2, "kind": "grasp", "agents": [1]},
        {"sub": 2, "kind": "move", "agents": [1], "deltas": [[0, 0, 0.05]]},
        _holding("box_held", [1], "box", min_lift=0.03),
        {"sub": 2, "kind": "carry", "agents": [1], "objects": ["box"], "dest": [{"xy": [bx, by], "z": 0.09}]},
        {"sub": 2, "kind": "carry", "agents": [1], "objects": ["box"], "release": True,
         "dest": [{"xy": [bx, by], "clear": 0.002}]},
        {"sub": 2, "kind": "move", "agents": [1], "deltas": [[0, 0, 0.10]]},
        {"sub": 2, "kind": "retreat", "agents": [1], "dz": 0.05},
        {"sub": 3, "kind": "carry", "agents": [0], "objects": ["brush"],
         "dest": [{"above": "box", "dz": 0.10, "dxy": [0.0, -stroke / 2]}]},
    ]
    for k in range(3):
        steps += [
            {"sub": 3, "kind": "carry", "agents": [0], "objects": ["brush"],
             "dest": [{"on": "box", "clear": -0.002, "dxy": [0.0, -stroke / 2]}]},
            {"sub": 3, "kind": "move", "agents": [0], "deltas": [[0, stroke, 0]]},
            {"sub": 3, "kind": "move", "agents": [0], "deltas": [[0, 0, 0.03]]},
        ]
        if k < 2:
            steps.append({"sub": 3, "kind": "move", "agents": [0], "deltas": [[0, -stroke, 0]]})
    return steps


RECIPES = {
    "cube_stacking": recipe_cube_stacking,
    "ball_pickup": recipe_ball_pickup,
    "transfer_cylinder": recipe_transfer_cylinder,
    "place_cucumber": recipe_place_cucumber,
    "brush_box": recipe_brush_box,
}

SUBGOALS = {
    "cube_stacking": ["grasp and lift both cubes", "stack the red cube on the blue cube"],
    "ball_pickup": ["bring both grippers into contact with the ball", "lift the ball together"],
    "transfer_cylinder": ["grasp and lift the cylinder with the first arm",
                          "hand the cylinder over to the second arm", "place the cylinder at the target"],
    "place_cucumber": ["lift the pot lid and hold it aside", "pick up both cucumbers",
                       "place both cucumbers inside the pot"],
    "brush_box": ["grasp the brush", "grasp the box and set it down at the sweeping spot",
                  "sweep the box top with the brush three times"],
}


def recipe_for(task) -> list:
    """Recipe steps with checkpoint steps inheriting the sub-goal of the step that follows."""
    steps = [dict(s) for s in RECIPES[task.recipe](task.params)]
    nxt = None
    for s in reversed(steps):
        if "sub" in s:
            nxt = s["sub"]
        elif nxt is not None:
            s["sub"] = nxt
    last = max(s.get("sub", 1) for s in steps)
    for s in steps:
        s.setdefault("sub", last)
    return steps


def subgoals_for(task) -> list:
    return [SubGoal(i + 1, d) for i, d in enumerate(SUBGOALS[task.recipe])]
