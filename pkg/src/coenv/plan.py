"""Plan data structures and the tagged planner-response format.

An execution plan is an ordered list of elements; each element is either an action
(agent or agent list, primitive, parameters) or a checkpoint with a predicate.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Optional, Sequence, Union

from .errors import MalformedResponse

PRIMITIVES = ("MOVE", "ROTATE", "GRASP", "RELEASE", "PLACE")
CHECKPOINT_TYPES = ("grasp", "lift", "handover", "place", "generic")

PRIMITIVE_PARAMS = {
    "MOVE": ("delta_x", "delta_y", "delta_z"),
    "PLACE": ("delta_x", "delta_y", "delta_z"),
    "ROTATE": ("delta_yaw", "delta_pitch", "delta_roll"),
    "GRASP": ("target_width",),
    "RELEASE": (),
}


@dataclass(frozen=True)
class TaskGoal:
    id: str
    description: str = ""
    success_criteria: str = ""
    hints: tuple = ()

    def __post_init__(self):
        if not self.id:
            raise ValueError("goal id must be non-empty")
        object.__setattr__(self, "hints", tuple(self.hints))

    def to_dict(self) -> dict:
        return {"id": self.id, "description": self.description,
                "success_criteria": self.success_criteria, "hints": list(self.hints)}

    @classmethod
    def from_dict(cls, d: dict) -> "TaskGoal":
        return cls(d["id"], d.get("description", ""), d.get("success_criteria", ""), tuple(d.get("hints", ())))


@dataclass(frozen=True)
class SubGoal:
    index: int
    description: str

    def to_dict(self) -> dict:
        return {"index": self.index, "description": self.description}


def _freeze(v):
    if isinstance(v, Mapping):
        return {k: _freeze(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_freeze(x) for x in v]
    return v


@dataclass(frozen=True)
class PlanElement:
    """One plan step.

    Action elements carry ``agents`` (one or several ids executed synchronously),
    ``primitive`` and ``params``; ``target`` optionally records the approximate goal
    the planner had in mind, e.g. ``{"object": "cube_red", "offset": [0, 0, 0.1]}``.
    Checkpoint elements carry ``name``, ``checkpoint_type`` and ``predicate``.
    """

    index: int
    kind: str
    agents: tuple = ()
    primitive: str = ""
    params: dict = field(default_factory=dict)
    target: Optional[dict] = None
    name: str = ""
    checkpoint_type: str = ""
    predicate: Optional[dict] = None
    recommended_view: Optional[dict] = None
    subgoal: Optional[int] = None
    note: str = ""

    def __post_init__(self):
        if self.kind not in ("action", "checkpoint"):
            raise ValueError(f"unknown element kind {self.kind!r}")
        agents = self.agents
        if isinstance(agents, int):
            agents = (agents,)
        object.__setattr__(self, "agents", tuple(int(a) for a in agents))
        if self.kind == "action":
            prim = self.primitive.upper()
            if prim not in PRIMITIVES:
                raise ValueError(f"unknown primitive {self.primitive!r}")
            object.__setattr__(self, "primitive", prim)
        object.__setattr__(self, "params", _freeze(dict(self.params)))

    @property
    def is_checkpoint(self) -> bool:
        return self.kind == "checkpoint"

    @property
    def is_action(self) -> bool:
        return self.kind == "action"

    def param(self, key: str, agent_pos: int = 0, default: float = 0.0) -> float:
        """Parameter value for the agent at ``agent_pos`` (scalars broadcast, lists index)."""
        v = self.params.get(key, default)
        if isinstance(v, (list, tuple)):
            return float(v[agent_pos])
        return float(v)

    def agent_id_field(self):
        return self.agents[0] if len(self.agents) == 1 else list(self.agents)

    def to_dict(self) -> dict:
        d: dict = {"index": self.index, "kind": self.kind}
        if self.is_action:
            d["type"] = self.primitive
            params = dict(self.params)
            params["agent_id"] = self.agent_id_field()
            d["params"] = params
            if self.target is not None:
                d["target"] = self.target
        else:
            d["name"] = self.name
            d["checkpoint_type"] = self.checkpoint_type
            d["predicate"] = self.predicate
            if self.agents:
                d["agent_id"] = self.agent_id_field()
            if self.recommended_view is not None:
                d["recommended_view"] = self.recommended_view
        if self.subgoal is not None:
            d["subgoal"] = self.subgoal
        if self.note:
            d["note"] = self.note
        return d

    @classmethod
    def from_dict(cls, d: Mapping, index: Optional[int] = None) -> "PlanElement":
        idx = int(d.get("index", index if index is not None else 0))
        kind = d.get("kind") or ("checkpoint" if "checkpoint_type" in d or d.get("type") == "CHECKPOINT" else "action")
        if kind == "checkpoint":
            agents = d.get("agent_id", ())
            return cls(index=idx, kind="checkpoint", agents=agents if agents is not None else (),
                       name=str(d.get("name", "")),
                       checkpoint_type=str(d.get("checkpoint_type", "generic")),
                       predicate=d.get("predicate"), recommended_view=d.get("recommended_view"),
                       subgoal=d.get("subgoal"), note=d.get("note", ""))
        params = dict(d.get("params", {}))
        if "agent_id" not in params:
            raise ValueError("action element without agent_id")
        agents = params.pop("agent_id")
        return cls(index=idx, kind="action", agents=agents, primitive=str(d["type"]),
                   params=params, target=d.get("target"), subgoal=d.get("subgoal"),
                   note=d.get("note", ""))


def action(index: int, agents: Union[int, Sequence[int]], primitive: str, target: Optional[dict] = None,
           subgoal: Optional[int] = None, note: str = "", **params) -> PlanElement:
    return PlanElement(index=index, kind="action", agents=agents, primitive=primitive,
                       params=params, target=target, subgoal=subgoal, note=note)


def checkpoint(index: int, name: str, checkpoint_type: str = "generic", predicate: Optional[dict] = None,
               agents: Union[int, Sequence[int]] = (), recommended_view: Optional[dict] = None,
               subgoal: Optional[int] = None, note: str = "") -> PlanElement:
    return PlanElement(index=index, kind="checkpoint", agents=agents, name=name,
                       checkpoint_type=checkpoint_type, predicate=predicate,
                       recommended_view=recommended_view, subgoal=subgoal, note=note)


@dataclass(frozen=True)
class ExecutionPlan:
    goal_id: str
    elements: tuple
    key_observations: str = ""
    subgoals: tuple = ()
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        object.__setattr__(self, "subgoals", tuple(self.subgoals))

    @property
    def actions(self) -> list:
        return [e for e in self.elements if e.is_action]

    @property
    def checkpoints(self) -> list:
        return [e for e in self.elements if e.is_checkpoint]

    def renumbered(self) -> "ExecutionPlan":
        return replace(self, elements=tuple(replace(e, index=i + 1) for i, e in enumerate(self.elements)))

    def to_dict(self) -> dict:
        return {
            "goal_id": self.goal_id,
            "key_observations": self.key_observations,
            "subgoals": [s.to_dict() for s in self.subgoals],
            "elements": [e.to_dict() for e in self.elements],
            "provenance": dict(self.provenance),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExecutionPlan":
        return cls(
            goal_id=d["goal_id"],
            elements=tuple(PlanElement.from_dict(e, i + 1) for i, e in enumerate(d.get("elements", ()))),
            key_observations=d.get("key_observations", ""),
            subgoals=tuple(SubGoal(int(s["index"]), s["description"]) for s in d.get("subgoals", ())),
            provenance=dict(d.get("provenance", {})),
        )

    def serialize(self) -> str:
        return canonical_json(self.to_dict())

    @classmethod
    def parse(cls, text: str) -> "ExecutionPlan":
        return cls.from_dict(json.loads(text))


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True, allow_nan=False)


# ---------------------------------------------------------------------------
# Planner decisions


@dataclass(frozen=True)
class RequestView:
    camera: dict
    reason: str = ""


@dataclass(frozen=True)
class PlanComplete:
    plan: Optional[ExecutionPlan] = None
    key_observations: str = ""
    checkpoints_text: str = ""


@dataclass(frozen=True)
class NextActions:
    actions: tuple
    step_done: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(self.actions))
        done = tuple(self.step_done) or tuple(False for _ in self.actions)
        if len(done) != len(self.actions):
            raise ValueError("step_done must match the action list")
        object.__setattr__(self, "step_done", done)


@dataclass(frozen=True)
class Replan:
    reason: str = ""


PlannerDecision = Union[RequestView, PlanComplete, NextActions, Replan]

_TAG = re.compile(r"<(?P<tag>[a-z_]+)>(?P<body>.*?)</(?P=tag)>", re.S)


def _blocks(text: str) -> dict:
    out: dict = {}
    for m in _TAG.finditer(text):
        out.setdefault(m.group("tag"), m.group("body").strip())
        # nested blocks inside next_action
        for inner in _TAG.finditer(m.group("body")):
            out.setdefault(inner.group("tag"), inner.group("body").strip())
    return out


def _action_json(d: Mapping, index: int) -> PlanElement:
    if not isinstance(d, Mapping) or "type" not in d:
        raise ValueError("action entry needs a type")
    return PlanElement.from_dict({"type": d["type"], "params": d.get("params", {}),
                                  "target": d.get("target"), "index": d.get("index", index)})


def format_decision(decision: PlannerDecision) -> str:
    """Render a decision in the tagged planner-response format."""
    if isinstance(decision, RequestView):
        body = canonical_json({"type": "CAMERA_ORBIT", "params": decision.camera, "reason": decision.reason})
        return f"<next_action>\n{body}\n</next_action>"
    if isinstance(decision, PlanComplete):
        parts = ["<next_action>", "PLANNING_COMPLETE",
                 f"<key_observations>\n{decision.key_observations}\n</key_observations>",
                 f"<checkpoints>\n{decision.checkpoints_text}\n</checkpoints>"]
        if decision.plan is not None:
            parts.append(f"<execution_plan>\n{decision.plan.serialize()}\n</execution_plan>")
        parts.append("</next_action>")
        return "\n".join(parts)
    if isinstance(decision, NextActions):
        items = []
        for a, done in zip(decision.actions, decision.step_done):
            d = a.to_dict()
            item = {"type": d["type"], "params": d["params"], "step_done": bool(done)}
            if "target" in d:
                item["target"] = d["target"]
            items.append(item)
        return f"<action>\n{canonical_json(items)}\n</action>"
    if isinstance(decision, Replan):
        return f"<replan>\n{decision.reason}\n</replan>"
    raise TypeError(f"not a planner decision: {decision!r}")


def parse_decision(text: str) -> PlannerDecision:
    """Parse a tagged planner response; failures raise MalformedResponse carrying the raw text."""
    if not isinstance(text, str):
        raise MalformedResponse("response is not text", raw=repr(text))
    blocks = _blocks(text)
    try:
        if "replan" in blocks:
            return Replan(blocks["replan"])
        if "action" in blocks:
            body = json.loads(blocks["action"])
            items = body if isinstance(body, list) else [body]
            if not items:
                raise ValueError("empty action list")
            acts = tuple(_action_json(it, i + 1) for i, it in enumerate(items))
            done = tuple(bool(it.get("step_done", False)) for it in items)
            return NextActions(acts, done)
        if "next_action" in blocks:
            body = blocks["next_action"]
            if "PLANNING_COMPLETE" in body:
                plan = None
                if "execution_plan" in blocks and blocks["execution_plan"].lstrip().startswith("{"):
                    plan = ExecutionPlan.parse(blocks["execution_plan"])
                return PlanComplete(plan=plan, key_observations=blocks.get("key_observations", ""),
                                    checkpoints_text=blocks.get("checkpoints", ""))
            start = body.find("{")
            req = json.loads(body[start:body.rfind("}") + 1])
            if req.get("type") != "CAMERA_ORBIT":
                raise ValueError(f"unexpected next_action type {req.get('type')!r}")
            return RequestView(camera=dict(req.get("params", {})), reason=req.get("reason", ""))
    except (ValueError, KeyError, TypeError) as exc:
        raise MalformedResponse(f"could not parse planner response: {exc}", raw=text) from exc
    raise MalformedResponse("no recognised block in planner response", raw=text)
