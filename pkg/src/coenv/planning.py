"""Planning stage: view gathering, sub-goal decomposition, agent assignment, plan validation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import MalformedResponse, ValidationFailed, ViewBudgetExhausted
from .observe import AggregatedObservation, Camera, aggregate_views, describe
from .plan import (CHECKPOINT_TYPES, PRIMITIVE_PARAMS, ExecutionPlan, PlanComplete, RequestView, SubGoal,
                   TaskGoal)
from .tasks import PREDICATES
from .world import SceneState

DEFAULT_J_MAX = 6

CHECKPOINT_PREDICATES = ("tcp_near", "holding", "object_at", "stacked", "inside", "all")


@dataclass(frozen=True)
class Issue:
    code: str
    message: str
    element: Optional[int] = None

    def to_dict(self) -> dict:
        return {"code": self.code, "message": self.message, "element": self.element}


@dataclass
class PlanningResult:
    plan: ExecutionPlan
    views_requested: int
    observation: AggregatedObservation
    planner_calls: int
    subgoals: list = field(default_factory=list)
    cameras: list = field(default_factory=list)


def base_request(goal: TaskGoal, scene: SceneState, phase: str, kind: str,
                 initial: Optional[dict] = None, agg: Optional[AggregatedObservation] = None) -> dict:
    """Request payload shared by every planner call (also the wire format)."""
    state = describe(scene, agg)
    return {
        "phase": phase,
        "request": kind,
        "goal": goal.to_dict(),
        "structured_state": state,
        "initial_state": initial if initial is not None else state,
        "observation": agg.to_dict() if agg is not None else None,
        "plan_progress": {},
        "images_omitted": True,
    }


def decompose(goal: TaskGoal, obs: Optional[AggregatedObservation], planner, scene: SceneState,
              initial: Optional[dict] = None) -> list:
    req = base_request(goal, scene, "planning", "decompose", initial, obs)
    subgoals = list(planner.decompose(req))
    if not subgoals:
        raise MalformedResponse("planner returned no sub-goals", raw=repr(subgoals))
    for k, s in enumerate(subgoals, start=1):
        if not isinstance(s, SubGoal) or s.index != k:
            raise MalformedResponse("sub-goal indices must run 1..L", raw=repr(subgoals))
    return subgoals


def assign(subgoals: Sequence[SubGoal], scene: SceneState, planner, goal: TaskGoal,
           initial: Optional[dict] = None, obs: Optional[AggregatedObservation] = None) -> ExecutionPlan:
    if not subgoals:
        raise ValueError("assign needs at least one sub-goal")
    req = base_request(goal, scene, "planning", "assign", initial, obs)
    req["subgoals"] = [s.to_dict() for s in subgoals]
    plan = planner.assign(req)
    if not isinstance(plan, ExecutionPlan):
        raise MalformedResponse("planner did not return an execution plan", raw=repr(plan))
    plan = replace(plan, subgoals=tuple(subgoals)) if not plan.subgoals else plan
    issues = validate_plan(plan, scene)
    covered = {e.subgoal for e in plan.elements if e.subgoal is not None}
    for s in subgoals:
        if covered and s.index not in covered:
            issues.append(Issue("UncoveredSubgoal", f"no element serves sub-goal {s.index}"))
    if issues:
        raise ValidationFailed(issues)
    return plan


def planning_session(goal: TaskGoal, scene: SceneState, cameras: Sequence[Camera], planner,
                     J_max: int = DEFAULT_J_MAX) -> PlanningResult:
    """Request views until the planner declares planning complete, then decompose and assign.

    ``cameras`` are the views available before the first request. Only the most
    recent ``J_max`` views are aggregated.
    """
    if J_max < 1:
        raise ValueError("J_max must be at least 1")
    cams = list(cameras)[-J_max:] or [Camera(0.0, 1.45, 1.6)]
    agg = aggregate_views(scene, cams, J_max)
    initial = describe(scene)
    views, calls = 0, 0
    complete = None
    while complete is None:
        req = base_request(goal, scene, "planning", "turn", initial, agg)
        req["plan_progress"] = {"views_requested": views, "view_budget": J_max}
        decision = planner.planning_turn(req)
        calls += 1
        if isinstance(decision, PlanComplete):
            complete = decision
        elif isinstance(decision, RequestView):
            if views >= J_max:
                raise ViewBudgetExhausted(f"planner still requesting views after {J_max}")
            views += 1
            cams = (cams + [Camera.from_dict(decision.camera)])[-J_max:]
            agg = aggregate_views(scene, cams, J_max)
        else:
            raise MalformedResponse(f"unexpected decision during planning: {type(decision).__name__}",
                                    raw=repr(decision))
    subgoals = decompose(goal, agg, planner, scene, initial)
    plan = assign(subgoals, scene, planner, goal, initial, agg)
    calls += 2
    if complete.plan is None or not plan.key_observations:
        plan = replace(plan, key_observations=complete.key_observations or plan.key_observations)
    return PlanningResult(plan, views, agg, calls, subgoals, cams)


# ---------------------------------------------------------------------------
# Validation


def _values(v, n):
    if isinstance(v, (list, tuple)):
        return list(v) if len(v) == n else None
    return [v] * n


def _predicate_refs(pred, scene: SceneState, index: int, issues: list):
    if not isinstance(pred, dict) or pred.get("type") is None:
        issues.append(Issue("MalformedPredicate", "checkpoint predicate missing", index))
        return
    kind = pred["type"]
    if kind not in CHECKPOINT_PREDICATES and kind not in PREDICATES:
        issues.append(Issue("MalformedPredicate", f"unknown predicate type {kind!r}", index))
        return
    for q in pred.get("of", ()):
        _predicate_refs(q, scene, index, issues)
    oids = list(pred.get("objects", ()))
    for key in ("object", "container", "tool", "target"):
        if isinstance(pred.get(key), str):
            oids.append(pred[key])
    for oid in oids:
        if oid not in scene.objects:
            issues.append(Issue("UnknownObject", f"predicate references unknown object {oid!r}", index))
    agents = list(pred.get("agents", ()))
    if "agent" in pred:
        agents.append(pred["agent"])
    for a in agents:
        if not isinstance(a, int) or not 0 <= a < scene.n_agents:
            issues.append(Issue("UnknownAgent", f"predicate references unknown agent {a!r}", index))


def validate_plan(plan: ExecutionPlan, scene: SceneState, models=None) -> list:
    """Structural pre-flight check; returns a list of Issue (empty when the plan is fine).

    Workspace reachability is coarse: the cumulative commanded TCP position of each
    agent must stay inside its reach sphere.
    """
    issues = []
    if not plan.actions:
        issues.append(Issue("NoActions", "plan contains no action element"))
    n = scene.n_agents
    tcp = {a.id: a.tcp().translation.copy() for a in scene.agents}
    names = set()
    for e in plan.elements:
        bad = [a for a in e.agents if not 0 <= a < n]
        if bad:
            issues.append(Issue("UnknownAgent", f"agent(s) {bad} not in a {n}-agent scene", e.index))
        if len(set(e.agents)) != len(e.agents):
            issues.append(Issue("UnknownAgent", "agent listed twice", e.index))
        if e.is_checkpoint:
            if e.name in names:
                issues.append(Issue("DuplicateCheckpoint", f"checkpoint name {e.name!r} repeated", e.index))
            names.add(e.name)
            if e.checkpoint_type not in CHECKPOINT_TYPES:
                issues.append(Issue("BadCheckpoint", f"unknown checkpoint type {e.checkpoint_type!r}", e.index))
            _predicate_refs(e.predicate, scene, e.index, issues)
            continue
        if not e.agents:
            issues.append(Issue("UnknownAgent", "action without agent", e.index))
            continue
        allowed = PRIMITIVE_PARAMS[e.primitive]
        vals = {}
        for key, v in e.params.items():
            if key not in allowed:
                issues.append(Issue("ParamRange", f"{e.primitive} takes no parameter {key!r}", e.index))
                continue
            per = _values(v, len(e.agents))
            if per is None or not all(isinstance(x, (int, float)) and math.isfinite(x) for x in per):
                issues.append(Issue("ParamRange", f"{key} must be one number per agent", e.index))
                continue
            vals[key] = per
        if e.primitive == "GRASP":
            for w in vals.get("target_width", []):
                if not -1.0 <= w <= 0.0:
                    issues.append(Issue("ParamRange", f"target_width {w} outside [-1, 0]", e.index))
        if e.primitive in ("MOVE", "PLACE") and not bad:
            for pos, a in enumerate(e.agents):
                d = [vals.get(k, [0.0] * len(e.agents))[pos] for k in PRIMITIVE_PARAMS["MOVE"]]
                tcp[a] = tcp[a] + np.asarray(d, dtype=float)
                model = scene.agent(a).model
                dist = float(np.linalg.norm(tcp[a] - model.reach_center()))
                if model.max_reach > 0 and dist > model.max_reach:
                    issues.append(Issue("WorkspaceExceeded",
                                        f"agent {a} commanded {dist:.3f} m from its shoulder "
                                        f"(reach {model.max_reach:.3f} m)", e.index))
    return issues
