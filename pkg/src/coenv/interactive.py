"""Closed-loop execution: execute an element, verify it, gate on checkpoints, adapt."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import BudgetExhausted, MalformedPredicate, MalformedResponse, ValidationFailed
from .geometry import quat_from_rpy, quat_to_matrix, rotation_vector
from .observe import Camera, describe, observe
from .plan import ExecutionPlan, NextActions, PlanElement, Replan, action, canonical_json
from .planning import DEFAULT_J_MAX, base_request, planning_session, validate_plan
from .tasks import TaskSpec, eval_milestones, eval_predicate, is_inside, is_stacked, load_task
from .trajectory import CheckpointRecord, EpisodeResult, StepRecord, Trajectory, configs_of
from .world import DEFAULT_WORLD, SceneState, WorldConfig, apply_primitive, finger_yaw, grasp_yaw

EPISODE_SCHEMA = "coenv-episode/1"

# TCP orientation with fingers closing along world y and the approach axis pointing down
DOWN = np.diag([1.0, -1.0, -1.0])


@dataclass(frozen=True)
class InteractiveConfig:
    pos_check_tol: float = 0.02
    rot_check_tol: float = 0.1
    stuck_window: int = 3
    stuck_eps: float = 0.005
    max_corrections_per_element: int = 3
    max_replans: int = 2
    drift_limit: float = 0.05
    J_max: int = DEFAULT_J_MAX
    max_steps: int = 20000
    check_visibility: bool = True

    def __post_init__(self):
        for name in ("pos_check_tol", "rot_check_tol", "stuck_window", "stuck_eps",
                     "max_corrections_per_element", "drift_limit", "J_max", "max_steps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_replans < 0:
            raise ValueError("max_replans must be non-negative")


DEFAULT_INTERACTIVE = InteractiveConfig()


@dataclass(frozen=True)
class VerifyResult:
    verdict: str
    diagnostics: dict

    @property
    def ok(self) -> bool:
        return self.verdict == "Success"

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "diagnostics": self.diagnostics}


@dataclass(frozen=True)
class CheckpointResult:
    phi: int
    report: dict


# ---------------------------------------------------------------------------
# Verification


def commanded_tcp(before: SceneState, element: PlanElement, pos: int) -> np.ndarray:
    """TCP pose a Move/Rotate/Place element asks for, from the state it started in."""
    tcp = before.agent(element.agents[pos]).tcp_matrix()
    out = tcp.copy()
    if element.primitive in ("MOVE", "PLACE"):
        out[:3, 3] += [element.param(k, pos) for k in ("delta_x", "delta_y", "delta_z")]
    elif element.primitive == "ROTATE":
        dq = quat_from_rpy(element.param("delta_roll", pos), element.param("delta_pitch", pos),
                           element.param("delta_yaw", pos))
        out[:3, :3] = quat_to_matrix(dq) @ tcp[:3, :3]
    return out


def _rot_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(rotation_vector(a.T @ b)))


def verify_outcome(element: PlanElement, before: SceneState, after: SceneState,
                   cfg: InteractiveConfig = DEFAULT_INTERACTIVE) -> VerifyResult:
    """Success/Fail for an executed action from its before and after states alone."""
    if not element.is_action:
        raise ValueError("only action elements can be verified")
    events = after.events[len(before.events):]
    unmet, pos_err, rot_err = [], 0.0, 0.0
    if element.primitive in ("MOVE", "ROTATE", "PLACE"):
        for pos, aid in enumerate(element.agents):
            want = commanded_tcp(before, element, pos)
            got = after.agent(aid).tcp_matrix()
            pos_err = max(pos_err, float(np.linalg.norm(got[:3, 3] - want[:3, 3])))
            rot_err = max(rot_err, _rot_error(want[:3, :3], got[:3, :3]))
        if pos_err > cfg.pos_check_tol:
            unmet.append("position")
        if rot_err > cfg.rot_check_tol:
            unmet.append("orientation")
    if element.primitive == "GRASP":
        got = {e.payload.get("agent") for e in events if e.kind == "GraspAttached"}
        if not all(a in got for a in element.agents):
            unmet.append("attachment")
    if element.primitive in ("RELEASE", "PLACE"):
        if any(after.held_by(a) for a in element.agents):
            unmet.append("detachment")
        if any(e.kind == "Dropped" for e in events):
            unmet.append("no_drop")
    diag = {"pose_error_m": pos_err, "pose_error_rad": rot_err,
            "events_since": [e.kind for e in events], "unmet_conditions": unmet}
    return VerifyResult("Fail" if unmet else "Success", diag)


# ---------------------------------------------------------------------------
# Checkpoints


def grasp_reference(scene: SceneState, agent: int, oid: str, offset=(0.0, 0.0, 0.0)):
    """(target position, reference rotation) for a TCP straddling ``oid``.

    The offset is expressed in the object's grasp frame (along, across, up). The
    reference yaw is the object's grasp yaw shifted by whole periods towards the
    current finger yaw; objects without a preferred yaw keep the current one.
    """
    obj = scene.object(oid)
    tcp = scene.agent(agent).tcp_matrix()
    yaw, period = grasp_yaw(obj)
    cur = finger_yaw(tcp)
    if yaw is None:
        ref = cur
        frame = 0.0
    else:
        ref = yaw - period * math.floor((yaw - cur) / period + 0.5)
        frame = yaw
    c, s = math.cos(frame), math.sin(frame)
    off = np.array([c * offset[0] - s * offset[1], s * offset[0] + c * offset[1], offset[2]], dtype=float)
    rz = np.array([[math.cos(ref), -math.sin(ref), 0.0], [math.sin(ref), math.cos(ref), 0.0], [0.0, 0.0, 1.0]])
    return obj.pose.translation + off, rz @ DOWN


def _holding(scene: SceneState, pred: Mapping) -> tuple:
    obj = scene.object(pred["object"])
    contacts = set(obj.agents_in_contact())
    missing = [a for a in pred.get("agents", ()) if a not in contacts]
    lift = 0.0 if obj.lift_ref is None else float(obj.pose.translation[2]) - obj.lift_ref
    need = float(pred.get("min_lift", 0.0))
    unmet = [f"agent {a} not holding {obj.id}" for a in missing]
    if lift < need - 1e-9:
        unmet.append(f"{obj.id} lifted {lift:.3f} m < {need:.3f} m")
    return not unmet, {"lift": lift, "unmet": unmet}


def _eval_pred(pred, scene: SceneState, ckpt: PlanElement, cfg: InteractiveConfig) -> tuple:
    if not isinstance(pred, Mapping) or "type" not in pred:
        raise MalformedPredicate(f"checkpoint {ckpt.name!r} has no predicate")
    kind = pred["type"]
    try:
        if kind == "all":
            parts = [_eval_pred(q, scene, ckpt, cfg) for q in pred.get("of", ())]
            unmet = [u for _, r in parts for u in r.get("unmet", [])]
            return all(ok for ok, _ in parts), {"parts": [r for _, r in parts], "unmet": unmet}
        if kind == "tcp_near":
            agent = int(pred["agent"])
            target, ref = grasp_reference(scene, agent, pred["object"], pred.get("offset", (0.0, 0.0, 0.0)))
            tcp = scene.agent(agent).tcp_matrix()
            pos_err = float(np.linalg.norm(tcp[:3, 3] - target))
            rot_err = _rot_error(ref, tcp[:3, :3])
            unmet = []
            if pos_err > cfg.pos_check_tol:
                unmet.append(f"position error {pos_err:.4f} m > {cfg.pos_check_tol} m")
            if rot_err > cfg.rot_check_tol:
                unmet.append(f"orientation error {rot_err:.4f} rad > {cfg.rot_check_tol} rad")
            visible = None
            if cfg.check_visibility and ckpt.recommended_view:
                view = observe(scene, Camera.from_dict(ckpt.recommended_view))
                visible = pred["object"] in view.ids()
                if not visible:
                    unmet.append(f"{pred['object']} not visible from the recommended view")
            return not unmet, {"pos_error_m": pos_err, "rot_error_rad": rot_err, "visible": visible,
                               "error_vector": [float(v) for v in target - tcp[:3, 3]], "unmet": unmet}
        if kind == "holding":
            return _holding(scene, pred)
        if kind == "object_at":
            obj = scene.object(pred["object"])
            x, y = pred["xy"]
            d = math.hypot(obj.pose.translation[0] - x, obj.pose.translation[1] - y)
            ok = obj.attached_to is None and d <= float(pred.get("tol", 0.03))
            return ok, {"distance": d, "unmet": [] if ok else [f"{obj.id} is {d:.3f} m from target"]}
        if kind == "stacked":
            a, b = pred["objects"]
            ok = is_stacked(scene, a, b, pred.get("xy_tol", 0.015), pred.get("z_tol", 0.005))
            return ok, {"unmet": [] if ok else [f"{a} not resting on {b}"]}
        if kind == "inside":
            bad = [o for o in pred["objects"] if not is_inside(scene, o, pred["container"])]
            return not bad, {"unmet": [f"{o} not inside {pred['container']}" for o in bad]}
        ok = eval_predicate(pred, scene)
        return ok, {"unmet": [] if ok else [f"{kind} not satisfied"]}
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, MalformedPredicate):
            raise
        raise MalformedPredicate(f"checkpoint {ckpt.name!r}: {exc}") from None


def eval_checkpoint(ckpt: PlanElement, scene: SceneState, cfg: InteractiveConfig = DEFAULT_INTERACTIVE,
                    models=None) -> CheckpointResult:
    if not ckpt.is_checkpoint:
        raise ValueError("eval_checkpoint needs a checkpoint element")
    ok, report = _eval_pred(ckpt.predicate, scene, ckpt, cfg)
    report = dict(report, predicate=ckpt.predicate.get("type"), name=ckpt.name)
    return CheckpointResult(int(bool(ok)), report)


def detect_stuck(history: Sequence[Mapping], cfg: InteractiveConfig = DEFAULT_INTERACTIVE) -> bool:
    """True when some agent's last ``stuck_window`` actions each moved its TCP less than ``stuck_eps``."""
    per: dict = {}
    for h in history:
        per.setdefault(h["agent"], []).append(float(h["displacement"]))
    for moves in per.values():
        last = moves[-cfg.stuck_window:]
        if len(last) == cfg.stuck_window and all(m < cfg.stuck_eps for m in last):
            return True
    return False


# ---------------------------------------------------------------------------
# Episode loop


class _Abort(Exception):
    pass


class _Session:
    """Mutable state of one interactive episode."""

    def __init__(self, scene0, goal, planner, cfg, world, log):
        self.scene = scene0
        self.goal = goal
        self.planner = planner
        self.cfg = cfg
        self.world = world
        self.log = log
        self.initial = describe(scene0)
        self.traj = Trajectory(scene0)
        self.history: list = []
        self.revision = 0
        self.replans = 0
        self.corrections = 0
        self.calls = 0
        self.progress: dict = {"completed": 0}

    def request(self, kind: str, **extra) -> dict:
        req = base_request(self.goal, self.scene, "execution", kind, self.initial)
        req["plan_progress"] = dict(self.progress)
        req["stuck_hint"] = detect_stuck(self.history, self.cfg)
        req.update(extra)
        return req

    def call(self, method: str, req: dict):
        self.calls += 1
        return getattr(self.planner, method)(req)

    def budget(self):
        if self.scene.step - self.traj.initial.step > self.cfg.max_steps:
            raise BudgetExhausted(f"episode exceeded {self.cfg.max_steps} simulation steps")

    def execute(self, el: PlanElement, pos: float, origin: str) -> VerifyResult:
        self.budget()
        before = self.scene
        res = apply_primitive(before, el, cfg=self.world)
        self.scene = res.scene
        v = verify_outcome(el, before, self.scene, self.cfg)
        self._record(el, before, res.events, v, pos, origin)
        if el.primitive == "MOVE" and "position" in v.diagnostics["unmet_conditions"] \
                and v.diagnostics["pose_error_m"] <= self.cfg.drift_limit:
            fix = self._drift_fix(el, before)
            mid = self.scene
            res2 = apply_primitive(mid, fix, cfg=self.world)
            self.scene = res2.scene
            self._record(fix, mid, res2.events, verify_outcome(fix, mid, self.scene, self.cfg), pos, "drift")
            v = verify_outcome(el, before, self.scene, self.cfg)
        return v

    def _drift_fix(self, el: PlanElement, before: SceneState) -> PlanElement:
        deltas = []
        for pos, aid in enumerate(el.agents):
            want = commanded_tcp(before, el, pos)[:3, 3]
            deltas.append(want - self.scene.agent(aid).tcp().translation)
        cols = list(zip(*deltas))
        params = {k: (float(c[0]) if len(c) == 1 else [float(x) for x in c])
                  for k, c in zip(("delta_x", "delta_y", "delta_z"), cols)}
        return action(el.index, el.agent_id_field(), "MOVE", note="drift correction", **params)

    def _record(self, el, before, events, v, pos, origin):
        rec = StepRecord(self.traj.next_seq(), el, configs_of(before), configs_of(self.scene), events,
                         v.to_dict(), self.revision, pos, origin)
        self.traj.add_step(rec, self.scene)
        for aid in el.agents:
            d = float(np.linalg.norm(self.scene.tcp(aid).translation - before.tcp(aid).translation))
            self.history.append({"agent": aid, "displacement": d})
        if self.log is not None:
            self.log.append({"kind": "element", **rec.to_dict(), "verify": v.to_dict()})

    def checkpoint(self, el: PlanElement, pos: float) -> CheckpointResult:
        res = eval_checkpoint(el, self.scene, self.cfg)
        rec = CheckpointRecord(self.traj.next_seq(), el.name, res.phi, res.report, self.revision, pos, self.scene.step)
        self.traj.add_checkpoint(rec)
        if self.log is not None:
            self.log.append({"kind": "checkpoint", "seq": rec.seq, "name": el.name, "phi": res.phi,
                             "revision": self.revision, "report": res.report})
        return res


def _validated(plan: ExecutionPlan, scene: SceneState) -> ExecutionPlan:
    issues = validate_plan(plan, scene)
    if issues:
        raise ValidationFailed(issues)
    return plan


def run_interactive(scene0: SceneState, goal, planner, cameras: Optional[Sequence[Camera]] = None,
                    cfg: InteractiveConfig = DEFAULT_INTERACTIVE, task: Optional[TaskSpec] = None,
                    world: WorldConfig = DEFAULT_WORLD, log: Optional[list] = None) -> EpisodeResult:
    """Plan with view requests, then run the plan element by element.

    A failed checkpoint asks the planner for a correction (inserted before the
    checkpoint and re-evaluated) or a re-plan; a failed action asks for a
    re-parameterised version. Corrections per element and re-plans are bounded.
    """
    task = task or load_task(goal.id)
    cams = list(cameras) if cameras else task.default_cameras()
    if log is not None:
        log.append({"kind": "header", "schema": EPISODE_SCHEMA, "goal": goal.to_dict(), "task": task.id,
                    "initial_state": scene0.to_dict()})
    ps = planning_session(goal, scene0, cams, planner, cfg.J_max)
    s = _Session(scene0, goal, planner, cfg, world, log)
    s.calls = ps.planner_calls
    queue = list(ps.plan.elements)
    outcome, error = None, ""
    try:
        k = 0
        while k < len(queue):
            el = queue[k]
            s.progress = {"completed": k, "remaining": len(queue) - k, "revision": s.revision}
            new_plan = _run_element(s, el, float(k))
            if new_plan is not None:
                queue, k = list(new_plan.elements), 0
                continue
            k += 1
    except _Abort as exc:
        outcome, error = "Fail", str(exc)
    except BudgetExhausted as exc:
        outcome, error = "Aborted", str(exc)
    milestones = eval_milestones(task, s.scene)
    if outcome is None:
        outcome = "Success" if milestones[-1]["satisfied"] else "Fail"
    elif outcome == "Fail" and milestones[-1]["satisfied"]:
        outcome = "Success"
    result = EpisodeResult(outcome, s.traj, milestones, "interactive", s.replans, s.calls, 0,
                           ps.views_requested, s.corrections, plan=ps.plan, error=error)
    if log is not None:
        log.append({"kind": "result", **result.summary()})
    return result


def _replan(s: _Session, reason: str, failed: dict) -> ExecutionPlan:
    s.replans += 1
    if s.replans > s.cfg.max_replans:
        raise _Abort(f"re-plan budget exhausted ({reason})")
    req = s.request("replan", reason=reason, failed=failed)
    plan = s.call("replan", req)
    if not isinstance(plan, ExecutionPlan):
        raise MalformedResponse("replan did not return a plan", raw=repr(plan))
    s.revision += 1
    return _validated(plan, s.scene)


def _run_element(s: _Session, el: PlanElement, pos: float) -> Optional[ExecutionPlan]:
    """Run one plan element; returns a replacement plan when the planner re-planned."""
    if el.is_checkpoint:
        res = s.checkpoint(el, pos)
        tries = 0
        while not res.phi:
            if tries >= s.cfg.max_corrections_per_element:
                return _replan(s, f"checkpoint {el.name} still failing", {"checkpoint": el.name})
            tries += 1
            s.corrections += 1
            d = s.call("correct", s.request("correct", checkpoint=el.to_dict(), report=res.report))
            if isinstance(d, Replan):
                return _replan(s, d.reason or f"checkpoint {el.name} failed", {"checkpoint": el.name})
            for a in _actions(d):
                s.execute(a, pos - 0.5, "correction")
            res = s.checkpoint(el, pos)
        return None
    d = s.call("execution_turn", s.request("execute", element=el.to_dict()))
    if isinstance(d, Replan):
        return _replan(s, d.reason, {"element": el.to_dict()})
    v = None
    for a in _actions(d):
        v = s.execute(a, pos, "plan")
    tries = 0
    while v is not None and not v.ok:
        if tries >= s.cfg.max_corrections_per_element:
            return _replan(s, f"element {el.index} failed verification", {"element": el.to_dict()})
        tries += 1
        s.corrections += 1
        d = s.call("correct", s.request("correct", element=el.to_dict(), verify=v.to_dict()))
        if isinstance(d, Replan):
            return _replan(s, d.reason, {"element": el.to_dict()})
        for a in _actions(d):
            v = s.execute(a, pos, "correction")
    return None


def _actions(d) -> tuple:
    if not isinstance(d, NextActions):
        raise MalformedResponse(f"expected actions, got {type(d).__name__}", raw=repr(d))
    for a in d.actions:
        if not a.is_action:
            raise MalformedResponse("action block contains a checkpoint", raw=repr(d))
    return d.actions


def write_episode_log(records: list, path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(canonical_json(r) + "\n")


def read_episode_log(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
