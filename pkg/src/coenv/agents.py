"""Planner and code-generation agents.

Every planner method takes a request dict (the wire payload) and returns a decoded
object: a PlannerDecision, a list of SubGoal or an ExecutionPlan. Text-based agents
(replay, wire) go through the same tagged-response codec that live runs log, so a
recorded episode replays the exact objects the original run saw.
"""

from __future__ import annotations

import json
import math
import os
import urllib.error
import urllib.request
from dataclasses import replace
from importlib import resources
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import CodeGenUnavailable, MalformedResponse, PlannerUnavailable
from .observe import Camera
from .plan import (ExecutionPlan, NextActions, PlanComplete, PlanElement, Replan, RequestView, SubGoal,
                   action, canonical_json, format_decision, parse_decision)
from .recipes import StateView, compile_step, predict, realize, recipe_for, subgoals_for, yaw_branch
from .script import PlanScript
from .tasks import TaskSpec, load_task

PLANNER_SCHEMA = "coenv-planner/1"
CODEGEN_SCHEMA = "coenv-codegen/1"
CALL_KINDS = ("turn", "decompose", "assign", "execute", "correct", "replan")
_METHOD = {"turn": "planning_turn", "decompose": "decompose", "assign": "assign",
           "execute": "execution_turn", "correct": "correct", "replan": "replan"}


# ---------------------------------------------------------------------------
# Text codec


def encode_response(kind: str, obj) -> str:
    if kind in ("turn", "execute", "correct"):
        return format_decision(obj)
    if kind == "decompose":
        return "<subgoals>\n" + canonical_json([s.to_dict() for s in obj]) + "\n</subgoals>"
    if kind in ("assign", "replan"):
        if isinstance(obj, Replan):
            return format_decision(obj)
        return "<execution_plan>\n" + obj.serialize() + "\n</execution_plan>"
    raise ValueError(f"unknown call kind {kind!r}")


def _block(text: str, tag: str) -> Optional[str]:
    start, end = text.find(f"<{tag}>"), text.rfind(f"</{tag}>")
    if start < 0 or end < start:
        return None
    return text[start + len(tag) + 2:end].strip()


def decode_response(kind: str, text: str):
    if not isinstance(text, str):
        raise MalformedResponse("response is not text", raw=repr(text))
    if kind in ("turn", "execute", "correct"):
        return parse_decision(text)
    try:
        if kind == "decompose":
            body = _block(text, "subgoals")
            if body is None:
                raise ValueError("no <subgoals> block")
            items = json.loads(body)
            return [SubGoal(int(d["index"]), str(d["description"])) for d in items]
        if kind in ("assign", "replan"):
            body = _block(text, "execution_plan")
            if body is None:
                if kind == "replan" and "<replan>" in text:
                    return parse_decision(text)
                raise ValueError("no <execution_plan> block")
            return ExecutionPlan.parse(body)
    except (ValueError, KeyError, TypeError) as exc:
        raise MalformedResponse(f"could not parse {kind} response: {exc}", raw=text) from exc
    raise ValueError(f"unknown call kind {kind!r}")


def prompt_text(name: str) -> str:
    """Instruction text bundled with the package (sent along with wire requests)."""
    try:
        return resources.files("coenv").joinpath("prompts", f"{name}.txt").read_text()
    except FileNotFoundError:
        return ""


# ---------------------------------------------------------------------------
# Planner base classes


class PlannerAgent:
    """Interface. Subclasses override the six calls."""

    def planning_turn(self, req: dict):
        raise NotImplementedError

    def decompose(self, req: dict) -> list:
        raise NotImplementedError

    def assign(self, req: dict) -> ExecutionPlan:
        raise NotImplementedError

    def execution_turn(self, req: dict):
        raise NotImplementedError

    def correct(self, req: dict):
        raise NotImplementedError

    def replan(self, req: dict):
        raise NotImplementedError


class TextPlanner(PlannerAgent):
    """A planner whose answers arrive as text; ``respond`` supplies the raw text."""

    def respond(self, kind: str, req: dict) -> str:
        raise NotImplementedError

    def _call(self, kind: str, req: dict):
        return decode_response(kind, self.respond(kind, req))

    def planning_turn(self, req):
        return self._call("turn", req)

    def decompose(self, req):
        return self._call("decompose", req)

    def assign(self, req):
        return self._call("assign", req)

    def execution_turn(self, req):
        return self._call("execute", req)

    def correct(self, req):
        return self._call("correct", req)

    def replan(self, req):
        return self._call("replan", req)


class ReplayPlanner(TextPlanner):
    """Answers from the planner records of an episode log, in order."""

    def __init__(self, records: Sequence[Mapping]):
        self.queue = [r for r in records if r.get("kind") == "planner"]
        self.pos = 0

    def respond(self, kind, req):
        if self.pos >= len(self.queue):
            raise PlannerUnavailable("replay log exhausted")
        rec = self.queue[self.pos]
        self.pos += 1
        if rec["call"] != kind:
            raise PlannerUnavailable(f"replay diverged: log has {rec['call']!r}, run asked for {kind!r}")
        return rec["response"]


def _post(url: str, payload: dict, timeout: float) -> bytes:
    data = json.dumps(payload, allow_nan=False).encode()
    req = urllib.request.Request(url, data=data, headers={"Content-Type": "application/json"}, method="POST")
    with urllib.request.urlopen(req, timeout=timeout) as resp:
        return resp.read()


class WirePlanner(TextPlanner):
    """Forwards each request to an HTTP service speaking the planner protocol.

    The reply body is either the tagged text itself or JSON ``{"text": ...}``.
    ``bytes_sent``/``bytes_received`` approximate token usage.
    """

    def __init__(self, url: Optional[str] = None, timeout: float = 60.0):
        self.url = url or os.environ.get("COENV_PLANNER_URL", "")
        if not self.url:
            raise PlannerUnavailable("no planner URL given and COENV_PLANNER_URL is unset")
        self.timeout = timeout
        self.bytes_sent = 0
        self.bytes_received = 0

    def respond(self, kind, req):
        prompt = "execution" if req.get("phase") == "execution" else "planning"
        payload = dict(req, schema=PLANNER_SCHEMA, call=kind, instructions=prompt_text(prompt))
        self.bytes_sent += len(json.dumps(payload))
        try:
            body = _post(self.url, payload, self.timeout)
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise PlannerUnavailable(f"planner service at {self.url}: {exc}") from exc
        self.bytes_received += len(body)
        text = body.decode("utf-8", errors="replace")
        if text.lstrip().startswith("{"):
            try:
                text = json.loads(text).get("text", text)
            except (ValueError, AttributeError):
                pass
        return text


class RecordingPlanner(PlannerAgent):
    """Wraps a planner: counts calls, logs each answer as text and returns the decoded text.

    Returning the decoded form keeps live runs and their replays on identical inputs.
    """

    def __init__(self, inner: PlannerAgent, log: Optional[list] = None):
        self.inner = inner
        self.log = log if log is not None else []
        self.calls = 0

    def _wrap(self, kind, req):
        self.calls += 1
        if isinstance(self.inner, TextPlanner):
            text = self.inner.respond(kind, req)
        else:
            text = encode_response(kind, getattr(self.inner, _METHOD[kind])(req))
        self.log.append({"kind": "planner", "call": kind, "response": text})
        return decode_response(kind, text)

    def planning_turn(self, req):
        return self._wrap("turn", req)

    def decompose(self, req):
        return self._wrap("decompose", req)

    def assign(self, req):
        return self._wrap("assign", req)

    def execution_turn(self, req):
        return self._wrap("execute", req)

    def correct(self, req):
        return self._wrap("correct", req)

    def replan(self, req):
        return self._wrap("replan", req)


# ---------------------------------------------------------------------------
# Scripted planner


def side_view(desc: Mapping, agent: int, oid: str, initial: Optional[Mapping] = None,
              pitch: float = 0.35, radius: float = 1.0) -> dict:
    """Low camera on ``oid`` looking across the finger plane of ``agent``.

    The fingers sit left and right in the image; of the two such headings the one
    on the far side from the arm's base is used, so the arm stays behind the object.
    """
    o = desc["objects"][oid]
    fy = float(desc["robots"][agent]["finger_yaw"])
    base = (initial or desc)["robots"][agent]["base_position"]
    arm = np.array(base[:2], dtype=float) - np.array(o["position"][:2], dtype=float)
    yaw = fy + 0.5 * math.pi
    if math.cos(yaw) * arm[0] + math.sin(yaw) * arm[1] > 0:
        yaw -= math.pi
    yaw = math.atan2(math.sin(yaw), math.cos(yaw))
    return Camera(round(yaw, 6), pitch, radius, tuple(float(v) for v in o["position"])).to_dict()


class ScriptedPlanner(PlannerAgent):
    """Deterministic planner driven by the task recipe.

    ``views`` are camera dicts requested one per planning turn before completing.
    """

    def __init__(self, task, views: Sequence[Mapping] = ()):
        self.task = task if isinstance(task, TaskSpec) else load_task(task)
        self.steps = recipe_for(self.task)
        self.views = [dict(v) for v in views]

    # planning ------------------------------------------------------------
    def planning_turn(self, req):
        done = int(req.get("plan_progress", {}).get("views_requested", 0))
        if done < len(self.views):
            return RequestView(self.views[done], reason=f"view {done + 1} of {len(self.views)}")
        unresolved = (req.get("structured_state") or {}).get("unresolved", [])
        note = f"objects seen: {sorted((req.get('structured_state') or {}).get('objects', {}))}"
        if unresolved:
            note += f"; not seen: {unresolved}"
        return PlanComplete(key_observations=note)

    def decompose(self, req):
        return subgoals_for(self.task)

    def _bias(self, k: int) -> Optional[Sequence[float]]:
        return None

    def build(self, desc: Mapping, initial: Mapping, start: int = 0, prefix=()) -> ExecutionPlan:
        """Plan from recipe step ``start`` onwards, predicting each element's effect."""
        elements = list(prefix)
        for el in prefix:
            desc = predict(desc, el)
        for k in range(start, len(self.steps)):
            step = self.steps[k]
            view = StateView(desc, initial)
            el = realize(step, view, len(elements) + 1, step.get("sub"), self._bias(k))
            if el.is_checkpoint:
                pred = step["predicate"]
                if pred.get("type") == "tcp_near":
                    el = replace(el, recommended_view=side_view(desc, pred["agent"], pred["object"], initial))
            else:
                el = replace(el, target=dict(el.target, step_index=k))
            elements.append(el)
            desc = predict(desc, el)
        return ExecutionPlan(self.task.id, tuple(elements), subgoals=tuple(subgoals_for(self.task)),
                             provenance={"planner": type(self).__name__})

    def assign(self, req):
        return self.build(req["initial_state"], req["initial_state"])

    # execution -----------------------------------------------------------
    def _live(self, el: PlanElement, req: Mapping) -> PlanElement:
        k = (el.target or {}).get("step_index")
        if k is None or not 0 <= k < len(self.steps):
            return el
        step = self.steps[k]
        view = StateView(req["structured_state"], req["initial_state"])
        new = realize(step, view, el.index, el.subgoal, self._bias(k))
        return replace(new, target=dict(new.target, step_index=k))

    def execution_turn(self, req):
        el = PlanElement.from_dict(req["element"])
        return NextActions((self._live(el, req),), (True,))

    def correct(self, req):
        state = req["structured_state"]
        if "checkpoint" in req:
            ck = req["checkpoint"]
            pred = ck.get("predicate") or {}
            rep = req.get("report") or {}
            if pred.get("type") != "tcp_near" or rep.get("visible") is False:
                return Replan(f"checkpoint {ck.get('name')} not met: {rep.get('unmet')}")
            agent = int(pred["agent"])
            acts = []
            if rep.get("rot_error_rad", 0.0) > 0.02:
                o = state["objects"].get(pred["object"], {})
                cur = float(state["robots"][agent]["finger_yaw"])
                target = o.get("grasp_yaw")
                if target is not None:
                    dy = target - cur + yaw_branch(target, cur, o["grasp_period"])
                    acts.append(action(1, agent, "ROTATE", delta_yaw=dy, note="orientation fix"))
            ev = rep.get("error_vector")
            if ev is not None and rep.get("pos_error_m", 0.0) > 0.002:
                acts.append(action(len(acts) + 1, agent, "MOVE", delta_x=ev[0], delta_y=ev[1], delta_z=ev[2],
                                   note="position fix"))
            if not acts:
                return Replan(f"checkpoint {ck.get('name')} fails without a pose error")
            return NextActions(tuple(acts))
        el = PlanElement.from_dict(req["element"])
        unmet = (req.get("verify") or {}).get("diagnostics", {}).get("unmet_conditions", [])
        step = self.steps[(el.target or {}).get("step_index", 0)] if el.target else {}
        if step.get("kind") in ("approach", "carry", "retreat", "align") and set(unmet) <= {"position", "orientation"}:
            return NextActions((self._live(el, req),))
        return Replan(f"element {el.index} failed: {unmet}")

    def _restart_index(self, req) -> int:
        failed = req.get("failed") or {}
        k = None
        if "checkpoint" in failed:
            names = [s.get("name") for s in self.steps]
            if failed["checkpoint"] in names:
                k = names.index(failed["checkpoint"])
        elif "element" in failed:
            k = (failed["element"].get("target") or {}).get("step_index")
        if k is None:
            return 0
        while k > 0 and self.steps[k]["kind"] not in ("approach", "align"):
            k -= 1
        while k > 0 and self.steps[k - 1]["kind"] in ("approach", "align"):
            k -= 1
        return k

    def replan(self, req):
        k = self._restart_index(req)
        state, initial = req["structured_state"], req["initial_state"]
        agents = sorted({a for s in self.steps[k:k + 3] for a in s.get("agents", ())})
        # an arm that closed on nothing opens before trying again
        prefix = [action(i + 1, a, "RELEASE", note="reopen before retry")
                  for i, a in enumerate(a for a in agents
                                        if state["robots"][a]["gripper"] < 1.0 and not state["robots"][a]["holding"])]
        plan = self.build(state, initial, k, prefix)
        return replace(plan, provenance=dict(plan.provenance, restart_step=k))


class FaultyPlanner(ScriptedPlanner):
    """Scripted planner that offsets its first final approach once and never self-corrects."""

    def __init__(self, task, views=(), bias=(0.05, 0.0, 0.0)):
        super().__init__(task, views)
        self.bias = tuple(bias)
        finals = [k for k, s in enumerate(self.steps)
                  if s["kind"] == "approach" and k > 0 and self.steps[k - 1]["kind"] == "approach"]
        self.fault_step = finals[0] if finals else None
        self.faults_left = 1

    def _bias(self, k):
        if k == self.fault_step and self.faults_left > 0:
            return self.bias
        return None

    def execution_turn(self, req):
        out = super().execution_turn(req)
        k = (out.actions[0].target or {}).get("step_index")
        if k == self.fault_step and self.faults_left > 0:
            self.faults_left -= 1
        return out

    def correct(self, req):
        return Replan("faulty planner gives up on corrections")


# ---------------------------------------------------------------------------
# Code generation agents


def encode_script(script: PlanScript) -> str:
    return "<script>\n" + canonical_json(script.to_dict()) + "\n</script>"


def decode_script(text: str) -> PlanScript:
    body = _block(text, "script") if isinstance(text, str) else None
    if body is None:
        raise MalformedResponse("no <script> block in code generator response", raw=str(text))
    try:
        return PlanScript.from_dict(json.loads(body))
    except (ValueError, KeyError, TypeError) as exc:
        raise MalformedResponse(f"bad script: {exc}", raw=text) from exc


class CodeGenAgent:
    def generate(self, req: dict) -> PlanScript:
        raise NotImplementedError


def recipe_script(task: TaskSpec, initial: Mapping, round_: int = 1, params: Optional[Mapping] = None) -> PlanScript:
    if params is not None:
        task = replace(task, params=dict(task.params, **params))
    view0 = StateView(initial)
    st: list = []
    for n, step in enumerate(recipe_for(task), start=1):
        st.extend(compile_step(step, view0, n))
    return PlanScript(tuple(st), round_)


class ScriptedCodeGen(CodeGenAgent):
    """Compiles the task recipe into one script; ignores feedback."""

    def __init__(self, task):
        self.task = task if isinstance(task, TaskSpec) else load_task(task)

    def generate(self, req):
        return recipe_script(self.task, req["initial_state"], int(req.get("round", 1)))


class UnderReachCodeGen(CodeGenAgent):
    """Two-round fixture for cube stacking.

    Round 1 puts the stack at ``far_xy``, outside the first arm's reach. Later rounds
    move the stack towards the base midpoint by the largest ReachLimit gap reported,
    plus ``margin``.
    """

    def __init__(self, task="cube_stacking", far_xy=(0.0, 0.72), margin=0.08):
        self.task = task if isinstance(task, TaskSpec) else load_task(task)
        self.xy = np.array(far_xy, dtype=float)
        self.margin = margin

    def generate(self, req):
        fb = req.get("feedback")
        if fb:
            gaps = [m.get("gap", 0.0) for m in fb.get("failure_modes", []) if m.get("kind") == "ReachLimit"]
            if gaps:
                mid = np.mean([r["tcp_position"][:2] for r in req["initial_state"]["robots"]], axis=0)
                d = mid - self.xy
                n = float(np.linalg.norm(d))
                if n > 0:
                    self.xy = self.xy + d / n * min(n, max(gaps) + self.margin)
        return recipe_script(self.task, req["initial_state"], int(req.get("round", 1)),
                             {"stack_xy": [float(v) for v in self.xy]})


class AlwaysFailCodeGen(CodeGenAgent):
    """Emits a script that never achieves anything (a single print)."""

    def generate(self, req):
        return PlanScript(({"op": "print", "expr": "0"},), int(req.get("round", 1)))


class RecordingCodeGen(CodeGenAgent):
    def __init__(self, inner: CodeGenAgent, log: Optional[list] = None):
        self.inner = inner
        self.log = log if log is not None else []
        self.calls = 0

    def generate(self, req):
        self.calls += 1
        text = self.inner.respond(req) if isinstance(self.inner, WireCodeGen) else encode_script(self.inner.generate(req))
        self.log.append({"kind": "codegen", "round": req.get("round"), "response": text})
        return decode_script(text)


class ReplayCodeGen(CodeGenAgent):
    def __init__(self, records: Sequence[Mapping]):
        self.queue = [r for r in records if r.get("kind") == "codegen"]
        self.pos = 0

    def generate(self, req):
        if self.pos >= len(self.queue):
            raise CodeGenUnavailable("replay log exhausted")
        text = self.queue[self.pos]["response"]
        self.pos += 1
        return decode_script(text)


class WireCodeGen(CodeGenAgent):
    def __init__(self, url: Optional[str] = None, timeout: float = 120.0):
        self.url = url or os.environ.get("COENV_PLANNER_URL", "")
        if not self.url:
            raise CodeGenUnavailable("no code generator URL given and COENV_PLANNER_URL is unset")
        self.timeout = timeout
        self.bytes_sent = 0
        self.bytes_received = 0

    def respond(self, req) -> str:
        payload = dict(req, schema=CODEGEN_SCHEMA, instructions=prompt_text("codegen"))
        self.bytes_sent += len(json.dumps(payload))
        try:
            body = _post(self.url, payload, self.timeout)
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise CodeGenUnavailable(f"code generator at {self.url}: {exc}") from exc
        self.bytes_received += len(body)
        text = body.decode("utf-8", errors="replace")
        if text.lstrip().startswith("{") and "<script>" not in text:
            try:
                text = json.loads(text).get("text", text)
            except (ValueError, AttributeError):
                pass
        return text

    def generate(self, req):
        return decode_script(self.respond(req))
