"""Whole-program refinement: generate a script, run it from a fresh scene, analyse, repeat."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import ScriptError, ScriptTimeout
from .observe import describe
from .plan import TaskGoal, canonical_json
from .script import PlanScript, RunOutput, ScriptLimits, execute_script
from .tasks import TaskSpec, eval_milestones, load_task
from .trajectory import EpisodeResult, Trajectory
from .world import DEFAULT_WORLD, SceneState, WorldConfig

FAILURE_KINDS = ("CollisionEvent", "UnachievedSubgoal", "PoseError", "GraspMiss", "ReachLimit", "Timeout",
                 "ScriptError")

_HINTS = {
    "ReachLimit": "a target lies outside an arm's workspace; bring it closer by at least the reported gap",
    "GraspMiss": "the fingers did not straddle the object; re-read its position and grasp yaw before closing",
    "CollisionEvent": "two arms touched; separate their paths in time or space near the reported location",
    "PoseError": "an object fell when released; lower it onto its support before opening",
    "Timeout": "the run used its whole step budget; shorten or remove redundant motions",
    "ScriptError": "fix the statement at the reported index",
    "UnachievedSubgoal": "the listed milestone was not reached; check the state snapshots around it",
}


@dataclass(frozen=True)
class IterativeConfig:
    M_max: int = 8
    step_budget: int = 20000
    wall_budget: float = 30.0

    def __post_init__(self):
        if self.M_max < 1:
            raise ValueError("M_max must be at least 1")
        if self.step_budget < 1 or not self.wall_budget > 0:
            raise ValueError("budgets must be positive")

    @property
    def limits(self) -> ScriptLimits:
        return ScriptLimits(self.step_budget, self.wall_budget)


DEFAULT_ITERATIVE = IterativeConfig()


@dataclass
class Feedback:
    round: int
    failure_modes: list = field(default_factory=list)
    checkpoint_snapshots: list = field(default_factory=list)
    stdout: str = ""
    suggestions: str = ""

    def to_dict(self) -> dict:
        return {"round": self.round, "failure_modes": self.failure_modes,
                "checkpoint_snapshots": self.checkpoint_snapshots, "stdout": self.stdout,
                "suggestions": self.suggestions}


def _modes_from_events(events) -> list:
    out = []
    for e in events:
        p = e.payload
        if e.kind == "GraspMissed":
            out.append({"kind": "GraspMiss", "step": e.step, "agent": p.get("agent"), "object": p.get("object"),
                        "detail": p.get("reason", "")})
        elif e.kind == "ReachLimit":
            out.append({"kind": "ReachLimit", "step": e.step, "agent": p.get("agent"), "gap": float(p["gap"]),
                        "target": p.get("target"), "actual": p.get("actual")})
        elif e.kind == "InterAgentContact" and p.get("distance", 0.0) < 0:
            out.append({"kind": "CollisionEvent", "step": e.step, "agents": p.get("agents"),
                        "location": p.get("location"), "distance": p.get("distance")})
        elif e.kind == "Dropped":
            out.append({"kind": "PoseError", "step": e.step, "agent": p.get("agent"), "object": p.get("object"),
                        "detail": p.get("reason", "")})
    return out


def analyze_run(run: RunOutput, goal: TaskGoal, task: Optional[TaskSpec] = None, round_: int = 1):
    """(achieved, Feedback) for one script run; the feedback is empty when achieved."""
    task = task or load_task(goal.id)
    flags = eval_milestones(task, run.final)
    achieved = flags[-1]["satisfied"] and run.error is None
    snaps = [{"name": s["name"], "step": s["step"], "state": s["state"]} for s in run.checkpoints]
    if achieved:
        return True, Feedback(round_, [], snaps, run.stdout, "")
    start = len(run.trajectory.initial.events)
    modes = _modes_from_events(run.final.events[start:])
    if isinstance(run.error, ScriptTimeout):
        modes.append({"kind": "Timeout", "detail": str(run.error)})
    elif isinstance(run.error, ScriptError):
        modes.append({"kind": "ScriptError", "index": run.error.index, "detail": run.error.cause})
    missing = next((f["milestone_id"] for f in flags if not f["satisfied"]), None)
    if missing is not None:
        modes.append({"kind": "UnachievedSubgoal", "milestone": missing})
    seen = []
    for m in modes:
        if m["kind"] not in seen:
            seen.append(m["kind"])
    hints = "\n".join(f"- {k}: {_HINTS[k]}" for k in seen)
    return False, Feedback(round_, modes, snaps, run.stdout, hints)


def _safe_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", name) or "checkpoint"


def write_artifacts(out_dir, run: RunOutput, feedback: Feedback, achieved: bool) -> None:
    """Per-round directory: summary.json, execution_stdout.txt, checkpoints/<name>/states.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"round": feedback.round, "achieved": achieved,
               "error": None if run.error is None else {"type": type(run.error).__name__, "message": str(run.error)},
               "final_state": describe(run.final),
               "checkpoints": [{"name": s["name"], "step": s["step"]} for s in run.checkpoints],
               "failure_modes": feedback.failure_modes}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (out / "execution_stdout.txt").write_text(run.stdout)
    for s in run.checkpoints:
        d = out / "checkpoints" / _safe_name(s["name"])
        d.mkdir(parents=True, exist_ok=True)
        (d / "states.json").write_text(json.dumps(s, indent=2, sort_keys=True) + "\n")


def run_round(script: PlanScript, scene0: SceneState, cfg: IterativeConfig = DEFAULT_ITERATIVE,
              world: WorldConfig = DEFAULT_WORLD) -> RunOutput:
    """Execute one script from ``scene0``; statically invalid scripts yield an empty run with the error."""
    try:
        return execute_script(script, scene0, limits=cfg.limits, world=world)
    except ScriptError as exc:
        return RunOutput(Trajectory(scene0), [], f"SCRIPT_ERROR {exc}\n", exc)


def run_iterative(scene0: SceneState, goal: TaskGoal, codegen, cfg: IterativeConfig = DEFAULT_ITERATIVE,
                  task: Optional[TaskSpec] = None, world: WorldConfig = DEFAULT_WORLD,
                  out_dir=None, log: Optional[list] = None) -> EpisodeResult:
    """Up to M_max rounds, each from a fresh copy of ``scene0``; only Feedback crosses rounds."""
    task = task or load_task(goal.id)
    initial = describe(scene0)
    if log is not None:
        log.append({"kind": "header", "schema": "coenv-episode/1", "goal": goal.to_dict(), "task": task.id,
                    "mode": "iterative", "initial_state": scene0.to_dict()})
    feedback: Optional[Feedback] = None
    history: list = []
    run = None
    achieved = False
    m = 0
    for m in range(1, cfg.M_max + 1):
        req = {"phase": "iterative", "goal": goal.to_dict(), "initial_state": initial, "round": m,
               "feedback": feedback.to_dict() if feedback is not None else None}
        script = codegen.generate(req)
        run = run_round(script, scene0, cfg, world)
        achieved, feedback = analyze_run(run, goal, task, m)
        if out_dir is not None:
            write_artifacts(Path(out_dir) / f"round_{m:02d}", run, feedback, achieved)
        if log is not None:
            log.append({"kind": "round", "round": m, "script": script.to_dict(), "achieved": achieved,
                        "feedback": {k: v for k, v in feedback.to_dict().items() if k != "checkpoint_snapshots"},
                        "elements": [r.to_dict() for r in run.trajectory.records]})
        if achieved:
            break
        history.append(feedback)
    milestones = eval_milestones(task, run.final)
    outcome = "Success" if achieved else "Fail"
    err = "" if run.error is None else f"{type(run.error).__name__}: {run.error}"
    result = EpisodeResult(outcome, run.trajectory, milestones, "iterative", 0, m, m, rounds=m,
                           feedback=history, error=err)
    if log is not None:
        log.append({"kind": "result", **result.summary()})
    return result


def script_json(script: PlanScript) -> str:
    return canonical_json(script.to_dict())
