"""Data-collection sessions: seeded trials, validation gate, storage."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .agents import (RecordingCodeGen, RecordingPlanner, ReplayCodeGen, ReplayPlanner, ScriptedCodeGen,
                     ScriptedPlanner, WireCodeGen, WirePlanner)
from .config import Config
from .errors import CodeGenUnavailable, CoEnvError, InvalidArgument, PlannerUnavailable
from .interactive import read_episode_log, run_interactive, write_episode_log
from .iterative import run_iterative
from .kb import make_record, store_record
from .tasks import TaskSpec, initial_scene, load_task, robot_models
from .transfer import validate_trajectory

MODES = ("interactive", "iterative")


@dataclass
class SessionStats:
    task: str
    mode: str
    episodes_attempted: int = 0
    episodes_collected: int = 0
    reset_count: int = 0
    planner_calls: int = 0
    wall_time: float = 0.0
    successes: int = 0
    rejected_unsafe: int = 0
    errors: list = field(default_factory=list)
    bytes_sent: int = 0
    bytes_received: int = 0

    def to_dict(self) -> dict:
        return {"task": self.task, "mode": self.mode, "episodes_attempted": self.episodes_attempted,
                "episodes_collected": self.episodes_collected, "reset_count": self.reset_count,
                "planner_calls": self.planner_calls, "wall_time": round(self.wall_time, 3),
                "successes": self.successes, "rejected_unsafe": self.rejected_unsafe, "errors": self.errors,
                "bytes_sent": self.bytes_sent, "bytes_received": self.bytes_received}


@dataclass
class SessionResult:
    stats: SessionStats
    records: list = field(default_factory=list)
    results: list = field(default_factory=list)
    service_error: bool = False


def _episode_name(task: str, seed: int, trial: int) -> str:
    return f"{task}_s{seed}_t{trial:03d}.ndjson"


def make_agent(source: str, task: TaskSpec, mode: str, seed: int, trial: int):
    """Planner (interactive) or code generator (iterative) for ``source``.

    ``scripted``; ``replay:DIR`` (episode logs written by an earlier run); ``wire:URL``
    or ``wire`` (COENV_PLANNER_URL).
    """
    kind, _, arg = source.partition(":")
    if kind == "scripted":
        return ScriptedPlanner(task) if mode == "interactive" else ScriptedCodeGen(task)
    if kind == "replay":
        path = Path(arg or ".")
        if path.is_dir():
            path = path / _episode_name(task.id, seed, trial)
        try:
            recs = read_episode_log(path)
        except FileNotFoundError:
            cls = PlannerUnavailable if mode == "interactive" else CodeGenUnavailable
            raise cls(f"no recorded episode at {path}") from None
        return ReplayPlanner(recs) if mode == "interactive" else ReplayCodeGen(recs)
    if kind == "wire":
        return WirePlanner(arg or None) if mode == "interactive" else WireCodeGen(arg or None)
    raise InvalidArgument(f"unknown planner source {source!r}")


def run_session(task, mode: str = "interactive", source: str = "scripted", trials: int = 10, seed: int = 0,
                db_path=None, out_dir=None, config: Optional[Config] = None) -> SessionResult:
    """Run ``trials`` seeded episodes and store the successful, collision-free ones."""
    if isinstance(trials, bool) or not isinstance(trials, int) or trials < 1:
        raise InvalidArgument("trials must be a positive integer")
    if mode not in MODES:
        raise InvalidArgument(f"mode must be one of {MODES}")
    if source.partition(":")[0] not in ("scripted", "replay", "wire"):
        raise InvalidArgument(f"unknown planner source {source!r}")
    spec = task if isinstance(task, TaskSpec) else load_task(task)
    cfg = config or Config()
    models = robot_models(spec)
    stats = SessionStats(spec.id, mode)
    out = SessionResult(stats)
    t0 = time.monotonic()
    for trial in range(trials):
        stats.episodes_attempted += 1
        scene0 = initial_scene(spec, seed, trial)
        log: list = []
        agent = None
        try:
            agent = make_agent(source, spec, mode, seed, trial)
            if mode == "interactive":
                rec = RecordingPlanner(agent, log)
                res = run_interactive(scene0, spec.goal, rec, cfg=cfg.interactive, task=spec, world=cfg.world,
                                      log=log)
            else:
                rec = RecordingCodeGen(agent, log)
                art = Path(out_dir) / "runs" / f"{spec.id}_s{seed}_t{trial:03d}" if out_dir else None
                res = run_iterative(scene0, spec.goal, rec, cfg.iterative, task=spec, world=cfg.world,
                                    out_dir=art, log=log)
        except (PlannerUnavailable, CodeGenUnavailable) as exc:
            stats.errors.append({"trial": trial, "error": type(exc).__name__, "message": str(exc)})
            out.service_error = True
            continue
        except CoEnvError as exc:
            stats.errors.append({"trial": trial, "error": type(exc).__name__, "message": str(exc)})
            continue
        finally:
            if out_dir is not None and log:
                d = Path(out_dir) / "episodes"
                d.mkdir(parents=True, exist_ok=True)
                write_episode_log(log, d / _episode_name(spec.id, seed, trial))
            for a in ("bytes_sent", "bytes_received"):
                setattr(stats, a, getattr(stats, a) + getattr(agent, a, 0))
        out.results.append(res)
        stats.reset_count += res.reset_count
        stats.planner_calls += res.planner_calls
        if not res.success:
            continue
        stats.successes += 1
        report = validate_trajectory(res.trajectory.primitive_records(), models, cfg.transfer.steps,
                                     cfg.transfer.margin)
        if not report.safe:
            stats.rejected_unsafe += 1
            continue
        record = make_record(res, scene0, spec.goal, {"source": source.partition(":")[0], "mode": mode,
                                                      "seed": seed, "trial": trial,
                                                      "planner_calls": res.planner_calls,
                                                      "reset_count": res.reset_count, "replans": res.replans})
        if db_path is not None:
            j = store_record(db_path, record)
            record = replace(record, id=j, created_at=j)
        out.records.append(record)
        stats.episodes_collected += 1
    stats.wall_time = time.monotonic() - t0
    return out

