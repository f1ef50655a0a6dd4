"""Command-line entry point: ``coenv <command> ...``.

Exit codes: 0 success, 1 task failure (or unsafe / mismatching result), 2 usage
error, 3 external planner service unavailable.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from .agents import ReplayCodeGen, ReplayPlanner
from .config import Config, load_config
from .errors import CodeGenUnavailable, CoEnvError, InvalidArgument, PlannerUnavailable, UnknownTask
from .fusion import fuse_object, group_views, load_extrinsics, load_views
from .interactive import read_episode_log, run_interactive
from .iterative import run_iterative
from .kb import KB_SCHEMA, KnowledgeRecord, load_records, query_demonstrations, replay_record
from .kinematics import JointConfig
from .plan import TaskGoal
from .session import run_session
from .tasks import load_task, robot_models, task_names
from .transfer import PrimitiveRecord, export_waypoints, validate_trajectory, waypoints_document
from .world import SceneState

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_SERVICE = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _finite(obj):
    # infinite distances (single-arm elements) print as null
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def _dump(obj, fh=None) -> None:
    fh = fh or sys.stdout
    fh.write(json.dumps(_finite(obj), indent=2, sort_keys=True) + "\n")


def _config(args) -> Config:
    return load_config(args.config) if getattr(args, "config", None) else Config()


# ---------------------------------------------------------------------------
# commands


def cmd_run(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    db = Path(args.kb) if args.kb else out / "kb.ndjson"
    source = args.planner
    if source == "wire":
        source = "wire:"
    res = run_session(args.task, args.mode, source, args.trials, args.seed, db_path=db, out_dir=out, config=cfg)
    stats = res.stats.to_dict()
    out.mkdir(parents=True, exist_ok=True)
    (out / "session.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    _dump(stats)
    if res.service_error:
        return EXIT_SERVICE
    return EXIT_OK if stats["successes"] == stats["episodes_attempted"] else EXIT_FAIL


def cmd_replay(args) -> int:
    try:
        recs = read_episode_log(args.episode)
    except FileNotFoundError:
        raise UsageError(f"{args.episode}: no such file") from None
    except ValueError as exc:
        raise UsageError(f"{args.episode}: not newline-delimited JSON ({exc})") from None
    if not recs:
        raise UsageError(f"{args.episode} is empty")
    if recs[0].get("schema") == KB_SCHEMA:
        rows = []
        for r in load_records(args.episode):
            flags, _ = replay_record(r)
            rows.append({"id": r.id, "stored": r.milestones, "replayed": flags, "match": flags == r.milestones})
        _dump({"records": rows})
        return EXIT_OK if all(r["match"] for r in rows) else EXIT_FAIL
    head = recs[0]
    if head.get("kind") != "header":
        raise UsageError("episode log has no header record")
    stored = next((r for r in reversed(recs) if r.get("kind") == "result"), None)
    task = load_task(head["task"])
    scene0 = SceneState.from_dict(head["initial_state"])
    goal = TaskGoal.from_dict(head["goal"])
    cfg = _config(args)
    if head.get("mode") == "iterative":
        res = run_iterative(scene0, goal, ReplayCodeGen(recs), cfg.iterative, task=task, world=cfg.world)
    else:
        res = run_interactive(scene0, goal, ReplayPlanner(recs), cfg=cfg.interactive, task=task, world=cfg.world)
    match = stored is not None and stored.get("milestones") == res.milestones and stored.get("outcome") == res.outcome
    _dump({"outcome": res.outcome, "milestones": res.milestones,
           "stored_outcome": stored.get("outcome") if stored else None, "match": match})
    return EXIT_OK if match else EXIT_FAIL


def _records_and_models(path):
    """(list of PrimitiveRecord lists, models) from a KB file, an episode log or a trajectory JSON."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
        lines = [doc]
    except ValueError:
        lines = [json.loads(x) for x in text.splitlines() if x.strip()]
    first = lines[0]
    if first.get("schema") == KB_SCHEMA:
        out = []
        for d in lines:
            rec = KnowledgeRecord.from_dict(d)
            models = [a.model for a in SceneState.from_dict(rec.initial_state).agents]
            out.append((f"record {rec.id}", rec.primitive_records(), models))
        return out
    if first.get("kind") == "header":
        models = [a.model for a in SceneState.from_dict(first["initial_state"]).agents]
        els = [d for d in lines if d.get("kind") == "element"]
        if not els:
            for d in lines:
                if d.get("kind") == "round" and d.get("achieved"):
                    els = d["elements"]
        prims = [PrimitiveRecord(l, {int(k): JointConfig.from_dict(v) for k, v in e["start"].items()},
                                 {int(k): JointConfig.from_dict(v) for k, v in e["end"].items()})
                 for l, e in enumerate(els, start=1)]
        return [("episode", prims, models)]
    if "records" in first:
        if "task" in first:
            models = robot_models(load_task(first["task"]))
        elif "initial_state" in first:
            models = [a.model for a in SceneState.from_dict(first["initial_state"]).agents]
        else:
            raise UsageError("trajectory file needs a 'task' or 'initial_state' entry for the robot models")
        return [("trajectory", [PrimitiveRecord.from_dict(r) for r in first["records"]], models)]
    raise UsageError("unrecognised trajectory file")


def cmd_validate(args) -> int:
    try:
        items = _records_and_models(args.trajectory)
    except FileNotFoundError:
        raise UsageError(f"{args.trajectory}: no such file") from None
    rows, ok = [], True
    for label, prims, models in items:
        rep = validate_trajectory(prims, models, args.steps, args.margin)
        ok = ok and rep.safe
        rows.append({"source": label, "safe": rep.safe, "first_violation": rep.first_violation,
                     "verdicts": rep.verdicts})
    _dump({"steps": args.steps, "margin": args.margin, "results": rows})
    return EXIT_OK if ok else EXIT_FAIL


def cmd_export(args) -> int:
    if args.format != "waypoints":
        raise UsageError(f"unsupported export format {args.format!r}")
    recs = query_demonstrations(args.kb, args.goal, 1)
    if not recs:
        sys.stderr.write(f"no successful demonstration for {args.goal!r} in {args.kb}\n")
        return EXIT_FAIL
    rec = recs[0]
    models = [a.model for a in SceneState.from_dict(rec.initial_state).agents]
    rep = validate_trajectory(rec.primitive_records(), models, args.steps, args.margin)
    meta = {"record_id": rec.id, "goal": args.goal, "steps": args.steps, "margin": args.margin}
    if args.out:
        export_waypoints(rep, args.out, meta)
    else:
        sys.stdout.write(json.dumps(waypoints_document(rep, meta), sort_keys=True, allow_nan=False) + "\n")
    return EXIT_OK if rep.safe else EXIT_FAIL


def cmd_fuse(args) -> int:
    try:
        views = load_views(args.views)
        extr = load_extrinsics(args.extrinsics)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"malformed input: {exc}") from None
    out = {}
    for oid, vs in sorted(group_views(views).items()):
        f = fuse_object(vs, extr, weighted=args.weighted)
        out[oid] = {"pose": f.pose.to_dict(), "views_used": f.views_used, **f.spread}
    _dump({"objects": out})
    return EXIT_OK


def cmd_tasks(args) -> int:
    for name in task_names():
        t = load_task(name)
        print(f"{name}\t{len(t.robots)} arms\t{t.description}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coenv", description="Multi-arm manipulation planning and data collection.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a data-collection session")
    r.add_argument("--task", required=True)
    r.add_argument("--mode", choices=("interactive", "iterative"), default="interactive")
    r.add_argument("--planner", default="scripted", help="scripted | replay:DIR | wire[:URL]")
    r.add_argument("--trials", type=int, default=1)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", default="coenv_out")
    r.add_argument("--kb", default=None, help="knowledge base file (default OUT/kb.ndjson)")
    r.add_argument("--config", default=None)
    r.set_defaults(func=cmd_run)

    rp = sub.add_parser("replay", help="re-run an episode log (or check a knowledge base)")
    rp.add_argument("--episode", required=True)
    rp.add_argument("--config", default=None)
    rp.set_defaults(func=cmd_replay)

    v = sub.add_parser("validate", help="swept-volume check of a trajectory")
    v.add_argument("--trajectory", required=True)
    v.add_argument("--steps", type=int, default=20)
    v.add_argument("--margin", type=float, default=0.01)
    v.set_defaults(func=cmd_validate)

    e = sub.add_parser("export", help="export the newest demonstration for a goal")
    e.add_argument("--kb", required=True)
    e.add_argument("--goal", required=True)
    e.add_argument("--format", default="waypoints")
    e.add_argument("--steps", type=int, default=20)
    e.add_argument("--margin", type=float, default=0.01)
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_export)

    f = sub.add_parser("fuse", help="fuse per-view pose estimates into world poses")
    f.add_argument("--views", required=True)
    f.add_argument("--extrinsics", required=True)
    f.add_argument("--weighted", action="store_true")
    f.set_defaults(func=cmd_fuse)

    t = sub.add_parser("tasks", help="task catalogue")
    t.add_argument("action", choices=("list",))
    t.set_defaults(func=cmd_tasks)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except UnknownTask as exc:
        sys.stderr.write(f"coenv: unknown task {exc}; try 'coenv tasks list'\n")
        return EXIT_USAGE
    except (UsageError, InvalidArgument) as exc:
        sys.stderr.write(f"coenv: {exc}\n")
        return EXIT_USAGE
    except (PlannerUnavailable, CodeGenUnavailable) as exc:
        sys.stderr.write(f"coenv: {exc}\n")
        return EXIT_SERVICE
    except CoEnvError as exc:
        sys.stderr.write(f"coenv: {type(exc).__name__}: {exc}\n")
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
