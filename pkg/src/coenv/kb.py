"""Append-only knowledge base of validated demonstrations (newline-delimited JSON)."""

from __future__ import annotations

import errno
import fcntl
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .errors import InvalidArgument, SerializationError, StorageFull
from .plan import PlanElement, canonical_json
from .tasks import eval_milestones, load_task
from .kinematics import JointConfig
from .transfer import PrimitiveRecord
from .world import SceneState, apply_primitive

KB_SCHEMA = "coenv-kb/1"


@dataclass(frozen=True)
class KnowledgeRecord:
    """One demonstration.

    ``created_at`` is a logical clock (the record's position in the store), so two
    runs with the same inputs write identical bytes.
    """

    id: int
    initial_state: dict
    goal: dict
    trajectory: dict
    mode: str
    outcome: str
    provenance: dict = field(default_factory=dict)
    created_at: int = 0

    def to_dict(self) -> dict:
        return {"schema": KB_SCHEMA, "id": self.id, "initial_state": self.initial_state, "goal": self.goal,
                "trajectory": self.trajectory, "mode": self.mode, "outcome": self.outcome,
                "provenance": self.provenance, "created_at": self.created_at}

    @classmethod
    def from_dict(cls, d: dict) -> "KnowledgeRecord":
        if d.get("schema") != KB_SCHEMA:
            raise SerializationError(f"unsupported record schema {d.get('schema')!r}")
        return cls(int(d["id"]), d["initial_state"], d["goal"], d["trajectory"], d["mode"], d["outcome"],
                   dict(d.get("provenance", {})), int(d.get("created_at", 0)))

    def canonical(self) -> str:
        return canonical_json(self.to_dict())

    @property
    def milestones(self) -> list:
        return list(self.trajectory.get("milestones", []))

    def primitive_records(self) -> list:
        out = []
        for l, e in enumerate(self.trajectory["elements"], start=1):
            out.append(PrimitiveRecord(l, {int(k): JointConfig.from_dict(v) for k, v in e["start"].items()},
                                       {int(k): JointConfig.from_dict(v) for k, v in e["end"].items()}))
        return out


def make_record(result, scene0: SceneState, goal, provenance: Optional[dict] = None) -> KnowledgeRecord:
    """Record (id assigned on store) from an EpisodeResult."""
    traj = {"elements": [r.to_dict() for r in result.trajectory.records], "milestones": result.milestones}
    return KnowledgeRecord(0, scene0.to_dict(), goal.to_dict(), traj, result.mode, result.outcome,
                           dict(provenance or {}))


def _check(record: KnowledgeRecord) -> str:
    if not record.trajectory.get("elements"):
        raise SerializationError("refusing to store a record with an empty trajectory")
    try:
        return record.canonical()
    except (TypeError, ValueError) as exc:
        raise SerializationError(f"record is not serializable: {exc}") from exc


def _count(fh) -> int:
    fh.seek(0)
    n = 0
    for line in fh:
        if line.strip():
            n += 1
    return n


def store_record(db_path, record: KnowledgeRecord) -> int:
    """Append ``record`` under an exclusive advisory lock; returns its id (1, 2, ...)."""
    _check(record)
    path = Path(db_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        with open(path, "a+", encoding="utf-8") as fh:
            fcntl.flock(fh.fileno(), fcntl.LOCK_EX)
            try:
                j = _count(fh) + 1
                line = replace(record, id=j, created_at=j).canonical() + "\n"
                fh.seek(0, os.SEEK_END)
                fh.write(line)
                fh.flush()
                os.fsync(fh.fileno())
            finally:
                fcntl.flock(fh.fileno(), fcntl.LOCK_UN)
    except OSError as exc:
        if exc.errno in (errno.ENOSPC, errno.EDQUOT, errno.EFBIG):
            raise StorageFull(str(exc)) from exc
        raise
    return j


def load_records(db_path) -> list:
    path = Path(db_path)
    if not path.exists():
        return []
    out = []
    with open(path, encoding="utf-8") as fh:
        fcntl.flock(fh.fileno(), fcntl.LOCK_SH)
        try:
            for n, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    out.append(KnowledgeRecord.from_dict(json.loads(line)))
                except (ValueError, KeyError) as exc:
                    raise SerializationError(f"{path}:{n}: {exc}") from exc
        finally:
            fcntl.flock(fh.fileno(), fcntl.LOCK_UN)
    return out


def query_demonstrations(db_path, goal_id: str, k: int) -> list:
    """Up to ``k`` newest successful records for ``goal_id``."""
    if not isinstance(k, int) or k < 1:
        raise InvalidArgument("k must be a positive integer")
    hits = [r for r in load_records(db_path) if r.goal.get("id") == goal_id and r.outcome == "Success"]
    hits.sort(key=lambda r: r.id, reverse=True)
    return hits[:k]


def replay_record(record: KnowledgeRecord, task=None) -> tuple:
    """Re-run the stored elements from the stored initial state.

    Returns (milestone flags, final scene). Flags match the stored ones when the
    world is deterministic and the record is intact.
    """
    task = task or load_task(record.goal["id"])
    scene = SceneState.from_dict(record.initial_state)
    for e in record.trajectory["elements"]:
        scene = apply_primitive(scene, PlanElement.from_dict(e["element"])).scene
    return eval_milestones(task, scene), scene


def replay_matches(record: KnowledgeRecord) -> bool:
    flags, _ = replay_record(record)
    return flags == record.milestones

