"""Sim-to-real hand-off: joint-space interpolation, swept volumes and pairwise disjointness."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import BadStepCount, DimensionMismatch
from .geometry import Capsule, capsule_distance_matrix
from .kinematics import JointConfig, RobotModel, capsules_world_arrays, fk_batch

WAYPOINTS_SCHEMA = "coenv-waypoints/1"
DEFAULT_STEPS = 20
DEFAULT_MARGIN = 0.01


@dataclass(frozen=True)
class PrimitiveRecord:
    """Joint configurations of every agent before (q_{l-1}) and after (q_l) element ``l``."""

    l: int
    start: Mapping
    end: Mapping

    def to_dict(self) -> dict:
        return {"l": self.l,
                "start": {str(k): v.to_dict() for k, v in sorted(self.start.items())},
                "end": {str(k): v.to_dict() for k, v in sorted(self.end.items())}}

    @classmethod
    def from_dict(cls, d: dict) -> "PrimitiveRecord":
        return cls(int(d["l"]), {int(k): JointConfig.from_dict(v) for k, v in d["start"].items()},
                   {int(k): JointConfig.from_dict(v) for k, v in d["end"].items()})


@dataclass(frozen=True)
class DenseWaypoints:
    agent_id: int
    waypoints: tuple
    S: int
    element: int = 0

    def values(self) -> np.ndarray:
        return np.array([w.values for w in self.waypoints])

    def to_dict(self) -> dict:
        return {"agent_id": self.agent_id, "element": self.element, "steps": self.S,
                "joints": [[float(v) for v in w.values] for w in self.waypoints],
                "gripper": [float(w.gripper_state) for w in self.waypoints]}


@dataclass(frozen=True)
class SweptVolume:
    agent_id: int
    element: int
    a: np.ndarray
    b: np.ndarray
    radius: np.ndarray
    inflation: float
    per_config: int = 0
    static: bool = False

    @property
    def capsules(self) -> list:
        return [Capsule(tuple(p), tuple(q), float(r)) for p, q, r in zip(self.a, self.b, self.radius)]

    def __len__(self) -> int:
        return len(self.radius)


@dataclass(frozen=True)
class Violation:
    agents: tuple
    min_distance: float
    witness: tuple  # (capsule index in first agent's volume, capsule index in second)

    def to_dict(self) -> dict:
        return {"agents": list(self.agents), "min_distance": self.min_distance, "witness": list(self.witness)}


@dataclass(frozen=True)
class DisjointReport:
    safe: bool
    violations: tuple = ()
    min_distance: float = float("inf")


@dataclass
class TrajectoryReport:
    verdicts: list = field(default_factory=list)
    safe_waypoints: list = field(default_factory=list)
    first_violation: Optional[int] = None

    @property
    def safe(self) -> bool:
        return self.first_violation is None


def interpolate(q_prev: JointConfig, q_next: JointConfig, S: int, agent_id: int = 0,
                element: int = 0) -> DenseWaypoints:
    """S+1 waypoints on the straight joint-space segment; both ends are the inputs exactly.

    The gripper keeps its previous command until the final waypoint.
    """
    if not isinstance(S, (int, np.integer)) or isinstance(S, bool) or S < 1:
        raise BadStepCount(f"step count must be a positive integer, got {S!r}")
    a, b = q_prev.values, q_next.values
    if a.shape != b.shape:
        raise DimensionMismatch(f"cannot blend {a.shape[0]}-dof and {b.shape[0]}-dof configurations")
    out = [q_prev]
    for k in range(1, S):
        alpha = k / S
        out.append(JointConfig((1.0 - alpha) * a + alpha * b, q_prev.gripper_state))
    out.append(q_next)
    return DenseWaypoints(agent_id, tuple(out), int(S), element)


def _capsules_at(model: RobotModel, qs: np.ndarray):
    a, b, r = capsules_world_arrays(model, fk_batch(model, qs))
    return a, b, r


def swept_volume(model: RobotModel, waypoints: DenseWaypoints) -> SweptVolume:
    """Union of link capsules at every waypoint, radii grown to cover motion between samples.

    The growth is the largest distance any capsule endpoint travels from a sample to the
    configuration halfway to its neighbour. For straight endpoint motion that equals half
    the inter-sample displacement; on curved paths it also covers the bulge of the arc.
    """
    qs = waypoints.values()
    if qs.shape[1] != model.dof:
        raise DimensionMismatch(f"waypoints have {qs.shape[1]} joints, model has {model.dof}")
    a, b, r = _capsules_at(model, qs)
    inflation = 0.0
    if len(qs) > 1 and np.any(qs[1:] != qs[:-1]):
        ma, mb, _ = _capsules_at(model, 0.5 * (qs[1:] + qs[:-1]))
        reach = [np.linalg.norm(ma - a[:-1], axis=-1), np.linalg.norm(ma - a[1:], axis=-1),
                 np.linalg.norm(mb - b[:-1], axis=-1), np.linalg.norm(mb - b[1:], axis=-1)]
        inflation = float(max(x.max() for x in reach))
    static = len(qs) == 1 or not np.any(qs[1:] != qs[:-1])
    radius = np.tile(r, len(qs)) + inflation
    return SweptVolume(waypoints.agent_id, waypoints.element, a.reshape(-1, 3), b.reshape(-1, 3),
                       radius, inflation, len(r), static)


def _distinct(v: SweptVolume):
    # a parked arm repeats one capsule set S+1 times; the first copy is enough
    n = v.per_config if v.static and v.per_config else len(v)
    return v.a[:n], v.b[:n], v.radius[:n]


def _pair_distances(u: SweptVolume, v: SweptVolume) -> np.ndarray:
    ua, ub, ur = _distinct(u)
    va, vb, vr = _distinct(v)
    # min over both argument orders makes the result exactly symmetric
    d1 = capsule_distance_matrix(ua, ub, ur, va, vb, vr)
    d2 = capsule_distance_matrix(va, vb, vr, ua, ub, ur).T
    return np.minimum(d1, d2)


def verify_disjoint(volumes: Mapping, margin: float = DEFAULT_MARGIN) -> DisjointReport:
    """Safe iff every cross-agent capsule pair is farther apart than ``margin``."""
    ids = sorted(volumes)
    violations = []
    best = float("inf")
    for x, i in enumerate(ids):
        for j in ids[x + 1:]:
            u, v = volumes[i], volumes[j]
            if len(u) == 0 or len(v) == 0:
                continue
            d = _pair_distances(u, v)
            k = np.unravel_index(int(np.argmin(d)), d.shape)
            dmin = float(d[k])
            best = min(best, dmin)
            if not dmin > margin:
                violations.append(Violation((i, j), dmin, (int(k[0]), int(k[1]))))
    violations.sort(key=lambda v: (v.min_distance, v.agents))
    return DisjointReport(not violations, tuple(violations), best)


def _model_for(models, aid: int) -> RobotModel:
    try:
        return models[aid]
    except (KeyError, IndexError):
        raise DimensionMismatch(f"no model for agent {aid}") from None


def validate_trajectory(records: Sequence[PrimitiveRecord], models, S: int = DEFAULT_STEPS,
                        margin: float = DEFAULT_MARGIN) -> TrajectoryReport:
    """Check elements in order; stop at the first unsafe one.

    Every agent's element-l motion is swept and compared against every other agent's
    element-l motion (agents that do not move contribute their static capsules).
    """
    report = TrajectoryReport()
    for n, rec in enumerate(records, start=1):
        if rec.l != n:
            raise ValueError(f"records must be contiguous from l = 1 (got l = {rec.l} at position {n})")
        dense, volumes = [], {}
        for aid in sorted(rec.end):
            start = rec.start.get(aid, rec.end[aid])
            wp = interpolate(start, rec.end[aid], S, aid, rec.l)
            dense.append(wp)
            volumes[aid] = swept_volume(_model_for(models, aid), wp)
        res = verify_disjoint(volumes, margin)
        report.verdicts.append({"l": rec.l, "safe": res.safe, "min_distance": res.min_distance,
                                "violations": [v.to_dict() for v in res.violations]})
        if not res.safe:
            report.first_violation = rec.l
            for later in records[n:]:
                report.verdicts.append({"l": later.l, "safe": None, "status": "ReplanRequired"})
            break
        report.safe_waypoints.append(dense)
    return report


def waypoints_document(report: TrajectoryReport, meta: Optional[dict] = None) -> dict:
    """Export structure: per agent, per element, joint vectors (rad) plus gripper commands."""
    agents: dict = {}
    for element in report.safe_waypoints:
        for wp in element:
            agents.setdefault(str(wp.agent_id), []).append(wp.to_dict())
    doc = {"schema": WAYPOINTS_SCHEMA, "agents": agents, "safe": report.safe,
           "first_violation": report.first_violation}
    if meta:
        doc["meta"] = meta
    return doc


def export_waypoints(report: TrajectoryReport, path, meta: Optional[dict] = None) -> None:
    # repr-based float output round-trips every double exactly
    with open(path, "w") as fh:
        json.dump(waypoints_document(report, meta), fh, sort_keys=True, allow_nan=False)
        fh.write("\n")
