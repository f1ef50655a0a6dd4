"""Structured ray-cast observations of a scene from orbit cameras."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import TooManyViews
from .geometry import Pose, segment_distance_batch
from .world import SceneObject, SceneState, finger_yaw, grasp_yaw

DEFAULT_CENTER = (0.0, 0.0, 0.1)


@dataclass(frozen=True)
class Camera:
    """Orbit camera looking at ``center`` from spherical coordinates (yaw, pitch, radius)."""

    yaw: float = 0.0
    pitch: float = 0.6
    radius: float = 1.5
    center: tuple = DEFAULT_CENTER

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("camera radius must be positive")
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))

    @property
    def position(self) -> np.ndarray:
        cp = math.cos(self.pitch)
        offset = np.array([cp * math.cos(self.yaw), cp * math.sin(self.yaw), math.sin(self.pitch)])
        return np.asarray(self.center) + self.radius * offset

    def to_dict(self) -> dict:
        return {"yaw": self.yaw, "pitch": self.pitch, "radius": self.radius, "center": list(self.center)}

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(float(d.get("yaw", 0.0)), float(d.get("pitch", 0.6)), float(d.get("radius", 1.5)),
                   tuple(d.get("center", DEFAULT_CENTER)))


TOP_DOWN = Camera(0.0, 1.45, 1.6)


@dataclass(frozen=True)
class Visible:
    object_id: str
    pose: Pose
    occluded_fraction: float


@dataclass(frozen=True)
class ViewObservation:
    camera: Camera
    visible: tuple
    agent_tcps: tuple
    hidden: tuple = ()

    def ids(self) -> list:
        return [v.object_id for v in self.visible]

    def get(self, oid: str) -> Optional[Visible]:
        for v in self.visible:
            if v.object_id == oid:
                return v
        return None


@dataclass(frozen=True)
class AggregatedObservation:
    per_object: dict = field(default_factory=dict)  # id -> {"pose": Pose, "seen_in_views": [int]}
    unresolved: tuple = ()
    views: tuple = ()

    def to_dict(self) -> dict:
        return {
            "per_object": {k: {"pose": v["pose"].to_dict(), "seen_in_views": list(v["seen_in_views"])}
                           for k, v in self.per_object.items()},
            "unresolved": list(self.unresolved),
        }


def _occluders(scene: SceneState, target: SceneObject):
    caps_a, caps_b, caps_r = [], [], []
    for agent in scene.agents:
        a, b, r = agent.capsules()
        caps_a.append(a)
        caps_b.append(b)
        caps_r.append(r)
    caps = (np.vstack(caps_a), np.vstack(caps_b), np.concatenate(caps_r))
    solids = []
    c = target.pose.translation
    for o in scene.objects.values():
        if o.id == target.id:
            continue
        if o.container:
            # open containers do not hide what sits inside them
            oc = o.pose.translation
            if math.hypot(c[0] - oc[0], c[1] - oc[1]) <= o.inner_radius and o.bottom_z() <= c[2] <= o.top_z() + 0.02:
                continue
        solids.append(o)
    return caps, solids


def ray_blocked(origin, point, caps, solids) -> bool:
    """True when the open segment origin→point passes through any capsule or solid.

    Occluders that contain ``point`` itself are ignored; they touch the target rather
    than hide it.
    """
    origin = np.asarray(origin, dtype=float)
    point = np.asarray(point, dtype=float)
    a, b, r = caps
    if len(r):
        n = len(r)
        d = segment_distance_batch(np.repeat(origin[None], n, 0), np.repeat(point[None], n, 0), a, b)
        contains = segment_distance_batch(np.repeat(point[None], n, 0), np.repeat(point[None], n, 0), a, b) < r
        if np.any((d < r) & ~contains):
            return True
    for o in solids:
        rot = o.pose.rotation_matrix()
        p0 = (origin - o.pose.translation) @ rot
        p1 = (point - o.pose.translation) @ rot
        if o.shape.signed_distance(p1)[0] <= 0:
            continue
        if o.shape.segment_interval(p0, p1) is not None:
            return True
    return False


def sample_points(obj: SceneObject, camera: Camera) -> np.ndarray:
    """Centroid plus four extremal points across the viewing direction."""
    c = obj.pose.translation
    view = c - camera.position
    view = view / np.linalg.norm(view)
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(view, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.array([0.0, 1.0, 0.0])
    right = right / np.linalg.norm(right)
    up = np.cross(right, view)
    rot = obj.pose.rotation_matrix()
    pts = [c]
    for d in (right, up):
        half = 0.45 * obj.shape.extent_along(d, rot)
        pts.append(c + half * d)
        pts.append(c - half * d)
    return np.array(pts)


def observe(scene: SceneState, camera: Camera) -> ViewObservation:
    origin = camera.position
    visible, hidden = [], []
    for obj in scene.objects.values():
        caps, solids = _occluders(scene, obj)
        pts = sample_points(obj, camera)
        blocked = [ray_blocked(origin, p, caps, solids) for p in pts]
        if blocked[0]:
            hidden.append(obj.id)
            continue
        visible.append(Visible(obj.id, obj.pose, sum(blocked) / len(blocked)))
    tcps = tuple(a.tcp() for a in scene.agents)
    return ViewObservation(camera, tuple(visible), tcps, tuple(hidden))


def aggregate_views(scene: SceneState, cameras: Sequence[Camera], max_views: int = 6) -> AggregatedObservation:
    """Merge several views; an object's pose comes from the first view that sees it."""
    if not 1 <= len(cameras) <= max_views:
        raise TooManyViews(f"{len(cameras)} views requested, budget is {max_views}")
    views = tuple(observe(scene, c) for c in cameras)
    per_object = {}
    for k, v in enumerate(views, start=1):
        for vis in v.visible:
            entry = per_object.setdefault(vis.object_id, {"pose": vis.pose, "seen_in_views": []})
            entry["seen_in_views"].append(k)
    unresolved = tuple(oid for oid in scene.objects if oid not in per_object)
    ordered = {oid: per_object[oid] for oid in scene.objects if oid in per_object}
    return AggregatedObservation(ordered, unresolved, views)


def describe(scene: SceneState, agg: Optional[AggregatedObservation] = None) -> dict:
    """Structured state summary handed to planner agents in place of images."""
    robots = []
    for a in scene.agents:
        tcp = a.tcp()
        robots.append({
            "id": a.id, "model": a.model.name,
            "base_position": [round(float(v), 5) for v in a.model.base_pose.translation],
            "tcp_position": [round(float(v), 5) for v in tcp.translation],
            "tcp_rpy": [round(float(v), 5) for v in tcp.rpy()],
            "finger_yaw": round(finger_yaw(a.tcp_matrix()), 6),
            "gripper": a.config.gripper_state,
            "holding": scene.held_by(a.id),
        })
    objects = {}
    for oid, o in scene.objects.items():
        if agg is not None and oid not in agg.per_object:
            continue
        pose = agg.per_object[oid]["pose"] if agg is not None else o.pose
        yaw, period = grasp_yaw(o)
        objects[oid] = {"position": [round(float(v), 5) for v in pose.translation],
                        "rpy": [round(float(v), 5) for v in pose.rpy()],
                        "shape": o.shape.to_dict(),
                        "half_height": round(o.half_height(), 6),
                        "grasp_yaw": None if yaw is None else round(yaw, 6),
                        "grasp_period": period,
                        "attached_to": o.attached_to.agent if o.attached_to else None}
    out = {"step": scene.step, "robots": robots, "objects": objects}
    if agg is not None:
        out["unresolved"] = list(agg.unresolved)
    return out
