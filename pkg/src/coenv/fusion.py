"""Multi-view pose fusion and camera extrinsic refinement."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (DegenerateGeometry, DegenerateSpectrum, EmptyInput, MissingExtrinsic, MixedObjects,
                     TooFewPoints, UnknownObject)
from .geometry import Pose, quat_angle, quat_canonical
from .kinematics import JointConfig
from .shapes import Shape
from .world import SceneObject, SceneState, make_scene

VIEWS_SCHEMA = "coenv-views/1"
EXTRINSICS_SCHEMA = "coenv-extrinsics/1"


@dataclass(frozen=True)
class ViewEstimate:
    camera_id: str
    object_id: str
    pose_in_camera: Pose
    confidence: float = 1.0

    def __post_init__(self):
        if not 0 < self.confidence <= 1:
            raise ValueError("confidence must lie in (0, 1]")

    def to_dict(self) -> dict:
        return {"camera_id": self.camera_id, "object_id": self.object_id,
                "pose_in_camera": self.pose_in_camera.to_dict(), "confidence": self.confidence}

    @classmethod
    def from_dict(cls, d: dict) -> "ViewEstimate":
        return cls(d["camera_id"], d["object_id"], Pose.from_dict(d["pose_in_camera"]),
                   float(d.get("confidence", 1.0)))


@dataclass(frozen=True)
class CameraExtrinsic:
    camera_id: str
    world_from_camera: Pose

    def to_dict(self) -> dict:
        return {"camera_id": self.camera_id, "world_from_camera": self.world_from_camera.to_dict()}


@dataclass(frozen=True)
class FusedObject:
    object_id: str
    pose: Pose
    views_used: int
    translation_rms: float
    rotation_rms: float

    @property
    def spread(self) -> dict:
        return {"translation_rms": self.translation_rms, "rotation_rms": self.rotation_rms}


def fuse_translations(estimates, weights=None) -> np.ndarray:
    t = np.asarray(estimates, dtype=float).reshape(-1, 3)
    if len(t) == 0:
        raise EmptyInput("no translations to fuse")
    # fsum is correctly rounded, so the mean does not depend on view order
    if weights is None:
        return np.array([math.fsum(t[:, k]) for k in range(3)]) / len(t)
    w = np.asarray(weights, dtype=float)
    return np.array([math.fsum(w * t[:, k]) for k in range(3)]) / math.fsum(w)


def fuse_rotations(quats, weights=None) -> np.ndarray:
    """Rotation mean: principal eigenvector of the scatter matrix sum(w q q^T), w >= 0 canonical."""
    q = np.asarray(quats, dtype=float).reshape(-1, 4)
    if len(q) == 0:
        raise EmptyInput("no rotations to fuse")
    w = np.ones(len(q)) if weights is None else np.asarray(weights, dtype=float)
    m = (q * w[:, None]).T @ q
    vals, vecs = np.linalg.eigh(m)
    if vals[3] - vals[2] <= 1e-12 * max(1.0, abs(vals[3])):
        raise DegenerateSpectrum("rotation mean is ambiguous (top eigenvalues coincide)")
    return quat_canonical(vecs[:, 3])


def _lift(view: ViewEstimate, extrinsics: Mapping) -> Pose:
    ext = extrinsics.get(view.camera_id)
    if ext is None:
        raise MissingExtrinsic(view.camera_id)
    pose = ext.world_from_camera if isinstance(ext, CameraExtrinsic) else ext
    return pose @ view.pose_in_camera


def _fuse_poses(poses: Sequence[Pose], weights):
    t = fuse_translations([p.translation for p in poses], weights)
    r = fuse_rotations([p.rotation for p in poses], weights)
    return Pose(t, r)


def _spread(poses: Sequence[Pose], fused: Pose):
    dt = np.array([np.sum((p.translation - fused.translation) ** 2) for p in poses])
    da = np.array([quat_angle(p.rotation, fused.rotation) ** 2 for p in poses])
    return float(np.sqrt(dt.mean())), float(np.sqrt(da.mean()))


def fuse_object(views: Sequence[ViewEstimate], extrinsics: Mapping, weighted: bool = False,
                trim: bool = True) -> FusedObject:
    """Lift each view to the world frame and fuse.

    With ``trim`` a view whose translation lies more than three times the RMS deviation
    from the preliminary mean is dropped and the remainder fused once more.
    """
    if not views:
        raise EmptyInput("no views to fuse")
    ids = {v.object_id for v in views}
    if len(ids) != 1:
        raise MixedObjects(f"views cover several objects: {sorted(ids)}")
    poses = [_lift(v, extrinsics) for v in views]
    weights = np.array([v.confidence for v in views]) if weighted else None
    fused = _fuse_poses(poses, weights)
    if trim and len(poses) > 2:
        dev = np.array([np.linalg.norm(p.translation - fused.translation) for p in poses])
        rms = float(np.sqrt(np.mean(dev ** 2)))
        keep = dev <= 3.0 * rms
        if rms > 0 and not keep.all():
            poses = [p for p, k in zip(poses, keep) if k]
            weights = weights[keep] if weights is not None else None
            fused = _fuse_poses(poses, weights)
    t_rms, r_rms = _spread(poses, fused)
    return FusedObject(views[0].object_id, fused, len(poses), t_rms, r_rms)


# ---------------------------------------------------------------------------
# Extrinsic refinement


def kabsch(src, dst) -> np.ndarray:
    """Rigid 4x4 transform T minimising sum |T src_i - dst_i|^2."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    h = (src - cs).T @ (dst - cd)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    m = np.eye(4)
    m[:3, :3] = r
    m[:3, 3] = cd - r @ cs
    return m


def _residual(pose: Pose, cam, world) -> float:
    return float(np.sqrt(np.mean(np.sum((pose.apply(cam) - world) ** 2, axis=1))))


def refine_extrinsics_trace(correspondences, current: CameraExtrinsic, rounds: int = 10):
    """Iterated point-set alignment; returns (extrinsic, residual per accepted round)."""
    world = np.array([c["world_point"] for c in correspondences], dtype=float).reshape(-1, 3)
    cam = np.array([c["camera_point"] for c in correspondences], dtype=float).reshape(-1, 3)
    if len(world) < 3:
        raise TooFewPoints(f"{len(world)} correspondences, need at least 3")
    centred = world - world.mean(axis=0)
    sv = np.linalg.svd(centred, compute_uv=False)
    if sv[0] == 0 or sv[1] <= 1e-9 * sv[0]:
        raise DegenerateGeometry("correspondences are collinear")
    pose = current.world_from_camera
    res = _residual(pose, cam, world)
    history = [res]
    for _ in range(rounds):
        delta = kabsch(pose.apply(cam), world)
        cand = Pose.from_matrix(delta @ pose.matrix())
        new = _residual(cand, cam, world)
        if res - new < 1e-7:
            break
        assert new <= res
        pose, res = cand, new
        history.append(res)
    return CameraExtrinsic(current.camera_id, pose), history


def refine_extrinsics(correspondences, current: CameraExtrinsic, rounds: int = 10) -> CameraExtrinsic:
    return refine_extrinsics_trace(correspondences, current, rounds)[0]


# ---------------------------------------------------------------------------
# Scene construction


def catalog_object(oid: str, entry: Mapping, pose: Pose) -> SceneObject:
    """SceneObject from a catalog entry ({shape, physical, flags}) at a given pose."""
    phys = entry.get("physical", {})
    return SceneObject(
        id=oid, pose=pose, shape=Shape.from_dict(entry["shape"]),
        mass=float(phys.get("mass", 0.1)), friction=float(phys.get("friction", 0.5)),
        bimanual=bool(entry.get("bimanual", False)), container=bool(entry.get("container", False)),
        grasp_width=entry.get("grasp_width"), inner_radius=float(entry.get("inner_radius", 0.0)),
        floor_thickness=float(entry.get("floor_thickness", 0.0)),
        description=entry.get("description", ""),
    )


def build_scene(all_views: Sequence[ViewEstimate], extrinsics: Mapping, object_catalog: Mapping,
                agent_models: Sequence, agent_configs: Sequence, weighted: bool = False,
                rng_seed: int = 0) -> SceneState:
    if len(agent_models) == 0:
        raise ValueError("at least one agent is required")
    groups: dict = {}
    for v in all_views:
        if v.object_id not in object_catalog:
            raise UnknownObject(v.object_id)
        if v.camera_id not in extrinsics:
            raise MissingExtrinsic(v.camera_id)
        groups.setdefault(v.object_id, []).append(v)
    objects = []
    for oid in sorted(groups):
        fused = fuse_object(groups[oid], extrinsics, weighted=weighted)
        objects.append(catalog_object(oid, object_catalog[oid], fused.pose))
    pairs = [(m, q if isinstance(q, JointConfig) else JointConfig(q)) for m, q in zip(agent_models, agent_configs)]
    return make_scene(pairs, objects, rng_seed)


def load_views(path) -> list:
    data = json.loads(open(path).read())
    records = data["views"] if isinstance(data, dict) else data
    if isinstance(data, dict) and data.get("schema", VIEWS_SCHEMA) != VIEWS_SCHEMA:
        raise ValueError(f"unsupported views schema {data.get('schema')!r}")
    return [ViewEstimate.from_dict(r) for r in records]


def load_extrinsics(path) -> dict:
    data = json.loads(open(path).read())
    cams = data.get("cameras", data)
    return {cid: CameraExtrinsic(cid, Pose.from_dict(p)) for cid, p in cams.items() if cid != "schema"}


def group_views(views: Iterable[ViewEstimate]) -> dict:
    out: dict = {}
    for v in views:
        out.setdefault(v.object_id, []).append(v)
    return out
