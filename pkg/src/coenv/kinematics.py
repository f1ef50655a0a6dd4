"""Serial-arm models, forward/inverse kinematics and link capsules."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy.optimize import minimize

from .errors import DimensionMismatch, ReachLimit
from .geometry import Capsule, Pose, quat_angle, rotation_vector

MODEL_SCHEMA = "coenv-model/1"


@dataclass(frozen=True)
class Joint:
    axis: tuple
    origin: Pose
    limits: tuple
    type: str = "revolute"

    def __post_init__(self):
        ax = np.asarray(self.axis, dtype=float)
        ax = ax / np.linalg.norm(ax)
        object.__setattr__(self, "axis", tuple(float(v) for v in ax))
        lo, hi = (float(v) for v in self.limits)
        if not lo < hi:
            raise ValueError("joint limits must satisfy lo < hi")
        if self.type != "revolute":
            raise ValueError("only revolute joints are supported")
        object.__setattr__(self, "limits", (lo, hi))


@dataclass(frozen=True)
class LinkCapsule:
    link: int
    a: tuple
    b: tuple
    radius: float


@dataclass(frozen=True)
class Gripper:
    max_width: float
    finger_length: float
    close_command: float


@dataclass(frozen=True, eq=False)
class RobotModel:
    """Kinematic description of one arm.

    ``link_capsules`` reference link 0 (the base frame) or link k = frame after joint k.
    """

    name: str
    joints: tuple
    base_pose: Pose
    tcp_offset: Pose
    link_capsules: tuple
    gripper: Gripper
    home: tuple = ()
    max_reach: float = 0.0
    stretched: tuple = ()

    def __post_init__(self):
        if len(self.joints) < 1:
            raise ValueError("a robot needs at least one joint")
        for c in self.link_capsules:
            if not c.radius > 0:
                raise ValueError("capsule radii must be positive")
            if not 0 <= c.link <= len(self.joints):
                raise ValueError(f"capsule references unknown link {c.link}")
        d = len(self.joints)
        object.__setattr__(self, "_origins", np.stack([j.origin.matrix() for j in self.joints]))
        ks = []
        for j in self.joints:
            x, y, z = j.axis
            ks.append(np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]]))
        k = np.stack(ks)
        object.__setattr__(self, "_k", k)
        object.__setattr__(self, "_k2", k @ k)
        object.__setattr__(self, "_axes", np.array([j.axis for j in self.joints]))
        object.__setattr__(self, "_lo", np.array([j.limits[0] for j in self.joints]))
        object.__setattr__(self, "_hi", np.array([j.limits[1] for j in self.joints]))
        object.__setattr__(self, "_base", self.base_pose.matrix())
        object.__setattr__(self, "_tcp", self.tcp_offset.matrix())
        links = np.array([c.link for c in self.link_capsules], dtype=int)
        object.__setattr__(self, "_cap_link", links)
        object.__setattr__(self, "_cap_a", np.array([c.a for c in self.link_capsules], float).reshape(-1, 3))
        object.__setattr__(self, "_cap_b", np.array([c.b for c in self.link_capsules], float).reshape(-1, 3))
        object.__setattr__(self, "_cap_r", np.array([c.radius for c in self.link_capsules], float))
        if not self.home:
            object.__setattr__(self, "home", tuple(0.5 * (self._lo + self._hi)))
        if len(self.home) != d:
            raise ValueError("home configuration has wrong dimension")

    @property
    def dof(self) -> int:
        return len(self.joints)

    @property
    def lower(self) -> np.ndarray:
        return self._lo

    @property
    def upper(self) -> np.ndarray:
        return self._hi

    def placed(self, base_pose: Pose) -> "RobotModel":
        return replace(self, base_pose=base_pose)

    def reach_center(self) -> np.ndarray:
        """World position of the first joint frame; the workspace sphere is centred here."""
        return (self.base_pose @ self.joints[0].origin).translation.copy()

    def clamp(self, values) -> np.ndarray:
        return np.clip(np.asarray(values, dtype=float), self._lo, self._hi)

    def home_config(self) -> "JointConfig":
        return JointConfig(self.home, 1.0)


@dataclass(frozen=True, eq=False)
class JointConfig:
    """Joint angles in radians plus gripper state in [-1, 1] (1 open, -1 fully closed)."""

    values: np.ndarray
    gripper_state: float = 1.0

    def __init__(self, values, gripper_state: float = 1.0):
        v = np.array(values, dtype=float).reshape(-1)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "gripper_state", float(min(1.0, max(-1.0, gripper_state))))

    def __len__(self) -> int:
        return len(self.values)

    def __eq__(self, other) -> bool:
        if not isinstance(other, JointConfig):
            return NotImplemented
        return np.array_equal(self.values, other.values) and self.gripper_state == other.gripper_state

    def __hash__(self) -> int:
        return hash((self.values.tobytes(), self.gripper_state))

    def __repr__(self) -> str:
        vals = ", ".join(f"{v:.4f}" for v in self.values)
        return f"JointConfig([{vals}], gripper={self.gripper_state:+.2f})"

    def with_values(self, values) -> "JointConfig":
        return JointConfig(values, self.gripper_state)

    def with_gripper(self, g: float) -> "JointConfig":
        return JointConfig(self.values, g)

    def to_dict(self) -> dict:
        return {"values": [float(v) for v in self.values], "gripper": self.gripper_state}

    @classmethod
    def from_dict(cls, d: dict) -> "JointConfig":
        return cls(d["values"], d.get("gripper", 1.0))


@dataclass(frozen=True)
class IkConfig:
    damping: float = 0.05
    max_iters: int = 200
    pos_tol: float = 1e-4
    rot_tol: float = 1e-3
    stall_eps: float = 1e-8
    stall_window: int = 10
    restarts: int = 24


@dataclass(frozen=True)
class FKResult:
    link_frames: list
    tcp: Pose


def _values(model: RobotModel, q) -> np.ndarray:
    v = q.values if isinstance(q, JointConfig) else np.asarray(q, dtype=float)
    if v.shape != (model.dof,):
        raise DimensionMismatch(f"{model.name} expects {model.dof} joints, got {v.shape}")
    return v


def fk_batch(model: RobotModel, qs) -> np.ndarray:
    """World frames for a batch of configurations.

    Returns an array (n, d + 2, 4, 4): index 0 is the base, 1..d the joint frames,
    d + 1 the TCP.
    """
    qs = np.asarray(qs, dtype=float)
    if qs.ndim == 1:
        qs = qs[None]
    n, d = qs.shape
    if d != model.dof:
        raise DimensionMismatch(f"{model.name} expects {model.dof} joints, got {d}")
    if n == 1:
        return _fk_single(model, qs[0])[None]
    out = np.empty((n, d + 2, 4, 4))
    t = np.broadcast_to(model._base, (n, 4, 4)).copy()
    out[:, 0] = t
    s = np.sin(qs)
    c = np.cos(qs)
    rot = np.zeros((n, 4, 4))
    rot[:, 3, 3] = 1.0
    eye = np.eye(3)
    for i in range(d):
        t = t @ model._origins[i]
        rot[:, :3, :3] = eye + s[:, i, None, None] * model._k[i] + (1.0 - c[:, i, None, None]) * model._k2[i]
        t = t @ rot
        out[:, i + 1] = t
    out[:, d + 1] = t @ model._tcp
    return out


# column pairs mixed by a rotation about a coordinate axis: (first, second, sign)
_AXIS_COLUMNS = {(1.0, 0.0, 0.0): (1, 2), (0.0, 1.0, 0.0): (2, 0), (0.0, 0.0, 1.0): (0, 1)}


def _fk_single(model: RobotModel, q: np.ndarray) -> np.ndarray:
    d = model.dof
    out = np.empty((d + 2, 4, 4))
    t = model._base.copy()
    out[0] = t
    for i, joint in enumerate(model.joints):
        t = t @ model._origins[i]
        cols = _AXIS_COLUMNS.get(joint.axis)
        ci, si = math.cos(q[i]), math.sin(q[i])
        if cols is not None:
            a, b = cols
            ca = t[:3, a].copy()
            cb = t[:3, b]
            t[:3, a] = ci * ca + si * cb
            t[:3, b] = ci * cb - si * ca
        else:
            rot = np.eye(4)
            rot[:3, :3] += si * model._k[i] + (1.0 - ci) * model._k2[i]
            t = t @ rot
        out[i + 1] = t
    out[d + 1] = t @ model._tcp
    return out


def forward_kinematics(model: RobotModel, q) -> FKResult:
    """Joint frames (one per joint) and the TCP pose in world coordinates."""
    frames = fk_batch(model, _values(model, q))[0]
    link_frames = [Pose.from_matrix(m) for m in frames[1:]]
    return FKResult(link_frames=link_frames, tcp=link_frames[-1])


def tcp_matrix(model: RobotModel, q) -> np.ndarray:
    return fk_batch(model, _values(model, q))[0, -1]


def tcp_pose(model: RobotModel, q) -> Pose:
    return Pose.from_matrix(tcp_matrix(model, q))


def _jacobian(model: RobotModel, frames: np.ndarray) -> np.ndarray:
    d = model.dof
    p_tcp = frames[d + 1, :3, 3]
    axes = np.einsum("nij,nj->ni", frames[1:d + 1, :3, :3], model._axes)
    jv = np.cross(axes, p_tcp - frames[1:d + 1, :3, 3])
    return np.vstack([jv.T, axes.T])


def _pose_error(target: np.ndarray, current: np.ndarray):
    ep = target[:3, 3] - current[:3, 3]
    er = rotation_vector(target[:3, :3] @ current[:3, :3].T)
    return ep, er


def _dls(model: RobotModel, target: np.ndarray, q0: np.ndarray, cfg: IkConfig,
         position_only: bool = False):
    """Damped least-squares iteration; returns (q, pos_err, rot_err, converged).

    The damping term is ``damping**2 * min(1, residual / 0.1)`` so steps stay damped
    far from the goal and approach Gauss-Newton once the residual is small.
    """
    q = model.clamp(q0)
    lam2 = cfg.damping ** 2
    eye = np.eye(3 if position_only else 6)
    history = []
    best = None
    for _ in range(cfg.max_iters + 1):
        frames = _fk_single(model, q)
        ep, er = _pose_error(target, frames[-1])
        pe = float(np.linalg.norm(ep))
        re = float(np.linalg.norm(er))
        res = pe if position_only else math.sqrt(pe * pe + re * re)
        if best is None or res < best[0]:
            best = (res, q, pe, re)
        if pe <= cfg.pos_tol and (position_only or re <= cfg.rot_tol):
            return q, pe, re, True
        history.append(res)
        w = cfg.stall_window
        if len(history) > w and history[-w - 1] - min(history[-w:]) < cfg.stall_eps:
            break
        jac = _jacobian(model, frames)
        if position_only:
            jac = jac[:3]
            e = ep
        else:
            e = np.concatenate([ep, er])
        damp = lam2 * min(1.0, res / 0.1)
        dq = jac.T @ np.linalg.solve(jac @ jac.T + damp * eye, e)
        q = model.clamp(q + dq)
    _, q, pe, re = best
    return q, pe, re, False


_POOL_SIZE = 1024


def _seed_pool(model: RobotModel):
    """Deterministic configuration pool with precomputed TCP frames (per placed model)."""
    pool = model.__dict__.get("_pool")
    if pool is None:
        rng = np.random.default_rng(20240917)
        qs = model._lo + (model._hi - model._lo) * rng.random((_POOL_SIZE, model.dof))
        tcp = fk_batch(model, qs)[:, -1]
        pool = (qs, tcp)
        object.__setattr__(model, "_pool", pool)
    return pool


def _nearest_seeds(model: RobotModel, target: np.ndarray, k: int, position_only: bool = False) -> list:
    qs, tcp = _seed_pool(model)
    score = np.linalg.norm(tcp[:, :3, 3] - target[:3, 3], axis=1)
    if not position_only:
        tr = np.einsum("nij,ij->n", tcp[:, :3, :3], target[:3, :3])
        score = score + 0.2 * np.arccos(np.clip(0.5 * (tr - 1.0), -1.0, 1.0))
    return [qs[i] for i in np.argsort(score, kind="stable")[:k]]


def closest_reachable(model: RobotModel, point, starts) -> tuple:
    """Joint configuration whose TCP lies nearest ``point`` (bounded quasi-Newton search).

    Returns ``(q, distance)``; used for the ReachLimit diagnostic.
    """
    point = np.asarray(point, dtype=float)
    bounds = list(zip(model._lo, model._hi))

    def cost(q):
        frames = _fk_single(model, q)
        e = frames[-1, :3, 3] - point
        grad = 2.0 * _jacobian(model, frames)[:3].T @ e
        return float(e @ e), grad

    best = None
    for s in starts:
        r = minimize(cost, model.clamp(s), jac=True, method="L-BFGS-B", bounds=bounds,
                     options={"maxiter": 200, "ftol": 1e-15, "gtol": 1e-12})
        if best is None or r.fun < best.fun:
            best = r
    q = model.clamp(best.x)
    return q, float(np.linalg.norm(tcp_matrix(model, q)[:3, 3] - point))


def inverse_kinematics(model: RobotModel, target: Pose, seed, cfg: Optional[IkConfig] = None) -> JointConfig:
    """Damped least-squares IK to a full TCP pose.

    Tries ``seed`` first, then the home configuration and the pool configurations
    whose TCP lies closest to the target.  Returns a JointConfig (gripper state carried
    over from ``seed``) whose FK meets ``cfg.pos_tol``/``cfg.rot_tol``.  Raises
    ReachLimit with the closest configuration found and the remaining position gap
    when no attempt converges.
    """
    cfg = cfg or IkConfig()
    q0 = _values(model, seed)
    gripper = seed.gripper_state if isinstance(seed, JointConfig) else 1.0
    tgt = target.matrix()
    dist = float(np.linalg.norm(target.translation - model.reach_center()))
    beyond = model.max_reach > 0 and dist > model.max_reach * 1.001
    best = None
    if not beyond:
        seeds = [q0, np.asarray(model.home, dtype=float)] + _nearest_seeds(model, tgt, cfg.restarts)
        for s in seeds:
            q, pe, re, ok = _dls(model, tgt, s, cfg)
            if ok:
                result = JointConfig(q, gripper)
                check = tcp_pose(model, result)
                assert np.linalg.norm(check.translation - target.translation) <= cfg.pos_tol * (1 + 1e-9)
                assert quat_angle(check.rotation, target.rotation) <= cfg.rot_tol * 1.01
                return result
            if best is None or (pe, re) < (best[1], best[2]):
                best = (q, pe, re)
    starts = [q0] if best is None else [best[0]]
    if model.stretched:
        starts.append(np.asarray(model.stretched, dtype=float))
    starts.extend(_nearest_seeds(model, tgt, 3, position_only=True))
    q_close, pe = closest_reachable(model, target.translation, starts)
    actual = tcp_pose(model, q_close)
    rot_gap = quat_angle(actual.rotation, target.rotation)
    raise ReachLimit(JointConfig(q_close, gripper), pe, rot_gap,
                     target=target.translation.copy(), actual=actual.translation.copy())


def link_capsules_world(model: RobotModel, q) -> list:
    a, b, r = capsules_world_arrays(model, fk_batch(model, _values(model, q)))
    return [Capsule(a[0, i], b[0, i], r[i]) for i in range(len(r))]


def capsules_world_arrays(model: RobotModel, frames: np.ndarray):
    """Capsule endpoints for batched frames (n, d+2, 4, 4): arrays (n, k, 3), (n, k, 3), (k,)."""
    f = frames[:, model._cap_link]  # (n, k, 4, 4)
    a = np.einsum("nkij,kj->nki", f[:, :, :3, :3], model._cap_a) + f[:, :, :3, 3]
    b = np.einsum("nkij,kj->nki", f[:, :, :3, :3], model._cap_b) + f[:, :, :3, 3]
    return a, b, model._cap_r


# ---------------------------------------------------------------------------
# JSON model files

def model_from_dict(d: dict) -> RobotModel:
    if d.get("schema") != MODEL_SCHEMA:
        raise ValueError(f"unsupported model schema {d.get('schema')!r}")
    joints = tuple(
        Joint(axis=tuple(j["axis"]), origin=Pose.from_dict(j["origin"]),
              limits=tuple(j["limits"]), type=j.get("type", "revolute"))
        for j in d["joints"]
    )
    caps = tuple(LinkCapsule(int(c["link"]), tuple(c["a"]), tuple(c["b"]), float(c["radius"]))
                 for c in d["link_capsules"])
    g = d["gripper"]
    return RobotModel(
        name=d["name"],
        joints=joints,
        base_pose=Pose.from_dict(d.get("base_pose", {})),
        tcp_offset=Pose.from_dict(d.get("tcp", {})),
        link_capsules=caps,
        gripper=Gripper(float(g["max_width"]), float(g["finger_length"]), float(g["close_command"])),
        home=tuple(d.get("home", ())),
        max_reach=float(d.get("max_reach", 0.0)),
        stretched=tuple(d.get("stretched", ())),
    )


def load_model(path_or_name: Union[str, Path]) -> RobotModel:
    """Load a model JSON file, or a bundled model by name ("franka", "piper")."""
    p = Path(path_or_name)
    if p.suffix == ".json" and p.exists():
        return model_from_dict(json.loads(p.read_text()))
    return bundled_model(str(path_or_name))


@lru_cache(maxsize=None)
def bundled_model(name: str) -> RobotModel:
    try:
        text = resources.files("coenv").joinpath("models", f"{name}.json").read_text()
    except FileNotFoundError:
        raise KeyError(f"no bundled robot model {name!r}") from None
    return model_from_dict(json.loads(text))


def bundled_model_names() -> list:
    return sorted(p.name[:-5] for p in resources.files("coenv").joinpath("models").iterdir()
                  if p.name.endswith(".json"))


def config_distance(a: JointConfig, b: JointConfig) -> float:
    return float(np.max(np.abs(a.values - b.values)))


def as_config(model: RobotModel, values: Sequence[float], gripper: float = 1.0) -> JointConfig:
    return JointConfig(_values(model, np.asarray(values, dtype=float)), gripper)
