"""Rigid-body math: quaternions (w, x, y, z), poses, capsules and segment distances."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

_EPS = 1e-12


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = math.sqrt(float(q @ q))
    if n < _EPS:
        raise ValueError("zero-norm quaternion")
    return q / n


def quat_canonical(q) -> np.ndarray:
    """Unit quaternion with w >= 0 (first non-zero component positive when w == 0)."""
    q = quat_normalize(q)
    for c in q:
        if c > 0.0:
            return q
        if c < 0.0:
            return -q
    return q


def quat_mul(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]], dtype=float)


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    h = 0.5 * angle
    return np.concatenate(([math.cos(h)], math.sin(h) * axis))


def quat_from_rpy(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Rotation Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    qx = quat_from_axis_angle((1, 0, 0), roll)
    qy = quat_from_axis_angle((0, 1, 0), pitch)
    qz = quat_from_axis_angle((0, 0, 1), yaw)
    return quat_mul(qz, quat_mul(qy, qx))


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return quat_canonical(q)


def quat_angle(a, b) -> float:
    """Geodesic angle between the rotations of two unit quaternions (sign-invariant)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.dot(a, b) < 0:
        b = -b
    # atan2 form stays accurate for tiny angles, where acos(dot) loses half the digits
    return 4.0 * math.atan2(float(np.linalg.norm(a - b)), float(np.linalg.norm(a + b)))


def rotation_vector(m) -> np.ndarray:
    """Axis-angle vector of a rotation matrix (log map)."""
    q = matrix_to_quat(m)
    w = min(1.0, q[0])
    s = math.sqrt(max(0.0, 1.0 - w * w))
    angle = 2.0 * math.atan2(s, w)
    if s < 1e-12:
        return 2.0 * np.asarray(q[1:])
    return angle * np.asarray(q[1:]) / s


def matrix_to_rpy(m) -> np.ndarray:
    """ZYX Euler angles (roll, pitch, yaw) of a rotation matrix."""
    m = np.asarray(m)
    pitch = math.asin(max(-1.0, min(1.0, -m[2, 0])))
    if abs(m[2, 0]) < 1.0 - 1e-9:
        roll = math.atan2(m[2, 1], m[2, 2])
        yaw = math.atan2(m[1, 0], m[0, 0])
    else:
        roll = 0.0
        yaw = math.atan2(-m[0, 1], m[1, 1])
    return np.array([roll, pitch, yaw])


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform: translation in meters, unit quaternion (w, x, y, z) with w >= 0."""

    translation: np.ndarray
    rotation: np.ndarray

    def __init__(self, translation=(0.0, 0.0, 0.0), rotation=(1.0, 0.0, 0.0, 0.0)):
        t = np.asarray(translation, dtype=float)
        if t.shape != (3,):
            raise ValueError("translation must be a 3-vector")
        object.__setattr__(self, "translation", _frozen(t))
        object.__setattr__(self, "rotation", _frozen(quat_canonical(rotation)))

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, 3], matrix_to_quat(m[:3, :3]))

    @classmethod
    def from_rpy(cls, translation, rpy) -> "Pose":
        return cls(translation, quat_from_rpy(*rpy))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.rotation)
        m[:3, 3] = self.translation
        return m

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def inverse(self) -> "Pose":
        return invert(self)

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def apply(self, points) -> np.ndarray:
        """Transform points (..., 3) from this pose's frame to the parent frame."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation_matrix().T + self.translation

    def rpy(self) -> np.ndarray:
        return matrix_to_rpy(self.rotation_matrix())

    def __eq__(self, other) -> bool:
        if not isinstance(other, Pose):
            return NotImplemented
        return (np.array_equal(self.translation, other.translation)
                and np.array_equal(self.rotation, other.rotation))

    def __hash__(self) -> int:
        return hash((self.translation.tobytes(), self.rotation.tobytes()))

    def __repr__(self) -> str:
        t = ", ".join(f"{v:.4f}" for v in self.translation)
        r = ", ".join(f"{v:.4f}" for v in self.rotation)
        return f"Pose(t=[{t}], q=[{r}])"

    def to_dict(self) -> dict:
        return {"translation": [float(v) for v in self.translation],
                "rotation": [float(v) for v in self.rotation]}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        if "rpy" in d:
            return cls.from_rpy(d.get("translation", (0, 0, 0)), d["rpy"])
        return cls(d.get("translation", (0, 0, 0)), d.get("rotation", (1, 0, 0, 0)))

    def almost_equal(self, other: "Pose", tol: float = 1e-9) -> bool:
        return (float(np.max(np.abs(self.translation - other.translation))) <= tol
                and quat_angle(self.rotation, other.rotation) <= tol)


def compose(parent: Pose, child: Pose) -> Pose:
    r = quat_mul(parent.rotation, child.rotation)
    t = parent.translation + quat_to_matrix(parent.rotation) @ child.translation
    return Pose(t, r)


def invert(p: Pose) -> Pose:
    qc = quat_conj(p.rotation)
    return Pose(-(quat_to_matrix(qc) @ p.translation), qc)


@dataclass(frozen=True)
class Capsule:
    """Segment a-b swept by a sphere of the given radius (world frame, meters)."""

    a: tuple
    b: tuple
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("capsule radius must be positive")
        object.__setattr__(self, "a", tuple(float(v) for v in self.a))
        object.__setattr__(self, "b", tuple(float(v) for v in self.b))
        object.__setattr__(self, "radius", float(self.radius))

    def inflated(self, delta: float) -> "Capsule":
        return Capsule(self.a, self.b, self.radius + delta)


def segment_distance(p1, q1, p2, q2) -> float:
    return float(segment_distance_batch(np.asarray(p1, float)[None], np.asarray(q1, float)[None],
                                        np.asarray(p2, float)[None], np.asarray(q2, float)[None])[0])


def segment_distance_batch(p1, q1, p2, q2, return_params: bool = False):
    """Closest distance between segments p1-q1 and p2-q2, vectorized over the leading axis.

    Clamped closest-point parameters are solved in closed form per pair; degenerate
    (point-like) segments are handled explicitly.
    """
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = np.einsum("ij,ij->i", d1, d1)
    e = np.einsum("ij,ij->i", d2, d2)
    f = np.einsum("ij,ij->i", d2, r)
    c = np.einsum("ij,ij->i", d1, r)
    b = np.einsum("ij,ij->i", d1, d2)
    a_ok = a > _EPS
    e_ok = e > _EPS
    safe_a = np.where(a_ok, a, 1.0)
    safe_e = np.where(e_ok, e, 1.0)
    denom = a * e - b * b
    par = denom > _EPS * np.maximum(a * e, _EPS)
    s = np.where(par, np.clip((b * f - c * e) / np.where(par, denom, 1.0), 0.0, 1.0), 0.0)
    t = (b * s + f) / safe_e
    lo = t < 0.0
    hi = t > 1.0
    s = np.where(lo, np.clip(-c / safe_a, 0.0, 1.0), s)
    s = np.where(hi, np.clip((b - c) / safe_a, 0.0, 1.0), s)
    t = np.clip(t, 0.0, 1.0)
    # degenerate segments
    s = np.where(~a_ok, 0.0, s)
    t = np.where(~a_ok, np.clip(f / safe_e, 0.0, 1.0), t)
    s = np.where(a_ok & ~e_ok, np.clip(-c / safe_a, 0.0, 1.0), s)
    t = np.where(~e_ok, 0.0, t)
    c1 = p1 + d1 * s[:, None]
    c2 = p2 + d2 * t[:, None]
    dist = np.linalg.norm(c1 - c2, axis=1)
    if return_params:
        return dist, c1, c2
    return dist


def _capsule_key(c: Capsule):
    return (c.a, c.b, c.radius)


def capsule_distance(a: Capsule, b: Capsule) -> float:
    """Signed clearance between two capsules; negative values are penetration depth."""
    # Fixed argument order makes the result exactly symmetric.
    if _capsule_key(b) < _capsule_key(a):
        a, b = b, a
    seg = segment_distance(a.a, a.b, b.a, b.b)
    return seg - (a.radius + b.radius)


def capsule_arrays(capsules: Sequence[Capsule]):
    """Stack capsules into (n,3), (n,3), (n,) arrays."""
    if not capsules:
        return np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0)
    a = np.array([c.a for c in capsules], dtype=float)
    b = np.array([c.b for c in capsules], dtype=float)
    r = np.array([c.radius for c in capsules], dtype=float)
    return a, b, r


def capsule_distance_matrix(a_end, b_end, radii, a_end2, b_end2, radii2) -> np.ndarray:
    """Pairwise signed distances between two capsule sets given as arrays; shape (n, m)."""
    n, m = len(radii), len(radii2)
    if n == 0 or m == 0:
        return np.zeros((n, m))
    p1 = np.repeat(a_end, m, axis=0)
    q1 = np.repeat(b_end, m, axis=0)
    p2 = np.tile(a_end2, (n, 1))
    q2 = np.tile(b_end2, (n, 1))
    d = segment_distance_batch(p1, q1, p2, q2).reshape(n, m)
    return d - radii[:, None] - radii2[None, :]


def point_segment_distance(p, a, b) -> float:
    p, a, b = (np.asarray(v, dtype=float) for v in (p, a, b))
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom < _EPS else min(1.0, max(0.0, float((p - a) @ ab) / denom))
    return float(np.linalg.norm(p - (a + t * ab)))


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def as_vec3(v: Iterable[float]) -> np.ndarray:
    arr = np.asarray(list(v) if not isinstance(v, np.ndarray) else v, dtype=float)
    if arr.shape != (3,):
        raise ValueError("expected a 3-vector")
    return arr
