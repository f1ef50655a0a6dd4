"""Primitive solid shapes (box, cylinder, sphere) in their local frames.

Local conventions: boxes are centred with edges along the axes, cylinders are centred
with their axis along local z.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SHAPE_KINDS = ("box", "cylinder", "sphere")
_ARITY = {"box": 3, "cylinder": 2, "sphere": 1}


@dataclass(frozen=True)
class Shape:
    kind: str
    dims: tuple

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise ValueError(f"unknown shape kind {self.kind!r}")
        dims = tuple(float(d) for d in self.dims)
        if len(dims) != _ARITY[self.kind]:
            raise ValueError(f"{self.kind} takes {_ARITY[self.kind]} dimensions")
        if min(dims) <= 0:
            raise ValueError("shape dimensions must be positive")
        object.__setattr__(self, "dims", dims)

    @classmethod
    def box(cls, sx, sy, sz) -> "Shape":
        return cls("box", (sx, sy, sz))

    @classmethod
    def cylinder(cls, r, h) -> "Shape":
        return cls("cylinder", (r, h))

    @classmethod
    def sphere(cls, r) -> "Shape":
        return cls("sphere", (r,))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dims": list(self.dims)}

    @classmethod
    def from_dict(cls, d: dict) -> "Shape":
        return cls(d["kind"], tuple(d["dims"]))

    @property
    def half_extents(self) -> np.ndarray:
        if self.kind == "box":
            return 0.5 * np.array(self.dims)
        if self.kind == "cylinder":
            r, h = self.dims
            return np.array([r, r, 0.5 * h])
        r = self.dims[0]
        return np.array([r, r, r])

    @property
    def bounding_radius(self) -> float:
        if self.kind == "sphere":
            return self.dims[0]
        if self.kind == "cylinder":
            r, h = self.dims
            return float(np.hypot(r, 0.5 * h))
        return float(np.linalg.norm(self.half_extents))

    def extent_along(self, direction, rotation: np.ndarray) -> float:
        """Full width of the solid along a world direction, given its world rotation matrix."""
        d = np.asarray(direction, dtype=float)
        d = d / np.linalg.norm(d)
        local = rotation.T @ d
        if self.kind == "box":
            return float(2.0 * np.sum(np.abs(local) * self.half_extents))
        if self.kind == "cylinder":
            r, h = self.dims
            c = abs(local[2])
            return float(2.0 * (c * 0.5 * h + r * np.sqrt(max(0.0, 1.0 - c * c))))
        return 2.0 * self.dims[0]

    def half_height(self, rotation: np.ndarray) -> float:
        return 0.5 * self.extent_along((0.0, 0.0, 1.0), rotation)

    def signed_distance(self, points) -> np.ndarray:
        """Signed distance of local-frame points to the surface (negative inside)."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "sphere":
            return np.linalg.norm(p, axis=1) - self.dims[0]
        if self.kind == "box":
            q = np.abs(p) - self.half_extents
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
            inside = np.minimum(np.max(q, axis=1), 0.0)
            return outside + inside
        r, h = self.dims
        d = np.stack([np.hypot(p[:, 0], p[:, 1]) - r, np.abs(p[:, 2]) - 0.5 * h], axis=1)
        outside = np.linalg.norm(np.maximum(d, 0.0), axis=1)
        inside = np.minimum(np.max(d, axis=1), 0.0)
        return outside + inside

    def surface_samples(self) -> np.ndarray:
        """A fixed set of local points on the surface (corners, face centres, rims)."""
        he = self.half_extents
        if self.kind == "box":
            corners = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], float)
            faces = np.vstack([np.eye(3), -np.eye(3)])
            edges = np.array([[0, sy, sz] for sy in (-1, 1) for sz in (-1, 1)]
                             + [[sx, 0, sz] for sx in (-1, 1) for sz in (-1, 1)]
                             + [[sx, sy, 0] for sx in (-1, 1) for sy in (-1, 1)], float)
            return np.vstack([corners, faces, edges]) * he
        if self.kind == "cylinder":
            r, h = self.dims
            ang = np.linspace(0.0, 2 * np.pi, 12, endpoint=False)
            ring = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)
            pts = [np.array([[0.0, 0.0, 0.5 * h], [0.0, 0.0, -0.5 * h]])]
            for z in (-0.5 * h, 0.0, 0.5 * h):
                pts.append(np.column_stack([ring, np.full(len(ring), z)]))
            return np.vstack(pts)
        r = self.dims[0]
        return np.vstack([np.eye(3), -np.eye(3)]) * r

    def segment_interval(self, p0, p1):
        """Parameter interval [t0, t1] ⊂ [0, 1] where segment p0→p1 (local) is inside the solid, or None."""
        p0 = np.asarray(p0, dtype=float)
        d = np.asarray(p1, dtype=float) - p0
        lo, hi = 0.0, 1.0
        if self.kind == "sphere":
            return _quadratic_interval(d @ d, 2 * p0 @ d, p0 @ p0 - self.dims[0] ** 2, lo, hi)
        he = self.half_extents
        axes = range(3) if self.kind == "box" else (2,)
        for k in axes:
            if abs(d[k]) < 1e-15:
                if abs(p0[k]) > he[k]:
                    return None
                continue
            t_a = (-he[k] - p0[k]) / d[k]
            t_b = (he[k] - p0[k]) / d[k]
            lo, hi = max(lo, min(t_a, t_b)), min(hi, max(t_a, t_b))
            if lo > hi:
                return None
        if self.kind == "cylinder":
            r = self.dims[0]
            a = d[0] ** 2 + d[1] ** 2
            b = 2 * (p0[0] * d[0] + p0[1] * d[1])
            c = p0[0] ** 2 + p0[1] ** 2 - r * r
            return _quadratic_interval(a, b, c, lo, hi)
        return (lo, hi)


def _quadratic_interval(a, b, c, lo, hi):
    if a < 1e-18:
        return (lo, hi) if c <= 0 else None
    disc = b * b - 4 * a * c
    if disc < 0:
        return None
    s = np.sqrt(disc)
    t0, t1 = (-b - s) / (2 * a), (-b + s) / (2 * a)
    lo, hi = max(lo, t0), min(hi, t1)
    return (lo, hi) if lo <= hi else None
