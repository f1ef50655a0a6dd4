"""Independent reference implementations used by the tests.

Nothing here imports coenv internals; each oracle is written from the textbook
definition with plain numpy / scipy so that agreement means something.
"""

import json
import math
from importlib import resources

import numpy as np
from scipy.spatial.transform import Rotation


def jacobi_eigh(a, tol=1e-15, max_sweeps=100):
    """Cyclic Jacobi eigensolver for a small symmetric matrix (eigenvalues ascending)."""
    a = np.array(a, dtype=float)
    n = a.shape[0]
    v = np.eye(n)
    for _ in range(max_sweeps):
        off = math.sqrt(sum(a[i, j] ** 2 for i in range(n) for j in range(n) if i != j))
        if off <= tol * max(1.0, np.abs(a).max()):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if a[p, q] == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                j = np.eye(n)
                j[p, p] = j[q, q] = c
                j[p, q] = s
                j[q, p] = -s
                a = j.T @ a @ j
                v = v @ j
    w = np.diag(a)
    order = np.argsort(w)
    return w[order], v[:, order]


def quat_mean_oracle(quats, weights=None):
    """Principal eigenvector of sum w q q^T, assembled entry by entry."""
    q = [np.asarray(x, dtype=float) for x in quats]
    w = [1.0] * len(q) if weights is None else list(weights)
    m = np.zeros((4, 4))
    for wi, qi in zip(w, q):
        for r in range(4):
            for c in range(4):
                m[r, c] += wi * qi[r] * qi[c]
    _, vecs = jacobi_eigh(m)
    top = vecs[:, -1]
    return top if top[0] >= 0 else -top


def quat_angle_oracle(a, b):
    """Geodesic angle between two unit quaternions (sign-invariant).

    atan2 of the chord lengths keeps full precision near zero, where acos of the dot
    product would lose half the digits.
    """
    a = np.asarray(a, float) / np.linalg.norm(a)
    b = np.asarray(b, float) / np.linalg.norm(b)
    if np.dot(a, b) < 0:
        b = -b
    return 4.0 * math.atan2(np.linalg.norm(a - b), np.linalg.norm(a + b))


def wxyz_to_scipy(q):
    return Rotation.from_quat([q[1], q[2], q[3], q[0]])


def scipy_to_wxyz(r):
    x, y, z, w = r.as_quat()
    return np.array([w, x, y, z])


def _pose_matrix(d):
    m = np.eye(4)
    m[:3, 3] = d.get("translation", [0.0, 0.0, 0.0])
    if "rpy" in d:
        m[:3, :3] = Rotation.from_euler("xyz", d["rpy"]).as_matrix()
    elif "rotation" in d:
        m[:3, :3] = wxyz_to_scipy(d["rotation"]).as_matrix()
    return m


def raw_model(name):
    return json.loads(resources.files("coenv").joinpath("models", f"{name}.json").read_text())


def fk_oracle(raw, q, base=None):
    """TCP 4x4 by chaining joint origins with axis-angle rotations (scipy rotvec)."""
    t = _pose_matrix(raw.get("base_pose", {})) if base is None else base
    for j, qi in zip(raw["joints"], q):
        t = t @ _pose_matrix(j["origin"])
        r = np.eye(4)
        r[:3, :3] = Rotation.from_rotvec(np.asarray(j["axis"], float) / np.linalg.norm(j["axis"]) * qi).as_matrix()
        t = t @ r
    return t @ _pose_matrix(raw.get("tcp", {}))


def segment_distance_oracle(p1, q1, p2, q2, n=2001):
    """Brute-force distance between two segments on a dense parameter grid, then refined."""
    from scipy.optimize import minimize

    p1, q1, p2, q2 = (np.asarray(v, float) for v in (p1, q1, p2, q2))
    s = np.linspace(0.0, 1.0, 201)
    a = p1[None] + s[:, None] * (q1 - p1)[None]
    b = p2[None] + s[:, None] * (q2 - p2)[None]
    d = np.linalg.norm(a[:, None] - b[None], axis=2)
    i, j = np.unravel_index(np.argmin(d), d.shape)

    def f(x):
        u, v = np.clip(x, 0.0, 1.0)
        return float(np.linalg.norm(p1 + u * (q1 - p1) - p2 - v * (q2 - p2)))

    r = minimize(f, [s[i], s[j]], method="L-BFGS-B", bounds=[(0, 1), (0, 1)],
                 options={"ftol": 1e-15, "gtol": 1e-12})
    return min(float(d[i, j]), float(r.fun))


def segment_distance_batch_oracle(p1, q1, p2, q2):
    """Closest distance between segments [p1,q1] and [p2,q2], broadcasting over leading axes.

    Follows the clamped-parameter construction from Ericson, Real-Time Collision Detection 5.1.9.
    """
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = np.sum(d1 * d1, -1)
    e = np.sum(d2 * d2, -1)
    f = np.sum(d2 * r, -1)
    c = np.sum(d1 * r, -1)
    b = np.sum(d1 * d2, -1)
    a, e, f, c, b = np.broadcast_arrays(a, e, f, c, b)
    eps = 1e-14
    denom = a * e - b * b
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > eps * np.maximum(a * e, eps), np.clip((b * f - c * e) / denom, 0, 1), 0.0)
        s = np.where(a <= eps, 0.0, s)
        t = np.where(e <= eps, 0.0, (b * s + f) / np.where(e <= eps, 1.0, e))
        s_lo = np.where(a <= eps, 0.0, np.clip(-c / np.where(a <= eps, 1.0, a), 0, 1))
        s_hi = np.where(a <= eps, 0.0, np.clip((b - c) / np.where(a <= eps, 1.0, a), 0, 1))
    s = np.where(t < 0, s_lo, np.where(t > 1, s_hi, s))
    t = np.clip(t, 0, 1)
    c1 = p1 + s[..., None] * d1
    c2 = p2 + t[..., None] * d2
    return np.linalg.norm(c1 - c2, axis=-1)
