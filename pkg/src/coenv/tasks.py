"""Task specifications, seeded initial scenes and milestone predicates."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Union

import numpy as np

from .errors import MalformedPredicate, UnknownObject, UnknownTask
from .geometry import Pose, quat_from_rpy
from .kinematics import JointConfig, load_model
from .observe import Camera
from .plan import TaskGoal
from .shapes import Shape
from .world import SceneObject, SceneState, make_scene

TASK_SCHEMA = "coenv-task/1"


@dataclass(frozen=True)
class TaskSpec:
    id: str
    name: str
    description: str
    success_criteria: str
    hints: tuple
    robots: tuple
    objects: tuple
    milestones: tuple
    cameras: tuple = ()
    recipe: str = ""
    params: dict = field(default_factory=dict)

    @property
    def goal(self) -> TaskGoal:
        return TaskGoal(self.id, self.description, self.success_criteria, self.hints)

    @property
    def milestone_ids(self) -> list:
        return [m["id"] for m in self.milestones]

    def default_cameras(self) -> list:
        return [Camera.from_dict(c) for c in self.cameras] or [Camera(0.0, 1.45, 1.6)]

    def catalog(self) -> dict:
        return {o["id"]: o for o in self.objects}

    @classmethod
    def from_dict(cls, d: Mapping) -> "TaskSpec":
        if d.get("schema") != TASK_SCHEMA:
            raise ValueError(f"unsupported task schema {d.get('schema')!r}")
        ms = tuple(d["milestones"])
        if not ms:
            raise ValueError("a task needs at least one milestone")
        for m in ms:
            validate_predicate(m["predicate"])
        return cls(
            id=d["id"], name=d.get("name", d["id"]), description=d.get("description", ""),
            success_criteria=d.get("success_criteria", ""), hints=tuple(d.get("hints", ())),
            robots=tuple(d["robots"]), objects=tuple(d.get("objects", ())), milestones=ms,
            cameras=tuple(d.get("cameras", ())), recipe=d.get("recipe", d["id"]),
            params=dict(d.get("params", {})),
        )

    def to_dict(self) -> dict:
        return {"schema": TASK_SCHEMA, "id": self.id, "name": self.name, "description": self.description,
                "success_criteria": self.success_criteria, "hints": list(self.hints),
                "robots": list(self.robots), "objects": list(self.objects),
                "milestones": list(self.milestones), "cameras": list(self.cameras),
                "recipe": self.recipe, "params": self.params}


def _task_dir():
    return resources.files("coenv").joinpath("tasks")


def task_names() -> list:
    return sorted(p.name[:-5] for p in _task_dir().iterdir() if p.name.endswith(".json"))


@lru_cache(maxsize=None)
def _bundled(name: str) -> TaskSpec:
    try:
        text = _task_dir().joinpath(f"{name}.json").read_text()
    except FileNotFoundError:
        raise UnknownTask(name) from None
    return TaskSpec.from_dict(json.loads(text))


def load_task(name_or_path: Union[str, Path]) -> TaskSpec:
    p = Path(name_or_path)
    if p.suffix == ".json" and p.exists():
        return TaskSpec.from_dict(json.loads(p.read_text()))
    if str(name_or_path) not in task_names():
        raise UnknownTask(str(name_or_path))
    return _bundled(str(name_or_path))


# ---------------------------------------------------------------------------
# Scene construction


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """PCG64 generator seeded from SeedSequence([seed, trial])."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(trial)]))


def _pose(spec: Mapping) -> Pose:
    rpy = spec.get("rpy", (0.0, 0.0, spec.get("yaw", 0.0)))
    return Pose(spec.get("xyz", (0.0, 0.0, 0.0)), quat_from_rpy(*rpy))


def _object(entry: Mapping, rng: Optional[np.random.Generator]) -> SceneObject:
    pose = dict(entry["pose"])
    xyz = list(pose.get("xyz", (0.0, 0.0, 0.0)))
    rpy = list(pose.get("rpy", (0.0, 0.0, pose.get("yaw", 0.0))))
    sample = entry.get("sample")
    if rng is not None and sample:
        jx, jy = sample.get("xy", (0.0, 0.0))
        xyz[0] += rng.uniform(-jx, jx)
        xyz[1] += rng.uniform(-jy, jy)
        jyaw = sample.get("yaw", 0.0)
        rpy[2] += rng.uniform(-jyaw, jyaw)
    phys = entry.get("physical", {})
    return SceneObject(
        id=entry["id"], pose=Pose(xyz, quat_from_rpy(*rpy)), shape=Shape.from_dict(entry["shape"]),
        mass=float(phys.get("mass", 0.1)), friction=float(phys.get("friction", 0.5)),
        bimanual=bool(entry.get("bimanual", False)), container=bool(entry.get("container", False)),
        grasp_width=entry.get("grasp_width"), inner_radius=float(entry.get("inner_radius", 0.0)),
        floor_thickness=float(entry.get("floor_thickness", 0.0)), description=entry.get("description", ""),
    )


def robot_models(task: TaskSpec) -> list:
    out = []
    for r in task.robots:
        base = load_model(r["model"])
        out.append(base.placed(_pose(r["base"])))
    return out


def initial_scene(task: TaskSpec, seed: Optional[int] = None, trial: int = 0) -> SceneState:
    """Initial scene; with a seed, object poses are jittered within the spec's sampling ranges."""
    rng = trial_rng(seed, trial) if seed is not None else None
    pairs = []
    for r, model in zip(task.robots, robot_models(task)):
        init = r.get("init", "home")
        q = np.array(model.home if init == "home" else init, dtype=float)
        jitter = float(r.get("joint_jitter", 0.0))
        if rng is not None and jitter > 0:
            q = model.clamp(q + rng.uniform(-jitter, jitter, size=q.shape))
        pairs.append((model, JointConfig(q, 1.0)))
    objects = [_object(o, rng) for o in task.objects]
    rng_seed = 0 if seed is None else int(np.random.SeedSequence([int(seed), int(trial)]).generate_state(1)[0])
    return make_scene(pairs, objects, rng_seed)


# ---------------------------------------------------------------------------
# Predicates

PREDICATES = ("grasped", "grasped_lifted", "first_holder", "stacked", "contact", "lifted", "handover",
              "at_target", "held_lifted", "inside", "sweep", "all")


def validate_predicate(p) -> None:
    if not isinstance(p, Mapping) or p.get("type") not in PREDICATES:
        raise MalformedPredicate(f"unknown milestone predicate {p!r}")
    if p["type"] == "all":
        for q in p.get("of", ()):
            validate_predicate(q)


def _obj(scene: SceneState, oid: str) -> SceneObject:
    try:
        return scene.object(oid)
    except UnknownObject:
        raise MalformedPredicate(f"predicate references unknown object {oid!r}") from None


def is_stacked(scene: SceneState, a: str, b: str, xy_tol: float = 0.015, z_tol: float = 0.005) -> bool:
    oa, ob = _obj(scene, a), _obj(scene, b)
    if oa.attached_to is not None or ob.attached_to is not None:
        return False
    upper, lower = (oa, ob) if oa.pose.translation[2] > ob.pose.translation[2] else (ob, oa)
    dxy = float(np.hypot(*(upper.pose.translation[:2] - lower.pose.translation[:2])))
    gap = upper.bottom_z() - lower.top_z()
    return dxy <= xy_tol and abs(gap) <= z_tol


def is_inside(scene: SceneState, oid: str, container: str) -> bool:
    o, c = _obj(scene, oid), _obj(scene, container)
    if o.attached_to is not None:
        return False
    p, q = o.pose.translation, c.pose.translation
    return (math.hypot(p[0] - q[0], p[1] - q[1]) <= c.inner_radius
            and c.bottom_z() <= p[2] <= c.top_z())


def sweep_strokes(scene: SceneState, tool: str, target: str) -> int:
    return sum(1 for e in scene.events if e.kind == "ObjectContact"
               and e.payload.get("objects") == [tool, target] and e.payload.get("stroke"))


def eval_predicate(p: Mapping, scene: SceneState) -> bool:
    kind = p.get("type")
    if kind == "all":
        return all(eval_predicate(q, scene) for q in p.get("of", ()))
    if kind == "grasped":
        return all(len(_obj(scene, o).holders) > 0 for o in p["objects"])
    if kind == "grasped_lifted":
        lift = p.get("min_lift", 0.03)
        return all(_obj(scene, o).peak_lift >= lift for o in p["objects"])
    if kind == "first_holder":
        o = _obj(scene, p["object"])
        return bool(o.holders) and o.holders[0] == p["agent"] and o.peak_lift >= p.get("min_lift", 0.03)
    if kind == "stacked":
        a, b = p["objects"]
        return is_stacked(scene, a, b, p.get("xy_tol", 0.015), p.get("z_tol", 0.005))
    if kind == "contact":
        return _obj(scene, p["object"]).max_contacts >= p.get("min_contacts", 2)
    if kind == "lifted":
        o = _obj(scene, p["object"])
        peak = o.peak_lift_multi if p.get("min_contacts", 1) >= 2 else o.peak_lift
        return peak >= p.get("min_lift", 0.03)
    if kind == "handover":
        h = _obj(scene, p["object"]).holders
        src, dst = p["from"], p["to"]
        return src in h and dst in h[h.index(src) + 1:]
    if kind == "at_target":
        o = _obj(scene, p["object"])
        if p.get("resting", True) and o.attached_to is not None:
            return False
        x, y = p["xy"]
        return math.hypot(o.pose.translation[0] - x, o.pose.translation[1] - y) <= p.get("tol", 0.03)
    if kind == "held_lifted":
        o = _obj(scene, p["object"])
        return o.attached_to is not None and o.drops == 0 and o.peak_lift >= p.get("min_lift", 0.05)
    if kind == "inside":
        return all(is_inside(scene, o, p["container"]) for o in p["objects"])
    if kind == "sweep":
        return sweep_strokes(scene, p["tool"], p["target"]) >= p.get("strokes", 3)
    raise MalformedPredicate(f"unknown milestone predicate {p!r}")


def eval_milestones(task: Union[TaskSpec, str], scene: SceneState) -> list:
    """Ordered milestone flags; a milestone only counts when every earlier one holds."""
    if isinstance(task, str):
        task = load_task(task)
    out, prefix = [], True
    for m in task.milestones:
        ok = prefix and eval_predicate(m["predicate"], scene)
        out.append({"milestone_id": m["id"], "satisfied": bool(ok)})
        prefix = ok
    return out


def final_satisfied(task: TaskSpec, scene: SceneState) -> bool:
    return eval_milestones(task, scene)[-1]["satisfied"]
