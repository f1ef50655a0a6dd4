"""Deterministic kinematic multi-agent world.

SceneState is an immutable value.  ``step`` advances all commanded agents by at most
``max_joint_step`` per joint, carries attached objects with their grasping TCP and
records events.  ``apply_primitive`` runs one delta-based primitive to completion.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import CheckpointNotExecutable, DimensionMismatch, InvalidAgent, ReachLimit, UnknownObject
from .geometry import Pose, capsule_distance_matrix, quat_from_rpy, quat_to_matrix
from .kinematics import IkConfig, JointConfig, RobotModel, bundled_model, capsules_world_arrays, fk_batch, inverse_kinematics
from .plan import PlanElement
from .shapes import Shape

EVENT_KINDS = ("GraspAttached", "GraspMissed", "Released", "Dropped",
               "InterAgentContact", "ReachLimit", "ObjectContact")


@dataclass(frozen=True)
class WorldConfig:
    grasp_capture_tol: float = 0.03
    snap_tol: float = 0.01
    drop_tol: float = 0.02
    max_joint_step: float = 0.05
    contact_tol: float = 0.005
    stroke_min_travel: float = 0.04
    track_agent_contacts: bool = True
    strict_reach: bool = False
    ik: IkConfig = field(default_factory=IkConfig)


DEFAULT_WORLD = WorldConfig()


@dataclass(frozen=True)
class Event:
    step: int
    kind: str
    payload: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"step": self.step, "kind": self.kind, "payload": self.payload}

    @classmethod
    def from_dict(cls, d: dict) -> "Event":
        return cls(int(d["step"]), d["kind"], dict(d.get("payload", {})))


@dataclass(frozen=True)
class Attachment:
    agent: int
    offset: Pose  # object pose expressed in the TCP frame

    def to_dict(self) -> dict:
        return {"agent": self.agent, "offset": self.offset.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "Attachment":
        return cls(int(d["agent"]), Pose.from_dict(d["offset"]))


@dataclass(frozen=True, eq=False)
class SceneObject:
    """A rigid object plus the contact history that milestone predicates read."""

    id: str
    pose: Pose
    shape: Shape
    mass: float = 0.1
    friction: float = 0.5
    attached_to: Optional[Attachment] = None
    secondary: tuple = ()
    bimanual: bool = False
    container: bool = False
    grasp_width: Optional[float] = None
    inner_radius: float = 0.0
    floor_thickness: float = 0.0
    description: str = ""
    lift_ref: Optional[float] = None
    peak_lift: float = 0.0
    peak_lift_multi: float = 0.0
    max_contacts: int = 0
    holders: tuple = ()
    drops: int = 0
    carry_origin: Optional[tuple] = None

    @property
    def position(self) -> np.ndarray:
        return self.pose.translation

    @property
    def contact_count(self) -> int:
        return (1 if self.attached_to is not None else 0) + len(self.secondary)

    def agents_in_contact(self) -> tuple:
        ids = [self.attached_to.agent] if self.attached_to is not None else []
        return tuple(ids + [s.agent for s in self.secondary])

    def half_height(self) -> float:
        return self.shape.half_height(self.pose.rotation_matrix())

    def bottom_z(self) -> float:
        return float(self.pose.translation[2]) - self.half_height()

    def top_z(self) -> float:
        return float(self.pose.translation[2]) + self.half_height()

    def signed_distance(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float)) - self.pose.translation
        return self.shape.signed_distance(p @ self.pose.rotation_matrix())

    def to_dict(self) -> dict:
        d = {
            "id": self.id, "pose": self.pose.to_dict(), "shape": self.shape.to_dict(),
            "mass": self.mass, "friction": self.friction,
            "attached_to": self.attached_to.to_dict() if self.attached_to else None,
            "secondary": [s.to_dict() for s in self.secondary],
            "bimanual": self.bimanual, "container": self.container,
            "grasp_width": self.grasp_width, "inner_radius": self.inner_radius,
            "floor_thickness": self.floor_thickness, "description": self.description,
            "lift_ref": self.lift_ref, "peak_lift": self.peak_lift,
            "peak_lift_multi": self.peak_lift_multi, "max_contacts": self.max_contacts,
            "holders": list(self.holders), "drops": self.drops,
            "carry_origin": list(self.carry_origin) if self.carry_origin is not None else None,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneObject":
        return cls(
            id=d["id"], pose=Pose.from_dict(d["pose"]), shape=Shape.from_dict(d["shape"]),
            mass=float(d.get("mass", 0.1)), friction=float(d.get("friction", 0.5)),
            attached_to=Attachment.from_dict(d["attached_to"]) if d.get("attached_to") else None,
            secondary=tuple(Attachment.from_dict(s) for s in d.get("secondary", ())),
            bimanual=bool(d.get("bimanual", False)), container=bool(d.get("container", False)),
            grasp_width=d.get("grasp_width"), inner_radius=float(d.get("inner_radius", 0.0)),
            floor_thickness=float(d.get("floor_thickness", 0.0)), description=d.get("description", ""),
            lift_ref=d.get("lift_ref"), peak_lift=float(d.get("peak_lift", 0.0)),
            peak_lift_multi=float(d.get("peak_lift_multi", 0.0)),
            max_contacts=int(d.get("max_contacts", 0)), holders=tuple(d.get("holders", ())),
            drops=int(d.get("drops", 0)),
            carry_origin=tuple(d["carry_origin"]) if d.get("carry_origin") is not None else None,
        )


@dataclass(frozen=True, eq=False)
class AgentState:
    """One arm: its placed model and current configuration. FK is computed lazily and cached."""

    id: int
    model: RobotModel
    config: JointConfig

    def frames(self) -> np.ndarray:
        f = self.__dict__.get("_frames")
        if f is None:
            f = fk_batch(self.model, self.config.values)[0]
            f.setflags(write=False)
            object.__setattr__(self, "_frames", f)
        return f

    def tcp_matrix(self) -> np.ndarray:
        return self.frames()[-1]

    def tcp(self) -> Pose:
        return Pose.from_matrix(self.tcp_matrix())

    def capsules(self):
        a, b, r = capsules_world_arrays(self.model, self.frames()[None])
        return a[0], b[0], r

    def with_config(self, config: JointConfig) -> "AgentState":
        if config == self.config:
            return self
        return AgentState(self.id, self.model, config)

    def to_dict(self) -> dict:
        return {"id": self.id, "model_ref": self.model.name, "base_pose": self.model.base_pose.to_dict(),
                "config": self.config.to_dict()}


@dataclass(frozen=True)
class ContactTrack:
    """Open object-object contact: lateral position of ``a`` relative to ``b`` at onset."""

    a: str
    b: str
    start: tuple
    travel: float = 0.0


@dataclass(frozen=True, eq=False)
class SceneState:
    step: int
    objects: Mapping
    agents: tuple
    events: tuple = ()
    rng_seed: int = 0
    agent_contacts: frozenset = frozenset()
    contact_tracks: tuple = ()

    def __post_init__(self):
        if len(self.agents) < 1:
            raise ValueError("a scene needs at least one agent")
        object.__setattr__(self, "objects", dict(self.objects))
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "events", tuple(self.events))
        for i, a in enumerate(self.agents):
            if a.id != i:
                raise ValueError("agent ids must be 0..N-1 in order")

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    def agent(self, i: int) -> AgentState:
        if not isinstance(i, (int, np.integer)) or not 0 <= i < len(self.agents):
            raise InvalidAgent(f"no agent {i!r} (scene has {len(self.agents)})")
        return self.agents[i]

    def object(self, oid: str) -> SceneObject:
        try:
            return self.objects[oid]
        except KeyError:
            raise UnknownObject(oid) from None

    def tcp(self, i: int) -> Pose:
        return self.agent(i).tcp()

    def configs(self) -> dict:
        return {a.id: a.config for a in self.agents}

    def events_since(self, step_or_index: int) -> list:
        return list(self.events[step_or_index:])

    def held_by(self, agent: int) -> list:
        return [o.id for o in self.objects.values() if o.attached_to is not None and o.attached_to.agent == agent]

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "rng_seed": self.rng_seed,
            "agents": [a.to_dict() for a in self.agents],
            "objects": [o.to_dict() for o in self.objects.values()],
            "events": [e.to_dict() for e in self.events],
            "agent_contacts": sorted([list(p) for p in self.agent_contacts]),
            "contact_tracks": [[t.a, t.b, list(t.start), t.travel] for t in self.contact_tracks],
        }

    @classmethod
    def from_dict(cls, d: dict, models: Optional[Mapping[str, RobotModel]] = None) -> "SceneState":
        agents = []
        for a in d["agents"]:
            ref = a["model_ref"]
            base = models[ref] if models and ref in models else bundled_model(ref)
            model = base.placed(Pose.from_dict(a["base_pose"]))
            agents.append(AgentState(int(a["id"]), model, JointConfig.from_dict(a["config"])))
        objects = {}
        for o in d["objects"]:
            obj = SceneObject.from_dict(o)
            objects[obj.id] = obj
        return cls(
            step=int(d["step"]), objects=objects, agents=tuple(agents),
            events=tuple(Event.from_dict(e) for e in d.get("events", ())),
            rng_seed=int(d.get("rng_seed", 0)),
            agent_contacts=frozenset(tuple(p) for p in d.get("agent_contacts", ())),
            contact_tracks=tuple(ContactTrack(t[0], t[1], tuple(t[2]), float(t[3]))
                                 for t in d.get("contact_tracks", ())),
        )

    def fingerprint(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def __eq__(self, other) -> bool:
        if not isinstance(other, SceneState):
            return NotImplemented
        return self.fingerprint() == other.fingerprint()

    __hash__ = None


@dataclass(frozen=True)
class JointAction:
    per_agent: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "per_agent", dict(self.per_agent))


def make_scene(agents: Sequence[tuple], objects: Sequence[SceneObject] = (), rng_seed: int = 0) -> SceneState:
    """Build a scene from (placed model, JointConfig) pairs and objects."""
    states = tuple(AgentState(i, m, q if isinstance(q, JointConfig) else JointConfig(q))
                   for i, (m, q) in enumerate(agents))
    for s in states:
        if len(s.config) != s.model.dof:
            raise DimensionMismatch(f"agent {s.id}: config has {len(s.config)} values, model {s.model.dof}")
    return SceneState(0, {o.id: o for o in objects}, states, (), rng_seed)


# ---------------------------------------------------------------------------
# Support surfaces


def support_height(scene: SceneState, obj: SceneObject, exclude=()) -> float:
    """Height of the highest resting surface under ``obj``'s centroid that lies below it."""
    x, y, _ = obj.pose.translation
    bottom = obj.bottom_z()
    best = 0.0
    for other in scene.objects.values():
        if other.id == obj.id or other.id in exclude or other.attached_to is not None:
            continue
        if other.container:
            c = other.pose.translation
            if math.hypot(x - c[0], y - c[1]) <= other.inner_radius:
                surface = other.bottom_z() + other.floor_thickness
            else:
                continue
        else:
            probe = np.array([x, y, other.pose.translation[2]])
            if other.signed_distance(probe)[0] > 0:
                continue
            surface = other.top_z()
        if surface <= bottom + 1e-9 and surface > best:
            best = surface
    return best


def _settle_object(scene: SceneState, obj: SceneObject, cfg: WorldConfig):
    """Rest a free object on its support. Returns (object, fell, height)."""
    surface = support_height(scene, obj)
    gap = obj.bottom_z() - surface
    t = obj.pose.translation.copy()
    t[2] -= gap
    rested = replace(obj, pose=Pose(t, obj.pose.rotation), lift_ref=None, carry_origin=None)
    return rested, gap > cfg.snap_tol, gap


# ---------------------------------------------------------------------------
# Transition


def _check_action(scene: SceneState, action: JointAction) -> dict:
    out = {}
    for aid, target in action.per_agent.items():
        agent = scene.agent(aid)
        cfg = target if isinstance(target, JointConfig) else JointConfig(target, agent.config.gripper_state)
        if len(cfg) != agent.model.dof:
            raise DimensionMismatch(f"agent {aid}: expected {agent.model.dof} joints, got {len(cfg)}")
        out[aid] = cfg
    return out


def step(scene: SceneState, action: Optional[JointAction] = None, cfg: WorldConfig = DEFAULT_WORLD) -> SceneState:
    """One tick of the joint transition: move commanded agents, carry objects, record events."""
    targets = _check_action(scene, action or JointAction())
    agents = []
    for agent in scene.agents:
        target = targets.get(agent.id)
        if target is None:
            agents.append(agent)
            continue
        q = agent.config.values
        dq = np.clip(target.values - q, -cfg.max_joint_step, cfg.max_joint_step)
        nq = agent.model.clamp(q + dq)
        agents.append(agent.with_config(JointConfig(nq, target.gripper_state)))
    return _advance(scene, tuple(agents), cfg)


def _advance(scene: SceneState, agents: tuple, cfg: WorldConfig, extra_events=(), objects=None) -> SceneState:
    t = scene.step + 1
    events = list(scene.events) + list(extra_events)
    objs = dict(scene.objects if objects is None else objects)
    tcps = {a.id: a.tcp_matrix() for a in agents}

    for oid, obj in list(objs.items()):
        if obj.attached_to is None:
            continue
        m = tcps[obj.attached_to.agent] @ obj.attached_to.offset.matrix()
        pose = Pose.from_matrix(m)
        obj = replace(obj, pose=pose)
        kept = []
        for sec in obj.secondary:
            expect = (tcps[sec.agent] @ sec.offset.matrix())[:3, 3]
            drift = float(np.linalg.norm(expect - pose.translation))
            if drift > cfg.drop_tol:
                events.append(Event(t, "Dropped", {"object": oid, "agent": sec.agent,
                                                   "reason": "contact separated", "drift": drift}))
            else:
                kept.append(sec)
        obj = replace(obj, secondary=tuple(kept))
        if obj.bimanual and not obj.secondary:
            origin = obj.carry_origin
            if origin is None:
                obj = replace(obj, carry_origin=tuple(float(v) for v in pose.translation))
            else:
                moved = float(np.linalg.norm(pose.translation - np.asarray(origin)))
                if moved > cfg.drop_tol:
                    holder = obj.attached_to.agent
                    obj = replace(obj, attached_to=None, drops=obj.drops + 1)
                    tmp = SceneState(t, objs, agents)
                    obj, _, h = _settle_object(tmp, obj, cfg)
                    events.append(Event(t, "Dropped", {"object": oid, "agent": holder,
                                                       "reason": "unsupported bimanual object",
                                                       "height": h}))
                    objs[oid] = obj
                    continue
        else:
            obj = replace(obj, carry_origin=None)
        if obj.lift_ref is not None:
            lift = float(pose.translation[2]) - obj.lift_ref
            obj = replace(obj, peak_lift=max(obj.peak_lift, lift))
            if obj.contact_count >= 2:
                obj = replace(obj, peak_lift_multi=max(obj.peak_lift_multi, lift))
        obj = replace(obj, max_contacts=max(obj.max_contacts, obj.contact_count))
        objs[oid] = obj

    tracks = _update_contacts(objs, scene.contact_tracks, t, events, cfg)
    contacts = scene.agent_contacts
    if cfg.track_agent_contacts and len(agents) > 1:
        contacts = _agent_contacts(agents, scene, contacts, t, events)
    return SceneState(t, objs, agents, tuple(events), scene.rng_seed, contacts, tracks)


def _agent_contacts(agents, scene, previous, t, events) -> frozenset:
    caps = [a.capsules() for a in agents]
    active = set()
    for i in range(len(agents)):
        for j in range(i + 1, len(agents)):
            if (agents[i] is scene.agents[i] and agents[j] is scene.agents[j]):
                if (i, j) in previous:
                    active.add((i, j))
                continue
            d = capsule_distance_matrix(*caps[i], *caps[j])
            dmin = float(d.min()) if d.size else math.inf
            if dmin < 0:
                active.add((i, j))
                if (i, j) not in previous:
                    k = np.unravel_index(int(np.argmin(d)), d.shape)
                    where = 0.5 * (caps[i][0][k[0]] + caps[i][1][k[0]])
                    events.append(Event(t, "InterAgentContact", {
                        "agents": [i, j], "distance": dmin, "capsules": [int(k[0]), int(k[1])],
                        "location": [float(v) for v in where]}))
    return frozenset(active)


def _lateral_offset(a: SceneObject, b: SceneObject) -> np.ndarray:
    return a.pose.translation[:2] - b.pose.translation[:2]


def _update_contacts(objs: dict, tracks: tuple, t: int, events: list, cfg: WorldConfig) -> tuple:
    """Track contacts between carried objects and everything else; closed strokes become events."""
    open_tracks = {(tr.a, tr.b): tr for tr in tracks}
    new = []
    carried = [o for o in objs.values() if o.attached_to is not None]
    seen = set()
    for a in carried:
        samples = a.pose.apply(a.shape.surface_samples())
        for b in objs.values():
            if b.id == a.id:
                continue
            if b.attached_to is not None and b.attached_to.agent == a.attached_to.agent:
                continue
            if np.linalg.norm(a.pose.translation - b.pose.translation) > (
                    a.shape.bounding_radius + b.shape.bounding_radius + cfg.contact_tol):
                touching = False
            else:
                touching = float(np.min(b.signed_distance(samples))) <= cfg.contact_tol
            key = (a.id, b.id)
            if touching:
                seen.add(key)
                off = _lateral_offset(a, b)
                tr = open_tracks.get(key)
                if tr is None:
                    tr = ContactTrack(a.id, b.id, tuple(float(v) for v in off), 0.0)
                else:
                    travel = float(np.linalg.norm(off - np.asarray(tr.start)))
                    tr = replace(tr, travel=max(tr.travel, travel))
                new.append(tr)
    for key, tr in open_tracks.items():
        if key not in seen:
            events.append(Event(t, "ObjectContact", {"objects": [tr.a, tr.b], "travel": tr.travel,
                                                     "stroke": tr.travel >= cfg.stroke_min_travel}))
    return tuple(new)


# ---------------------------------------------------------------------------
# Primitives


@dataclass(frozen=True)
class PrimitiveResult:
    scene: SceneState
    events: tuple
    start_configs: dict
    end_configs: dict
    targets: dict = field(default_factory=dict)
    reach_gaps: dict = field(default_factory=dict)
    steps: int = 0
    truncated: bool = False


def _delta_target(tcp: np.ndarray, element: PlanElement, pos: int) -> np.ndarray:
    out = tcp.copy()
    if element.primitive in ("MOVE", "PLACE"):
        out[:3, 3] += [element.param("delta_x", pos), element.param("delta_y", pos), element.param("delta_z", pos)]
    elif element.primitive == "ROTATE":
        dq = quat_from_rpy(element.param("delta_roll", pos), element.param("delta_pitch", pos),
                           element.param("delta_yaw", pos))
        out[:3, :3] = quat_to_matrix(dq) @ tcp[:3, :3]
    return out


def drive(scene: SceneState, targets: Mapping[int, JointConfig], cfg: WorldConfig = DEFAULT_WORLD,
          max_steps: Optional[int] = None):
    """Step until every agent in ``targets`` reaches its configuration.

    Agents move in lockstep: the joint-space path of each is split into the same number
    of ticks, so synchronized arms stay in step. Returns (scene, ticks, finished).
    """
    if not targets:
        return scene, 0, True
    starts = {i: scene.agent(i).config.values for i in targets}
    n = 0
    for i, tgt in targets.items():
        span = float(np.max(np.abs(tgt.values - starts[i]))) if len(tgt) else 0.0
        n = max(n, int(math.ceil(span / cfg.max_joint_step - 1e-9)))
    n = max(n, 1)
    budget = n if max_steps is None else min(n, max_steps)
    for k in range(1, budget + 1):
        alpha = k / n
        cmd = {}
        for i, tgt in targets.items():
            vals = tgt.values if k == n else starts[i] + alpha * (tgt.values - starts[i])
            cmd[i] = JointConfig(vals, tgt.gripper_state)
        scene = step(scene, JointAction(cmd), cfg)
    return scene, budget, budget == n


def _grasp(scene: SceneState, element: PlanElement, cfg: WorldConfig) -> SceneState:
    agents = list(scene.agents)
    objs = dict(scene.objects)
    events = []
    t = scene.step + 1
    for pos, aid in enumerate(element.agents):
        agent = agents[aid]
        width = element.param("target_width", pos, default=agent.model.gripper.close_command)
        agents[aid] = agent.with_config(agent.config.with_gripper(width))
        tcp = agent.tcp_matrix()
        point = tcp[:3, 3]
        best, best_d = None, math.inf
        for o in objs.values():
            d = float(o.signed_distance(point)[0])
            if d < best_d - 1e-12:
                best, best_d = o, d
        if best is None or best_d > cfg.grasp_capture_tol:
            events.append(Event(t, "GraspMissed", {"agent": aid, "reason": "no object within reach of fingers",
                                                   "nearest": best.id if best else None,
                                                   "distance": best_d if best else None}))
            continue
        if width > agent.model.gripper.close_command + 1e-9:
            events.append(Event(t, "GraspMissed", {"agent": aid, "object": best.id,
                                                   "reason": "gripper not closed enough", "command": width}))
            continue
        if not best.bimanual:
            span = best.grasp_width
            if span is None:
                span = best.shape.extent_along(tcp[:3, 1], best.pose.rotation_matrix())
            if span > agent.model.gripper.max_width + 1e-9:
                events.append(Event(t, "GraspMissed", {"agent": aid, "object": best.id,
                                                       "reason": "object wider than gripper", "width": span}))
                continue
        offset = Pose.from_matrix(np.linalg.inv(tcp) @ best.pose.matrix())
        att = Attachment(aid, offset)
        if best.attached_to is None:
            obj = replace(best, attached_to=att, lift_ref=float(best.pose.translation[2]),
                          holders=best.holders + (aid,), carry_origin=None)
            role = "primary"
        elif aid in best.agents_in_contact():
            obj = best
            role = "existing"
        else:
            obj = replace(best, secondary=best.secondary + (att,))
            role = "secondary"
        obj = replace(obj, max_contacts=max(obj.max_contacts, obj.contact_count))
        objs[obj.id] = obj
        events.append(Event(t, "GraspAttached", {"agent": aid, "object": obj.id, "role": role,
                                                 "distance": best_d}))
    return _advance(scene, tuple(agents), cfg, events, objs)


def _release(scene: SceneState, element: PlanElement, cfg: WorldConfig) -> SceneState:
    agents = list(scene.agents)
    objs = dict(scene.objects)
    events = []
    t = scene.step + 1
    for aid in element.agents:
        agents[aid] = agents[aid].with_config(agents[aid].config.with_gripper(1.0))
        for oid in list(objs):
            obj = objs[oid]
            if any(s.agent == aid for s in obj.secondary):
                obj = replace(obj, secondary=tuple(s for s in obj.secondary if s.agent != aid))
                objs[oid] = obj
                events.append(Event(t, "Released", {"agent": aid, "object": oid, "role": "secondary"}))
                continue
            if obj.attached_to is None or obj.attached_to.agent != aid:
                continue
            if obj.secondary:
                heir = obj.secondary[0]
                obj = replace(obj, attached_to=heir, secondary=obj.secondary[1:],
                              holders=obj.holders + (heir.agent,))
                objs[oid] = obj
                events.append(Event(t, "Released", {"agent": aid, "object": oid, "handover_to": heir.agent}))
                continue
            obj = replace(obj, attached_to=None)
            tmp = SceneState(scene.step, objs, scene.agents)
            rested, fell, gap = _settle_object(tmp, obj, cfg)
            if fell:
                rested = replace(rested, drops=rested.drops + 1)
            objs[oid] = rested
            events.append(Event(t, "Released", {"agent": aid, "object": oid, "gap": gap}))
            if fell:
                events.append(Event(t, "Dropped", {"agent": aid, "object": oid,
                                                   "reason": "released above support", "height": gap}))
    return _advance(scene, tuple(agents), cfg, events, objs)


def plan_targets(scene: SceneState, element: PlanElement, cfg: WorldConfig = DEFAULT_WORLD):
    """IK targets for a Move/Rotate/Place element: ({agent: JointConfig}, {agent: tcp 4x4}, gaps, events)."""
    configs, tcps, gaps, events = {}, {}, {}, []
    for pos, aid in enumerate(element.agents):
        agent = scene.agent(aid)
        goal = _delta_target(agent.tcp_matrix(), element, pos)
        tcps[aid] = goal
        if np.array_equal(goal, agent.tcp_matrix()):
            configs[aid] = agent.config
            continue
        try:
            configs[aid] = inverse_kinematics(agent.model, Pose.from_matrix(goal), agent.config, cfg.ik)
        except ReachLimit as exc:
            if cfg.strict_reach:
                raise
            configs[aid] = exc.closest_q.with_gripper(agent.config.gripper_state)
            gaps[aid] = exc.residual_gap
            events.append(Event(scene.step + 1, "ReachLimit", {
                "agent": aid, "target": [float(v) for v in goal[:3, 3]],
                "actual": [float(v) for v in exc.actual], "gap": exc.residual_gap,
                "rotation_gap": exc.rotation_gap}))
    return configs, tcps, gaps, events


def apply_primitive(scene: SceneState, element: PlanElement, models=None, cfg: WorldConfig = DEFAULT_WORLD,
                    max_steps: Optional[int] = None) -> PrimitiveResult:
    """Execute one action element to completion (or until ``max_steps`` ticks are used).

    ``models`` is accepted for interface symmetry; agents carry their placed models.
    ReachLimit is reported as an event and the arm goes to the closest configuration,
    unless ``cfg.strict_reach`` is set, in which case it is raised.
    """
    if element.is_checkpoint:
        raise CheckpointNotExecutable(f"element {element.index} is a checkpoint")
    for aid in element.agents:
        scene.agent(aid)
    if len(set(element.agents)) != len(element.agents):
        raise InvalidAgent(f"element {element.index} lists an agent twice")
    start_events = len(scene.events)
    start_step = scene.step
    start_configs = {aid: scene.agent(aid).config for aid in element.agents}
    targets, gaps, finished = {}, {}, True
    if element.primitive in ("MOVE", "ROTATE", "PLACE"):
        configs, targets, gaps, ev = plan_targets(scene, element, cfg)
        if ev:
            scene = replace(scene, events=scene.events + tuple(ev))
        scene, _, finished = drive(scene, configs, cfg, max_steps)
    if finished and element.primitive == "GRASP":
        scene = _grasp(scene, element, cfg)
    if finished and element.primitive in ("RELEASE", "PLACE"):
        scene = _release(scene, element, cfg)
    if scene.step == start_step:
        scene = _advance(scene, scene.agents, cfg)
    end_configs = {aid: scene.agent(aid).config for aid in element.agents}
    return PrimitiveResult(scene, tuple(scene.events[start_events:]), start_configs, end_configs,
                           {k: v.copy() for k, v in targets.items()}, gaps, scene.step - start_step,
                           not finished)


def grasp_yaw(obj: SceneObject):
    """(yaw, period) of the finger-closing frame that straddles ``obj``; yaw None if any works.

    The returned yaw is the heading of the TCP x axis: along the longest horizontal
    side of a box, along the axis of a lying cylinder.
    """
    rot = obj.pose.rotation_matrix()
    if obj.shape.kind == "sphere":
        return None, 0.0
    vertical = int(np.argmax(np.abs(rot[2])))
    if obj.shape.kind == "cylinder":
        if vertical == 2:
            return None, 0.0
        axis = rot[:, 2]
        return math.atan2(axis[1], axis[0]), math.pi
    he = obj.shape.half_extents
    horiz = [k for k in range(3) if k != vertical]
    a, b = horiz
    if abs(he[a] - he[b]) < 1e-9:
        return math.atan2(rot[1, a], rot[0, a]), 0.5 * math.pi
    k = a if he[a] > he[b] else b
    return math.atan2(rot[1, k], rot[0, k]), math.pi


def finger_yaw(tcp: np.ndarray) -> float:
    return math.atan2(tcp[1, 0], tcp[0, 0])


def check_invariants(scene: SceneState) -> None:
    """Assert structural invariants (single primary attachment, consistent contacts)."""
    for obj in scene.objects.values():
        ids = obj.agents_in_contact()
        assert len(ids) == len(set(ids)), f"{obj.id}: duplicate contact"
        if obj.secondary:
            assert obj.attached_to is not None, f"{obj.id}: secondary contact without primary"
    for e in scene.events:
        assert e.step <= scene.step
