"""A small loop-free statement language for whole-episode programs, and its interpreter.

Statements (JSON objects, executed in order):

    {"op": "query", "var": "p", "path": "objects.cube_red.position"}
    {"op": "let", "var": "d", "expr": "p - t + [0, 0, 0.1]"}
    {"op": "act", "type": "MOVE", "agent_id": 0, "params": {"delta_x": "d[0]", ...}}
    {"op": "checkpoint", "name": "grasp_red", "type": "grasp", "notes": "..."}
    {"op": "print", "expr": "norm(d)"}

Expressions allow numbers, variables, list literals, indexing, + - * / and unary minus,
and the functions min, max, norm and abs. Nothing else parses.
"""

from __future__ import annotations

import ast
import time
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .errors import CoEnvError, ScriptError, ScriptTimeout
from .observe import describe
from .plan import PRIMITIVE_PARAMS, action
from .trajectory import StepRecord, Trajectory, configs_of
from .world import DEFAULT_WORLD, SceneState, WorldConfig, apply_primitive, finger_yaw, grasp_yaw

SCRIPT_SCHEMA = "coenv-script/1"
OPS = ("query", "let", "act", "checkpoint", "print")
FUNCTIONS = ("min", "max", "norm", "abs")

_OBJECT_FIELDS = ("position", "rpy", "grasp_yaw", "half_height", "attached")
_ROBOT_FIELDS = ("position", "rpy", "finger_yaw", "gripper", "joints")


@dataclass(frozen=True)
class PlanScript:
    statements: tuple
    round: int = 1

    def __post_init__(self):
        object.__setattr__(self, "statements", tuple(dict(s) for s in self.statements))

    def __len__(self) -> int:
        return len(self.statements)

    def to_dict(self) -> dict:
        return {"schema": SCRIPT_SCHEMA, "round": self.round, "statements": [dict(s) for s in self.statements]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "PlanScript":
        if d.get("schema", SCRIPT_SCHEMA) != SCRIPT_SCHEMA:
            raise ValueError(f"unsupported script schema {d.get('schema')!r}")
        return cls(tuple(d.get("statements", ())), int(d.get("round", 1)))


@dataclass(frozen=True)
class ScriptLimits:
    step_budget: int = 20000
    wall_budget: float = 30.0


@dataclass
class RunOutput:
    trajectory: Trajectory
    checkpoints: list = field(default_factory=list)
    stdout: str = ""
    error: Optional[CoEnvError] = None

    @property
    def events(self) -> tuple:
        return self.trajectory.final.events

    @property
    def final(self) -> SceneState:
        return self.trajectory.final


# ---------------------------------------------------------------------------
# Expressions

_NODES = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Constant, ast.Name, ast.Load, ast.List,
          ast.Subscript, ast.Call, ast.Add, ast.Sub, ast.Mult, ast.Div, ast.USub, ast.UAdd)


def parse_expr(text) -> ast.Expression:
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        text = repr(float(text))
    if not isinstance(text, str):
        raise ValueError(f"expression must be a string, got {type(text).__name__}")
    tree = ast.parse(text, mode="eval")
    for node in ast.walk(tree):
        if not isinstance(node, _NODES):
            raise ValueError(f"'{type(node).__name__}' is not allowed in expressions")
        if isinstance(node, ast.Constant) and (isinstance(node.value, bool) or
                                               not isinstance(node.value, (int, float))):
            raise ValueError(f"constant {node.value!r} is not a number")
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS or node.keywords:
                raise ValueError("only min, max, norm and abs may be called")
    return tree


def free_names(tree: ast.AST) -> set:
    called = {id(n.func) for n in ast.walk(tree) if isinstance(n, ast.Call)}
    return {n.id for n in ast.walk(tree) if isinstance(n, ast.Name) and id(n) not in called}


def _eval(node, env):
    if isinstance(node, ast.Expression):
        return _eval(node.body, env)
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        return env[node.id]
    if isinstance(node, ast.List):
        return np.array([_scalar(_eval(e, env)) for e in node.elts], dtype=float)
    if isinstance(node, ast.UnaryOp):
        v = _eval(node.operand, env)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.Subscript):
        base = _eval(node.value, env)
        k = _scalar(_eval(node.slice, env))
        if np.ndim(base) != 1 or k != int(k):
            raise ValueError("indexing needs a vector and an integer index")
        return float(base[int(k)])
    if isinstance(node, ast.BinOp):
        a, b = _eval(node.left, env), _eval(node.right, env)
        if np.shape(a) != np.shape(b) and np.ndim(a) and np.ndim(b):
            raise ValueError(f"shape mismatch {np.shape(a)} vs {np.shape(b)}")
        if isinstance(node.op, ast.Add):
            return a + b
        if isinstance(node.op, ast.Sub):
            return a - b
        if isinstance(node.op, ast.Mult):
            return a * b
        if np.any(np.asarray(b) == 0):
            raise ZeroDivisionError("division by zero")
        return a / b
    if isinstance(node, ast.Call):
        args = [_eval(x, env) for x in node.args]
        name = node.func.id
        if name == "norm":
            if len(args) != 1:
                raise TypeError("norm takes one argument")
            return float(np.linalg.norm(args[0]))
        if name == "abs":
            if len(args) != 1:
                raise TypeError("abs takes one argument")
            return np.abs(args[0])
        if not args:
            raise TypeError(f"{name} needs at least one argument")
        vals = args[0] if len(args) == 1 else np.array([_scalar(a) for a in args])
        return float(np.min(vals) if name == "min" else np.max(vals))
    raise ValueError(f"unsupported node {type(node).__name__}")


def _scalar(v) -> float:
    if np.ndim(v) != 0:
        raise ValueError("expected a scalar")
    return float(v)


def evaluate(text, env: Mapping):
    return _eval(parse_expr(text), env)


# ---------------------------------------------------------------------------
# Static checks


def _param_exprs(st: Mapping) -> list:
    out = []
    for v in dict(st.get("params", {})).values():
        out.append(v if not isinstance(v, list) else "[" + ", ".join(str(x) for x in v) + "]")
    return out


def check_script(script: PlanScript) -> None:
    """Raise ScriptError at the first statement that is malformed or reads an undefined variable."""
    defined: set = set()
    for i, st in enumerate(script.statements):
        op = st.get("op")
        if op not in OPS:
            raise ScriptError(i, f"unknown op {op!r}")
        try:
            if op == "query":
                _check_path(st["path"])
            exprs = []
            if op in ("let", "print"):
                exprs.append(st["expr"])
            if op == "act":
                prim = str(st["type"]).upper()
                if prim not in PRIMITIVE_PARAMS:
                    raise ValueError(f"unknown primitive {st['type']!r}")
                extra = set(st.get("params", {})) - set(PRIMITIVE_PARAMS[prim])
                if extra:
                    raise ValueError(f"{prim} takes no parameter(s) {sorted(extra)}")
                if "agent_id" not in st:
                    raise ValueError("act needs an agent_id")
                exprs += _param_exprs(st)
            if op == "checkpoint" and not st.get("name"):
                raise ValueError("checkpoint needs a name")
            for e in exprs:
                missing = free_names(parse_expr(e)) - defined
                if missing:
                    raise ValueError(f"undefined variable(s) {sorted(missing)}")
        except (KeyError, ValueError, SyntaxError) as exc:
            raise ScriptError(i, str(exc)) from None
        if op in ("query", "let"):
            var = st.get("var", "")
            if not str(var).isidentifier() or var in FUNCTIONS:
                raise ScriptError(i, f"bad variable name {var!r}")
            defined.add(var)


def _check_path(path: str) -> None:
    parts = str(path).split(".")
    if parts == ["step"]:
        return
    if len(parts) != 3 or parts[0] not in ("objects", "robots"):
        raise ValueError(f"bad state path {path!r}")
    fields = _OBJECT_FIELDS if parts[0] == "objects" else _ROBOT_FIELDS
    if parts[2] not in fields:
        raise ValueError(f"unknown field {parts[2]!r} in {path!r}")
    if parts[0] == "robots" and not parts[1].isdigit():
        raise ValueError(f"robot index must be an integer in {path!r}")


def query(scene: SceneState, path: str):
    parts = path.split(".")
    if parts == ["step"]:
        return float(scene.step)
    kind, key, fld = parts
    if kind == "objects":
        o = scene.object(key)
        if fld == "position":
            return o.pose.translation.copy()
        if fld == "rpy":
            return np.array(o.pose.rpy())
        if fld == "half_height":
            return float(o.half_height())
        if fld == "attached":
            return float(o.attached_to.agent) if o.attached_to is not None else -1.0
        yaw, _ = grasp_yaw(o)
        if yaw is None:
            raise ValueError(f"object {key!r} has no preferred grasp yaw")
        return float(yaw)
    agent = scene.agent(int(key))
    if fld == "position":
        return agent.tcp().translation.copy()
    if fld == "rpy":
        return np.array(agent.tcp().rpy())
    if fld == "finger_yaw":
        return finger_yaw(agent.tcp_matrix())
    if fld == "gripper":
        return float(agent.config.gripper_state)
    return agent.config.values.copy()


# ---------------------------------------------------------------------------
# Execution


def _act_element(st: Mapping, env: Mapping, index: int):
    agents = st["agent_id"]
    n = len(agents) if isinstance(agents, list) else 1
    params = {}
    for k, v in dict(st.get("params", {})).items():
        if isinstance(v, list):
            val = np.array([_scalar(evaluate(x, env)) for x in v])
        else:
            val = evaluate(v, env)
        if np.ndim(val) == 0:
            params[k] = float(val)
        else:
            arr = np.asarray(val, dtype=float).reshape(-1)
            if len(arr) != n:
                raise ValueError(f"parameter {k} has {len(arr)} values for {n} agent(s)")
            params[k] = [float(x) for x in arr] if n > 1 else float(arr[0])
    return action(index, agents, str(st["type"]).upper(), **params)


def _fmt(v) -> str:
    if np.ndim(v) == 0:
        return f"{float(v):.6f}"
    return "[" + ", ".join(f"{float(x):.6f}" for x in np.asarray(v).reshape(-1)) + "]"


def execute_script(script: PlanScript, scene0: SceneState, models=None,
                   limits: ScriptLimits = ScriptLimits(), world: WorldConfig = DEFAULT_WORLD) -> RunOutput:
    """Interpret ``script`` from ``scene0``.

    Static problems raise ScriptError before anything runs. Failures during the run
    (bad arithmetic, unknown objects, budget exhaustion) end the run and are returned
    in ``error`` together with the partial trajectory.
    """
    check_script(script)
    traj = Trajectory(scene0)
    scene = scene0
    env: dict = {}
    out: list = []
    snaps: list = []
    error: Optional[CoEnvError] = None
    t0 = time.monotonic()
    n_act = 0
    for i, st in enumerate(script.statements):
        used = scene.step - scene0.step
        if used >= limits.step_budget or time.monotonic() - t0 > limits.wall_budget:
            error = ScriptTimeout(f"budget exhausted before statement {i}")
            break
        op = st["op"]
        try:
            if op == "query":
                env[st["var"]] = query(scene, st["path"])
            elif op == "let":
                env[st["var"]] = evaluate(st["expr"], env)
            elif op == "print":
                out.append(_fmt(evaluate(st["expr"], env)))
            elif op == "checkpoint":
                snaps.append({"name": st["name"], "type": st.get("type", "generic"), "notes": st.get("notes", ""),
                              "step": scene.step, "statement": i, "state": describe(scene)})
                out.append(f"CHECKPOINT {st['name']} step={scene.step}")
            else:
                n_act += 1
                el = _act_element(st, env, n_act)
                before = scene
                res = apply_primitive(scene, el, models, world, max_steps=limits.step_budget - used)
                scene = res.scene
                traj.add_step(StepRecord(traj.next_seq(), el, configs_of(before), configs_of(scene),
                                         res.events, origin="script", plan_pos=float(i)), scene)
                for e in res.events:
                    if e.kind == "ReachLimit":
                        p = e.payload
                        out.append(f"REACH_LIMIT agent={p['agent']} TARGET {_fmt(p['target'])} "
                                   f"ACTUAL {_fmt(p['actual'])} GAP {p['gap']:.6f}")
                    elif e.kind in ("GraspMissed", "Dropped", "InterAgentContact"):
                        out.append(f"{e.kind.upper()} {e.payload}")
                if res.truncated:
                    error = ScriptTimeout(f"step budget exhausted in statement {i}")
                    break
        except CoEnvError as exc:
            error = ScriptError(i, str(exc))
            break
        except (ValueError, TypeError, ZeroDivisionError, KeyError, IndexError) as exc:
            error = ScriptError(i, f"{type(exc).__name__}: {exc}")
            break
    if isinstance(error, ScriptTimeout):
        snaps.append({"name": "TIMEOUT_ERROR", "type": "generic", "notes": str(error), "step": scene.step,
                      "statement": None, "state": describe(scene)})
        out.append(f"TIMEOUT_ERROR {error}")
    elif error is not None:
        out.append(f"SCRIPT_ERROR {error}")
    return RunOutput(traj, snaps, "\n".join(out) + ("\n" if out else ""), error)
