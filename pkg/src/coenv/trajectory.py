"""Episode records shared by both executors."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .plan import ExecutionPlan, PlanElement
from .transfer import PrimitiveRecord
from .world import SceneState


@dataclass(frozen=True)
class StepRecord:
    """One executed action: configurations of all agents before/after plus events."""

    seq: int
    element: PlanElement
    start_configs: dict
    end_configs: dict
    events: tuple
    verify: Optional[dict] = None
    revision: int = 0
    plan_pos: float = 0.0
    origin: str = "plan"  # plan | correction | drift | script

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "element": self.element.to_dict(),
            "start": {str(k): v.to_dict() for k, v in sorted(self.start_configs.items())},
            "end": {str(k): v.to_dict() for k, v in sorted(self.end_configs.items())},
            "events": [e.to_dict() for e in self.events],
            "origin": self.origin,
            "revision": self.revision,
        }


@dataclass(frozen=True)
class CheckpointRecord:
    seq: int
    name: str
    phi: int
    report: dict
    revision: int = 0
    plan_pos: float = 0.0
    step: int = 0

    def to_dict(self) -> dict:
        return {"seq": self.seq, "name": self.name, "phi": self.phi, "report": self.report,
                "revision": self.revision, "step": self.step}


@dataclass
class Trajectory:
    """Initial state, executed actions in order, checkpoint evaluations, and the state after each action."""

    initial: SceneState
    entries: list = field(default_factory=list)
    states: list = field(default_factory=list)

    @property
    def records(self) -> list:
        return [e for e in self.entries if isinstance(e, StepRecord)]

    @property
    def checkpoints(self) -> list:
        return [e for e in self.entries if isinstance(e, CheckpointRecord)]

    @property
    def final(self) -> SceneState:
        return self.states[-1] if self.states else self.initial

    def next_seq(self) -> int:
        return len(self.entries) + 1

    def add_step(self, rec: StepRecord, state: SceneState) -> None:
        self.entries.append(rec)
        self.states.append(state)

    def add_checkpoint(self, rec: CheckpointRecord) -> None:
        self.entries.append(rec)

    def primitive_records(self) -> list:
        return [PrimitiveRecord(l, r.start_configs, r.end_configs) for l, r in enumerate(self.records, start=1)]

    def __len__(self) -> int:
        return len(self.records)

    def to_dict(self) -> dict:
        return {"elements": [r.to_dict() for r in self.records],
                "checkpoints": [c.to_dict() for c in self.checkpoints]}


@dataclass
class EpisodeResult:
    outcome: str  # Success | Fail | Aborted
    trajectory: Trajectory
    milestones: list
    mode: str = "interactive"
    replans: int = 0
    planner_calls: int = 0
    reset_count: int = 0
    views_requested: int = 0
    corrections: int = 0
    rounds: int = 0
    feedback: list = field(default_factory=list)
    plan: Optional[ExecutionPlan] = None
    error: str = ""

    @property
    def final_scene(self) -> SceneState:
        return self.trajectory.final

    @property
    def success(self) -> bool:
        return self.outcome == "Success"

    def summary(self) -> dict:
        return {"outcome": self.outcome, "mode": self.mode, "milestones": self.milestones,
                "replans": self.replans, "planner_calls": self.planner_calls,
                "reset_count": self.reset_count, "views_requested": self.views_requested,
                "corrections": self.corrections, "rounds": self.rounds, "elements": len(self.trajectory),
                "error": self.error}


def configs_of(scene: SceneState) -> dict:
    return {a.id: a.config for a in scene.agents}
