import math
from typing import Any, Dict, List, Optional, Union

from pydantic import BaseModel, Field, computed_field, field_validator, model_validator

SCHEMA_VERSION = "1"
NOT_AVAILABLE = "n/a"


class OriginDocument(BaseModel):
    xyz: List[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0])
    rpy: List[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0])

    @field_validator("xyz", "rpy")
    @classmethod
    def three_values(cls, value):
        if len(value) != 3:
            raise ValueError("origin xyz and rpy need 3 values")
        return value


class JointDocument(BaseModel):
    name: str
    kind: str
    parent: str
    child: str
    origin: Optional[OriginDocument] = None
    transform: Optional[List[List[float]]] = None

    @model_validator(mode="after")
    def one_placement(self):
        if self.origin is not None and self.transform is not None:
            raise ValueError(f"joint '{self.name}' sets both origin and transform")
        return self


class LimitsDocument(BaseModel):
    position: List[List[float]]
    velocity: List[float]
    acceleration: List[float]
    jerk: List[float]


class SphereDocument(BaseModel):
    link: str
    center: List[float]
    radius: float

    @field_validator("center")
    @classmethod
    def three_values(cls, value):
        if len(value) != 3:
            raise ValueError("sphere center needs 3 values")
        return value


class RobotDocument(BaseModel):
    schema_version: str = SCHEMA_VERSION
    name: str = "robot"
    base_link: Optional[str] = None
    joints: List[JointDocument]
    limits: LimitsDocument
    spheres: List[SphereDocument] = Field(default_factory=list)
    self_collision_pairs: Optional[List[List[int]]] = None
    self_collision_ignore: List[List[str]] = Field(default_factory=list)
    retract_config: List[float]
    ee_link: str

    @computed_field
    @property
    def dof(self) -> int:
        return sum(1 for joint in self.joints if joint.kind != "fixed")


class ObstacleDocument(BaseModel):
    name: str
    pose: List[float]
    dims: List[float]
    enabled: bool = True

    @field_validator("pose")
    @classmethod
    def seven_values(cls, value):
        if len(value) != 7:
            raise ValueError("pose needs [x, y, z, qw, qx, qy, qz]")
        return value

    @field_validator("dims")
    @classmethod
    def positive_dims(cls, value):
        if len(value) != 3 or any(v <= 0 for v in value):
            raise ValueError("dims need 3 positive full extents")
        return value


class SceneDocument(BaseModel):
    schema_version: str = SCHEMA_VERSION
    name: str = "scene"
    obstacles: List[ObstacleDocument] = Field(default_factory=list)


class ProblemDocument(BaseModel):
    schema_version: str = SCHEMA_VERSION
    id: Optional[str] = None
    robot_config: Optional[str] = None
    scene: Optional[str] = None
    start_q: List[float]
    goal_pose: Optional[List[float]] = None
    goal_q: Optional[List[float]] = None
    mode: str = "pose_goal"
    overrides: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def one_goal(self):
        if (self.goal_pose is None) == (self.goal_q is None):
            raise ValueError("problem needs exactly one of goal_pose or goal_q")
        if self.goal_pose is not None and len(self.goal_pose) != 7:
            raise ValueError("goal_pose needs [x, y, z, qw, qx, qy, qz]")
        if self.mode not in ("pose_goal", "cspace_goal"):
            raise ValueError(f"unknown mode '{self.mode}'")
        if self.mode == "cspace_goal" and self.goal_q is None:
            raise ValueError("cspace_goal mode needs goal_q")
        return self


class ProblemSetEntry(BaseModel):
    id: str
    scene: Optional[str] = None
    start_q: List[float]
    goal_pose: Optional[List[float]] = None
    goal_q: Optional[List[float]] = None
    mode: str = "pose_goal"


class ProblemSetDocument(BaseModel):
    schema_version: str = SCHEMA_VERSION
    robot_config: str
    scene: Optional[str] = None
    problems: List[ProblemSetEntry] = Field(default_factory=list)

    @model_validator(mode="after")
    def unique_ids(self):
        ids = [p.id for p in self.problems]
        if len(ids) != len(set(ids)):
            raise ValueError("problem ids must be unique")
        return self


class ResultDocument(BaseModel):
    schema_version: str = SCHEMA_VERSION
    success: bool
    failure_reason: Optional[str] = None
    dt_final: Optional[float] = None
    interpolation_dt: Optional[float] = None
    positions: List[List[float]] = Field(default_factory=list)
    execution_dt: Optional[float] = None
    execution_positions: List[List[float]] = Field(default_factory=list)
    metrics: Dict[str, Optional[float]] = Field(default_factory=dict)
    diagnostics: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def consistent(self):
        if self.success and (not self.positions or self.interpolation_dt is None):
            raise ValueError("successful result needs positions and interpolation_dt")
        if self.interpolation_dt is not None and self.interpolation_dt <= 0:
            raise ValueError("interpolation_dt must be positive")
        return self

    @classmethod
    def from_result(cls, result) -> "ResultDocument":
        trajectory = result.trajectory
        execution = result.execution_trajectory
        return cls(
            success=result.success,
            failure_reason=result.failure_reason,
            dt_final=result.dt_final,
            interpolation_dt=trajectory.dt if trajectory is not None else None,
            positions=trajectory.positions.tolist() if trajectory is not None else [],
            execution_dt=execution.dt if execution is not None else None,
            execution_positions=execution.positions.tolist() if execution is not None else [],
            metrics={k: float(v) for k, v in result.metrics.items()},
            diagnostics=dict(result.diagnostics),
        )

    def to_result(self):
        from app.cost_rollout import make_trajectory
        from app.data_structures import MotionResult

        trajectory = make_trajectory(self.positions, self.interpolation_dt) if self.positions else None
        execution = None
        if self.execution_positions:
            execution = make_trajectory(self.execution_positions, self.execution_dt)
        return MotionResult(
            success=self.success,
            failure_reason=self.failure_reason,
            trajectory=trajectory,
            dt_final=self.dt_final,
            metrics=dict(self.metrics),
            diagnostics=dict(self.diagnostics),
            execution_trajectory=execution,
        )


class ReportDocument(BaseModel):
    schema_version: str = SCHEMA_VERSION
    mode: str = "full"
    problems: int = 0
    success_percent: Union[float, str] = NOT_AVAILABLE
    aggregates: Dict[str, Dict[str, Union[float, str]]] = Field(default_factory=dict)


class IkSolutionDocument(BaseModel):
    q: List[float]
    position_error: float
    orientation_error: float


class IkResultDocument(BaseModel):
    schema_version: str = SCHEMA_VERSION
    solutions: List[IkSolutionDocument] = Field(default_factory=list)


class PlanRequest(BaseModel):
    problem: ProblemDocument
    seed: Optional[int] = None


class ValidateRequest(BaseModel):
    problem: ProblemDocument
    result: ResultDocument


class ViolationDocument(BaseModel):
    step: int
    kind: str
    detail: str


class ValidationDocument(BaseModel):
    schema_version: str = SCHEMA_VERSION
    ok: bool
    violations: List[ViolationDocument] = Field(default_factory=list)
    position_error: Optional[float] = None
    orientation_error: Optional[float] = None

    @classmethod
    def from_report(cls, report) -> "ValidationDocument":
        def finite(value):
            return value if math.isfinite(value) else None

        return cls(
            ok=report.ok,
            violations=[ViolationDocument(step=v.step, kind=v.kind, detail=v.detail) for v in report.violations],
            position_error=finite(report.position_error),
            orientation_error=finite(report.orientation_error),
        )
