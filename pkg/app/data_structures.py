from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

from numpy.typing import NDArray

from .models import Pose


@dataclass
class KinematicsResult:
    sphere_positions: NDArray  # B x M x 3
    sphere_radii: NDArray  # M
    ee_position: NDArray  # B x 3
    ee_quaternion: NDArray  # B x 4, w >= 0
    link_transforms: NDArray  # B x L x 4 x 4

    def ee_pose(self, index: int = 0) -> Pose:
        return Pose(self.ee_position[index], self.ee_quaternion[index])


@dataclass
class CollisionQueryResult:
    cost: float
    gradient: NDArray

    @property
    def in_contact(self) -> bool:
        return self.cost > 0


@dataclass
class Trajectory:
    positions: NDArray
    dt: float
    velocity: NDArray
    acceleration: NDArray
    jerk: NDArray

    @property
    def num_steps(self) -> int:
        return self.positions.shape[0]

    @property
    def motion_time(self) -> float:
        return (self.num_steps - 1) * self.dt


@dataclass
class LineSearchResult:
    theta: NDArray
    cost: NDArray
    gradient: NDArray
    index: NDArray  # chosen magnitude index per seed


@dataclass
class LbfgsResult:
    best_cost: NDArray
    best_theta: NDArray
    trace: NDArray  # (iterations + 1) x B best-so-far costs
    iterations: int


@dataclass
class PathResult:
    found: bool
    path: List[int]
    length: float


@dataclass
class PlanResult:
    found: bool
    path: Optional[NDArray] = None  # P x D waypoints
    length: float = float("inf")
    diagnostic: str = ""


@dataclass
class IkSolution:
    q: NDArray
    position_error: float
    orientation_error: float
    score: float = 0.0


@dataclass
class SeedBatch:
    seeds: NDArray  # K x T x D
    fallback: NDArray  # K, True where graph seeding fell back to linear


@dataclass
class TrajOptResult:
    positions: NDArray  # K x T x D, boundary aliases materialized
    costs: NDArray
    feasible: NDArray
    position_errors: NDArray
    rotation_errors: NDArray
    dt: float


@dataclass
class MotionResult:
    success: bool
    failure_reason: Optional[str] = None
    trajectory: Optional[Trajectory] = None
    dt_final: Optional[float] = None
    metrics: Dict[str, float] = field(default_factory=dict)
    diagnostics: Dict[str, object] = field(default_factory=dict)
    execution_trajectory: Optional[Trajectory] = None


@dataclass
class Violation:
    step: int
    kind: str
    detail: str

    def __str__(self):
        return f"step {self.step}: {self.kind} ({self.detail})"


@dataclass
class ValidationReport:
    violations: List[Violation] = field(default_factory=list)
    position_error: float = float("nan")
    orientation_error: float = float("nan")

    @property
    def ok(self) -> bool:
        return not self.violations

    def first_violation(self) -> Optional[Violation]:
        if not self.violations:
            return None
        return min(self.violations, key=lambda v: v.step)


METRIC_COLUMNS = (
    "success", "c_space_path_length", "motion_time", "max_jerk", "max_accel",
    "mean_velocity", "position_error", "orientation_error", "compute_time",
)
IK_COLUMNS = ("success", "position_error", "orientation_error", "compute_time")


@dataclass
class MetricsRow:
    id: str
    success: bool = False
    c_space_path_length: Optional[float] = None
    motion_time: Optional[float] = None
    max_jerk: Optional[float] = None
    max_accel: Optional[float] = None
    mean_velocity: Optional[float] = None
    position_error: Optional[float] = None
    orientation_error: Optional[float] = None
    compute_time: Optional[float] = None
    failure_reason: Optional[str] = None
    error: Optional[str] = None

    def values(self, columns=METRIC_COLUMNS) -> Dict[str, object]:
        return {name: getattr(self, name) for name in columns}
