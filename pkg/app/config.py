import json
import os
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

from .exceptions import ConfigError

load_dotenv()

LINE_SEARCH_CONDITIONS = ("armijo", "wolfe", "strong_wolfe")


@dataclass
class CostWeights:
    pose_pos: float = 2000.0
    pose_rot: float = 350.0
    pose_pos_scale: float = 100.0
    pose_rot_scale: float = 100.0
    cspace: float = 5000.0
    cspace_scale: float = 50.0
    vel_boundary: float = 5000.0
    vel_scale: float = 50.0
    accel: float = 5000.0
    jerk: float = 1.0
    bound_weight: float = 5000.0
    self_collision: float = 5000.0
    world_collision: float = 5000.0
    activation: float = 0.025
    bound_activation: float = 0.1
    velocity_boundary_enabled: bool = False
    speed_dt: float = 0.01
    sweep_steps: int = 4
    dt_ref: float = 0.25

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                continue
            if value < 0:
                raise ConfigError(f"Cost weight {f.name} must be nonnegative, got {value}")
        if self.activation <= 0 or self.bound_activation <= 0:
            raise ConfigError("Activation distances must be positive")
        if self.speed_dt <= 0 or self.dt_ref <= 0:
            raise ConfigError("speed_dt and dt_ref must be positive")
        if self.sweep_steps < 1:
            raise ConfigError(f"sweep_steps must be at least 1, got {self.sweep_steps}")

    def scaled_for_dt(self, dt: float) -> "CostWeights":
        """Weights for a solve at time step dt, relative to the dt_ref time base.

        The same positions at a smaller dt have their k-th finite difference grown by (dt_ref / dt) ** k.
        The acceleration and jerk terms are squared, so their weights carry (dt / dt_ref) ** 4 and
        (dt / dt_ref) ** 6, and each term keeps the magnitude it had at dt_ref. The velocity boundary
        term is log-cosh, linear in its argument once active, so it takes a single power.
        """
        if dt <= 0:
            raise ConfigError(f"dt must be positive, got {dt}")
        ratio = dt / self.dt_ref
        return replace(
            self,
            vel_boundary=self.vel_boundary * ratio,
            accel=self.accel * ratio ** 4,
            jerk=self.jerk * ratio ** 6,
        )


@dataclass
class LineSearchConfig:
    magnitudes: List[float] = None
    condition: str = "strong_wolfe"
    c1: float = 1e-4
    c2: float = 0.9

    def __post_init__(self):
        if self.magnitudes is None:
            self.magnitudes = [0.01, 0.3, 0.7, 1.0]
        if self.condition not in LINE_SEARCH_CONDITIONS:
            raise ConfigError(f"Unknown line search condition '{self.condition}'")
        if not 0 < self.c1 < self.c2 < 1:
            raise ConfigError("Line search constants must satisfy 0 < c1 < c2 < 1")
        if any(b <= a for a, b in zip(self.magnitudes, self.magnitudes[1:])):
            raise ConfigError("Line search magnitudes must be strictly ascending")
        if not all(0 < a <= 1 for a in self.magnitudes):
            raise ConfigError("Line search magnitudes must lie in (0, 1]")


@dataclass
class LbfgsConfig:
    history: int = 4
    line_search: LineSearchConfig = None
    # clip each step to step_clip * (upper - lower); None leaves steps unclipped
    step_clip: Optional[float] = None
    convergence_window: int = 10
    convergence_tol: float = 1e-8

    def __post_init__(self):
        if self.line_search is None:
            self.line_search = LineSearchConfig()
        if self.history < 1:
            raise ConfigError(f"L-BFGS history must be at least 1, got {self.history}")


@dataclass
class ParticleConfig:
    n_particles: int = 64
    n_iterations: int = 2
    # initial variance per variable, as a fraction of the variable's bound range
    init_covariance: float = 0.1
    temperature: float = 1.0
    step_mean: float = 0.9
    step_cov: float = 0.5
    include_mean: bool = True

    def __post_init__(self):
        if self.init_covariance <= 0:
            raise ConfigError("Particle covariance must be positive")
        if not (0 < self.step_mean <= 1 and 0 < self.step_cov <= 1):
            raise ConfigError("Particle step sizes must lie in (0, 1]")
        if self.n_particles < 1 or self.temperature <= 0:
            raise ConfigError("Particle count and temperature must be positive")


@dataclass
class PlannerConfig:
    steer_resolution: float = 0.1
    joint_weights: Optional[List[float]] = None
    k_explore: int = 16
    p_explore: int = 512
    explore_growth: float = 0.1
    c_default: float = 1.5
    g_max: int = 10
    g_refine: int = 2
    k_refine: int = 8
    p_refine: int = 64
    collision_margin: float = 0.0
    dense_factor: int = 10
    chunk_size: int = 4096
    seed: int = 0

    def __post_init__(self):
        if self.steer_resolution <= 0:
            raise ConfigError("Steer resolution must be positive")
        if self.explore_growth <= 0:
            raise ConfigError("Exploration growth factor must be positive")
        if self.joint_weights is not None and any(w <= 0 for w in self.joint_weights):
            raise ConfigError("Joint weights must be positive")


@dataclass
class SelectionWeights:
    pose_error: float = 100.0
    max_jerk: float = 0.01
    motion_time: float = 1.0


@dataclass
class MotionGenConfig:
    ik_seeds: int = 30
    to_seeds: int = 12
    horizon: int = 32
    interpolation_dt: float = 0.025
    execution_dt: float = 0.01
    dt_init: float = 0.25
    retries: int = 3
    ik_iterations: int = 100
    first_iterations: int = 100
    retime_iterations: int = 300
    position_threshold: float = 0.005
    rotation_threshold: float = 0.05
    ik_distance_weight: float = 0.1
    graph_goals: int = 4
    limit_tolerance: float = 1e-6
    seed: int = field(default_factory=lambda: int(os.getenv("MOTIONGEN_SEED", "0")))
    weights: CostWeights = None
    lbfgs: LbfgsConfig = None
    ik_particles: ParticleConfig = None
    trajopt_particles: ParticleConfig = None
    planner: PlannerConfig = None
    selection: SelectionWeights = None

    def __post_init__(self):
        if self.weights is None:
            self.weights = CostWeights()
        if self.lbfgs is None:
            self.lbfgs = LbfgsConfig()
        if self.ik_particles is None:
            self.ik_particles = ParticleConfig()
        if self.trajopt_particles is None:
            self.trajopt_particles = ParticleConfig(init_covariance=0.01)
        if self.planner is None:
            self.planner = PlannerConfig()
        if self.selection is None:
            self.selection = SelectionWeights()
        if self.ik_seeds < 1 or self.to_seeds < 1:
            raise ConfigError("Seed counts must be at least 1")
        if self.horizon < 8:
            raise ConfigError(f"Horizon must be at least 8 steps, got {self.horizon}")
        if self.interpolation_dt <= 0 or self.dt_init <= 0 or self.execution_dt <= 0:
            raise ConfigError("Time steps must be positive")


def apply_overrides(config, overrides: dict):
    """Return a copy of a config dataclass with a nested override mapping applied."""
    if not overrides:
        return config
    known = {f.name for f in fields(config)}
    changes = {}
    for key, value in overrides.items():
        if key not in known:
            raise ConfigError(f"Unknown config key '{key}' for {type(config).__name__}")
        current = getattr(config, key)
        if is_dataclass(current) and isinstance(value, dict):
            changes[key] = apply_overrides(current, value)
        else:
            changes[key] = value
    try:
        return replace(config, **changes)
    except TypeError as e:
        raise ConfigError(f"Invalid override for {type(config).__name__}: {e}")


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> MotionGenConfig:
    config = MotionGenConfig()
    if path:
        try:
            document = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read config document {path}: {e}")
        if not isinstance(document, dict):
            raise ConfigError("Config document must be a JSON object")
        config = apply_overrides(config, document)
    return apply_overrides(config, overrides or {})


def data_dir() -> Path:
    default = Path(__file__).resolve().parent / "data"
    return Path(os.getenv("MOTIONGEN_DATA_DIR", str(default)))
