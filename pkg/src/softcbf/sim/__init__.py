"""Ground-robot scenarios and the fixed-step closed-loop simulator."""

from .episode import TrajectoryLog, run_episode, trace_header
from .integrate import step_rk4
from .scenario import REFERENCE_GOALS, ScenarioConfig, apply_overrides, build_scenario, default_config, load_config
from .unicycle import DesiredControlGains, ObstacleParams, WallParams, desired_control_unicycle, obstacle_barrier

__all__ = [
    "REFERENCE_GOALS",
    "DesiredControlGains",
    "ObstacleParams",
    "ScenarioConfig",
    "TrajectoryLog",
    "WallParams",
    "apply_overrides",
    "build_scenario",
    "default_config",
    "desired_control_unicycle",
    "load_config",
    "obstacle_barrier",
    "run_episode",
    "step_rk4",
    "trace_header",
]
