"""Seeded simulator for a three-drone swarm landing on a mobile platform.

The swarm tracks the platform through simulated fiducial-tag vision and
lands on potential-field guidance. When cameras fail mid-flight the
controller elects a leader that rotates its camera downward and relays
positions for the blinded drones.
"""

__version__ = "0.1.0"

from .geometry import Pose, Quat, Vec3, clamp_speed, compose, transform_point
from .planning import ApfParams, Obstacle, velocity_command
from .sim import (
    FaultEvent,
    FaultKind,
    LandingMetrics,
    RunRecord,
    ScenarioConfig,
    Termination,
    TrajectoryKind,
    compute_metrics,
    run_scenario,
)
from .scenario import load_scenario, save_scenario
from .state import CameraMount, DroneState, Phase, PlatformState, Role, WorldState
from .swarm import FormationSpec, SwarmController, select_leader
from .report import RunSummary, run_batch

__all__ = [
    "ApfParams",
    "CameraMount",
    "DroneState",
    "FaultEvent",
    "FaultKind",
    "FormationSpec",
    "LandingMetrics",
    "Obstacle",
    "Phase",
    "PlatformState",
    "Pose",
    "Quat",
    "Role",
    "RunRecord",
    "RunSummary",
    "ScenarioConfig",
    "SwarmController",
    "Termination",
    "TrajectoryKind",
    "Vec3",
    "WorldState",
    "clamp_speed",
    "compose",
    "compute_metrics",
    "load_scenario",
    "run_batch",
    "run_scenario",
    "save_scenario",
    "select_leader",
    "transform_point",
    "velocity_command",
]
