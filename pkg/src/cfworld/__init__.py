"""Counterfactual failure synthesis, oracle world models, 4D rewards and GRPO refinement on semantic occupancy grids."""

from .geometry import Pose2D, RigidTransform, Trajectory
from .grid import DEFAULT_GEOMETRY, GridGeometry, SemanticGrid, SemanticLabel
from .gridio import read_grid, write_grid
from .oracle import ForecastResult, OptimisticOracle, VeridicalOracle
from .reward import RewardBreakdown, RewardConfig, total_reward
from .scene import AgentBox, EgoState, Scenario, decompose
from .synth import FailureMode, SynthParams, select_target, synthesize_future_grids, synthesize_trajectory

__all__ = [
    "AgentBox", "DEFAULT_GEOMETRY", "EgoState", "FailureMode", "ForecastResult", "GridGeometry",
    "OptimisticOracle", "Pose2D", "RewardBreakdown", "RewardConfig", "RigidTransform", "Scenario",
    "SemanticGrid", "SemanticLabel", "SynthParams", "Trajectory", "VeridicalOracle", "decompose",
    "read_grid", "select_target", "synthesize_future_grids", "synthesize_trajectory", "total_reward",
    "write_grid",
]
