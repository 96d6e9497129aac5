"""Simulated tap-based material mapping: explore a grid world, tap its
boundaries, classify the sounds and build a material map."""
from .boundary import PlannerConfig, analyze
from .classifier import CnnModel, load_checkpoint, save_checkpoint, train
from .gridmap import GroundTruthWorld, Material, OccupancyGrid, Pose
from .sim_engine import (CnnClassifier, MissionConfig, MissionResult, OracleClassifier,
                         run_mission)

__all__ = [
    "PlannerConfig", "analyze", "CnnModel", "load_checkpoint", "save_checkpoint", "train",
    "GroundTruthWorld", "Material", "OccupancyGrid", "Pose", "CnnClassifier", "MissionConfig",
    "MissionResult", "OracleClassifier", "run_mission",
]
__version__ = "0.1.0"
