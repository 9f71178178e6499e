"""Implicit 6DoF grasp detection from a single depth view.

A learned occupancy field completes the scene geometry, surface
rendering turns the field back into point clouds (globally for grasp
sampling, locally around each candidate for quality features), and a
shared-encoder network scores the candidates.
"""

from __future__ import annotations

from .config import RunConfig, load_config
from .geometry import (DepthImage, PinholeCamera, Pose, PrimitiveScene,
                       SceneField, ScenePointCloud)
from .gripper import GripperModel
from .network import GraspNetwork, LearnedOccupancyField, load_checkpoint, save_checkpoint
from .oracle import declutter_round, label_grasp
from .pipeline import (DetectionResult, DetectorConfig, detect_grasps,
                       learned_detector, oracle_detector, run_benchmark)
from .render import render_local, render_scene
from .sampler import GraspCandidate, sample_grasps
from .training import TrainConfig, train

__all__ = [
    "DepthImage",
    "DetectionResult",
    "DetectorConfig",
    "GraspCandidate",
    "GraspNetwork",
    "GripperModel",
    "LearnedOccupancyField",
    "PinholeCamera",
    "Pose",
    "PrimitiveScene",
    "RunConfig",
    "SceneField",
    "ScenePointCloud",
    "TrainConfig",
    "declutter_round",
    "detect_grasps",
    "label_grasp",
    "learned_detector",
    "load_checkpoint",
    "load_config",
    "oracle_detector",
    "render_local",
    "render_scene",
    "run_benchmark",
    "sample_grasps",
    "save_checkpoint",
    "train",
]
