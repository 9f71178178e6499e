"""Parallel-jaw gripper geometry in the grasp frame.

Grasp frame convention: origin at the tool center point (midpoint between the
fingertips), x = approach direction, y = closing direction, z = x cross y.
Fingers span x in [-finger_length, 0]; the base sits behind them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import require


@dataclass(frozen=True)
class GripperModel:
    max_width: float = 0.08
    finger_length: float = 0.05
    finger_thickness: float = 0.01
    base_depth: float = 0.02

    def __post_init__(self):
        require(min(self.max_width, self.finger_length, self.finger_thickness,
                    self.base_depth) > 0.0, "gripper dimensions must be positive")


def link_boxes(gripper: GripperModel, width: float) -> list[tuple[np.ndarray, np.ndarray]]:
    """Axis-aligned solid links (center, half_extents) in the grasp frame at
    opening `width`: two fingers and the base."""
    require(0.0 < width <= gripper.max_width,
            f"width {width} outside (0, {gripper.max_width}]")
    tk = gripper.finger_thickness
    lf = gripper.finger_length
    half_f = np.array([lf / 2.0, tk / 2.0, tk / 2.0])
    y_f = width / 2.0 + tk / 2.0
    base_half = np.array([gripper.base_depth / 2.0, width / 2.0 + tk, tk / 2.0])
    return [
        (np.array([-lf / 2.0, +y_f, 0.0]), half_f),
        (np.array([-lf / 2.0, -y_f, 0.0]), half_f),
        (np.array([-lf - gripper.base_depth / 2.0, 0.0, 0.0]), base_half),
    ]


def interior_box(gripper: GripperModel, width: float) -> tuple[np.ndarray, np.ndarray]:
    """(lo, hi) of the open region enclosed by fingers and base."""
    require(0.0 < width <= gripper.max_width,
            f"width {width} outside (0, {gripper.max_width}]")
    tk = gripper.finger_thickness
    lo = np.array([-gripper.finger_length, -width / 2.0, -tk / 2.0])
    hi = np.array([0.0, width / 2.0, tk / 2.0])
    return lo, hi


def probe_points(gripper: GripperModel, width: float, spacing: float = 0.004) -> np.ndarray:
    """Grasp-frame points covering the link solids at <= `spacing` apart,
    faces included. Used for collision probing against occupancy fields."""
    require(spacing > 0.0, "spacing must be positive")
    out = []
    for center, half in link_boxes(gripper, width):
        axes = []
        for a in range(3):
            extent = 2.0 * half[a]
            n = max(int(np.ceil(extent / spacing)) + 1, 2)
            axes.append(np.linspace(center[a] - half[a], center[a] + half[a], n))
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        out.append(np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1))
    return np.concatenate(out, axis=0)
