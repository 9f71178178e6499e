"""Geometric grasp labeling and the decluttering evaluation protocol.

A grasp on a primitive scene is labeled by closing the jaws along the grasp
axis: the hand must be collision free at its approach width, both closing
rays must contact a surface within the jaw travel, and both contact normals
must lie inside the Coulomb friction cone of the closing direction. No
dynamics are involved; labels are a pure function of scene geometry.

Decluttering runs repeated detect-grasp-remove rounds and aggregates grasp
success rate (GSR) and declutter rate (DR) as percentages.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import require
from .geometry import (PrimitiveScene, cast_rays, occupancy_gt, primitive_normal)
from .gripper import GripperModel, probe_points
from .sampler import GraspCandidate
from .seeding import ROUND, derive_rng

FRICTION_COEFF = 0.5
# cos of the cone half angle atan(mu)
_CONE_COS = 1.0 / np.sqrt(1.0 + FRICTION_COEFF ** 2)

EXECUTE_THRESHOLD = 0.5
MAX_CONSECUTIVE_FAILURES = 2
PINCH_EPS = 1e-9

REASON_SUCCESS = "success"
REASON_COLLISION = "collision"
REASON_NO_CONTACT = "no_contact"
REASON_TOO_WIDE = "too_wide"
REASON_FRICTION_CONE = "friction_cone"

END_CLEARED = "cleared"
END_NO_GRASPS = "no_grasps"
END_FAILURES = "failures"

ROUND_LOG_HEADER = "seed,round,attempt,quality,success,reason,remaining_objects"
SUMMARY_HEADER = "regime,gsr_mean,gsr_sd,dr_mean,dr_sd"


@dataclass(frozen=True)
class Contact:
    point: np.ndarray
    normal: np.ndarray
    primitive_index: int
    travel: float


@dataclass(frozen=True)
class GraspLabel:
    success: bool
    reason: str
    contacts: tuple[Contact, ...] = ()

    @property
    def quality(self) -> float:
        return 1.0 if self.success else 0.0

    def first_contact(self) -> Contact:
        require(len(self.contacts) == 2, "label has no contact pair")
        return min(self.contacts, key=lambda c: c.travel)


def label_grasp(grasp: GraspCandidate, scene: PrimitiveScene,
                gripper: GripperModel = GripperModel()) -> GraspLabel:
    """Close the jaws on the scene and report success or the failure mode."""
    require(grasp.width <= gripper.max_width + 1e-12,
            "grasp wider than the gripper opening")
    w = grasp.width
    probes = grasp.pose.transform(probe_points(gripper, w))
    if np.any(occupancy_gt(scene, probes) >= 0.5):
        return GraspLabel(False, REASON_COLLISION)
    closing = grasp.pose.rotation[:, 1]
    tips = np.array([grasp.pose.translation + closing * (w / 2.0),
                     grasp.pose.translation - closing * (w / 2.0)])
    dirs = np.array([-closing, closing])
    travel, owner = cast_rays(scene, tips, dirs, include_support=False)
    if np.any(~np.isfinite(travel)) or np.any(travel > w):
        return GraspLabel(False, REASON_NO_CONTACT)
    # a full-opening travel sum means the contacts coincide: a fingertip
    # started inside material (section wider than the jaws) or the line is
    # tangent; either way nothing of positive thickness gets pinched
    if travel[0] + travel[1] >= w - PINCH_EPS:
        return GraspLabel(False, REASON_TOO_WIDE)
    points = tips + travel[:, None] * dirs
    contacts = tuple(
        Contact(point=points[i], travel=float(travel[i]),
                primitive_index=int(owner[i]),
                normal=primitive_normal(scene.primitives[owner[i]], points[i][None, :])[0])
        for i in range(2))
    # each contact normal must oppose its finger's closing motion within the cone
    for contact, direction in zip(contacts, dirs):
        if float(contact.normal @ -direction) < _CONE_COS:
            return GraspLabel(False, REASON_FRICTION_CONE, contacts)
    return GraspLabel(True, REASON_SUCCESS, contacts)


def remove_primitive(scene: PrimitiveScene, index: int) -> PrimitiveScene:
    require(0 <= index < len(scene.primitives), "primitive index out of range")
    kept = [p for i, p in enumerate(scene.primitives) if i != index]
    return replace(scene, primitives=kept)


@dataclass(frozen=True)
class AttemptRecord:
    attempt: int
    quality: float
    success: bool
    reason: str
    remaining_objects: int


@dataclass
class RoundResult:
    n_objects_start: int
    attempts: list[AttemptRecord] = field(default_factory=list)
    ended: str = END_NO_GRASPS

    @property
    def n_attempts(self) -> int:
        return len(self.attempts)

    @property
    def n_success(self) -> int:
        return sum(1 for a in self.attempts if a.success)

    @property
    def cleared(self) -> bool:
        return self.ended == END_CLEARED


def declutter_round(scene: PrimitiveScene, detect, seed: int,
                    gripper: GripperModel = GripperModel()) -> RoundResult:
    """Detect-grasp-remove until cleared, out of grasps, or two straight failures.

    detect(scene, rng) must return quality-scored grasp candidates for the
    current scene state. The executed grasp is always the top-quality one;
    a success removes the primitive touched first while closing.
    """
    result = RoundResult(n_objects_start=len(scene.primitives))
    remaining = scene
    consecutive = 0
    attempt = 0
    while remaining.primitives:
        rng = derive_rng(seed, ROUND, attempt)
        candidates = detect(remaining, rng)
        require(all(g.quality is not None for g in candidates),
                "detector returned unscored candidates")
        if not candidates:
            result.ended = END_NO_GRASPS
            return result
        best = max(candidates, key=lambda g: g.quality)
        if best.quality < EXECUTE_THRESHOLD:
            result.ended = END_NO_GRASPS
            return result
        label = label_grasp(best, remaining, gripper)
        if label.success:
            consecutive = 0
            remaining = remove_primitive(remaining, label.first_contact().primitive_index)
        else:
            consecutive += 1
        result.attempts.append(AttemptRecord(
            attempt=attempt, quality=float(best.quality), success=label.success,
            reason=label.reason, remaining_objects=len(remaining.primitives)))
        if consecutive >= MAX_CONSECUTIVE_FAILURES:
            result.ended = END_FAILURES
            return result
        attempt += 1
    result.ended = END_CLEARED
    return result


# ------------------------------------------------------------------ aggregates

def success_rate(rounds: list[RoundResult]) -> float:
    """Successful grasps per executed grasp, in percent; nan with no attempts."""
    attempts = sum(r.n_attempts for r in rounds)
    if attempts == 0:
        return float("nan")
    return 100.0 * sum(r.n_success for r in rounds) / attempts


def declutter_rate(rounds: list[RoundResult]) -> float:
    """Objects removed per object present, in percent."""
    total = sum(r.n_objects_start for r in rounds)
    require(total > 0, "declutter rate over empty rounds")
    return 100.0 * sum(r.n_success for r in rounds) / total


def mean_sd(values) -> tuple[float, float]:
    """Mean and sample standard deviation (ddof 1; 0 for a single value)."""
    arr = np.asarray(values, dtype=np.float64)
    require(arr.size > 0, "mean of no values")
    sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), sd


def reconstruct_iou(field_obj, scene: PrimitiveScene, resolution: int = 64) -> float:
    """IoU of thresholded occupancy against ground truth on a voxel grid.

    Evaluated at voxel centers above the support plane so the table half
    space does not dominate the score. Empty union scores 1.
    """
    ws = scene.workspace_size
    axis = (np.arange(resolution) + 0.5) * (ws / resolution)
    centers = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
    centers = centers[centers[:, 2] > scene.support_plane_z]
    pred = field_obj.occupancy(centers) >= 0.5
    truth = occupancy_gt(scene, centers) >= 0.5
    union = int(np.sum(pred | truth))
    if union == 0:
        return 1.0
    return float(np.sum(pred & truth)) / union


# ------------------------------------------------------------------- CSV logs

def write_round_log(path, entries) -> None:
    """entries: iterable of (seed, round_index, RoundResult)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ROUND_LOG_HEADER.split(","))
        for seed, round_index, result in entries:
            for rec in result.attempts:
                writer.writerow([seed, round_index, rec.attempt, repr(rec.quality),
                                 int(rec.success), rec.reason, rec.remaining_objects])


def write_summary(path, rows) -> None:
    """rows: iterable of (regime, gsr_mean, gsr_sd, dr_mean, dr_sd)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_HEADER.split(","))
        for regime, gsr_mean, gsr_sd, dr_mean, dr_sd in rows:
            writer.writerow([regime, repr(float(gsr_mean)), repr(float(gsr_sd)),
                             repr(float(dr_mean)), repr(float(dr_sd))])
