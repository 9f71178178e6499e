"""Geometric grasp candidate sampling on rendered surface clouds.

The sampler estimates outward surface normals, builds local Darboux frames,
and searches a small grid of hand poses per sampled surface point (wrist
rotations about the curvature axis plus stand-offs along the approach). A
pose is kept when the gripper solid is collision free against the occupancy
field, the closing volume holds at least one cloud point, and the closing
segment passes through occupied space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import FormatError, require
from .geometry import Pose, ScenePointCloud, rotation_about_axis
from .gripper import GripperModel, interior_box, probe_points
from .seeding import SAMPLER, derive_rng

NORMAL_PROBE_EPS = 0.005
INSERT_DEPTH_FACTOR = 0.5  # fingertip plane sits this fraction of finger length past the point
WRIST_ANGLES_DEG = np.linspace(-90.0, 90.0, 8)
STANDOFFS = (0.0, 0.01, 0.02)
SEGMENT_STEP = 0.002


@dataclass
class GraspCandidate:
    """6DoF grasp: pose (x approach, y closing), opening width, optional score."""

    pose: Pose
    width: float
    quality: float | None = None

    def __post_init__(self):
        require(self.width > 0.0, "grasp width must be positive")


@dataclass(frozen=True)
class DarbouxFrame:
    """Local surface frame: outward normal, minor-variation curvature axis,
    and binormal = normal x curvature_axis (right-handed orthonormal)."""

    point: np.ndarray
    normal: np.ndarray
    curvature_axis: np.ndarray
    binormal: np.ndarray


def _canonical_axis(v: np.ndarray) -> np.ndarray:
    """Fix the sign of an axis so its first non-negligible component is positive."""
    for x in v:
        if abs(x) > 1e-12:
            return v if x > 0 else -v
    return v


def estimate_normals(cloud: ScenePointCloud, field, k: int = 30,
                     probe_eps: float = NORMAL_PROBE_EPS) -> ScenePointCloud:
    """Outward unit normals by k-NN PCA, oriented with occupancy probes.

    The normal is the smallest-eigenvalue direction of the neighborhood
    covariance, flipped so occupancy(p + eps n) <= occupancy(p - eps n)
    (free space ahead of the normal). Points with degenerate neighborhoods
    (covariance rank < 2) are dropped from the returned cloud.
    """
    pts = cloud.points
    n = len(pts)
    if n == 0:
        return ScenePointCloud(pts.copy(), normals=pts.copy())
    kk = min(k, n)
    tree = cKDTree(pts)
    _, idx = tree.query(pts, k=kk)
    idx = idx.reshape(n, kk)
    nbrs = pts[idx]
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / kk
    w, v = np.linalg.eigh(cov)
    normals = v[:, :, 0]
    ok = w[:, 1] > np.maximum(w[:, 2] * 1e-9, 1e-18)
    occ_plus = np.asarray(field.occupancy(pts + probe_eps * normals))
    occ_minus = np.asarray(field.occupancy(pts - probe_eps * normals))
    flip = occ_plus > occ_minus
    normals = np.where(flip[:, None], -normals, normals)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return ScenePointCloud(pts[ok], normals=normals[ok])


def _darboux_axes(points: np.ndarray, normals: np.ndarray, tree: cKDTree,
                  index: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """(curvature_axis, binormal) at one point of a cloud with normals."""
    kk = min(k, len(points))
    _, idx = tree.query(points[index], k=kk)
    idx = np.atleast_1d(idx)
    n0 = normals[index]
    diffs = normals[idx] - n0
    m = diffs.T @ diffs / kk
    # deterministic in-plane basis
    e1 = np.zeros(3)
    e1[int(np.argmin(np.abs(n0)))] = 1.0
    e1 = e1 - np.dot(e1, n0) * n0
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n0, e1)
    basis = np.stack([e1, e2], axis=0)
    m2 = basis @ m @ basis.T
    vals, vecs = np.linalg.eigh(m2)
    cand = [_canonical_axis(vecs[:, i] @ basis) for i in range(2)]
    if abs(vals[0] - vals[1]) <= 1e-12 * max(abs(vals[0]) + abs(vals[1]), 1.0):
        # isotropic variation: lexicographically smallest canonical axis
        chosen = min(cand, key=lambda a: tuple(np.round(a, 12)))
    else:
        chosen = cand[0]
    c = chosen / np.linalg.norm(chosen)
    b = np.cross(n0, c)
    return c, b


def darboux_frame(cloud: ScenePointCloud, index: int, k: int = 30) -> DarbouxFrame:
    """Darboux frame at cloud point `index` (cloud must carry normals)."""
    require(cloud.normals is not None, "cloud must have normals (run estimate_normals)")
    require(0 <= index < len(cloud), f"index {index} out of range")
    tree = cKDTree(cloud.points)
    c, b = _darboux_axes(cloud.points, cloud.normals, tree, index, k)
    return DarbouxFrame(cloud.points[index].copy(), cloud.normals[index].copy(), c, b)


def collision_check(grasp: GraspCandidate, field, gripper: GripperModel,
                    spacing: float = 0.004) -> bool:
    """True when every probe point on the gripper solid lies in free space."""
    probes = probe_points(gripper, grasp.width, spacing)
    occ = np.asarray(field.occupancy(grasp.pose.transform(probes)))
    return bool(np.all(occ < 0.5))


def _closing_segment(pose: Pose, width: float, step: float = SEGMENT_STEP) -> np.ndarray:
    """World points along the fingertip closing segment (TCP +/- width/2 along y)."""
    n = max(int(np.ceil(width / step)) + 1, 2)
    offsets = np.linspace(-width / 2.0, width / 2.0, n)
    local = np.zeros((n, 3))
    local[:, 1] = offsets
    return pose.transform(local)


def sample_grasps(cloud: ScenePointCloud, field, gripper: GripperModel,
                  budget_points: int = 240, max_grasps: int = 60,
                  seed: int = 0, k: int = 30) -> list[GraspCandidate]:
    """Sample up to `max_grasps` candidates from at most `budget_points`
    seeded surface points, earliest sampled first.

    Per surface point the wrist angles are tried by increasing magnitude and
    each stand-off in order; the first pose passing all checks is emitted, at
    full gripper opening. Points whose normals were dropped as degenerate are
    never selected.
    """
    require(budget_points >= 1 and max_grasps >= 1, "budgets must be >= 1")
    if cloud.normals is None:
        cloud = estimate_normals(cloud, field, k=k)
    n = len(cloud)
    if n == 0:
        return []
    pts, normals = cloud.points, cloud.normals
    tree = cKDTree(pts)
    rng = derive_rng(seed, SAMPLER)
    chosen = rng.choice(n, size=min(budget_points, n), replace=False)

    angle_order = sorted(WRIST_ANGLES_DEG, key=lambda a: (abs(a), -np.sign(a)))
    probes = probe_points(gripper, gripper.max_width)
    lo, hi = interior_box(gripper, gripper.max_width)
    enclose_radius = float(np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi)))) + 1e-9
    insert0 = INSERT_DEPTH_FACTOR * gripper.finger_length
    width = gripper.max_width
    seg_n = max(int(np.ceil(width / SEGMENT_STEP)) + 1, 2)
    seg_local = np.zeros((seg_n, 3))
    seg_local[:, 1] = np.linspace(-width / 2.0, width / 2.0, seg_n)

    out: list[GraspCandidate] = []
    for i in chosen:
        if len(out) >= max_grasps:
            break
        p = pts[i]
        n0 = normals[i]
        c_axis, binormal = _darboux_axes(pts, normals, tree, int(i), k)
        a0, b0 = -n0, binormal
        near = tree.query_ball_point(p, enclose_radius + insert0)
        near_pts = pts[near]
        poses = []
        for ang in angle_order:
            rot = rotation_about_axis(c_axis, np.deg2rad(ang))
            a, b = rot @ a0, rot @ b0
            r = np.column_stack([a, b, np.cross(a, b)])
            for s in STANDOFFS:
                poses.append(Pose(r, p + a * (insert0 - s)))
        # cheap cloud-containment prefilter per pose
        alive = []
        for pose in poses:
            local = (near_pts - pose.translation) @ pose.rotation
            inside = np.all((local >= lo) & (local <= hi), axis=1)
            if inside.any():
                alive.append(pose)
        if not alive:
            continue
        # one batched field call: collision probes + closing segment per pose
        blocks = [np.concatenate([pose.transform(probes), pose.transform(seg_local)])
                  for pose in alive]
        occ = np.asarray(field.occupancy(np.concatenate(blocks))).reshape(len(alive), -1)
        n_probe = len(probes)
        for j, pose in enumerate(alive):
            if np.all(occ[j, :n_probe] < 0.5) and np.any(occ[j, n_probe:] >= 0.5):
                out.append(GraspCandidate(pose, width))
                break
    return out


GRASP_CSV_HEADER = "r00,r01,r02,tx,r10,r11,r12,ty,r20,r21,r22,tz,width,quality"


def save_grasps(path: str, grasps: list[GraspCandidate]) -> None:
    """Write candidates as CSV: 12 row-major [R|t] entries, width, quality
    (blank when unscored)."""
    lines = [GRASP_CSV_HEADER]
    for g in grasps:
        rt = np.concatenate([g.pose.rotation, g.pose.translation[:, None]], axis=1)
        cells = [repr(float(v)) for v in rt.reshape(-1)] + [repr(float(g.width))]
        cells.append("" if g.quality is None else repr(float(g.quality)))
        lines.append(",".join(cells))
    with open(path, "w", encoding="ascii") as f:
        f.write("\n".join(lines) + "\n")


def load_grasps(path: str) -> list[GraspCandidate]:
    """Read candidates written by save_grasps."""
    with open(path, "r", encoding="ascii") as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines or lines[0] != GRASP_CSV_HEADER:
        raise FormatError(f"{path}: unexpected grasp CSV header")
    out = []
    for ln in lines[1:]:
        cells = ln.split(",")
        if len(cells) != 14:
            raise FormatError(f"{path}: expected 14 columns, got {len(cells)}")
        vals = [float(c) for c in cells[:13]]
        rt = np.array(vals[:12]).reshape(3, 4)
        quality = None if cells[13] == "" else float(cells[13])
        out.append(GraspCandidate(Pose(rt[:, :3], rt[:, 3]), vals[12], quality))
    return out
