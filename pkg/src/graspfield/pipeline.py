"""Single-view grasp detection and declutter benchmarking.

Assembles the trained network into a detector: integrate the depth view into
a TSDF, encode feature planes, render the implied surface globally to seed
grasp sampling, render locally per candidate for quality features, and rank
by predicted quality. Ablation switches swap the rendered clouds for the raw
partial view (sampling) or for cropped cloud patches (quality features).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from . import autodiff as ad
from .datagen import (PACKED, REGIME_RANDOM, SAMPLING_Z_MARGIN, gen_scene,
                      gt_scene_cloud, sample_view, scene_seed)
from .errors import require
from .geometry import (DepthImage, Pose, PrimitiveScene, SceneField,
                       ScenePointCloud, depth_to_pointcloud, render_depth_gt)
from .gripper import GripperModel, interior_box
from .network import GraspNetwork, LearnedOccupancyField, pose_vector
from .oracle import (RoundResult, declutter_rate, declutter_round, label_grasp,
                     mean_sd, success_rate)
from .render import (LOCAL_FILTER_MARGIN, LOCAL_MAX_POINTS, LOCAL_MIN_POINTS,
                     LocalSurfaceSet, local_render_config, render_local,
                     render_scene)
from .sampler import GraspCandidate, sample_grasps
from .seeding import SUBSAMPLE, derive_rng
from .tsdf import TSDFGrid, integrate


# ------------------------------------------------------------- configuration

@dataclass(frozen=True)
class DetectorConfig:
    """Tunables for the depth-to-grasps pipeline.

    no_scene_render seeds the sampler from the backprojected partial view
    instead of the globally rendered surface; no_local_render feeds the
    quality head cloud patches cropped around the gripper instead of local
    renders. Setting both disables rendering entirely.
    """

    workspace_size: float = 0.30
    support_z: float = 0.05
    tsdf_resolution: int = 64
    budget_points: int = 240
    max_grasps: int = 60
    local_image_size: int = 64
    no_scene_render: bool = False
    no_local_render: bool = False

    def __post_init__(self):
        require(self.workspace_size > 0.0, "workspace size must be positive")
        require(0.0 <= self.support_z < self.workspace_size,
                "support plane must lie inside the workspace")
        require(self.tsdf_resolution >= 2, "tsdf resolution must be >= 2")
        require(self.budget_points >= 1 and self.max_grasps >= 1,
                "budgets must be >= 1")
        require(self.local_image_size >= 8, "local cameras need >= 8 pixels")


@dataclass
class DetectionResult:
    """Scored candidates (best first) plus the cloud the sampler consumed."""

    grasps: list[GraspCandidate]
    cloud: ScenePointCloud
    planes: list
    n_candidates: int = 0


# ------------------------------------------------------------- cloud sources

def partial_cloud(depth: DepthImage, workspace_size: float) -> ScenePointCloud:
    """Backprojected single view, cropped to the workspace cube."""
    bounds = np.array([[0.0, 0.0, 0.0], [workspace_size] * 3])
    return depth_to_pointcloud(depth, bounds)


def _above_support(cloud: ScenePointCloud, support_z: float) -> ScenePointCloud:
    # table points seed no grasps
    keep = cloud.points[:, 2] > support_z + SAMPLING_Z_MARGIN
    return ScenePointCloud(cloud.points[keep], bounds=cloud.bounds)


def crop_local_set(points: np.ndarray, grasp_pose: Pose, width: float,
                   gripper: GripperModel, seed: int = 0,
                   margin: float = LOCAL_FILTER_MARGIN,
                   max_points: int = LOCAL_MAX_POINTS) -> LocalSurfaceSet | None:
    """Cloud patch around the gripper, stand-in for a local render.

    Keeps cloud points within `margin` of the gripper interior box and
    subsamples to `max_points` like the render path. Sparse patches are
    padded by cyclic repetition up to the quality head's minimum row count;
    max pooling makes repeated points a no-op, so the padded patch scores
    identically to the raw one. Returns None only for an empty patch.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    local = grasp_pose.inverse().transform(points) if len(points) else points
    lo, hi = interior_box(gripper, width)
    keep = np.all((local >= lo - margin) & (local <= hi + margin), axis=1)
    world, local = points[keep], local[keep]
    if len(world) == 0:
        return None
    if len(world) > max_points:
        rng = derive_rng(seed, SUBSAMPLE)
        idx = np.sort(rng.choice(len(world), size=max_points, replace=False))
        world, local = world[idx], local[idx]
    if len(world) < LOCAL_MIN_POINTS:
        idx = np.arange(LOCAL_MIN_POINTS) % len(world)
        world, local = world[idx], local[idx]
    return LocalSurfaceSet(world, local)


# ------------------------------------------------------------------ scoring

def score_grasps(network: GraspNetwork, planes, grasps: list[GraspCandidate],
                 locals_: list[LocalSurfaceSet],
                 workspace_size: float) -> np.ndarray:
    """Predicted quality per grasp, one batched classifier pass.

    All local sets share one feature query and one point-MLP pass; pooled
    embeddings are concatenated with pose vectors and classified together.
    """
    require(len(grasps) == len(locals_), "grasps/local sets must align")
    require(all(len(s) >= LOCAL_MIN_POINTS for s in locals_),
            f"local patch needs >= {LOCAL_MIN_POINTS} points")
    if not grasps:
        return np.zeros(0)
    world = np.concatenate([s.points_world for s in locals_], axis=0)
    gframe = np.concatenate([s.points_grasp for s in locals_], axis=0)
    feats = network.query_features(planes, world, workspace_size)
    embed = network.local_point_embedding(gframe, feats, workspace_size).values
    rows = np.empty((len(grasps), embed.shape[1] + 7))
    offset = 0
    for i, (grasp, local) in enumerate(zip(grasps, locals_)):
        rows[i, :embed.shape[1]] = embed[offset:offset + len(local)].max(axis=0)
        rows[i, embed.shape[1]:] = pose_vector(grasp.pose, workspace_size)
        offset += len(local)
    return network.quality_classifier(ad.constant(rows)).values[:, 0]


def detect_grasps(network: GraspNetwork, depth: DepthImage,
                  cfg: DetectorConfig = DetectorConfig(),
                  gripper: GripperModel = GripperModel(),
                  seed: int = 0) -> DetectionResult:
    """Full single-view pipeline: depth image in, ranked grasps out.

    Candidates whose local set comes back empty (or below the render
    minimum on the render path) are dropped before scoring. Collision and
    closing checks always run against the learned field; the ablation
    switches only change where sampler seeds and quality features originate.
    """
    ws = cfg.workspace_size
    grid = TSDFGrid(cfg.tsdf_resolution, ws)
    integrate(grid, depth)
    planes = network.encode_tsdf(grid.values)
    field = LearnedOccupancyField(network, planes, ws)
    if cfg.no_scene_render:
        cloud = partial_cloud(depth, ws)
    else:
        cloud = render_scene(field, ws)
    candidates = sample_grasps(_above_support(cloud, cfg.support_z), field,
                               gripper, cfg.budget_points, cfg.max_grasps,
                               seed=seed)
    local_cfg = replace(local_render_config(gripper),
                        image_size=cfg.local_image_size)
    kept: list[GraspCandidate] = []
    locals_: list[LocalSurfaceSet] = []
    for j, grasp in enumerate(candidates):
        if cfg.no_local_render:
            local = crop_local_set(cloud.points, grasp.pose, grasp.width,
                                   gripper, seed=seed + j + 1)
        else:
            local = render_local(field, grasp.pose, grasp.width, gripper,
                                 cfg=local_cfg, seed=seed + j + 1)
        if local is None:
            continue
        kept.append(grasp)
        locals_.append(local)
    qualities = score_grasps(network, planes, kept, locals_, ws)
    scored = [GraspCandidate(g.pose, g.width, float(q))
              for g, q in zip(kept, qualities)]
    scored.sort(key=lambda g: -g.quality)
    return DetectionResult(scored, cloud, planes, n_candidates=len(candidates))


# ----------------------------------------------------------------- detectors

def learned_detector(network: GraspNetwork,
                     cfg: DetectorConfig = DetectorConfig(),
                     gripper: GripperModel = GripperModel(),
                     regime: str = REGIME_RANDOM):
    """Declutter-round callback: sample a view, render its depth, detect."""

    def detect(scene: PrimitiveScene, rng: np.random.Generator):
        camera = sample_view(scene, rng, regime)
        depth = render_depth_gt(scene, camera)
        seed = int(rng.integers(0, 2 ** 62))
        return detect_grasps(network, depth, cfg, gripper, seed=seed).grasps

    return detect


def oracle_detector(gripper: GripperModel = GripperModel()):
    """Cheating baseline: sample on the ground-truth surface and score each
    candidate with its oracle label, so every executed grasp succeeds."""

    def detect(scene: PrimitiveScene, rng: np.random.Generator):
        field = SceneField(scene)
        cloud = _above_support(gt_scene_cloud(scene), scene.support_plane_z)
        seed = int(rng.integers(0, 2 ** 62))
        grasps = sample_grasps(cloud, field, gripper, seed=seed)
        return [GraspCandidate(g.pose, g.width,
                               float(label_grasp(g, scene, gripper).success))
                for g in grasps]

    return detect


# ----------------------------------------------------------------- benchmark

@dataclass
class BenchmarkResult:
    """Declutter rounds grouped by evaluation seed."""

    seeds: list[int]
    rounds: list[list[RoundResult]] = dc_field(default_factory=list)

    @property
    def gsr_values(self) -> list[float]:
        return [success_rate(batch) for batch in self.rounds]

    @property
    def dr_values(self) -> list[float]:
        return [declutter_rate(batch) for batch in self.rounds]

    def summary_row(self, regime: str) -> tuple:
        gsr_mean, gsr_sd = mean_sd(self.gsr_values)
        dr_mean, dr_sd = mean_sd(self.dr_values)
        return (regime, gsr_mean, gsr_sd, dr_mean, dr_sd)

    def log_entries(self):
        for seed, batch in zip(self.seeds, self.rounds):
            for i, result in enumerate(batch):
                yield seed, i, result


def run_benchmark(detect, seeds, n_rounds: int, kind: str = PACKED,
                  workspace_size: float = 0.30, support_z: float = 0.05,
                  gripper: GripperModel = GripperModel()) -> BenchmarkResult:
    """Fresh scenes per (seed, round); round seeds derive from the scene id."""
    require(n_rounds >= 1, "need at least one round")
    seeds = [int(s) for s in seeds]
    require(len(seeds) >= 1, "need at least one seed")
    out = BenchmarkResult(seeds=seeds)
    for seed in seeds:
        batch = []
        for i in range(n_rounds):
            scene = gen_scene(seed, i, kind, workspace_size, support_z)
            batch.append(declutter_round(scene, detect, scene_seed(seed, i),
                                         gripper))
        out.rounds.append(batch)
    return out
