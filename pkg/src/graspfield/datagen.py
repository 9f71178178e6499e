"""Scene generation, view sampling, and training-set construction.

Training data is organized as one binary shard per scene plus a text
manifest. A shard stores the scene description, one depth view with its
camera, occupancy supervision points, and per-grasp records: the labeled
pose and a noise-perturbed local surface patch with relabeled occupancy.

Every random quantity derives from (root_seed, scene_index) through fixed
stage tags, so shards are byte-identical across runs and independent of
build order or worker count.
"""

from __future__ import annotations

import logging
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import FormatError, require
from .geometry import (BOX, CYLINDER, SPHERE, DepthImage, PinholeCamera, Pose,
                       Primitive, PrimitiveScene, SceneField, ScenePointCloud,
                       depth_to_pointcloud, look_at, make_box, make_cylinder,
                       make_sphere, occupancy_gt, primitive_surface_points,
                       random_rotation, render_depth_gt, rotation_about_axis,
                       sdf_primitive)
from .gripper import GripperModel
from .io_formats import scene_from_text, scene_to_text
from .oracle import label_grasp
from .render import (SCENE_LEAF, LocalSurfaceSet, local_render_config,
                     render_local, ring_cameras, voxel_downsample)
from .sampler import GraspCandidate, sample_grasps
from .seeding import NOISE, OCC_SAMPLES, SCENE, VIEW, derive_rng

logger = logging.getLogger(__name__)

PACKED = "packed"
PILE = "pile"
SCENE_KINDS = (PACKED, PILE)

REGIME_FIXED_TOP = "fixed_top"
REGIME_RANDOM = "random"
REGIME_HARD = "hard"
VIEW_REGIMES = (REGIME_FIXED_TOP, REGIME_RANDOM, REGIME_HARD)

# depth views share the scene-render intrinsics
VIEW_IMAGE_SIZE = 64
VIEW_FOV_DEG = 90.0

# graspable object dimension ranges (meters); widths stay under the jaw opening
BOX_SIDE = (0.025, 0.07)
BOX_HEIGHT = (0.04, 0.12)
CYL_RADIUS = (0.012, 0.035)
CYL_HEIGHT = (0.04, 0.12)
SPHERE_RADIUS = (0.015, 0.035)

POSITION_MARGIN = 0.07
MEAN_OBJECTS = 4
MAX_OBJECTS = 8
MAX_REJECTIONS = 1000
N_SURFACE_PROBES = 256
CLEARANCE = -1e-6
SETTLE_TOL = 1e-7

N_OCC_SAMPLES = 10_000
NOISE_SIGMA_SHAPE = 2.0
NOISE_SIGMA_SCALE = 0.0015
MAX_GRASPS_PER_CLASS = 12
SAMPLING_Z_MARGIN = 0.004

RECORD_MAGIC = b"graspfield-scene-record 1\n"
MANIFEST_NAME = "manifest.txt"
MANIFEST_MAGIC = "graspfield-dataset 1"


def scene_seed(root_seed: int, index: int) -> int:
    """Scalar seed for one scene; all its stage streams derive from this."""
    return (root_seed * 1_000_000_007 + index) % 2 ** 63


# -------------------------------------------------------------- scene making

def _surface_clearance(candidate: Primitive, others: list[Primitive],
                       support_z: float) -> float:
    """Smallest signed separation found by cross-probing surface samples."""
    pts = primitive_surface_points(candidate, N_SURFACE_PROBES)
    worst = float(np.min(pts[:, 2]) - support_z)
    for other in others:
        worst = min(worst, float(np.min(sdf_primitive(other, pts))))
        opts = primitive_surface_points(other, N_SURFACE_PROBES)
        worst = min(worst, float(np.min(sdf_primitive(candidate, opts))))
    return worst


def _draw_primitive(rng: np.random.Generator, kind: str, x: float, y: float,
                    support_z: float) -> Primitive:
    if kind == PACKED:
        shape = (BOX, CYLINDER)[rng.integers(2)]
        yaw = rotation_about_axis(np.array([0.0, 0.0, 1.0]), rng.uniform(0, 2 * np.pi))
        if shape == BOX:
            size = np.array([rng.uniform(*BOX_SIDE), rng.uniform(*BOX_SIDE),
                             rng.uniform(*BOX_HEIGHT)])
            return make_box(size, Pose(yaw, np.array([x, y, support_z + size[2] / 2])))
        radius, height = rng.uniform(*CYL_RADIUS), rng.uniform(*CYL_HEIGHT)
        return make_cylinder(radius, height,
                             Pose(yaw, np.array([x, y, support_z + height / 2])))
    shape = (BOX, CYLINDER, SPHERE)[rng.integers(3)]
    rot = random_rotation(rng)
    high = np.array([x, y, 0.0])  # z filled in by settling
    if shape == BOX:
        size = np.array([rng.uniform(*BOX_SIDE), rng.uniform(*BOX_SIDE),
                         rng.uniform(*BOX_HEIGHT)])
        return Primitive(BOX, Pose(rot, high), size)
    if shape == CYLINDER:
        return Primitive(CYLINDER, Pose(rot, high),
                         np.array([rng.uniform(*CYL_RADIUS), rng.uniform(*CYL_HEIGHT)]))
    return make_sphere(rng.uniform(*SPHERE_RADIUS), high)


def _at_height(prim: Primitive, z: float) -> Primitive:
    t = prim.pose.translation.copy()
    t[2] = z
    return Primitive(prim.shape, Pose(prim.pose.rotation, t), prim.dimensions)


def _settle(prim: Primitive, placed: list[Primitive], support_z: float,
            z_top: float) -> Primitive | None:
    """Lower the primitive along -z until first contact, to SETTLE_TOL."""
    if _surface_clearance(_at_height(prim, z_top), placed, support_z) < 0.0:
        return None
    lo, hi = support_z - 0.2, z_top
    while hi - lo > SETTLE_TOL:
        mid = 0.5 * (lo + hi)
        if _surface_clearance(_at_height(prim, mid), placed, support_z) >= 0.0:
            hi = mid
        else:
            lo = mid
    return _at_height(prim, hi)


def gen_scene(root_seed: int, index: int, kind: str = PACKED,
              workspace_size: float = 0.30, support_z: float = 0.05) -> PrimitiveScene:
    """Generate a cluttered tabletop scene of graspable primitives.

    Packed scenes place upright objects side by side; pile scenes drop
    arbitrarily oriented objects and settle each along -z to first contact.
    Placement uses rejection sampling; after MAX_REJECTIONS the scene keeps
    whatever fit.
    """
    require(kind in SCENE_KINDS, f"unknown scene kind {kind!r}")
    rng = derive_rng(scene_seed(root_seed, index), SCENE)
    n_objects = int(np.clip(1 + rng.poisson(MEAN_OBJECTS), 1, MAX_OBJECTS))
    placed: list[Primitive] = []
    rejections = 0
    while len(placed) < n_objects and rejections < MAX_REJECTIONS:
        x = rng.uniform(POSITION_MARGIN, workspace_size - POSITION_MARGIN)
        y = rng.uniform(POSITION_MARGIN, workspace_size - POSITION_MARGIN)
        candidate = _draw_primitive(rng, kind, x, y, support_z)
        if kind == PILE:
            settled = _settle(candidate, placed, support_z, workspace_size)
            if settled is None:
                rejections += 1
                continue
            candidate = settled
            placed.append(candidate)
            continue
        if _surface_clearance(candidate, placed, support_z) < CLEARANCE:
            rejections += 1
            continue
        placed.append(candidate)
    if len(placed) < n_objects:
        logger.debug("scene %d: placed %d of %d objects after %d rejections",
                     index, len(placed), n_objects, rejections)
    return PrimitiveScene(placed, workspace_size=workspace_size, support_plane_z=support_z)


# ---------------------------------------------------------------- view draws

def sample_view(scene: PrimitiveScene, rng: np.random.Generator,
                regime: str = REGIME_RANDOM) -> PinholeCamera:
    """Draw a depth camera pose for the given difficulty regime.

    fixed_top: 60 degree elevation at 2.0 workspace lengths.
    random: elevation uniform in [15, 75] degrees, distance in [1.6, 2.4].
    hard: low 15 degree elevation, distance in [1.6, 2.4].
    Azimuth is uniform in all regimes; the camera looks at the cube center.
    """
    require(regime in VIEW_REGIMES, f"unknown view regime {regime!r}")
    ws = scene.workspace_size
    azimuth = np.deg2rad(rng.uniform(0.0, 360.0))
    if regime == REGIME_FIXED_TOP:
        elevation, dist = np.deg2rad(60.0), 2.0 * ws
    elif regime == REGIME_RANDOM:
        elevation = np.deg2rad(rng.uniform(15.0, 75.0))
        dist = rng.uniform(1.6, 2.4) * ws
    else:
        elevation = np.deg2rad(15.0)
        dist = rng.uniform(1.6, 2.4) * ws
    center = np.full(3, ws / 2.0)
    eye = center + dist * np.array([np.cos(azimuth) * np.cos(elevation),
                                    np.sin(azimuth) * np.cos(elevation),
                                    np.sin(elevation)])
    return PinholeCamera(look_at(eye, center), VIEW_FOV_DEG,
                         VIEW_IMAGE_SIZE, VIEW_IMAGE_SIZE)


def gt_scene_cloud(scene: PrimitiveScene) -> ScenePointCloud:
    """Complete scene surface from the analytic camera ring.

    Mirrors the learned-field scene render (merge in camera order, voxel
    downsample, crop to the workspace) but uses exact ray casting.
    """
    parts = [depth_to_pointcloud(render_depth_gt(scene, cam)).points
             for cam in ring_cameras(scene.workspace_size)]
    pts = voxel_downsample(np.concatenate(parts, axis=0), SCENE_LEAF)
    bounds = scene.bounds()
    keep = np.all((pts >= bounds[0]) & (pts <= bounds[1]), axis=1)
    return ScenePointCloud(pts[keep], bounds=bounds)


# ------------------------------------------------------------- supervision

def occupancy_samples(scene: PrimitiveScene, rng: np.random.Generator,
                      n: int = N_OCC_SAMPLES) -> tuple[np.ndarray, np.ndarray]:
    """Uniform samples over the workspace cube with exact occupancy labels."""
    pts = rng.uniform(0.0, scene.workspace_size, size=(n, 3))
    labels = (occupancy_gt(scene, pts) >= 0.5).astype(np.uint8)
    return pts, labels


def noisy_local_set(local: LocalSurfaceSet, grasp_pose: Pose, scene: PrimitiveScene,
                    rng: np.random.Generator,
                    sigma_shape: float = NOISE_SIGMA_SHAPE,
                    sigma_scale: float = NOISE_SIGMA_SCALE,
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Perturb a rendered local patch and relabel occupancy at the new points.

    Each point gets its own displacement scale drawn from a gamma prior;
    displacements are clipped at three scales so outliers stay bounded.
    """
    m = len(local.points_world)
    sigma = rng.gamma(sigma_shape, sigma_scale, size=m)
    disp = np.clip(rng.normal(size=(m, 3)), -3.0, 3.0) * sigma[:, None]
    world = local.points_world + disp
    grasp = grasp_pose.inverse().transform(world)
    labels = (occupancy_gt(scene, world) >= 0.5).astype(np.uint8)
    return world, grasp, labels


# ------------------------------------------------------------------ records

@dataclass
class GraspRecord:
    pose: Pose
    width: float
    label: int
    local_world: np.ndarray
    local_grasp: np.ndarray
    local_occ: np.ndarray


@dataclass
class SceneRecord:
    scene: PrimitiveScene
    depth: DepthImage
    occ_points: np.ndarray
    occ_labels: np.ndarray
    grasps: list[GraspRecord]

    @property
    def camera(self) -> PinholeCamera:
        return self.depth.camera

    @property
    def n_positive(self) -> int:
        return sum(g.label for g in self.grasps)


def generate_scene_record(root_seed: int, index: int, kind: str = PACKED,
                          regime: str = REGIME_RANDOM, workspace_size: float = 0.30,
                          support_z: float = 0.05,
                          gripper: GripperModel = GripperModel(),
                          max_per_class: int = MAX_GRASPS_PER_CLASS) -> SceneRecord:
    """Full supervision for one scene: view, occupancy, balanced labeled grasps."""
    scene = gen_scene(root_seed, index, kind, workspace_size, support_z)
    seed = scene_seed(root_seed, index)
    camera = sample_view(scene, derive_rng(seed, VIEW), regime)
    depth = render_depth_gt(scene, camera)
    occ_points, occ_labels = occupancy_samples(scene, derive_rng(seed, OCC_SAMPLES))
    field = SceneField(scene)
    cloud = gt_scene_cloud(scene)
    above = cloud.points[:, 2] > support_z + SAMPLING_Z_MARGIN
    cloud = ScenePointCloud(cloud.points[above], bounds=cloud.bounds)
    candidates = sample_grasps(cloud, field, gripper, seed=seed)
    labeled = [(j, g, label_grasp(g, scene, gripper)) for j, g in enumerate(candidates)]
    positives = [(j, g) for j, g, lab in labeled if lab.success]
    negatives = [(j, g) for j, g, lab in labeled if not lab.success]
    quota = min(len(positives), len(negatives), max_per_class)
    grasps: list[GraspRecord] = []
    # occupied-side renders: unperturbed supervision points carry label 1
    local_cfg = replace(local_render_config(gripper), occupied_side=True)
    for pool, label in ((positives, 1), (negatives, 0)):
        kept = 0
        for j, grasp in pool:
            if kept == quota:
                break
            local = render_local(field, grasp.pose, grasp.width, gripper,
                                 cfg=local_cfg, seed=seed + j + 1)
            if local is None:
                continue
            world, gframe, occ = noisy_local_set(local, grasp.pose, scene,
                                                 derive_rng(seed, NOISE, j))
            grasps.append(GraspRecord(grasp.pose, grasp.width, label, world, gframe, occ))
            kept += 1
    return SceneRecord(scene, depth, occ_points, occ_labels, grasps)


# -------------------------------------------------------------- serialization

def _pack_pose(pose: Pose) -> bytes:
    return np.concatenate([pose.rotation.reshape(-1),
                           pose.translation]).astype("<f8").tobytes()


def _unpack_pose(raw: bytes) -> Pose:
    vals = np.frombuffer(raw, dtype="<f8")
    return Pose(vals[:9].reshape(3, 3).copy(), vals[9:12].copy())


class _Reader:
    def __init__(self, blob: bytes, source: str):
        self.blob = blob
        self.off = 0
        self.source = source

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.blob):
            raise FormatError(f"{self.source}: truncated record")
        out = self.blob[self.off:self.off + n]
        self.off += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def save_scene_record(path, record: SceneRecord) -> None:
    chunks = [RECORD_MAGIC]

    def section(raw: bytes) -> None:
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)

    section(scene_to_text(record.scene).encode("ascii"))
    cam = record.camera
    chunks.append(_pack_pose(cam.pose))
    chunks.append(struct.pack("<dII", cam.fov_deg, cam.width, cam.height))
    chunks.append(record.depth.depth.astype("<f4").tobytes())
    chunks.append(struct.pack("<I", len(record.occ_points)))
    chunks.append(record.occ_points.astype("<f4").tobytes())
    chunks.append(record.occ_labels.astype(np.uint8).tobytes())
    chunks.append(struct.pack("<I", len(record.grasps)))
    for g in record.grasps:
        chunks.append(_pack_pose(g.pose))
        chunks.append(struct.pack("<dB", g.width, int(g.label)))
        chunks.append(struct.pack("<I", len(g.local_world)))
        chunks.append(g.local_world.astype("<f4").tobytes())
        chunks.append(g.local_grasp.astype("<f4").tobytes())
        chunks.append(g.local_occ.astype(np.uint8).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_scene_record(path) -> SceneRecord:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(RECORD_MAGIC):
        raise FormatError(f"{path}: not a scene record")
    r = _Reader(blob[len(RECORD_MAGIC):], str(path))
    scene = scene_from_text(r.take(r.u32()).decode("ascii"), source=str(path))
    pose = _unpack_pose(r.take(96))
    fov, width, height = struct.unpack("<dII", r.take(16))
    camera = PinholeCamera(pose, fov, width, height)
    depth_vals = np.frombuffer(r.take(4 * width * height), dtype="<f4")
    depth = DepthImage(depth_vals.astype(np.float64).reshape(height, width), camera)
    n_occ = r.u32()
    occ_points = np.frombuffer(r.take(12 * n_occ), dtype="<f4").astype(np.float64)
    occ_points = occ_points.reshape(n_occ, 3)
    occ_labels = np.frombuffer(r.take(n_occ), dtype=np.uint8).copy()
    grasps = []
    for _ in range(r.u32()):
        gpose = _unpack_pose(r.take(96))
        gw, glabel = struct.unpack("<dB", r.take(9))
        m = r.u32()
        world = np.frombuffer(r.take(12 * m), dtype="<f4").astype(np.float64).reshape(m, 3)
        gframe = np.frombuffer(r.take(12 * m), dtype="<f4").astype(np.float64).reshape(m, 3)
        occ = np.frombuffer(r.take(m), dtype=np.uint8).copy()
        grasps.append(GraspRecord(gpose, gw, int(glabel), world, gframe, occ))
    if r.off != len(r.blob):
        raise FormatError(f"{path}: trailing bytes in record")
    return SceneRecord(scene, depth, occ_points, occ_labels, grasps)


# ------------------------------------------------------------------- dataset

@dataclass
class DatasetManifest:
    root_seed: int
    kind: str
    regime: str
    workspace_size: float
    files: list[str]

    def paths(self, root) -> list[Path]:
        return [Path(root) / name for name in self.files]


def _build_one(args) -> tuple[int, str, int, int]:
    root_seed, index, kind, regime, workspace_size, support_z, max_per_class, out_dir = args
    record = generate_scene_record(root_seed, index, kind, regime,
                                   workspace_size, support_z,
                                   max_per_class=max_per_class)
    name = f"scene_{index:05d}.bin"
    save_scene_record(Path(out_dir) / name, record)
    return index, name, len(record.grasps), record.n_positive


def build_dataset(out_dir, n_scenes: int, root_seed: int = 0, kind: str = PACKED,
                  regime: str = REGIME_RANDOM, workspace_size: float = 0.30,
                  support_z: float = 0.05, workers: int = 1,
                  max_per_class: int = MAX_GRASPS_PER_CLASS) -> DatasetManifest:
    """Generate n_scenes shards plus a manifest; byte-deterministic."""
    require(n_scenes >= 1, "need at least one scene")
    require(workers >= 1, "workers must be >= 1")
    require(kind in SCENE_KINDS, f"unknown scene kind {kind!r}")
    require(regime in VIEW_REGIMES, f"unknown view regime {regime!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(root_seed, i, kind, regime, workspace_size, support_z,
             max_per_class, str(out))
            for i in range(n_scenes)]
    results = []
    if workers == 1:
        for job in jobs:
            results.append(_build_one(job))
            if results[-1][0] % 20 == 0:
                logger.info("generated scene %d/%d", results[-1][0] + 1, n_scenes)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for res in pool.map(_build_one, jobs):
                results.append(res)
                if res[0] % 20 == 0:
                    logger.info("generated scene %d/%d", res[0] + 1, n_scenes)
    results.sort()
    lines = [MANIFEST_MAGIC,
             f"root_seed {root_seed}",
             f"kind {kind}",
             f"regime {regime}",
             f"workspace_size {workspace_size!r}",
             f"scenes {n_scenes}"]
    for index, name, n_grasps, n_pos in results:
        lines.append(f"scene {index} {name} {n_grasps} {n_pos}")
    (out / MANIFEST_NAME).write_text("\n".join(lines) + "\n", encoding="ascii")
    return DatasetManifest(root_seed, kind, regime, workspace_size,
                           [name for _, name, _, _ in results])


def load_dataset(dataset_dir) -> tuple[DatasetManifest, list[SceneRecord]]:
    """Load the manifest and every scene record of a built dataset."""
    manifest = load_manifest(dataset_dir)
    return manifest, [load_scene_record(p) for p in manifest.paths(dataset_dir)]


def load_manifest(dataset_dir) -> DatasetManifest:
    path = Path(dataset_dir) / MANIFEST_NAME
    if not path.exists():
        raise FormatError(f"{path}: no dataset manifest")
    lines = [ln.strip() for ln in path.read_text(encoding="ascii").splitlines() if ln.strip()]
    if not lines or lines[0] != MANIFEST_MAGIC:
        raise FormatError(f"{path}: unsupported manifest header")
    kv = dict(ln.split(maxsplit=1) for ln in lines[1:6])
    try:
        n = int(kv["scenes"])
        manifest = DatasetManifest(int(kv["root_seed"]), kv["kind"], kv["regime"],
                                   float(kv["workspace_size"]), [])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: bad manifest fields ({exc})") from exc
    for ln in lines[6:]:
        fields = ln.split()
        if len(fields) != 5 or fields[0] != "scene":
            raise FormatError(f"{path}: bad scene line {ln!r}")
        manifest.files.append(fields[2])
    if len(manifest.files) != n:
        raise FormatError(f"{path}: expected {n} scenes, found {len(manifest.files)}")
    return manifest
