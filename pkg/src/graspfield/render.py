"""Surface rendering of occupancy fields by ray marching + secant refinement.

Any object with an `occupancy(points (n, 3)) -> (n,)` method is a field.
Values live in [0, 1]; the surface is the 0.5 level set, and a value of
exactly 0.5 counts as occupied.

Two configurations matter in practice: a global render from a 6-camera ring
around the workspace (scene completion) and a local render from three
gripper-mounted cameras (grasp surface features).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import require
from .geometry import PinholeCamera, Pose, ScenePointCloud, look_at
from .gripper import GripperModel, interior_box
from .seeding import SUBSAMPLE, derive_rng

SCENE_N_CAMERAS = 6
SCENE_RING_ELEVATION_DEG = 60.0
SCENE_RING_RADIUS_FACTOR = 1.5
SCENE_LEAF = 0.005

LOCAL_CAMERA_OFFSET = 0.025
LOCAL_FILTER_MARGIN = 0.01
LOCAL_MAX_POINTS = 1024
LOCAL_MIN_POINTS = 50


@dataclass(frozen=True)
class RenderConfig:
    """Ray-march parameters: equally spaced proposals on [0, t_max] (both ends
    included) followed by `secant_steps` refinement steps.

    occupied_side returns the occupied bracket end instead of the last
    refinement iterate. On binary fields the bracket halves every step, so
    that end is equally tight and its points always test occupied; smooth
    fields should keep the default, where refinement converges faster than
    the bracket."""

    n_proposals: int = 256
    t_max: float = 0.90
    secant_steps: int = 8
    image_size: int = 64
    fov_deg: float = 90.0
    occupied_side: bool = False

    def __post_init__(self):
        require(self.n_proposals >= 2, f"n_proposals must be >= 2, got {self.n_proposals}")
        require(self.t_max > 0.0, f"t_max must be positive, got {self.t_max}")
        require(self.secant_steps >= 0, "secant_steps must be >= 0")
        require(self.image_size >= 1, "image_size must be >= 1")
        require(0.0 < self.fov_deg < 180.0, "fov_deg must be in (0, 180)")


def scene_render_config(workspace_size: float) -> RenderConfig:
    """Global render defaults: 256 proposals out to 3 x workspace size."""
    return RenderConfig(n_proposals=256, t_max=3.0 * workspace_size,
                        secant_steps=8, image_size=64, fov_deg=90.0)


def local_render_config(gripper: GripperModel) -> RenderConfig:
    """Local render defaults: 15 proposals out to 9 cm for the default 8 cm
    gripper (1.125 x max width)."""
    return RenderConfig(n_proposals=15, t_max=round(1.125 * gripper.max_width, 9),
                        secant_steps=8, image_size=64, fov_deg=120.0)


def _march_batch(field, origins: np.ndarray, dirs: np.ndarray, cfg: RenderConfig):
    """First free-to-occupied sample crossing per ray.

    Returns (hit mask, t_lo, t_hi, f_lo, f_hi) over all rays; non-hit entries
    are undefined. f is occupancy - 0.5 at the bracket ends.
    """
    n_rays = len(origins)
    ts = np.linspace(0.0, cfg.t_max, cfg.n_proposals)
    pts = origins[:, None, :] + ts[None, :, None] * dirs[:, None, :]
    occ = np.asarray(field.occupancy(pts.reshape(-1, 3)), dtype=np.float64)
    occ = occ.reshape(n_rays, cfg.n_proposals)
    occupied = occ >= 0.5
    crossing = ~occupied[:, :-1] & occupied[:, 1:]
    hit = crossing.any(axis=1)
    j = np.argmax(crossing, axis=1)
    rows = np.arange(n_rays)
    t_lo, t_hi = ts[j], ts[j + 1]
    f_lo = occ[rows, j] - 0.5
    f_hi = occ[rows, j + 1] - 0.5
    return hit, t_lo, t_hi, f_lo, f_hi


def _secant_batch(field, origins, dirs, t_lo, t_hi, f_lo, f_hi, steps: int,
                  occupied_side: bool = False) -> np.ndarray:
    """Refine the 0.5 crossing inside brackets; returns the last iterate per
    ray (bracket midpoint when steps == 0), or the occupied bracket end when
    occupied_side. Falls back to bisection whenever the secant step leaves
    the open bracket."""
    if steps == 0 or len(t_lo) == 0:
        return t_hi.copy() if occupied_side else 0.5 * (t_lo + t_hi)
    t_lo, t_hi = t_lo.copy(), t_hi.copy()
    f_lo, f_hi = f_lo.copy(), f_hi.copy()
    last = np.empty_like(t_lo)
    for _ in range(steps):
        denom = f_hi - f_lo
        with np.errstate(divide="ignore", invalid="ignore"):
            t_new = t_hi - f_hi * (t_hi - t_lo) / denom
        bad = ~np.isfinite(t_new) | (t_new <= t_lo) | (t_new >= t_hi)
        t_new = np.where(bad, 0.5 * (t_lo + t_hi), t_new)
        pts = origins + t_new[:, None] * dirs
        f_new = np.asarray(field.occupancy(pts), dtype=np.float64) - 0.5
        neg = f_new < 0.0
        t_lo = np.where(neg, t_new, t_lo)
        f_lo = np.where(neg, f_new, f_lo)
        t_hi = np.where(neg, t_hi, t_new)
        f_hi = np.where(neg, f_hi, f_new)
        last = t_new
    return t_hi if occupied_side else last


def march_ray(field, origin: np.ndarray, direction: np.ndarray,
              cfg: RenderConfig) -> tuple[float, float] | None:
    """Coarse bracket of the first surface crossing along one ray.

    Scans the equally spaced proposals for the first consecutive pair going
    from free (< 0.5) to occupied (>= 0.5); returns (t_lo, t_hi) or None.
    """
    o = np.asarray(origin, dtype=np.float64).reshape(1, 3)
    d = np.asarray(direction, dtype=np.float64).reshape(1, 3)
    hit, t_lo, t_hi, _, _ = _march_batch(field, o, d, cfg)
    if not bool(hit[0]):
        return None
    return float(t_lo[0]), float(t_hi[0])


def secant_refine(field, origin: np.ndarray, direction: np.ndarray,
                  t_lo: float, t_hi: float, steps: int) -> np.ndarray:
    """Refined surface point inside a bracket from march_ray.

    Requires occupancy(origin + t_lo d) < 0.5 <= occupancy(origin + t_hi d).
    """
    require(steps >= 0, "steps must be >= 0")
    require(t_lo < t_hi, f"need t_lo < t_hi, got [{t_lo}, {t_hi}]")
    o = np.asarray(origin, dtype=np.float64).reshape(1, 3)
    d = np.asarray(direction, dtype=np.float64).reshape(1, 3)
    ends = np.concatenate([o + t_lo * d, o + t_hi * d], axis=0)
    occ = np.asarray(field.occupancy(ends), dtype=np.float64)
    require(occ[0] < 0.5, f"bracket start must be free, occupancy {occ[0]}")
    require(occ[1] >= 0.5, f"bracket end must be occupied, occupancy {occ[1]}")
    t = _secant_batch(field, o, d, np.array([t_lo]), np.array([t_hi]),
                      np.array([occ[0] - 0.5]), np.array([occ[1] - 0.5]), steps)
    return (o + t[0] * d)[0]


def render_surface(field, camera: PinholeCamera, cfg: RenderConfig) -> ScenePointCloud:
    """Surface points seen by one camera (row-major pixel order of hits)."""
    origins, dirs = camera.pixel_rays_world()
    hit, t_lo, t_hi, f_lo, f_hi = _march_batch(field, origins, dirs, cfg)
    if not hit.any():
        return ScenePointCloud(np.zeros((0, 3)))
    t = _secant_batch(field, origins[hit], dirs[hit], t_lo[hit], t_hi[hit],
                      f_lo[hit], f_hi[hit], cfg.secant_steps, cfg.occupied_side)
    return ScenePointCloud(origins[hit] + t[:, None] * dirs[hit])


def ring_cameras(workspace_size: float, image_size: int = 64, fov_deg: float = 90.0,
                 n_cameras: int = SCENE_N_CAMERAS,
                 elevation_deg: float = SCENE_RING_ELEVATION_DEG,
                 radius_factor: float = SCENE_RING_RADIUS_FACTOR,
                 azimuth0_deg: float = 0.0) -> list[PinholeCamera]:
    """Evenly spaced camera ring looking at the workspace cube center."""
    center = np.full(3, workspace_size / 2.0)
    radius = radius_factor * workspace_size
    el = np.deg2rad(elevation_deg)
    cams = []
    for k in range(n_cameras):
        az = np.deg2rad(azimuth0_deg + k * 360.0 / n_cameras)
        eye = center + radius * np.array([np.cos(az) * np.cos(el),
                                          np.sin(az) * np.cos(el),
                                          np.sin(el)])
        cams.append(PinholeCamera(look_at(eye, center), fov_deg, image_size, image_size))
    return cams


def voxel_downsample(points: np.ndarray, leaf: float) -> np.ndarray:
    """Centroid per occupied leaf cell; output ordered by cell index, so the
    result depends only on the point set, not its ordering."""
    require(leaf > 0.0, "leaf must be positive")
    if len(points) == 0:
        return points.reshape(0, 3)
    cells = np.floor(points / leaf).astype(np.int64)
    cells -= cells.min(axis=0)
    spans = cells.max(axis=0) + 1
    flat = (cells[:, 0] * spans[1] + cells[:, 1]) * spans[2] + cells[:, 2]
    uniq, inv = np.unique(flat, return_inverse=True)
    counts = np.bincount(inv, minlength=len(uniq)).astype(np.float64)
    out = np.stack([np.bincount(inv, weights=points[:, a], minlength=len(uniq))
                    for a in range(3)], axis=1)
    return out / counts[:, None]


def render_scene(field, workspace_size: float, cfg: RenderConfig | None = None,
                 cameras: list[PinholeCamera] | None = None,
                 leaf: float = SCENE_LEAF,
                 ring_azimuth0_deg: float = 0.0) -> ScenePointCloud:
    """Global surface completion: render from the camera ring, merge clouds in
    camera order, voxel-downsample, crop to the workspace cube."""
    if cfg is None:
        cfg = scene_render_config(workspace_size)
    if cameras is None:
        cameras = ring_cameras(workspace_size, cfg.image_size, cfg.fov_deg,
                               azimuth0_deg=ring_azimuth0_deg)
    parts = [render_surface(field, cam, cfg).points for cam in cameras]
    merged = np.concatenate(parts, axis=0) if parts else np.zeros((0, 3))
    down = voxel_downsample(merged, leaf)
    bounds = np.array([[0.0, 0.0, 0.0], [workspace_size] * 3])
    keep = np.all((down >= bounds[0]) & (down <= bounds[1]), axis=1)
    return ScenePointCloud(down[keep], bounds=bounds)


@dataclass
class LocalSurfaceSet:
    """Rendered surface points near one grasp, in world and grasp frames."""

    points_world: np.ndarray
    points_grasp: np.ndarray

    def __post_init__(self):
        self.points_world = np.asarray(self.points_world, dtype=np.float64).reshape(-1, 3)
        self.points_grasp = np.asarray(self.points_grasp, dtype=np.float64).reshape(-1, 3)
        require(self.points_world.shape == self.points_grasp.shape,
                "world/grasp point arrays must match")

    def __len__(self) -> int:
        return len(self.points_world)


def local_cameras(grasp_pose: Pose, width: float, gripper: GripperModel,
                  image_size: int = 64, fov_deg: float = 120.0,
                  offset: float = LOCAL_CAMERA_OFFSET) -> list[PinholeCamera]:
    """One camera per link (finger+, finger-, base), placed `offset` outward
    from the link center, looking along the link's inward normal."""
    tk = gripper.finger_thickness
    lf = gripper.finger_length
    y_f = width / 2.0 + tk / 2.0
    # (link center, inward normal) in grasp frame
    links = [
        (np.array([-lf / 2.0, +y_f, 0.0]), np.array([0.0, -1.0, 0.0])),
        (np.array([-lf / 2.0, -y_f, 0.0]), np.array([0.0, +1.0, 0.0])),
        (np.array([-lf - gripper.base_depth / 2.0, 0.0, 0.0]), np.array([1.0, 0.0, 0.0])),
    ]
    cams = []
    for center, inward in links:
        eye = grasp_pose.transform(center - offset * inward)
        target = grasp_pose.transform(center)
        cams.append(PinholeCamera(look_at(eye, target), fov_deg, image_size, image_size))
    return cams


def render_local(field, grasp_pose: Pose, width: float, gripper: GripperModel,
                 cfg: RenderConfig | None = None, seed: int = 0,
                 max_points: int = LOCAL_MAX_POINTS, min_points: int = LOCAL_MIN_POINTS,
                 margin: float = LOCAL_FILTER_MARGIN) -> LocalSurfaceSet | None:
    """Grasp-local surface render.

    Renders from the three link cameras, merges in camera order (pixel order
    within a camera), keeps points within `margin` of the gripper interior
    box, subsamples to at most `max_points` (seeded, order preserving), and
    returns None when fewer than `min_points` survive.
    """
    if cfg is None:
        cfg = local_render_config(gripper)
    cams = local_cameras(grasp_pose, width, gripper, cfg.image_size, cfg.fov_deg)
    parts = [render_surface(field, cam, cfg).points for cam in cams]
    world = np.concatenate(parts, axis=0)
    inv = grasp_pose.inverse()
    local = inv.transform(world) if len(world) else world
    lo, hi = interior_box(gripper, width)
    if len(local):
        keep = np.all((local >= lo - margin) & (local <= hi + margin), axis=1)
        world, local = world[keep], local[keep]
    if len(world) < min_points:
        return None
    if len(world) > max_points:
        rng = derive_rng(seed, SUBSAMPLE)
        idx = np.sort(rng.choice(len(world), size=max_points, replace=False))
        world, local = world[idx], local[idx]
    return LocalSurfaceSet(world, local)
