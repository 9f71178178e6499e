"""Rigid transforms, pinhole cameras, primitive scenes, and exact geometry oracles.

Conventions used throughout the package:
  * world frame: z up, support plane at z = support_plane_z, workspace is the
    axis-aligned cube [0, workspace_size]^3
  * camera frame: x right, y down, z forward (optical axis); depth images
    store z-depth (coordinate along the optical axis), sentinel 0 for no hit
  * poses map local/camera coordinates into world coordinates
  * point batches are float64 arrays of shape (n, 3)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, require

SPHERE = "sphere"
BOX = "box"
CYLINDER = "cylinder"
_SHAPES = (SPHERE, BOX, CYLINDER)

_ORTHO_TOL = 1e-9


def as_points(p: np.ndarray) -> np.ndarray:
    """Coerce (3,) or (n, 3) input to a float64 (n, 3) array."""
    a = np.asarray(p, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    require(a.ndim == 2 and a.shape[1] == 3, f"expected (n, 3) points, got shape {a.shape}")
    return a


def unit(v: np.ndarray) -> np.ndarray:
    """Normalize the last axis; raises on near-zero vectors."""
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    require(bool(np.all(n > 1e-12)), "cannot normalize near-zero vector")
    return v / n


@dataclass(frozen=True)
class Pose:
    """Rigid transform: x_world = rotation @ x_local + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        require(r.shape == (3, 3), f"rotation must be (3, 3), got {r.shape}")
        err = np.abs(r.T @ r - np.eye(3)).max()
        require(err <= _ORTHO_TOL, f"rotation not orthonormal (|R^T R - I| = {err:.3e})")
        require(np.linalg.det(r) > 0.0, "rotation must be proper (det +1), got a reflection")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def compose(self, other: "Pose") -> "Pose":
        """self then applied after other: result maps x through other, then self."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        return Pose(self.rotation.T, -self.rotation.T @ self.translation)

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Apply to (n, 3) or (3,) points; returns the same leading shape."""
        p = np.asarray(points, dtype=np.float64)
        single = p.ndim == 1
        out = as_points(p) @ self.rotation.T + self.translation
        return out[0] if single else out

    def transform_dir(self, dirs: np.ndarray) -> np.ndarray:
        """Rotate direction vectors (no translation)."""
        d = np.asarray(dirs, dtype=np.float64)
        single = d.ndim == 1
        out = as_points(d) @ self.rotation.T
        return out[0] if single else out


def rotation_about_axis(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix for a unit `axis` and `angle` in radians."""
    a = unit(np.asarray(axis, dtype=np.float64))
    k = np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def rotation_from_quat(q: np.ndarray) -> np.ndarray:
    """Rotation matrix from quaternion (w, x, y, z), any nonzero norm."""
    q = np.asarray(q, dtype=np.float64).reshape(4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_rotation(r: np.ndarray) -> np.ndarray:
    """Quaternion (w, x, y, z) with nonnegative scalar part.

    The double cover is resolved by flipping sign when w < 0; an exact w = 0
    tie is broken by making the first nonzero vector component positive.
    """
    r = np.asarray(r, dtype=np.float64)
    require(r.shape == (3, 3), "expected a (3, 3) rotation")
    tr = np.trace(r)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s, (r[2, 1] - r[1, 2]) / s,
                      (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(r)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(1.0 + r[i, i] - r[j, j] - r[k, k], 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (r[k, j] - r[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (r[j, i] + r[i, j]) / s
        q[1 + k] = (r[k, i] + r[i, k]) / s
    q = q / np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    elif q[0] == 0.0:
        nz = np.nonzero(q[1:])[0]
        if nz.size and q[1 + nz[0]] < 0:
            q = -q
    return q


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation via a normalized Gaussian quaternion."""
    q = rng.normal(size=4)
    while np.linalg.norm(q) < 1e-8:
        q = rng.normal(size=4)
    return rotation_from_quat(q)


def look_at(eye: np.ndarray, target: np.ndarray, up_hint: np.ndarray | None = None) -> Pose:
    """Camera pose at `eye` with optical axis toward `target` (x right, y down)."""
    eye = np.asarray(eye, dtype=np.float64).reshape(3)
    fwd = unit(np.asarray(target, dtype=np.float64).reshape(3) - eye)
    up = np.array([0.0, 0.0, 1.0]) if up_hint is None else unit(np.asarray(up_hint, float))
    if abs(float(np.dot(fwd, up))) > 1.0 - 1e-9:
        up = np.array([0.0, 1.0, 0.0])
    right = unit(np.cross(fwd, up))
    down = np.cross(fwd, right)
    r = np.column_stack([right, down, fwd])
    return Pose(r, eye)


@dataclass(frozen=True)
class PinholeCamera:
    """Pinhole camera with square pixels and a full horizontal field of view.

    `pose` maps camera coordinates to world coordinates. Pixel (row v, col u)
    has its center at (u + 0.5, v + 0.5); the principal point sits at the
    image center, so the vertical FOV follows from the aspect ratio.
    """

    pose: Pose
    fov_deg: float
    width: int
    height: int

    def __post_init__(self):
        require(0.0 < self.fov_deg < 180.0, f"fov_deg must be in (0, 180), got {self.fov_deg}")
        require(self.width >= 1 and self.height >= 1, "image must be at least 1x1")

    @property
    def focal(self) -> float:
        """Focal length in pixels."""
        return (self.width / 2.0) / np.tan(np.deg2rad(self.fov_deg) / 2.0)

    def pixel_dirs_cam(self) -> np.ndarray:
        """(h*w, 3) per-pixel ray directions in camera frame, z component 1.

        Row-major pixel order (row 0 left-to-right first). Scaling a direction
        by a z-depth value gives the camera-frame point directly.
        """
        f = self.focal
        u = (np.arange(self.width) + 0.5 - self.width / 2.0) / f
        v = (np.arange(self.height) + 0.5 - self.height / 2.0) / f
        uu, vv = np.meshgrid(u, v)
        return np.stack([uu.ravel(), vv.ravel(), np.ones(uu.size)], axis=1)

    def pixel_rays_world(self) -> tuple[np.ndarray, np.ndarray]:
        """(origins (n,3), unit directions (n,3)) in world, row-major pixels."""
        d = self.pose.transform_dir(self.pixel_dirs_cam())
        d = d / np.linalg.norm(d, axis=1, keepdims=True)
        o = np.broadcast_to(self.pose.translation, d.shape).copy()
        return o, d


@dataclass(frozen=True)
class Primitive:
    """One solid: sphere (dimensions [r]), box ([lx, ly, lz] full side
    lengths), or cylinder ([r, h], axis along local +z)."""

    shape: str
    pose: Pose
    dimensions: np.ndarray

    def __post_init__(self):
        require(self.shape in _SHAPES, f"unknown shape {self.shape!r}")
        d = np.asarray(self.dimensions, dtype=np.float64).ravel()
        n_expected = {SPHERE: 1, BOX: 3, CYLINDER: 2}[self.shape]
        require(d.shape == (n_expected,),
                f"{self.shape} needs {n_expected} dimensions, got {d.shape}")
        require(bool(np.all(d > 0.0)), f"{self.shape} dimensions must be positive")
        object.__setattr__(self, "dimensions", d)


def make_sphere(radius: float, center: np.ndarray) -> Primitive:
    return Primitive(SPHERE, Pose(np.eye(3), np.asarray(center, float)), np.array([radius]))


def make_box(size: np.ndarray, pose: Pose) -> Primitive:
    return Primitive(BOX, pose, np.asarray(size, float))


def make_cylinder(radius: float, height: float, pose: Pose) -> Primitive:
    return Primitive(CYLINDER, pose, np.array([radius, height]))


@dataclass
class PrimitiveScene:
    """Union of primitives over an occupied support half-space z <= support_plane_z."""

    primitives: list = field(default_factory=list)
    workspace_size: float = 0.30
    support_plane_z: float = 0.05

    def __post_init__(self):
        require(self.workspace_size > 0, "workspace_size must be positive")

    def bounds(self) -> np.ndarray:
        """Workspace cube as (2, 3) [min; max]."""
        return np.array([[0.0, 0.0, 0.0], [self.workspace_size] * 3])


def _row_norms(v: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", v, v))


def _sdf_primitive_checked(prim: Primitive, p: np.ndarray) -> np.ndarray:
    local = (p - prim.pose.translation) @ prim.pose.rotation
    if prim.shape == SPHERE:
        return _row_norms(local) - prim.dimensions[0]
    if prim.shape == BOX:
        q = np.abs(local)
        q -= prim.dimensions / 2.0
        outside = _row_norms(np.maximum(q, 0.0))
        inside = np.minimum(q.max(axis=1), 0.0)
        return outside + inside
    # cylinder: radial/axial distance pair, exact for all regions
    r, h = prim.dimensions
    d = np.stack([np.hypot(local[:, 0], local[:, 1]) - r, np.abs(local[:, 2]) - h / 2.0], axis=1)
    outside = _row_norms(np.maximum(d, 0.0))
    inside = np.minimum(d.max(axis=1), 0.0)
    return outside + inside


def sdf_primitive(prim: Primitive, points: np.ndarray) -> np.ndarray:
    """Exact signed distance of one primitive at (n, 3) points (negative inside)."""
    return _sdf_primitive_checked(prim, as_points(points))


def sdf_gt(scene: PrimitiveScene, points: np.ndarray) -> np.ndarray:
    """Signed distance to the occupied region (primitive union + support half-space)."""
    p = as_points(points)
    best = p[:, 2] - scene.support_plane_z
    for prim in scene.primitives:
        np.minimum(best, _sdf_primitive_checked(prim, p), out=best)
    return best


def occupancy_gt(scene: PrimitiveScene, points: np.ndarray) -> np.ndarray:
    """Binary occupancy in {0.0, 1.0}; the boundary (sdf exactly 0) counts occupied."""
    return (sdf_gt(scene, points) <= 0.0).astype(np.float64)


class SceneField:
    """Ground-truth occupancy field adapter for a PrimitiveScene."""

    def __init__(self, scene: PrimitiveScene):
        self.scene = scene

    def occupancy(self, points: np.ndarray) -> np.ndarray:
        return occupancy_gt(self.scene, points)


def primitive_normal(prim: Primitive, points: np.ndarray) -> np.ndarray:
    """Outward unit surface normal of `prim` at (n, 3) near-surface points."""
    p = as_points(points)
    local = (p - prim.pose.translation) @ prim.pose.rotation
    if prim.shape == SPHERE:
        n_local = unit(local)
    elif prim.shape == BOX:
        h = prim.dimensions / 2.0
        # face = axis whose |coordinate| is closest to its half extent
        gap = h - np.abs(local)
        axis = np.argmin(gap, axis=1)
        n_local = np.zeros_like(local)
        rows = np.arange(len(p))
        s = np.sign(local[rows, axis])
        s[s == 0.0] = 1.0
        n_local[rows, axis] = s
    else:
        r, h = prim.dimensions
        radial = np.hypot(local[:, 0], local[:, 1])
        side_gap = np.abs(radial - r)
        cap_gap = np.abs(np.abs(local[:, 2]) - h / 2.0)
        n_local = np.zeros_like(local)
        use_cap = cap_gap <= side_gap
        n_local[use_cap, 2] = np.sign(local[use_cap, 2])
        safe = ~use_cap & (radial > 1e-12)
        n_local[safe, 0] = local[safe, 0] / radial[safe]
        n_local[safe, 1] = local[safe, 1] / radial[safe]
        n_local[~use_cap & (radial <= 1e-12), 2] = 1.0
    return n_local @ prim.pose.rotation.T


def _ray_sphere(local_o, local_d, dims):
    r = dims[0]
    a = np.einsum("ij,ij->i", local_d, local_d)
    b = 2.0 * np.einsum("ij,ij->i", local_o, local_d)
    c = np.einsum("ij,ij->i", local_o, local_o) - r * r
    disc = b * b - 4.0 * a * c
    t = np.full(len(local_o), np.inf)
    ok = disc >= 0.0
    sq = np.sqrt(np.maximum(disc, 0.0))
    t1 = (-b - sq) / (2.0 * a)
    t2 = (-b + sq) / (2.0 * a)
    t = np.where(ok & (t1 >= 0.0), t1, t)
    t = np.where(ok & (t1 < 0.0) & (t2 >= 0.0), t2, t)
    return t


def _ray_box(local_o, local_d, dims):
    h = dims / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / local_d
        ta = (-h - local_o) * inv
        tb = (h - local_o) * inv
    # degenerate axes: inside slab -> (-inf, inf), outside -> empty interval
    par = local_d == 0.0
    inside_slab = np.abs(local_o) <= h
    lo = np.where(par, np.where(inside_slab, -np.inf, np.inf), np.minimum(ta, tb))
    hi = np.where(par, np.where(inside_slab, np.inf, -np.inf), np.maximum(ta, tb))
    tmin = lo.max(axis=1)
    tmax = hi.min(axis=1)
    hit = (tmax >= np.maximum(tmin, 0.0)) & (tmax >= 0.0)
    t = np.where(tmin >= 0.0, tmin, tmax)
    return np.where(hit, t, np.inf)


def _ray_cylinder(local_o, local_d, dims):
    r, h = dims
    half = h / 2.0
    n = len(local_o)
    cand = np.full((n, 4), np.inf)
    a = local_d[:, 0] ** 2 + local_d[:, 1] ** 2
    b = 2.0 * (local_o[:, 0] * local_d[:, 0] + local_o[:, 1] * local_d[:, 1])
    c = local_o[:, 0] ** 2 + local_o[:, 1] ** 2 - r * r
    disc = b * b - 4.0 * a * c
    ok = (disc >= 0.0) & (a > 0.0)
    sq = np.sqrt(np.maximum(disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        for slot, sgn in ((0, -1.0), (1, 1.0)):
            t = (-b + sgn * sq) / (2.0 * a)
            z = local_o[:, 2] + t * local_d[:, 2]
            good = ok & (t >= 0.0) & (np.abs(z) <= half)
            cand[:, slot] = np.where(good, t, np.inf)
        for slot, zc in ((2, -half), (3, half)):
            t = (zc - local_o[:, 2]) / local_d[:, 2]
            x = local_o[:, 0] + t * local_d[:, 0]
            y = local_o[:, 1] + t * local_d[:, 1]
            good = (local_d[:, 2] != 0.0) & (t >= 0.0) & (x * x + y * y <= r * r)
            cand[:, slot] = np.where(good, t, np.inf)
    return cand.min(axis=1)


_RAY_FNS = {SPHERE: _ray_sphere, BOX: _ray_box, CYLINDER: _ray_cylinder}


def ray_primitive(prim: Primitive, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """First nonnegative ray parameter hitting the primitive surface, inf on miss.

    Direction vectors need not be unit length; the returned parameter is in
    units of the given direction. Rays starting inside report the exit point.
    """
    o = as_points(origins)
    d = as_points(dirs)
    require(o.shape == d.shape, "origins and dirs must have matching shapes")
    local_o = (o - prim.pose.translation) @ prim.pose.rotation
    local_d = d @ prim.pose.rotation
    return _RAY_FNS[prim.shape](local_o, local_d, prim.dimensions)


def cast_rays(scene: PrimitiveScene, origins: np.ndarray, dirs: np.ndarray,
              include_support: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """First-hit parameters and owning primitive indices for a ray batch.

    Returns:
        (t, idx): t is inf where nothing is hit; idx is the index into
        scene.primitives, or -1 for a support-plane hit / miss.
    """
    o = as_points(origins)
    d = as_points(dirs)
    t_best = np.full(len(o), np.inf)
    idx = np.full(len(o), -1, dtype=np.int64)
    for i, prim in enumerate(scene.primitives):
        t = ray_primitive(prim, o, d)
        better = t < t_best
        t_best = np.where(better, t, t_best)
        idx[better] = i
    if include_support:
        with np.errstate(divide="ignore", invalid="ignore"):
            t_plane = (scene.support_plane_z - o[:, 2]) / d[:, 2]
        good = (d[:, 2] != 0.0) & (t_plane >= 0.0) & (t_plane < t_best)
        t_best = np.where(good, t_plane, t_best)
        idx[good] = -1
    return t_best, idx


@dataclass
class DepthImage:
    """z-depth image; 0 marks pixels with no return."""

    depth: np.ndarray
    camera: PinholeCamera

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float64)
        require(d.shape == (self.camera.height, self.camera.width),
                f"depth shape {d.shape} does not match camera "
                f"{(self.camera.height, self.camera.width)}")
        require(bool(np.all(np.isfinite(d))) and bool(np.all(d >= 0.0)),
                "depth values must be finite and nonnegative (0 = sentinel)")
        self.depth = d


def render_depth_gt(scene: PrimitiveScene, camera: PinholeCamera) -> DepthImage:
    """Exact depth image of a scene by analytic ray casting.

    The camera must be outside all solids. Hits beyond the workspace are kept
    (cropping happens when converting to a point cloud).
    """
    dirs_cam = camera.pixel_dirs_cam()
    o = np.broadcast_to(camera.pose.translation, dirs_cam.shape)
    d = camera.pose.transform_dir(dirs_cam)
    eps = sdf_gt(scene, camera.pose.translation[None, :])
    require(float(eps[0]) > 0.0, "camera origin must lie in free space")
    t, _ = cast_rays(scene, o, d)
    depth = np.where(np.isfinite(t), t, 0.0)
    return DepthImage(depth.reshape(camera.height, camera.width), camera)


@dataclass
class ScenePointCloud:
    """World-frame point cloud, optionally with unit normals and a declared bound."""

    points: np.ndarray
    normals: np.ndarray | None = None
    bounds: np.ndarray | None = None

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.points = p
        if self.normals is not None:
            n = np.asarray(self.normals, dtype=np.float64)
            require(n.shape == p.shape, "normals must match points in shape")
            self.normals = n
        if self.bounds is not None:
            b = np.asarray(self.bounds, dtype=np.float64)
            require(b.shape == (2, 3), "bounds must be (2, 3) [min; max]")
            if len(p):
                inside = np.all((p >= b[0] - 1e-9) & (p <= b[1] + 1e-9))
                require(bool(inside), "points violate the declared bounds")
            self.bounds = b

    def __len__(self) -> int:
        return len(self.points)


def depth_to_pointcloud(image: DepthImage, bounds: np.ndarray | None = None) -> ScenePointCloud:
    """Back-project valid pixels to world points, optionally cropped to bounds."""
    cam = image.camera
    dirs = cam.pixel_dirs_cam()
    depth = image.depth.ravel()
    valid = depth > 0.0
    pts_cam = dirs[valid] * depth[valid, None]
    pts = cam.pose.transform(pts_cam) if len(pts_cam) else np.zeros((0, 3))
    if bounds is not None:
        b = np.asarray(bounds, dtype=np.float64)
        keep = np.all((pts >= b[0]) & (pts <= b[1]), axis=1)
        pts = pts[keep]
    return ScenePointCloud(pts, bounds=None if bounds is None else bounds)


def primitive_surface_points(prim: Primitive, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Deterministic quasi-uniform surface samples in world frame.

    Used for conservative clearance/contact probing during scene generation.
    Includes the extreme points of the shape so support contacts are found.
    """
    require(n >= 8, "need at least 8 surface samples")
    if prim.shape == SPHERE:
        r = prim.dimensions[0]
        i = np.arange(n, dtype=np.float64)
        phi = np.arccos(1.0 - 2.0 * (i + 0.5) / n)
        theta = np.pi * (1.0 + np.sqrt(5.0)) * i
        local = r * np.stack([np.sin(phi) * np.cos(theta),
                              np.sin(phi) * np.sin(theta),
                              np.cos(phi)], axis=1)
    elif prim.shape == BOX:
        h = prim.dimensions / 2.0
        per_face = max(int(np.ceil(np.sqrt(n / 6.0))), 2)
        g = np.linspace(-1.0, 1.0, per_face)
        gu, gv = np.meshgrid(g, g)
        gu, gv = gu.ravel(), gv.ravel()
        faces = []
        for axis in range(3):
            for sign in (-1.0, 1.0):
                f = np.zeros((gu.size, 3))
                f[:, axis] = sign * h[axis]
                others = [a for a in range(3) if a != axis]
                f[:, others[0]] = gu * h[others[0]]
                f[:, others[1]] = gv * h[others[1]]
                faces.append(f)
        local = np.concatenate(faces, axis=0)
    else:
        r, hgt = prim.dimensions
        half = hgt / 2.0
        n_side = max(n // 2, 8)
        n_ring = max(int(np.sqrt(n_side)), 4)
        angles = np.linspace(0.0, 2.0 * np.pi, n_ring, endpoint=False)
        zs = np.linspace(-half, half, max(n_side // n_ring, 2))
        aa, zz = np.meshgrid(angles, zs)
        side = np.stack([r * np.cos(aa.ravel()), r * np.sin(aa.ravel()), zz.ravel()], axis=1)
        caps = []
        for zc in (-half, half):
            radii = np.linspace(0.0, r, n_ring)
            ra, an = np.meshgrid(radii, angles)
            caps.append(np.stack([ra.ravel() * np.cos(an.ravel()),
                                  ra.ravel() * np.sin(an.ravel()),
                                  np.full(ra.size, zc)], axis=1))
        local = np.concatenate([side] + caps, axis=0)
    return prim.pose.transform(local)
