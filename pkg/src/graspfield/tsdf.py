"""Truncated signed distance fusion of depth images on a regular grid."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import require
from .geometry import DepthImage

WEIGHT_CAP = 100.0


@dataclass
class TSDFGrid:
    """Cubic TSDF over [0, size]^3; truncation = 4 voxels, values in [-1, 1].

    Unobserved voxels keep value 0 and weight 0.
    """

    resolution: int = 64
    size: float = 0.30
    values: np.ndarray = field(default=None)
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        require(self.resolution >= 2, "resolution must be >= 2")
        require(self.size > 0.0, "size must be positive")
        shape = (self.resolution,) * 3
        if self.values is None:
            self.values = np.zeros(shape, dtype=np.float64)
        if self.weights is None:
            self.weights = np.zeros(shape, dtype=np.float64)
        require(self.values.shape == shape and self.weights.shape == shape,
                "values/weights must be (res, res, res)")

    @property
    def voxel_size(self) -> float:
        return self.size / self.resolution

    @property
    def truncation(self) -> float:
        return 4.0 * self.voxel_size

    def voxel_centers(self) -> np.ndarray:
        """(res^3, 3) world coordinates of voxel centers, x-major raveling
        consistent with values.reshape(-1)."""
        r = self.resolution
        g = (np.arange(r, dtype=np.float64) + 0.5) * self.voxel_size
        x, y, z = np.meshgrid(g, g, g, indexing="ij")
        return np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)


def integrate(grid: TSDFGrid, image: DepthImage) -> None:
    """Fuse one depth image into the grid (projective TSDF, weighted average).

    Voxels project into the image plane; those within the truncation band in
    front of or just behind the observed surface are updated. Weight grows by
    1 per observation and saturates at WEIGHT_CAP.
    """
    cam = image.camera
    centers = grid.voxel_centers()
    p_cam = (centers - cam.pose.translation) @ cam.pose.rotation
    z = p_cam[:, 2]
    ok = z > 1e-9
    f = cam.focal
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.floor(p_cam[:, 0] / z * f + cam.width / 2.0).astype(np.int64)
        v = np.floor(p_cam[:, 1] / z * f + cam.height / 2.0).astype(np.int64)
    ok &= (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
    d = np.zeros(len(centers))
    d[ok] = image.depth[v[ok], u[ok]]
    ok &= d > 0.0
    sdf = d - z
    trunc = grid.truncation
    ok &= sdf >= -trunc
    sample = np.clip(sdf / trunc, -1.0, 1.0)

    flat_v = grid.values.reshape(-1)
    flat_w = grid.weights.reshape(-1)
    w = flat_w[ok]
    flat_v[ok] = (flat_v[ok] * w + sample[ok]) / (w + 1.0)
    flat_w[ok] = np.minimum(w + 1.0, WEIGHT_CAP)
