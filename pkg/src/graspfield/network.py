"""Tri-plane scene encoding with occupancy and grasp-quality heads.

A scene observation (TSDF grid or point cloud) is encoded into three
axis-aligned square feature planes (xy, yz, xz). Any 3d point is featurized
by bilinearly sampling each plane at its two projected coordinates and
concatenating the results. A small residual MLP decodes occupancy; a
per-point MLP with max pooling plus a pose-conditioned classifier decodes
grasp quality from a local surface patch expressed in the grasp frame.

All coordinates entering the network are divided by the workspace edge
length, so features live on a unit cube regardless of scene scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import FormatError, require
from .geometry import as_points, quat_from_rotation
from .render import LOCAL_MIN_POINTS
from .seeding import INIT, derive_rng

PLANE_AXES = ((0, 1), (1, 2), (0, 2))
CHECKPOINT_MAGIC = "graspfield-checkpoint 1"

OCC_HIDDEN = 32
QUAL_HIDDEN = 64
QUAL_EMBED = 128
POSE_DIM = 7


@dataclass(frozen=True)
class NetworkConfig:
    plane_resolution: int = 64
    plane_channels: int = 16

    def __post_init__(self):
        require(self.plane_resolution >= 2, "plane_resolution must be >= 2")
        require(self.plane_channels >= 1, "plane_channels must be >= 1")

    @property
    def feature_dim(self) -> int:
        return 3 * self.plane_channels


def _param_specs(config: NetworkConfig):
    """(name, shape, init) for every tensor, in creation order.

    init is "zero" or the he-normal fan-in. Final layers of both heads start
    at zero so an untrained model predicts 0.5 everywhere.
    """
    c = config.plane_channels
    f = config.feature_dim
    h = OCC_HIDDEN
    q = QUAL_HIDDEN
    e = QUAL_EMBED
    specs = [
        ("tsdf_conv1_w", (3, 3, 1, c), 9),
        ("tsdf_conv1_b", (c,), "zero"),
        ("tsdf_conv2_w", (3, 3, c, c), 9 * c),
        ("tsdf_conv2_b", (c,), "zero"),
        ("pc_mlp1_w", (3, c), 3),
        ("pc_mlp1_b", (c,), "zero"),
        ("pc_mlp2_w", (c, c), c),
        ("pc_mlp2_b", (c,), "zero"),
        ("pc_conv1_w", (3, 3, c, c), 9 * c),
        ("pc_conv1_b", (c,), "zero"),
        ("pc_conv2_w", (3, 3, c, c), 9 * c),
        ("pc_conv2_b", (c,), "zero"),
        ("occ_in_w", (f, h), f),
        ("occ_in_b", (h,), "zero"),
        ("occ_res1a_w", (h, h), h),
        ("occ_res1a_b", (h,), "zero"),
        ("occ_res1b_w", (h, h), h),
        ("occ_res1b_b", (h,), "zero"),
        ("occ_res2a_w", (h, h), h),
        ("occ_res2a_b", (h,), "zero"),
        ("occ_res2b_w", (h, h), h),
        ("occ_res2b_b", (h,), "zero"),
        ("occ_out_w", (h, 1), "zero"),
        ("occ_out_b", (1,), "zero"),
        ("qual_mlp1_w", (3 + f, q), 3 + f),
        ("qual_mlp1_b", (q,), "zero"),
        ("qual_mlp2_w", (q, q), q),
        ("qual_mlp2_b", (q,), "zero"),
        ("qual_mlp3_w", (q, e), q),
        ("qual_mlp3_b", (e,), "zero"),
        ("qual_cls1_w", (e + POSE_DIM, q), e + POSE_DIM),
        ("qual_cls1_b", (q,), "zero"),
        ("qual_cls2_w", (q, 1), "zero"),
        ("qual_cls2_b", (1,), "zero"),
    ]
    return specs


class GraspNetwork:
    """Parameter container plus the forward passes built from autodiff ops."""

    def __init__(self, config: NetworkConfig = NetworkConfig(), seed: int = 0,
                 params: dict[str, ad.Tensor] | None = None):
        self.config = config
        if params is not None:
            expected = {name: shape for name, shape, _ in _param_specs(config)}
            require(set(params) == set(expected), "parameter names do not match")
            for name, tensor in params.items():
                require(tensor.shape == expected[name],
                        f"parameter {name} shape {tensor.shape} != {expected[name]}")
            self.params = dict(params)
            return
        rng = derive_rng(seed, INIT)
        self.params = {}
        for name, shape, init in _param_specs(config):
            if init == "zero":
                values = np.zeros(shape)
            else:
                values = rng.normal(size=shape) * np.sqrt(2.0 / init)
            self.params[name] = ad.parameter(values)

    def parameters(self) -> list[ad.Tensor]:
        return list(self.params.values())

    def _p(self, name: str) -> ad.Tensor:
        return self.params[name]

    # ------------------------------------------------------------- encoders

    def _conv_stack(self, plane: ad.Tensor, prefix: str) -> ad.Tensor:
        h = ad.relu(ad.conv3x3(plane, self._p(prefix + "_conv1_w"),
                               self._p(prefix + "_conv1_b")))
        return ad.conv3x3(h, self._p(prefix + "_conv2_w"), self._p(prefix + "_conv2_b"))

    def encode_tsdf(self, values: np.ndarray) -> list[ad.Tensor]:
        """Mean-project a cubic TSDF grid onto the three planes, then convolve."""
        values = np.asarray(values, dtype=np.float64)
        r = self.config.plane_resolution
        require(values.shape == (r, r, r),
                f"tsdf grid must be ({r}, {r}, {r}), got {values.shape}")
        projections = [values.mean(axis=2), values.mean(axis=0), values.mean(axis=1)]
        return [self._conv_stack(ad.constant(p[:, :, None]), "tsdf")
                for p in projections]

    def encode_pointcloud(self, points: np.ndarray, workspace_size: float) -> list[ad.Tensor]:
        """Embed each point with a small MLP, average into plane cells, convolve."""
        pts = as_points(points)
        require(len(pts) > 0, "cannot encode an empty point cloud")
        r = self.config.plane_resolution
        coords = ad.constant(pts / float(workspace_size))
        h = ad.relu(ad.linear(coords, self._p("pc_mlp1_w"), self._p("pc_mlp1_b")))
        h = ad.linear(h, self._p("pc_mlp2_w"), self._p("pc_mlp2_b"))
        cells2d = np.clip((coords.values * r).astype(np.int64), 0, r - 1)
        planes = []
        for ax_u, ax_v in PLANE_AXES:
            cells = cells2d[:, ax_u] * r + cells2d[:, ax_v]
            grid = ad.scatter_mean(h, cells, r * r)
            plane = ad.reshape(grid, (r, r, self.config.plane_channels))
            planes.append(self._conv_stack(plane, "pc"))
        return planes

    # -------------------------------------------------------------- queries

    def query_features(self, planes: list[ad.Tensor], points: np.ndarray,
                       workspace_size: float) -> ad.Tensor:
        """Sample all three planes at the projected coords and concatenate."""
        require(len(planes) == 3, "expected three feature planes")
        pts = as_points(points) / float(workspace_size)
        parts = [ad.bilinear_interp(plane, pts[:, [ax_u, ax_v]])
                 for plane, (ax_u, ax_v) in zip(planes, PLANE_AXES)]
        return ad.concat(parts, axis=1)

    def occupancy_head(self, feats: ad.Tensor) -> ad.Tensor:
        """Feature rows (n, f) -> occupancy probabilities (n, 1)."""
        h = ad.linear(feats, self._p("occ_in_w"), self._p("occ_in_b"))
        for i in (1, 2):
            t = ad.relu(h)
            t = ad.linear(t, self._p(f"occ_res{i}a_w"), self._p(f"occ_res{i}a_b"))
            t = ad.relu(t)
            t = ad.linear(t, self._p(f"occ_res{i}b_w"), self._p(f"occ_res{i}b_b"))
            h = ad.add(h, t)
        logits = ad.linear(ad.relu(h), self._p("occ_out_w"), self._p("occ_out_b"))
        return ad.sigmoid(logits)

    def local_point_embedding(self, grasp_coords: np.ndarray,
                              feats: ad.Tensor, workspace_size: float) -> ad.Tensor:
        """Per-point embedding (n, 128) from grasp-frame coords plus features."""
        coords = as_points(grasp_coords) / float(workspace_size)
        require(len(coords) == feats.shape[0], "coords/features row mismatch")
        x = ad.concat([ad.constant(coords), feats], axis=1)
        x = ad.relu(ad.linear(x, self._p("qual_mlp1_w"), self._p("qual_mlp1_b")))
        x = ad.relu(ad.linear(x, self._p("qual_mlp2_w"), self._p("qual_mlp2_b")))
        return ad.linear(x, self._p("qual_mlp3_w"), self._p("qual_mlp3_b"))

    def quality_classifier(self, pooled_pose: ad.Tensor) -> ad.Tensor:
        """(b, 128 + 7) pooled embedding with pose rows -> qualities (b, 1)."""
        require(pooled_pose.shape[1] == QUAL_EMBED + POSE_DIM,
                "classifier input must be pooled embedding plus pose")
        h = ad.relu(ad.linear(pooled_pose, self._p("qual_cls1_w"), self._p("qual_cls1_b")))
        logits = ad.linear(h, self._p("qual_cls2_w"), self._p("qual_cls2_b"))
        return ad.sigmoid(logits)

    def grasp_quality(self, planes: list[ad.Tensor], points_world: np.ndarray,
                      points_grasp: np.ndarray, pose, workspace_size: float) -> float:
        """Full quality pass for one grasp given its local surface patch."""
        require(len(as_points(points_world)) >= LOCAL_MIN_POINTS,
                f"local patch needs >= {LOCAL_MIN_POINTS} points")
        feats = self.query_features(planes, points_world, workspace_size)
        embed = self.local_point_embedding(points_grasp, feats, workspace_size)
        pooled = ad.max_pool_over_points(embed)
        row = ad.concat([pooled, ad.constant(pose_vector(pose, workspace_size)[None, :])],
                        axis=1)
        return float(self.quality_classifier(row).values[0, 0])


def pose_vector(pose, workspace_size: float) -> np.ndarray:
    """Grasp pose as [translation / workspace, quaternion (w >= 0)]."""
    quat = quat_from_rotation(pose.rotation)
    return np.concatenate([pose.translation / float(workspace_size), quat])


def _interp_f4(plane: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Float32 bilinear plane sampling, same cell convention as the grad op."""
    r = plane.shape[0]
    g = np.clip(uv * r - 0.5, 0.0, r - 1.0)
    i0 = np.minimum(g.astype(np.int64), r - 2)
    f = (g - i0).astype(np.float32)
    (x0, y0), (fx, fy) = i0.T, f.T
    return ((1 - fx) * (1 - fy))[:, None] * plane[x0, y0] \
        + ((1 - fx) * fy)[:, None] * plane[x0, y0 + 1] \
        + (fx * (1 - fy))[:, None] * plane[x0 + 1, y0] \
        + (fx * fy)[:, None] * plane[x0 + 1, y0 + 1]


class LearnedOccupancyField:
    """Occupancy field backed by encoded feature planes.

    Points outside the workspace cube are reported free without querying
    the network. Queries run a float32 tape-free replica of the occupancy
    head (rendering needs millions of them); planes and head parameters are
    snapshotted at construction, matching checkpoint precision.
    """

    def __init__(self, network: GraspNetwork, planes, workspace_size: float,
                 chunk: int = 65536):
        self.network = network
        self.planes = [p if isinstance(p, ad.Tensor) else ad.constant(p) for p in planes]
        self.workspace_size = float(workspace_size)
        self.chunk = int(chunk)
        self._planes_f4 = [p.values.astype(np.float32) for p in self.planes]
        names = ["occ_in_w", "occ_in_b", "occ_res1a_w", "occ_res1a_b",
                 "occ_res1b_w", "occ_res1b_b", "occ_res2a_w", "occ_res2a_b",
                 "occ_res2b_w", "occ_res2b_b", "occ_out_w", "occ_out_b"]
        self._head_f4 = {n: network._p(n).values.astype(np.float32) for n in names}

    def _head_forward(self, pts: np.ndarray) -> np.ndarray:
        p = self._head_f4
        scaled = (pts / self.workspace_size).astype(np.float64)
        x = np.concatenate([_interp_f4(plane, scaled[:, [u, v]])
                            for plane, (u, v) in zip(self._planes_f4, PLANE_AXES)],
                           axis=1)
        h = x @ p["occ_in_w"] + p["occ_in_b"]
        for i in (1, 2):
            t = np.maximum(h, 0.0) @ p[f"occ_res{i}a_w"] + p[f"occ_res{i}a_b"]
            t = np.maximum(t, 0.0) @ p[f"occ_res{i}b_w"] + p[f"occ_res{i}b_b"]
            h = h + t
        logits = (np.maximum(h, 0.0) @ p["occ_out_w"] + p["occ_out_b"])[:, 0]
        v = logits.astype(np.float64)
        out = np.empty_like(v)
        pos = v >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
        ev = np.exp(v[~pos])
        out[~pos] = ev / (1.0 + ev)
        return out

    def occupancy(self, points: np.ndarray) -> np.ndarray:
        pts = as_points(points)
        out = np.zeros(len(pts))
        inside = np.all((pts >= 0.0) & (pts <= self.workspace_size), axis=1)
        idx = np.flatnonzero(inside)
        for start in range(0, len(idx), self.chunk):
            sel = idx[start:start + self.chunk]
            out[sel] = self._head_forward(pts[sel])
        return out


# ----------------------------------------------------------------- checkpoints

def save_checkpoint(path, network: GraspNetwork, meta: dict[str, str] | None = None) -> None:
    """Write parameters as float32 with a text manifest; byte-deterministic."""
    lines = [CHECKPOINT_MAGIC]
    lines.append(f"meta plane_resolution {network.config.plane_resolution}")
    lines.append(f"meta plane_channels {network.config.plane_channels}")
    for key, value in sorted((meta or {}).items()):
        require(key not in ("plane_resolution", "plane_channels"),
                f"reserved meta key {key}")
        require(" " not in key and "\n" not in str(value), "meta must be single tokens")
        lines.append(f"meta {key} {value}")
    payload = []
    for name, tensor in network.params.items():
        dims = " ".join(str(d) for d in tensor.shape)
        lines.append(f"tensor {name} {tensor.values.ndim} {dims}")
        payload.append(tensor.values.astype("<f4").tobytes())
    lines.append("payload")
    blob = "\n".join(lines).encode("ascii") + b"\n" + b"".join(payload)
    with open(path, "wb") as fh:
        fh.write(blob)


def load_checkpoint(path) -> tuple[GraspNetwork, dict[str, str]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    marker = b"payload\n"
    cut = blob.find(marker)
    if cut < 0:
        raise FormatError("checkpoint has no payload marker")
    header = blob[:cut].decode("ascii").splitlines()
    raw = blob[cut + len(marker):]
    if not header or header[0] != CHECKPOINT_MAGIC:
        raise FormatError("not a checkpoint file")
    meta: dict[str, str] = {}
    shapes: list[tuple[str, tuple[int, ...]]] = []
    for line in header[1:]:
        fields = line.split()
        if fields[0] == "meta":
            if len(fields) != 3:
                raise FormatError(f"bad meta line: {line}")
            meta[fields[1]] = fields[2]
        elif fields[0] == "tensor":
            name, ndim = fields[1], int(fields[2])
            if len(fields) != 3 + ndim:
                raise FormatError(f"bad tensor line: {line}")
            shapes.append((name, tuple(int(d) for d in fields[3:])))
        else:
            raise FormatError(f"unknown checkpoint line: {line}")
    try:
        config = NetworkConfig(plane_resolution=int(meta["plane_resolution"]),
                               plane_channels=int(meta["plane_channels"]))
    except KeyError as exc:
        raise FormatError(f"checkpoint missing meta {exc}") from exc
    params: dict[str, ad.Tensor] = {}
    offset = 0
    for name, shape in shapes:
        count = int(np.prod(shape)) if shape else 1
        end = offset + 4 * count
        if end > len(raw):
            raise FormatError("checkpoint payload truncated")
        values = np.frombuffer(raw[offset:end], dtype="<f4").astype(np.float64)
        params[name] = ad.parameter(values.reshape(shape))
        offset = end
    if offset != len(raw):
        raise FormatError("checkpoint payload has trailing bytes")
    try:
        network = GraspNetwork(config=config, params=params)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
    return network, meta
