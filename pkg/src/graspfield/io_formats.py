"""Serialization of point clouds, primitive scenes, and depth images.

Formats:
  * point clouds: ASCII PLY, float32 x y z and optional nx ny nz properties
  * scenes: line-oriented text, one primitive per record (shape, translation,
    row-major rotation, dimensions), version header mandatory
  * depth: little-endian binary, u32 width, u32 height, row-major float32
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError
from .geometry import (DepthImage, PinholeCamera, Pose, Primitive,
                       PrimitiveScene, ScenePointCloud)

SCENE_FORMAT = "primitive-scene 1"


def _f32_text(x: float) -> str:
    # shortest decimal that round-trips the float32 value
    return np.format_float_positional(np.float32(x), unique=True, trim="0")


def save_ply(path: str, cloud: ScenePointCloud) -> None:
    """Write an ASCII PLY file with float32 vertex properties."""
    has_n = cloud.normals is not None
    lines = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}",
             "property float x", "property float y", "property float z"]
    if has_n:
        lines += ["property float nx", "property float ny", "property float nz"]
    lines.append("end_header")
    rows = cloud.points if not has_n else np.concatenate([cloud.points, cloud.normals], axis=1)
    for row in rows:
        lines.append(" ".join(_f32_text(v) for v in row))
    with open(path, "w", encoding="ascii") as f:
        f.write("\n".join(lines) + "\n")


def load_ply(path: str) -> ScenePointCloud:
    """Read an ASCII PLY produced by save_ply (x y z [nx ny nz] vertices)."""
    with open(path, "r", encoding="ascii") as f:
        lines = [ln.strip() for ln in f]
    if not lines or lines[0] != "ply":
        raise FormatError(f"{path}: not a PLY file")
    try:
        header_end = lines.index("end_header")
    except ValueError:
        raise FormatError(f"{path}: missing end_header") from None
    n_vertex = None
    props = []
    for ln in lines[1:header_end]:
        parts = ln.split()
        if parts[:2] == ["element", "vertex"]:
            n_vertex = int(parts[2])
        elif parts and parts[0] == "property":
            props.append(parts[-1])
    if n_vertex is None:
        raise FormatError(f"{path}: no vertex element")
    if props[:3] != ["x", "y", "z"]:
        raise FormatError(f"{path}: vertex properties must start with x y z")
    has_n = props[3:6] == ["nx", "ny", "nz"]
    width = 6 if has_n else 3
    body = [ln for ln in lines[header_end + 1:] if ln]
    if len(body) != n_vertex:
        raise FormatError(f"{path}: expected {n_vertex} vertices, found {len(body)}")
    try:
        data = np.array([[float(tok) for tok in ln.split()[:width]] for ln in body],
                        dtype=np.float64).reshape(n_vertex, width)
    except ValueError as e:
        raise FormatError(f"{path}: bad vertex row ({e})") from None
    normals = data[:, 3:6] if has_n else None
    return ScenePointCloud(data[:, :3], normals=normals)


def scene_to_text(scene: PrimitiveScene) -> str:
    """Primitive scene as versioned structured text."""
    lines = [SCENE_FORMAT,
             f"workspace_size {scene.workspace_size!r}",
             f"support_plane_z {scene.support_plane_z!r}",
             f"primitives {len(scene.primitives)}"]
    for prim in scene.primitives:
        vals = list(prim.pose.translation) + list(prim.pose.rotation.reshape(-1)) \
            + list(prim.dimensions)
        lines.append(prim.shape + " " + " ".join(repr(float(v)) for v in vals))
    return "\n".join(lines) + "\n"


def scene_from_text(text: str, source: str = "scene text") -> PrimitiveScene:
    """Parse text written by scene_to_text."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != SCENE_FORMAT:
        raise FormatError(f"{source}: unsupported scene format header")
    kv = {}
    for ln in lines[1:3]:
        key, val = ln.split(maxsplit=1)
        kv[key] = float(val)
    if set(kv) != {"workspace_size", "support_plane_z"}:
        raise FormatError(f"{source}: missing workspace_size/support_plane_z")
    n = int(lines[3].split()[1])
    prims = []
    for ln in lines[4:4 + n]:
        parts = ln.split()
        shape = parts[0]
        vals = np.array([float(v) for v in parts[1:]])
        if len(vals) < 12:
            raise FormatError(f"{source}: truncated primitive record")
        pose = Pose(vals[3:12].reshape(3, 3), vals[0:3])
        prims.append(Primitive(shape, pose, vals[12:]))
    if len(prims) != n:
        raise FormatError(f"{source}: expected {n} primitives, found {len(prims)}")
    return PrimitiveScene(prims, workspace_size=kv["workspace_size"],
                          support_plane_z=kv["support_plane_z"])


def save_scene(path: str, scene: PrimitiveScene) -> None:
    with open(path, "w", encoding="ascii") as f:
        f.write(scene_to_text(scene))


def load_scene(path: str) -> PrimitiveScene:
    with open(path, "r", encoding="ascii") as f:
        return scene_from_text(f.read(), source=str(path))


def save_depth(path: str, image: DepthImage) -> None:
    """Write a binary depth image (u32 w, u32 h, row-major float32)."""
    with open(path, "wb") as f:
        f.write(struct.pack("<II", image.camera.width, image.camera.height))
        f.write(image.depth.astype("<f4").tobytes())


def load_depth(path: str, camera: PinholeCamera) -> DepthImage:
    """Read a binary depth image; `camera` must match the stored size."""
    with open(path, "rb") as f:
        head = f.read(8)
        if len(head) != 8:
            raise FormatError(f"{path}: truncated depth header")
        w, h = struct.unpack("<II", head)
        payload = f.read()
    if (w, h) != (camera.width, camera.height):
        raise FormatError(f"{path}: stored size {w}x{h} does not match camera "
                          f"{camera.width}x{camera.height}")
    expected = w * h * 4
    if len(payload) != expected:
        raise FormatError(f"{path}: expected {expected} payload bytes, got {len(payload)}")
    depth = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(h, w)
    return DepthImage(depth, camera)
