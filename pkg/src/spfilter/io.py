"""File formats: PLY pointclouds, SPFR rasters, frame metadata and CSV tables."""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .geometry import CameraIntrinsics, PointCloud, Pose, SparseDepthImage, SurfaceMap

SPFR_MAGIC = b"SPFR"
_SPFR_HEADER = struct.Struct("<4sIII")

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


class FormatError(ValueError):
    """Raised when a file does not follow the expected layout."""


# -- PLY ---------------------------------------------------------------------

def write_ply(path, cloud: PointCloud, binary: bool = True) -> None:
    pts = np.ascontiguousarray(cloud.points, dtype="<f4")
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        "ply\n"
        f"format {fmt} 1.0\n"
        f"comment frame {cloud.frame}\n"
        f"element vertex {len(pts)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "end_header\n"
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        if binary:
            f.write(pts.tobytes())
        else:
            for x, y, z in pts:
                f.write(f"{x:.9g} {y:.9g} {z:.9g}\n".encode("ascii"))


def read_ply(path) -> PointCloud:
    with open(path, "rb") as f:
        data = f.read()
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise FormatError(f"{path}: not a PLY file")
    nl = data.index(b"\n", end)
    header = data[:nl].decode("ascii").splitlines()
    body = data[nl + 1:]

    fmt, frame, count, props = None, "world", 0, []
    in_vertex = False
    for line in header:
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "comment" and len(tok) >= 3 and tok[1] == "frame":
            frame = tok[2]
        elif tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                count = int(tok[2])
        elif tok[0] == "property" and in_vertex:
            if tok[1] == "list":
                raise FormatError(f"{path}: list properties on vertices are not supported")
            props.append((tok[2], _PLY_TYPES[tok[1]]))
    names = [p[0] for p in props]
    if not {"x", "y", "z"} <= set(names):
        raise FormatError(f"{path}: vertex element lacks x/y/z")

    if fmt == "ascii":
        rows = body.decode("ascii").split("\n")[:count]
        table = np.array([r.split() for r in rows], dtype=float).reshape(count, len(props))
        # round to the declared precision so ascii and binary files read back alike
        pts = np.stack([table[:, names.index(c)].astype(props[names.index(c)][1]).astype(float)
                        for c in "xyz"], axis=1)
    elif fmt == "binary_little_endian":
        dt = np.dtype([(n, "<" + t) for n, t in props])
        arr = np.frombuffer(body, dtype=dt, count=count)
        pts = np.stack([arr[c].astype(float) for c in "xyz"], axis=1)
    else:
        raise FormatError(f"{path}: unsupported PLY format {fmt!r}")
    return PointCloud(pts.reshape(-1, 3), frame=frame)


# -- SPFR rasters --------------------------------------------------------------

def write_raster(path, planes) -> None:
    """Write a list of equally-shaped 2D planes (or a (C, H, W) array) as float32."""
    arr = np.asarray(planes, dtype="<f4")
    if arr.ndim == 2:
        arr = arr[None]
    c, h, w = arr.shape
    with open(path, "wb") as f:
        f.write(_SPFR_HEADER.pack(SPFR_MAGIC, w, h, c))
        f.write(np.ascontiguousarray(arr).tobytes())


def read_raster(path) -> np.ndarray:
    """Return the raster as a float32 array of shape (C, H, W)."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _SPFR_HEADER.size:
        raise FormatError(f"{path}: truncated SPFR header")
    magic, w, h, c = _SPFR_HEADER.unpack_from(data)
    if magic != SPFR_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    n = w * h * c
    body = data[_SPFR_HEADER.size:]
    if len(body) != 4 * n:
        raise FormatError(f"{path}: expected {4 * n} payload bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(c, h, w).copy()


def write_depth_image(path, img: SparseDepthImage) -> None:
    planes = [img.filled(0.0), img.valid.astype(float)]
    if img.uv is not None:
        planes += [np.nan_to_num(img.uv[..., 0]), np.nan_to_num(img.uv[..., 1])]
    write_raster(path, planes)


def read_depth_image(path) -> SparseDepthImage:
    arr = read_raster(path).astype(float)
    if arr.shape[0] not in (2, 4):
        raise FormatError(f"{path}: depth raster needs 2 or 4 planes, found {arr.shape[0]}")
    valid = arr[1] > 0.5
    uv = None
    if arr.shape[0] == 4:
        uv = np.where(valid[..., None], np.stack([arr[2], arr[3]], axis=-1), np.nan)
    return SparseDepthImage(arr[0], valid, uv)


def write_surface(path, surface: SurfaceMap) -> None:
    """Raster planes (height, variance, valid) plus a ``.hdr`` sidecar for geometry."""
    path = Path(path)
    write_raster(path, [np.where(surface.valid, surface.height, 0.0),
                        np.where(surface.valid, surface.variance, 0.0),
                        surface.valid.astype(float)])
    Path(str(path) + ".hdr").write_text(
        f"origin_x = {float(surface.origin[0])!r}\n"
        f"origin_y = {float(surface.origin[1])!r}\n"
        f"resolution = {float(surface.resolution)!r}\n"
    )


def read_surface(path) -> SurfaceMap:
    path = Path(path)
    arr = read_raster(path).astype(float)
    if arr.shape[0] != 3:
        raise FormatError(f"{path}: surface raster needs 3 planes")
    meta = read_keyvalue(Path(str(path) + ".hdr"))
    valid = arr[2] > 0.5
    return SurfaceMap(
        [float(meta["origin_x"]), float(meta["origin_y"])],
        float(meta["resolution"]),
        np.where(valid, arr[0], np.nan),
        np.where(valid, arr[1], np.nan),
        valid,
    )


# -- key = value text ------------------------------------------------------------

def read_keyvalue(path) -> dict[str, str]:
    out = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}: expected 'key = value', got {raw!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _fmt_vec(v) -> str:
    return " ".join(repr(float(x)) for x in v)


def _parse_vec(s: str, n: int) -> np.ndarray:
    v = np.array([float(x) for x in s.split()])
    if len(v) != n:
        raise FormatError(f"expected {n} numbers, got {s!r}")
    return v


def write_meta(path, cam_pose: Pose, intr: CameraIntrinsics, extra: dict | None = None) -> None:
    lines = [
        f"cam_translation = {_fmt_vec(cam_pose.translation)}",
        f"cam_rotation = {_fmt_vec(cam_pose.rotation)}",
        f"intrinsics = {_fmt_vec([intr.fx, intr.fy, intr.cx, intr.cy])} {intr.width} {intr.height}",
    ]
    for k, v in (extra or {}).items():
        if isinstance(v, Pose):
            lines.append(f"{k}_translation = {_fmt_vec(v.translation)}")
            lines.append(f"{k}_rotation = {_fmt_vec(v.rotation)}")
        elif np.ndim(v):
            lines.append(f"{k} = {_fmt_vec(v)}")
        else:
            lines.append(f"{k} = {float(v)!r}" if isinstance(v, (float, np.floating)) else f"{k} = {v}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_meta(path) -> tuple[Pose, CameraIntrinsics, dict[str, str]]:
    kv = read_keyvalue(path)
    try:
        pose = Pose(_parse_vec(kv.pop("cam_translation"), 3), _parse_vec(kv.pop("cam_rotation"), 4))
        f = kv.pop("intrinsics").split()
    except KeyError as e:
        raise FormatError(f"{path}: missing {e.args[0]}") from None
    intr = CameraIntrinsics(float(f[0]), float(f[1]), float(f[2]), float(f[3]), int(f[4]), int(f[5]))
    return pose, intr, kv


def meta_pose(kv: dict[str, str], name: str) -> Pose:
    return Pose(_parse_vec(kv[f"{name}_translation"], 3), _parse_vec(kv[f"{name}_rotation"], 4))


# -- CSV -------------------------------------------------------------------------

def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r)
        return header, [row for row in r if row]
