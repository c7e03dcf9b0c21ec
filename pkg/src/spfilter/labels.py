"""Self-supervised support-surface depth labels and training samples."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import (CameraIntrinsics, PointCloud, Pose, SparseDepthImage, SurfaceMap,
                       project_points, raycast_heightmap, transform_cloud)
from .io import (read_depth_image, read_meta, read_raster, write_depth_image, write_meta,
                 write_raster)

TAU_MAX = 0.03


@dataclass
class SsdeLabel:
    depth: np.ndarray
    variance: np.ndarray
    valid: np.ndarray

    @property
    def shape(self):
        return self.depth.shape


@dataclass
class TrainingSample:
    rgb: np.ndarray
    sparse_depth: SparseDepthImage
    ssde: SsdeLabel
    seg: np.ndarray | None = None
    cam_pose: Pose | None = None
    intrinsics: CameraIntrinsics | None = None

    def __post_init__(self):
        shape = self.rgb.shape[:2]
        rasters = [self.sparse_depth.shape, self.ssde.shape]
        if self.seg is not None:
            rasters.append(self.seg.shape)
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3 or any(r != shape for r in rasters):
            raise ValueError("all sample rasters must share one m x n shape")

    @property
    def shape(self):
        return self.rgb.shape[:2]


def generate_ssde_label(surface: SurfaceMap, intr: CameraIntrinsics, cam_pose: Pose,
                        tau_max: float = TAU_MAX, max_range: float | None = None) -> SsdeLabel:
    """Raycast the reconstructed surface and keep pixels with variance below ``tau_max``."""
    img, var = raycast_heightmap(surface, intr, cam_pose, max_range)
    with np.errstate(invalid="ignore"):
        valid = img.valid & (var < tau_max)
    depth = np.where(img.valid, img.depth, 0.0)
    return SsdeLabel(depth.astype(np.float32), np.nan_to_num(var, nan=0.0).astype(np.float32), valid)


def _f32_depth(img: SparseDepthImage) -> SparseDepthImage:
    d = img.filled(0.0).astype(np.float32).astype(float)
    valid = img.valid & (d > 0)
    uv = None
    if img.uv is not None:
        uv = np.where(valid[..., None], np.nan_to_num(img.uv).astype(np.float32).astype(float), np.nan)
    return SparseDepthImage(d, valid, uv)


def build_training_sample(rgb, cloud: PointCloud, surface: SurfaceMap, cam_pose: Pose,
                          intr: CameraIntrinsics, tau_max: float = TAU_MAX, seg=None,
                          max_range: float | None = None) -> TrainingSample:
    """Assemble one frame; rasters are stored at float32 precision."""
    rgb = np.asarray(rgb)
    if rgb.shape[:2] != intr.shape:
        raise ValueError(f"rgb of shape {rgb.shape[:2]} does not match intrinsics {intr.shape}")
    cam_cloud = transform_cloud(cloud, cam_pose.inverse()) if cloud.frame == "world" else cloud
    xd = _f32_depth(project_points(cam_cloud, intr))
    ssde = generate_ssde_label(surface, intr, cam_pose, tau_max, max_range)
    if seg is not None:
        seg = np.asarray(seg).astype(np.uint8)
    return TrainingSample(rgb.astype(np.float32), xd, ssde, seg, cam_pose, intr)


def save_sample(sample: TrainingSample, directory, extra_meta: dict | None = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_raster(d / "rgb.spfr", np.moveaxis(sample.rgb, -1, 0))
    write_depth_image(d / "xd.spfr", sample.sparse_depth)
    write_raster(d / "ssde.spfr", [sample.ssde.depth, sample.ssde.variance, sample.ssde.valid.astype(float)])
    if sample.seg is not None:
        write_raster(d / "seg.spfr", sample.seg.astype(float))
    if sample.cam_pose is not None and sample.intrinsics is not None:
        write_meta(d / "meta.txt", sample.cam_pose, sample.intrinsics, extra_meta)


def load_sample(directory) -> TrainingSample:
    d = Path(directory)
    rgb = np.moveaxis(read_raster(d / "rgb.spfr"), 0, -1)
    xd = read_depth_image(d / "xd.spfr")
    s = read_raster(d / "ssde.spfr")
    ssde = SsdeLabel(s[0], s[1], s[2] > 0.5)
    seg = None
    if (d / "seg.spfr").exists():
        seg = read_raster(d / "seg.spfr")[0].astype(np.uint8)
    pose = intr = None
    if (d / "meta.txt").exists():
        pose, intr, _ = read_meta(d / "meta.txt")
    return TrainingSample(rgb, xd, ssde, seg, pose, intr)


def write_manifest(path, frame_dirs) -> None:
    """One frame directory per line, relative to the manifest's folder."""
    root = Path(path).resolve().parent
    lines = [os.path.relpath(Path(f).resolve(), root) for f in frame_dirs]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> list[Path]:
    root = Path(path).parent
    return [root / line.strip() for line in Path(path).read_text().splitlines() if line.strip()]
