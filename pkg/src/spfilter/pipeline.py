"""Experiment orchestration on synthetic scenes.

Everything here is a deterministic function of the scene description and arguments;
per-frame work may fan out over joblib workers but results are reduced in
frame order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from scipy.spatial import cKDTree

from .filter import FixedPredictor, HeuristicPredictor, filter_pointcloud
from .footholds import FootholdSet, WindowParams, extract_footholds, write_trajectories
from .geometry import GridSpec, PointCloud, Pose, raycast_heightmap
from .gp import reconstruct_surface, TilingConfig, GpParams
from .io import meta_pose, read_csv, read_meta, read_ply, read_raster, write_csv, write_ply, write_surface
from .labels import build_training_sample, save_sample, write_manifest
from .mapping import (ElevationMap, ErrorMapAccumulator, accumulate_error, foothold_nn_map,
                      fuse_elevation, smooth_map)
from .synthetic import OBSTACLE, SceneSpec, generate_scene, simulate_camera, simulate_gait, simulate_lidar

logger = logging.getLogger(__name__)

MAP_MODES = ("raw", "smooth", "spf", "foothold")


@dataclass
class FrameData:
    index: int
    t: float
    body: object
    camera: object
    cloud: PointCloud
    kind: np.ndarray
    rgb: np.ndarray
    mask: np.ndarray
    pixel_kind: np.ndarray


def simulate_frame(scene, k: int) -> FrameData:
    f = scene.frames[k]
    scan = simulate_lidar(scene, f.lidar, scan_id=k)
    rgb, mask, pixel_kind = simulate_camera(scene, f.camera, scene.spec.rig.intrinsics, image_id=k)
    return FrameData(k, f.t, f.body, f.camera, scan.cloud, scan.kind, rgb, mask, pixel_kind)


def simulate_frames(scene, indices=None, n_jobs=None) -> list[FrameData]:
    indices = range(len(scene.frames)) if indices is None else indices
    if n_jobs in (None, 1):
        return [simulate_frame(scene, k) for k in indices]
    return Parallel(n_jobs=n_jobs)(delayed(simulate_frame)(scene, k) for k in indices)


def scene_footholds(scene, params: WindowParams = WindowParams()) -> tuple[FootholdSet, object]:
    gait = simulate_gait(scene)
    fh = FootholdSet.union(extract_footholds(tr, params) for tr in gait.trajectories)
    return fh, gait


def support_surface_from_footholds(scene, fh: FootholdSet, resolution: float | None = None,
                                   n_jobs=None, gp: GpParams = GpParams(), tiling: TilingConfig = TilingConfig()):
    res = scene.spec.resolution if resolution is None else resolution
    lx, ly = scene.spec.extent
    grid = GridSpec((0.0, 0.0), res, (int(round(ly / res)), int(round(lx / res))))
    return reconstruct_surface(fh, tiling, gp, grid, prerasterize=res, n_jobs=n_jobs)


# -- dataset synthesis --------------------------------------------------------------------

def synthesize_dataset(spec: SceneSpec, out_dir, frame_stride: int = 1, n_jobs=None) -> Path:
    """Write a frame-directory dataset with SSDE labels from the gait's footholds."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene = generate_scene(spec)
    fh, gait = scene_footholds(scene)
    surface = support_surface_from_footholds(scene, fh, n_jobs=n_jobs)
    write_surface(out / "truth_surface.spfr", scene.true_surface)
    write_surface(out / "gp_surface.spfr", surface)
    write_trajectories(out / "trajectory.csv", gait.trajectories)
    write_ply(out / "footholds.ply", PointCloud(fh.points, "world"))
    write_footholds_csv(out / "footholds.csv", fh)
    intr = spec.rig.intrinsics
    dirs = []
    for fd in simulate_frames(scene, range(0, len(scene.frames), frame_stride), n_jobs):
        d = out / f"frame_{fd.index:04d}"
        sample = build_training_sample(fd.rgb, fd.cloud, surface, fd.camera, intr, seg=fd.mask)
        save_sample(sample, d, {"t": fd.t, "body": fd.body})
        write_ply(d / "cloud.ply", fd.cloud)
        dirs.append(d)
    write_manifest(out / "manifest.txt", dirs)
    return out


# -- filtering experiment ------------------------------------------------------------------

@dataclass
class FilterResult:
    raw_rmse: float
    filtered_rmse: float
    n_points: int
    obstacle_rmse: float = float("nan")
    obstacle_points: int = 0
    vegetation_raw_bias: float = float("nan")
    vegetation_filtered_bias: float = float("nan")

    @property
    def ratio(self) -> float:
        return self.filtered_rmse / self.raw_rmse


def _rms(x) -> float:
    x = np.concatenate(x) if isinstance(x, list) else x
    return float(np.sqrt(np.mean(x ** 2))) if len(x) else float("nan")


def filter_experiment(spec: SceneSpec, predictor=None, frame_stride: int = 4, max_distance: float = 5.0,
                      n_jobs=None, frames=None) -> FilterResult:
    """Vertical error of raw and filtered in-view points against the true ground.

    Points are scored when they are not on an obstacle and their pixel's ray
    meets the true ground within ``max_distance``. Obstacle returns whose
    pixel also shows the obstacle are scored by their 3D displacement.
    """
    scene = generate_scene(spec)
    intr = spec.rig.intrinsics
    pred = HeuristicPredictor(intr) if predictor is None else predictor
    frames = simulate_frames(scene, range(0, len(scene.frames), frame_stride), n_jobs) if frames is None else frames
    raw, filt, obst, veg_raw, veg_f = [], [], [], [], []
    for fd in frames:
        out = filter_pointcloud(fd.cloud, fd.rgb, intr, fd.camera, pred)
        n = out.n_in_view
        src = out.source_index[:n]
        P, R = out.cloud.points[:n], fd.cloud.points[src]
        gd, _ = raycast_heightmap(scene.true_surface, intr, fd.camera)
        pix = np.argwhere(out.combined.valid)
        near = gd.filled(np.inf)[pix[:, 0], pix[:, 1]] < max_distance
        kind = fd.kind[src]
        ok = (kind != OBSTACLE) & near
        g = scene.ground(P[ok, 0], P[ok, 1])
        raw.append(R[ok, 2] - scene.ground(R[ok, 0], R[ok, 1]))
        filt.append(P[ok, 2] - g)
        veg = ok & (kind != 0)
        veg_raw.append(R[veg, 2] - scene.ground(R[veg, 0], R[veg, 1]))
        veg_f.append(P[veg, 2] - scene.ground(P[veg, 0], P[veg, 1]))
        ob = (kind == OBSTACLE) & (fd.pixel_kind[pix[:, 0], pix[:, 1]] == OBSTACLE)
        obst.append(np.linalg.norm(P[ob] - R[ob], axis=1))
    mean = lambda L: float(np.mean(np.concatenate(L))) if sum(map(len, L)) else float("nan")
    return FilterResult(_rms(raw), _rms(filt), int(sum(map(len, raw))), _rms(obst), int(sum(map(len, obst))),
                        mean(veg_raw), mean(veg_f))


def oracle_predictor_for(scene, fd: FrameData) -> FixedPredictor:
    """Ideal predictor: true ground depth and true mask."""
    gd, _ = raycast_heightmap(scene.true_surface, scene.spec.rig.intrinsics, fd.camera)
    return FixedPredictor(gd.depth, fd.mask)


# -- elevation-map experiment --------------------------------------------------------------

@dataclass
class MappingResult:
    accumulators: dict
    forward: dict = field(default_factory=dict)
    traversed: dict = field(default_factory=dict)
    n_updates: int = 0

    def rmse(self, mode: str) -> float:
        return self.accumulators[mode].total_rmse()

    def forward_rmse(self, mode: str) -> float:
        return self.forward[mode].total_rmse()

    def traversed_rmse(self, mode: str) -> float:
        return self.traversed[mode].total_rmse()


def _in_view_raw(cloud: PointCloud, out) -> PointCloud:
    keep = np.ones(len(cloud), dtype=bool)
    keep[out.source_index[out.n_in_view:]] = False
    return PointCloud(cloud.points[keep], "world")


def _near_footholds(emap: ElevationMap, fh: FootholdSet, radius: float) -> np.ndarray:
    if len(fh) == 0:
        return np.zeros(emap.shape, dtype=bool)
    d, _ = cKDTree(fh.points[:, :2]).query(emap.cell_centers().reshape(-1, 2))
    return (d <= radius).reshape(emap.shape)


def replay_maps(frames, intr, truth, modes=MAP_MODES, predictor=None, footholds: FootholdSet | None = None,
                map_size: float = 8.0, resolution: float = 0.04, smooth_radius: int = 2,
                traversed_radius: float = 0.1, forward_min: float = 0.5):
    """Fuse each frame into one map per mode and accumulate robot-frame error maps.

    ``frames`` yields objects with ``t``, ``body``, ``camera``, ``cloud``
    (world frame) and ``rgb``. ``truth`` is a SurfaceMap or callable
    ``g(x, y)``. Returns ``(MappingResult, final maps by mode)``.
    """
    modes = tuple(modes)
    unknown = set(modes) - set(MAP_MODES)
    if unknown:
        raise ValueError(f"unknown map modes {sorted(unknown)}")
    if "foothold" in modes and footholds is None:
        raise ValueError("foothold mode needs a foothold set")
    pred = HeuristicPredictor(intr) if predictor is None else predictor
    maps = {"raw": ElevationMap(size=map_size, resolution=resolution),
            "spf": ElevationMap(size=map_size, resolution=resolution)}
    acc = {m: ErrorMapAccumulator(map_size, resolution) for m in modes}
    fwd = {m: ErrorMapAccumulator(map_size, resolution) for m in modes}
    trv = {m: ErrorMapAccumulator(map_size, resolution) for m in modes}
    current: dict = {}
    n_updates = 0
    for fd in frames:
        out = filter_pointcloud(fd.cloud, fd.rgb, intr, fd.camera, pred)
        if {"raw", "smooth"} & set(modes):
            maps["raw"] = fuse_elevation(maps["raw"], _in_view_raw(fd.cloud, out), fd.body)
        if "spf" in modes:
            maps["spf"] = fuse_elevation(maps["spf"], PointCloud(out.cloud.points[:out.n_in_view], "world"), fd.body)
        current = {}
        if "raw" in modes:
            current["raw"] = maps["raw"]
        if "smooth" in modes:
            current["smooth"] = smooth_map(maps["raw"], smooth_radius)
        if "spf" in modes:
            current["spf"] = maps["spf"]
        past = FootholdSet() if footholds is None else footholds.before(fd.t)
        if "foothold" in modes and len(past):
            current["foothold"] = foothold_nn_map(past, maps["raw"].recentered(fd.body.translation[:2]))
        if not current:
            continue
        ref = next(iter(current.values()))
        near = _near_footholds(ref, past, traversed_radius)
        xy = ref.cell_centers() - fd.body.translation[:2]
        yaw = fd.body.yaw
        ahead = (np.cos(yaw) * xy[..., 0] + np.sin(yaw) * xy[..., 1]) > forward_min
        for m, emap in current.items():
            acc[m] = accumulate_error(acc[m], emap, truth, fd.body)
            trv[m] = accumulate_error(trv[m], emap, truth, fd.body, region=near)
            fwd_region = ahead & ~near
            if "spf" in current and m != "spf":
                fwd_region = fwd_region & current["spf"].valid
            fwd[m] = accumulate_error(fwd[m], emap, truth, fd.body, region=fwd_region)
        n_updates += 1
    return MappingResult(acc, fwd, trv, n_updates), current


def mapping_experiment(spec: SceneSpec, modes=MAP_MODES, predictor=None, frame_stride: int = 1,
                       n_jobs=None, frames=None, **kw) -> MappingResult:
    """Replay a synthetic trajectory against the analytic ground.

    Only points inside the camera view are fused, for every mode. The
    foothold mode maps the nearest past foothold into each cell. Besides the
    full error maps, two region splits are kept: cells near past footholds
    (traversed) and cells ahead of the robot without a past foothold nearby
    (forward; for the baselines further limited to cells the SPF map covers).
    """
    scene = generate_scene(spec)
    intr = spec.rig.intrinsics
    frames = simulate_frames(scene, range(0, len(scene.frames), frame_stride), n_jobs) if frames is None else frames
    fh = scene_footholds(scene)[0] if "foothold" in modes else None
    result, _ = replay_maps(frames, intr, scene.ground, modes, predictor, fh, **kw)
    return result


# -- recorded frame directories ---------------------------------------------------------------

@dataclass
class FrameRecord:
    t: float
    body: Pose
    camera: Pose
    intrinsics: object
    cloud: PointCloud
    rgb: np.ndarray


def load_frame(directory) -> FrameRecord:
    d = Path(directory)
    cam, intr, kv = read_meta(d / "meta.txt")
    body = meta_pose(kv, "body") if "body_translation" in kv else cam
    cloud = read_ply(d / "cloud.ply")
    rgb = np.moveaxis(read_raster(d / "rgb.spfr"), 0, -1).astype(float)
    return FrameRecord(float(kv.get("t", 0.0)), body, cam, intr, cloud, rgb)


def read_footholds_csv(path) -> FootholdSet:
    _, rows = read_csv(path)
    if not rows:
        return FootholdSet()
    a = np.array([[float(v) for v in (r[0], r[2], r[3], r[4])] for r in rows])
    return FootholdSet(a[:, 1:], a[:, 0], np.array([r[1] for r in rows], dtype=object))


def write_footholds_csv(path, fh: FootholdSet) -> None:
    write_csv(path, ["t", "foot_id", "x", "y", "z"],
              [[repr(float(t)), f, *map(lambda v: repr(float(v)), p)]
               for t, f, p in zip(fh.times, fh.foot_ids, fh.points)])


def depth_reports(frame_dirs, predictor=None, max_distance: float = 5.0, bin_width: float = 0.5):
    """Raw and filtered depth against SSDE labels over label-valid pixels within ``max_distance``.

    The filtered report also carries the mIoU of the predicted mask against
    the stored segmentation labels when present.
    """
    from .labels import load_sample
    from .metrics import depth_report

    raw_p, raw_t, f_p, pm, tm = [], [], [], [], []
    for d in frame_dirs:
        s = load_sample(d)
        rec = load_frame(d)
        pred = HeuristicPredictor(rec.intrinsics) if predictor is None else predictor
        out = filter_pointcloud(rec.cloud, rec.rgb, rec.intrinsics, rec.camera, pred)
        sel = out.combined.valid & s.ssde.valid
        # the stored raw depth comes from the same projection, so validity agrees
        raw_p.append(s.sparse_depth.filled(0.0)[sel])
        f_p.append(out.combined.depth[sel])
        raw_t.append(s.ssde.depth[sel].astype(float))
        if s.seg is not None:
            pm.append(out.seg.ravel())
            tm.append(s.seg.ravel())
    truth = np.concatenate(raw_t) if raw_t else np.zeros(0)
    ones = np.ones(len(truth), dtype=bool)
    raw = depth_report(np.concatenate(raw_p), truth, ones, max_distance=max_distance, bin_width=bin_width,
                       name="raw-depth")
    filt = depth_report(np.concatenate(f_p), truth, ones, max_distance=max_distance, bin_width=bin_width,
                        pred_mask=np.concatenate(pm) if pm else None, true_mask=np.concatenate(tm) if tm else None,
                        name="filtered-depth")
    return raw, filt
