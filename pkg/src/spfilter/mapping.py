"""Robot-centric elevation maps, map baselines, traversability and error maps."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import correlate
from scipy.spatial import cKDTree

from .footholds import FootholdSet
from .geometry import PointCloud, Pose, SurfaceMap
from .io import write_csv, write_raster

MEASUREMENT_VARIANCE = 0.01


def _cell_count(size: float, resolution: float) -> int:
    n = size / resolution
    k = int(round(n))
    if k < 1 or abs(n - k) > 1e-6:
        raise ValueError(f"size {size} is not an integral number of {resolution} m cells")
    return k


@dataclass
class ElevationMap:
    """Square grid centered on ``center``; the center is snapped to a multiple of the resolution
    so that recentering is a whole-cell shift."""

    center: np.ndarray = field(default_factory=lambda: np.zeros(2))
    size: float = 8.0
    resolution: float = 0.04
    height: np.ndarray | None = None
    variance: np.ndarray | None = None
    valid: np.ndarray | None = None

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        n = _cell_count(self.size, self.resolution)
        self.center = np.round(np.asarray(self.center, dtype=float).reshape(2) / self.resolution) * self.resolution
        if self.height is None:
            self.height = np.full((n, n), np.nan)
            self.variance = np.full((n, n), np.inf)
            self.valid = np.zeros((n, n), dtype=bool)
        self.height = np.asarray(self.height, dtype=float)
        self.variance = np.asarray(self.variance, dtype=float)
        valid = np.isfinite(self.height) if self.valid is None else np.asarray(self.valid, dtype=bool)
        self.valid = valid & np.isfinite(self.height)
        if self.height.shape != (n, n) or self.variance.shape != (n, n):
            raise ValueError(f"grids must be {n} x {n}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.height.shape

    @property
    def origin(self) -> np.ndarray:
        return self.center - self.shape[0] * self.resolution / 2

    def cell_centers(self) -> np.ndarray:
        return self.to_surface().cell_centers()

    def to_surface(self) -> SurfaceMap:
        return SurfaceMap(self.origin, self.resolution, self.height, self.variance, self.valid)

    def copy(self) -> "ElevationMap":
        return replace(self, center=self.center.copy(), height=self.height.copy(),
                       variance=self.variance.copy(), valid=self.valid.copy())

    def recentered(self, xy) -> "ElevationMap":
        """Shift by whole cells so the center is the cell-aligned point nearest ``xy``."""
        k = np.round((np.asarray(xy, dtype=float).reshape(2) - self.center) / self.resolution).astype(int)
        out = ElevationMap(self.center + k * self.resolution, self.size, self.resolution)
        n = self.shape[0]
        kx, ky = int(k[0]), int(k[1])
        if abs(kx) >= n or abs(ky) >= n:
            return out
        src = (slice(max(ky, 0), n + min(ky, 0)), slice(max(kx, 0), n + min(kx, 0)))
        dst = (slice(max(-ky, 0), n + min(-ky, 0)), slice(max(-kx, 0), n + min(-kx, 0)))
        out.height[dst] = self.height[src]
        out.variance[dst] = self.variance[src]
        out.valid[dst] = self.valid[src]
        return out


def fuse_elevation(emap: ElevationMap, cloud: PointCloud, robot_pose: Pose,
                   measurement_variance: float = MEASUREMENT_VARIANCE) -> ElevationMap:
    """Recenter on the robot and fuse all points with a per-cell 1D Kalman update.

    The batch is fused in information form, so the result does not depend on
    point order. Empty cells take the first measurement as prior.
    """
    if cloud.frame != "world":
        raise ValueError("elevation fusion expects a world-frame cloud")
    out = emap.recentered(robot_pose.translation[:2])
    pts = cloud.points[np.all(np.isfinite(cloud.points), axis=1)]
    row, col, inside = out.to_surface().cell_index(pts[:, :2])
    row, col, z = row[inside], col[inside], pts[inside, 2]
    if len(z) == 0:
        return out
    shape = out.shape
    info = np.zeros(shape)
    weighted = np.zeros(shape)
    np.add.at(info, (row, col), 1.0 / measurement_variance)
    np.add.at(weighted, (row, col), z / measurement_variance)
    hit = info > 0
    prior_info = np.where(out.valid, 1.0 / np.maximum(out.variance, 1e-300), 0.0)
    prior_w = np.where(out.valid, out.height * prior_info, 0.0)
    tot = prior_info + info
    out.height = np.where(hit, (prior_w + weighted) / np.where(hit, tot, 1.0), out.height)
    out.variance = np.where(hit, 1.0 / np.where(hit, tot, 1.0), out.variance)
    out.valid = out.valid | hit
    return out


def gaussian_kernel(radius: int, sigma: float | None = None) -> np.ndarray:
    sigma = radius / 2.0 if sigma is None else sigma
    r = np.arange(-radius, radius + 1)
    g = np.exp(-0.5 * (r / sigma) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def smooth_map(emap: ElevationMap, kernel_radius: int = 2, sigma: float | None = None) -> ElevationMap:
    """Normalized Gaussian convolution over valid cells; invalid cells stay invalid."""
    if kernel_radius < 1:
        raise ValueError("kernel_radius must be >= 1")
    k = gaussian_kernel(int(kernel_radius), sigma)
    v = emap.valid.astype(float)
    num = correlate(np.where(emap.valid, emap.height, 0.0), k, mode="constant")
    den = correlate(v, k, mode="constant")
    out = emap.copy()
    out.height = np.where(emap.valid, num / np.where(emap.valid, den, 1.0), np.nan)
    return out


def nearest_foothold_index(points_xy: np.ndarray, query_xy: np.ndarray, k: int = 16) -> np.ndarray:
    """Index of the nearest point per query; exact distance ties go to the lowest index."""
    points_xy = np.asarray(points_xy, dtype=float)
    query_xy = np.asarray(query_xy, dtype=float)
    k = min(k, len(points_xy))
    _, cand = cKDTree(points_xy).query(query_xy, k=k)
    cand = np.asarray(cand).reshape(len(query_xy), k)
    d = query_xy[:, None, :] - points_xy[cand]
    d2 = d[..., 0] ** 2 + d[..., 1] ** 2
    dmin = d2.min(axis=1, keepdims=True)
    tied = np.where(d2 == dmin, cand, np.iinfo(np.int64).max)
    return tied.min(axis=1)


def foothold_nn_map(fh: FootholdSet, geometry: ElevationMap) -> ElevationMap:
    """Every cell takes the height of the nearest foothold in x-y."""
    if len(fh) == 0:
        raise ValueError("foothold set is empty")
    centers = geometry.cell_centers().reshape(-1, 2)
    idx = nearest_foothold_index(fh.points[:, :2], centers)
    out = ElevationMap(geometry.center.copy(), geometry.size, geometry.resolution)
    out.height = fh.points[idx, 2].reshape(geometry.shape)
    out.variance = np.zeros(geometry.shape)
    out.valid = np.ones(geometry.shape, dtype=bool)
    return out


# -- traversability --------------------------------------------------------------------

@dataclass(frozen=True)
class TraversabilityConfig:
    max_slope: float = math.radians(30.0)
    max_step: float = 0.2
    roughness_window: int = 5
    max_roughness: float = 0.1

    def __post_init__(self):
        if self.roughness_window < 3 or self.roughness_window % 2 == 0:
            raise ValueError("roughness_window must be an odd number >= 3")
        if min(self.max_slope, self.max_step, self.max_roughness) <= 0:
            raise ValueError("penalty limits must be positive")


@dataclass
class TraversabilityMap:
    center: np.ndarray
    resolution: float
    score: np.ndarray
    slope: np.ndarray
    step: np.ndarray
    roughness: np.ndarray

    @property
    def shape(self):
        return self.score.shape


def _penalty(x, limit):
    return np.clip(1.0 - x / limit, 0.0, 1.0)


def local_planes(emap: ElevationMap, window: int):
    """Per-cell least-squares plane over valid cells in a window.

    Returns gradient ``(a, b)`` in height per cell along x and y, the
    residual standard deviation and a mask of cells with a determined fit.
    Heights enter relative to each window's center cell, which keeps the
    residual free of cancellation on level ground far from z = 0.
    """
    r = window // 2
    H, W = emap.shape
    Zp = np.pad(np.where(emap.valid, emap.height, 0.0), r)
    Vp = np.pad(emap.valid.astype(float), r)
    Z0 = np.where(emap.valid, emap.height, 0.0)
    names = ("S", "Sx", "Sy", "Sxx", "Sxy", "Syy", "Sz", "Sxz", "Syz", "Szz")
    m = {k: np.zeros((H, W)) for k in names}
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            v = Vp[r + dy:r + dy + H, r + dx:r + dx + W]
            z = (Zp[r + dy:r + dy + H, r + dx:r + dx + W] - Z0) * v
            m["S"] += v
            m["Sx"] += dx * v
            m["Sy"] += dy * v
            m["Sxx"] += dx * dx * v
            m["Sxy"] += dx * dy * v
            m["Syy"] += dy * dy * v
            m["Sz"] += z
            m["Sxz"] += dx * z
            m["Syz"] += dy * z
            m["Szz"] += z * z
    S = m["S"]
    A = np.stack([np.stack([m["Sxx"], m["Sxy"], m["Sx"]], -1),
                  np.stack([m["Sxy"], m["Syy"], m["Sy"]], -1),
                  np.stack([m["Sx"], m["Sy"], S], -1)], -2)
    b = np.stack([m["Sxz"], m["Syz"], m["Sz"]], -1)
    det = np.linalg.det(A)
    ok = emap.valid & (S >= 3) & (np.abs(det) > 1e-9)
    beta = np.zeros(b.shape)
    beta[ok] = np.linalg.solve(A[ok], b[ok][..., None])[..., 0]
    rss = np.maximum(m["Szz"] - np.sum(beta * b, axis=-1), 0.0)
    rough = np.sqrt(rss / np.maximum(S, 1.0))
    return beta[..., 0], beta[..., 1], rough, ok


def estimate_traversability(emap: ElevationMap, cfg: TraversabilityConfig = TraversabilityConfig()) -> TraversabilityMap:
    """Score = slope penalty x step penalty x roughness penalty, each linear from 1 down to 0.

    Step is the largest deviation of an 8-neighbor from the center cell after
    removing the local plane, so a uniform incline contributes only slope.
    Invalid and under-determined cells score 0.
    """
    if not np.any(emap.valid):
        raise ValueError("map has no valid cells")
    a, b, rough, ok = local_planes(emap, cfg.roughness_window)
    slope = np.arctan(np.hypot(a, b) / emap.resolution)

    H, W = emap.shape
    Z = np.where(emap.valid, emap.height, np.nan)
    Zp = np.pad(Z, 1, constant_values=np.nan)
    step = np.zeros((H, W))
    for oy in (-1, 0, 1):
        for ox in (-1, 0, 1):
            if ox == 0 and oy == 0:
                continue
            zn = Zp[1 + oy:1 + oy + H, 1 + ox:1 + ox + W]
            d = np.abs(zn - Z - (a * ox + b * oy))
            step = np.fmax(step, np.where(np.isfinite(d), d, 0.0))

    score = _penalty(slope, cfg.max_slope) * _penalty(step, cfg.max_step) * _penalty(rough, cfg.max_roughness)
    score = np.where(ok, np.clip(score, 0.0, 1.0), 0.0)
    return TraversabilityMap(emap.center.copy(), emap.resolution, score, slope, step, rough)


# -- error maps -------------------------------------------------------------------------

@dataclass
class ErrorMapAccumulator:
    """Running error statistics on a robot-frame grid (x forward, y left, robot at the center)."""

    size: float = 8.0
    resolution: float = 0.04
    sum_sq: np.ndarray | None = None
    sum: np.ndarray | None = None
    count: np.ndarray | None = None

    def __post_init__(self):
        n = _cell_count(self.size, self.resolution)
        if self.sum_sq is None:
            self.sum_sq = np.zeros((n, n))
            self.sum = np.zeros((n, n))
            self.count = np.zeros((n, n), dtype=np.int64)

    @property
    def shape(self):
        return self.count.shape

    def cell_centers(self) -> np.ndarray:
        n = self.shape[0]
        c = (np.arange(n) + 0.5) * self.resolution - self.size / 2
        xx, yy = np.meshgrid(c, c)
        return np.stack([xx, yy], axis=-1)

    def rmse(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.count > 0, np.sqrt(self.sum_sq / self.count), np.nan)

    def mean(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.count > 0, self.sum / self.count, np.nan)

    def variance(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            m = self.sum / self.count
            return np.where(self.count > 0, np.maximum(self.sum_sq / self.count - m * m, 0.0), np.nan)

    def total_rmse(self, region=None) -> float:
        sel = np.ones(self.shape, dtype=bool) if region is None else np.asarray(region, dtype=bool)
        n = self.count[sel].sum()
        if n == 0:
            return float("nan")
        return float(np.sqrt(self.sum_sq[sel].sum() / n))

    def merged(self, other: "ErrorMapAccumulator") -> "ErrorMapAccumulator":
        if other.shape != self.shape or other.resolution != self.resolution:
            raise ValueError("accumulators differ in geometry")
        return ErrorMapAccumulator(self.size, self.resolution, self.sum_sq + other.sum_sq,
                                   self.sum + other.sum, self.count + other.count)

    def add(self, xy_robot: np.ndarray, err: np.ndarray) -> None:
        n = self.shape[0]
        idx = np.floor((xy_robot + self.size / 2) / self.resolution).astype(int)
        inside = np.all((idx >= 0) & (idx < n), axis=1)
        col, row = idx[inside, 0], idx[inside, 1]
        e = err[inside]
        np.add.at(self.sum_sq, (row, col), e * e)
        np.add.at(self.sum, (row, col), e)
        np.add.at(self.count, (row, col), 1)


def _truth_heights(truth, xy):
    if isinstance(truth, SurfaceMap):
        return truth.lookup(xy)
    h = np.asarray(truth(xy[:, 0], xy[:, 1]), dtype=float)
    return h, np.isfinite(h)


def accumulate_error(acc: ErrorMapAccumulator, emap: ElevationMap, truth, robot_pose: Pose,
                     region=None) -> ErrorMapAccumulator:
    """Add ``map - truth`` on cells valid in both, binned in the robot frame.

    ``truth`` is a SurfaceMap or a callable ``g(x, y)``. ``region`` optionally
    restricts the contributing map cells.
    """
    xy = emap.cell_centers().reshape(-1, 2)
    sel = emap.valid.reshape(-1).copy()
    if region is not None:
        sel &= np.asarray(region, dtype=bool).reshape(-1)
    t, ok = _truth_heights(truth, xy[sel])
    keep = np.flatnonzero(sel)[ok]
    err = emap.height.reshape(-1)[keep] - t[ok]
    yaw = robot_pose.yaw
    c, s = math.cos(yaw), math.sin(yaw)
    d = xy[keep] - robot_pose.translation[:2]
    local = np.column_stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1]])
    out = ErrorMapAccumulator(acc.size, acc.resolution, acc.sum_sq.copy(), acc.sum.copy(), acc.count.copy())
    out.add(local, err)
    return out


# -- export -------------------------------------------------------------------------------

def export_map_csv(path, emap: ElevationMap, trav: TraversabilityMap | None = None) -> None:
    xy = emap.cell_centers().reshape(-1, 2)
    score = trav.score.reshape(-1) if trav is not None else np.full(len(xy), np.nan)
    sel = emap.valid.reshape(-1)
    h = emap.height.reshape(-1)
    v = emap.variance.reshape(-1)
    rows = [[repr(float(x)), repr(float(y)), repr(float(hh)), repr(float(vv)), repr(float(ss))]
            for (x, y), hh, vv, ss in zip(xy[sel], h[sel], v[sel], score[sel])]
    write_csv(path, ["x", "y", "height", "variance", "score"], rows)


def export_map_raster(path, emap: ElevationMap, trav: TraversabilityMap | None = None) -> None:
    planes = [np.where(emap.valid, emap.height, 0.0), np.where(emap.valid, emap.variance, 0.0),
              emap.valid.astype(float)]
    if trav is not None:
        planes.append(trav.score)
    write_raster(path, planes)


def export_error_csv(path, acc: ErrorMapAccumulator) -> None:
    xy = acc.cell_centers().reshape(-1, 2)
    rm, var, cnt = acc.rmse().reshape(-1), acc.variance().reshape(-1), acc.count.reshape(-1)
    sel = cnt > 0
    write_csv(path, ["x", "y", "rmse", "variance", "count"],
              [[repr(float(x)), repr(float(y)), repr(float(r)), repr(float(v)), int(n)]
               for (x, y), r, v, n in zip(xy[sel], rm[sel], var[sel], cnt[sel])])
