"""The semantic pointcloud filter and its predictors.

A predictor maps ``(x_rgb, x_d)`` to a support-surface depth image and
two-class scores (``RIGID`` = 0, ``SUPPORT`` = 1). The filter keeps raw depth
on rigid pixels, substitutes predicted depth on support pixels that carry a
measurement, and lifts the result back to a pointcloud.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import median_filter
from sklearn.base import BaseEstimator, TransformerMixin

from .geometry import (CameraIntrinsics, PointCloud, Pose, SparseDepthImage, project_points,
                       reproject_depth, transform_cloud)

RIGID, SUPPORT = 0, 1


class PredictorShapeError(ValueError):
    pass


class BasePredictor(BaseEstimator):
    """Plug-in boundary for the filter. Subclasses implement :meth:`predict`."""

    name = "base"
    version = "0"
    thread_safe = True

    def fit(self, samples=None, y=None):
        return self

    def predict(self, x_rgb, x_d: SparseDepthImage):
        raise NotImplementedError

    def predict_mask(self, x_rgb, x_d: SparseDepthImage) -> np.ndarray:
        _, scores = self.predict(x_rgb, x_d)
        return np.argmax(scores, axis=-1).astype(np.uint8)

    def __call__(self, x_rgb, x_d):
        return self.predict(x_rgb, x_d)


class FixedPredictor(BasePredictor):
    """Returns a given depth image and mask regardless of input (ideal/oracle predictor)."""

    name = "fixed"

    def __init__(self, depth=None, mask=None):
        self.depth = depth
        self.mask = mask

    def predict(self, x_rgb, x_d):
        shape = x_d.shape
        depth = np.full(shape, np.nan) if self.depth is None else np.asarray(self.depth, dtype=float)
        mask = np.zeros(shape, dtype=np.uint8) if self.mask is None else np.asarray(self.mask)
        return depth, mask_to_scores(mask)


def mask_to_scores(mask) -> np.ndarray:
    mask = np.asarray(mask)
    s = np.zeros(mask.shape + (2,))
    s[..., 0] = np.where(mask == RIGID, 1.0, -1.0)
    s[..., 1] = -s[..., 0]
    return s


def excess_green(x_rgb) -> np.ndarray:
    """Chromaticity excess-green index 2g - r - b, insensitive to brightness."""
    rgb = np.asarray(x_rgb, dtype=float)
    total = rgb.sum(axis=-1)
    safe = np.where(total > 1e-6, total, 1.0)
    r, g, b = (rgb[..., i] / safe for i in range(3))
    return np.where(total > 1e-6, 2 * g - r - b, 0.0)


def _robust_plane(P: np.ndarray, inlier: float, n_iter: int):
    """Total-least-squares plane n.p = d with iterative trimming."""
    keep = np.ones(len(P), dtype=bool)
    n, d = None, None
    for _ in range(n_iter):
        if np.count_nonzero(keep) < 3:
            break
        Q = P[keep]
        c = Q.mean(axis=0)
        _, _, Vt = np.linalg.svd(Q - c, full_matrices=False)
        n = Vt[-1]
        d = float(n @ c)
        r = np.abs(P @ n - d)
        scale = 1.4826 * np.median(r[keep])
        new = r <= max(inlier, 2.5 * scale)
        if np.array_equal(new, keep):
            break
        keep = new
    return n, d


def _far_returns(P: np.ndarray, inlier: float, n_iter: int, spread: float = 5.0) -> np.ndarray:
    """Mask of returns lying well beyond a trimmed plane through the set, seen from the origin.

    Over vegetation the trimmed fit follows the canopy top; returns more than
    ``spread`` robust deviations (and at least two inlier widths) beyond it
    are those that reached the ground.
    """
    n, d = _robust_plane(P, inlier, n_iter)
    if n is None:
        return np.zeros(len(P), dtype=bool)
    if d < 0:
        n, d = -n, -d
    r = P @ n - d
    med = np.median(r)
    scale = 1.4826 * np.median(np.abs(r - med))
    return r > med + max(spread * scale, 2 * inlier)


class HeuristicPredictor(BasePredictor):
    """Greenness segmentation plus per-region robust plane fits to ground returns.

    Parameters
    ----------
    intrinsics : CameraIntrinsics, optional
        When given, planes are fitted to rigid and penetrating returns in 3D and support
        pixels take the distance at which their ray meets the plane. Without
        it, a plane is fitted to depth over image coordinates.
    exg_threshold : float
        Pixels with excess-green above this are classed as support.
    median_size : int
        Side of the median filter on the excess-green image; a pixel is
        support only if both its own value and the median exceed the
        threshold. 1 disables it.
    regions : (rows, cols)
        Image partition for the local fits.
    margin : float
        Fraction of a region's size by which the fitting window extends
        beyond it.
    max_ratio : float
        Predictions farther than this factor from the raw depth, in either
        direction, are rejected and the raw depth is kept.
    far_returns : bool
        Also fit to support-pixel returns lying far beyond the canopy plane,
        i.e. the LiDAR rays that slipped through the vegetation.
    min_support : int
        Minimum number of support returns in a window for that search.
    min_points : int
        Minimum number of returns for a plane fit; regions below it keep
        the raw depth.
    """

    name = "heuristic"
    version = "1"

    def __init__(self, intrinsics=None, exg_threshold=0.12, median_size=3, regions=(2, 3), margin=0.5,
                 min_points=10, inlier=0.05, n_iter=6, max_ratio=4.0, far_returns=True,
                 min_support=30):
        self.intrinsics = intrinsics
        self.exg_threshold = exg_threshold
        self.median_size = median_size
        self.regions = regions
        self.margin = margin
        self.min_points = min_points
        self.inlier = inlier
        self.n_iter = n_iter
        self.max_ratio = max_ratio
        self.far_returns = far_returns
        self.min_support = min_support

    def predict(self, x_rgb, x_d: SparseDepthImage):
        exg = excess_green(x_rgb)
        if self.median_size > 1:
            # a pixel must be green itself and agree with its neighborhood
            exg = np.minimum(exg, median_filter(exg, size=self.median_size, mode="nearest"))
        support = exg > self.exg_threshold
        scores = np.stack([self.exg_threshold - exg, exg - self.exg_threshold], axis=-1)

        m, n = x_d.shape
        depth = x_d.depth.copy()
        if self.intrinsics is not None:
            centers = self.intrinsics.pixel_rays()
            rays = centers.copy()
            if x_d.uv is not None:
                exact = x_d.valid & np.all(np.isfinite(x_d.uv), axis=-1)
                rays[exact] = self.intrinsics.pixel_rays(x_d.uv[exact])
        rigid_ok = x_d.valid & ~support
        R, C = self.regions
        rb = np.linspace(0, m, R + 1).astype(int)
        cb = np.linspace(0, n, C + 1).astype(int)
        rows, cols = np.mgrid[0:m, 0:n]
        for i in range(R):
            for j in range(C):
                r0, r1, c0, c1 = rb[i], rb[i + 1], cb[j], cb[j + 1]
                mr = int(round(self.margin * (r1 - r0)))
                mc = int(round(self.margin * (c1 - c0)))
                win = (slice(max(r0 - mr, 0), min(r1 + mr, m)), slice(max(c0 - mc, 0), min(c1 + mc, n)))
                core = (slice(r0, r1), slice(c0, c1))
                sel = rigid_ok[win]
                if self.intrinsics is not None:
                    P = rays[win][sel] * x_d.depth[win][sel][:, None]
                    soft = x_d.valid[win] & support[win]
                    if self.far_returns and np.count_nonzero(soft) >= self.min_support:
                        S = rays[win][soft] * x_d.depth[win][soft][:, None]
                        P = np.concatenate([P, S[_far_returns(S, self.inlier, self.n_iter)]])
                    if len(P) < self.min_points:
                        continue
                    nrm, dist = _robust_plane(P, self.inlier, self.n_iter)
                    if nrm is None:
                        continue
                    with np.errstate(divide="ignore", invalid="ignore"):
                        t = dist / (centers[core] @ nrm)
                else:
                    if np.count_nonzero(sel) < self.min_points:
                        continue
                    u = cols[win][sel].astype(float)
                    v = rows[win][sel].astype(float)
                    A = np.column_stack([u, v, np.ones_like(u)])
                    coef, *_ = np.linalg.lstsq(A, x_d.depth[win][sel], rcond=None)
                    t = coef[0] * cols[core] + coef[1] * rows[core] + coef[2]
                with np.errstate(invalid="ignore"):
                    ok = np.isfinite(t) & (t > 0)
                    raw = x_d.depth[core]
                    ok &= ~x_d.valid[core] | ((t <= self.max_ratio * raw) & (t * self.max_ratio >= raw))
                depth[core] = np.where(ok, t, x_d.depth[core])
        return depth, scores


def combine_outputs(x_d: SparseDepthImage, depth_pred, seg) -> SparseDepthImage:
    """Raw depth on rigid pixels, predicted depth on measured support pixels."""
    depth_pred = np.asarray(depth_pred, dtype=float)
    seg = np.asarray(seg)
    if depth_pred.shape != x_d.shape or seg.shape != x_d.shape:
        raise ValueError("x_d, predicted depth and mask must share one shape")
    with np.errstate(invalid="ignore"):
        usable = (seg == SUPPORT) & x_d.valid & np.isfinite(depth_pred) & (depth_pred > 0)
    depth = np.where(usable, depth_pred, x_d.depth)
    uv = None
    if x_d.uv is not None:
        # predicted depth is defined along the pixel-center ray
        uv = np.where(usable[..., None], np.nan, x_d.uv)
    return SparseDepthImage(depth, x_d.valid.copy(), uv)


@dataclass
class FilterOutput:
    depth_pred: np.ndarray
    seg: np.ndarray
    combined: SparseDepthImage
    cloud: PointCloud
    source_index: np.ndarray
    n_in_view: int


_serial_lock = threading.Lock()


def filter_pointcloud(cloud: PointCloud, rgb, intr: CameraIntrinsics, cam_pose: Pose,
                      predictor) -> FilterOutput:
    """Project, predict, combine and reproject one frame.

    Points that do not land in the image pass through unchanged and are
    appended after the in-view points. ``source_index`` gives, for every
    output point, the index of the input point it came from.
    """
    cam_cloud = transform_cloud(cloud, cam_pose.inverse()) if cloud.frame == "world" else cloud
    x_d, index = project_points(cam_cloud, intr, return_index=True)
    name = getattr(predictor, "name", type(predictor).__name__)
    if getattr(predictor, "thread_safe", True):
        depth_pred, scores = predictor(rgb, x_d)
    else:
        with _serial_lock:
            depth_pred, scores = predictor(rgb, x_d)
    depth_pred = np.asarray(depth_pred, dtype=float)
    scores = np.asarray(scores)
    if depth_pred.shape != x_d.shape or scores.shape != x_d.shape + (2,):
        raise PredictorShapeError(
            f"predictor {name!r} returned depth {depth_pred.shape} and scores {scores.shape}; "
            f"expected {x_d.shape} and {x_d.shape + (2,)}"
        )
    seg = np.argmax(scores, axis=-1).astype(np.uint8)
    combined = combine_outputs(x_d, depth_pred, seg)

    in_view = reproject_depth(combined, intr, cam_pose if cloud.frame == "world" else None)
    in_idx = index[combined.valid]
    projected = np.zeros(len(cloud), dtype=bool)
    front = cam_cloud.points[:, 2] > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.floor(intr.fx * cam_cloud.points[:, 0] / cam_cloud.points[:, 2] + intr.cx + 0.5)
        v = np.floor(intr.fy * cam_cloud.points[:, 1] / cam_cloud.points[:, 2] + intr.cy + 0.5)
    projected = front & (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
    outside = np.flatnonzero(~projected)
    pts = np.concatenate([in_view.points, cloud.points[outside]])
    src = np.concatenate([in_idx, outside])
    return FilterOutput(depth_pred, seg, combined, PointCloud(pts, cloud.frame), src, int(len(in_idx)))


class SemanticPointcloudFilter(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``transform([(cloud, rgb, cam_pose), ...])`` -> filtered clouds."""

    def __init__(self, predictor=None, intrinsics=None):
        self.predictor = predictor
        self.intrinsics = intrinsics

    def _predictor(self):
        return self.predictor if self.predictor is not None else HeuristicPredictor(self.intrinsics)

    def fit(self, X=None, y=None):
        self.predictor_ = self._predictor()
        if X is not None and hasattr(self.predictor_, "fit"):
            self.predictor_.fit(X)
        return self

    def transform(self, X):
        pred = getattr(self, "predictor_", None) or self._predictor()
        return [filter_pointcloud(cloud, rgb, self.intrinsics, pose, pred).cloud for cloud, rgb, pose in X]
