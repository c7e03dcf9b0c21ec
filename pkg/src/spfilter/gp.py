"""Support-surface reconstruction with tiled Gaussian-process regression."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed
from scipy.linalg import solve_triangular
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .footholds import FootholdSet
from .geometry import GridSpec, SurfaceMap

JITTER_START = 1e-8
JITTER_MAX = 1e-4


class GpFactorizationError(np.linalg.LinAlgError):
    pass


def rbf_kernel(xi, xj, l: float) -> float:
    if not l > 0:
        raise ValueError("lengthscale must be positive")
    d = np.asarray(xi, dtype=float) - np.asarray(xj, dtype=float)
    return float(np.exp(-np.dot(d, d) / (2.0 * l * l)))


def rbf_matrix(A, B, l: float) -> np.ndarray:
    if not l > 0:
        raise ValueError("lengthscale must be positive")
    return np.exp(-cdist(A, B, "sqeuclidean") / (2.0 * l * l))


class GaussianProcessTile(RegressorMixin, BaseEstimator):
    """Exact GP regression with a unit-amplitude RBF kernel on centered targets.

    Parameters
    ----------
    lengthscale : float
        RBF lengthscale in meters.
    noise : float
        Observation noise standard deviation in meters.
    tile_id : hashable, optional
        Identifier reported when the covariance cannot be factorized.
    """

    def __init__(self, lengthscale=0.3, noise=0.02, tile_id=None):
        self.lengthscale = lengthscale
        self.noise = noise
        self.tile_id = tile_id

    def fit(self, X, y):
        X = check_array(X, dtype=float)
        y = np.asarray(y, dtype=float).reshape(-1)
        if X.shape[1] != 2 or len(X) != len(y):
            raise ValueError("expected (n, 2) inputs matched by n targets")
        if len(y) < 1 or not np.all(np.isfinite(y)):
            raise ValueError("need at least one finite target")
        if not self.lengthscale > 0:
            raise ValueError("lengthscale must be positive")

        A = rbf_matrix(X, X, self.lengthscale)
        A[np.diag_indices_from(A)] += self.noise ** 2
        jitter = 0.0
        while True:
            try:
                L = np.linalg.cholesky(A + jitter * np.eye(len(A)) if jitter else A)
                break
            except np.linalg.LinAlgError:
                jitter = JITTER_START if jitter == 0.0 else 2.0 * jitter
                if jitter > JITTER_MAX:
                    raise GpFactorizationError(
                        f"tile {self.tile_id!r}: covariance not positive definite up to jitter {JITTER_MAX}"
                    ) from None

        self.X_train_ = X
        self.z_mean_ = float(np.mean(y))
        self.z_centered_ = y - self.z_mean_
        self.L_ = L
        self.jitter_ = jitter
        self.alpha_ = solve_triangular(L.T, solve_triangular(L, self.z_centered_, lower=True), lower=False)
        self.n_features_in_ = 2
        return self

    def predict(self, X, return_var=False):
        check_is_fitted(self, "L_")
        X = check_array(X, dtype=float)
        k = rbf_matrix(X, self.X_train_, self.lengthscale)
        mean = self.z_mean_ + k @ self.alpha_
        if not return_var:
            return mean
        V = solve_triangular(self.L_, k.T, lower=True)
        var = 1.0 + self.noise ** 2 - np.einsum("ij,ij->j", V, V)
        return mean, np.maximum(var, 0.0)


def gp_fit(xy, z, l: float, sigma_n: float, tile_id=None) -> GaussianProcessTile:
    return GaussianProcessTile(lengthscale=l, noise=sigma_n, tile_id=tile_id).fit(xy, z)


def gp_predict(tile: GaussianProcessTile, query_xy) -> tuple:
    q = np.asarray(query_xy, dtype=float)
    mean, var = tile.predict(np.atleast_2d(q), return_var=True)
    if q.ndim == 1:
        return float(mean[0]), float(var[0])
    return mean, var


@dataclass(frozen=True)
class TilingConfig:
    tile_size: float = 2.0
    overlap: float = 0.5
    min_points_per_tile: int = 3

    def __post_init__(self):
        if not 0 <= self.overlap < self.tile_size:
            raise ValueError("overlap must satisfy 0 <= overlap < tile_size")
        if self.min_points_per_tile < 1:
            raise ValueError("min_points_per_tile must be >= 1")


@dataclass(frozen=True)
class GpParams:
    lengthscale: float = 0.3
    noise: float = 0.02


def _tile_starts(lo: float, hi: float, size: float, stride: float) -> np.ndarray:
    n = max(1, int(np.ceil(round((hi - lo - size) / stride, 9))) + 1)
    return lo + stride * np.arange(n)


def _fit_tile(tile_id, extent, X, z, lengthscale, noise, margin, min_points):
    x0, y0, x1, y1 = extent
    sel = ((X[:, 0] >= x0 - margin) & (X[:, 0] <= x1 + margin)
           & (X[:, 1] >= y0 - margin) & (X[:, 1] <= y1 + margin))
    if np.count_nonzero(sel) < min_points:
        return None
    return GaussianProcessTile(lengthscale, noise, tile_id).fit(X[sel], z[sel])


def _predict_tile(gp, extent, Q):
    x0, y0, x1, y1 = extent
    cover = (Q[:, 0] >= x0) & (Q[:, 0] <= x1) & (Q[:, 1] >= y0) & (Q[:, 1] <= y1)
    idx = np.flatnonzero(cover)
    if len(idx) == 0:
        return idx, np.empty(0), np.empty(0)
    mean, var = gp.predict(Q[idx], return_var=True)
    return idx, mean, var


class TiledSurfaceReconstructor(BaseEstimator):
    """Fit GPs on overlapping square tiles and fuse their predictions.

    Tiles of side ``tile_size`` are laid out on a stride of
    ``tile_size - overlap`` across the fitting bounds. Each tile trains on the
    footholds inside it plus an ``overlap`` margin, and predicts the queries
    inside it. Where tiles overlap, the fused height is the mean of the tile
    means and the fused variance the maximum tile variance. Tiles holding
    fewer than ``min_points_per_tile`` footholds are skipped; queries no tile
    covers come back invalid.

    ``prerasterize`` (meters) first collapses footholds onto a grid of that
    resolution, one mean-height sample per occupied cell.
    """

    def __init__(self, lengthscale=0.3, noise=0.02, tile_size=2.0, overlap=0.5,
                 min_points_per_tile=3, prerasterize=None, n_jobs=None):
        self.lengthscale = lengthscale
        self.noise = noise
        self.tile_size = tile_size
        self.overlap = overlap
        self.min_points_per_tile = min_points_per_tile
        self.prerasterize = prerasterize
        self.n_jobs = n_jobs

    def fit(self, footholds, y=None, bounds=None):
        from .footholds import rasterize_footholds

        TilingConfig(self.tile_size, self.overlap, self.min_points_per_tile)
        if isinstance(footholds, FootholdSet):
            P = footholds.points
        else:
            P = check_array(footholds, dtype=float, ensure_min_samples=0).reshape(-1, 3)
        if bounds is None and len(P):
            bounds = (P[:, 0].min(), P[:, 1].min(), P[:, 0].max(), P[:, 1].max())
        if self.prerasterize and len(P):
            grid = rasterize_footholds(FootholdSet(P), self.prerasterize, bounds)
            P = grid.to_footholds().points
        self.footholds_ = P
        self.bounds_ = None if bounds is None else tuple(float(b) for b in bounds)
        self.tiles_ = []
        if len(P) == 0:
            return self

        x0, y0, x1, y1 = self.bounds_
        stride = self.tile_size - self.overlap
        extents = [(tx, ty, tx + self.tile_size, ty + self.tile_size)
                   for ty in _tile_starts(y0, y1, self.tile_size, stride)
                   for tx in _tile_starts(x0, x1, self.tile_size, stride)]
        X, z = P[:, :2], P[:, 2]
        fitted = Parallel(n_jobs=self.n_jobs)(
            delayed(_fit_tile)(i, e, X, z, self.lengthscale, self.noise, self.overlap,
                               self.min_points_per_tile)
            for i, e in enumerate(extents)
        )
        self.tiles_ = [(e, gp) for e, gp in zip(extents, fitted) if gp is not None]
        return self

    def predict(self, X, return_var=False, return_valid=False):
        check_is_fitted(self, "tiles_")
        Q = check_array(X, dtype=float, ensure_min_samples=0)
        n = len(Q)
        total = np.zeros(n)
        count = np.zeros(n, dtype=np.int64)
        vmax = np.full(n, -np.inf)
        parts = Parallel(n_jobs=self.n_jobs)(
            delayed(_predict_tile)(gp, e, Q) for e, gp in self.tiles_
        )
        # reduction in tile order keeps the fused output deterministic
        for idx, mean, var in parts:
            total[idx] += mean
            count[idx] += 1
            vmax[idx] = np.maximum(vmax[idx], var)
        valid = count > 0
        mean = np.where(valid, total / np.maximum(count, 1), np.nan)
        var = np.where(valid, vmax, np.nan)
        out = [mean]
        if return_var:
            out.append(var)
        if return_valid:
            out.append(valid)
        return out[0] if len(out) == 1 else tuple(out)

    def to_surface_map(self, grid: GridSpec) -> SurfaceMap:
        centers = grid.cell_centers().reshape(-1, 2)
        mean, var, valid = self.predict(centers, return_var=True, return_valid=True)
        return SurfaceMap(grid.origin, grid.resolution, mean.reshape(grid.shape),
                          var.reshape(grid.shape), valid.reshape(grid.shape))


def reconstruct_surface(fh: FootholdSet, tiling: TilingConfig, gp: GpParams, out_grid: GridSpec,
                        prerasterize: float | None = None, n_jobs=None) -> SurfaceMap:
    """Tiled GP reconstruction of the support surface over ``out_grid``."""
    if len(fh) == 0:
        H, W = out_grid.shape
        return SurfaceMap(out_grid.origin, out_grid.resolution, np.full((H, W), np.nan),
                          np.full((H, W), np.nan), np.zeros((H, W), dtype=bool))
    model = TiledSurfaceReconstructor(
        gp.lengthscale, gp.noise, tiling.tile_size, tiling.overlap, tiling.min_points_per_tile,
        prerasterize=prerasterize, n_jobs=n_jobs,
    )
    model.fit(fh, bounds=out_grid.bounds)
    return model.to_surface_map(out_grid)
