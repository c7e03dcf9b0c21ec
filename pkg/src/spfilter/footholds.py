"""Foothold extraction from foot trajectories and sparse foothold grids."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .io import read_csv, write_csv

logger = logging.getLogger(__name__)

# slack on mean_S <= mean_B so that round-off in window sums cannot break ties
MEAN_TOL = 1e-12


@dataclass
class FootTrajectory:
    t: np.ndarray
    positions: np.ndarray
    foot_id: str = "0"

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        if len(self.t) != len(self.positions):
            raise ValueError("timestamps and positions differ in length")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if not (np.all(np.isfinite(self.t)) and np.all(np.isfinite(self.positions))):
            raise ValueError("trajectory contains non-finite values")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0]) if len(self.t) else 0.0


@dataclass
class FootholdSet:
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    times: np.ndarray | None = None
    foot_ids: np.ndarray | None = None
    short_trajectory: bool = False

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        n = len(self.points)
        self.times = np.zeros(n) if self.times is None else np.asarray(self.times, dtype=float)
        self.foot_ids = (np.full(n, "0", dtype=object) if self.foot_ids is None
                         else np.asarray(self.foot_ids, dtype=object))

    def __len__(self) -> int:
        return len(self.points)

    def before(self, t: float) -> "FootholdSet":
        sel = self.times <= t
        return FootholdSet(self.points[sel], self.times[sel], self.foot_ids[sel])

    @classmethod
    def union(cls, sets) -> "FootholdSet":
        sets = list(sets)
        if not sets:
            return cls()
        return cls(
            np.concatenate([s.points for s in sets]),
            np.concatenate([s.times for s in sets]),
            np.concatenate([s.foot_ids for s in sets]),
            any(s.short_trajectory for s in sets),
        )


@dataclass(frozen=True)
class WindowParams:
    t_big: float = 1.5
    t_small: float = 0.07
    r_t: float = 0.015
    # W_B advance; ``None`` means a full window length
    stride: float | None = None

    def __post_init__(self):
        if not self.t_small < self.t_big:
            raise ValueError("small window must be shorter than the large window")
        if not self.r_t > 0:
            raise ValueError("height-change threshold must be positive")
        if self.stride is not None and not 0 < self.stride <= self.t_big:
            raise ValueError("stride must lie in (0, t_big]")


def _window_bounds(t: np.ndarray, half: float) -> tuple[np.ndarray, np.ndarray]:
    lo = np.searchsorted(t, t - half, side="left")
    hi = np.searchsorted(t, t + half, side="left")
    return lo, hi


def small_window_stats(traj: FootTrajectory, t_small: float) -> tuple[np.ndarray, np.ndarray]:
    """Mean height and height range over W_S = [t - t_S/2, t + t_S/2) per sample."""
    z = traj.positions[:, 2]
    lo, hi = _window_bounds(traj.t, t_small / 2)
    csum = np.concatenate([[0.0], np.cumsum(z)])
    mean_s = (csum[hi] - csum[lo]) / (hi - lo)
    zmax = np.full(len(z), -np.inf)
    zmin = np.full(len(z), np.inf)
    width = int(np.max(hi - lo))
    for k in range(width):
        idx = lo + k
        inside = idx < hi
        vals = z[np.minimum(idx, len(z) - 1)]
        zmax = np.where(inside, np.maximum(zmax, vals), zmax)
        zmin = np.where(inside, np.minimum(zmin, vals), zmin)
    return mean_s, zmax - zmin


def foothold_mask(traj: FootTrajectory, params: WindowParams = WindowParams()) -> np.ndarray:
    """Per-sample flag: the sample sits at a flat local height minimum.

    A sample qualifies when the mean height of its small window does not
    exceed that of the enclosing large window and the small window's height
    range stays within ``r_t``. Large windows tile the trajectory from its
    first timestamp; with a stride shorter than ``t_big`` a sample qualifies
    if it passes in any large window containing it. Trajectories shorter
    than one large window yield no footholds.
    """
    keep = np.zeros(len(traj), dtype=bool)
    if len(traj) == 0 or traj.duration < params.t_big:
        return keep
    t, z = traj.t, traj.positions[:, 2]
    mean_s, range_s = small_window_stats(traj, params.t_small)
    flat = range_s <= params.r_t
    stride = params.t_big if params.stride is None else params.stride
    start = t[0]
    while start <= t[-1]:
        lo = np.searchsorted(t, start, side="left")
        hi = np.searchsorted(t, start + params.t_big, side="left")
        if hi > lo:
            mean_b = z[lo:hi].mean()
            tol = MEAN_TOL * max(1.0, abs(mean_b))
            keep[lo:hi] |= flat[lo:hi] & (mean_s[lo:hi] <= mean_b + tol)
        start += stride
    return keep


def extract_footholds(traj: FootTrajectory, params: WindowParams = WindowParams()) -> FootholdSet:
    """Footholds of one foot; see :func:`foothold_mask` for the selection rule."""
    if len(traj) == 0 or traj.duration < params.t_big:
        logger.warning("trajectory of foot %s spans %.3f s < t_big=%.3f s; no footholds",
                       traj.foot_id, traj.duration, params.t_big)
        return FootholdSet(short_trajectory=True)
    idx = np.flatnonzero(foothold_mask(traj, params))
    return FootholdSet(traj.positions[idx], traj.t[idx], np.full(len(idx), traj.foot_id, dtype=object))


def extraction_scores(trajectories, stance_labels, params: WindowParams = WindowParams()) -> tuple[float, float]:
    """Sample-level (precision, recall) of extracted footholds against stance labels."""
    tp = fp = fn = 0
    for traj, stance in zip(trajectories, stance_labels):
        pred = foothold_mask(traj, params)
        stance = np.asarray(stance, dtype=bool)
        tp += int(np.count_nonzero(pred & stance))
        fp += int(np.count_nonzero(pred & ~stance))
        fn += int(np.count_nonzero(~pred & stance))
    precision = tp / (tp + fp) if tp + fp else float("nan")
    recall = tp / (tp + fn) if tp + fn else float("nan")
    return precision, recall


class FootholdExtractor(TransformerMixin, BaseEstimator):
    """Transformer form of :func:`extract_footholds` over a list of trajectories."""

    def __init__(self, t_big=1.5, t_small=0.07, r_t=0.015, stride=None):
        self.t_big = t_big
        self.t_small = t_small
        self.r_t = r_t
        self.stride = stride

    def fit(self, X=None, y=None):
        self.params_ = WindowParams(self.t_big, self.t_small, self.r_t, self.stride)
        return self

    def transform(self, X) -> FootholdSet:
        params = WindowParams(self.t_big, self.t_small, self.r_t, self.stride)
        if isinstance(X, FootTrajectory):
            X = [X]
        return FootholdSet.union(extract_footholds(tr, params) for tr in X)


@dataclass
class FootholdGrid:
    origin: np.ndarray
    resolution: float
    height: np.ndarray
    count: np.ndarray
    dropped: int = 0

    @property
    def occupied(self) -> np.ndarray:
        return self.count > 0

    def to_footholds(self) -> FootholdSet:
        """One foothold per occupied cell, at the cell center with the mean height."""
        iy, ix = np.nonzero(self.occupied)
        x = self.origin[0] + (ix + 0.5) * self.resolution
        y = self.origin[1] + (iy + 0.5) * self.resolution
        return FootholdSet(np.stack([x, y, self.height[iy, ix]], axis=1))


def rasterize_footholds(fh: FootholdSet, resolution: float, bounds) -> FootholdGrid:
    """Mean foothold height per cell of the grid spanning ``bounds`` = (xmin, ymin, xmax, ymax)."""
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    xmin, ymin, xmax, ymax = map(float, bounds)
    W = int(np.ceil(round((xmax - xmin) / resolution, 9)))
    H = int(np.ceil(round((ymax - ymin) / resolution, 9)))
    total = np.zeros((H, W))
    count = np.zeros((H, W), dtype=np.int64)
    p = fh.points
    col = np.floor((p[:, 0] - xmin) / resolution).astype(int)
    row = np.floor((p[:, 1] - ymin) / resolution).astype(int)
    inside = (col >= 0) & (col < W) & (row >= 0) & (row < H)
    dropped = int(np.sum(~inside))
    if dropped:
        logger.info("dropped %d footholds outside grid bounds", dropped)
    np.add.at(total, (row[inside], col[inside]), p[inside, 2])
    np.add.at(count, (row[inside], col[inside]), 1)
    with np.errstate(invalid="ignore"):
        height = np.where(count > 0, total / np.maximum(count, 1), np.nan)
    return FootholdGrid(np.array([xmin, ymin]), resolution, height, count, dropped)


def read_trajectories(path) -> list[FootTrajectory]:
    header, rows = read_csv(path)
    if [h.strip() for h in header] != ["t", "foot_id", "x", "y", "z"]:
        raise ValueError(f"{path}: expected header t,foot_id,x,y,z, got {header}")
    by_foot: dict[str, list] = {}
    for r in rows:
        by_foot.setdefault(r[1].strip(), []).append([float(r[0]), float(r[2]), float(r[3]), float(r[4])])
    out = []
    for fid, vals in by_foot.items():
        a = np.array(vals)
        a = a[np.argsort(a[:, 0], kind="stable")]
        out.append(FootTrajectory(a[:, 0], a[:, 1:], fid))
    return out


def write_trajectories(path, trajs) -> None:
    rows = []
    for tr in trajs:
        for ti, p in zip(tr.t, tr.positions):
            rows.append([repr(float(ti)), tr.foot_id, repr(float(p[0])), repr(float(p[1])), repr(float(p[2]))])
    write_csv(path, ["t", "foot_id", "x", "y", "z"], rows)
