"""Frames, pinhole camera, depth-image projection and heightmap raycasting.

Camera frames follow the optical convention: +z forward along the optical
axis, +x to the right, +y down. Body and world frames are x forward, y left,
z up. Depth images store the Euclidean distance from the camera center, not
the z-depth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

QUAT_TOL = 1e-9

# body (x fwd, y left, z up) <- optical (z fwd, x right, y down)
_BODY_FROM_OPTICAL = np.array(
    [[0.0, 0.0, 1.0],
     [-1.0, 0.0, 0.0],
     [0.0, -1.0, 0.0]]
)


@dataclass(frozen=True)
class Pose:
    """Rigid transform mapping points from ``source`` frame into ``target``.

    ``rotation`` is a quaternion in scalar-last order ``(x, y, z, w)``.
    """

    translation: np.ndarray
    rotation: np.ndarray
    source: str = "sensor"
    target: str = "world"

    def __post_init__(self):
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(4))

    @classmethod
    def identity(cls, source: str = "sensor", target: str = "world") -> "Pose":
        return cls(np.zeros(3), np.array([0.0, 0.0, 0.0, 1.0]), source, target)

    @classmethod
    def from_matrix(cls, R, t, source: str = "sensor", target: str = "world") -> "Pose":
        q = Rotation.from_matrix(np.asarray(R, dtype=float)).as_quat()
        return cls(np.asarray(t, dtype=float), q, source, target)

    @classmethod
    def from_euler(cls, t, yaw=0.0, pitch=0.0, roll=0.0,
                   source: str = "sensor", target: str = "world") -> "Pose":
        """Intrinsic z-y-x (yaw, pitch, roll) rotation, radians."""
        q = Rotation.from_euler("ZYX", [yaw, pitch, roll]).as_quat()
        return cls(np.asarray(t, dtype=float), q, source, target)

    def check(self) -> None:
        norm = float(np.linalg.norm(self.rotation))
        if abs(norm - 1.0) > QUAT_TOL:
            raise ValueError(f"pose quaternion is not unit length (norm={norm!r})")
        if not np.all(np.isfinite(self.translation)):
            raise ValueError("pose translation is not finite")

    @property
    def R(self) -> np.ndarray:
        return Rotation.from_quat(self.rotation).as_matrix()

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.translation
        return T

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ self.R.T + self.translation

    def inverse(self) -> "Pose":
        Rt = self.R.T
        return Pose.from_matrix(Rt, -Rt @ self.translation, self.target, self.source)

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        R = self.R @ other.R
        t = self.R @ other.translation + self.translation
        return Pose.from_matrix(R, t, other.source, self.target)

    @property
    def yaw(self) -> float:
        fwd = self.R[:, 0]
        return float(np.arctan2(fwd[1], fwd[0]))


def camera_pose(position, yaw: float = 0.0, pitch: float = 0.0) -> Pose:
    """World<-camera pose for a camera at ``position`` looking along ``yaw``.

    Positive ``pitch`` tilts the optical axis down, in radians.
    """
    R_world_body = Rotation.from_euler("ZY", [yaw, pitch]).as_matrix()
    return Pose.from_matrix(R_world_body @ _BODY_FROM_OPTICAL, position, "sensor", "world")


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def pixel_rays(self, uv=None) -> np.ndarray:
        """Unit ray directions in the camera frame, shape (m, n, 3).

        Without ``uv`` the rays pass through integer pixel centers.
        """
        if uv is None:
            rows, cols = np.mgrid[0:self.height, 0:self.width].astype(float)
            u, v = cols, rows
        else:
            u, v = uv[..., 0], uv[..., 1]
        d = np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], axis=-1)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)


@dataclass
class PointCloud:
    points: np.ndarray
    frame: str = "world"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        if self.frame not in ("sensor", "world"):
            raise ValueError(f"unknown frame {self.frame!r}")
        self.points = pts

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class SparseDepthImage:
    """Per-pixel Euclidean depth with an explicit validity mask.

    Invalid pixels hold NaN so that any accidental arithmetic on them is
    visible. ``uv`` optionally keeps the exact sub-pixel image coordinates of
    each stored point, so reprojection recovers the point exactly.
    """

    depth: np.ndarray
    valid: np.ndarray
    uv: np.ndarray | None = None

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=float)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.depth.shape != self.valid.shape or self.depth.ndim != 2:
            raise ValueError("depth and validity must be matching 2D grids")
        bad = self.valid & ~(np.isfinite(self.depth) & (self.depth > 0))
        if np.any(bad):
            raise ValueError("valid pixels must carry finite positive depth")
        self.depth = np.where(self.valid, self.depth, np.nan)

    @classmethod
    def empty(cls, shape) -> "SparseDepthImage":
        return cls(np.full(shape, np.nan), np.zeros(shape, dtype=bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape

    def filled(self, value: float = 0.0) -> np.ndarray:
        return np.where(self.valid, self.depth, value)


@dataclass
class SurfaceMap:
    """2.5D grid: cell (i, j) has its center at ``origin + ((j + .5), (i + .5)) * resolution``."""

    origin: np.ndarray
    resolution: float
    height: np.ndarray
    variance: np.ndarray
    valid: np.ndarray = field(default=None)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float).reshape(2)
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        self.height = np.asarray(self.height, dtype=float)
        self.variance = np.asarray(self.variance, dtype=float)
        if self.valid is None:
            self.valid = np.isfinite(self.height)
        self.valid = np.asarray(self.valid, dtype=bool) & np.isfinite(self.height)
        if np.any(self.variance[self.valid] < 0):
            raise ValueError("variance must be non-negative on valid cells")

    @property
    def shape(self) -> tuple[int, int]:
        return self.height.shape

    def cell_centers(self) -> np.ndarray:
        H, W = self.shape
        iy, ix = np.mgrid[0:H, 0:W]
        x = self.origin[0] + (ix + 0.5) * self.resolution
        y = self.origin[1] + (iy + 0.5) * self.resolution
        return np.stack([x, y], axis=-1)

    def cell_index(self, xy) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (row, col, inside) for world x-y positions."""
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        col = np.floor((xy[:, 0] - self.origin[0]) / self.resolution).astype(int)
        row = np.floor((xy[:, 1] - self.origin[1]) / self.resolution).astype(int)
        H, W = self.shape
        inside = (row >= 0) & (row < H) & (col >= 0) & (col < W)
        return row, col, inside

    def lookup(self, xy) -> tuple[np.ndarray, np.ndarray]:
        """Height at x-y positions (NaN outside or on invalid cells) and validity."""
        row, col, inside = self.cell_index(xy)
        h = np.full(len(row), np.nan)
        ok = inside.copy()
        ok[inside] = self.valid[row[inside], col[inside]]
        h[ok] = self.height[row[ok], col[ok]]
        return h, ok


def transform_cloud(cloud: PointCloud, pose: Pose) -> PointCloud:
    pose.check()
    if cloud.frame != pose.source:
        raise ValueError(f"cloud is in frame {cloud.frame!r}, pose maps from {pose.source!r}")
    return PointCloud(pose.apply(cloud.points), frame=pose.target)


def project_points(cloud: PointCloud, intr: CameraIntrinsics, return_index: bool = False):
    """Project a camera-frame cloud to a sparse depth image (nearest point wins).

    With ``return_index`` also returns an (m, n) array holding the index of the
    point stored at each pixel, -1 where invalid.
    """
    pts = cloud.points
    m, n = intr.height, intr.width
    depth = np.full((m, n), np.nan)
    valid = np.zeros((m, n), dtype=bool)
    uv = np.full((m, n, 2), np.nan)
    index = np.full((m, n), -1, dtype=np.int64)

    front = np.flatnonzero(pts[:, 2] > 0)
    if len(front):
        p = pts[front]
        u = intr.fx * p[:, 0] / p[:, 2] + intr.cx
        v = intr.fy * p[:, 1] / p[:, 2] + intr.cy
        col = np.floor(u + 0.5)
        row = np.floor(v + 0.5)
        inside = (col >= 0) & (col < n) & (row >= 0) & (row < m)
        idx = front[inside]
        col, row, u, v = col[inside].astype(int), row[inside].astype(int), u[inside], v[inside]
        dist = np.linalg.norm(pts[idx], axis=1)
        lin = row * n + col
        order = np.lexsort((idx, dist, lin))
        lin_sorted = lin[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = lin_sorted[1:] != lin_sorted[:-1]
        keep = order[first]
        r, c = row[keep], col[keep]
        depth[r, c] = dist[keep]
        valid[r, c] = True
        uv[r, c, 0] = u[keep]
        uv[r, c, 1] = v[keep]
        index[r, c] = idx[keep]

    img = SparseDepthImage(depth, valid, uv)
    if return_index:
        return img, index
    return img


def reproject_depth(img: SparseDepthImage, intr: CameraIntrinsics, cam_pose: Pose | None = None) -> PointCloud:
    """Lift valid pixels back to 3D; world frame when ``cam_pose`` is given."""
    if img.shape != intr.shape:
        raise ValueError(f"image shape {img.shape} does not match intrinsics {intr.shape}")
    rays = intr.pixel_rays()
    if img.uv is not None:
        exact = img.valid & np.all(np.isfinite(img.uv), axis=-1)
        if np.any(exact):
            rays[exact] = intr.pixel_rays(img.uv[exact])
    sel = img.valid
    pts = rays[sel] * img.depth[sel][:, None]
    cloud = PointCloud(pts, frame="sensor")
    if cam_pose is None:
        return cloud
    return transform_cloud(cloud, cam_pose)


def raycast_grid(origins, directions, surface: SurfaceMap, max_range: float | None = None):
    """March rays through a height grid with a 2D DDA over cells.

    A ray hits a valid cell when it enters below the cell top (side wall) or
    crosses the top inside the cell; the latter is resolved exactly by
    interpolating along the ray. Invalid cells are transparent.

    Returns ``(t, row, col)``; ``t`` is NaN for rays that never hit.
    """
    D = np.atleast_2d(np.asarray(directions, dtype=float))
    N = len(D)
    O = np.broadcast_to(np.asarray(origins, dtype=float), (N, 3))
    res = surface.resolution
    H, W = surface.shape
    x0, y0 = surface.origin
    x1, y1 = x0 + W * res, y0 + H * res

    t_hit = np.full(N, np.nan)
    hit_row = np.full(N, -1, dtype=np.int64)
    hit_col = np.full(N, -1, dtype=np.int64)
    if N == 0 or not np.any(surface.valid):
        return t_hit, hit_row, hit_col

    hmax = float(np.max(surface.height[surface.valid]))
    heights = np.where(surface.valid, surface.height, -np.inf)

    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / D[:, :2]
        tx_a = (x0 - O[:, 0]) * inv[:, 0]
        tx_b = (x1 - O[:, 0]) * inv[:, 0]
        ty_a = (y0 - O[:, 1]) * inv[:, 1]
        ty_b = (y1 - O[:, 1]) * inv[:, 1]
    # axis-parallel rays: the slab is either always or never entered
    fx = D[:, 0] == 0
    insx = (O[:, 0] >= x0) & (O[:, 0] < x1)
    tx_lo = np.where(fx, np.where(insx, -np.inf, np.inf), np.minimum(tx_a, tx_b))
    tx_hi = np.where(fx, np.where(insx, np.inf, -np.inf), np.maximum(tx_a, tx_b))
    fy = D[:, 1] == 0
    insy = (O[:, 1] >= y0) & (O[:, 1] < y1)
    ty_lo = np.where(fy, np.where(insy, -np.inf, np.inf), np.minimum(ty_a, ty_b))
    ty_hi = np.where(fy, np.where(insy, np.inf, -np.inf), np.maximum(ty_a, ty_b))
    t_start = np.maximum(np.maximum(tx_lo, ty_lo), 0.0)
    t_exit = np.minimum(tx_hi, ty_hi)
    if max_range is not None:
        t_exit = np.minimum(t_exit, max_range)

    skyward = (D[:, 2] >= 0) & (O[:, 2] > hmax)
    active = np.flatnonzero((t_start < t_exit) & ~skyward)
    if len(active) == 0:
        return t_hit, hit_row, hit_col

    o, d = O[active], D[active]
    t = t_start[active]
    te = t_exit[active]
    p = o[:, :2] + (t + 1e-12)[:, None] * d[:, :2]
    ix = np.clip(np.floor((p[:, 0] - x0) / res).astype(np.int64), 0, W - 1)
    iy = np.clip(np.floor((p[:, 1] - y0) / res).astype(np.int64), 0, H - 1)
    sx = np.sign(d[:, 0]).astype(np.int64)
    sy = np.sign(d[:, 1]).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        nbx = x0 + (ix + (sx > 0)) * res
        nby = y0 + (iy + (sy > 0)) * res
        tmx = np.where(sx != 0, (nbx - o[:, 0]) / d[:, 0], np.inf)
        tmy = np.where(sy != 0, (nby - o[:, 1]) / d[:, 1], np.inf)
        tdx = np.where(sx != 0, res / np.abs(d[:, 0]), np.inf)
        tdy = np.where(sy != 0, res / np.abs(d[:, 1]), np.inf)

    ids = active
    for _ in range(H + W + 4):
        if len(ids) == 0:
            break
        h = heights[iy, ix]
        t_next = np.minimum(np.minimum(tmx, tmy), te)
        z0 = o[:, 2] + t * d[:, 2]
        with np.errstate(invalid="ignore"):
            z1 = o[:, 2] + t_next * d[:, 2]
            solid = np.isfinite(h)
            wall = solid & (z0 <= h)
            top = solid & ~wall & (z1 <= h) & (d[:, 2] < 0)
            t_top = (h - o[:, 2]) / d[:, 2]
        hit = wall | top
        if np.any(hit):
            th = np.where(wall, t, np.clip(t_top, t, t_next))
            gid = ids[hit]
            t_hit[gid] = th[hit]
            hit_row[gid] = iy[hit]
            hit_col[gid] = ix[hit]

        done = hit | (t_next >= te)
        step_x = ~done & (tmx <= tmy)
        step_y = ~done & ~step_x
        t = np.where(step_x, tmx, np.where(step_y, tmy, t))
        ix = ix + np.where(step_x, sx, 0)
        iy = iy + np.where(step_y, sy, 0)
        tmx = np.where(step_x, tmx + tdx, tmx)
        tmy = np.where(step_y, tmy + tdy, tmy)
        out = (ix < 0) | (ix >= W) | (iy < 0) | (iy >= H)
        keep = ~done & ~out
        if not np.all(keep):
            ids, o, d, t, te = ids[keep], o[keep], d[keep], t[keep], te[keep]
            ix, iy, sx, sy = ix[keep], iy[keep], sx[keep], sy[keep]
            tmx, tmy, tdx, tdy = tmx[keep], tmy[keep], tdx[keep], tdy[keep]
    return t_hit, hit_row, hit_col


def raycast_heightmap(surface: SurfaceMap, intr: CameraIntrinsics, cam_pose: Pose,
                      max_range: float | None = None) -> tuple[SparseDepthImage, np.ndarray]:
    """Render a surface map into a camera: per-pixel distance and cell variance."""
    cam_pose.check()
    rays_cam = intr.pixel_rays().reshape(-1, 3)
    dirs = rays_cam @ cam_pose.R.T
    t, row, col = raycast_grid(cam_pose.translation, dirs, surface, max_range)
    ok = np.isfinite(t) & (t > 0)
    depth = np.where(ok, t, np.nan).reshape(intr.shape)
    var = np.full(len(t), np.nan)
    var[ok] = surface.variance[row[ok], col[ok]]
    return SparseDepthImage(depth, ok.reshape(intr.shape)), var.reshape(intr.shape)


@dataclass(frozen=True)
class GridSpec:
    origin: tuple[float, float]
    resolution: float
    shape: tuple[int, int]

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        H, W = self.shape
        x0, y0 = self.origin
        return (x0, y0, x0 + W * self.resolution, y0 + H * self.resolution)

    def cell_centers(self) -> np.ndarray:
        H, W = self.shape
        iy, ix = np.mgrid[0:H, 0:W]
        return np.stack([self.origin[0] + (ix + 0.5) * self.resolution,
                         self.origin[1] + (iy + 0.5) * self.resolution], axis=-1)
