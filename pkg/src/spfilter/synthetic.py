"""Deterministic synthetic worlds: terrain, penetrable vegetation, box obstacles.

Ground height is an analytic sum of sinusoids, so every oracle downstream can
evaluate the true support surface exactly. Vegetation is a seeded patch
field on top of it. Sensors (dome LiDAR, pinhole camera) and a trotting gait
are simulated against these surfaces.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .footholds import FootTrajectory
from .geometry import CameraIntrinsics, PointCloud, Pose, SurfaceMap, camera_pose, raycast_grid

GROUND, VEGETATION, OBSTACLE, SKY = 0, 1, 2, 3
RIGID, SUPPORT = 0, 1


@dataclass(frozen=True)
class Sinusoid:
    amplitude: float
    frequency: float
    direction: float = 0.0
    phase: float = 0.0


@dataclass(frozen=True)
class Box:
    center: tuple[float, float]
    size: tuple[float, float, float]
    yaw: float = 0.0


@dataclass(frozen=True)
class GaitParams:
    stance: float = 0.4
    swing: float = 0.4
    step_length: float = 0.3
    clearance: float = 0.15
    rate: float = 400.0
    # foot offsets in the body frame (x fwd, y left), trot phase offsets
    offsets: tuple = ((0.35, 0.2), (0.35, -0.2), (-0.35, 0.2), (-0.35, -0.2))
    phases: tuple = (0.0, 0.5, 0.5, 0.0)
    names: tuple = ("LF", "RF", "LH", "RH")

    @property
    def cycle(self) -> float:
        return self.stance + self.swing

    @property
    def speed(self) -> float:
        return self.step_length / self.cycle


@dataclass(frozen=True)
class SensorRig:
    camera_height: float = 0.6
    camera_forward: float = 0.35
    camera_pitch: float = np.deg2rad(28.0)
    lidar_up: float = 0.1
    width: int = 96
    height: int = 72
    focal: float = 70.0
    frame_interval: float = 0.5
    elevations: tuple = tuple(np.linspace(-4.0, -60.0, 32))
    azimuth_step: float = 1.0
    azimuth_span: float = 180.0
    range_noise: float = 0.01
    max_range: float = 12.0

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.focal, self.focal, (self.width - 1) / 2, (self.height - 1) / 2,
                                self.width, self.height)

    def ray_pattern(self) -> "RayPattern":
        az = np.arange(-self.azimuth_span, self.azimuth_span, self.azimuth_step)
        return RayPattern(np.deg2rad(az), np.deg2rad(np.asarray(self.elevations)))


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    extent: tuple[float, float] = (20.0, 8.0)
    resolution: float = 0.04
    ground: tuple = (Sinusoid(0.12, 0.11, 0.3, 0.0), Sinusoid(0.06, 0.23, 1.9, 1.0))
    coverage: float = 0.55
    veg_height: tuple[float, float] = (0.2, 0.4)
    p_pen: float = 0.1
    patch_scale: float = 0.6
    veg_roughness: float = 0.02
    obstacles: tuple = ()
    waypoints: tuple = ((2.0, 4.0), (18.0, 4.0))
    gait: GaitParams = GaitParams()
    rig: SensorRig = SensorRig()

    def __post_init__(self):
        if not 0.0 <= self.p_pen <= 1.0:
            raise ValueError("p_pen must lie in [0, 1]")
        if not 0.0 <= self.coverage <= 1.0:
            raise ValueError("coverage must lie in [0, 1]")
        lx, ly = self.extent
        for b in self.obstacles:
            if not (0 <= b.center[0] <= lx and 0 <= b.center[1] <= ly):
                raise ValueError(f"obstacle {b} lies outside the extent")
        for x, y in self.waypoints:
            if not (0 <= x <= lx and 0 <= y <= ly):
                raise ValueError(f"waypoint ({x}, {y}) lies outside the extent")


@dataclass(frozen=True)
class RayPattern:
    azimuths: np.ndarray
    elevations: np.ndarray

    def directions(self) -> np.ndarray:
        el, az = np.meshgrid(self.elevations, self.azimuths, indexing="ij")
        return np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1).reshape(-1, 3)


@dataclass
class Frame:
    t: float
    body: Pose
    camera: Pose
    lidar: Pose


@dataclass
class Scene:
    spec: SceneSpec
    true_surface: SurfaceMap
    vegetation_top: SurfaceMap
    vegetation_height: np.ndarray
    obstacles: tuple
    frames: list = field(default_factory=list)

    def ground(self, x, y) -> np.ndarray:
        return ground_height(self.spec.ground, x, y)

    def ground_gradient(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        return ground_gradient(self.spec.ground, x, y)

    def box_z_range(self, box: Box) -> tuple[float, float]:
        g = float(self.ground(box.center[0], box.center[1]))
        return g - 0.5, g + box.size[2]


def ground_height(waves, x, y) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    z = np.zeros(np.broadcast(x, y).shape)
    for w in waves:
        arg = 2 * np.pi * w.frequency * (x * np.cos(w.direction) + y * np.sin(w.direction)) + w.phase
        z = z + w.amplitude * np.sin(arg)
    return z


def ground_gradient(waves, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    gx = np.zeros(np.broadcast(x, y).shape)
    gy = np.zeros_like(gx)
    for w in waves:
        k = 2 * np.pi * w.frequency
        c = w.amplitude * k * np.cos(k * (x * np.cos(w.direction) + y * np.sin(w.direction)) + w.phase)
        gx = gx + c * np.cos(w.direction)
        gy = gy + c * np.sin(w.direction)
    return gx, gy


# -- counter-based randomness ---------------------------------------------------

_M64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _mix(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        x = x + np.uint64(0x9E3779B97F4A7C15)
        x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return x ^ (x >> np.uint64(31))


def hash_uniform(seed: int, stream: int, index) -> np.ndarray:
    """Uniform (0, 1) numbers that depend only on (seed, stream, index)."""
    idx = np.asarray(index, dtype=np.uint64)
    with np.errstate(over="ignore"):
        key = _mix(_mix(np.full_like(idx, np.uint64(seed & 0xFFFFFFFF))) ^ np.uint64(stream & 0xFFFFFFFF))
        h = _mix(key ^ _mix(idx))
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) / float(1 << 53)


def hash_normal(seed: int, stream: int, index) -> np.ndarray:
    u1 = hash_uniform(seed, 2 * stream + 1, index)
    u2 = hash_uniform(seed, 2 * stream + 2, index)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2 * np.pi * u2)


# -- generation -------------------------------------------------------------------

def generate_scene(spec: SceneSpec) -> Scene:
    lx, ly = spec.extent
    res = spec.resolution
    W = int(round(lx / res))
    H = int(round(ly / res))
    xs = (np.arange(W) + 0.5) * res
    ys = (np.arange(H) + 0.5) * res
    X, Y = np.meshgrid(xs, ys)
    g = ground_height(spec.ground, X, Y)

    rng = np.random.default_rng(spec.seed)
    veg = np.zeros((H, W))
    if spec.coverage > 0:
        field_ = gaussian_filter(rng.standard_normal((H, W)), spec.patch_scale / res, mode="wrap")
        ranks = np.empty(H * W)
        ranks[np.argsort(field_.ravel(), kind="stable")] = (np.arange(H * W) + 0.5) / (H * W)
        u = ranks.reshape(H, W)
        covered = u >= 1.0 - spec.coverage
        lo, hi = spec.veg_height
        frac = np.clip((u - (1.0 - spec.coverage)) / max(spec.coverage, 1e-12), 0, 1)
        jitter = spec.veg_roughness * rng.standard_normal((H, W))
        veg = np.where(covered, np.clip(lo + (hi - lo) * frac + jitter, lo, hi), 0.0)

    zeros = np.zeros((H, W))
    true_surface = SurfaceMap((0.0, 0.0), res, g, zeros, np.ones((H, W), dtype=bool))
    vegetation_top = SurfaceMap((0.0, 0.0), res, g + veg, zeros, np.ones((H, W), dtype=bool))
    scene = Scene(spec, true_surface, vegetation_top, veg, tuple(spec.obstacles))
    scene.frames = _frames(scene)
    return scene


def _polyline(waypoints):
    P = np.asarray(waypoints, dtype=float)
    seg = np.diff(P, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    return P, seg, seg_len, cum


def body_xy_yaw(waypoints, s):
    """Position and heading at arc length ``s`` along the waypoint polyline."""
    P, seg, seg_len, cum = _polyline(waypoints)
    s = np.clip(np.asarray(s, dtype=float), 0.0, cum[-1])
    k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    frac = (s - cum[k]) / seg_len[k]
    xy = P[k] + frac[..., None] * seg[k]
    yaw = np.arctan2(seg[k, 1], seg[k, 0])
    return xy, yaw


def path_duration(spec: SceneSpec) -> float:
    _, _, _, cum = _polyline(spec.waypoints)
    return float(cum[-1] / spec.gait.speed)


def body_pose_at(scene: Scene, t: float) -> Pose:
    spec = scene.spec
    xy, yaw = body_xy_yaw(spec.waypoints, spec.gait.speed * t)
    z = float(scene.ground(xy[0], xy[1])) + 0.5
    return Pose.from_euler([xy[0], xy[1], z], yaw=float(yaw), source="sensor", target="world")


def rig_poses(scene: Scene, body: Pose) -> tuple[Pose, Pose]:
    rig = scene.spec.rig
    yaw = body.yaw
    fwd = np.array([np.cos(yaw), np.sin(yaw)])
    cxy = body.translation[:2] + rig.camera_forward * fwd
    cz = float(scene.ground(body.translation[0], body.translation[1])) + rig.camera_height
    cam = camera_pose([cxy[0], cxy[1], cz], yaw=yaw, pitch=rig.camera_pitch)
    lidar = Pose.from_euler([cxy[0], cxy[1], cz + rig.lidar_up], yaw=yaw)
    return cam, lidar


def _frames(scene: Scene) -> list[Frame]:
    T = path_duration(scene.spec)
    out = []
    for t in np.arange(0.0, T + 1e-9, scene.spec.rig.frame_interval):
        body = body_pose_at(scene, float(t))
        cam, lidar = rig_poses(scene, body)
        out.append(Frame(float(t), body, cam, lidar))
    return out


# -- ray casting against the scene -------------------------------------------------

def ray_box(origins, dirs, box: Box, zrange) -> np.ndarray:
    """Entry distance of rays into an oriented box, NaN when missed."""
    O = np.broadcast_to(np.asarray(origins, dtype=float), np.shape(dirs))
    D = np.asarray(dirs, dtype=float)
    c, s = np.cos(box.yaw), np.sin(box.yaw)
    Rinv = np.array([[c, s, 0], [-s, c, 0], [0, 0, 1]])
    zlo, zhi = zrange
    center = np.array([box.center[0], box.center[1], 0.5 * (zlo + zhi)])
    half = np.array([box.size[0] / 2, box.size[1] / 2, 0.5 * (zhi - zlo)])
    o = (O - center) @ Rinv.T
    d = D @ Rinv.T
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        t1 = (-half - o) / d
        t2 = (half - o) / d
    par = d == 0
    inside = np.abs(o) <= half
    tmin = np.where(par, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
    tmax = np.where(par, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
    t_in = tmin.max(axis=1)
    t_out = tmax.min(axis=1)
    hit = (t_in <= t_out) & (t_out > 0)
    return np.where(hit, np.maximum(t_in, 0.0), np.nan)


def _first_box(scene: Scene, origins, dirs):
    n = len(dirs)
    t_best = np.full(n, np.nan)
    for b in scene.obstacles:
        tb = ray_box(origins, dirs, b, scene.box_z_range(b))
        better = np.isfinite(tb) & ~(tb >= t_best)
        t_best = np.where(better, tb, t_best)
    return t_best


def _refine_ground(scene: Scene, origins, dirs, t0) -> np.ndarray:
    """Newton-polish grid hits against the analytic ground."""
    O = np.broadcast_to(np.asarray(origins, dtype=float), np.shape(dirs))
    t = t0.copy()
    ok = np.isfinite(t)
    if not np.any(ok):
        return t
    o, d, tt = O[ok], dirs[ok], t[ok]
    for _ in range(12):
        p = o + tt[:, None] * d
        f = p[:, 2] - scene.ground(p[:, 0], p[:, 1])
        gx, gy = scene.ground_gradient(p[:, 0], p[:, 1])
        df = d[:, 2] - gx * d[:, 0] - gy * d[:, 1]
        step = np.where(np.abs(df) > 1e-9, f / np.where(np.abs(df) > 1e-9, df, 1.0), 0.0)
        step = np.clip(step, -scene.spec.resolution, scene.spec.resolution)
        tt = tt - step
    p = o + tt[:, None] * d
    resid = np.abs(p[:, 2] - scene.ground(p[:, 0], p[:, 1]))
    good = (resid < 1e-9) & (np.abs(tt - t[ok]) < 2 * scene.spec.resolution) & (tt > 0)
    t[np.flatnonzero(ok)[good]] = tt[good]
    return t


def trace_rays(scene: Scene, origins, dirs, max_range=None, penetrate=None):
    """First-surface distance and class for each ray.

    ``penetrate`` is a boolean per ray; penetrating rays ignore vegetation and
    return the ground behind it.
    """
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    n = len(dirs)
    t_veg, row, col = raycast_grid(origins, dirs, scene.vegetation_top, max_range)
    vegetated = np.zeros(n, dtype=bool)
    hit = np.isfinite(t_veg)
    vegetated[hit] = scene.vegetation_height[row[hit], col[hit]] > 0
    if penetrate is not None:
        vegetated &= ~np.asarray(penetrate, dtype=bool)

    t = np.where(vegetated, t_veg, np.nan)
    kind = np.where(vegetated, VEGETATION, SKY)
    need_ground = ~vegetated
    if np.any(need_ground):
        idx = np.flatnonzero(need_ground)
        O = np.broadcast_to(np.asarray(origins, dtype=float), dirs.shape)
        tg, _, _ = raycast_grid(O[idx], dirs[idx], scene.true_surface, max_range)
        tg = _refine_ground(scene, O[idx], dirs[idx], tg)
        t[idx] = tg
        kind[idx] = np.where(np.isfinite(tg), GROUND, SKY)

    if scene.obstacles:
        tb = _first_box(scene, origins, dirs)
        if max_range is not None:
            tb = np.where(tb <= max_range, tb, np.nan)
        closer = np.isfinite(tb) & ~(tb >= t)
        t = np.where(closer, tb, t)
        kind = np.where(closer, OBSTACLE, kind)
    return t, kind


@dataclass
class LidarScan:
    cloud: PointCloud
    kind: np.ndarray
    ray_index: np.ndarray


def simulate_lidar(scene: Scene, sensor_pose: Pose, ray_pattern: RayPattern | None = None,
                   scan_id: int = 0, noise_std: float | None = None) -> LidarScan:
    """World-frame point cloud of one scan with per-point surface class."""
    rig = scene.spec.rig
    pattern = ray_pattern or rig.ray_pattern()
    noise = rig.range_noise if noise_std is None else noise_std
    dirs = pattern.directions() @ sensor_pose.R.T
    n = len(dirs)
    ray_id = np.arange(n, dtype=np.uint64) + np.uint64(scan_id) * np.uint64(1 << 32)
    penetrate = hash_uniform(scene.spec.seed, 11, ray_id) < scene.spec.p_pen
    t, kind = trace_rays(scene, sensor_pose.translation, dirs, rig.max_range, penetrate)
    ok = np.isfinite(t) & (t > 0)
    t_noisy = t[ok] + noise * hash_normal(scene.spec.seed, 12, ray_id[ok])
    pts = sensor_pose.translation + t_noisy[:, None] * dirs[ok]
    return LidarScan(PointCloud(pts, "world"), kind[ok], np.flatnonzero(ok))


_COLORS = {
    GROUND: (0.46, 0.40, 0.33),
    VEGETATION: (0.24, 0.55, 0.18),
    OBSTACLE: (0.26, 0.26, 0.27),
    SKY: (0.62, 0.72, 0.90),
}


def simulate_camera(scene: Scene, cam_pose: Pose, intr: CameraIntrinsics, brightness: float = 1.0,
                    image_id: int = 0, texture: float = 0.03):
    """Render (rgb, true segmentation mask, per-pixel class).

    Vegetation renders green-dominant, ground gray-brown, obstacles dark gray.
    The mask marks ``SUPPORT`` where vegetation occludes the ground and
    ``RIGID`` elsewhere.
    """
    rays = intr.pixel_rays().reshape(-1, 3) @ cam_pose.R.T
    _, kind = trace_rays(scene, cam_pose.translation, rays, scene.spec.rig.max_range)
    n = len(rays)
    rgb = np.zeros((n, 3))
    for k, col in _COLORS.items():
        sel = kind == k
        rgb[sel] = col
    pix = np.arange(n, dtype=np.uint64) + np.uint64(image_id) * np.uint64(1 << 32)
    for ch in range(3):
        rgb[:, ch] += texture * hash_normal(scene.spec.seed, 20 + ch, pix)
    shade = 1.0 + 0.5 * texture * hash_normal(scene.spec.seed, 30, pix)
    rgb = np.clip(rgb * shade[:, None] * brightness, 0.0, 1.0)
    mask = np.where(kind == VEGETATION, SUPPORT, RIGID)
    m, w = intr.shape
    return rgb.reshape(m, w, 3), mask.reshape(m, w), kind.reshape(m, w)


# -- gait ---------------------------------------------------------------------------

@dataclass
class GaitResult:
    trajectories: list
    stance: list
    contacts: np.ndarray
    contact_times: np.ndarray


def simulate_gait(scene: Scene, waypoints=None, gait: GaitParams | None = None) -> GaitResult:
    """Trotting feet along the waypoint path with exact stance heights."""
    gait = gait or scene.spec.gait
    waypoints = scene.spec.waypoints if waypoints is None else waypoints
    _, _, _, cum = _polyline(waypoints)
    T = float(cum[-1] / gait.speed)
    t = np.arange(0.0, T, 1.0 / gait.rate)
    trajs, stances, contacts, ctimes = [], [], [], []
    for (ox, oy), phase, name in zip(gait.offsets, gait.phases, gait.names):
        k_first = int(np.floor(phase - 1))
        k_last = int(np.ceil(T / gait.cycle + phase)) + 1
        ks = np.arange(k_first, k_last + 1)
        starts = (ks - phase) * gait.cycle
        mid = starts + gait.stance / 2
        bxy, byaw = body_xy_yaw(waypoints, gait.speed * mid)
        cxy = bxy + np.stack([ox * np.cos(byaw) - oy * np.sin(byaw),
                              ox * np.sin(byaw) + oy * np.cos(byaw)], axis=1)
        cz = scene.ground(cxy[:, 0], cxy[:, 1])
        C = np.column_stack([cxy, cz])

        j = np.clip(np.searchsorted(starts, t, side="right") - 1, 0, len(starts) - 2)
        local = t - starts[j]
        in_stance = local < gait.stance
        s = np.clip((local - gait.stance) / gait.swing, 0.0, 1.0)
        blend = 0.5 * (1 - np.cos(np.pi * s))
        pos = C[j] + blend[:, None] * (C[j + 1] - C[j])
        pos[:, 2] += gait.clearance * np.sin(np.pi * s) ** 2
        pos[in_stance] = C[j[in_stance]]
        trajs.append(FootTrajectory(t, pos, name))
        stances.append(in_stance)
        used = (starts + gait.stance > 0) & (starts < T)
        contacts.append(C[used])
        ctimes.append(np.maximum(starts[used], 0.0))
    return GaitResult(trajs, stances, np.concatenate(contacts), np.concatenate(ctimes))


# -- config files -------------------------------------------------------------------

def _floats(s: str) -> list[float]:
    return [float(v) for v in s.replace(",", " ").split()]


def load_scene_spec(path) -> SceneSpec:
    """Read a SceneSpec from an INI-style ``key = value`` file."""
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise FileNotFoundError(path)
    spec = SceneSpec()
    kw = {}
    if cp.has_section("scene"):
        s = cp["scene"]
        if "seed" in s:
            kw["seed"] = s.getint("seed")
        if "extent" in s:
            kw["extent"] = tuple(_floats(s["extent"]))
        if "resolution" in s:
            kw["resolution"] = s.getfloat("resolution")
    if cp.has_section("ground"):
        g = cp["ground"]
        amps = _floats(g.get("amplitudes", ""))
        n = len(amps)
        freqs = _floats(g.get("frequencies", "")) or [0.1] * n
        dirs = _floats(g.get("directions", "")) or [0.0] * n
        phases = _floats(g.get("phases", "")) or [0.0] * n
        kw["ground"] = tuple(Sinusoid(a, f, d, p) for a, f, d, p in zip(amps, freqs, dirs, phases))
    if cp.has_section("vegetation"):
        v = cp["vegetation"]
        for key, name in (("coverage", "coverage"), ("p_pen", "p_pen"),
                          ("patch_scale", "patch_scale"), ("roughness", "veg_roughness")):
            if key in v:
                kw[name] = v.getfloat(key)
        if "height" in v:
            kw["veg_height"] = tuple(_floats(v["height"]))
    if cp.has_section("obstacles"):
        boxes = []
        for _, val in cp["obstacles"].items():
            x, y, yaw, lx, ly, lz = _floats(val)
            boxes.append(Box((x, y), (lx, ly, lz), yaw))
        kw["obstacles"] = tuple(boxes)
    if cp.has_section("trajectory"):
        tr = cp["trajectory"]
        if "waypoints" in tr:
            kw["waypoints"] = tuple(tuple(_floats(p)) for p in tr["waypoints"].split(";") if p.strip())
    if cp.has_section("gait"):
        g = cp["gait"]
        gk = {k: g.getfloat(k) for k in ("stance", "swing", "step_length", "clearance", "rate") if k in g}
        kw["gait"] = replace(spec.gait, **gk)
    if cp.has_section("sensors"):
        r = cp["sensors"]
        rk = {}
        for k in ("camera_height", "camera_forward", "lidar_up", "focal", "frame_interval",
                  "azimuth_step", "azimuth_span", "range_noise", "max_range"):
            if k in r:
                rk[k] = r.getfloat(k)
        if "camera_pitch_deg" in r:
            rk["camera_pitch"] = np.deg2rad(r.getfloat("camera_pitch_deg"))
        for k in ("width", "height"):
            if k in r:
                rk[k] = r.getint(k)
        if "elevations" in r:
            rk["elevations"] = tuple(_floats(r["elevations"]))
        kw["rig"] = replace(spec.rig, **rk)
    return replace(spec, **kw)


def _fr(v) -> str:
    return repr(float(v))


def dump_scene_spec(spec: SceneSpec, path) -> None:
    cp = configparser.ConfigParser()
    cp["scene"] = {"seed": str(spec.seed), "extent": " ".join(map(_fr, spec.extent)),
                   "resolution": _fr(spec.resolution)}
    cp["ground"] = {
        "amplitudes": " ".join(_fr(w.amplitude) for w in spec.ground),
        "frequencies": " ".join(_fr(w.frequency) for w in spec.ground),
        "directions": " ".join(_fr(w.direction) for w in spec.ground),
        "phases": " ".join(_fr(w.phase) for w in spec.ground),
    }
    cp["vegetation"] = {"coverage": _fr(spec.coverage), "p_pen": _fr(spec.p_pen),
                        "height": " ".join(map(_fr, spec.veg_height)),
                        "patch_scale": _fr(spec.patch_scale), "roughness": _fr(spec.veg_roughness)}
    cp["obstacles"] = {f"box{i}": " ".join(map(_fr, (b.center[0], b.center[1], b.yaw, *b.size)))
                       for i, b in enumerate(spec.obstacles)}
    cp["trajectory"] = {"waypoints": "; ".join(f"{_fr(x)} {_fr(y)}" for x, y in spec.waypoints)}
    g = spec.gait
    cp["gait"] = {"stance": _fr(g.stance), "swing": _fr(g.swing), "step_length": _fr(g.step_length),
                  "clearance": _fr(g.clearance), "rate": _fr(g.rate)}
    r = spec.rig
    cp["sensors"] = {
        "camera_height": _fr(r.camera_height), "camera_forward": _fr(r.camera_forward),
        "camera_pitch_deg": _fr(float(np.rad2deg(r.camera_pitch))), "lidar_up": _fr(r.lidar_up),
        "width": str(r.width), "height": str(r.height), "focal": _fr(r.focal),
        "frame_interval": _fr(r.frame_interval), "azimuth_step": _fr(r.azimuth_step),
        "azimuth_span": _fr(r.azimuth_span), "range_noise": _fr(r.range_noise),
        "max_range": _fr(r.max_range), "elevations": " ".join(_fr(float(e)) for e in r.elevations),
    }
    with open(Path(path), "w") as f:
        cp.write(f)
