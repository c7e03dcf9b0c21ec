from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spfilter.geometry import Pose, camera_pose
from spfilter.synthetic import (
    GROUND,
    OBSTACLE,
    RIGID,
    SKY,
    SUPPORT,
    VEGETATION,
    Box,
    RayPattern,
    SceneSpec,
    Sinusoid,
    dump_scene_spec,
    generate_scene,
    hash_uniform,
    load_scene_spec,
    ray_box,
    simulate_camera,
    simulate_gait,
    simulate_lidar,
    trace_rays,
)

SMALL = dict(extent=(8.0, 4.0), resolution=0.05, waypoints=((1.0, 2.0), (7.0, 2.0)))


def small_scene(**kw):
    return generate_scene(SceneSpec(**{**SMALL, **kw}))


def down_pattern():
    return RayPattern(np.deg2rad(np.arange(-60.0, 61.0, 5.0)), np.deg2rad(np.linspace(-20, -70, 8)))


def test_zero_amplitudes_give_flat_ground():
    scene = small_scene(ground=(Sinusoid(0.0, 0.2),), coverage=0.0)
    assert np.all(scene.true_surface.height == 0.0)
    assert np.all(scene.ground(np.array([0.3, 5.0]), np.array([1.0, 3.9])) == 0.0)


def test_same_seed_same_scene():
    a = small_scene(seed=7)
    b = small_scene(seed=7)
    assert a.vegetation_top.height.tobytes() == b.vegetation_top.height.tobytes()
    assert a.true_surface.height.tobytes() == b.true_surface.height.tobytes()
    c = small_scene(seed=8)
    assert not np.array_equal(a.vegetation_height, c.vegetation_height)


def test_zero_coverage_means_no_vegetation():
    scene = small_scene(coverage=0.0)
    assert np.array_equal(scene.vegetation_top.height, scene.true_surface.height)


@pytest.mark.parametrize("coverage", [0.2, 0.55, 0.9])
def test_vegetation_sits_on_ground(coverage):
    scene = small_scene(coverage=coverage)
    assert np.all(scene.vegetation_top.height >= scene.true_surface.height)
    frac = np.mean(scene.vegetation_height > 0)
    assert frac == pytest.approx(coverage, abs=0.01)
    lo, hi = scene.spec.veg_height
    h = scene.vegetation_height[scene.vegetation_height > 0]
    assert h.min() >= lo and h.max() <= hi


def test_spec_validation():
    with pytest.raises(ValueError, match="p_pen"):
        SceneSpec(p_pen=1.5)
    with pytest.raises(ValueError, match="coverage"):
        SceneSpec(coverage=-0.1)
    with pytest.raises(ValueError, match="obstacle"):
        SceneSpec(obstacles=(Box((50.0, 1.0), (1, 1, 1)),))
    with pytest.raises(ValueError, match="waypoint"):
        SceneSpec(waypoints=((0.0, 0.0), (30.0, 1.0)))


def test_hash_uniform_is_counter_based():
    idx = np.arange(1000, dtype=np.uint64)
    u = hash_uniform(3, 1, idx)
    assert np.all((u > 0) & (u < 1))
    assert np.array_equal(u[500:], hash_uniform(3, 1, idx[500:]))
    assert abs(u.mean() - 0.5) < 0.05


def lidar_pose(scene, x=4.0, y=2.0, h=0.7):
    return Pose.from_euler([x, y, float(scene.ground(x, y)) + h])


def test_full_penetration_returns_ground():
    scene = small_scene(coverage=0.9, p_pen=1.0)
    scan = simulate_lidar(scene, lidar_pose(scene), down_pattern(), noise_std=0.0)
    assert len(scan.cloud) > 100
    assert np.all(scan.kind == GROUND)
    p = scan.cloud.points
    np.testing.assert_allclose(p[:, 2], scene.ground(p[:, 0], p[:, 1]), atol=1e-8)


def test_no_penetration_returns_vegetation():
    scene = small_scene(coverage=1.0, p_pen=0.0, ground=())
    scan = simulate_lidar(scene, lidar_pose(scene, h=1.0), down_pattern(), noise_std=0.0)
    assert np.all(scan.kind == VEGETATION)
    p = scan.cloud.points
    top = scene.vegetation_top.height
    res = scene.spec.resolution
    col = np.clip(np.floor(p[:, 0] / res).astype(int), 0, top.shape[1] - 1)
    row = np.clip(np.floor(p[:, 1] / res).astype(int), 0, top.shape[0] - 1)
    # a hit on a cell wall can sit below that cell's top by at most the step
    # between the cell and its neighbours
    step = max(np.abs(np.diff(top, axis=0)).max(), np.abs(np.diff(top, axis=1)).max())
    dz = p[:, 2] - top[row, col]
    assert np.all(np.abs(dz) <= step + 1e-9)
    assert np.all(p[:, 2] >= scene.ground(p[:, 0], p[:, 1]) + scene.spec.veg_height[0] - 1e-9)


def test_lidar_noise_stays_bounded():
    scene = small_scene(p_pen=1.0)
    sigma = scene.spec.rig.range_noise
    scan = simulate_lidar(scene, lidar_pose(scene), down_pattern())
    p = scan.cloud.points
    assert np.all(p[:, 2] - scene.ground(p[:, 0], p[:, 1]) >= -3 * sigma - 1e-9)


def test_lidar_is_deterministic():
    scene = small_scene()
    a = simulate_lidar(scene, lidar_pose(scene), down_pattern(), scan_id=4)
    b = simulate_lidar(scene, lidar_pose(scene), down_pattern(), scan_id=4)
    assert a.cloud.points.tobytes() == b.cloud.points.tobytes()
    c = simulate_lidar(scene, lidar_pose(scene), down_pattern(), scan_id=5)
    assert not np.array_equal(a.cloud.points, c.cloud.points)


@pytest.mark.parametrize("p_pen", [0.0, 1.0])
def test_box_occludes_vegetation(p_pen):
    box = Box((5.0, 2.0), (0.4, 1.0, 0.8))
    scene = small_scene(coverage=1.0, p_pen=p_pen, obstacles=(box,), ground=())
    origin = np.array([3.0, 2.0, 0.5])
    dirs = np.array([[1.0, 0.0, 0.0], [1.0, 0.1, -0.05]])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    t, kind = trace_rays(scene, origin, dirs, 12.0, np.full(2, bool(p_pen)))
    assert np.all(kind == OBSTACLE)
    # analytic entry through the x = 4.8 face
    np.testing.assert_allclose(t, 1.8 / dirs[:, 0], atol=1e-12)


def test_ray_box_misses_and_inside():
    box = Box((0.0, 0.0), (2.0, 2.0, 2.0))
    o = np.array([[5.0, 0.0, 1.0], [0.0, 0.0, 1.0], [5.0, 5.0, 1.0]])
    d = np.array([[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
    t = ray_box(o, d, box, (0.0, 2.0))
    assert t[0] == pytest.approx(4.0)
    assert t[1] == 0.0
    assert np.isnan(t[2])


@given(st.floats(-np.pi, np.pi))
def test_ray_box_yaw_equivariant(yaw):
    box = Box((0.0, 0.0), (1.0, 0.6, 1.0), yaw)
    c, s = np.cos(yaw), np.sin(yaw)
    o = np.array([[3 * c, 3 * s, 0.5]])
    d = -o.copy()
    d[0, 2] = 0.0
    d /= np.linalg.norm(d)
    assert ray_box(o, d, box, (0.0, 1.0))[0] == pytest.approx(2.5, abs=1e-12)


def camera_at(scene, x=3.0, y=2.0):
    z = float(scene.ground(x, y)) + scene.spec.rig.camera_height
    return camera_pose([x, y, z], yaw=0.0, pitch=scene.spec.rig.camera_pitch)


def test_mask_all_rigid_without_vegetation():
    scene = small_scene(coverage=0.0)
    _, mask, kind = simulate_camera(scene, camera_at(scene), scene.spec.rig.intrinsics)
    assert np.all(mask == RIGID)
    assert not np.any(kind == VEGETATION)


def test_mask_all_support_when_fully_vegetated():
    scene = small_scene(coverage=1.0, ground=())
    _, mask, kind = simulate_camera(scene, camera_at(scene), scene.spec.rig.intrinsics)
    seen = kind != SKY
    assert seen.sum() > 0.5 * mask.size
    assert np.all(mask[seen] == SUPPORT)
    assert np.all(mask[~seen] == RIGID)


def marched_kind(scene, origin, dirs, max_range, step=0.002):
    """Reference classification by stepping each ray through the height grid."""
    top = scene.vegetation_top.height
    veg = scene.vegetation_height
    res = scene.spec.resolution
    H, W = top.shape
    kind = np.full(len(dirs), SKY)
    alive = np.ones(len(dirs), dtype=bool)
    for t in np.arange(step, max_range, step):
        p = origin + t * dirs[alive]
        col = np.floor(p[:, 0] / res).astype(int)
        row = np.floor(p[:, 1] / res).astype(int)
        inside = (col >= 0) & (col < W) & (row >= 0) & (row < H)
        idx = np.flatnonzero(alive)
        gone = ~inside
        under = np.zeros(len(p), dtype=bool)
        under[inside] = p[inside, 2] <= top[row[inside], col[inside]]
        hit_veg = np.zeros(len(p), dtype=bool)
        hit_veg[under] = veg[row[under], col[under]] > 0
        kind[idx[under]] = np.where(hit_veg[under], VEGETATION, GROUND)
        alive[idx[under | gone]] = False
        if not alive.any():
            break
    return kind


def test_mask_agrees_with_marched_rays():
    scene = small_scene(coverage=0.5, seed=2)
    pose = camera_at(scene)
    intr = scene.spec.rig.intrinsics
    _, mask, _ = simulate_camera(scene, pose, intr)
    rays = intr.pixel_rays().reshape(-1, 3) @ pose.R.T
    ref = marched_kind(scene, pose.translation, rays, scene.spec.rig.max_range)
    ref_mask = np.where(ref == VEGETATION, SUPPORT, RIGID).reshape(mask.shape)
    # the marching reference resolves grazing wall hits only to its step size
    assert np.mean(ref_mask == mask) >= 0.995
    assert 0.05 < np.mean(mask == SUPPORT) < 0.95


def test_brightness_scales_colour_not_mask():
    scene = small_scene(coverage=0.5)
    pose = camera_at(scene)
    intr = scene.spec.rig.intrinsics
    rgb1, m1, _ = simulate_camera(scene, pose, intr)
    rgb2, m2, _ = simulate_camera(scene, pose, intr, brightness=0.5)
    assert np.array_equal(m1, m2)
    np.testing.assert_allclose(rgb2, np.clip(rgb1, 0, 2) * 0.5, atol=1e-12)


def test_vegetation_renders_green_dominant():
    scene = small_scene(coverage=0.5)
    rgb, mask, _ = simulate_camera(scene, camera_at(scene), scene.spec.rig.intrinsics)
    g = rgb[mask == SUPPORT]
    assert np.mean(g[:, 1] > np.maximum(g[:, 0], g[:, 2])) > 0.99


def test_stance_heights_equal_ground():
    scene = small_scene()
    gait = simulate_gait(scene)
    c = gait.contacts
    assert np.array_equal(c[:, 2], scene.ground(c[:, 0], c[:, 1]))
    for traj, stance in zip(gait.trajectories, gait.stance):
        p = traj.positions[stance]
        assert np.array_equal(p[:, 2], scene.ground(p[:, 0], p[:, 1]))
        swing = traj.positions[~stance]
        assert swing[:, 2].max() > scene.ground(swing[:, 0], swing[:, 1]).max()


def test_gait_is_deterministic():
    scene = small_scene()
    a = simulate_gait(scene)
    b = simulate_gait(scene)
    assert a.contacts.tobytes() == b.contacts.tobytes()


def test_frames_follow_path():
    scene = small_scene()
    xs = [f.body.translation[0] for f in scene.frames]
    assert xs[0] == pytest.approx(1.0)
    assert np.all(np.diff(xs) > 0)
    cam = scene.frames[0].camera
    assert cam.translation[2] == pytest.approx(float(scene.ground(1.0, 2.0)) + 0.6)


def test_scene_spec_round_trip(tmp_path):
    spec = SceneSpec(seed=5, coverage=0.3, p_pen=0.25, obstacles=(Box((9.0, 5.1), (4.0, 0.1, 0.8), 0.2),),
                     waypoints=((2.0, 4.0), (10.0, 4.5), (18.0, 4.0)))
    path = tmp_path / "scene.ini"
    dump_scene_spec(spec, path)
    back = load_scene_spec(path)
    assert back == spec


def test_load_missing_spec(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_scene_spec(tmp_path / "nope.ini")
