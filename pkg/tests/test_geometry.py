"""Geometry tests against hand-computed depth-buffer and contact oracles.

The reference rasterizer below re-derives the expected height map for a
single triangle with plain barycentric tests, independent of the package's
implementation.  Sphere presses are checked against the closed form for the
contact radius: pressing a ball of radius R down by d cuts a circle of
radius sqrt(2*R*d - d^2) into a flat surface.
"""

import numpy as np
import pytest

from gelsim import (
    ConfigError,
    InputRangeError,
    Pose,
    SensorConfig,
    TriangleMesh,
    compute_normals,
    dome_height_map,
    rasterize_press,
    smooth_pyramid,
)
from gelsim.geometry import _raster_tris_numpy
from gelsim.synth import make_sphere_mesh


def _oracle_triangle_zbuf(config, v0, v1, v2):
    """Minimal reference rasterizer: one triangle, top-down barycentric."""
    zbuf = np.full((config.height_px, config.width_px), np.inf)
    xx, yy = config.frame_mm()
    ax, ay = v1[0] - v0[0], v1[1] - v0[1]
    bx, by = v2[0] - v0[0], v2[1] - v0[1]
    den = ax * by - bx * ay
    if den == 0.0:
        return zbuf
    px, py = xx - v0[0], yy - v0[1]
    w1 = (px * by - bx * py) / den
    w2 = (ax * py - px * ay) / den
    w0 = 1.0 - w1 - w2
    inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
    z = w0 * v0[2] + w1 * v1[2] + w2 * v2[2]
    zbuf[inside] = z[inside]
    return zbuf


def _press_expected(zbuf, gel, depth):
    """Auto-touch then lower: the oracle version of the press arithmetic."""
    covered = np.isfinite(zbuf)
    shift = np.min(zbuf[covered] - gel[covered])
    obj = zbuf - (shift + depth)
    mask = obj < gel
    return np.where(mask, obj, gel), mask


def test_single_triangle_press_matches_reference_rasterizer(cfg):
    v0 = np.array([-1.5, -1.0, 5.0])
    v1 = np.array([1.8, -0.7, 5.4])
    v2 = np.array([0.1, 1.6, 5.9])
    mesh = TriangleMesh(np.stack([v0, v1, v2]), [[0, 1, 2]])
    height, mask = rasterize_press(mesh, Pose(), 0.3, cfg)
    zbuf = _oracle_triangle_zbuf(cfg, v0, v1, v2)
    expected, expected_mask = _press_expected(zbuf, cfg.gel_map, 0.3)
    assert np.array_equal(mask, expected_mask)
    assert np.allclose(height, expected, atol=1e-12)
    assert mask.any() and not mask.all()


def test_numba_and_numpy_rasterizers_agree(cfg, rng):
    mesh = make_sphere_mesh(2.0, n_theta=24, n_phi=48)
    pose = Pose.from_axis_angle([0.3, 1.0, 0.2], 0.7, translation=(0.4, -0.3, 0.0))
    verts = pose.apply(mesh.vertices)
    xx, yy = cfg.frame_mm()
    x0, y0 = xx[0, 0], yy[0, 0]
    pitch = cfg.pixel_pitch_mm
    vx = (verts[:, 0] - x0) / pitch
    vy = (verts[:, 1] - y0) / pitch
    vz = np.ascontiguousarray(verts[:, 2])
    vx, vy = np.ascontiguousarray(vx), np.ascontiguousarray(vy)
    from gelsim.geometry import _rasterize

    zbuf_a = _rasterize(vx, vy, vz, mesh.faces, cfg.height_px, cfg.width_px)
    zbuf_b = np.full((cfg.height_px, cfg.width_px), np.inf)
    _raster_tris_numpy(vx, vy, vz, mesh.faces, zbuf_b)
    assert np.array_equal(zbuf_a, zbuf_b)


def test_sphere_press_contact_radius_matches_closed_form():
    config = SensorConfig(width_px=320, height_px=320, pixel_pitch_mm=0.02)
    radius, depth = 2.0, 0.5
    mesh = make_sphere_mesh(radius, n_theta=96, n_phi=192)
    _, mask = rasterize_press(mesh, Pose(), depth, config)
    measured_mm = np.sqrt(mask.sum() / np.pi) * config.pixel_pitch_mm
    expected_mm = np.sqrt(2.0 * radius * depth - depth * depth)
    assert abs(measured_mm - expected_mm) < 0.02


def test_press_depth_is_measured_from_first_touch(cfg):
    # The same mesh shifted vertically must produce the identical press.
    mesh = make_sphere_mesh(1.5, n_theta=32, n_phi=64)
    h_near, m_near = rasterize_press(mesh, Pose(translation=[0, 0, 2.0]), 0.4, cfg)
    h_far, m_far = rasterize_press(mesh, Pose(translation=[0, 0, 9.0]), 0.4, cfg)
    assert np.array_equal(m_near, m_far)
    assert np.allclose(h_near, h_far, atol=1e-9)


def test_zero_depth_press_touches_but_does_not_indent(cfg):
    mesh = make_sphere_mesh(1.5, n_theta=32, n_phi=64)
    height, mask = rasterize_press(mesh, Pose(), 0.0, cfg)
    assert not mask.any()
    assert np.array_equal(height, cfg.gel_map)


def test_deeper_press_grows_the_contact(cfg):
    mesh = make_sphere_mesh(1.5, n_theta=32, n_phi=64)
    _, shallow = rasterize_press(mesh, Pose(), 0.2, cfg)
    _, deep = rasterize_press(mesh, Pose(), 0.6, cfg)
    assert deep.sum() > shallow.sum()
    assert np.all(deep[shallow])  # nested contacts


def test_press_depth_range_is_enforced(cfg):
    mesh = make_sphere_mesh(1.5, n_theta=16, n_phi=32)
    with pytest.raises(InputRangeError):
        rasterize_press(mesh, Pose(), -0.1, cfg)
    with pytest.raises(InputRangeError):
        rasterize_press(mesh, Pose(), cfg.max_indent_mm + 0.1, cfg)


def test_empty_mesh_is_rejected(cfg):
    mesh = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    with pytest.raises(ConfigError):
        rasterize_press(mesh, Pose(), 0.2, cfg)


def test_mesh_missing_the_sensor_yields_no_contact(cfg):
    mesh = make_sphere_mesh(0.5, n_theta=16, n_phi=32, center=(50.0, 0.0, 0.0))
    height, mask = rasterize_press(mesh, Pose(), 0.2, cfg)
    assert not mask.any()
    assert np.array_equal(height, cfg.gel_map)


def test_pose_validation():
    with pytest.raises(ConfigError):
        Pose(rotation=np.eye(3) * 2.0)
    with pytest.raises(ConfigError):
        Pose(rotation=np.diag([1.0, 1.0, -1.0]))  # determinant -1
    with pytest.raises(ConfigError):
        Pose.from_axis_angle([0, 0, 0], 1.0)
    pose = Pose.from_axis_angle([0, 0, 1], np.pi / 2.0)
    moved = pose.apply(np.array([[1.0, 0.0, 0.0]]))
    assert np.allclose(moved, [[0.0, 1.0, 0.0]], atol=1e-12)


def test_smoothing_keeps_contact_pixels_bit_identical(cfg, rng):
    mesh = make_sphere_mesh(1.5, n_theta=32, n_phi=64)
    height, mask = rasterize_press(mesh, Pose(), 0.5, cfg)
    smoothed = smooth_pyramid(height, mask)
    assert np.array_equal(smoothed[mask], height[mask])
    assert not np.array_equal(smoothed[~mask], height[~mask])
    # the relaxed surround must stay between the pressed minimum and the gel
    assert smoothed.min() >= height.min() - 1e-12
    assert smoothed.max() <= height.max() + 1e-12


def test_smoothing_schedule_validation(cfg):
    height = cfg.gel_map.copy()
    mask = np.zeros_like(height, dtype=bool)
    with pytest.raises(ConfigError):
        smooth_pyramid(height, mask, schedule=[10])  # even size
    with pytest.raises(ConfigError):
        smooth_pyramid(height, mask, schedule=[5, 11])  # not decreasing
    out = smooth_pyramid(height, mask, schedule=[11, 5])
    assert out.shape == height.shape


def test_normals_unit_length_and_oriented_toward_camera(cfg, rng):
    height = rng.normal(0.0, 0.05, size=(cfg.height_px, cfg.width_px))
    normals = compute_normals(height, cfg.pixel_pitch_mm)
    norms = np.linalg.norm(normals, axis=2)
    assert np.allclose(norms, 1.0, atol=1e-12)
    assert np.all(normals[:, :, 2] > 0)


def test_normals_of_a_plane_match_the_analytic_slope(cfg):
    # height = a*x + b*y has the constant normal ~ (-a, -b, 1) normalized.
    a, b = 0.25, -0.4
    xx, yy = cfg.frame_mm()
    normals = compute_normals(a * xx + b * yy, cfg.pixel_pitch_mm)
    expected = np.array([-a, -b, 1.0])
    expected /= np.linalg.norm(expected)
    assert np.allclose(normals[1:-1, 1:-1], expected, atol=1e-9)


def test_flat_height_map_gives_straight_up_normals(cfg):
    normals = compute_normals(np.zeros((cfg.height_px, cfg.width_px)), cfg.pixel_pitch_mm)
    assert np.array_equal(normals[:, :, 0], np.zeros_like(normals[:, :, 0]))
    assert np.array_equal(normals[:, :, 1], np.zeros_like(normals[:, :, 1]))
    assert np.allclose(normals[:, :, 2], 1.0)


def test_dome_height_map_apex_and_validation(cfg):
    dome = dome_height_map(cfg.width_px, cfg.height_px, cfg.pixel_pitch_mm, 30.0)
    assert dome.shape == (cfg.height_px, cfg.width_px)
    assert dome.min() == 0.0
    center = dome[cfg.height_px // 2, cfg.width_px // 2]
    assert center == dome.max()
    with pytest.raises(ConfigError):
        dome_height_map(cfg.width_px, cfg.height_px, cfg.pixel_pitch_mm, 0.5)


def test_press_into_a_curved_gel_map():
    dome = dome_height_map(160, 120, 0.03, 30.0)
    config = SensorConfig(160, 120, 0.03, gel_map=dome)
    mesh = make_sphere_mesh(1.5, n_theta=32, n_phi=64)
    height, mask = rasterize_press(mesh, Pose(), 0.3, config)
    assert mask.any()
    assert np.all(height[mask] < dome[mask])
    assert np.array_equal(height[~mask], dome[~mask])


def test_sensor_config_validation():
    with pytest.raises(ConfigError):
        SensorConfig(0, 10, 0.03)
    with pytest.raises(ConfigError):
        SensorConfig(10, 10, -0.03)
    with pytest.raises(ConfigError):
        SensorConfig(10, 10, 0.03, max_indent_mm=0.0)
    with pytest.raises(ConfigError):
        SensorConfig(10, 10, 0.03, gel_map=np.zeros((5, 5)))


def test_mesh_validation():
    with pytest.raises(ConfigError):
        TriangleMesh(np.zeros((3, 2)), [[0, 1, 2]])
    with pytest.raises(ConfigError):
        TriangleMesh(np.zeros((3, 3)), [[0, 1, 5]])
    with pytest.raises(ConfigError):
        TriangleMesh(np.array([[0.0, 0.0, np.nan]]), np.zeros((0, 3), dtype=np.int64))
