"""
Tests for pinhole cameras, ray generation, plane-sweep warping and tracks.
"""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from app.core.errors import CameraError, SceneError, ShapeError
from app.geometry.camera import Camera, back_project, generate_rays, look_at, pixel_grid, project
from app.geometry.tracks import TrackSet
from app.geometry.warp import homography_warp, warp_coordinates
from app.tensor.array import DenseArray
from tests.conftest import make_camera


# ==================== CAMERA TESTS ====================

def test_camera_validation():
    """Test malformed intrinsics and extrinsics are rejected."""
    with pytest.raises(CameraError, match="focal"):
        Camera(np.diag([-1.0, 1.0, 1.0]), np.eye(4), 1.0, 2.0, 8, 8)
    skewed = np.eye(4)
    skewed[0, 1] = 0.5
    with pytest.raises(CameraError, match="orthonormal"):
        Camera(np.eye(3), skewed, 1.0, 2.0, 8, 8)
    with pytest.raises(CameraError, match="depth"):
        Camera(np.eye(3), np.eye(4), 2.0, 1.0, 8, 8)


def test_look_at_parallel_up_fails():
    """Test an up vector along the viewing direction is refused."""
    with pytest.raises(CameraError, match="parallel"):
        look_at((0, 0, -4), (0, 0, 0), (0, 0, 1), np.eye(3), 8, 8, 1.0, 5.0)


def test_scaled_camera_halves_intrinsics(camera):
    """Test scaling rows of K and image size for a stride-2 map."""
    half = camera.scaled(0.5)
    np.testing.assert_allclose(half.K[:2], camera.K[:2] * 0.5)
    assert (half.width, half.height) == (round(camera.width * 0.5), round(camera.height * 0.5))
    np.testing.assert_allclose(half.center, camera.center)


# ==================== PROJECTION TESTS ====================

def test_axis_point_projects_to_principal_point(camera):
    """Test a point on the optical axis lands on the principal point at its depth."""
    pixels, depth, valid = project(camera, np.array([[0.0, 0.0, 1.5]]))
    np.testing.assert_allclose(pixels[0], camera.K[:2, 2], atol=1e-12)
    assert depth[0] == pytest.approx(5.5)
    assert valid[0]


def test_camera_center_is_invalid(camera):
    """Test the camera center has zero depth and is masked."""
    _, depth, valid = project(camera, camera.center[None])
    assert depth[0] == pytest.approx(0.0, abs=1e-12)
    assert not valid[0]


def test_project_back_project_round_trip(camera, rng):
    """Test back-projecting at the returned depth recovers the point."""
    points = rng.uniform(-1.0, 1.0, size=(50, 3))
    pixels, depth, _ = project(camera, points)
    recovered = back_project(camera, pixels, depth)
    np.testing.assert_allclose(recovered, points, atol=1e-6)


def test_pixels_outside_image_are_invalid(camera):
    """Test points projecting past the border are masked."""
    _, _, valid = project(camera, np.array([[10.0, 0.0, 0.0], [0.0, 0.0, 0.0]]))
    assert valid.tolist() == [False, True]


# ==================== RAY TESTS ====================

def test_principal_ray_is_optical_axis(camera):
    """Test the principal-point ray points along the optical axis."""
    rays = generate_rays(camera, camera.K[:2, 2][None])
    np.testing.assert_allclose(rays.directions[0], camera.optical_axis, atol=1e-12)
    assert rays.near[0] == pytest.approx(camera.depth_min)
    assert rays.far[0] == pytest.approx(camera.depth_max)


def test_rays_reproject_to_their_pixel(rng):
    """Test any point along a pixel's ray projects back onto that pixel."""
    cam = look_at((3.0, -1.0, -3.0), (0.0, 0.2, 0.0), (0.0, -1.0, 0.0),
                  np.array([[40.0, 0, 20.0], [0, 42.0, 15.0], [0, 0, 1]]), 41, 31, 1.0, 8.0)
    pixels = rng.uniform(0, 30, size=(20, 2))
    rays = generate_rays(cam, pixels)
    t = rng.uniform(rays.near, rays.far)
    points = rays.origins + t[:, None] * rays.directions
    projected, depth, _ = project(cam, points)
    np.testing.assert_allclose(projected, pixels, atol=1e-5)
    np.testing.assert_allclose(rays.t_to_depth(cam, t), depth, atol=1e-9)


def test_distinct_pixels_give_distinct_directions(camera):
    """Test two pixels never share a ray direction."""
    rays = generate_rays(camera, np.array([[3.0, 4.0], [20.0, 9.0]]))
    assert np.linalg.norm(np.cross(rays.directions[0], rays.directions[1])) > 1e-3


def test_pixel_grid_is_row_major():
    """Test pixel centers enumerate rows first."""
    grid = pixel_grid(3, 2)
    assert grid.tolist() == [[0, 0], [1, 0], [2, 0], [0, 1], [1, 1], [2, 1]]


# ==================== WARP TESTS ====================

def test_identity_warp(double, rng):
    """Test warping a view onto itself returns its features."""
    cam = make_camera(width=9, height=7, f=8.0)
    feat = rng.normal(size=(2, 7, 9))
    hyps = np.full((3, 7, 9), 4.0) + np.arange(3)[:, None, None]
    warped, valid = homography_warp(DenseArray(feat), cam, cam, hyps)
    assert warped.shape == (3, 2, 7, 9)
    for d in range(3):
        np.testing.assert_allclose(warped.numpy()[d], feat, atol=1e-9)
    assert valid.all()


def test_rectified_pair_disparity():
    """Test a fronto-parallel plane shifts by f*b/d between rectified cameras."""
    f, b, d = 20.0, 0.5, 5.0
    ref = make_camera(eye=(0.0, 0.0, -4.0), target=(0.0, 0.0, 0.0), f=f, width=21, height=21)
    src = make_camera(eye=(b, 0.0, -4.0), target=(b, 0.0, 0.0), f=f, width=21, height=21)
    coords, in_front = warp_coordinates(src, ref, np.full((1, 21, 21), d))
    ref_pixels = pixel_grid(21, 21).reshape(21, 21, 2)
    np.testing.assert_allclose(ref_pixels[..., 0] - coords[0, ..., 0], f * b / d, atol=1e-9)
    np.testing.assert_allclose(coords[0, ..., 1], ref_pixels[..., 1], atol=1e-9)
    assert in_front.all()


def _plane_image(cam: Camera, plane_depth: float) -> np.ndarray:
    """Smooth texture on the plane z = 0 seen by a camera looking along +z from depth `plane_depth`."""
    pixels = pixel_grid(cam.width, cam.height)
    world = back_project(cam, pixels, np.full(len(pixels), plane_depth))
    texture = np.sin(1.5 * world[:, 0]) + np.cos(world[:, 1])
    return texture.reshape(1, cam.height, cam.width)


def test_warp_at_true_depth_reproduces_reference(double):
    """Test warping a textured plane at its true depth matches the reference image."""
    ref = make_camera(eye=(0.0, 0.0, -4.0), target=(0.0, 0.0, 0.0))
    src = make_camera(eye=(0.5, 0.0, -4.0), target=(0.5, 0.0, 0.0))
    ref_image = _plane_image(ref, 4.0)
    src_feat = DenseArray(_plane_image(src, 4.0))

    def mae(depth):
        warped, valid = homography_warp(src_feat, src, ref, np.full((1, ref.height, ref.width), depth))
        return np.abs(warped.numpy()[0, 0] - ref_image[0])[valid[0]].mean()

    assert mae(4.0) < 0.01
    assert mae(3.0) > 0.05


def test_warp_is_equivariant_under_rigid_motion(double, rng):
    """Test moving both cameras by one rigid transform leaves the warp coordinates unchanged."""
    ref = make_camera(eye=(0.0, 0.0, -4.0), width=13, height=11, f=12.0)
    src = make_camera(eye=(0.7, 0.2, -3.8), width=13, height=11, f=12.0)
    motion = np.eye(4)
    motion[:3, :3] = Rotation.from_euler("xyz", [20.0, -35.0, 50.0], degrees=True).as_matrix()
    motion[:3, 3] = [1.5, -2.0, 0.5]
    inverse = np.linalg.inv(motion)

    def moved(cam):
        return Camera(cam.K, cam.E @ inverse, cam.depth_min, cam.depth_max, cam.width, cam.height)

    hyps = rng.uniform(3.0, 5.0, size=(4, 11, 13))
    coords, in_front = warp_coordinates(src, ref, hyps)
    moved_coords, moved_front = warp_coordinates(moved(src), moved(ref), hyps)
    np.testing.assert_allclose(moved_coords, coords, atol=1e-8)
    np.testing.assert_array_equal(moved_front, in_front)


def test_hypothesis_behind_source_is_invalid(double):
    """Test a hypothesis behind the source camera is masked out."""
    ref = make_camera(eye=(0.0, 0.0, -4.0), width=9, height=9, f=8.0)
    src = make_camera(eye=(0.0, 0.0, 10.0), width=9, height=9, f=8.0)
    _, valid = homography_warp(DenseArray(np.ones((1, 9, 9))), src, ref, np.full((1, 9, 9), 20.0))
    assert not valid.any()


def test_warp_shape_mismatch():
    """Test features and hypotheses of different sizes are refused."""
    cam = make_camera(width=9, height=9)
    with pytest.raises(ShapeError, match="homography_warp"):
        homography_warp(DenseArray(np.ones((1, 9, 9))), cam, cam, np.ones((2, 8, 9)))


# ==================== TRACK TESTS ====================

def test_tracks_common_and_validation():
    """Test common-track lookup and view-id checks."""
    tracks = TrackSet(np.array([[0, 0, 0], [1, 1, 1], [2, 2, 2]]), [[0, 1], [1, 2], [0, 1, 2]])
    np.testing.assert_array_equal(tracks.common(0, 1), [[0, 0, 0], [2, 2, 2]])
    assert len(tracks.common(0, 2)) == 1
    tracks.validate_views(3)
    with pytest.raises(SceneError, match="unknown view"):
        tracks.validate_views(2)


def test_single_view_track_rejected():
    """Test a track seen by one view is refused."""
    with pytest.raises(SceneError, match="at least 2"):
        TrackSet(np.zeros((1, 3)), [[4]])
