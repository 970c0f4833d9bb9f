"""
Tests for camera, image, track and scene directory codecs.
"""

import numpy as np
import pytest

from app.core.errors import CameraError, FormatError
from app.geometry.tracks import TrackSet
from app.io.cameras import parse_camera, read_camera, read_camera_dir, write_camera
from app.io.images import read_pfm, read_pgm, read_ppm, write_pfm, write_pgm, write_ppm
from app.io.scenes import load_scene, save_scene
from app.io.tracks import read_tracks, write_tracks
from tests.conftest import make_camera


# ==================== CAMERA FILE TESTS ====================

def test_camera_file_round_trip(tmp_path):
    """Test a written camera file reads back the same camera."""
    cam = make_camera(eye=(1.0, -2.0, -3.5), width=33, height=33, depth_num=32)
    write_camera(tmp_path / "0000_cam.txt", cam)
    loaded = read_camera(tmp_path / "0000_cam.txt")
    np.testing.assert_allclose(loaded.K, cam.K)
    np.testing.assert_allclose(loaded.E, cam.E)
    assert (loaded.depth_min, loaded.depth_max, loaded.depth_num) == (cam.depth_min, cam.depth_max, 32)
    assert (loaded.width, loaded.height) == (33, 33)


def test_camera_size_override(tmp_path):
    """Test explicit image size wins over the principal-point guess."""
    write_camera(tmp_path / "0000_cam.txt", make_camera())
    cam = read_camera(tmp_path / "0000_cam.txt", width=40, height=20)
    assert (cam.width, cam.height) == (40, 20)


def test_camera_without_depth_max():
    """Test the three-field depth line derives depth_max from the interval."""
    text = "extrinsic\n1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n\nintrinsic\n10 0 4\n0 10 4\n0 0 1\n\n2.0 0.5 5\n"
    cam = parse_camera(text)
    assert cam.depth_max == pytest.approx(4.0)
    assert (cam.width, cam.height) == (9, 9)


def test_malformed_camera_files():
    """Test missing headers and bad matrices raise format or camera errors."""
    with pytest.raises(FormatError, match="headers"):
        parse_camera("intrinsic\n1 0 0\n")
    with pytest.raises(FormatError):
        parse_camera("extrinsic\n1 0 0 0\n")
    bad_rotation = "extrinsic\n2 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n\nintrinsic\n10 0 4\n0 10 4\n0 0 1\n\n2 0.5 5 4\n"
    with pytest.raises(CameraError, match="orthonormal"):
        parse_camera(bad_rotation)


def test_camera_dir_needs_files(tmp_path):
    """Test an empty camera directory is an error."""
    with pytest.raises(FormatError, match="no \\*_cam.txt"):
        read_camera_dir(tmp_path)


# ==================== IMAGE TESTS ====================

def test_ppm_round_trip_quantizes(tmp_path, rng):
    """Test PPM stores 8-bit colors."""
    image = rng.uniform(size=(5, 7, 3))
    write_ppm(tmp_path / "a.ppm", image)
    loaded = read_ppm(tmp_path / "a.ppm")
    assert loaded.shape == (5, 7, 3)
    np.testing.assert_allclose(loaded, image, atol=0.5 / 255 + 1e-12)


def test_pgm_round_trip(tmp_path):
    """Test a binary mask survives as 0/1 grayscale."""
    mask = np.array([[0.0, 1.0], [1.0, 0.0]])
    write_pgm(tmp_path / "m.pgm", mask)
    np.testing.assert_array_equal(read_pgm(tmp_path / "m.pgm"), mask)


def test_pfm_round_trip_is_exact(tmp_path, rng):
    """Test float32 depth maps round-trip bit-exactly, including row order."""
    depth = rng.uniform(1, 5, size=(6, 4)).astype(np.float32)
    write_pfm(tmp_path / "d.pfm", depth)
    np.testing.assert_array_equal(read_pfm(tmp_path / "d.pfm"), depth)


def test_image_format_errors(tmp_path):
    """Test wrong shapes and truncated files are reported."""
    with pytest.raises(FormatError, match="PPM"):
        write_ppm(tmp_path / "x.ppm", np.zeros((4, 4)))
    (tmp_path / "t.ppm").write_bytes(b"P6\n4 4\n255\n" + b"\0" * 10)
    with pytest.raises(FormatError, match="truncated"):
        read_ppm(tmp_path / "t.ppm")
    (tmp_path / "n.pfm").write_bytes(b"P6\n1 1\n")
    with pytest.raises(FormatError, match="PFM"):
        read_pfm(tmp_path / "n.pfm")


# ==================== TRACK FILE TESTS ====================

def test_tracks_round_trip(tmp_path):
    """Test positions and visibility sets survive a write and read."""
    tracks = TrackSet(np.array([[0.5, -1.25, 3.0], [1e-3, 2.0, 0.0]]), [[2, 0], [1, 3, 4]])
    write_tracks(tmp_path / "tracks.txt", tracks)
    loaded = read_tracks(tmp_path / "tracks.txt")
    np.testing.assert_array_equal(loaded.points, tracks.points)
    assert loaded.views == tracks.views


def test_tracks_malformed_line(tmp_path):
    """Test a track with one view id is a format error naming the line."""
    (tmp_path / "tracks.txt").write_text("# header\n0 0 0 1 2\n1 1 1 3\n")
    with pytest.raises(FormatError, match=":3:"):
        read_tracks(tmp_path / "tracks.txt")


# ==================== SCENE DIRECTORY TESTS ====================

def test_scene_round_trip(tmp_path, ring_scene):
    """Test a generated scene reloads with the same cameras, depths and tracks."""
    save_scene(tmp_path / "scene", ring_scene)
    loaded = load_scene(tmp_path / "scene")
    assert len(loaded) == len(ring_scene)
    for a, b in zip(loaded.cams, ring_scene.cams):
        np.testing.assert_allclose(a.E, b.E)
        assert (a.width, a.height) == (b.width, b.height)
    np.testing.assert_array_equal(loaded.depths, ring_scene.depths.astype(np.float32))
    assert len(loaded.tracks) == len(ring_scene.tracks)
    assert loaded.spec == ring_scene.spec


def test_not_a_scene_directory(tmp_path):
    """Test a directory without cams/ and images/ is refused."""
    with pytest.raises(FormatError, match="not a scene directory"):
        load_scene(tmp_path)
