"""Camera model and rig tests."""

import numpy as np
import pytest

from meshdistill.cameras import (Camera, fibonacci_rig, load_cameras, look_at,
                                 save_cameras)


def _identity_camera(width=8, height=8, f=4.0):
    return Camera(R=np.eye(3), t=np.zeros(3), fx=f, fy=f,
                  cx=width / 2.0, cy=height / 2.0, width=width, height=height)


def test_principal_point_ray_is_optical_axis():
    cam = _identity_camera()
    # sub-pixel query whose center lands on the principal point (cx = 4.0)
    o, d = cam.rays(np.array([3.5]), np.array([3.5]))
    assert np.allclose(o, 0.0)
    assert np.allclose(d, [[0.0, 0.0, 1.0]], atol=1e-12)


def test_translation_moves_origin_not_direction():
    cam = _identity_camera()
    shifted = Camera(R=np.eye(3), t=np.array([1.0, -2.0, 0.5]), fx=cam.fx,
                     fy=cam.fy, cx=cam.cx, cy=cam.cy, width=cam.width,
                     height=cam.height)
    _, d0 = cam.rays(np.array([1, 5]), np.array([2, 6]))
    o1, d1 = shifted.rays(np.array([1, 5]), np.array([2, 6]))
    assert np.allclose(o1, shifted.t)
    assert np.allclose(d0, d1)


def test_rotation_rotates_directions():
    cam = _identity_camera()
    # 90 degrees about y: camera z maps to world x
    ry = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])
    rot = Camera(R=ry, t=np.zeros(3), fx=cam.fx, fy=cam.fy, cx=cam.cx,
                 cy=cam.cy, width=cam.width, height=cam.height)
    _, d0 = cam.rays(np.array([3.5]), np.array([3.5]))
    _, d1 = rot.rays(np.array([3.5]), np.array([3.5]))
    assert np.allclose(d1, d0 @ ry.T, atol=1e-12)
    assert np.allclose(d1, [[1.0, 0.0, 0.0]], atol=1e-12)


def test_project_inverts_rays():
    rng = np.random.default_rng(3)
    cams = fibonacci_rig(5, 2.0, 32, 24)
    for cam in cams:
        px = rng.integers(0, cam.width, 10)
        py = rng.integers(0, cam.height, 10)
        o, d = cam.rays(px, py)
        depth = rng.uniform(0.5, 3.0, 10)
        pts = o + depth[:, None] * d
        uv, z = cam.project(pts)
        assert np.all(z > 0)
        assert np.allclose(uv[:, 0], px + 0.5, atol=1e-9)
        assert np.allclose(uv[:, 1], py + 0.5, atol=1e-9)


def test_look_at_faces_target():
    rng = np.random.default_rng(4)
    for _ in range(20):
        pos = rng.standard_normal(3) * 2
        tgt = rng.standard_normal(3) * 0.3
        R = look_at(pos, tgt)
        assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(R) > 0.999
        fwd = tgt - pos
        fwd /= np.linalg.norm(fwd)
        assert np.allclose(R[:, 2], fwd, atol=1e-12)


def test_fibonacci_rig_geometry():
    cams = fibonacci_rig(16, 2.0, 64, 64)
    assert len(cams) == 16
    for cam in cams:
        assert np.isclose(np.linalg.norm(cam.t), 2.0)
        # the central ray points back at the origin
        o, d = cam.rays(np.array([31]), np.array([31]))
        toward = -cam.t / np.linalg.norm(cam.t)
        assert d[0] @ toward > 0.99


def test_rig_sees_default_shapes():
    # every camera keeps the largest default shape's circumsphere in frame
    rng = np.random.default_rng(0)
    pts = rng.standard_normal((500, 3))
    pts = 0.7 * pts / np.linalg.norm(pts, axis=1, keepdims=True)
    cams = fibonacci_rig(12, 2.0, 64, 64)
    for cam in cams:
        uv, z = cam.project(pts)
        assert np.all(z > 0)
        assert np.all(uv >= 0.0)
        assert np.all(uv[:, 0] <= cam.width)
        assert np.all(uv[:, 1] <= cam.height)


def test_camera_json_roundtrip(tmp_path):
    cams = fibonacci_rig(7, 2.0, 48, 36, fov_deg=45.0)
    path = tmp_path / "cameras.json"
    save_cameras(path, cams)
    back = load_cameras(path)
    assert len(back) == len(cams)
    for a, b in zip(cams, back):
        assert np.allclose(a.R, b.R, atol=1e-12)
        assert np.allclose(a.t, b.t, atol=1e-12)
        assert (a.fx, a.fy, a.cx, a.cy) == (b.fx, b.fy, b.cx, b.cy)
        assert (a.width, a.height) == (b.width, b.height)
