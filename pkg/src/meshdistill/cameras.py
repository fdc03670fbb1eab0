"""Pinhole cameras, ray generation, and the camera rig.

Conventions (OpenCV style): camera x points right, y down, z forward.  R is
the camera-to-world rotation and t the camera center in world coordinates,
so a pixel (u, v) maps to the world ray

    direction = R @ K^-1 @ (u + 0.5, v + 0.5, 1),  origin = t,

with pixel centers at half-integer coordinates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


@dataclass
class Camera:
    R: np.ndarray  # (3, 3) camera-to-world rotation
    t: np.ndarray  # (3,) camera center in world space
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def rays(self, px: np.ndarray, py: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """World rays through the centers of integer pixels (px, py).

        px is the column index, py the row index.  Returns (origins (N, 3),
        unit directions (N, 3)).
        """
        px = np.asarray(px, dtype=np.float64)
        py = np.asarray(py, dtype=np.float64)
        d_cam = np.stack([
            (px + 0.5 - self.cx) / self.fx,
            (py + 0.5 - self.cy) / self.fy,
            np.ones_like(px),
        ], axis=-1)
        d = d_cam @ self.R.T
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        origins = np.broadcast_to(self.t, d.shape).copy()
        return origins, d

    def all_rays(self) -> tuple[np.ndarray, np.ndarray]:
        """Rays for every pixel, in row-major pixel order."""
        py, px = np.mgrid[0:self.height, 0:self.width]
        return self.rays(px.reshape(-1), py.reshape(-1))

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """World points to (pixel xy (N, 2), view-space depth z (N,))."""
        cam = (np.asarray(points, dtype=np.float64) - self.t) @ self.R
        z = cam[:, 2]
        safe = np.where(z == 0.0, 1.0, z)
        u = self.fx * cam[:, 0] / safe + self.cx
        v = self.fy * cam[:, 1] / safe + self.cy
        return np.stack([u, v], axis=-1), z

    def to_dict(self) -> dict:
        return {
            "R": [float(v) for v in self.R.reshape(-1)],
            "t": [float(v) for v in self.t],
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(
            R=np.asarray(d["R"], dtype=np.float64).reshape(3, 3),
            t=np.asarray(d["t"], dtype=np.float64),
            fx=float(d["fx"]), fy=float(d["fy"]),
            cx=float(d["cx"]), cy=float(d["cy"]),
            width=int(d["width"]), height=int(d["height"]),
        )


def look_at(position: np.ndarray, target: np.ndarray,
            up: np.ndarray | None = None) -> np.ndarray:
    """Camera-to-world rotation looking from position toward target.

    With the y-down convention the camera x axis is cross(forward, up).
    """
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    z = target - position
    z = z / np.linalg.norm(z)
    if up is None:
        up = np.array([0.0, 0.0, 1.0])
        if abs(z @ up) > 0.999:
            up = np.array([0.0, 1.0, 0.0])
    x = np.cross(z, up)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=1)


def fibonacci_rig(n_views: int, radius: float, width: int, height: int,
                  fov_deg: float = 50.0) -> list[Camera]:
    """n cameras on a Fibonacci sphere lattice, all looking at the origin.

    The half-offset lattice never lands exactly on the poles, so look_at
    stays well conditioned.
    """
    golden = np.pi * (3.0 - np.sqrt(5.0))
    fx = 0.5 * width / np.tan(0.5 * np.deg2rad(fov_deg))
    cams = []
    for i in range(n_views):
        zc = 1.0 - 2.0 * (i + 0.5) / n_views
        r = np.sqrt(max(0.0, 1.0 - zc * zc))
        theta = golden * i
        pos = radius * np.array([r * np.cos(theta), r * np.sin(theta), zc])
        cams.append(Camera(
            R=look_at(pos, np.zeros(3)), t=pos,
            fx=fx, fy=fx, cx=width / 2.0, cy=height / 2.0,
            width=width, height=height,
        ))
    return cams


def save_cameras(path, cameras: list[Camera]) -> None:
    with open(path, "w") as fh:
        json.dump({"cameras": [c.to_dict() for c in cameras]}, fh, indent=1)


def load_cameras(path) -> list[Camera]:
    with open(path) as fh:
        blob = json.load(fh)
    return [Camera.from_dict(d) for d in blob["cameras"]]
