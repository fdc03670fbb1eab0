"""Synthetic scenes: analytic SDF shapes, ground-truth rendering, dataset I/O.

A scene is a closed-form signed distance function plus an albedo, rendered
through the same volumetric path as any other field (hard density step at
the surface).  Datasets are a directory of PNGs with a cameras.json and a
scene.json sidecar recording the spec for later oracle evaluation.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import ioutil, rendering
from .cameras import Camera, fibonacci_rig, load_cameras, save_cameras
from .fields import AnalyticField

MARGIN = 0.8  # shapes must fit inside [-MARGIN, MARGIN]^3


def sdf_sphere(x: np.ndarray, radius: float) -> np.ndarray:
    return np.linalg.norm(x, axis=-1) - radius


def sdf_torus(x: np.ndarray, major: float, minor: float) -> np.ndarray:
    ring = np.linalg.norm(x[..., :2], axis=-1) - major
    return np.sqrt(ring * ring + x[..., 2] * x[..., 2]) - minor


def sdf_box(x: np.ndarray, half_extents) -> np.ndarray:
    q = np.abs(x) - np.asarray(half_extents)
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(q.max(axis=-1), 0.0)
    return outside + inside


def sdf_two_spheres(x: np.ndarray, centers, radii) -> np.ndarray:
    d = [np.linalg.norm(x - np.asarray(c), axis=-1) - r
         for c, r in zip(centers, radii)]
    return np.minimum(d[0], d[1])


_DEFAULT_PARAMS = {
    "sphere": {"radius": 0.5},
    "torus": {"major": 0.5, "minor": 0.2},
    "box": {"half_extents": [0.5, 0.4, 0.3]},
    "two-spheres": {"centers": [[-0.35, 0.0, 0.0], [0.35, 0.0, 0.0]],
                    "radii": [0.3, 0.25]},
}


@dataclass
class SceneSpec:
    kind: str
    params: dict = field(default_factory=dict)
    albedo: dict = field(default_factory=lambda: {"type": "constant",
                                                  "rgb": [0.8, 0.3, 0.3]})
    sigma_max: float = 1e3
    background: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.kind not in _DEFAULT_PARAMS:
            raise ValueError(f"unknown shape kind: {self.kind!r}")
        merged = dict(_DEFAULT_PARAMS[self.kind])
        merged.update(self.params)
        self.params = merged
        if self.sigma_max <= 0:
            raise ValueError("sigma_max must be positive")
        self.validate()

    def validate(self) -> None:
        """Shapes must fit inside the margin box with nonzero volume."""
        p = self.params
        if self.kind == "sphere":
            extent = p["radius"]
        elif self.kind == "torus":
            extent = p["major"] + p["minor"]
            if p["minor"] <= 0 or p["major"] <= p["minor"]:
                raise ValueError("torus needs 0 < minor < major")
        elif self.kind == "box":
            extent = max(p["half_extents"])
            if min(p["half_extents"]) <= 0:
                raise ValueError("box half extents must be positive")
        else:
            extent = max(np.max(np.abs(c)) + r
                         for c, r in zip(p["centers"], p["radii"]))
            if min(p["radii"]) <= 0:
                raise ValueError("sphere radii must be positive")
        if extent <= 0:
            raise ValueError("degenerate shape: nonpositive extent")
        if extent > MARGIN:
            raise ValueError(f"shape extent {extent:.3f} exceeds margin {MARGIN}")

    def circumradius(self) -> float:
        p = self.params
        if self.kind == "sphere":
            return float(p["radius"])
        if self.kind == "torus":
            return float(p["major"] + p["minor"])
        if self.kind == "box":
            return float(np.linalg.norm(p["half_extents"]))
        return float(max(np.linalg.norm(c) + r
                         for c, r in zip(p["centers"], p["radii"])))

    def sdf(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        p = self.params
        if self.kind == "sphere":
            return sdf_sphere(x, p["radius"])
        if self.kind == "torus":
            return sdf_torus(x, p["major"], p["minor"])
        if self.kind == "box":
            return sdf_box(x, p["half_extents"])
        return sdf_two_spheres(x, p["centers"], p["radii"])

    def sdf_gradient(self, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
        """Central-difference SDF gradient (unit off the medial axis)."""
        x = np.asarray(x, dtype=np.float64)
        g = np.empty_like(x)
        for a in range(3):
            dx = np.zeros(3)
            dx[a] = h
            g[..., a] = (self.sdf(x + dx) - self.sdf(x - dx)) / (2.0 * h)
        return g

    def albedo_at(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        a = self.albedo
        if a["type"] == "constant":
            rgb = np.asarray(a["rgb"], dtype=np.float64)
            return np.broadcast_to(rgb, x.shape[:-1] + (3,)).copy()
        if a["type"] == "gradient":
            axis = int(a.get("axis", 2))
            u = np.clip((x[..., axis] + 1.0) / 2.0, 0.0, 1.0)[..., None]
            c0 = np.asarray(a["rgb0"], dtype=np.float64)
            c1 = np.asarray(a["rgb1"], dtype=np.float64)
            return c0 + (c1 - c0) * u
        raise ValueError(f"unknown albedo type: {a['type']!r}")

    def to_field(self) -> AnalyticField:
        return AnalyticField(self.sdf, self.albedo_at, self.sigma_max)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": self.params,
                "albedo": self.albedo, "sigma_max": self.sigma_max,
                "background": list(self.background)}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(kind=d["kind"], params=d.get("params", {}),
                   albedo=d.get("albedo", {"type": "constant",
                                           "rgb": [0.8, 0.3, 0.3]}),
                   sigma_max=d.get("sigma_max", 1e3),
                   background=tuple(d.get("background", (1.0, 1.0, 1.0))))


def make_dataset(out_dir, spec: SceneSpec, n_views: int = 32,
                 width: int = 64, height: int = 64, rig_radius: float = 2.0,
                 fov_deg: float = 50.0, n_samples: int = 512,
                 seed: int = 0) -> None:
    """Render ground-truth views of the scene into a dataset directory."""
    rc = spec.circumradius()
    if rig_radius <= rc:
        raise ValueError(f"rig radius {rig_radius} must exceed shape "
                         f"circumradius {rc:.3f}")
    if np.arcsin(rc / rig_radius) > 0.5 * np.deg2rad(fov_deg):
        raise ValueError("field of view too narrow: cameras would not see "
                         "the whole shape")
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    cams = fibonacci_rig(n_views, rig_radius, width, height, fov_deg)
    fld = spec.to_field()
    for i, cam in enumerate(cams):
        origins, dirs = cam.all_rays()
        res = rendering.render_rays(fld.sigma_np, fld.rgb_np, origins, dirs,
                                    n_samples, seed=seed, step=i,
                                    stratified=True,
                                    background=np.asarray(spec.background))
        img = res["color"].reshape(height, width, 3)
        ioutil.write_png(os.path.join(out_dir, "images", f"{i:04d}.png"), img)
    save_cameras(os.path.join(out_dir, "cameras.json"), cams)
    meta = {"spec": spec.to_dict(), "n_samples": n_samples, "seed": seed,
            "rig_radius": rig_radius, "fov_deg": fov_deg}
    ioutil.atomic_write_text(os.path.join(out_dir, "scene.json"),
                             json.dumps(meta, indent=1))


def sample_shape_surface(spec: SceneSpec, n: int,
                         rng: np.random.Generator | None = None
                         ) -> tuple[np.ndarray, np.ndarray]:
    """Exact area-uniform surface samples and outward unit normals."""
    rng = np.random.default_rng(0) if rng is None else rng
    p = spec.params
    if spec.kind == "sphere":
        d = rng.normal(size=(n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return p["radius"] * d, d
    if spec.kind == "torus":
        return _sample_torus(p["major"], p["minor"], n, rng)
    if spec.kind == "box":
        return _sample_box(np.asarray(p["half_extents"], dtype=np.float64),
                           n, rng)
    return _sample_two_spheres(p["centers"], p["radii"], n, rng)


def _sample_torus(major, minor, n, rng):
    pts = np.empty((n, 3))
    nrm = np.empty((n, 3))
    got = 0
    while got < n:
        m = 2 * (n - got) + 16
        u = rng.uniform(0.0, 2.0 * np.pi, m)
        v = rng.uniform(0.0, 2.0 * np.pi, m)
        # tube-angle density is proportional to the local ring radius
        keep = rng.uniform(0.0, 1.0, m) < (major + minor * np.cos(v)) / (major + minor)
        u, v = u[keep][:n - got], v[keep][:n - got]
        ring = major + minor * np.cos(v)
        take = slice(got, got + len(u))
        pts[take] = np.stack([ring * np.cos(u), ring * np.sin(u),
                              minor * np.sin(v)], axis=1)
        nrm[take] = np.stack([np.cos(v) * np.cos(u), np.cos(v) * np.sin(u),
                              np.sin(v)], axis=1)
        got += len(u)
    return pts, nrm


def _sample_box(he, n, rng):
    areas = np.array([he[1] * he[2], he[1] * he[2], he[0] * he[2],
                      he[0] * he[2], he[0] * he[1], he[0] * he[1]])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    pts = rng.uniform(-1.0, 1.0, (n, 3)) * he
    pts[np.arange(n), axis] = sign * he[axis]
    nrm = np.zeros((n, 3))
    nrm[np.arange(n), axis] = sign
    return pts, nrm


def _sample_two_spheres(centers, radii, n, rng):
    c_arr = np.asarray(centers, dtype=np.float64)
    r_arr = np.asarray(radii, dtype=np.float64)
    areas = r_arr * r_arr
    pts = np.empty((n, 3))
    nrm = np.empty((n, 3))
    got = 0
    while got < n:
        m = 2 * (n - got) + 16
        which = rng.choice(2, size=m, p=areas / areas.sum())
        d = rng.normal(size=(m, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        p = c_arr[which] + r_arr[which, None] * d
        # union surface: drop the parts buried inside the other sphere
        other = 1 - which
        buried = np.linalg.norm(p - c_arr[other], axis=1) < r_arr[other]
        p, d = p[~buried][:n - got], d[~buried][:n - got]
        take = slice(got, got + len(p))
        pts[take] = p
        nrm[take] = d
        got += len(p)
    return pts, nrm


def load_dataset(path) -> tuple[list[Camera], np.ndarray, dict]:
    """Read (cameras, images (V, H, W, 3) in [0,1], scene meta)."""
    cam_path = os.path.join(path, "cameras.json")
    try:
        cams = load_cameras(cam_path)
    except (OSError, json.JSONDecodeError, KeyError) as e:
        raise ValueError(f"malformed dataset cameras at {cam_path}: {e}") from e
    for i, c in enumerate(cams):
        if not np.allclose(c.R @ c.R.T, np.eye(3), atol=1e-5):
            raise ValueError(f"camera {i}: rotation not orthonormal")
        if np.linalg.det(c.R) < 0:
            raise ValueError(f"camera {i}: rotation has negative determinant")
    images = []
    for i, cam in enumerate(cams):
        img_path = os.path.join(path, "images", f"{i:04d}.png")
        if not os.path.exists(img_path):
            raise ValueError(f"missing image for camera {i}: {img_path}")
        img = ioutil.read_png(img_path)
        if img.shape[:2] != (cam.height, cam.width):
            raise ValueError(f"{img_path}: size {img.shape[:2]} does not match "
                             f"camera ({cam.height}, {cam.width})")
        images.append(img[..., :3])
    meta = {}
    scene_path = os.path.join(path, "scene.json")
    if os.path.exists(scene_path):
        with open(scene_path) as fh:
            meta = json.load(fh)
    return cams, np.stack(images), meta
