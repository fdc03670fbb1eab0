"""Isosurface extraction and feature baking.

The TSDF is sampled on a corner grid, triangulated with the classic 256-case
marching-cubes tables, and deduplicated through global edge keys so shared
vertices are emitted once.  Appearance features are baked either per vertex
(default below 200k vertices) or into a texture atlas of 4-px right
triangles packed two per square, and the mesh travels as an OBJ plus a
binary feature sidecar, atlas PNGs, and the appearance-network checkpoint.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from . import diffcore as dc
from . import rendering
from .ioutil import atomic_write_bytes, atomic_write_text, read_png, write_png
from .mc_tables import TRI_TABLE

VERTEX_MODE_LIMIT = 200_000
MAX_ATLAS_SIDE = 16384


@dataclass
class ScalarGrid:
    values: np.ndarray           # (X, Y, Z) corner samples
    lo: np.ndarray               # (3,) box min corner
    hi: np.ndarray               # (3,) box max corner

    def spacing(self) -> np.ndarray:
        dims = np.array(self.values.shape, dtype=np.float64)
        return (self.hi - self.lo) / (dims - 1.0)


@dataclass
class TriMesh:
    verts: np.ndarray            # (V, 3)
    faces: np.ndarray            # (F, 3) int64
    normals: np.ndarray | None = None  # (V, 3)

    def face_areas(self) -> np.ndarray:
        a, b, c = (self.verts[self.faces[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


@dataclass
class FeaturedMesh:
    mesh: TriMesh
    mode: str                          # "vertex" | "atlas"
    features: np.ndarray | None = None  # (V, 8) in vertex mode
    atlas: np.ndarray | None = None     # (S, S, 8) in [0, 1], indexed [u, v]
    uvs: np.ndarray | None = None       # (F, 3, 2) in [0, 1], atlas mode
    tri_side: int = 4

    def __post_init__(self):
        if self.mode not in ("vertex", "atlas"):
            raise ValueError(f"unknown feature mode {self.mode!r}")


def sample_tsdf_grid(model, res: int, lo=None, hi=None,
                     chunk: int = 262144) -> ScalarGrid:
    """Evaluate the TSDF at the corners of a res^3-cell grid.

    model is an SsanModel or any callable mapping (N, 3) points to (N,)
    values.  The box must lie within the scene box.
    """
    lo = np.full(3, rendering.SCENE_LO, dtype=np.float64) if lo is None \
        else np.asarray(lo, dtype=np.float64)
    hi = np.full(3, rendering.SCENE_HI, dtype=np.float64) if hi is None \
        else np.asarray(hi, dtype=np.float64)
    if res < 1:
        raise ValueError("grid needs at least one cell per axis")
    if (lo < rendering.SCENE_LO - 1e-9).any() or (hi > rendering.SCENE_HI + 1e-9).any():
        raise ValueError("grid box extends outside the scene box")
    fn = model.tsdf_np if hasattr(model, "tsdf_np") else model
    axes = [np.linspace(lo[a], hi[a], res + 1) for a in range(3)]
    side = res + 1
    total = side ** 3
    out = np.empty(total, dtype=np.float64)
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        pts = np.stack([axes[0][idx // (side * side)],
                        axes[1][(idx // side) % side],
                        axes[2][idx % side]], axis=1)
        out[idx] = fn(pts)
    return ScalarGrid(values=out.reshape(side, side, side), lo=lo, hi=hi)


def marching_cubes(grid: ScalarGrid, iso: float = 0.0) -> TriMesh:
    """Extract the iso-surface; vertices are deduplicated by global edge key.

    "Inside" is value < iso.  Grids without a sign change produce an empty
    mesh; NaN values are rejected.
    """
    values = np.ascontiguousarray(grid.values, dtype=np.float64)
    if np.isnan(values).any():
        raise ValueError("grid contains NaN values")
    keys = _kernels.mc_collect(values, iso, TRI_TABLE)
    if len(keys) == 0:
        return TriMesh(verts=np.zeros((0, 3)), faces=np.zeros((0, 3), np.int64))

    uniq, inv = np.unique(keys.reshape(-1), return_inverse=True)
    _, ydim, zdim = values.shape
    axis = uniq % 3
    rest = uniq // 3
    gk = rest % zdim
    gj = (rest // zdim) % ydim
    gi = rest // (zdim * ydim)
    v0 = values[gi, gj, gk]
    step = np.zeros((len(uniq), 3), dtype=np.int64)
    step[np.arange(len(uniq)), axis] = 1
    v1 = values[gi + step[:, 0], gj + step[:, 1], gk + step[:, 2]]
    mu = (iso - v0) / (v1 - v0)

    spacing = grid.spacing()
    verts = grid.lo + np.stack([gi, gj, gk], axis=1) * spacing
    verts[np.arange(len(uniq)), axis] += mu * spacing[axis]
    faces = inv.reshape(-1, 3).astype(np.int64)

    mesh = TriMesh(verts=verts, faces=faces)
    keep = mesh.face_areas() > 1e-12
    mesh.faces = mesh.faces[keep]
    return mesh


def vertex_normals_from_model(model, verts: np.ndarray,
                              chunk: int = 65536) -> np.ndarray:
    out = np.empty((len(verts), 3), dtype=np.float64)
    for start in range(0, len(verts), chunk):
        out[start:start + chunk] = model.normal_np(verts[start:start + chunk])
    return out


def bake_vertex_features(mesh: TriMesh, model) -> FeaturedMesh:
    """Query f_hat and n_hat at every vertex position."""
    feats = np.empty((len(mesh.verts), 8), dtype=np.float64)
    for start in range(0, len(mesh.verts), 65536):
        feats[start:start + 65536] = model.features_np(
            mesh.verts[start:start + 65536])
    normals = vertex_normals_from_model(model, mesh.verts)
    return FeaturedMesh(mesh=TriMesh(mesh.verts, mesh.faces, normals),
                        mode="vertex", features=feats)


# ---------------------------------------------------------------------------
# texture atlas baking

def _atlas_side_for(n_faces: int, tri_side: int) -> int:
    """Smallest power-of-two atlas holding two faces per square."""
    squares = (n_faces + 1) // 2
    side = 1
    while side < tri_side:
        side *= 2
    while (side // tri_side) ** 2 < squares:
        side *= 2
    return side


def _face_uv_corners(face_idx: np.ndarray, atlas_side: int,
                     tri_side: int) -> np.ndarray:
    """Per-face UV corners in pixel units, (F, 3, 2), half-pixel inset.

    Faces pack two per tri_side x tri_side square: even in the lower-left
    triangle, odd mirrored into the upper-right.
    """
    per_row = atlas_side // tri_side
    square = face_idx // 2
    sx = (square % per_row) * tri_side
    sy = (square // per_row) * tri_side
    g = 0.5
    s = float(tri_side)
    lower = np.array([[g, g], [s - g, g], [g, s - g]])
    upper = np.array([[s - g, s - g], [g, s - g], [s - g, g]])
    corners = np.where((face_idx % 2 == 0)[:, None, None], lower, upper)
    return corners + np.stack([sx, sy], axis=1)[:, None, :].astype(np.float64)


def build_face_texture(mesh: TriMesh, model, tri_side: int = 4
                       ) -> FeaturedMesh:
    """Bake f_hat into a per-face texture atlas of right triangles.

    Every texel of a face's half-square is filled from the surface point at
    its (clamped) barycentric position, which doubles as nearest-neighbor
    edge padding inside the gutter ring.
    """
    n_faces = len(mesh.faces)
    if n_faces == 0:
        raise ValueError("cannot build an atlas for an empty mesh")
    side = _atlas_side_for(n_faces, tri_side)
    if side > MAX_ATLAS_SIDE:
        raise ValueError(
            f"face count {n_faces} exceeds a {MAX_ATLAS_SIDE}^2 atlas; "
            "use vertex-feature mode")

    face_idx = np.arange(n_faces)
    corners_px = _face_uv_corners(face_idx, side, tri_side)

    # texel centers of each face's half-square, local coordinates
    ix, iy = np.meshgrid(np.arange(tri_side), np.arange(tri_side),
                         indexing="ij")
    centers = np.stack([ix + 0.5, iy + 0.5], axis=-1).reshape(-1, 2)
    on_lower = centers.sum(axis=1) <= tri_side
    local = {0: centers[on_lower], 1: centers[~on_lower]}

    atlas = np.zeros((side, side, 8), dtype=np.float64)
    pts_all, slots = [], []
    for parity in (0, 1):
        sel = face_idx[face_idx % 2 == parity]
        if len(sel) == 0:
            continue
        texels = local[parity]
        per_row = side // tri_side
        sq = np.stack([(sel // 2) % per_row,
                       (sel // 2) // per_row], axis=1) * tri_side
        # barycentrics of each texel center wrt the inset UV triangle,
        # in local square coordinates
        a = corners_px[sel, 0] - sq
        b = corners_px[sel, 1] - sq
        c = corners_px[sel, 2] - sq
        lam = _barycentric_2d(a[:, None, :], b[:, None, :], c[:, None, :],
                              texels[None, :, :])
        lam = np.clip(lam, 0.0, None)
        lam /= lam.sum(axis=-1, keepdims=True)
        tri = mesh.verts[mesh.faces[sel]]              # (K, 3, 3)
        pts = np.einsum("ktl,klx->ktx", lam, tri)      # (K, T, 3)
        pix = (sq[:, None, :] + texels[None, :, :] - 0.5).astype(np.int64)
        pts_all.append(pts.reshape(-1, 3))
        slots.append(pix.reshape(-1, 2))
    pts_all = np.concatenate(pts_all)
    slots = np.concatenate(slots)
    feats = np.empty((len(pts_all), 8), dtype=np.float64)
    for start in range(0, len(pts_all), 65536):
        feats[start:start + 65536] = model.features_np(
            pts_all[start:start + 65536])
    atlas[slots[:, 0], slots[:, 1]] = feats
    # 8-bit quantization, as stored in the PNG pair
    atlas = np.rint(atlas * 255.0) / 255.0

    uvs = corners_px / side
    normals = vertex_normals_from_model(model, mesh.verts)
    return FeaturedMesh(mesh=TriMesh(mesh.verts, mesh.faces, normals),
                        mode="atlas", atlas=atlas, uvs=uvs,
                        tri_side=tri_side)


def _barycentric_2d(a, b, c, p):
    """Barycentric coordinates of p in triangle (a, b, c), all 2D."""
    v0 = b - a
    v1 = c - a
    v2 = p - a
    d00 = (v0 * v0).sum(-1)
    d01 = (v0 * v1).sum(-1)
    d11 = (v1 * v1).sum(-1)
    d20 = (v2 * v0).sum(-1)
    d21 = (v2 * v1).sum(-1)
    denom = d00 * d11 - d01 * d01
    v = (d11 * d20 - d01 * d21) / denom
    w = (d00 * d21 - d01 * d20) / denom
    return np.stack([1.0 - v - w, v, w], axis=-1)


def bake_features(mesh: TriMesh, model, mode: str | None = None,
                  tri_side: int = 4) -> FeaturedMesh:
    """Vertex features below the size cutoff, atlas above, unless forced."""
    if mode is None:
        mode = "vertex" if len(mesh.verts) < VERTEX_MODE_LIMIT else "atlas"
    if mode == "vertex":
        return bake_vertex_features(mesh, model)
    return build_face_texture(mesh, model, tri_side=tri_side)


# ---------------------------------------------------------------------------
# OBJ + sidecar + bundle I/O

_FEAT_MAGIC = b"MDFEAT01"
_MODE_CODE = {"vertex": 0, "atlas": 1}
_MODE_NAME = {0: "vertex", 1: "atlas"}


def write_obj(path, fmesh: FeaturedMesh) -> None:
    mesh = fmesh.mesh
    lines = ["# meshdistill export"]
    for v in mesh.verts:
        lines.append(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}")
    if mesh.normals is not None:
        for n in mesh.normals:
            lines.append(f"vn {n[0]:.17g} {n[1]:.17g} {n[2]:.17g}")
    if fmesh.mode == "atlas":
        for corner in fmesh.uvs.reshape(-1, 2):
            lines.append(f"vt {corner[0]:.17g} {corner[1]:.17g}")
        for i, f in enumerate(mesh.faces):
            t = 3 * i
            lines.append(
                f"f {f[0] + 1}/{t + 1}/{f[0] + 1} "
                f"{f[1] + 1}/{t + 2}/{f[1] + 1} "
                f"{f[2] + 1}/{t + 3}/{f[2] + 1}")
    else:
        for f in mesh.faces:
            lines.append(f"f {f[0] + 1}//{f[0] + 1} {f[1] + 1}//{f[1] + 1} "
                         f"{f[2] + 1}//{f[2] + 1}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_obj(path) -> tuple[np.ndarray, np.ndarray, np.ndarray | None,
                            np.ndarray | None]:
    """Returns (verts, faces, normals | None, uvs (F, 3, 2) | None)."""
    verts, normals, texcoords, faces, face_uvs = [], [], [], [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts or parts[0] == "#":
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "vn":
                normals.append([float(x) for x in parts[1:4]])
            elif parts[0] == "vt":
                texcoords.append([float(x) for x in parts[1:3]])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise ValueError(f"non-triangle face in {path}")
                vi, ti = [], []
                for p in parts[1:]:
                    fields = p.split("/")
                    vi.append(int(fields[0]) - 1)
                    if len(fields) > 1 and fields[1]:
                        ti.append(int(fields[1]) - 1)
                faces.append(vi)
                if ti:
                    face_uvs.append(ti)
    v = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if len(f) and (f.min() < 0 or f.max() >= len(v)):
        raise ValueError(f"face index out of range in {path}")
    n = np.asarray(normals, dtype=np.float64) if normals else None
    uv = None
    if face_uvs:
        tc = np.asarray(texcoords, dtype=np.float64)
        uv = tc[np.asarray(face_uvs, dtype=np.int64)]
    return v, f, n, uv


def write_feat_sidecar(path, fmesh: FeaturedMesh) -> None:
    mode = _MODE_CODE[fmesh.mode]
    if fmesh.mode == "vertex":
        payload = np.ascontiguousarray(fmesh.features, dtype="<f4")
        count = len(payload)
    else:
        payload = np.zeros((0, 8), dtype="<f4")
        count = len(fmesh.mesh.faces)
    blob = (_FEAT_MAGIC + struct.pack("<BII", mode, count, 8)
            + payload.tobytes())
    atomic_write_bytes(path, blob)


def read_feat_sidecar(path) -> tuple[str, int, np.ndarray | None]:
    with open(path, "rb") as fh:
        magic = fh.read(len(_FEAT_MAGIC))
        if magic != _FEAT_MAGIC:
            raise ValueError(f"not a feature sidecar: {path}")
        mode_code, count, channels = struct.unpack("<BII", fh.read(9))
        if mode_code not in _MODE_NAME:
            raise ValueError(f"unknown feature mode {mode_code} in {path}")
        if channels != 8:
            raise ValueError(f"expected 8 feature channels, got {channels}")
        mode = _MODE_NAME[mode_code]
        if mode == "vertex":
            data = np.frombuffer(fh.read(4 * 8 * count), dtype="<f4")
            if data.size != 8 * count:
                raise ValueError(f"truncated feature sidecar: {path}")
            return mode, count, data.reshape(count, 8).astype(np.float64)
        return mode, count, None


def save_appearance(path, model) -> None:
    """Export the appearance network (eta) in checkpoint format."""
    state = model.eta_mlp.state("eta")
    state["_nfreqs"] = np.array([model.config.n_freqs], dtype=np.float32)
    dc.save_arrays(path, state)


class AppearanceNet:
    """Standalone eta loaded from a bundle: (f_hat, n_hat, d) -> RGB."""

    def __init__(self, mlp, n_freqs: int):
        self.mlp = mlp
        self.n_freqs = n_freqs

    def __call__(self, f: np.ndarray, n: np.ndarray,
                 d: np.ndarray) -> np.ndarray:
        from .encoding import frequency_encode
        enc = frequency_encode(d, self.n_freqs)
        x = np.concatenate([f, n, enc], axis=1).astype(np.float32)
        with dc.no_grad():
            out = dc.sigmoid(self.mlp(dc.Tensor(x)))
        return out.data.astype(np.float64)


def load_appearance(path) -> AppearanceNet:
    from .fields import MLP
    state = dc.load_arrays(path)
    if "_nfreqs" not in state:
        raise ValueError(f"appearance checkpoint {path} lacks metadata")
    n_freqs = int(state.pop("_nfreqs")[0])
    n_layers = len(state) // 2
    dims = [state["eta.w0"].shape[0]]
    for i in range(n_layers):
        dims.append(state[f"eta.w{i}"].shape[1])
    mlp = MLP(np.random.default_rng(0), dims)
    mlp.load_state(state, "eta")
    return AppearanceNet(mlp, n_freqs)


def save_bundle(out_dir, fmesh: FeaturedMesh, model) -> None:
    """Write mesh.obj, mesh.feat, atlas PNGs (if any), appearance.ckpt."""
    import os
    os.makedirs(out_dir, exist_ok=True)
    write_obj(os.path.join(out_dir, "mesh.obj"), fmesh)
    write_feat_sidecar(os.path.join(out_dir, "mesh.feat"), fmesh)
    if fmesh.mode == "atlas":
        write_png(os.path.join(out_dir, "feat0.png"), fmesh.atlas[:, :, :4])
        write_png(os.path.join(out_dir, "feat1.png"), fmesh.atlas[:, :, 4:])
    save_appearance(os.path.join(out_dir, "appearance.ckpt"), model)
    meta = {"mode": fmesh.mode, "tri_side": fmesh.tri_side,
            "n_verts": int(len(fmesh.mesh.verts)),
            "n_faces": int(len(fmesh.mesh.faces))}
    atomic_write_text(os.path.join(out_dir, "bundle.json"),
                      json.dumps(meta, indent=2) + "\n")


def load_bundle(bundle_dir) -> tuple[FeaturedMesh, AppearanceNet]:
    import os
    meta_path = os.path.join(bundle_dir, "bundle.json")
    try:
        with open(meta_path) as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise ValueError(f"not a mesh bundle (missing bundle.json): {bundle_dir}")
    except json.JSONDecodeError as e:
        raise ValueError(f"malformed bundle.json in {bundle_dir}: {e}")
    verts, faces, normals, uvs = read_obj(os.path.join(bundle_dir, "mesh.obj"))
    mode, count, features = read_feat_sidecar(
        os.path.join(bundle_dir, "mesh.feat"))
    if mode != meta.get("mode"):
        raise ValueError("bundle.json and mesh.feat disagree on feature mode")
    mesh = TriMesh(verts=verts, faces=faces, normals=normals)
    if mode == "vertex":
        if count != len(verts):
            raise ValueError(
                f"sidecar has {count} feature rows for {len(verts)} vertices")
        fmesh = FeaturedMesh(mesh=mesh, mode="vertex", features=features)
    else:
        a0 = read_png(os.path.join(bundle_dir, "feat0.png"))
        a1 = read_png(os.path.join(bundle_dir, "feat1.png"))
        if uvs is None:
            raise ValueError("atlas bundle OBJ lacks texture coordinates")
        fmesh = FeaturedMesh(mesh=mesh, mode="atlas",
                             atlas=np.concatenate([a0, a1], axis=2),
                             uvs=uvs, tri_side=int(meta.get("tri_side", 4)))
    eta = load_appearance(os.path.join(bundle_dir, "appearance.ckpt"))
    return fmesh, eta
