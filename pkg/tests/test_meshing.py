"""Isosurface extraction, feature baking, and mesh bundle I/O."""

import numpy as np
import pytest
from scipy.spatial import cKDTree

from meshdistill import meshing, scenes
from meshdistill.meshing import (
    FeaturedMesh,
    ScalarGrid,
    TriMesh,
    bake_features,
    bake_vertex_features,
    build_face_texture,
    load_bundle,
    marching_cubes,
    read_feat_sidecar,
    read_obj,
    sample_tsdf_grid,
    save_bundle,
    write_feat_sidecar,
    write_obj,
)


class FakeModel:
    """Analytic stand-in exposing the frozen query surface of a trained model."""

    def __init__(self, sdf_fn, bound=0.1):
        self.sdf_fn = sdf_fn
        self.bound = bound
        rng = np.random.default_rng(7)
        self.w = rng.normal(0.0, 1.0, (3, 8))
        self.phase = rng.uniform(0.0, np.pi, 8)

    def tsdf_np(self, x):
        return np.clip(self.sdf_fn(x), -self.bound, self.bound)

    def normal_np(self, x, h=1e-5):
        g = np.empty_like(x, dtype=np.float64)
        for a in range(3):
            dx = np.zeros(3)
            dx[a] = h
            g[:, a] = (self.sdf_fn(x + dx) - self.sdf_fn(x - dx)) / (2 * h)
        return g / np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-12)

    def features_np(self, x):
        return 0.5 + 0.5 * np.sin(x @ self.w + self.phase)


def sphere_model(r=0.5):
    return FakeModel(lambda x: np.linalg.norm(x, axis=1) - r)


def sample_mesh_surface(mesh, n, rng):
    """Area-weighted uniform samples on the triangles."""
    areas = mesh.face_areas()
    pick = rng.choice(len(areas), size=n, p=areas / areas.sum())
    u = rng.uniform(0, 1, n)
    v = rng.uniform(0, 1, n)
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    tri = mesh.verts[mesh.faces[pick]]
    return (tri[:, 0] * (1 - u - v)[:, None] + tri[:, 1] * u[:, None]
            + tri[:, 2] * v[:, None])


def closest_point_on_tri(p, a, b, c):
    """Closest point on triangle (a, b, c) for each p (Ericson's region walk)."""
    ab, ac, ap = b - a, c - a, p - a
    d1 = (ab * ap).sum(-1)
    d2 = (ac * ap).sum(-1)
    bp = p - b
    d3 = (ab * bp).sum(-1)
    d4 = (ac * bp).sum(-1)
    cp = p - c
    d5 = (ab * cp).sum(-1)
    d6 = (ac * cp).sum(-1)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    def safe(x):
        return np.where(x != 0, x, 1.0)

    v = np.clip(vb / safe(va + vb + vc), 0, 1)
    w = np.clip(vc / safe(va + vb + vc), 0, 1)
    out = a + ab * v[..., None] + ac * w[..., None]

    t_bc = np.clip((d4 - d3) / safe((d4 - d3) + (d5 - d6)), 0, 1)
    in_bc = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
    out = np.where(in_bc[..., None], b + (c - b) * t_bc[..., None], out)
    t_ac = np.clip(d2 / safe(d2 - d6), 0, 1)
    in_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    out = np.where(in_ac[..., None], a + ac * t_ac[..., None], out)
    t_ab = np.clip(d1 / safe(d1 - d3), 0, 1)
    in_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    out = np.where(in_ab[..., None], a + ab * t_ab[..., None], out)
    out = np.where(((d6 >= 0) & (d5 <= d6))[..., None], c, out)
    out = np.where(((d3 >= 0) & (d4 <= d3))[..., None], b, out)
    out = np.where(((d1 <= 0) & (d2 <= 0))[..., None], a, out)
    return out


def points_to_mesh_distance(points, mesh, k=12):
    """Exact distance to the nearest of the k centroid-nearest triangles."""
    tri = mesh.verts[mesh.faces]
    tree = cKDTree(tri.mean(axis=1))
    k = min(k, len(tri))
    _, idx = tree.query(points, k=k)
    idx = idx.reshape(len(points), k)
    cand = tri[idx]
    closest = closest_point_on_tri(points[:, None, :], cand[:, :, 0],
                                   cand[:, :, 1], cand[:, :, 2])
    return np.linalg.norm(points[:, None, :] - closest, axis=-1).min(axis=1)


def euler_characteristic(mesh):
    v = len(np.unique(mesh.faces))
    edges = np.sort(np.concatenate([mesh.faces[:, [0, 1]], mesh.faces[:, [1, 2]],
                                    mesh.faces[:, [2, 0]]]), axis=1)
    e = len(np.unique(edges, axis=0))
    return v - e + len(mesh.faces)


def edge_use_counts(mesh):
    edges = np.sort(np.concatenate([mesh.faces[:, [0, 1]], mesh.faces[:, [1, 2]],
                                    mesh.faces[:, [2, 0]]]), axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return counts


# ---------------------------------------------------------------------------
# grid sampling

def test_constant_model_fills_grid():
    grid = sample_tsdf_grid(lambda x: np.full(len(x), 0.1), res=8)
    assert grid.values.shape == (9, 9, 9)
    assert np.all(grid.values == 0.1)


def test_grid_matches_truncated_sphere_closed_form():
    model = sphere_model()
    grid = sample_tsdf_grid(model, res=16)
    axes = np.linspace(-1, 1, 17)
    pts = np.stack(np.meshgrid(axes, axes, axes, indexing="ij"), axis=-1)
    expect = np.clip(np.linalg.norm(pts, axis=-1) - 0.5, -0.1, 0.1)
    np.testing.assert_array_equal(grid.values, expect)


def test_grid_ignores_evaluation_chunking():
    model = sphere_model()
    a = sample_tsdf_grid(model, res=12, chunk=50)
    b = sample_tsdf_grid(model, res=12, chunk=10**6)
    np.testing.assert_array_equal(a.values, b.values)


def test_grid_box_must_stay_inside_scene():
    with pytest.raises(ValueError, match="scene box"):
        sample_tsdf_grid(sphere_model(), res=4, lo=[-2, 0, 0], hi=[1, 1, 1])


def test_grid_spacing_uses_subbox():
    grid = sample_tsdf_grid(sphere_model(), res=10, lo=[-0.5] * 3, hi=[0.5] * 3)
    np.testing.assert_allclose(grid.spacing(), 0.1)


# ---------------------------------------------------------------------------
# marching cubes

def test_all_positive_grid_gives_empty_mesh():
    grid = ScalarGrid(np.full((5, 5, 5), 0.1), np.full(3, -1.0), np.full(3, 1.0))
    mesh = marching_cubes(grid)
    assert len(mesh.verts) == 0
    assert len(mesh.faces) == 0


def test_nan_grid_rejected():
    vals = np.full((4, 4, 4), 0.1)
    vals[1, 2, 3] = np.nan
    grid = ScalarGrid(vals, np.full(3, -1.0), np.full(3, 1.0))
    with pytest.raises(ValueError, match="NaN"):
        marching_cubes(grid)


def test_single_flipped_corner_yields_one_triangle():
    vals = np.full((2, 2, 2), 1.0)
    vals[0, 0, 0] = -1.0
    grid = ScalarGrid(vals, np.zeros(3), np.ones(3))
    mesh = marching_cubes(grid)
    assert len(mesh.faces) == 1
    assert len(mesh.verts) == 3
    # crossings sit at the midpoint of each edge leaving the flipped corner
    expect = {(0.5, 0.0, 0.0), (0.0, 0.5, 0.0), (0.0, 0.0, 0.5)}
    got = {tuple(np.round(v, 12)) for v in mesh.verts}
    assert got == expect


def test_sphere_mesh_is_closed_with_sphere_topology():
    grid = sample_tsdf_grid(sphere_model(), res=64)
    mesh = marching_cubes(grid)
    assert len(mesh.faces) > 1000
    assert euler_characteristic(mesh) == 2
    assert np.all(edge_use_counts(mesh) == 2)
    cell_diag = np.linalg.norm(grid.spacing())
    sdf = np.abs(np.linalg.norm(mesh.verts, axis=1) - 0.5)
    assert sdf.max() < 1.5 * cell_diag


def test_torus_mesh_has_genus_one():
    spec_sdf = lambda x: scenes.sdf_torus(x, 0.5, 0.2)
    grid = sample_tsdf_grid(FakeModel(spec_sdf), res=96)
    mesh = marching_cubes(grid)
    assert euler_characteristic(mesh) == 0
    assert np.all(edge_use_counts(mesh) == 2)


def test_iso_parameter_shifts_level_set():
    # a density-style grid extracted at 0.5 instead of 0; radius chosen so
    # the level set never passes exactly through a grid corner
    sdf = lambda x: np.linalg.norm(x, axis=1) - 0.47
    grid = sample_tsdf_grid(lambda x: 0.5 - sdf(x), res=32)
    mesh = marching_cubes(grid, iso=0.5)
    r = np.linalg.norm(mesh.verts, axis=1)
    assert np.abs(r - 0.47).max() < 1.5 * np.linalg.norm(grid.spacing())
    assert euler_characteristic(mesh) == 2


def test_mesh_invariant_under_grid_evaluation_order():
    model = sphere_model()
    res = 24
    ref = sample_tsdf_grid(model, res=res)

    side = res + 1
    axes = np.linspace(-1, 1, side)
    idx = np.random.default_rng(3).permutation(side ** 3)
    pts = np.stack([axes[idx // (side * side)], axes[(idx // side) % side],
                    axes[idx % side]], axis=1)
    vals = np.empty(side ** 3)
    vals[idx] = model.tsdf_np(pts)
    shuffled = ScalarGrid(vals.reshape(side, side, side), ref.lo, ref.hi)

    a = marching_cubes(ref)
    b = marching_cubes(shuffled)
    np.testing.assert_array_equal(a.verts, b.verts)
    np.testing.assert_array_equal(a.faces, b.faces)


@pytest.mark.parametrize("shape,sdf_fn", [
    ("sphere", lambda x: scenes.sdf_sphere(x, 0.5)),
    ("torus", lambda x: scenes.sdf_torus(x, 0.5, 0.2)),
    ("box", lambda x: scenes.sdf_box(x, [0.4, 0.3, 0.5])),
    ("two_spheres", lambda x: scenes.sdf_two_spheres(
        x, [[-0.4, 0, 0], [0.45, 0, 0]], [0.3, 0.25])),
])
def test_hausdorff_below_cell_diagonal(shape, sdf_fn):
    res = 48
    grid = sample_tsdf_grid(FakeModel(sdf_fn), res=res)
    mesh = marching_cubes(grid)
    cell_diag = np.linalg.norm(grid.spacing())
    rng = np.random.default_rng(11)

    on_mesh = sample_mesh_surface(mesh, 10_000, rng)
    assert np.abs(sdf_fn(on_mesh)).max() < cell_diag

    # points on the true surface by sphere-projecting near-surface samples
    probes = rng.uniform(-1, 1, (40_000, 3))
    probes = probes[np.abs(sdf_fn(probes)) < 0.2][:10_000]
    for _ in range(30):
        d = sdf_fn(probes)
        g = FakeModel(sdf_fn).normal_np(probes)
        probes = probes - g * d[:, None]
    assert np.abs(sdf_fn(probes)).max() < 1e-5
    assert points_to_mesh_distance(probes, mesh).max() < cell_diag


def test_chamfer_to_sphere_non_increasing_in_resolution():
    model = sphere_model()
    rng = np.random.default_rng(5)
    sphere_pts = rng.normal(size=(10_000, 3))
    sphere_pts *= 0.5 / np.linalg.norm(sphere_pts, axis=1, keepdims=True)

    values = []
    for res in (32, 64, 128):
        mesh = marching_cubes(sample_tsdf_grid(model, res=res))
        on_mesh = sample_mesh_surface(mesh, 10_000, np.random.default_rng(6))
        d_fwd = np.abs(np.linalg.norm(on_mesh, axis=1) - 0.5).mean()
        d_bwd = points_to_mesh_distance(sphere_pts, mesh).mean()
        values.append(d_fwd + d_bwd)
    assert values[1] <= values[0] + 1e-4
    assert values[2] <= values[1] + 1e-4


# ---------------------------------------------------------------------------
# vertex baking

def test_constant_feature_model_bakes_equal_vertices():
    model = sphere_model()
    model.features_np = lambda x: np.full((len(x), 8), 0.25)
    mesh = marching_cubes(sample_tsdf_grid(model, res=16))
    fm = bake_vertex_features(mesh, model)
    assert fm.mode == "vertex"
    assert np.all(fm.features == 0.25)
    assert fm.features.shape == (len(mesh.verts), 8)


def test_duplicated_vertex_positions_get_identical_features():
    model = sphere_model()
    verts = np.array([[0.1, 0.2, 0.3], [0.4, 0.1, 0.0], [0.0, 0.5, 0.1],
                      [0.1, 0.2, 0.3]])
    mesh = TriMesh(verts, np.array([[0, 1, 2], [3, 1, 2]]))
    fm = bake_vertex_features(mesh, model)
    np.testing.assert_array_equal(fm.features[0], fm.features[3])
    np.testing.assert_array_equal(fm.mesh.normals[0], fm.mesh.normals[3])


def test_baked_normals_agree_with_mesh_geometry():
    model = sphere_model()
    mesh = marching_cubes(sample_tsdf_grid(model, res=48))
    fm = bake_vertex_features(mesh, model)
    # geometric vertex normal: area-weighted average of incident face normals
    tri = mesh.verts[mesh.faces]
    fn = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    acc = np.zeros_like(mesh.verts)
    for c in range(3):
        np.add.at(acc, mesh.faces[:, c], fn)
    acc /= np.maximum(np.linalg.norm(acc, axis=1, keepdims=True), 1e-12)
    dots = np.abs((acc * fm.mesh.normals).sum(axis=1))
    assert dots.mean() > 0.95


def test_bake_features_selects_vertex_mode_for_small_meshes():
    model = sphere_model()
    mesh = marching_cubes(sample_tsdf_grid(model, res=12))
    assert bake_features(mesh, model).mode == "vertex"
    assert bake_features(mesh, model, mode="atlas").mode == "atlas"


# ---------------------------------------------------------------------------
# texture atlas

def triangle_mesh(verts):
    return TriMesh(np.asarray(verts, dtype=np.float64),
                   np.arange(len(verts), dtype=np.int64).reshape(-1, 3))


def sample_atlas(fm, face, bary):
    uv = (fm.uvs[face] * np.asarray(bary)[:, None]).sum(axis=0)
    side = fm.atlas.shape[0]
    u = min(int(uv[0] * side), side - 1)
    v = min(int(uv[1] * side), side - 1)
    return fm.atlas[u, v]


def test_single_triangle_atlas_is_one_square():
    model = sphere_model()
    mesh = triangle_mesh([[0, 0, 0], [0.5, 0, 0], [0, 0.5, 0]])
    fm = build_face_texture(mesh, model)
    assert fm.atlas.shape == (4, 4, 8)
    assert fm.uvs.shape == (1, 3, 2)
    assert np.all(fm.atlas >= 0) and np.all(fm.atlas <= 1)


def test_interior_texels_match_direct_queries():
    model = sphere_model()
    tri = np.array([[0, 0, 0], [0.5, 0, 0], [0, 0.5, 0]])
    fm = build_face_texture(triangle_mesh(tri), model)
    corners = fm.uvs[0] * 4.0  # pixel units in the single square
    for iu in range(4):
        for iv in range(4):
            p = np.array([iu + 0.5, iv + 0.5])
            m = np.array([[corners[1] - corners[0]], [corners[2] - corners[0]]])
            lam12 = np.linalg.solve(m.reshape(2, 2).T, p - corners[0])
            lam = np.array([1 - lam12.sum(), *lam12])
            if lam.min() < 0:
                continue  # padding texel, filled from the clamped point
            surf = (tri * lam[:, None]).sum(axis=0)
            expect = model.features_np(surf[None])[0]
            assert np.abs(fm.atlas[iu, iv] - expect).max() <= 1.0 / 255.0


def test_two_faces_share_one_square_without_uv_overlap():
    model = sphere_model()
    mesh = triangle_mesh([[0, 0, 0], [0.5, 0, 0], [0, 0.5, 0],
                          [0, 0, 0.2], [0.5, 0, 0.2], [0, 0.5, 0.2]])
    fm = build_face_texture(mesh, model)
    assert fm.atlas.shape == (4, 4, 8)
    px = fm.uvs * 4.0
    # the two UV triangles sit on opposite sides of the square diagonal
    assert np.all(px[0].sum(axis=1) <= 4.0 + 1e-12)
    assert np.all(px[1].sum(axis=1) >= 4.0 - 1e-12)


def test_atlas_triangles_stay_inside_their_square():
    model = sphere_model()
    mesh = marching_cubes(sample_tsdf_grid(model, res=16))
    fm = build_face_texture(mesh, model)
    side = fm.atlas.shape[0]
    px = fm.uvs * side
    sq = np.floor(px[:, 0, :] / fm.tri_side) * fm.tri_side
    local = px - sq[:, None, :]
    assert np.all(local >= 0.5 - 1e-9)
    assert np.all(local <= fm.tri_side - 0.5 + 1e-9)
    parity = np.arange(len(fm.uvs)) % 2
    sums = local.sum(axis=2)
    assert np.all(sums[parity == 0] <= fm.tri_side + 1e-9)
    assert np.all(sums[parity == 1] >= fm.tri_side - 1e-9)


def test_atlas_round_trip_at_face_centroids():
    model = sphere_model()
    mesh = marching_cubes(sample_tsdf_grid(model, res=12))
    fm = build_face_texture(mesh, model)
    rng = np.random.default_rng(0)
    for face in rng.choice(len(mesh.faces), size=32, replace=False):
        centroid = mesh.verts[mesh.faces[face]].mean(axis=0)
        expect = model.features_np(centroid[None])[0]
        got = sample_atlas(fm, face, [1 / 3, 1 / 3, 1 / 3])
        assert np.abs(got - expect).max() <= 2.0 / 255.0


def test_texel_center_quantization_bound():
    model = sphere_model()
    mesh = marching_cubes(sample_tsdf_grid(model, res=10))
    fm = build_face_texture(mesh, model)
    # every written texel holds a quantized direct query of some surface point
    filled = fm.atlas.reshape(-1, 8)
    assert filled.min() >= 0.0 and filled.max() <= 1.0
    scaled = filled * 255.0
    np.testing.assert_allclose(scaled, np.rint(scaled), atol=1e-9)


def test_oversized_mesh_rejected_with_vertex_mode_advice(monkeypatch):
    model = sphere_model()
    mesh = marching_cubes(sample_tsdf_grid(model, res=16))
    monkeypatch.setattr(meshing, "MAX_ATLAS_SIDE", 8)
    with pytest.raises(ValueError, match="vertex"):
        build_face_texture(mesh, model)


def test_atlas_side_growth():
    assert meshing._atlas_side_for(1, 4) == 4
    assert meshing._atlas_side_for(2, 4) == 4
    assert meshing._atlas_side_for(3, 4) == 8
    assert meshing._atlas_side_for(8, 4) == 8
    assert meshing._atlas_side_for(9, 4) == 16
    too_many = 2 * (meshing.MAX_ATLAS_SIDE // 4) ** 2 + 1
    assert meshing._atlas_side_for(too_many, 4) > meshing.MAX_ATLAS_SIDE


def test_empty_mesh_has_no_atlas():
    model = sphere_model()
    with pytest.raises(ValueError, match="empty"):
        build_face_texture(TriMesh(np.zeros((0, 3)), np.zeros((0, 3), np.int64)),
                           model)


# ---------------------------------------------------------------------------
# OBJ, sidecar, bundle round-trips

def test_obj_round_trip_vertex_mode(tmp_path):
    model = sphere_model()
    mesh = marching_cubes(sample_tsdf_grid(model, res=10))
    fm = bake_vertex_features(mesh, model)
    path = tmp_path / "mesh.obj"
    write_obj(path, fm)
    verts, faces, normals, uvs = read_obj(path)
    np.testing.assert_array_equal(verts, mesh.verts)
    np.testing.assert_array_equal(faces, mesh.faces)
    np.testing.assert_array_equal(normals, fm.mesh.normals)
    assert uvs is None


def test_obj_round_trip_atlas_mode(tmp_path):
    model = sphere_model()
    mesh = marching_cubes(sample_tsdf_grid(model, res=10))
    fm = build_face_texture(mesh, model)
    path = tmp_path / "mesh.obj"
    write_obj(path, fm)
    verts, faces, normals, uvs = read_obj(path)
    np.testing.assert_array_equal(verts, mesh.verts)
    np.testing.assert_array_equal(faces, mesh.faces)
    np.testing.assert_array_equal(uvs, fm.uvs)


def test_sidecar_round_trip_vertex(tmp_path):
    feats = np.random.default_rng(1).uniform(0, 1, (17, 8)).astype(np.float32)
    fm = FeaturedMesh(mesh=TriMesh(np.zeros((17, 3)), np.zeros((5, 3), np.int64)),
                      mode="vertex", features=feats.astype(np.float64))
    path = tmp_path / "mesh.feat"
    write_feat_sidecar(path, fm)
    mode, count, data = read_feat_sidecar(path)
    assert mode == "vertex" and count == 17
    np.testing.assert_array_equal(data, feats.astype(np.float64))


def test_sidecar_round_trip_atlas(tmp_path):
    fm = FeaturedMesh(mesh=TriMesh(np.zeros((3, 3)), np.zeros((9, 3), np.int64)),
                      mode="atlas", atlas=np.zeros((4, 4, 8)),
                      uvs=np.zeros((9, 3, 2)))
    path = tmp_path / "mesh.feat"
    write_feat_sidecar(path, fm)
    mode, count, data = read_feat_sidecar(path)
    assert mode == "atlas" and count == 9 and data is None


def test_sidecar_rejects_wrong_magic(tmp_path):
    path = tmp_path / "mesh.feat"
    path.write_bytes(b"NOTAFEAT" + b"\x00" * 9)
    with pytest.raises(ValueError, match="sidecar"):
        read_feat_sidecar(path)


def test_sidecar_rejects_truncated_payload(tmp_path):
    import struct

    path = tmp_path / "mesh.feat"
    path.write_bytes(b"MDFEAT01" + struct.pack("<BII", 0, 10, 8) + b"\x00" * 16)
    with pytest.raises(ValueError, match="truncated"):
        read_feat_sidecar(path)


def make_tiny_ssan():
    from meshdistill.ssan import SsanConfig, SsanModel

    cfg = SsanConfig(n_levels=4, table_size=2 ** 12, n_features=2,
                     n_min=4, n_max=32, hidden=16)
    return SsanModel(np.random.default_rng(0), cfg)


def test_bundle_round_trip_vertex_mode(tmp_path):
    fake = sphere_model()
    mesh = marching_cubes(sample_tsdf_grid(fake, res=10))
    fm = bake_vertex_features(mesh, fake)
    model = make_tiny_ssan()
    out = tmp_path / "bundle"
    save_bundle(out, fm, model)
    for name in ("mesh.obj", "mesh.feat", "appearance.ckpt", "bundle.json"):
        assert (out / name).exists()

    loaded, eta = load_bundle(out)
    assert loaded.mode == "vertex"
    np.testing.assert_array_equal(loaded.mesh.verts, fm.mesh.verts)
    np.testing.assert_allclose(loaded.features, fm.features, atol=1e-7)

    rng = np.random.default_rng(2)
    f = rng.uniform(0, 1, (5, 8))
    n = rng.normal(size=(5, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    d = rng.normal(size=(5, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    np.testing.assert_allclose(eta(f, n, d), model.eta_np(f, n, d), atol=1e-6)


def test_bundle_round_trip_atlas_mode(tmp_path):
    fake = sphere_model()
    mesh = marching_cubes(sample_tsdf_grid(fake, res=10))
    fm = build_face_texture(mesh, fake)
    out = tmp_path / "bundle"
    save_bundle(out, fm, make_tiny_ssan())
    assert (out / "feat0.png").exists() and (out / "feat1.png").exists()

    loaded, _ = load_bundle(out)
    assert loaded.mode == "atlas"
    np.testing.assert_array_equal(loaded.atlas, fm.atlas)
    np.testing.assert_allclose(loaded.uvs, fm.uvs, atol=1e-15)


def test_load_bundle_requires_manifest(tmp_path):
    with pytest.raises(ValueError, match="bundle.json"):
        load_bundle(tmp_path)


def test_load_bundle_detects_mode_mismatch(tmp_path):
    fake = sphere_model()
    mesh = marching_cubes(sample_tsdf_grid(fake, res=10))
    fm = bake_vertex_features(mesh, fake)
    out = tmp_path / "bundle"
    save_bundle(out, fm, make_tiny_ssan())
    meta = (out / "bundle.json").read_text().replace("vertex", "atlas")
    (out / "bundle.json").write_text(meta)
    with pytest.raises(ValueError, match="mode"):
        load_bundle(out)
