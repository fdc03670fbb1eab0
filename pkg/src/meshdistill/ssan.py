"""Signed surface approximation network and its distillation from a field.

The model maps a point to a truncated signed distance t_hat in [-0.1, 0.1]
(scaled tanh), a unit normal n_hat, and an 8-dim appearance feature f_hat in
[0, 1]; a separate appearance network eta maps (f_hat, n_hat, encoded view
direction) to RGB.  Geometry and appearance use separate hash-grid branches
unless the shared-encoder ablation is enabled.

Distillation supervises the TSDF through depth percentiles of a frozen
radiance field: per ray, the 16th/50th/84th percentile depths give an
outside point (target +eps), a surface point (target 0), and an inside point
(target -eps); gradient-norm, normal-smoothness, and orientation losses
shape the field around the surface, and a color loss trains the appearance
path at points projected onto the zero level set.

An optional space-carving prior classifies a coarse voxel grid from the
frozen field's transmittance (free / inside / unknown) and pulls t_hat
toward +-eps at box-uniform samples; it fills in the sign far from the
percentile band and can be disabled by setting its weight to zero.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import diffcore as dc
from . import rendering
from .encoding import HashEncoder, frequency_encode
from .fields import MLP

TSDF_BOUND = 0.1


@dataclass
class SsanConfig:
    n_levels: int = 8
    table_size: int = 2 ** 15
    n_features: int = 2
    n_min: int = 16
    n_max: int = 256
    hidden: int = 64
    n_freqs: int = 4
    share_encoder: bool = False


class SsanModel:
    """Two-branch TSDF + appearance model with the eta appearance network."""

    def __init__(self, rng: np.random.Generator,
                 config: SsanConfig | None = None, dtype=np.float32):
        cfg = config or SsanConfig()
        self.config = cfg
        self.dtype = dtype
        enc_args = dict(n_levels=cfg.n_levels, table_size=cfg.table_size,
                        n_features=cfg.n_features, n_min=cfg.n_min,
                        n_max=cfg.n_max, dtype=dtype)
        self.geo_encoder = HashEncoder(rng, **enc_args)
        if cfg.share_encoder:
            self.app_encoder = self.geo_encoder
        else:
            self.app_encoder = HashEncoder(rng, **enc_args)
        enc_dim = self.geo_encoder.out_dim
        self.geo_mlp = MLP(rng, [enc_dim, cfg.hidden, cfg.hidden, 4],
                           dtype=dtype)
        # start everywhere-outside (t_hat ~ +0.08): unsupervised space then
        # carries no spurious zero crossings, matching the unknown-is-outside
        # convention of the carve prior
        self.geo_mlp.layers[-1][1].data[0] = 1.0
        self.app_mlp = MLP(rng, [enc_dim, cfg.hidden, 8], dtype=dtype)
        dir_dim = 3 * (2 * cfg.n_freqs + 1)
        self.eta_mlp = MLP(rng, [8 + 3 + dir_dim, 32, 32, 32, 32, 3],
                           dtype=dtype)

    # parameter groups -----------------------------------------------------
    def geometry_params(self) -> dict[str, dc.Tensor]:
        out = self.geo_encoder.params("ssan.geo.hash")
        out.update(self.geo_mlp.params("ssan.geo.mlp"))
        return out

    def appearance_params(self) -> dict[str, dc.Tensor]:
        out = {} if self.config.share_encoder else \
            self.app_encoder.params("ssan.app.hash")
        out.update(self.app_mlp.params("ssan.app.mlp"))
        out.update(self.eta_mlp.params("ssan.eta"))
        return out

    def params(self) -> dict[str, dc.Tensor]:
        out = self.geometry_params()
        out.update(self.appearance_params())
        return out

    # forward paths --------------------------------------------------------
    def geometry(self, x: np.ndarray) -> tuple[dc.Tensor, dc.Tensor]:
        """(t_hat (N, 1) in [-0.1, 0.1], n_hat (N, 3) unit)."""
        x = np.clip(x, rendering.SCENE_LO, rendering.SCENE_HI)
        h = self.geo_mlp(self.geo_encoder.encode(x))
        t_hat = dc.tanh(dc.narrow(h, 1, 0, 1)) * TSDF_BOUND
        n_hat = dc.normalize(dc.narrow(h, 1, 1, 3))
        if not np.isfinite(h.data).all():
            raise FloatingPointError("geometry branch produced non-finite values")
        return t_hat, n_hat

    def tsdf(self, x: np.ndarray) -> dc.Tensor:
        x = np.clip(x, rendering.SCENE_LO, rendering.SCENE_HI)
        h = self.geo_mlp(self.geo_encoder.encode(x))
        if not np.isfinite(h.data).all():
            raise FloatingPointError("geometry branch produced non-finite values")
        return dc.tanh(dc.narrow(h, 1, 0, 1)) * TSDF_BOUND

    def features(self, x: np.ndarray) -> dc.Tensor:
        """Appearance features f_hat (N, 8) in [0, 1]."""
        x = np.clip(x, rendering.SCENE_LO, rendering.SCENE_HI)
        out = dc.sigmoid(self.app_mlp(self.app_encoder.encode(x)))
        if not np.isfinite(out.data).all():
            raise FloatingPointError("appearance branch produced non-finite values")
        return out

    def forward(self, x: np.ndarray) -> tuple[dc.Tensor, dc.Tensor, dc.Tensor]:
        t_hat, n_hat = self.geometry(x)
        return t_hat, n_hat, self.features(x)

    def eta(self, f_hat: dc.Tensor, n_hat: dc.Tensor,
            d: np.ndarray) -> dc.Tensor:
        """Appearance network: (f_hat, n_hat, encoded d) -> RGB in [0, 1]."""
        enc_d = frequency_encode(d, self.config.n_freqs).astype(self.dtype)
        x = dc.concat([f_hat, n_hat, dc.Tensor(enc_d)], axis=1)
        out = dc.sigmoid(self.eta_mlp(x))
        if not np.isfinite(out.data).all():
            raise FloatingPointError("appearance network produced non-finite values")
        return out

    # frozen numpy queries ---------------------------------------------------
    def tsdf_np(self, x: np.ndarray) -> np.ndarray:
        with dc.no_grad():
            return self.tsdf(x).data[:, 0].astype(np.float64)

    def normal_np(self, x: np.ndarray) -> np.ndarray:
        with dc.no_grad():
            _, n = self.geometry(x)
            return n.data.astype(np.float64)

    def features_np(self, x: np.ndarray) -> np.ndarray:
        with dc.no_grad():
            return self.features(x).data.astype(np.float64)

    def eta_np(self, f: np.ndarray, n: np.ndarray, d: np.ndarray) -> np.ndarray:
        with dc.no_grad():
            return self.eta(dc.Tensor(f.astype(self.dtype)),
                            dc.Tensor(n.astype(self.dtype)), d).data.astype(np.float64)

    # checkpointing ----------------------------------------------------------
    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.params().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, t in self.params().items():
            if k not in state:
                raise ValueError(f"checkpoint missing tensor {k}")
            if state[k].shape != t.data.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {t.data.shape}")
            t.data = state[k].astype(t.data.dtype).copy()


def finite_diff_normal(model: SsanModel, x: np.ndarray, h: float = 1e-3,
                       flag_eps: float = 1e-6
                       ) -> tuple[dc.Tensor, dc.Tensor, np.ndarray]:
    """Central-difference TSDF gradient at x.

    Returns (unit normal (N, 3), raw gradient (N, 3), zero-gradient flag
    (N,)).  All six shifted evaluations stay on the tape, so losses built on
    the result backpropagate into the model.  Points whose gradient norm is
    numerically zero (below flag_eps) are flagged; their normalized
    direction is meaningless.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    shifts = []
    for a in range(3):
        dx = np.zeros(3)
        dx[a] = h
        shifts.append(x + dx)
        shifts.append(x - dx)
    t_all = model.tsdf(np.concatenate(shifts, axis=0))
    comps = []
    for a in range(3):
        tp = dc.narrow(t_all, 0, 2 * a * n, n)
        tm = dc.narrow(t_all, 0, (2 * a + 1) * n, n)
        comps.append((tp - tm) * (1.0 / (2.0 * h)))
    grad = dc.concat(comps, axis=1)
    flag = np.linalg.norm(grad.data, axis=1) < flag_eps
    return dc.normalize(grad), grad, flag


@dataclass
class PercentilePointBatch:
    """Per-ray supervision points rendered from the frozen field.

    Rays flagged low-opacity are excluded before construction, so every row
    carries valid percentile depths.
    """

    origins: np.ndarray     # (K, 3)
    dirs: np.ndarray        # (K, 3) unit
    colors: np.ndarray      # (K, 3) ground-truth pixel colors
    z_lo: np.ndarray        # (K,) outside-percentile depth
    z_mid: np.ndarray       # (K,) median depth
    z_hi: np.ndarray        # (K,) inside-percentile depth
    t_near: np.ndarray      # (K,) scene-box entry
    t_far: np.ndarray       # (K,) scene-box exit

    def __len__(self) -> int:
        return len(self.origins)

    def point(self, z: np.ndarray) -> np.ndarray:
        p = self.origins + z[:, None] * self.dirs
        return np.clip(p, rendering.SCENE_LO, rendering.SCENE_HI)


@dataclass
class LossWeights:
    w_i: float = 1.0
    w_n: float = 0.1
    w_s: float = 0.01
    w_o: float = 0.01
    w_c: float = 1.0
    w_carve: float = 0.1
    eps: float = 0.1
    n_c: float = 10.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v) or (f.name.startswith("w_") and v < 0):
                raise ValueError(f"invalid loss weight {f.name}={v}")
        if self.eps > TSDF_BOUND:
            raise ValueError("eps must not exceed the truncation bound")


def surface_loss(t_lo: dc.Tensor, t_mid: dc.Tensor, t_hi: dc.Tensor,
                 eps: float) -> dc.Tensor:
    """Mean of (t_lo - eps)^2 + t_mid^2 + (t_hi + eps)^2 over rays."""
    if t_lo.shape[0] == 0:
        raise ValueError("surface loss needs a non-empty batch")
    per_ray = (t_lo - eps) ** 2 + t_mid ** 2 + (t_hi + eps) ** 2
    return dc.tmean(per_ray)


def gradient_norm_loss(grad: dc.Tensor, flag: np.ndarray,
                       n_c: float) -> dc.Tensor:
    """Mean (|grad| - n_c)^2; zero-gradient points contribute n_c^2."""
    n = grad.shape[0]
    keep = np.nonzero(~flag)[0]
    const = float(flag.sum()) * n_c * n_c
    if len(keep) == 0:
        return dc.Tensor(np.asarray(const / n, dtype=grad.dtype))
    g = dc.gather_rows(grad, keep)
    norm = dc.sqrt(dc.tsum(g * g, axis=1, keepdims=True))
    total = dc.tsum((norm - n_c) ** 2) + const
    return total * (1.0 / n)


def smoothness_loss(fd_normal: dc.Tensor, n_hat: dc.Tensor,
                    flag: np.ndarray) -> dc.Tensor:
    """Mean squared difference between FD normals and the normal head.

    Both arguments receive gradients; zero-gradient-flagged rays are
    skipped.
    """
    keep = np.nonzero(~flag)[0]
    if len(keep) == 0:
        return dc.Tensor(np.zeros((), dtype=n_hat.dtype))
    d = dc.gather_rows(fd_normal, keep) - dc.gather_rows(n_hat, keep)
    return dc.tsum(d * d) * (1.0 / len(keep))


def orientation_loss(fd_normal: dc.Tensor, dirs: np.ndarray,
                     flag: np.ndarray) -> dc.Tensor:
    """Mean hinge max(0, N . d): surface normals should face the camera."""
    keep = np.nonzero(~flag)[0]
    if len(keep) == 0:
        return dc.Tensor(np.zeros((), dtype=fd_normal.dtype))
    n = dc.gather_rows(fd_normal, keep)
    d = dc.Tensor(dirs[keep].astype(fd_normal.dtype))
    dot = dc.tsum(n * d, axis=1, keepdims=True)
    return dc.tmean(dc.relu(dot))


def project_to_zero_level(model: SsanModel, batch: PercentilePointBatch,
                          z: np.ndarray, steps: int = 4,
                          rate: float = 0.05
                          ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Slide points along their rays toward the zero level set.

    Starting at depth z, iterates s <- clip(s + rate * t_hat(r(s)), t_near,
    t_far).  Positive t_hat (outside) pushes deeper along the view ray.
    Returns (projected depth l (K,), final |t_hat| (K,), failure flag (K,)
    set where |t_hat| did not decrease).
    """
    s = np.asarray(z, dtype=np.float64).copy()
    t0 = np.abs(model.tsdf_np(batch.point(s)))
    for _ in range(steps):
        t_val = model.tsdf_np(batch.point(s))
        s = np.clip(s + rate * t_val, batch.t_near, batch.t_far)
    t1 = np.abs(model.tsdf_np(batch.point(s)))
    return s, t1, t1 > t0


def appearance_loss(model: SsanModel, batch: PercentilePointBatch,
                    l_depth: np.ndarray) -> dc.Tensor:
    """Color loss at projected surface points.

    The geometry branch is detached: n_hat enters eta as a constant, so only
    the appearance branch and eta receive gradients.
    """
    if len(batch) == 0:
        return dc.Tensor(np.zeros((), dtype=model.dtype))
    pts = batch.point(l_depth)
    with dc.no_grad():
        _, n_hat = model.geometry(pts)
    f_hat = model.features(pts)
    c_hat = model.eta(f_hat, n_hat.detach(), batch.dirs)
    d = c_hat - dc.Tensor(batch.colors.astype(model.dtype))
    return dc.tmean(dc.tsum(d * d, axis=1, keepdims=True))


# ---------------------------------------------------------------------------
# space-carving prior

UNKNOWN, FREE, INSIDE, BAND = 0, 1, 2, 3


@dataclass
class CarveGrid:
    labels: np.ndarray  # (R, R, R) uint8 of the classes above
    res: int

    def lookup(self, x: np.ndarray) -> np.ndarray:
        cell = np.floor((x - rendering.SCENE_LO) /
                        (rendering.SCENE_HI - rendering.SCENE_LO) * self.res)
        cell = np.clip(cell, 0, self.res - 1).astype(np.int64)
        return self.labels[cell[:, 0], cell[:, 1], cell[:, 2]]

    def targets(self, x: np.ndarray, eps: float) -> np.ndarray:
        """Per-point TSDF target: +eps outside/unknown, -eps inside.

        BAND points (observed but near the surface) have no valid target;
        callers must drop them first.
        """
        lab = self.lookup(x)
        return np.where(lab == INSIDE, -eps, eps)


def build_carve_grid(sigma_fn, origins: np.ndarray, dirs: np.ndarray,
                     res: int = 48, n_samples: int = 192,
                     free_threshold: float = 0.98,
                     max_rays: int = 65536, seed: int = 0) -> CarveGrid:
    """Classify voxels from the frozen field's transmittance along rays.

    A voxel is FREE if any ray sample inside it still has transmittance
    above the threshold, INSIDE if rays traverse it but never freely, and
    UNKNOWN if no ray sample lands in it.  Both decided sets are eroded by
    one voxel; the eroded-away shell is labeled BAND (observed but too close
    to the surface to carry a target), while UNKNOWN keeps the outside
    target of unobserved space.
    """
    n = len(origins)
    if n > max_rays:
        pick = np.random.default_rng(seed).choice(n, size=max_rays,
                                                  replace=False)
        origins, dirs = origins[pick], dirs[pick]

    free = np.zeros((res, res, res), dtype=bool)
    visited = np.zeros((res, res, res), dtype=bool)
    chunk = max(1, 2 ** 20 // n_samples)
    for lo in range(0, len(origins), chunk):
        o = origins[lo:lo + chunk]
        d = dirs[lo:lo + chunk]
        t0, t1, hit = rendering.ray_box_intersect(o, d)
        if not hit.any():
            continue
        o, d, t0, t1 = o[hit], d[hit], t0[hit], t1[hit]
        t, delta = rendering.sample_depths(t0, t1, n_samples, 0,
                                           np.arange(len(o)), stratified=False)
        pts = o[:, None, :] + t[:, :, None] * d[:, None, :]
        flat = pts.reshape(-1, 3)
        sigma = np.asarray(sigma_fn(flat), dtype=np.float64).reshape(t.shape)
        tau = sigma * delta
        trans = np.exp(-(np.cumsum(tau, axis=1) - tau))
        cell = np.floor((flat - rendering.SCENE_LO) /
                        (rendering.SCENE_HI - rendering.SCENE_LO) * res)
        cell = np.clip(cell, 0, res - 1).astype(np.int64)
        is_free = (trans.reshape(-1) > free_threshold)
        visited[cell[:, 0], cell[:, 1], cell[:, 2]] = True
        fc = cell[is_free]
        free[fc[:, 0], fc[:, 1], fc[:, 2]] = True

    inside = visited & ~free
    labels = np.full((res, res, res), UNKNOWN, dtype=np.uint8)
    labels[visited] = BAND
    labels[_erode(free)] = FREE
    labels[_erode(inside)] = INSIDE
    return CarveGrid(labels=labels, res=res)


def _erode(mask: np.ndarray) -> np.ndarray:
    """Keep voxels whose 6-neighborhood (clamped at borders) is all set."""
    out = mask.copy()
    for a in range(3):
        lo = np.ones_like(mask)
        hi = np.ones_like(mask)
        sl_lo = [slice(None)] * 3
        sl_hi = [slice(None)] * 3
        sl_lo[a] = slice(1, None)
        sl_hi[a] = slice(None, -1)
        lo[tuple(sl_lo)] = mask[tuple(sl_hi)]
        hi[tuple(sl_hi)] = mask[tuple(sl_lo)]
        out &= lo & hi
    return out


def carve_loss(model: SsanModel, grid: CarveGrid, x: np.ndarray,
               eps: float) -> dc.Tensor:
    x = x[grid.lookup(x) != BAND]
    if len(x) == 0:
        return dc.Tensor(np.zeros((), dtype=model.dtype))
    t_hat = model.tsdf(x)
    target = grid.targets(x, eps)[:, None].astype(model.dtype)
    return dc.tmean((t_hat - target) ** 2)


# ---------------------------------------------------------------------------
# checkpointing with architecture metadata

_ARCH_KEY = "_arch"


def save_model(path, model: SsanModel) -> None:
    cfg = model.config
    state = model.state()
    state[_ARCH_KEY] = np.array([
        cfg.n_levels, cfg.table_size, cfg.n_features, cfg.n_min, cfg.n_max,
        cfg.hidden, cfg.n_freqs, int(cfg.share_encoder)], dtype=np.float32)
    dc.save_arrays(path, state)


def load_model(path) -> SsanModel:
    state = dc.load_arrays(path)
    if _ARCH_KEY not in state:
        raise ValueError(f"checkpoint {path} lacks model architecture metadata")
    a = state.pop(_ARCH_KEY).astype(np.int64)
    cfg = SsanConfig(n_levels=int(a[0]), table_size=int(a[1]),
                     n_features=int(a[2]), n_min=int(a[3]), n_max=int(a[4]),
                     hidden=int(a[5]), n_freqs=int(a[6]),
                     share_encoder=bool(a[7]))
    model = SsanModel(np.random.default_rng(0), cfg)
    model.load_state(state)
    return model


# ---------------------------------------------------------------------------
# distillation

@dataclass
class DistillConfig:
    steps: int = 5000
    batch_rays: int = 512
    render_samples: int = 256
    percentile_lo: float = 16.0
    percentile_hi: float = 84.0
    lr: float = 5e-3
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    fd_step: float = 1e-3
    proj_steps: int = 4
    proj_rate: float = 0.05
    use_projection: bool = True
    carve_res: int = 48
    carve_points: int = 256
    min_opacity_rays: int = 8
    ssan: SsanConfig = field(default_factory=SsanConfig)


def render_percentile_batch(sigma_fn, origins, dirs, colors, cfg: DistillConfig
                            ) -> PercentilePointBatch:
    """Render depth percentiles for a ray batch and drop flagged rays."""
    res = rendering.render_rays(sigma_fn, None, origins, dirs,
                                cfg.render_samples, stratified=False)
    z_lo, f1 = rendering.depth_percentile(res["alpha"], res["t"],
                                          cfg.percentile_lo)
    z_mid, f2 = rendering.depth_percentile(res["alpha"], res["t"], 50.0)
    z_hi, f3 = rendering.depth_percentile(res["alpha"], res["t"],
                                          cfg.percentile_hi)
    keep = res["hit"] & ~(f1 | f2 | f3)
    return PercentilePointBatch(
        origins=origins[keep], dirs=dirs[keep], colors=colors[keep],
        z_lo=z_lo[keep], z_mid=z_mid[keep], z_hi=z_hi[keep],
        t_near=res["t0"][keep], t_far=res["t1"][keep])


def distill_step(model: SsanModel, batch: PercentilePointBatch,
                 cfg: DistillConfig, rng: np.random.Generator,
                 carve: CarveGrid | None) -> dict[str, float]:
    """Build the combined loss for one batch and return component values.

    The caller owns tape reset, backward, and the optimizer step.
    """
    w = cfg.weights
    k = len(batch)
    t_lo = model.tsdf(batch.point(batch.z_lo))
    t_mid = model.tsdf(batch.point(batch.z_mid))
    t_hi = model.tsdf(batch.point(batch.z_hi))
    l_i = surface_loss(t_lo, t_mid, t_hi, w.eps)

    # gradient-norm loss at a fresh uniform depth between the percentiles
    delta_z = batch.z_lo + rng.random(k) * np.maximum(batch.z_hi - batch.z_lo, 0.0)
    _, grad_d, flag_d = finite_diff_normal(model, batch.point(delta_z),
                                           h=cfg.fd_step)
    l_n = gradient_norm_loss(grad_d, flag_d, w.n_c)

    # smoothness and orientation at the median-depth points
    p_mid = batch.point(batch.z_mid)
    fd_n, _, flag_m = finite_diff_normal(model, p_mid, h=cfg.fd_step)
    _, n_hat_mid = model.geometry(p_mid)
    l_s = smoothness_loss(fd_n, n_hat_mid, flag_m)
    l_o = orientation_loss(fd_n, batch.dirs, flag_m)

    if cfg.use_projection:
        with dc.no_grad():
            l_depth, _, _ = project_to_zero_level(
                model, batch, batch.z_mid, cfg.proj_steps, cfg.proj_rate)
    else:
        l_depth = batch.z_mid
    l_c = appearance_loss(model, batch, l_depth)

    total = l_i * w.w_i + l_n * w.w_n + l_s * w.w_s + l_o * w.w_o + l_c * w.w_c
    parts = {"surface": float(l_i.data), "grad_norm": float(l_n.data),
             "smooth": float(l_s.data), "orient": float(l_o.data),
             "color": float(l_c.data)}
    if carve is not None and w.w_carve > 0.0:
        x = rng.uniform(rendering.SCENE_LO, rendering.SCENE_HI,
                        size=(cfg.carve_points, 3))
        l_cv = carve_loss(model, carve, x, w.eps)
        total = total + l_cv * w.w_carve
        parts["carve"] = float(l_cv.data)
    else:
        parts["carve"] = 0.0
    parts["total"] = float(total.data)
    if not np.isfinite(parts["total"]):
        raise FloatingPointError(f"non-finite distill loss: {parts}")
    total.backward()
    return parts


def distill(model: SsanModel, sigma_fn, origins: np.ndarray,
            dirs: np.ndarray, colors: np.ndarray, cfg: DistillConfig,
            log_path=None) -> list[dict[str, float]]:
    """Train the SSAN against a frozen field; returns the per-step log.

    origins/dirs/colors are the flattened training rays with ground-truth
    pixel colors.  Deterministic for a fixed config and seed.
    """
    rng = np.random.default_rng(cfg.seed)
    carve = None
    if cfg.weights.w_carve > 0.0:
        carve = build_carve_grid(sigma_fn, origins, dirs, res=cfg.carve_res,
                                 n_samples=cfg.render_samples, seed=cfg.seed)
    opt = dc.Adam(model.params(), lr=cfg.lr)
    log: list[dict[str, float]] = []
    for step in range(cfg.steps):
        pick = rng.choice(len(origins), size=min(cfg.batch_rays, len(origins)),
                          replace=False)
        batch = render_percentile_batch(sigma_fn, origins[pick], dirs[pick],
                                        colors[pick], cfg)
        if len(batch) < cfg.min_opacity_rays:
            continue
        dc.reset_tape()
        opt.zero_grad()
        try:
            parts = distill_step(model, batch, cfg, rng, carve)
        except FloatingPointError as e:
            raise FloatingPointError(f"aborted at step {step}: {e}") from e
        opt.step()
        parts["step"] = step
        log.append(parts)
    dc.reset_tape()
    if log_path is not None and log:
        keys = ["step", "surface", "grad_norm", "smooth", "orient", "color",
                "carve", "total"]
        with open(log_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=keys)
            writer.writeheader()
            for row in log:
                writer.writerow({k: row[k] for k in keys})
    return log
