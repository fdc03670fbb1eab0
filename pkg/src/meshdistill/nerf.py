"""Radiance-field training on posed images.

Optimizes the hash-grid field photometrically: batches of rays are marched
with per-(ray, step) jittered stratified samples, composited front to back
with exclusive transmittance, blended over the background, and regressed to
the ground-truth pixels with MSE.  The compositing runs inside the autodiff
graph, so density receives gradients through the alpha weights.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from . import rendering
from .fields import RadianceField


@dataclass
class NerfTrainConfig:
    steps: int = 5000
    batch_rays: int = 256
    n_samples: int = 64
    lr: float = 5e-3
    seed: int = 0
    background: float = 1.0


def composite_batch(field: RadianceField, origins: np.ndarray,
                    dirs: np.ndarray, t: np.ndarray, delta: np.ndarray,
                    background: float) -> dc.Tensor:
    """Differentiable pixel colors (B, 3) for pre-sampled ray depths."""
    b, m = t.shape
    pts = origins[:, None, :] + t[:, :, None] * dirs[:, None, :]
    d_rep = np.repeat(dirs, m, axis=0)
    sigma, rgb = field.query(pts.reshape(-1, 3), d_rep)
    tau = dc.reshape(sigma, (b, m)) * delta.astype(sigma.dtype)
    cum = dc.cumsum(tau, axis=1)
    trans = dc.exp(-(cum - tau))           # exclusive transmittance
    alpha = trans * (1.0 - dc.exp(-tau))
    weights = dc.reshape(alpha, (b, m, 1))
    color = dc.tsum(weights * dc.reshape(rgb, (b, m, 3)), axis=1)
    t_end = dc.exp(-dc.narrow(cum, 1, m - 1, 1))
    return color + t_end * background


def train_nerf(field: RadianceField, origins: np.ndarray, dirs: np.ndarray,
               colors: np.ndarray, cfg: NerfTrainConfig,
               log_path=None) -> list[dict[str, float]]:
    """Photometric training loop; returns the per-step loss log.

    Rays that miss the scene box render the background with no gradient and
    are dropped from the batches up front.  Deterministic for a fixed
    config and seed: sample jitter is keyed on (global ray id, step).
    """
    _, _, hit = rendering.ray_box_intersect(origins, dirs)
    live = np.nonzero(hit)[0]
    if len(live) == 0:
        raise ValueError("no training rays intersect the scene box")
    rng = np.random.default_rng(cfg.seed)
    opt = dc.Adam(field.params(), lr=cfg.lr)
    log: list[dict[str, float]] = []
    for step in range(cfg.steps):
        pick = live[rng.choice(len(live),
                               size=min(cfg.batch_rays, len(live)),
                               replace=False)]
        o, d, gt = origins[pick], dirs[pick], colors[pick]
        t0, t1, _ = rendering.ray_box_intersect(o, d)
        t, delta = rendering.sample_depths(t0, t1, cfg.n_samples, cfg.seed,
                                           pick, step, stratified=True)
        dc.reset_tape()
        opt.zero_grad()
        try:
            pred = composite_batch(field, o, d, t, delta, cfg.background)
        except FloatingPointError as e:
            raise FloatingPointError(f"aborted at step {step}: {e}") from e
        diff = pred - dc.Tensor(gt.astype(pred.dtype))
        loss = dc.tmean(diff * diff)
        value = float(loss.data)
        if not np.isfinite(value):
            raise FloatingPointError(f"non-finite photometric loss at step {step}")
        loss.backward()
        opt.step()
        log.append({"step": step, "loss": value})
    dc.reset_tape()
    if log_path is not None and log:
        with open(log_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["step", "loss"])
            writer.writeheader()
            writer.writerows(log)
    return log


# ---------------------------------------------------------------------------
# checkpointing with architecture metadata

_ARCH_KEY = "_arch"


def save_field(path, field: RadianceField) -> None:
    state = field.state()
    state[_ARCH_KEY] = np.array([
        field.encoder.n_levels, field.encoder.table_size,
        field.encoder.n_features, field.encoder.resolutions[0],
        field.encoder.resolutions[-1], field.density_mlp.dims[1],
        field.geo_feat_dim, field.n_freqs], dtype=np.float32)
    dc.save_arrays(path, state)


def load_field(path) -> RadianceField:
    state = dc.load_arrays(path)
    if _ARCH_KEY not in state:
        raise ValueError(f"checkpoint {path} lacks field architecture metadata")
    arch = state.pop(_ARCH_KEY).astype(np.int64)
    field = RadianceField(
        np.random.default_rng(0), n_levels=int(arch[0]),
        table_size=int(arch[1]), n_features=int(arch[2]),
        n_min=int(arch[3]), n_max=int(arch[4]), hidden=int(arch[5]),
        geo_feat_dim=int(arch[6]), n_freqs=int(arch[7]))
    field.load_state(state)
    return field
