"""Radiance field representations: trainable hash-grid field and analytic oracle.

Both expose the same frozen-query interface (sigma_np / rgb_np) used by the
volumetric renderer; the trainable field additionally provides graph-building
queries for the training loop.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import diffcore as dc
from .encoding import HashEncoder, frequency_encode


class MLP:
    """Plain fully connected ReLU network built on diffcore tensors."""

    def __init__(self, rng: np.random.Generator, dims: list[int],
                 dtype=np.float32):
        self.dims = list(dims)
        self.layers: list[tuple[dc.Tensor, dc.Tensor]] = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            self.layers.append(dc.linear_init(rng, fan_in, fan_out, dtype=dtype))

    def __call__(self, x: dc.Tensor) -> dc.Tensor:
        for i, (w, b) in enumerate(self.layers):
            x = x @ w + b
            if i < len(self.layers) - 1:
                x = dc.relu(x)
        return x

    def params(self, prefix: str) -> dict[str, dc.Tensor]:
        out = {}
        for i, (w, b) in enumerate(self.layers):
            out[f"{prefix}.w{i}"] = w
            out[f"{prefix}.b{i}"] = b
        return out

    def state(self, prefix: str) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.params(prefix).items()}

    def load_state(self, state: dict[str, np.ndarray], prefix: str) -> None:
        for k, t in self.params(prefix).items():
            arr = state[k]
            if arr.shape != t.data.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {t.data.shape}")
            t.data = arr.astype(t.data.dtype).copy()


class RadianceField:
    """Hash-encoded density + view-conditioned color field.

    query(x, d) follows the usual split: the geometry path produces density
    and a feature vector; the color head consumes the feature together with a
    4-frequency sinusoidal encoding of the view direction.
    """

    def __init__(self, rng: np.random.Generator, n_levels: int = 8,
                 table_size: int = 2 ** 15, n_features: int = 2,
                 n_min: int = 16, n_max: int = 256, hidden: int = 64,
                 geo_feat_dim: int = 15, n_freqs: int = 4, dtype=np.float32):
        self.dtype = dtype
        self.n_freqs = n_freqs
        self.encoder = HashEncoder(rng, n_levels=n_levels, table_size=table_size,
                                   n_features=n_features, n_min=n_min,
                                   n_max=n_max, dtype=dtype)
        self.geo_feat_dim = geo_feat_dim
        self.density_mlp = MLP(rng, [self.encoder.out_dim, hidden,
                                     1 + geo_feat_dim], dtype=dtype)
        dir_dim = 3 * (2 * n_freqs + 1)
        self.color_mlp = MLP(rng, [geo_feat_dim + dir_dim, hidden, hidden, 3],
                             dtype=dtype)

    def params(self) -> dict[str, dc.Tensor]:
        out = self.encoder.params("nerf.hash")
        out.update(self.density_mlp.params("nerf.density"))
        out.update(self.color_mlp.params("nerf.color"))
        return out

    def _geometry(self, x: np.ndarray) -> tuple[dc.Tensor, dc.Tensor]:
        h = self.density_mlp(self.encoder.encode(x))
        sigma = dc.softplus(dc.narrow(h, 1, 0, 1))
        feat = dc.narrow(h, 1, 1, self.geo_feat_dim)
        return sigma, feat

    def query(self, x: np.ndarray, d: np.ndarray) -> tuple[dc.Tensor, dc.Tensor]:
        """Differentiable query: (sigma (N, 1), rgb (N, 3)) tensors."""
        sigma, feat = self._geometry(x)
        enc_d = frequency_encode(d, self.n_freqs).astype(self.dtype)
        rgb = dc.sigmoid(self.color_mlp(dc.concat([feat, dc.Tensor(enc_d)], axis=1)))
        self._check_finite(sigma, rgb)
        return sigma, rgb

    def sigma_np(self, x: np.ndarray) -> np.ndarray:
        with dc.no_grad():
            sigma, _ = self._geometry(x)
        return sigma.data[:, 0].astype(np.float64)

    def rgb_np(self, x: np.ndarray, d: np.ndarray) -> np.ndarray:
        with dc.no_grad():
            _, rgb = self.query(x, d)
        return rgb.data.astype(np.float64)

    @staticmethod
    def _check_finite(*tensors: dc.Tensor) -> None:
        for t in tensors:
            if not np.isfinite(t.data).all():
                raise FloatingPointError("radiance field produced non-finite values")

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.params().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, t in self.params().items():
            if k not in state:
                raise ValueError(f"checkpoint missing tensor {k}")
            if state[k].shape != t.data.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {t.data.shape}")
            t.data = state[k].astype(t.data.dtype).copy()


class AnalyticField:
    """Oracle field: hard density step on an exact SDF, known albedo.

    sigma(x) = sigma_max where sdf(x) < 0, else 0.  Used both to render
    ground-truth images and as the frozen field for oracle distillation.
    """

    def __init__(self, sdf: Callable[[np.ndarray], np.ndarray],
                 albedo: Callable[[np.ndarray], np.ndarray],
                 sigma_max: float = 1e3):
        self.sdf = sdf
        self.albedo = albedo
        self.sigma_max = float(sigma_max)

    def sigma_np(self, x: np.ndarray) -> np.ndarray:
        return np.where(self.sdf(x) < 0.0, self.sigma_max, 0.0)

    def rgb_np(self, x: np.ndarray, d: np.ndarray) -> np.ndarray:
        return np.clip(self.albedo(x), 0.0, 1.0)
