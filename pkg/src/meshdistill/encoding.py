"""Multiresolution hash-grid encoding.

Each level overlays a virtual grid of resolution N_l on the domain box.
Coarse levels whose (N_l + 1)^3 corners fit in the table are indexed
densely; finer levels fall back to the spatial hash

    h(x, y, z) = (x * 1  XOR  y * 2654435761  XOR  z * 805459861) mod T,

with uint32 wraparound and T a power of two.  A query point gathers its 8
surrounding corners per level and blends them trilinearly; the concatenated
per-level features are the encoding.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from . import diffcore as dc


def level_resolutions(n_levels: int, n_min: int, n_max: int) -> np.ndarray:
    """Geometric sequence of per-level grid resolutions."""
    if n_levels == 1:
        return np.array([n_min], dtype=np.int64)
    b = np.exp((np.log(n_max) - np.log(n_min)) / (n_levels - 1))
    return np.floor(n_min * b ** np.arange(n_levels)).astype(np.int64)


class HashEncoder:
    """Hash-grid encoder over the box [lo, hi]^3; output dim = levels * feat."""

    def __init__(self, rng: np.random.Generator, n_levels: int = 8,
                 table_size: int = 2 ** 15, n_features: int = 2,
                 n_min: int = 16, n_max: int = 256,
                 lo: float = -1.0, hi: float = 1.0, dtype=np.float32):
        if table_size & (table_size - 1):
            raise ValueError("table_size must be a power of two")
        self.n_levels = n_levels
        self.table_size = table_size
        self.n_features = n_features
        self.lo = lo
        self.hi = hi
        self.resolutions = level_resolutions(n_levels, n_min, n_max)
        init = rng.uniform(-1e-4, 1e-4,
                           size=(n_levels * table_size, n_features))
        self.table = dc.Tensor(init.astype(dtype), requires_grad=True)

    @property
    def out_dim(self) -> int:
        return self.n_levels * self.n_features

    def params(self, prefix: str = "hash") -> dict[str, dc.Tensor]:
        return {f"{prefix}.table": self.table}

    def corner_indices(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Table rows and trilinear weights for query points.

        x: (N, 3) in the domain box.  Returns (idx (N*L, 8) int64 rows into
        the stacked per-level table, w (N*L, 8) float64).
        """
        x = np.asarray(x, dtype=np.float64)
        x01 = np.ascontiguousarray((x - self.lo) / (self.hi - self.lo))
        return _kernels.hash_corners(x01, self.resolutions, self.table_size)

    def encode(self, x: np.ndarray) -> dc.Tensor:
        """(N, 3) points to (N, levels * feat) feature tensor."""
        n = x.shape[0]
        idx, w = self.corner_indices(x)
        feats = dc.trilerp(self.table, idx, w)
        return dc.reshape(feats, (n, self.n_levels * self.n_features))

    def state(self, prefix: str = "hash") -> dict[str, np.ndarray]:
        return {f"{prefix}.table": self.table.data}

    def load_state(self, state: dict[str, np.ndarray], prefix: str = "hash") -> None:
        self.table.data = state[f"{prefix}.table"].astype(self.table.data.dtype).copy()


def frequency_encode(d: np.ndarray, n_freqs: int = 4) -> np.ndarray:
    """Sin/cos features of the input at octave frequencies, plus the input.

    d: (N, C).  Returns (N, C * (2 * n_freqs + 1)) float64.
    """
    d = np.asarray(d, dtype=np.float64)
    parts = [d]
    for f in range(n_freqs):
        w = (2.0 ** f) * np.pi
        parts.append(np.sin(w * d))
        parts.append(np.cos(w * d))
    return np.concatenate(parts, axis=-1)
