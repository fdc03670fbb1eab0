"""Pipeline configuration: one flat, versioned key=value document.

Every tunable default of the pipeline lives here so a single file pins an
entire run.  The format is plain text, one ``key = value`` per line, with
``#`` comments and blank lines ignored.  Unknown keys are rejected rather
than silently dropped, and the ``version`` field must match
:data:`CONFIG_VERSION`.  Command-line overrides reuse the same ``key=value``
syntax.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from . import nerf, ssan
from .ioutil import atomic_write_text

CONFIG_VERSION = 1

ATLAS_MODES = ("auto", "vertex", "atlas")


@dataclass
class PipelineConfig:
    version: int = CONFIG_VERSION
    seed: int = 0

    # scene datasets
    n_views: int = 32
    image_size: int = 64
    rig_radius: float = 2.0
    fov_deg: float = 50.0
    gt_samples: int = 512
    background: float = 1.0

    # radiance field architecture
    nerf_levels: int = 8
    nerf_table_size: int = 2 ** 15
    nerf_features: int = 2
    nerf_n_min: int = 16
    nerf_n_max: int = 256
    nerf_hidden: int = 64

    # radiance field training
    nerf_steps: int = 5000
    nerf_batch_rays: int = 256
    nerf_samples: int = 64
    nerf_lr: float = 5e-3

    # distilled surface/appearance network architecture
    ssan_levels: int = 8
    ssan_table_size: int = 2 ** 15
    ssan_features: int = 2
    ssan_n_min: int = 16
    ssan_n_max: int = 256
    ssan_hidden: int = 64
    ssan_freqs: int = 4
    share_encoder: bool = False

    # distillation
    distill_steps: int = 5000
    distill_batch_rays: int = 512
    distill_samples: int = 256
    percentile_lo: float = 16.0
    percentile_hi: float = 84.0
    distill_lr: float = 5e-3
    fd_step: float = 1e-3
    use_projection: bool = True
    proj_steps: int = 4
    proj_rate: float = 0.05
    carve_res: int = 48
    carve_points: int = 256
    min_opacity_rays: int = 8

    # distillation loss weights
    w_surface: float = 1.0
    w_normal: float = 0.1
    w_smooth: float = 0.01
    w_orient: float = 0.01
    w_color: float = 1.0
    w_carve: float = 0.1
    band_eps: float = 0.1
    slope_target: float = 10.0

    # mesh extraction and baking
    grid_res: int = 128
    atlas_mode: str = "auto"
    tri_side: int = 4

    # evaluation
    mask_res: int = 256
    eval_points: int = 100_000

    def __post_init__(self):
        if self.version != CONFIG_VERSION:
            raise ValueError(
                f"config version {self.version} unsupported "
                f"(expected {CONFIG_VERSION})")
        if self.atlas_mode not in ATLAS_MODES:
            raise ValueError(f"atlas_mode must be one of {ATLAS_MODES}")

    # -- views over module configs ------------------------------------

    def nerf_train_config(self) -> nerf.NerfTrainConfig:
        return nerf.NerfTrainConfig(
            steps=self.nerf_steps, batch_rays=self.nerf_batch_rays,
            n_samples=self.nerf_samples, lr=self.nerf_lr, seed=self.seed,
            background=self.background)

    def field_kwargs(self) -> dict:
        return dict(n_levels=self.nerf_levels, table_size=self.nerf_table_size,
                    n_features=self.nerf_features, n_min=self.nerf_n_min,
                    n_max=self.nerf_n_max, hidden=self.nerf_hidden)

    def ssan_config(self) -> ssan.SsanConfig:
        return ssan.SsanConfig(
            n_levels=self.ssan_levels, table_size=self.ssan_table_size,
            n_features=self.ssan_features, n_min=self.ssan_n_min,
            n_max=self.ssan_n_max, hidden=self.ssan_hidden,
            n_freqs=self.ssan_freqs, share_encoder=self.share_encoder)

    def loss_weights(self) -> ssan.LossWeights:
        return ssan.LossWeights(
            w_i=self.w_surface, w_n=self.w_normal, w_s=self.w_smooth,
            w_o=self.w_orient, w_c=self.w_color, w_carve=self.w_carve,
            eps=self.band_eps, n_c=self.slope_target)

    def distill_config(self) -> ssan.DistillConfig:
        return ssan.DistillConfig(
            steps=self.distill_steps, batch_rays=self.distill_batch_rays,
            render_samples=self.distill_samples,
            percentile_lo=self.percentile_lo,
            percentile_hi=self.percentile_hi, lr=self.distill_lr,
            seed=self.seed, weights=self.loss_weights(),
            fd_step=self.fd_step, proj_steps=self.proj_steps,
            proj_rate=self.proj_rate, use_projection=self.use_projection,
            carve_res=self.carve_res, carve_points=self.carve_points,
            min_opacity_rays=self.min_opacity_rays,
            ssan=self.ssan_config())


_FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def _parse_value(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    if kind in ("bool", bool):
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if kind in ("int", int):
        return int(raw)
    if kind in ("float", float):
        return float(raw)
    return raw


def parse_config(text: str) -> PipelineConfig:
    """Parse a key=value document; unknown keys and bad values raise."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"line {lineno}: expected key = value")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        if key in values:
            raise ValueError(f"line {lineno}: duplicate config key {key!r}")
        try:
            values[key] = _parse_value(key, raw)
        except ValueError as e:
            raise ValueError(f"line {lineno}: {e}") from None
    return PipelineConfig(**values)


def load_config(path) -> PipelineConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def format_config(cfg: PipelineConfig) -> str:
    lines = ["# pipeline configuration"]
    for f in fields(PipelineConfig):
        lines.append(f"{f.name} = {getattr(cfg, f.name)}")
    return "\n".join(lines) + "\n"


def save_config(path, cfg: PipelineConfig) -> None:
    atomic_write_text(path, format_config(cfg))


def apply_overrides(cfg: PipelineConfig, overrides: list[str]
                    ) -> PipelineConfig:
    """Return a new config with key=value overrides applied on top."""
    values = {f.name: getattr(cfg, f.name) for f in fields(PipelineConfig)}
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r}: expected key=value")
        key, _, raw = item.partition("=")
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ValueError(f"unknown config key {key!r}")
        values[key] = _parse_value(key, raw)
    return PipelineConfig(**values)
