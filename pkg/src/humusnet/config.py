"""Run configuration: dataclasses, TOML I/O, validation and presets."""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import tomli
import tomli_w

from .autograd import DimensionError
from .swin import MustConfig

VARIANTS = ("humus", "un-ss", "un-ms", "un-ms-patch2", "unet-denoiser")


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    dir: str = "data/phantoms"
    volumes: int = 50
    slices: int = 8
    height: int = 64
    width: int = 64
    coils: int = 4
    acceleration: float = 4.0
    center_fraction: float = 0.08
    noise_sigma: float = 0.005
    seed: int = 0


@dataclass
class ModelConfig:
    variant: str = "humus"
    embed_dim: int = 12  # d; the HUMUS-Block uses d_H = d / 2
    window_size: int = 4
    levels: int = 3
    depth: int = 2
    heads: list[int] = field(default_factory=lambda: [3, 6, 12])
    bottleneck_heads: int = 24
    bottleneck_blocks: int = 2
    ss_blocks: int = 3
    ss_heads: int = 3
    mlp_ratio: float = 2.0
    patch_size: int = 1
    conv_depth: int = 2
    cascades: int = 2
    asr: int = 1
    sme_chans: int = 8  # 16 in the full-size model
    sme_pools: int = 2
    unet_chans: int = 8
    unet_pools: int = 2
    mu_init: float = 1.0
    normalize: bool = True
    zero_init_residual: bool = False

    @property
    def dim_high(self) -> int:
        return self.embed_dim // 2


@dataclass
class OptimConfig:
    lr: float = 1e-3
    epochs: int = 15
    lr_drop_epoch: int = 12
    lr_drop_factor: float = 0.1
    batch_size: int = 4
    seed: int = 0
    split: int = 0
    val_fraction: float = 0.2
    slices_per_volume: int = 0  # center slices drawn per volume per epoch; 0 = all


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    out: str = "runs/default"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        def build(kind, values):
            names = {f.name for f in fields(kind)}
            unknown = set(values) - names
            if unknown:
                raise ConfigError(f"unknown {kind.__name__} keys: {sorted(unknown)}")
            return kind(**values)

        unknown = set(raw) - {"data", "model", "optim", "out"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        return cls(
            data=build(DataConfig, raw.get("data", {})),
            model=build(ModelConfig, raw.get("model", {})),
            optim=build(OptimConfig, raw.get("optim", {})),
            out=raw.get("out", "runs/default"),
        )

    def copy(self) -> "RunConfig":
        return copy.deepcopy(self)


def load_config(path: str | Path) -> RunConfig:
    try:
        raw = tomli.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, tomli.TOMLDecodeError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    cfg = RunConfig.from_dict(raw)
    validate(cfg)
    return cfg


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(tomli_w.dumps(cfg.to_dict()), encoding="utf-8")


def must_config(m: ModelConfig) -> MustConfig:
    return MustConfig(
        dim=m.embed_dim, levels=m.levels, depth=m.depth, heads=tuple(m.heads),
        bottleneck_heads=m.bottleneck_heads, bottleneck_blocks=m.bottleneck_blocks,
        window_size=m.window_size, mlp_ratio=m.mlp_ratio, patch_size=m.patch_size,
    )


def _pow2(n: int) -> bool:
    return n >= 1 and not n & (n - 1)


def validate(cfg: RunConfig) -> None:
    """Raise :class:`ConfigError` with an actionable message on any inconsistency."""
    d, m, o = cfg.data, cfg.model, cfg.optim
    if not (_pow2(d.height) and _pow2(d.width)):
        raise ConfigError(f"image size {d.height}x{d.width}: both extents must be powers of two")
    if d.width / d.acceleration < round(d.width * d.center_fraction):
        raise ConfigError(
            f"acceleration {d.acceleration} keeps {d.width / d.acceleration:.1f} lines, fewer than "
            f"the {round(d.width * d.center_fraction)}-line center block; lower center_fraction"
        )
    if d.volumes < 2:
        raise ConfigError("need at least 2 volumes for a train/validation split")
    if m.variant not in VARIANTS:
        raise ConfigError(f"model.variant must be one of {VARIANTS}, got {m.variant!r}")
    if m.cascades < 1:
        raise ConfigError("model.cascades must be >= 1")
    if m.asr < 0:
        raise ConfigError("model.asr must be >= 0")
    if m.patch_size not in (1, 2):
        raise ConfigError(f"model.patch_size must be 1 or 2, got {m.patch_size}")
    if m.window_size < 1:
        raise ConfigError("model.window_size must be positive")
    try:
        if m.variant == "humus":
            if m.embed_dim % 2:
                raise ConfigError(f"humus needs an even embed_dim (d = 2 d_H), got {m.embed_dim}")
            must_config(m).validate(d.height // 2, d.width // 2)
        elif m.variant in ("un-ms", "un-ms-patch2"):
            must_config(m).validate(d.height, d.width)
        elif m.variant == "un-ss":
            if m.embed_dim % m.ss_heads:
                raise ConfigError(f"embed_dim {m.embed_dim} not divisible by ss_heads {m.ss_heads}")
            ws = min(m.window_size, d.height, d.width)
            if d.height % ws or d.width % ws:
                raise ConfigError(f"image {d.height}x{d.width} not divisible by window {ws}")
        elif m.variant == "unet-denoiser":
            mult = 1 << m.unet_pools
            if d.height % mult or d.width % mult:
                raise ConfigError(f"image must be a multiple of {mult} for {m.unet_pools} U-Net pools")
    except DimensionError as err:
        raise ConfigError(f"model/data mismatch: {err}") from err
    if (1 << m.sme_pools) > min(d.height, d.width):
        raise ConfigError("model.sme_pools too deep for the image size")
    if o.lr <= 0 or o.epochs < 1 or o.batch_size < 1:
        raise ConfigError("optim.lr, optim.epochs and optim.batch_size must be positive")
    if not 0 < o.val_fraction < 1:
        raise ConfigError("optim.val_fraction must lie in (0, 1)")


# Desk-scale presets.  Ablation rows keep the Table-style ratios between
# variants (embed 12:12:36:36) at half the width.


def preset(name: str) -> RunConfig:
    cfg = RunConfig()
    m = cfg.model
    if name in ("humus", "default"):
        pass
    elif name == "full-schedule":
        cfg.optim = OptimConfig(lr=1e-4, epochs=50, lr_drop_epoch=40, lr_drop_factor=0.1)
    elif name == "ablation-humus":
        m.embed_dim, m.asr = 18, 0
    elif name == "un-ss":
        m.variant, m.embed_dim, m.ss_blocks, m.ss_heads, m.asr = "un-ss", 6, 3, 3, 0
    elif name == "un-ms":
        m.variant, m.embed_dim, m.asr = "un-ms", 6, 0
    elif name == "un-ms-patch2":
        m.variant, m.embed_dim, m.patch_size, m.asr = "un-ms-patch2", 18, 2, 0
    elif name == "unet-denoiser":
        m.variant, m.asr = "unet-denoiser", 0
    else:
        raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")
    cfg.out = f"runs/{name}"
    validate(cfg)
    return cfg


PRESETS = ("humus", "full-schedule", "ablation-humus", "un-ss", "un-ms", "un-ms-patch2", "unet-denoiser")
ABLATION_PRESETS = ("un-ss", "un-ms", "un-ms-patch2", "ablation-humus", "unet-denoiser")
