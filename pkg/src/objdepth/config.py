"""Run configuration: architecture, ablation switches and training hyperparameters."""

from dataclasses import asdict, dataclass, field, fields, replace

import yaml

from .errors import ConfigurationError

LANGUAGE_MODES = ("def_only", "def_sz_rel", "ctrl_zeros")
POS_VARIANTS = ("pos", "pos_bbox_wh")
SILOG_VARIANTS = ("as_printed", "variance_form")
PRECISIONS = ("f32", "f64")


@dataclass
class AttentionConfig:
    layers: int = 4
    heads: int = 4
    ff_dim: int = 1024
    embed_dim: int = 128


@dataclass
class ModelConfig:
    # ablation axes
    language_mode: str = "def_only"
    pos_variant: str = "pos_bbox_wh"
    object_sa: bool = True
    # architecture
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    backbone_channels: tuple = (16, 32, 64, 128)
    patch_size: int = 4
    kernel_tokens: int = 64
    n_bins: int = 256
    d_min: float = 1e-3
    d_max: float = 10.0
    image_height: int = 64
    image_width: int = 80
    embedding_mode: str = "mock"
    embedding_cache: str = ""
    # loss
    silog_variant: str = "as_printed"
    beta: float = 0.1
    # training
    seed: int = 0
    batch_size: int = 4
    epochs: int = 32
    max_steps: int = 0  # 0 means run every epoch
    base_lr: float = 0.000357
    div_factor: float = 25.0
    final_div_factor: float = 100.0
    pct_start: float = 0.3
    base_momentum: float = 0.85
    max_momentum: float = 0.95
    weight_decay: float = 1e-2
    hflip: bool = True
    precision: str = "f64"

    def __post_init__(self):
        if isinstance(self.attention, dict):
            self.attention = AttentionConfig(**self.attention)
        self.backbone_channels = tuple(self.backbone_channels)

    @property
    def embed_dim(self):
        return self.attention.embed_dim

    def validate(self):
        problems = []
        if self.language_mode not in LANGUAGE_MODES:
            problems.append(f"language_mode must be one of {LANGUAGE_MODES}")
        if self.pos_variant not in POS_VARIANTS:
            problems.append(f"pos_variant must be one of {POS_VARIANTS}")
        if self.silog_variant not in SILOG_VARIANTS:
            problems.append(f"silog_variant must be one of {SILOG_VARIANTS}")
        if self.precision not in PRECISIONS:
            problems.append(f"precision must be one of {PRECISIONS}")
        if self.embedding_mode not in ("mock", "cache"):
            problems.append("embedding_mode must be 'mock' or 'cache' (ctrl_zeros is a language_mode)")
        att = self.attention
        if att.embed_dim % att.heads:
            problems.append(f"embed_dim {att.embed_dim} not divisible by heads {att.heads}")
        if len(self.backbone_channels) != 4:
            problems.append("backbone_channels needs four stage widths")
        if not self.d_min < self.d_max:
            problems.append("d_min must be below d_max")
        h, w = self.image_height, self.image_width
        if h % 16 or w % 16 or h < 64 or w < 64:
            problems.append(f"image size {h}x{w} must be multiples of 16 and at least 64")
        elif (h // 2) % self.patch_size or (w // 2) % self.patch_size:
            problems.append(f"half-resolution features {h // 2}x{w // 2} not divisible by patch {self.patch_size}")
        elif self.n_patches < self.kernel_tokens + 1:
            problems.append(
                f"{self.n_patches} patch tokens cannot supply 1 width token + {self.kernel_tokens} kernel tokens"
            )
        if problems:
            raise ConfigurationError("; ".join(problems))
        return self

    @property
    def n_patches(self):
        return (self.image_height // 2 // self.patch_size) * (self.image_width // 2 // self.patch_size)

    def to_dict(self):
        out = asdict(self)
        out["backbone_channels"] = list(self.backbone_channels)
        return out

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        att = data.get("attention", {})
        if isinstance(att, dict):
            att_known = {f.name for f in fields(AttentionConfig)}
            if set(att) - att_known:
                raise ConfigurationError(f"unknown attention keys: {sorted(set(att) - att_known)}")
        return cls(**data)

    def with_(self, **changes):
        return replace(self, **changes)


def full_preset():
    """Full-resolution settings (416 x 544, batch 8); far too slow for a laptop CPU."""
    return ModelConfig(
        patch_size=16,
        kernel_tokens=128,
        image_height=416,
        image_width=544,
        batch_size=8,
        epochs=25,
        backbone_channels=(48, 80, 160, 128),
    )


def gradcheck_preset():
    """Reduced dims (embed 16) for full-model finite-difference checks."""
    return ModelConfig(
        attention=AttentionConfig(layers=1, heads=2, ff_dim=32, embed_dim=16),
        backbone_channels=(4, 4, 8, 16),
        kernel_tokens=8,
        n_bins=16,
        precision="f64",
    )


PRESETS = {"desk": ModelConfig, "full": full_preset, "gradcheck": gradcheck_preset}


def load_config(path):
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    preset = data.pop("preset", "desk")
    if preset not in PRESETS:
        raise ConfigurationError(f"unknown preset {preset!r}")
    base = PRESETS[preset]().to_dict()
    att = {**base["attention"], **data.pop("attention", {})}
    base.update(data)
    base["attention"] = att
    return ModelConfig.from_dict(base).validate()


def dump_config(cfg):
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)


def save_config(cfg, path):
    with open(path, "w") as fh:
        fh.write(dump_config(cfg))
