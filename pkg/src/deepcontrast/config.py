"""Pipeline configuration: defaults, validation, and the line-oriented
``key = value`` text format."""

from dataclasses import dataclass, fields


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    # data
    image_size: int = 64
    seed: int = 0

    # network (toy-scale channel widths)
    stage_channels: tuple = (8, 16, 32, 64, 64)
    side_channels: int = 16
    head_channels: int = 64
    attn_channels: int = 32
    mlp_hidden: int = 64

    # three-level graph segmentation
    seg_k: tuple = (60.0, 150.0, 400.0)
    seg_min_size: tuple = (8, 20, 50)
    seg_sigma: tuple = (0.5, 0.8, 1.0)

    # CRF (kernel weights tuned for the toy image scale)
    crf_w1: float = 0.03
    crf_w2: float = 0.003
    crf_sigma_alpha: float = 3.0
    crf_sigma_beta: float = 50.0
    crf_sigma_gamma: float = 3.0
    crf_sigma_epsilon: float = 9.0
    crf_rho: float = 0.1
    crf_iterations: int = 10

    # optimization
    lr_new: float = 0.3
    lr_base: float = 0.03
    mlp_lr: float = 0.3
    momentum: float = 0.9
    weight_decay: float = 0.0005
    power: float = 0.9

    # alternate training
    alternations: int = 12
    init_mlp_epochs: int = 30
    batch_images: int = 4

    def validate(self):
        if len(self.stage_channels) != 5:
            raise ConfigError("stage_channels must list exactly 5 stages")
        for name in ("seg_k", "seg_min_size", "seg_sigma"):
            if len(getattr(self, name)) != 3:
                raise ConfigError(f"{name} must list exactly 3 level values")
        if not all(a <= b for a, b in zip(self.seg_k, self.seg_k[1:])):
            raise ConfigError("seg_k must be non-decreasing (coarser at higher levels)")
        if self.image_size < 8:
            raise ConfigError("image_size must be at least 8")
        for name in ("crf_w1", "crf_w2", "crf_sigma_alpha", "crf_sigma_beta",
                     "crf_sigma_gamma", "crf_sigma_epsilon", "crf_rho"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.alternations < 0 or self.batch_images < 1:
            raise ConfigError("alternations must be >= 0 and batch_images >= 1")
        return self

    def seg_levels(self):
        return list(zip(self.seg_k, self.seg_min_size, self.seg_sigma))


def _parse_value(raw, example):
    if isinstance(example, tuple):
        elem = example[0]
        return tuple(type(elem)(tok.strip()) for tok in raw.split(","))
    if isinstance(example, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    return type(example)(raw.strip())


def parse_config(text):
    """Parse ``key = value`` lines; unknown keys are rejected by name."""
    cfg = PipelineConfig()
    known = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {body!r}")
        key, raw = (part.strip() for part in body.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key '{key}'")
        try:
            setattr(cfg, key, _parse_value(raw, known[key]))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"line {lineno}: bad value for '{key}': {exc}") from exc
    return cfg.validate()


def load_config(path):
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read())
