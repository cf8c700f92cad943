"""Configuration tree: dataclasses, JSON loading, environment overrides.

The CLI reads a single JSON file whose top-level keys mirror the sections
below.  Any field can be overridden through the environment with the prefix
``AVGROUND_`` and a double underscore between section and field, e.g.
``AVGROUND_TRAIN__LR=0.001`` or ``AVGROUND_DATA__IMAGE_SIZE=64``.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

ENV_PREFIX = "AVGROUND_"


@dataclass
class EncoderConfig:
    kind: str = "toy"
    seed: int = 7
    d: int = 64            # shared embedding dimension
    d_a: int = 32          # audio frame embedding dimension
    d_tok: int = 64        # token embedding dimension
    patch: int = 8
    n_fft: int = 400
    hop: int = 160
    prefix_len: int = 1
    max_tokens: int = 64
    logit_gain: float = 5.0
    norm_floor: float = 0.3  # added to cell norms before normalizing in the grounder

    @property
    def f_bins(self) -> int:
        return self.n_fft // 2 + 1


@dataclass
class MaskConfig:
    gumbel_temperature: float = 0.5
    soft_center: float = 0.5       # soft-threshold center on the min-max normalized map
    soft_temperature: float = 0.1  # soft-threshold temperature
    pool_epsilon: float = 1e-6
    init_log_w: float = 0.0        # w is kept positive via w = exp(log_w)
    init_b: float = -2.0           # sparse-mask prior: zero-logit cells start mostly off


@dataclass
class LossConfig:
    tau: float = 0.07
    lambda_acl_i: float = 1.0
    lambda_acl_f: float = 1.0
    lambda_reg: float = 1.0
    lambda_acl_c: float = 1.0
    area_pos_prior: float = 0.4
    area_neg_prior: float = 0.0
    use_acl_i: bool = True
    use_acl_f: bool = True
    use_reg: bool = True


@dataclass
class DataConfig:
    root: str = "data/synth"
    seed: int = 0
    classes: int = 4
    image_size: int = 96
    sample_rate: int = 16000
    duration: float = 2.0
    train_matched: int = 800
    test_matched: int = 120
    test_silent: int = 60
    test_mismatched: int = 60
    test_interactive_groups: int = 40
    test_mixtures: int = 40
    min_object: int = 44
    max_object: int = 64
    multi_min_object: int = 28   # size range for scenes holding several objects
    multi_max_object: int = 40
    background: str = "plain"


@dataclass
class TrainConfig:
    lr: float = 3e-4
    weight_decay: float = 1e-4
    epochs: int = 20
    batch_size: int = 16
    seed: int = 0
    llm_enabled: bool = False
    checkpoint_path: str = "checkpoints/model.pt"
    checkpoint_every: int = 200    # steps; final checkpoint always written
    log_path: str = "checkpoints/train_log.jsonl"
    grad_clip: float | None = None  # reserved knob, unused by default
    warmup_steps: int = 0           # reserved knob, unused by default
    max_steps: int | None = None    # optional hard cap on optimizer steps


@dataclass
class CaptionConfig:
    provider: str = "stub"
    endpoint: str = ""
    timeout: float = 10.0
    max_retries: int = 2
    cache_path: str = "data/captions.jsonl"
    max_in_flight: int = 1


@dataclass
class EvalConfig:
    adaptive_delta: float = 0.5
    fixed_threshold: float = 0.5
    iou_success_threshold: float = 0.5
    sweep_step: float = 0.05
    fscore_beta2: float = 0.3
    multisource_k: int = 2


@dataclass
class Config:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    mask: MaskConfig = field(default_factory=MaskConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    caption: CaptionConfig = field(default_factory=CaptionConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> "Config":
        if self.train.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 for contrastive training")
        if self.train.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.loss.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.mask.gumbel_temperature <= 0:
            raise ConfigError("gumbel_temperature must be positive")
        if self.data.image_size % self.encoder.patch != 0:
            raise ConfigError(
                f"image_size {self.data.image_size} not divisible by patch {self.encoder.patch}"
            )
        if not 0.0 <= self.loss.area_pos_prior <= 1.0 or not 0.0 <= self.loss.area_neg_prior <= 1.0:
            raise ConfigError("area priors must lie in [0, 1]")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(data: dict) -> "Config":
        return config_from_dict(data)


_SECTION_TYPES = {
    "encoder": EncoderConfig,
    "mask": MaskConfig,
    "loss": LossConfig,
    "data": DataConfig,
    "train": TrainConfig,
    "caption": CaptionConfig,
    "eval": EvalConfig,
}


def _coerce(raw: str, target):
    if target is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean from {raw!r}")
    if raw.lower() in ("none", "null"):
        return None
    try:
        return target(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"cannot parse {raw!r} as {target}") from exc


def _section_from_dict(cls, values: dict):
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    return cls(**values)


def config_from_dict(data: dict) -> Config:
    unknown = set(data) - set(_SECTION_TYPES)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    sections = {}
    for name, cls in _SECTION_TYPES.items():
        sections[name] = _section_from_dict(cls, data.get(name, {}))
    return Config(**sections)


def apply_env_overrides(cfg: Config, environ=None) -> Config:
    environ = os.environ if environ is None else environ
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        rest = key[len(ENV_PREFIX):]
        if "__" not in rest:
            raise ConfigError(f"malformed override {key}: expected {ENV_PREFIX}SECTION__FIELD")
        section_name, field_name = rest.split("__", 1)
        section_name, field_name = section_name.lower(), field_name.lower()
        if section_name not in _SECTION_TYPES:
            raise ConfigError(f"unknown config section in override {key}")
        section = getattr(cfg, section_name)
        fields = {f.name: f for f in dataclasses.fields(section)}
        if field_name not in fields:
            raise ConfigError(f"unknown field in override {key}")
        current = getattr(section, field_name)
        target = type(current) if current is not None else float
        setattr(section, field_name, _coerce(raw, target))
    return cfg


def load_config(path: str | Path | None = None, use_env: bool = True) -> Config:
    """Load a config JSON (missing sections fall back to defaults), then env overrides."""
    if path is None:
        cfg = Config()
    else:
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {path}: {exc}") from exc
        cfg = config_from_dict(data)
    if use_env:
        cfg = apply_env_overrides(cfg)
    return cfg.validate()
