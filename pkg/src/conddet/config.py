"""Run configuration: dataclasses plus strict JSON round-tripping.

JSON files must spell out every field and may not contain unknown keys;
a typo in an ablation flag should fail loudly, not silently run the
default. ``to_json``/``from_json`` round-trip bit-exactly (floats go
through repr, which numpy/python parse back to the identical double).
"""

import dataclasses
import json
from dataclasses import dataclass, field

from .decoder import (
    ATTENTION_VARIANTS,
    PROJECTION_FORMS,
    REFERENCE_MODES,
    SPATIAL_QUERY_MODES,
)


class ConfigError(ValueError):
    pass


@dataclass
class SceneConfig:
    image_size: int = 32
    patch_size: int = 8
    min_objects: int = 1
    max_objects: int = 3
    num_classes: int = 3
    min_extent: float = 0.25  # rectangle size range, fraction of image side
    max_extent: float = 0.7

    def validate(self, num_queries=None):
        if self.image_size <= 0 or self.patch_size <= 0:
            raise ConfigError("image_size and patch_size must be positive")
        if self.image_size % self.patch_size != 0:
            raise ConfigError("image_size must be a multiple of patch_size")
        if not (1 <= self.min_objects <= self.max_objects):
            raise ConfigError("need 1 <= min_objects <= max_objects")
        if num_queries is not None and self.max_objects > num_queries:
            raise ConfigError("max_objects cannot exceed num_queries")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be at least 1")
        if not (0.0 < self.min_extent <= self.max_extent <= 1.0):
            raise ConfigError("need 0 < min_extent <= max_extent <= 1")
        if round(self.min_extent * self.image_size) < 2:
            raise ConfigError("min_extent smaller than 2 pixels")


@dataclass
class TrainConfig:
    attention: str = "conditional"  # additive | conditional
    spatial_query: str = "transformed"
    projection_form: str = "diagonal"
    reference_mode: str = "learned"
    focal_loss: bool = True
    offset_regression: bool = True
    model_dim: int = 64
    num_heads: int = 4
    encoder_layers: int = 2
    decoder_layers: int = 3
    num_queries: int = 16
    lr_transformer: float = 1e-4
    lr_reference: float = 1e-4
    weight_decay: float = 1e-4
    lr_drop_iteration: int = 400
    iterations: int = 500
    seed: int = 0
    w_class: float = 2.0
    w_l1: float = 5.0
    w_giou: float = 2.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    temperature: float = 10000.0
    log_every: int = 10
    eval_scenes: int = 0
    scene: SceneConfig = field(default_factory=SceneConfig)

    def validate(self):
        checks = [
            ("attention", ATTENTION_VARIANTS),
            ("spatial_query", SPATIAL_QUERY_MODES),
            ("projection_form", PROJECTION_FORMS),
            ("reference_mode", REFERENCE_MODES),
        ]
        for name, allowed in checks:
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if self.model_dim % 4 != 0:
            raise ConfigError("model_dim must be a multiple of 4 (positional embedding halves)")
        if self.model_dim % self.num_heads != 0:
            raise ConfigError("model_dim must divide evenly into num_heads")
        if self.encoder_layers < 1 or self.decoder_layers < 1:
            raise ConfigError("need at least one encoder and one decoder layer")
        if self.num_queries < 1:
            raise ConfigError("num_queries must be positive")
        if self.iterations < 0:
            raise ConfigError("iterations cannot be negative")
        if self.iterations > 0 and not (0 <= self.lr_drop_iteration < self.iterations):
            raise ConfigError("lr_drop_iteration must lie in [0, iterations)")
        for name in ("lr_transformer", "lr_reference", "weight_decay"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} cannot be negative")
        if not (0.0 < self.focal_alpha < 1.0) or self.focal_gamma < 0.0:
            raise ConfigError("need 0 < focal_alpha < 1 and focal_gamma >= 0")
        if self.log_every < 1:
            raise ConfigError("log_every must be at least 1")
        if self.eval_scenes < 0:
            raise ConfigError("eval_scenes cannot be negative")
        self.scene.validate(self.num_queries)
        return self

    def effective_focal(self):
        """(alpha, gamma) actually used: plain BCE terms when focal is off."""
        if self.focal_loss:
            return self.focal_alpha, self.focal_gamma
        return 0.5, 0.0

    def to_dict(self):
        d = dataclasses.asdict(self)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _from_dict(cls, data, where):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")
    missing = set(fields) - set(data)
    if missing:
        raise ConfigError(f"missing {where} keys: {sorted(missing)}")
    kwargs = {}
    for name, f in fields.items():
        value = data[name]
        if name == "scene":
            if not isinstance(value, dict):
                raise ConfigError("scene must be an object")
            value = _from_dict(SceneConfig, value, "scene")
        elif f.type in (int, "int"):
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"{where} key {name} must be an integer")
        elif f.type in (float, "float"):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{where} key {name} must be a number")
            value = float(value)
        elif f.type in (bool, "bool"):
            if not isinstance(value, bool):
                raise ConfigError(f"{where} key {name} must be true or false")
        elif f.type in (str, "str"):
            if not isinstance(value, str):
                raise ConfigError(f"{where} key {name} must be a string")
        kwargs[name] = value
    return cls(**kwargs)


def config_from_json(text):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    cfg = _from_dict(TrainConfig, data, "config")
    cfg.validate()
    return cfg


def load_config(path):
    with open(path, "r", encoding="utf8") as fh:
        return config_from_json(fh.read())
