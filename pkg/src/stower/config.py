"""Run configuration: typed sections read from ``section.key = value`` files.

Defaults follow the published hyperparameters where they exist (two-layer
encoder/decoder, FFN 1024, 4 heads, lambda_vae = lambda_style = beta = 1,
Adam lr 0.0005, 8092-token batches). ``Config.synthetic()`` returns the
desk-scale preset used for the synthetic corpus.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

import numpy as np


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    n_per_style: int = 1000
    max_len: int = 64
    held_out: float = 0.1
    test_size: int = 200


@dataclass
class BackboneConfig:
    mode: str = "mlm"
    layers: int = 2
    d_model: int = 128
    heads: int = 4
    ffn_dim: int = 256
    mask_rate: float = 0.15
    epochs: int = 10
    steps: int = 0
    lr: float = 0.0005
    token_budget: int = 8092
    trainable: bool = False


@dataclass
class VaeConfig:
    d_latent: int = 64
    layers: int = 2
    heads: int = 4
    ffn_dim: int = 1024
    style_init_std: float = 1.0
    full_bce: bool = False


@dataclass
class ScorerConfig:
    heads: int = 4
    ffn_dim: int = 256
    gamma: float = 0.01
    epochs: int = 5
    lr: float = 0.0005
    token_budget: int = 8092


@dataclass
class TrainConfig:
    lambda_vae: float = 1.0
    lambda_style: float = 1.0
    beta: float = 1.0
    lr: float = 0.0005
    token_budget: int = 8092
    stage1_epochs: int = 30
    stage2_epochs: int = 10
    stage1_steps: int = 0
    stage2_steps: int = 0
    stage2_lr_scale: float = 0.5
    stage2_mask_fraction: float = 0.5
    kl_warmup: float = 0.1
    patience: int = 3
    clip_norm: float = 1.0

    def validate(self):
        for name in ("lambda_vae", "lambda_style", "beta", "lr"):
            if getattr(self, name) < 0:
                raise ConfigError(f"train.{name} must be non-negative")
        if not 0.0 <= self.stage2_mask_fraction <= 1.0:
            raise ConfigError("train.stage2_mask_fraction must lie in [0, 1]")


@dataclass
class EvalConfig:
    hash_dim: int = 2 ** 18
    lm_hidden: int = 128
    lm_embed: int = 32
    lm_epochs: int = 4
    lm_lr: float = 0.003
    weights: tuple = (0.5, 1.0, 1.5, 2.0, 2.5)


@dataclass
class RunConfig:
    seed: int = 0


@dataclass
class Config:
    data: DataConfig = field(default_factory=DataConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    vae: VaeConfig = field(default_factory=VaeConfig)
    scorer: ScorerConfig = field(default_factory=ScorerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    run: RunConfig = field(default_factory=RunConfig)

    # -- presets ----------------------------------------------------------
    @classmethod
    def synthetic(cls) -> "Config":
        cfg = cls()
        cfg.backbone = BackboneConfig(d_model=64, heads=4, ffn_dim=128, epochs=40, lr=0.001, token_budget=1024)
        cfg.vae = VaeConfig(d_latent=64, heads=4, ffn_dim=128, style_init_std=0.15)
        cfg.scorer = ScorerConfig(heads=4, ffn_dim=128, gamma=0.05, epochs=15, token_budget=512)
        cfg.train = TrainConfig(beta=0.01, token_budget=512, stage1_epochs=60, stage2_epochs=10)
        cfg.eval = EvalConfig(lm_hidden=64, lm_epochs=3)
        return cfg

    # -- flat key access --------------------------------------------------
    def items(self):
        for section in dataclasses.fields(self):
            sub = getattr(self, section.name)
            for f in dataclasses.fields(sub):
                yield f"{section.name}.{f.name}", getattr(sub, f.name)

    def set(self, key: str, raw):
        try:
            section, name = key.split(".", 1)
            sub = getattr(self, section)
        except (ValueError, AttributeError):
            raise ConfigError(f"unknown config key {key!r}") from None
        if not dataclasses.is_dataclass(sub) or name not in {f.name for f in dataclasses.fields(sub)}:
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(sub, name)
        setattr(sub, name, _coerce(key, raw, current))

    def get(self, key: str):
        section, name = key.split(".", 1)
        return getattr(getattr(self, section), name)

    def to_text(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.items())

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self.items()}

    @classmethod
    def from_dict(cls, values: dict, base: "Config | None" = None) -> "Config":
        cfg = base if base is not None else cls()
        for k, v in values.items():
            cfg.set(k, v)
        return cfg

    @classmethod
    def from_text(cls, text: str, base: "Config | None" = None) -> "Config":
        cfg = base if base is not None else cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'section.key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            cfg.set(key, value)
        return cfg

    @classmethod
    def load(cls, path, base: "Config | None" = None) -> "Config":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read(), base)

    def root_seed(self) -> int:
        env = os.environ.get("STOWER_SEED")
        return int(env) if env not in (None, "") else self.run.seed


def _coerce(key, raw, current):
    if not isinstance(raw, str):
        if isinstance(current, tuple):
            return tuple(float(x) for x in raw)
        return type(current)(raw)
    try:
        if isinstance(current, bool):
            lowered = raw.strip().lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return lowered in ("true", "1", "yes")
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            return tuple(float(x) for x in raw.split(",") if x.strip())
        return raw.strip()
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key}") from None


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


# Every random stream is SeedSequence([root_seed, COMPONENT_INDEX[name]]).
COMPONENT_INDEX = {
    "data": 0,
    "split": 1,
    "backbone": 2,
    "vae": 3,
    "stage1": 4,
    "scorer": 5,
    "stage2": 6,
    "eval_classifier": 7,
    "char_lm": 8,
    "transfer": 9,
}


def component_seed(root: int, component: str) -> int:
    """32-bit seed for ``component`` derived from the root seed."""
    ss = np.random.SeedSequence([int(root), COMPONENT_INDEX[component]])
    return int(ss.generate_state(1)[0])


def component_rng(root: int, component: str) -> np.random.Generator:
    return np.random.default_rng(component_seed(root, component))
