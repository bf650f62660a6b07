"""Configuration dataclasses and the flat-JSON config file format.

The config file is one JSON document with a flat object per namespace
(``model``, ``train``, ``recon``, ``data``, ``eval``). CLI flags override
file values through dotted keys such as ``train.lr=1e-3``.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

from .errors import ConfigError


@dataclass
class ModelConfig:
    hidden: int = 128
    heads: int = 4
    queries: int = 4
    fusion_layers: int = 6
    ffn_mult: int = 4
    audio_len: int = 64
    audio_dim: int = 8
    video_len: int = 16
    video_dim: int = 12
    text_len: int = 12
    text_vocab: int = 32
    text_embed_dim: int = 768
    wavelet_levels: int = 3
    band_tau: float = 0.05
    missing_mode: str = "reconstruct"  # or "drop"

    def validate(self) -> None:
        if self.hidden % self.heads:
            raise ConfigError(f"hidden={self.hidden} not divisible by heads={self.heads}")
        total_tokens = self.audio_len + 4 * self.video_len + self.text_len
        if self.queries * 8 > total_tokens:
            raise ConfigError(
                f"queries={self.queries} is not small relative to the "
                f"{total_tokens} modality tokens"
            )
        if self.audio_len % (2**self.wavelet_levels):
            raise ConfigError(
                f"audio_len={self.audio_len} must be divisible by "
                f"2^{self.wavelet_levels}"
            )
        deepest_input = self.audio_len // (2 ** (self.wavelet_levels - 1))
        if deepest_input < 8:
            raise ConfigError(
                f"audio_len={self.audio_len} too short for "
                f"{self.wavelet_levels} wavelet levels with 8-tap filters"
            )
        if self.missing_mode not in ("reconstruct", "drop"):
            raise ConfigError(f"unknown missing_mode {self.missing_mode!r}")


@dataclass
class TrainConfig:
    alpha: float = 0.1
    beta: float = 0.01
    gamma: float = 0.05
    lr: float = 1e-5
    batch_size: int = 32
    epochs: int = 20
    p_miss: float = 0.3
    weight_decay: float = 0.01
    seed: int = 0
    recon_steps: int = 1  # energy iterations during training
    recon_sigma: float = 0.01
    patience: int = 5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self) -> None:
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ConfigError("loss weights must be non-negative")
        if not (0.0 <= self.p_miss < 1.0):
            raise ConfigError(f"p_miss must be in [0,1), got {self.p_miss}")
        if self.lr <= 0 or self.batch_size <= 0 or self.epochs <= 0:
            raise ConfigError("lr, batch_size and epochs must be positive")


@dataclass
class ReconConfig:
    steps: int = 3
    eta: float = 0.01
    rho: float = 0.9
    sigma: float = 0.0

    def validate(self) -> None:
        if self.steps < 0:
            raise ConfigError("recon steps must be >= 0")
        if self.eta <= 0:
            raise ConfigError("recon eta must be > 0")
        if not (0.0 <= self.rho < 1.0):
            raise ConfigError(f"recon rho must be in [0,1), got {self.rho}")


@dataclass
class DataConfig:
    n: int = 2000
    t_audio: int = 64
    d_audio: int = 8
    t_video: int = 16
    d_video: int = 12
    t_text: int = 12
    vocab: int = 32
    noise_audio: float = 0.5
    noise_video: float = 0.5
    noise_text: float = 0.5
    label_low: float = -3.0
    label_high: float = 3.0
    seed: int = 0
    train_frac: float = 0.65
    val_frac: float = 0.05

    def validate(self) -> None:
        if self.t_audio % 8:
            raise ConfigError(f"t_audio={self.t_audio} must be divisible by 2^3")
        if self.label_low >= self.label_high:
            raise ConfigError("label range is empty")
        if self.n <= 0:
            raise ConfigError("n must be positive")


@dataclass
class EvalConfig:
    mrs: List[float] = field(default_factory=lambda: [0.0, 0.1, 0.3, 0.5, 0.7, 0.9])
    steps: List[int] = field(default_factory=lambda: [0, 3, 5])
    protocols: List[str] = field(default_factory=lambda: ["zero"])
    subsets: List[str] = field(default_factory=lambda: ["avt"])
    replicates: int = 5

    def validate(self) -> None:
        for p in self.protocols:
            if p not in ("zero", "noise"):
                raise ConfigError(f"unknown masking protocol {p!r}")
        for s in self.subsets:
            if not s or any(ch not in "avt" for ch in s):
                raise ConfigError(f"modality subset must use letters a/v/t, got {s!r}")


@dataclass
class Config:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    recon: ReconConfig = field(default_factory=ReconConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> "Config":
        for section in (self.model, self.train, self.recon, self.data, self.eval):
            section.validate()
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "Config":
        cfg = cls()
        for section, values in doc.items():
            target = getattr(cfg, section, None)
            if target is None or not dataclasses.is_dataclass(target):
                raise ConfigError(f"unknown config section {section!r}")
            for key, value in values.items():
                if not hasattr(target, key):
                    raise ConfigError(f"unknown config key {section}.{key}")
                setattr(target, key, value)
        return cfg


def load_config(path=None, overrides=()) -> Config:
    """Build a Config from an optional JSON file plus dotted-key overrides."""
    doc = {}
    if path is not None:
        doc = json.loads(Path(path).read_text())
    cfg = Config.from_dict(doc)
    for item in overrides:
        apply_override(cfg, item)
    return cfg.validate()


def apply_override(cfg: Config, item: str) -> None:
    """Apply one ``section.key=value`` override; values parse as JSON."""
    if "=" not in item:
        raise ConfigError(f"override must look like section.key=value, got {item!r}")
    dotted, raw = item.split("=", 1)
    parts = dotted.split(".")
    if len(parts) != 2:
        raise ConfigError(f"override key must be section.key, got {dotted!r}")
    section, key = parts
    target = getattr(cfg, section, None)
    if target is None or not dataclasses.is_dataclass(target):
        raise ConfigError(f"unknown config section {section!r}")
    if not hasattr(target, key):
        raise ConfigError(f"unknown config key {dotted!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # bare strings (e.g. protocol names)
    current = getattr(target, key)
    if isinstance(current, list) and isinstance(value, str):
        value = [json.loads(v) if _is_number(v) else v for v in value.split(",")]
    setattr(target, key, value)


def _is_number(s: str) -> bool:
    try:
        json.loads(s)
        return True
    except json.JSONDecodeError:
        return False


def echo_config(cfg: Config, out_dir) -> Path:
    """Write the effective config to ``effective_config.json`` in out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "effective_config.json"
    path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return path
