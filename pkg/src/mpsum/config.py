"""Run configuration: defaults < JSON config file < command-line overrides."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace

from .errors import ConfigError
from .ssm import EncoderConfig


@dataclass(frozen=True)
class LoraConfig:
    enabled: bool = False
    rank: int = 4
    alpha: float = 32.0
    dropout: float = 0.1
    targets: tuple[str, ...] = ("in_proj", "out_proj")
    epochs: int = 10  # LoRA phase length, after head training


@dataclass(frozen=True)
class RunConfig:
    seed: int = 42
    n_clusters: int = 8
    epochs: int = 100
    batch_size: int = 32
    lr: float = 2e-5
    weight_decay: float = 0.5
    dropout: float = 0.5
    tau_rouge: float = 0.15
    tau_sim: float = 0.8
    use_sim: bool = False
    threshold: float = 0.5
    top_k: int | None = None
    trace_every: int = 10
    compression: bool = True   # ablation: False feeds the raw pair embedding to the head
    lora: LoraConfig = field(default_factory=LoraConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        checks = [
            (self.n_clusters >= 2, "n_clusters must be >= 2"),
            (self.epochs >= 1, "epochs must be >= 1"),
            (self.batch_size >= 2, "batch_size must be >= 2"),
            (self.lr > 0, "lr must be positive"),
            (self.weight_decay >= 0, "weight_decay must be >= 0"),
            (0 <= self.dropout < 1, "dropout must be in [0, 1)"),
            (0 <= self.tau_rouge <= 1, "tau_rouge must be in [0, 1]"),
            (-1 <= self.tau_sim <= 1, "tau_sim must be in [-1, 1]"),
            (0 <= self.threshold <= 1, "threshold must be in [0, 1]"),
            (self.top_k is None or self.top_k >= 1, "top_k must be >= 1"),
            (self.trace_every >= 1, "trace_every must be >= 1"),
            (self.lora.rank >= 1, "lora.rank must be >= 1"),
            (self.lora.alpha >= 0, "lora.alpha must be >= 0"),
            (0 <= self.lora.dropout < 1, "lora.dropout must be in [0, 1)"),
            (self.lora.epochs >= 1, "lora.epochs must be >= 1"),
            (set(self.lora.targets) <= {"in_proj", "out_proj"}, "unknown lora target"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lora"]["targets"] = list(self.lora.targets)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls().merged(d)

    def merged(self, overrides: dict) -> "RunConfig":
        """New config with ``overrides`` applied; nested sections merge key by key."""
        known = {f.name for f in fields(self)}
        changes = {}
        for key, value in overrides.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            if key == "lora":
                value = _merge_section(self.lora, value, "lora")
            elif key == "encoder":
                value = _merge_section(self.encoder, value, "encoder")
            changes[key] = value
        try:
            return replace(self, **changes)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None


def _merge_section(current, value, name):
    if isinstance(value, type(current)):
        return value
    if not isinstance(value, dict):
        raise ConfigError(f"{name} must be an object")
    known = {f.name for f in fields(current)}
    for key in value:
        if key not in known:
            raise ConfigError(f"unknown config key {name}.{key}")
    if "targets" in value:
        value = dict(value, targets=tuple(value["targets"]))
    try:
        return replace(current, **value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return RunConfig.from_dict(data)
