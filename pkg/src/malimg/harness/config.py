"""Run configuration: the seven ablation axes plus hyperparameters.

JSON schema (every key optional unless noted; unknown keys are rejected)::

    {
      "id": "run",                   # row label in table.csv
      "pt": null,                    # path to a MIFW checkpoint used as init, or null
      "fpn": true,
      "in_channels": 1,              # 1 or 3
      "opt": "AF",                   # "AF" schedule-free AdamW | "AW" AdamW
      "loss": "CE",                  # "CE" | "WCE"
      "sf":    {"lr", "weight_decay", "warmup_steps", "beta1", "beta2", "eps"},
      "adamw": {"lr", "weight_decay", "beta1", "beta2", "eps"},
      "mixup": {"enabled": false, "alpha": 0.2},
      "ta":    {"enabled": false, "ops": {"rotate": [-30, 30], ...}},
      "model": {"widths": [16, 32, 64, 128], "fpn_width": 64},
      "batch_size": 128,
      "eval_batch_size": 256,
      "epochs": 10,
      "seed": 0,
      "threads": 1,                  # BLAS threads; recorded in every artifact
      "data_root": "data",           # required for training
      "layout": "tree",              # "tree" or "manifest"
      "num_classes": null            # default: number of classes found in train
    }
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

from ..augment import MixupConfig, TaConfig
from ..exceptions import ConfigError
from ..optim import AdamWHyper, SfHyper


@dataclass(frozen=True)
class ModelConfig:
    widths: tuple[int, ...] = (16, 32, 64, 128)
    fpn_width: int = 64

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))


def _build(cls, data: Any, where: str):
    if isinstance(data, cls):
        return data
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where} must be an object, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


@dataclass(frozen=True)
class RunConfig:
    id: str = "run"
    pt: str | None = None
    fpn: bool = True
    in_channels: int = 1
    opt: str = "AF"
    loss: str = "CE"
    sf: SfHyper = field(default_factory=SfHyper)
    adamw: AdamWHyper = field(default_factory=AdamWHyper)
    mixup: MixupConfig = field(default_factory=MixupConfig)
    ta: TaConfig = field(default_factory=TaConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    batch_size: int = 128
    eval_batch_size: int = 256
    epochs: int = 10
    seed: int = 0
    threads: int = 1
    data_root: str | None = None
    layout: str = "tree"
    num_classes: int | None = None

    def __post_init__(self):
        sub = {"sf": SfHyper, "adamw": AdamWHyper, "mixup": MixupConfig, "ta": TaConfig, "model": ModelConfig}
        for name, cls in sub.items():
            object.__setattr__(self, name, _build(cls, getattr(self, name), name))
        object.__setattr__(self, "id", str(self.id))
        if self.in_channels not in (1, 3):
            raise ConfigError(f"in_channels must be 1 or 3, got {self.in_channels}")
        if self.opt not in ("AF", "AW"):
            raise ConfigError(f"opt must be 'AF' or 'AW', got {self.opt!r}")
        if self.loss not in ("CE", "WCE"):
            raise ConfigError(f"loss must be 'CE' or 'WCE', got {self.loss!r}")
        if self.layout not in ("tree", "manifest"):
            raise ConfigError(f"layout must be 'tree' or 'manifest', got {self.layout!r}")
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ConfigError("batch sizes must be positive")
        if self.mu and self.batch_size < 2:
            raise ConfigError("mixup needs batch_size >= 2")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    # -- ablation flags ---------------------------------------------------

    @property
    def mu(self) -> bool:
        return self.mixup.enabled

    @property
    def use_ta(self) -> bool:
        return self.ta.enabled

    def flags(self) -> dict:
        yn = lambda b: "Y" if b else "N"  # noqa: E731
        return {"pt": yn(self.pt), "fpn": yn(self.fpn), "in": self.in_channels,
                "ta": yn(self.use_ta), "mu": yn(self.mu), "opt": self.opt, "loss": self.loss}

    # -- (de)serialisation ------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ta"]["ops"] = {k: list(v) for k, v in self.ta.ops.items()}
        d["model"]["widths"] = list(self.model.widths)
        return d

    @classmethod
    def from_dict(cls, data: Mapping) -> "RunConfig":
        return _build(cls, data, "config")

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(data)

    def with_updates(self, **updates) -> "RunConfig":
        """Copy with top-level keys replaced; nested sections may be given as partial dicts."""
        merged = self.to_dict()
        for key, value in updates.items():
            if key not in merged:
                raise ConfigError(f"unknown config key {key!r}")
            if isinstance(value, Mapping) and isinstance(merged[key], dict):
                merged[key] = {**merged[key], **value}
            else:
                merged[key] = value
        return RunConfig.from_dict(merged)


def resolve_paths(cfg: RunConfig, base_dir) -> RunConfig:
    """Make ``data_root`` and ``pt`` relative to the config file's directory."""
    base = Path(base_dir)
    updates = {}
    for key in ("data_root", "pt"):
        value = getattr(cfg, key)
        if value is not None and not Path(value).is_absolute():
            updates[key] = str(base / value)
    return replace(cfg, **updates) if updates else cfg
