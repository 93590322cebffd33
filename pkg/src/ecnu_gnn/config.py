"""Run configuration: named hyperparameter profiles, JSON files and overrides.

A run configuration has four sections (``model``, ``train``, ``preprocess``,
``score``). Values resolve in this order, later winning: the dataclass
defaults, the named profile, the JSON config file, then ``--set``-style
overrides and explicit CLI flags.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .data import PreprocessConfig
from .errors import ContractError
from .model import ModelConfig
from .train import TrainConfig

PROFILES: dict[str, dict] = {
    "swat": {
        "model": dict(window=5, topk=30, embed_dim=128, feature_dim=256, n_ecnum=4, n_ncrm=4),
        # 1 s raw samples: 10 s median blocks, drop the first 6 h of start-up
        "preprocess": dict(trim_head=21600, downsample=10),
    },
    "wadi": {
        "model": dict(window=5, topk=30, embed_dim=128, feature_dim=256, n_ecnum=3, n_ncrm=4),
        "preprocess": dict(trim_head=21600, downsample=10),
    },
    "psm": {
        "model": dict(window=3, topk=25, embed_dim=128, feature_dim=128, n_ecnum=1, n_ncrm=2),
        "preprocess": dict(trim_head=0, downsample=1),
    },
    "synth": {
        "model": dict(window=5, topk=5, embed_dim=16, feature_dim=32, n_ecnum=2, n_ncrm=2),
        "preprocess": dict(trim_head=0, downsample=1),
    },
}
DEFAULT_PROFILE = "swat"


@dataclass(frozen=True)
class ScoreConfig:
    sma_window: int = 3
    grid_size: int = 400

    def __post_init__(self):
        if self.sma_window < 1:
            raise ContractError(f"sma_window must be >= 1, got {self.sma_window}")
        if self.grid_size < 2:
            raise ContractError(f"grid_size must be >= 2, got {self.grid_size}")


SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "preprocess": PreprocessConfig,
    "score": ScoreConfig,
}


@dataclass(frozen=True)
class RunConfig:
    profile: str = DEFAULT_PROFILE
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    score: ScoreConfig = field(default_factory=ScoreConfig)

    @property
    def seed(self) -> int:
        return self.train.seed

    def to_dict(self) -> dict:
        return {"profile": self.profile, **{name: asdict(getattr(self, name)) for name in SECTIONS}}

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _coerce(cls, key: str, raw):
    """Parse a ``--set`` string to the type of the dataclass field's default."""
    default = {f.name: f for f in fields(cls)}[key].default
    if not isinstance(raw, str):
        return raw
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise ContractError(f"expected a boolean for {key}, got {raw!r}")
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError:
            raise ContractError(f"expected an integer for {key}, got {raw!r}") from None
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError:
            raise ContractError(f"expected a number for {key}, got {raw!r}") from None
    return raw


def _merge(values: dict[str, dict], layer: dict, origin: str) -> None:
    for section, entries in layer.items():
        if section == "profile":
            continue
        if section not in SECTIONS:
            raise ContractError(f"{origin}: unknown section {section!r}")
        if not isinstance(entries, dict):
            raise ContractError(f"{origin}: section {section!r} must be an object")
        known = {f.name for f in fields(SECTIONS[section])}
        for key, value in entries.items():
            if key not in known:
                raise ContractError(f"{origin}: unknown key {section}.{key}")
            values[section][key] = _coerce(SECTIONS[section], key, value)


def parse_overrides(items) -> dict[str, dict]:
    """Turn ``["train.seed=3", "model.topk=5"]`` into a nested dict of strings."""
    out: dict[str, dict] = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot or not name:
            raise ContractError(f"override must look like section.key=value, got {item!r}")
        out.setdefault(section, {})[name] = value
    return out


def resolve(
    profile: str | None = None,
    config_path=None,
    overrides: dict[str, dict] | None = None,
    seed: int | None = None,
) -> RunConfig:
    """Build a validated :class:`RunConfig` from its layered sources."""
    file_layer = {}
    if config_path is not None:
        try:
            file_layer = json.loads(Path(config_path).read_text())
        except json.JSONDecodeError as exc:
            raise ContractError(f"{config_path}: invalid JSON: {exc}") from None
        if not isinstance(file_layer, dict):
            raise ContractError(f"{config_path}: top level must be an object")
    name = profile or file_layer.get("profile") or DEFAULT_PROFILE
    if name not in PROFILES:
        raise ContractError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
    values: dict[str, dict] = {section: {} for section in SECTIONS}
    _merge(values, PROFILES[name], f"profile {name}")
    _merge(values, file_layer, str(config_path))
    _merge(values, overrides or {}, "override")
    if seed is not None:
        values["train"]["seed"] = int(seed)
    built = {section: cls(**values[section]) for section, cls in SECTIONS.items()}
    return RunConfig(profile=name, **built)


def with_model(config: RunConfig, **changes) -> RunConfig:
    return replace(config, model=replace(config.model, **changes))


def with_seed(config: RunConfig, seed: int) -> RunConfig:
    return replace(config, train=replace(config.train, seed=int(seed)))
