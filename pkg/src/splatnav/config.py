"""Configuration tree: YAML file plus ``section.key=value`` overrides, mapped onto dataclasses."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from splatnav.cluster import ClusteringConfig
from splatnav.losses import LossConfig
from splatnav.topomap import TopomapConfig

DEFAULT_CONFIG_PATH = Path(__file__).parent / "default_config.yaml"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BackgroundConfig:
    sh_degree: int = 4
    hidden: int = 64
    embed_dim: int = 16
    appearance_hidden: int = 32
    learning_rate: float = 0.01
    steps: int = 2000
    seed: int = 0


@dataclass(frozen=True)
class MaskConfig:
    K: int = 3
    up_thresh: float = 0.85
    min_area_frac: float = 0.005
    region_grow_deg: float = 10.0
    text_prompt: str = "floor"
    seed: int = 0


@dataclass(frozen=True)
class EpisodeConfig:
    count: int = 50
    min_distance: float = 15.0
    seed: int = 0


@dataclass(frozen=True)
class NavConfig:
    success_radius: float = 3.0
    max_steps: int = 30
    random_actions: int = 10
    seed: int = 0
    episodes: EpisodeConfig = field(default_factory=EpisodeConfig)

    def __post_init__(self):
        if isinstance(self.episodes, dict):
            object.__setattr__(self, "episodes", EpisodeConfig(**self.episodes))


@dataclass(frozen=True)
class Config:
    background: BackgroundConfig
    clustering: ClusteringConfig
    floor_mask: MaskConfig
    losses: LossConfig
    topomap: TopomapConfig
    nav: NavConfig
    runtime: dict
    tree: dict  # the merged raw tree, for manifests and metadata

    @classmethod
    def from_tree(cls, tree: dict) -> "Config":
        sections = {"background": BackgroundConfig, "clustering": ClusteringConfig, "floor_mask": MaskConfig,
                    "losses": LossConfig, "topomap": TopomapConfig, "nav": NavConfig}
        unknown = set(tree) - set(sections) - {"runtime"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        built = {}
        for name, typ in sections.items():
            try:
                built[name] = typ(**(tree.get(name) or {}))
            except TypeError as e:
                raise ConfigError(f"[{name}] {e}") from e
            except ValueError as e:
                raise ConfigError(f"[{name}] {e}") from e
        return cls(**built, runtime=dict(tree.get("runtime") or {}), tree=copy.deepcopy(tree))


def _parse_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    key, raw = text.split("=", 1)
    path = [p for p in key.strip().split(".") if p]
    if not path:
        raise ConfigError(f"override {text!r} has an empty key")
    return path, yaml.safe_load(raw) if raw.strip() else None


def apply_overrides(tree: dict, overrides) -> dict:
    tree = copy.deepcopy(tree)
    for ov in overrides or []:
        path, value = _parse_override(ov)
        node = tree
        for p in path[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"override {ov!r}: {p!r} is not a config section")
            node = node[p]
        if path[-1] not in node:
            raise ConfigError(f"override {ov!r}: unknown key {'.'.join(path)!r}")
        node[path[-1]] = value
    return tree


def load_tree(path=None) -> dict:
    """Defaults, with the sections of ``path`` (if given) merged over them key by key."""
    tree = yaml.safe_load(DEFAULT_CONFIG_PATH.read_text())
    if path is None:
        return tree
    user = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(user, dict):
        raise ConfigError(f"{path}: top level must be a mapping")

    def merge(base, extra, where):
        for k, v in extra.items():
            if k not in base:
                raise ConfigError(f"{path}: unknown key {where + k!r}")
            if isinstance(base[k], dict) and isinstance(v, dict):
                merge(base[k], v, where + k + ".")
            else:
                base[k] = v

    merge(tree, user, "")
    return tree


def load_config(path=None, overrides=None) -> Config:
    return Config.from_tree(apply_overrides(load_tree(path), overrides))
