"""
Run configuration

Frozen dataclasses holding every tunable constant, loaded from a YAML tree with
command-line overrides applied on top.
"""

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Type, TypeVar

import yaml
from dotenv import load_dotenv

from .errors import ConfigError

logger = logging.getLogger(__name__)

REPO_ROOT = Path(__file__).resolve().parent.parent
DEFAULT_SCENES_DIR = REPO_ROOT / "scenes"
API_KEY_ENV = "BBSEA_API_KEY"

T = TypeVar("T")


@dataclass(frozen=True)
class SimulationConfig:
    """Quasi-static simulator constants (meters)"""
    grasp_limit: float = 0.06
    z_lift: float = 0.15
    settle_eps: float = 0.002
    clearance: float = 0.10
    jitter_radius: float = 0.01
    step_length: float = 0.02
    launch_displacement: Tuple[float, float, float] = (0.25, 0.0, 0.0)
    prismatic_range: float = 0.15
    table_top_z: float = 0.05
    finger_radius: float = 0.01
    container_floor: float = 0.01
    push_margin: float = 0.02
    open_fraction: float = 0.5
    home_position: Tuple[float, float, float] = (0.30, 0.0, 0.40)
    # widens grasp/press detection; zero during collection
    capture_margin: float = 0.0


@dataclass(frozen=True)
class RelationConfig:
    """Scene graph relation thresholds"""
    on_top_gap: float = 0.01
    on_top_overlap: float = 0.5
    inside_fraction: float = 0.9
    near_distance: float = 0.15
    near_edges: bool = False
    containers: Tuple[str, ...] = ("drawer", "bin", "bowl")


@dataclass(frozen=True)
class BrainConfig:
    """Query backend selection and remote client settings"""
    backend: str = "oracle"  # oracle | remote | cached-remote
    endpoint: Optional[str] = None
    model: str = "gpt-4"
    temperature: float = 0.0
    timeout: float = 60.0
    max_retries: int = 3
    budget: Optional[int] = None
    backoff_factor: float = 1.0
    cache_dir: str = ".prompt_cache"


@dataclass(frozen=True)
class CollectionConfig:
    max_trials: int = 10
    tasks_per_scene: Optional[int] = None
    demos_per_task: int = 5
    workers: int = 1
    graph_mode: str = "full"  # full | no_bbox | no_bbox_positions


@dataclass(frozen=True)
class TrainingConfig:
    lr: float = 1e-3
    momentum: float = 0.9
    batch: int = 64
    epochs: int = 50
    hidden: Tuple[int, ...] = (256, 256)
    seed: int = 0

    def finetune(self) -> "TrainingConfig":
        """Fine-tuning defaults: a single epoch with batch size 256"""
        return replace(self, epochs=1, batch=256)


@dataclass(frozen=True)
class PolicyConfig:
    max_objects: int = 12
    category_buckets: int = 8
    text_buckets: int = 32


@dataclass(frozen=True)
class EvalConfig:
    episodes: int = 10
    horizon: int = 80
    init_noise: float = 0.0
    capture_margin: float = 0.005
    workers: int = 1


_SECTIONS: Dict[str, Type[Any]] = {
    "simulation": SimulationConfig,
    "relations": RelationConfig,
    "brain": BrainConfig,
    "collection": CollectionConfig,
    "training": TrainingConfig,
    "policy": PolicyConfig,
    "evaluation": EvalConfig,
}


@dataclass(frozen=True)
class RunConfig:
    """Complete configuration of one pipeline run"""
    scenes_dir: str = str(DEFAULT_SCENES_DIR)
    scenes: Tuple[str, ...] = ()
    out_dir: str = "runs"
    seed: int = 0
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    relations: RelationConfig = field(default_factory=RelationConfig)
    brain: BrainConfig = field(default_factory=BrainConfig)
    collection: CollectionConfig = field(default_factory=CollectionConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_yaml(
        cls,
        path: Optional[Path] = None,
        overrides: Optional[Mapping[str, Any]] = None,
    ) -> "RunConfig":
        """
        Load a configuration file and apply overrides

        Args:
            path: YAML file; None uses built-in defaults
            overrides: dotted keys ("brain.backend", "seed") that win over the file

        Returns:
            Validated RunConfig
        """
        tree: Dict[str, Any] = {}
        if path is not None:
            try:
                with open(path, "r", encoding="utf-8") as handle:
                    tree = yaml.safe_load(handle) or {}
            except (OSError, yaml.YAMLError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            if not isinstance(tree, dict):
                raise ConfigError(f"config {path} must be a mapping")
        for key, value in (overrides or {}).items():
            if value is None:
                continue
            section, _, name = key.rpartition(".")
            target = tree.setdefault(section, {}) if section else tree
            if not isinstance(target, dict):
                raise ConfigError(f"cannot override {key}: {section} is not a section")
            target[name] = value
        config = cls.from_dict(tree)
        config.validate()
        return config

    @classmethod
    def from_dict(cls, tree: Mapping[str, Any]) -> "RunConfig":
        kwargs: Dict[str, Any] = {}
        known = {f.name for f in fields(cls)}
        for key, value in tree.items():
            if key not in known:
                raise ConfigError(f"unknown config key: {key}")
            if key in _SECTIONS:
                kwargs[key] = _build(_SECTIONS[key], value or {}, key)
            elif key == "scenes":
                kwargs[key] = tuple(str(s) for s in (value or ()))
            else:
                kwargs[key] = value
        return cls(**kwargs)

    def validate(self) -> None:
        if not Path(self.scenes_dir).is_dir():
            raise ConfigError(f"scenes directory does not exist: {self.scenes_dir}")
        if self.brain.backend not in ("oracle", "remote", "cached-remote"):
            raise ConfigError(f"unknown backend: {self.brain.backend}")
        if self.collection.graph_mode not in ("full", "no_bbox", "no_bbox_positions"):
            raise ConfigError(f"unknown graph mode: {self.collection.graph_mode}")
        if self.collection.max_trials < 1:
            raise ConfigError("collection.max_trials must be at least 1")

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _build(cls: Type[T], values: Mapping[str, Any], section: str) -> T:
    if not isinstance(values, Mapping):
        raise ConfigError(f"section {section} must be a mapping")
    known = {f.name: f for f in fields(cls)}  # type: ignore[arg-type]
    kwargs: Dict[str, Any] = {}
    for key, value in values.items():
        if key not in known:
            raise ConfigError(f"unknown key {section}.{key}")
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"invalid section {section}: {exc}") from exc


def load_environment() -> None:
    """Load a local .env file into the process environment"""
    if load_dotenv():
        logger.debug("loaded environment from .env")
