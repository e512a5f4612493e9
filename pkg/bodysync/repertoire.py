"""
Scene bundles: scene specs and their scripted task repertoires, loaded from YAML
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import yaml

from .errors import BrainError, ConfigError, UnknownScene
from .models import Decomposition, GoalPredicate, ObjectSpec, SceneSpec, Step
from .prompts import parse_call

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RepertoireTask:
    """A scripted task: its description, ground-truth plan and goal predicate"""
    description: str
    decomposition: Decomposition
    goal: GoalPredicate


@dataclass(frozen=True)
class SceneBundle:
    spec: SceneSpec
    tasks: Tuple[RepertoireTask, ...] = ()

    @property
    def scene_id(self) -> str:
        return self.spec.scene_id

    def task(self, description: str) -> Optional[RepertoireTask]:
        for entry in self.tasks:
            if entry.description == description:
                return entry
        return None


def _triple(values: Sequence[Any], what: str) -> Tuple[float, float, float]:
    if len(values) != 3:
        raise ConfigError(f"{what} needs three numbers, got {values!r}")
    return (float(values[0]), float(values[1]), float(values[2]))


def _object_spec(raw: Mapping[str, Any]) -> ObjectSpec:
    kinematics = raw.get("kinematics") or {}
    kind = kinematics.get("type", "free") if isinstance(kinematics, Mapping) else str(kinematics)
    axis = kinematics.get("axis", (0.0, 0.0, 0.0)) if isinstance(kinematics, Mapping) else (0.0, 0.0, 0.0)
    range_max = kinematics.get("range") if isinstance(kinematics, Mapping) else None
    category = str(raw["category"])
    return ObjectSpec(
        category=category,
        position=_triple(raw["position"], f"{category} position"),
        half_extents=_triple(raw.get("half_extents", (0.03, 0.03, 0.03)), f"{category} half_extents"),
        state=raw.get("state"),
        kinematics=kind,
        axis=_triple(axis, f"{category} axis"),
        range_max=None if range_max is None else float(range_max),
        yaw=float(raw.get("yaw", 0.0)),
        parent=raw.get("parent"),
        bbox_offset=_triple(raw.get("bbox_offset", (0.0, 0.0, 0.0)), f"{category} bbox_offset"),
    )


def _repertoire_task(raw: Mapping[str, Any]) -> RepertoireTask:
    steps = []
    for index, step in enumerate(raw.get("plan") or [], start=1):
        calls = tuple(parse_call(text) for text in step["calls"])
        steps.append(Step(index=index, subtask=str(step["subtask"]), calls=calls))
    return RepertoireTask(
        description=str(raw["task"]),
        decomposition=Decomposition(steps=tuple(steps), reasoning=str(raw.get("reasoning", "")).strip()),
        goal=GoalPredicate.from_dict(raw["goal"]),
    )


def parse_scene(tree: Mapping[str, Any], default_id: str = "") -> SceneBundle:
    bounds = tree.get("table_bounds") or {}
    table_bounds = (
        tuple(float(v) for v in bounds.get("x", (0.0, 0.8))),
        tuple(float(v) for v in bounds.get("y", (-0.6, 0.6))),
    )
    spec = SceneSpec(
        scene_id=str(tree.get("scene_id", default_id)),
        objects=tuple(_object_spec(raw) for raw in tree.get("objects") or []),
        table_bounds=table_bounds,  # type: ignore[arg-type]
        seed=int(tree.get("seed", 0)),
    )
    tasks = tuple(_repertoire_task(raw) for raw in tree.get("repertoire") or [])
    return SceneBundle(spec=spec, tasks=tasks)


def load_scene(path: Path) -> SceneBundle:
    """
    Load one scene bundle

    Raises:
        ConfigError: unreadable file or invalid content
    """
    try:
        with open(path, "r", encoding="utf-8") as handle:
            tree = yaml.safe_load(handle) or {}
        return parse_scene(tree, default_id=Path(path).stem)
    except (OSError, yaml.YAMLError, KeyError, TypeError, ValueError, BrainError) as exc:
        raise ConfigError(f"invalid scene file {path}: {exc}") from exc


def scene_ids(scenes_dir: Path) -> List[str]:
    return sorted(path.stem for path in Path(scenes_dir).glob("*.yaml"))


def load_scenes(scenes_dir: Path, selected: Sequence[str] = ()) -> List[SceneBundle]:
    """
    Load the selected scenes (all when empty), in the given or sorted order

    Raises:
        UnknownScene: a selected id has no file
    """
    available = scene_ids(scenes_dir)
    wanted = list(selected) or available
    bundles = []
    for scene_id in wanted:
        if scene_id not in available:
            raise UnknownScene(scene_id)
        bundles.append(load_scene(Path(scenes_dir) / f"{scene_id}.yaml"))
    logger.debug("loaded %d scenes from %s", len(bundles), scenes_dir)
    return bundles


def index_bundles(bundles: Sequence[SceneBundle]) -> Dict[str, SceneBundle]:
    return {bundle.scene_id: bundle for bundle in bundles}
