"""
Data models for the brain-body pipeline

This module defines the value types shared by the simulator, the scene graph,
the brain backends, the verifier, the collector, the diversity analysis and the
policy.
"""

import copy
import re
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np
from dataclasses_json import dataclass_json

from . import geometry

Vector3 = Tuple[float, float, float]
Range = Tuple[float, float]

_INDEX_SUFFIX = re.compile(r"^(?P<category>.+?) (?P<index>\d+)$")


def object_label(category: str, instance_index: int) -> str:
    """Display label: index 0 is omitted, higher indices are suffixed"""
    return category if instance_index == 0 else f"{category} {instance_index}"


def split_label(label: str) -> Tuple[str, Optional[int]]:
    """Split "red block 2" into ("red block", 2); bare names give None"""
    match = _INDEX_SUFFIX.match(label.strip())
    if match:
        return match.group("category"), int(match.group("index"))
    return label.strip(), None


# ============================================================================
# WORLD
# ============================================================================

KinematicsKind = Literal["free", "fixed", "prismatic"]

# Per-category state lists; everything else is "default"
STATE_LISTS: Dict[str, Tuple[str, ...]] = {
    "drawer": ("open", "closed"),
    "catapult": ("triggered", "not triggered"),
}
DEFAULT_STATE = "default"


@dataclass(eq=False)
class Pose:
    """Gripper or object pose in the world frame"""
    position: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def copy(self) -> "Pose":
        return Pose(self.position.copy(), self.rotation.copy())

    def rotation_rows(self) -> np.ndarray:
        return self.rotation[:2].reshape(6).copy()

    def same_as(self, other: "Pose") -> bool:
        return bool(
            np.array_equal(self.position, other.position)
            and np.array_equal(self.rotation, other.rotation)
        )


@dataclass
class Kinematics:
    kind: KinematicsKind = "free"
    axis: Vector3 = (0.0, 0.0, 0.0)
    range_max: float = 0.0
    current: float = 0.0


@dataclass(eq=False)
class ObjectInstance:
    """One simulated object; position is the reported point, the box may be offset"""
    id: str
    category: str
    instance_index: int
    state: str
    pose: Pose
    half_extents: np.ndarray
    kinematics: Kinematics = field(default_factory=Kinematics)
    parent: Optional[str] = None
    bbox_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def label(self) -> str:
        return object_label(self.category, self.instance_index)

    @property
    def box_center(self) -> np.ndarray:
        return self.pose.position + self.bbox_offset

    @property
    def box_half(self) -> np.ndarray:
        return geometry.rotated_half_extents(self.pose.rotation, self.half_extents)

    def aabb(self) -> Tuple[np.ndarray, np.ndarray]:
        half = self.box_half
        center = self.box_center
        return center - half, center + half

    def move_box_to(self, center: np.ndarray) -> None:
        self.pose.position = np.asarray(center, dtype=float) - self.bbox_offset


@dataclass(eq=False)
class GripperState:
    pose: Pose
    closed: bool = False
    held: Optional[str] = None
    handle: Optional[str] = None
    # held object position relative to the gripper
    held_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass(eq=False)
class WorldState:
    """Full simulator truth; single owner, mutated in place by the stepper"""
    objects: List[ObjectInstance]
    gripper: GripperState
    table_bounds: Tuple[Range, Range]
    rng_seed: int = 0
    scene_id: str = ""
    press_events: int = 0

    def get(self, object_id: str) -> ObjectInstance:
        for obj in self.objects:
            if obj.id == object_id:
                return obj
        raise KeyError(object_id)

    def copy(self) -> "WorldState":
        return copy.deepcopy(self)


@dataclass(frozen=True)
class ObjectRecord:
    """Observed object: name, state, position and axis-aligned ranges"""
    category: str
    instance_index: int
    state: str
    position: Vector3
    x_range: Range
    y_range: Range
    z_range: Range

    @property
    def label(self) -> str:
        return object_label(self.category, self.instance_index)


@dataclass(frozen=True)
class Observation:
    records: List[ObjectRecord]
    gripper_position: Vector3 = (0.0, 0.0, 0.0)
    gripper_closed: bool = False
    holding: bool = False


@dataclass(frozen=True)
class ActionFrame:
    """10-D action: position, first two rotation rows, gripper command"""
    position: Vector3
    rotation_rows: Tuple[float, float, float, float, float, float]
    gripper: float

    def as_vector(self) -> np.ndarray:
        return np.array([*self.position, *self.rotation_rows, self.gripper], dtype=float)

    @classmethod
    def from_vector(cls, vector: Sequence[float]) -> "ActionFrame":
        values = [float(v) for v in vector]
        if len(values) != 10:
            raise ValueError(f"action vector must have 10 entries, got {len(values)}")
        return cls(
            position=(values[0], values[1], values[2]),
            rotation_rows=(values[3], values[4], values[5], values[6], values[7], values[8]),
            gripper=values[9],
        )


@dataclass(eq=False)
class ExecResult:
    world: WorldState
    motion: List[ActionFrame]
    observations: List[Observation]
    ok: bool


# ============================================================================
# SCENE SPECS
# ============================================================================

@dataclass(frozen=True)
class ObjectSpec:
    category: str
    position: Vector3
    half_extents: Vector3 = (0.03, 0.03, 0.03)
    state: Optional[str] = None
    kinematics: KinematicsKind = "free"
    axis: Vector3 = (0.0, 0.0, 0.0)
    range_max: Optional[float] = None
    yaw: float = 0.0  # degrees about z
    parent: Optional[str] = None  # label of the parent object
    bbox_offset: Vector3 = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class SceneSpec:
    scene_id: str
    objects: Tuple[ObjectSpec, ...] = ()
    table_bounds: Tuple[Range, Range] = ((0.0, 0.8), (-0.6, 0.6))
    seed: int = 0


# ============================================================================
# SCENE GRAPH
# ============================================================================

Relation = Literal["on top of", "inside", "near"]
RELATIONS: Tuple[str, ...] = ("on top of", "inside", "near")


@dataclass(frozen=True)
class Node:
    label: str
    state: Optional[str] = None
    position: Optional[Vector3] = None
    x_range: Optional[Range] = None
    y_range: Optional[Range] = None
    z_range: Optional[Range] = None

    @property
    def category(self) -> str:
        return split_label(self.label)[0]

    @property
    def has_box(self) -> bool:
        return self.x_range is not None and self.y_range is not None and self.z_range is not None

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        if not self.has_box:
            raise ValueError(f"node {self.label!r} carries no ranges")
        assert self.x_range and self.y_range and self.z_range
        lo = np.array([self.x_range[0], self.y_range[0], self.z_range[0]], dtype=float)
        hi = np.array([self.x_range[1], self.y_range[1], self.z_range[1]], dtype=float)
        return lo, hi


@dataclass(frozen=True)
class Edge:
    subject: str
    relation: str
    object: str


@dataclass(frozen=True)
class SceneGraph:
    nodes: Tuple[Node, ...] = ()
    edges: Tuple[Edge, ...] = ()

    def node(self, label: str) -> Optional[Node]:
        for node in self.nodes:
            if node.label == label:
                return node
        return None

    @property
    def labels(self) -> List[str]:
        return [node.label for node in self.nodes]


@dataclass(frozen=True)
class GraphDelta:
    moved: Tuple[Tuple[str, Vector3, Vector3], ...] = ()
    state_changed: Tuple[Tuple[str, str, str], ...] = ()
    edges_added: Tuple[Edge, ...] = ()
    edges_removed: Tuple[Edge, ...] = ()

    @property
    def empty(self) -> bool:
        return not (self.moved or self.state_changed or self.edges_added or self.edges_removed)


# ============================================================================
# BRAIN
# ============================================================================

TaskOrigin = Literal["oracle", "remote", "manual"]
PrimitiveName = Literal[
    "Pick", "PlaceOn", "PlaceAt", "Push",
    "PrismaticJointOpen", "PrismaticJointClose", "Press",
    "RevoluteJointOpen", "RevoluteJointClose",
]
PRIMITIVES: Tuple[str, ...] = (
    "Pick", "PlaceOn", "PlaceAt", "Push",
    "PrismaticJointOpen", "PrismaticJointClose", "Press",
    "RevoluteJointOpen", "RevoluteJointClose",
)
NAMED_PRIMITIVES = frozenset(PRIMITIVES) - {"PlaceAt", "Push"}


@dataclass(frozen=True)
class TaskSpec:
    description: str
    scene_id: str = ""
    origin: str = "manual"  # TaskOrigin


@dataclass(frozen=True)
class PrimitiveCall:
    name: str  # PrimitiveName
    obj_name: Optional[str] = None
    place_pos: Optional[Vector3] = None
    direction: Optional[Tuple[float, float]] = None
    distance: Optional[float] = None


@dataclass(frozen=True)
class Step:
    index: int
    subtask: str
    calls: Tuple[PrimitiveCall, ...]


@dataclass(frozen=True)
class Decomposition:
    steps: Tuple[Step, ...]
    reasoning: str = field(default="", compare=False)

    @property
    def calls(self) -> List[PrimitiveCall]:
        return [call for step in self.steps for call in step.calls]


VerdictAnswer = Literal["yes", "no", "not_sure"]
VerdictRoute = Literal["rule", "brain"]


@dataclass(frozen=True)
class Verdict:
    answer: str  # VerdictAnswer
    success_metric: str = ""
    reasoning: str = ""
    route: str = "brain"  # VerdictRoute

    @property
    def is_yes(self) -> bool:
        return self.answer == "yes"


# ============================================================================
# VERIFIER
# ============================================================================

GoalKind = Literal[
    "on_top", "inside", "near", "state_is", "left_of", "right_of",
    "in_front_of", "behind", "moved_by", "position_within", "all_of", "any_of",
]
_BINARY_GOALS = ("on_top", "inside", "left_of", "right_of", "in_front_of", "behind")


@dataclass(frozen=True)
class GoalPredicate:
    """Task completion predicate over before/after scene graphs"""
    kind: str  # GoalKind
    subject: Optional[str] = None
    target: Optional[str] = None
    state: Optional[str] = None
    radius: Optional[float] = None
    direction: Optional[Tuple[float, float]] = None
    min_distance: Optional[float] = None
    box: Optional[Tuple[Range, Range, Range]] = None
    children: Tuple["GoalPredicate", ...] = ()

    def __post_init__(self) -> None:
        if self.kind in ("all_of", "any_of") and not self.children:
            raise ValueError(f"{self.kind} needs at least one child predicate")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "GoalPredicate":
        """
        Build from the compact repertoire form, e.g. {"on_top": ["red block", "plate"]}
        or {"all_of": [{...}, {...}]}
        """
        if len(data) != 1:
            raise ValueError(f"goal must have exactly one kind, got {list(data)}")
        kind, args = next(iter(data.items()))
        if kind in ("all_of", "any_of"):
            return cls(kind=kind, children=tuple(cls.from_dict(child) for child in args))
        if kind in _BINARY_GOALS:
            subject, target = args
            return cls(kind=kind, subject=str(subject), target=str(target))
        if kind == "near":
            subject, target, radius = args
            return cls(kind=kind, subject=str(subject), target=str(target), radius=float(radius))
        if kind == "state_is":
            subject, state = args
            return cls(kind=kind, subject=str(subject), state=str(state))
        if kind == "moved_by":
            subject, direction, min_distance = args
            dx, dy = direction
            return cls(
                kind=kind, subject=str(subject),
                direction=(float(dx), float(dy)), min_distance=float(min_distance),
            )
        if kind == "position_within":
            subject, box = args
            (x0, x1), (y0, y1), (z0, z1) = box
            return cls(
                kind=kind, subject=str(subject),
                box=((float(x0), float(x1)), (float(y0), float(y1)), (float(z0), float(z1))),
            )
        raise ValueError(f"unknown goal kind: {kind}")

    def to_dict(self) -> Dict[str, Any]:
        if self.kind in ("all_of", "any_of"):
            return {self.kind: [child.to_dict() for child in self.children]}
        if self.kind in _BINARY_GOALS:
            return {self.kind: [self.subject, self.target]}
        if self.kind == "near":
            return {self.kind: [self.subject, self.target, self.radius]}
        if self.kind == "state_is":
            return {self.kind: [self.subject, self.state]}
        if self.kind == "moved_by":
            return {self.kind: [self.subject, list(self.direction or ()), self.min_distance]}
        return {self.kind: [self.subject, [list(axis) for axis in self.box or ()]]}


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


# ============================================================================
# COLLECTOR
# ============================================================================

@dataclass(frozen=True)
class TrajectoryFrame:
    observation: Observation
    action: List[float]


@dataclass(frozen=True)
class TrialRecord:
    """Outcome of one attempt: brain answer against simulator ground truth"""
    trial_index: int
    executed: bool
    brain_answer: Optional[str] = None
    rule_answer: Optional[str] = None
    error: Optional[str] = None


@dataclass_json
@dataclass(frozen=True)
class Trajectory:
    """A verified demonstration, one pool record"""
    task: TaskSpec
    scene_id: str
    task_index: int
    demo_index: int
    trial_index: int
    success: bool
    frames: List[TrajectoryFrame]
    verdict: Optional[Verdict] = None
    rule_verdict: Optional[Verdict] = None
    trials: List[TrialRecord] = field(default_factory=list)

    @property
    def key(self) -> Tuple[str, int, int]:
        return (self.scene_id, self.task_index, self.demo_index)


TaskStatus = Literal["feasible", "infeasible", "decomposition_failed", "backend_error"]


@dataclass
class TaskReport:
    scene_id: str
    task_index: int
    description: str
    trials: int = 0
    successes: int = 0
    status: str = "infeasible"  # TaskStatus
    counts: ConfusionCounts = field(default_factory=ConfusionCounts)
    error: Optional[str] = None


@dataclass
class SceneReport:
    scene_id: str
    proposed: int = 0
    feasible: int = 0
    error: Optional[str] = None

    @property
    def feasibility_rate(self) -> float:
        return 100.0 * self.feasible / self.proposed if self.proposed else 0.0


@dataclass
class CampaignReport:
    scenes: List[SceneReport] = field(default_factory=list)
    tasks: List[TaskReport] = field(default_factory=list)

    @property
    def failed_tasks(self) -> List[TaskReport]:
        return [task for task in self.tasks if task.status != "feasible"]


# ============================================================================
# DIVERSITY
# ============================================================================

@dataclass(frozen=True)
class TaskAttributes:
    action: Optional[str] = None
    object_shape: Optional[str] = None
    location_shape: Optional[str] = None
    object_color: Optional[str] = None
    target_color: Optional[str] = None


@dataclass(eq=False)
class DistanceMatrix:
    n: int
    entries: np.ndarray


@dataclass(eq=False)
class Embedding2D:
    points: np.ndarray
    stress: float
    stress_history: List[float] = field(default_factory=list)
    iterations: int = 0
    degenerate: bool = False


@dataclass(eq=False)
class KMeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    inertia_history: List[float] = field(default_factory=list)
