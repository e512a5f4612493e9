"""
Exception hierarchy

Every error raised by the package derives from BodySyncError so the CLI can map
failures to exit codes in one place.
"""

from typing import Optional


class BodySyncError(Exception):
    """Base class for all package errors"""


class ConfigError(BodySyncError):
    """Invalid or unreadable configuration"""


class UnknownScene(ConfigError):
    def __init__(self, scene_id: str):
        super().__init__(f"unknown scene: {scene_id!r}")
        self.scene_id = scene_id


# ============================================================================
# WORLD
# ============================================================================

class WorldError(BodySyncError):
    """Simulator precondition violations"""


class OverlappingSpawn(WorldError):
    pass


class OutOfBounds(WorldError):
    pass


class UnknownObject(WorldError):
    def __init__(self, name: str):
        super().__init__(f"unknown object: {name!r}")
        self.name = name


class AmbiguousObject(WorldError):
    def __init__(self, name: str, count: int):
        super().__init__(f"{name!r} matches {count} instances, an index is required")
        self.name = name
        self.count = count


class GripperBusy(WorldError):
    pass


class GripperEmpty(WorldError):
    pass


class NotArticulated(WorldError):
    pass


class NotPressable(WorldError):
    pass


class EmptyPath(WorldError):
    pass


# ============================================================================
# SCENE GRAPH
# ============================================================================

class SceneGraphError(BodySyncError):
    """Scene graph construction and parsing failures"""


class DuplicateLabel(SceneGraphError):
    def __init__(self, label: str):
        super().__init__(f"duplicate node label: {label!r}")
        self.label = label


class _LineError(SceneGraphError):
    def __init__(self, line: int, detail: str = ""):
        message = f"line {line}"
        if detail:
            message += f": {detail}"
        super().__init__(message)
        self.line = line


class MalformedNode(_LineError):
    pass


class MalformedEdge(_LineError):
    pass


class UnknownRelation(SceneGraphError):
    def __init__(self, relation: str):
        super().__init__(f"unknown relation: {relation!r}")
        self.relation = relation


# ============================================================================
# BRAIN
# ============================================================================

class BrainError(BodySyncError):
    """Prompt construction and response parsing failures"""


class NoTasksFound(BrainError):
    pass


class MalformedStep(BrainError):
    def __init__(self, line: int, detail: str = ""):
        message = f"malformed step at line {line}"
        if detail:
            message += f": {detail}"
        super().__init__(message)
        self.line = line


class UnknownPrimitive(BrainError):
    def __init__(self, name: str):
        super().__init__(f"unknown primitive: {name!r}")
        self.name = name


class BadArity(BrainError):
    def __init__(self, name: str, detail: str = ""):
        message = f"bad arguments for {name}"
        if detail:
            message += f": {detail}"
        super().__init__(message)
        self.name = name


class TooFewGraphs(BrainError):
    pass


class MissingAnswerSection(BrainError):
    pass


class UnrecognizedPromptShape(BrainError):
    pass


class BackendError(BrainError):
    """A query backend failed; transient failures are retried"""

    def __init__(self, message: str, transient: bool = False):
        super().__init__(message)
        self.transient = transient


class BackendTimeout(BackendError):
    def __init__(self, message: str = "request timed out"):
        super().__init__(message, transient=True)


class HttpError(BackendError):
    def __init__(self, status: int, message: str = ""):
        transient = status in (408, 409, 429) or status >= 500
        super().__init__(message or f"HTTP {status}", transient=transient)
        self.status = status


class BudgetExceeded(BackendError):
    def __init__(self, budget: int):
        super().__init__(f"request budget of {budget} exhausted", transient=False)
        self.budget = budget


# ============================================================================
# VERIFIER / COLLECTOR
# ============================================================================

class VerifierError(BodySyncError):
    pass


class UnresolvedLabel(VerifierError):
    def __init__(self, label: str, detail: Optional[str] = None):
        super().__init__(detail or f"label {label!r} does not resolve")
        self.label = label


class EmptyInput(VerifierError):
    pass


class CollectorError(BodySyncError):
    pass


class DecompositionFailed(CollectorError):
    pass


# ============================================================================
# DIVERSITY / POLICY
# ============================================================================

class DiversityError(BodySyncError):
    pass


class TooFewTasks(DiversityError):
    pass


class BadK(DiversityError):
    pass


class PolicyError(BodySyncError):
    pass


class TooManyObjects(PolicyError):
    pass


class EmptyPool(PolicyError):
    pass


class MissingGoal(PolicyError):
    pass
