"""
Brain-Body Synchronization Package

Scene-graph driven task proposal, decomposition and success inference over a
tabletop simulator, with verified demonstration collection, behavior-cloning
distillation and task diversity analysis.
"""

__version__ = "0.1.0"

from .config import RunConfig
from .models import (
    ActionFrame,
    Decomposition,
    GoalPredicate,
    Observation,
    PrimitiveCall,
    SceneGraph,
    SceneSpec,
    TaskSpec,
    Trajectory,
    Verdict,
    WorldState,
)
from .world import Simulator, exec_primitive, observe, spawn_scene
from .scenegraph import build_scene_graph, diff_graphs, parse_graph, serialize_graph
from .llm_reasoning import CachingBackend, OracleBackend, RemoteBackend, make_backend
from .rules import RuleBasedVerifier, eval_predicate, rule_verdict
from .orchestrator import CollectionOrchestrator, collect_demo, run_campaign
from .diversity import distance_matrix, extract_attributes, hull_area, kmeans, mds_embed, task_distance
from .policy import bc_train, evaluate, featurize, policy_act

__all__ = [
    # Main components
    "Simulator",
    "CollectionOrchestrator",
    "RuleBasedVerifier",
    "OracleBackend",
    "RemoteBackend",
    "CachingBackend",
    "RunConfig",

    # Operations
    "spawn_scene",
    "observe",
    "exec_primitive",
    "build_scene_graph",
    "serialize_graph",
    "parse_graph",
    "diff_graphs",
    "make_backend",
    "eval_predicate",
    "rule_verdict",
    "collect_demo",
    "run_campaign",
    "extract_attributes",
    "task_distance",
    "distance_matrix",
    "mds_embed",
    "kmeans",
    "hull_area",
    "featurize",
    "bc_train",
    "policy_act",
    "evaluate",

    # Models
    "ActionFrame",
    "Decomposition",
    "GoalPredicate",
    "Observation",
    "PrimitiveCall",
    "SceneGraph",
    "SceneSpec",
    "TaskSpec",
    "Trajectory",
    "Verdict",
    "WorldState",
]
