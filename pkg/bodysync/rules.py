"""
Rule-based success verifier

Decides task completion from before/after scene graphs using goal predicates.
Deterministic stand-in for the brain's success inference on scripted tasks.
"""

import math
from typing import List, Optional, Tuple

import numpy as np

from . import geometry
from .config import RelationConfig
from .errors import UnresolvedLabel
from .models import GoalPredicate, Node, SceneGraph, Verdict
from .scenegraph import relation_between


class RuleBasedVerifier:
    """
    Evaluates goal predicates against scene graphs

    Spatial relations reuse the scene graph thresholds; directional predicates
    follow the table frame (+x front, +y right).
    """

    def __init__(self, relations: Optional[RelationConfig] = None):
        self.relations = relations or RelationConfig()

    def eval_predicate(self, goal: GoalPredicate, before: SceneGraph, after: SceneGraph) -> bool:
        """
        Evaluate a goal predicate

        Args:
            goal: predicate to check
            before: scene graph before execution
            after: scene graph after execution

        Returns:
            True if the predicate holds

        Raises:
            UnresolvedLabel: a label is missing, self-referential or lacks the
                geometry the predicate needs
        """
        return self._evaluate(goal, before, after, trace=[])

    def rule_verdict(self, goal: GoalPredicate, before: SceneGraph, after: SceneGraph) -> Verdict:
        """
        Verdict with a canonical success metric and an outcome trace

        Unresolvable labels give "not_sure" with the diagnostic as reasoning.
        """
        metric = describe(goal)
        trace: List[str] = []
        try:
            holds = self._evaluate(goal, before, after, trace)
        except UnresolvedLabel as exc:
            return Verdict(answer="not_sure", success_metric=metric, reasoning=str(exc), route="rule")
        return Verdict(
            answer="yes" if holds else "no",
            success_metric=metric,
            reasoning="; ".join(trace),
            route="rule",
        )

    def _evaluate(self, goal: GoalPredicate, before: SceneGraph, after: SceneGraph, trace: List[str]) -> bool:
        if goal.kind == "all_of":
            for i, child in enumerate(goal.children, start=1):
                if not self._evaluate(child, before, after, trace):
                    trace.append(f"all_of failed at branch {i}")
                    return False
            return True
        if goal.kind == "any_of":
            for child in goal.children:
                if self._evaluate(child, before, after, trace):
                    return True
            trace.append("any_of: no branch holds")
            return False

        holds = self._evaluate_leaf(goal, before, after)
        trace.append(f"{signature(goal)}: {'true' if holds else 'false'}")
        return holds

    def _evaluate_leaf(self, goal: GoalPredicate, before: SceneGraph, after: SceneGraph) -> bool:
        kind = goal.kind
        subject = _resolve(after, goal.subject)

        if kind == "state_is":
            return (subject.state or "default") == goal.state
        if kind == "position_within":
            assert goal.box is not None
            position = _position(subject)
            return all(lo <= value <= hi for value, (lo, hi) in zip(position, goal.box))
        if kind == "moved_by":
            assert goal.direction is not None and goal.min_distance is not None
            start = _position(_resolve(before, goal.subject))
            shift = np.subtract(_position(subject), start)[:2]
            unit = np.asarray(goal.direction, dtype=float)
            unit = unit / np.linalg.norm(unit)
            return float(np.dot(shift, unit)) >= goal.min_distance

        if goal.target == goal.subject:
            raise UnresolvedLabel(str(goal.subject), f"{kind} relates {goal.subject!r} to itself")
        target = _resolve(after, goal.target)

        if kind == "near":
            radius = goal.radius if goal.radius is not None else self.relations.near_distance
            distance = float(np.linalg.norm(np.subtract(_position(subject), _position(target))))
            return math.isinf(radius) or distance <= radius
        if kind == "on_top":
            _require_box(subject)
            _require_box(target)
            return relation_between(subject, target, self.relations) == "on top of"
        if kind == "inside":
            _require_box(subject)
            _require_box(target)
            fraction = geometry.containment_fraction(subject.bounds(), target.bounds())
            return fraction >= self.relations.inside_fraction
        if kind in ("left_of", "right_of", "in_front_of", "behind"):
            _require_box(target)
            x, y, _ = _position(subject)
            lo, hi = target.bounds()
            if kind == "left_of":
                return y < lo[1]
            if kind == "right_of":
                return y > hi[1]
            if kind == "in_front_of":
                return x > hi[0]
            return x < lo[0]
        raise ValueError(f"unknown goal kind: {kind}")


def _resolve(graph: SceneGraph, label: Optional[str]) -> Node:
    node = graph.node(label) if label is not None else None
    if node is None:
        raise UnresolvedLabel(str(label))
    return node


def _position(node: Node) -> Tuple[float, float, float]:
    if node.position is None:
        raise UnresolvedLabel(node.label, f"{node.label!r} has no position")
    return node.position


def _require_box(node: Node) -> None:
    if not node.has_box:
        raise UnresolvedLabel(node.label, f"{node.label!r} has no bounding box")


# ============================================================================
# CANONICAL RENDERING
# ============================================================================

def signature(goal: GoalPredicate) -> str:
    """Compact rendering used in reasoning traces, e.g. on_top(red block, plate)"""
    if goal.kind in ("all_of", "any_of"):
        return f"{goal.kind}(" + ", ".join(signature(c) for c in goal.children) + ")"
    args: List[str] = [str(goal.subject)]
    if goal.target is not None:
        args.append(goal.target)
    if goal.kind == "near":
        args.append(f"{goal.radius}")
    elif goal.kind == "state_is":
        args.append(str(goal.state))
    elif goal.kind == "moved_by":
        args.append(f"[{goal.direction[0]}, {goal.direction[1]}]")  # type: ignore[index]
        args.append(f"{goal.min_distance}")
    elif goal.kind == "position_within":
        args.append(str([list(axis) for axis in goal.box or ()]))
    return f"{goal.kind}(" + ", ".join(args) + ")"


def _phrase(goal: GoalPredicate) -> str:
    a, b = goal.subject, goal.target
    if goal.kind == "all_of":
        return " and ".join(_phrase(c) for c in goal.children)
    if goal.kind == "any_of":
        return " or ".join(_phrase(c) for c in goal.children)
    if goal.kind == "on_top":
        return f"the {a} is on top of the {b}"
    if goal.kind == "inside":
        return f"the {a} is inside the {b}"
    if goal.kind == "near":
        return f"the {a} is within {goal.radius:.2f} m of the {b}"
    if goal.kind == "state_is":
        return f"the {a} is {goal.state}"
    if goal.kind == "left_of":
        return f"the {a} is on the left of the {b}, i.e. its y is less than the minimum of the {b}'s y_range"
    if goal.kind == "right_of":
        return f"the {a} is on the right of the {b}, i.e. its y is greater than the maximum of the {b}'s y_range"
    if goal.kind == "in_front_of":
        return f"the {a} is in front of the {b}, i.e. its x is greater than the maximum of the {b}'s x_range"
    if goal.kind == "behind":
        return f"the {a} is behind the {b}, i.e. its x is less than the minimum of the {b}'s x_range"
    if goal.kind == "moved_by":
        dx, dy = goal.direction  # type: ignore[misc]
        return f"the {a} has moved at least {goal.min_distance:.2f} m along [{dx:g}, {dy:g}]"
    (x0, x1), (y0, y1), (z0, z1) = goal.box  # type: ignore[misc]
    return (
        f"the {a} is within x [{x0:.2f}, {x1:.2f}], y [{y0:.2f}, {y1:.2f}], z [{z0:.2f}, {z1:.2f}]"
    )


def describe(goal: GoalPredicate) -> str:
    """Canonical English success metric for a goal"""
    text = _phrase(goal)
    return text[:1].upper() + text[1:] + "."


# ============================================================================
# CONVENIENCE FUNCTIONS
# ============================================================================

def eval_predicate(goal: GoalPredicate, before: SceneGraph, after: SceneGraph) -> bool:
    return RuleBasedVerifier().eval_predicate(goal, before, after)


def rule_verdict(goal: GoalPredicate, before: SceneGraph, after: SceneGraph) -> Verdict:
    return RuleBasedVerifier().rule_verdict(goal, before, after)
