"""
Scene graphs: construction from observations, relation inference, the text
wire format consumed by prompts, parsing it back, and before/after deltas.
"""

import logging
import re
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import geometry
from .config import RelationConfig
from .errors import DuplicateLabel, MalformedEdge, MalformedNode, UnknownRelation
from .models import RELATIONS, Edge, GraphDelta, Node, Observation, SceneGraph, split_label

logger = logging.getLogger(__name__)

GRAPH_MODES = ("full", "no_bbox", "no_bbox_positions")
MOVE_THRESHOLD = 0.005
ABSENT = "absent"

NODES_HEADER = "[Nodes]:"
EDGES_HEADER = "[Edges]:"

_NODE_RE = re.compile(
    r"^-\s*(?P<label>[^()\[\]:]+?)(?:\s*\((?P<state>[^()]*)\))?(?:\s+--\s+(?P<fields>.*))?$"
)
_FIELD_RE = re.compile(r"(?P<name>\w+):\s*\[(?P<values>[^\]]*)\]")
_FIELDS_RE = re.compile(r"\w+:\s*\[[^\]]*\](?:\s*,\s*\w+:\s*\[[^\]]*\])*")
_FIELD_NAMES = ("position", "x_range", "y_range", "z_range")
_EDGE_RE = re.compile(r"^(?:-\s*)?(?P<subject>.+?)\s*->\s*(?P<relation>.+?)\s*->\s*(?P<object>.+?)$")


# ============================================================================
# CONSTRUCTION
# ============================================================================

def build_scene_graph(obs: Observation, config: Optional[RelationConfig] = None) -> SceneGraph:
    """
    Turn an observation into a scene graph

    Args:
        obs: observed object records, in observation order
        config: relation thresholds

    Returns:
        SceneGraph with one node per record and inferred relation edges

    Raises:
        DuplicateLabel: two records render to the same label
    """
    nodes = []
    seen = set()
    for record in obs.records:
        label = record.label
        if label in seen:
            raise DuplicateLabel(label)
        seen.add(label)
        nodes.append(
            Node(
                label=label,
                state=None if record.state == "default" else record.state,
                position=record.position,
                x_range=record.x_range,
                y_range=record.y_range,
                z_range=record.z_range,
            )
        )
    return SceneGraph(nodes=tuple(nodes), edges=tuple(infer_relations(nodes, config)))


def is_container(label: str, config: RelationConfig) -> bool:
    category, _ = split_label(label)
    return category.split()[-1] in config.containers


def relation_between(a: Node, b: Node, config: RelationConfig) -> Optional[str]:
    """Strongest directed relation of a towards b, ignoring "near" """
    if not (a.has_box and b.has_box):
        return None
    box_a, box_b = a.bounds(), b.bounds()
    if is_container(b.label, config) and geometry.containment_fraction(box_a, box_b) >= config.inside_fraction:
        return "inside"
    gap = abs(box_a[0][2] - box_b[1][2])
    if (
        gap <= config.on_top_gap + 1e-9
        and geometry.footprint_overlap_fraction(box_a, box_b) >= config.on_top_overlap
        and (box_a[0][2] + box_a[1][2]) > (box_b[0][2] + box_b[1][2])
    ):
        return "on top of"
    return None


def infer_relations(nodes: Sequence[Node], config: Optional[RelationConfig] = None) -> List[Edge]:
    """
    Spatial relation edges between nodes

    "inside" wins over "on top of". "near" edges are opt-in: they are emitted
    only when RelationConfig.near_edges is set (off by default) and no stronger
    relation links the pair in either direction.
    """
    config = config or RelationConfig()
    edges: List[Edge] = []
    linked = set()
    for a in nodes:
        for b in nodes:
            if a.label == b.label:
                continue
            relation = relation_between(a, b, config)
            if relation is None or (b.label, a.label, relation) in linked:
                continue
            edges.append(Edge(a.label, relation, b.label))
            linked.add((a.label, b.label, relation))

    if config.near_edges:
        paired = {frozenset((edge.subject, edge.object)) for edge in edges}
        for i, a in enumerate(nodes):
            for b in nodes[i + 1:]:
                if a.position is None or b.position is None or frozenset((a.label, b.label)) in paired:
                    continue
                distance = float(np.linalg.norm(np.subtract(a.position, b.position)))
                if distance <= config.near_distance:
                    edges.append(Edge(a.label, "near", b.label))
    return edges


# ============================================================================
# WIRE FORMAT
# ============================================================================

def format_number(value: float) -> str:
    """Two decimals; the sign of values that round to zero is kept"""
    return f"{value:.2f}"


def _vector(values: Iterable[float]) -> str:
    return "[" + ", ".join(format_number(v) for v in values) + "]"


def serialize_node(node: Node, mode: str = "full") -> str:
    head = f"    - {node.label}"
    if node.state:
        head += f" ({node.state})"
    fields = []
    if mode != "no_bbox_positions" and node.position is not None:
        fields.append(f"position: {_vector(node.position)}")
    if mode == "full" and node.has_box:
        fields.append(f"x_range: {_vector(node.x_range)}")  # type: ignore[arg-type]
        fields.append(f"y_range: {_vector(node.y_range)}")  # type: ignore[arg-type]
        fields.append(f"z_range: {_vector(node.z_range)}")  # type: ignore[arg-type]
    return head + (" -- " + ", ".join(fields) if fields else "")


def serialize_graph(graph: SceneGraph, mode: str = "full") -> str:
    """
    Render the graph in the prompt grammar

    Args:
        graph: graph to render
        mode: "full", "no_bbox" (drop ranges) or "no_bbox_positions" (drop
            ranges and positions)
    """
    if mode not in GRAPH_MODES:
        raise ValueError(f"unknown graph mode: {mode}")
    lines = [f"  {NODES_HEADER}"]
    lines.extend(serialize_node(node, mode) for node in graph.nodes)
    lines.append(f"  {EDGES_HEADER}")
    lines.extend(f"    - {e.subject} -> {e.relation} -> {e.object}" for e in graph.edges)
    return "\n".join(lines) + "\n"


def _parse_fields(text: str, line_no: int) -> dict:
    if not text.strip():
        return {}
    if not _FIELDS_RE.fullmatch(text.strip()):
        raise MalformedNode(line_no, f"unexpected field text {text!r}")
    values = {}
    for match in _FIELD_RE.finditer(text):
        name = match.group("name")
        try:
            numbers = tuple(float(v) for v in match.group("values").split(","))
        except ValueError as exc:
            raise MalformedNode(line_no, f"bad number in {name}") from exc
        expected = 3 if name == "position" else 2
        if name not in _FIELD_NAMES or len(numbers) != expected:
            raise MalformedNode(line_no, f"bad field {name}")
        if name in values:
            raise MalformedNode(line_no, f"repeated field {name}")
        values[name] = numbers
    return values


def _parse_node(line: str, line_no: int) -> Node:
    match = _NODE_RE.match(line)
    if not match or "->" in match.group("label"):
        raise MalformedNode(line_no, line)
    fields = _parse_fields(match.group("fields") or "", line_no)
    return Node(
        label=match.group("label").strip(),
        state=match.group("state").strip() if match.group("state") else None,
        position=fields.get("position"),
        x_range=fields.get("x_range"),
        y_range=fields.get("y_range"),
        z_range=fields.get("z_range"),
    )


def parse_graph(text: str) -> SceneGraph:
    """
    Parse the prompt grammar back into a SceneGraph

    Whitespace around lines is ignored; numbers may carry any precision.

    Raises:
        MalformedNode / MalformedEdge: with the 1-based line number
        UnknownRelation: an edge uses a relation outside the vocabulary
        DuplicateLabel: two nodes share a label
    """
    nodes: List[Node] = []
    edges: List[Edge] = []
    section = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line == NODES_HEADER:
            section = "nodes"
        elif line == EDGES_HEADER:
            if section is None:
                raise MalformedNode(line_no, "edges before nodes")
            section = "edges"
        elif section == "nodes":
            node = _parse_node(line, line_no)
            if any(existing.label == node.label for existing in nodes):
                raise DuplicateLabel(node.label)
            nodes.append(node)
        elif section == "edges":
            match = _EDGE_RE.match(line)
            if not match:
                raise MalformedEdge(line_no, line)
            subject, relation, obj = (match.group(k).strip() for k in ("subject", "relation", "object"))
            if relation not in RELATIONS:
                raise UnknownRelation(relation)
            labels = {node.label for node in nodes}
            if subject not in labels or obj not in labels:
                raise MalformedEdge(line_no, "edge names an unknown node")
            if subject == obj:
                raise MalformedEdge(line_no, "self edge")
            edges.append(Edge(subject, relation, obj))
        else:
            raise MalformedNode(line_no, "missing [Nodes] header")
    return SceneGraph(nodes=tuple(nodes), edges=tuple(edges))


def _round(values: Optional[Tuple[float, ...]]):
    if values is None:
        return None
    return tuple(float(format_number(v)) for v in values)


def quantize_graph(graph: SceneGraph) -> SceneGraph:
    """The graph as it reads after a trip through the two-decimal wire format"""
    nodes = tuple(
        Node(
            label=node.label,
            state=node.state,
            position=_round(node.position),
            x_range=_round(node.x_range),
            y_range=_round(node.y_range),
            z_range=_round(node.z_range),
        )
        for node in graph.nodes
    )
    return SceneGraph(nodes=nodes, edges=graph.edges)


# ============================================================================
# DELTAS
# ============================================================================

def diff_graphs(before: SceneGraph, after: SceneGraph) -> GraphDelta:
    moved = []
    state_changed = []
    after_nodes = {node.label: node for node in after.nodes}
    before_labels = set()
    for old in before.nodes:
        before_labels.add(old.label)
        new = after_nodes.get(old.label)
        if new is None:
            state_changed.append((old.label, old.state or "default", ABSENT))
            continue
        if old.position is not None and new.position is not None:
            shift = float(np.linalg.norm(np.subtract(new.position, old.position)))
            if shift > MOVE_THRESHOLD:
                moved.append((old.label, old.position, new.position))
        if old.state != new.state:
            state_changed.append((old.label, old.state or "default", new.state or "default"))
    for new in after.nodes:
        if new.label not in before_labels:
            state_changed.append((new.label, ABSENT, new.state or "default"))
    return GraphDelta(
        moved=tuple(moved),
        state_changed=tuple(state_changed),
        edges_added=tuple(e for e in after.edges if e not in before.edges),
        edges_removed=tuple(e for e in before.edges if e not in after.edges),
    )
