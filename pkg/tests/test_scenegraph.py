import numpy as np
import pytest

from bodysync.config import RelationConfig
from bodysync.errors import DuplicateLabel, MalformedEdge, MalformedNode, UnknownRelation
from bodysync.models import RELATIONS, Edge, Node, ObjectRecord, Observation, SceneGraph
from bodysync.scenegraph import (
    build_scene_graph,
    diff_graphs,
    infer_relations,
    parse_graph,
    quantize_graph,
    serialize_graph,
)
from bodysync.world import Simulator


def _box(label, center, half, state=None):
    x, y, z = center
    return Node(
        label=label,
        state=state,
        position=center,
        x_range=(x - half, x + half),
        y_range=(y - half, y + half),
        z_range=(z - half, z + half),
    )


def test_tabletop_serialization_matches_reference_lines(scene0, fixture_text):
    simulator = Simulator()
    graph = build_scene_graph(simulator.observe(simulator.spawn_scene(scene0.spec)))
    rendered = [line.strip() for line in serialize_graph(graph).splitlines()]

    for expected in fixture_text("tabletop_nodes.txt").splitlines():
        assert expected in rendered
    assert rendered[0] == "[Nodes]:"
    assert rendered[-1] == "[Edges]:"


def test_serialize_then_parse_keeps_two_decimals(fixture_text):
    graph = parse_graph(fixture_text("stacked_graph.txt"))

    assert graph.labels == ["red block", "blue block", "plate", "drawer"]
    assert graph.node("drawer").state == "open"
    assert not graph.node("drawer").has_box
    assert Edge("red block", "on top of", "blue block") in graph.edges
    assert parse_graph(serialize_graph(graph)) == graph


def test_graph_modes_drop_fields(fixture_text):
    graph = parse_graph(fixture_text("stacked_graph.txt"))
    no_bbox = serialize_graph(graph, "no_bbox")
    bare = serialize_graph(graph, "no_bbox_positions")

    assert "x_range" not in no_bbox and "position" in no_bbox
    assert "position" not in bare
    assert "    - drawer (open)\n" in bare
    assert parse_graph(bare).node("red block").position is None
    with pytest.raises(ValueError):
        serialize_graph(graph, "sparse")


def test_minus_sign_is_kept_when_rounding_to_zero():
    graph = SceneGraph(nodes=(Node("cube", position=(-0.001, 0.0, 0.1)),))
    assert "position: [-0.00, 0.00, 0.10]" in serialize_graph(graph)
    assert parse_graph(serialize_graph(graph)).nodes[0].position == (0.0, 0.0, 0.1)


def test_parse_errors_carry_line_numbers():
    with pytest.raises(MalformedNode) as excinfo:
        parse_graph("[Nodes]:\n- red block -- position: [0.1, 0.2]\n")
    assert excinfo.value.line == 2
    with pytest.raises(MalformedNode):
        parse_graph("- red block\n")
    with pytest.raises(MalformedEdge) as excinfo:
        parse_graph("[Nodes]:\n- a\n- b\n[Edges]:\n- a -> on top of\n")
    assert excinfo.value.line == 5
    with pytest.raises(MalformedEdge):
        parse_graph("[Nodes]:\n- a\n[Edges]:\n- a -> on top of -> c\n")
    with pytest.raises(MalformedEdge):
        parse_graph("[Nodes]:\n- a\n[Edges]:\n- a -> near -> a\n")
    with pytest.raises(UnknownRelation):
        parse_graph("[Nodes]:\n- a\n- b\n[Edges]:\n- a -> beside -> b\n")
    with pytest.raises(DuplicateLabel):
        parse_graph("[Nodes]:\n- a\n- a\n")


def test_parse_tolerates_whitespace_and_precision():
    graph = parse_graph("   [Nodes]:  \n\n  -   cup  --  position: [0.123456, -1, 2.5]\n [Edges]:\n")
    assert graph.node("cup").position == (0.123456, -1.0, 2.5)


def test_on_top_and_inside_relations():
    config = RelationConfig()
    plate = Node("plate", position=(0.5, 0.0, 0.09), x_range=(0.42, 0.58), y_range=(-0.08, 0.08), z_range=(0.07, 0.11))
    block = _box("red block", (0.5, 0.0, 0.14), 0.03)
    bowl = Node("bowl", position=(0.2, 0.2, 0.09), x_range=(0.13, 0.27), y_range=(0.13, 0.27), z_range=(0.05, 0.13))
    cube = _box("green block", (0.2, 0.2, 0.09), 0.03)

    edges = infer_relations([plate, block, bowl, cube], config)
    assert Edge("red block", "on top of", "plate") in edges
    assert Edge("green block", "inside", "bowl") in edges
    assert Edge("plate", "on top of", "red block") not in edges
    assert not any(edge.relation == "near" for edge in edges)


def test_inside_only_for_containers():
    block = _box("red block", (0.2, 0.2, 0.09), 0.03)
    box = Node("crate", position=(0.2, 0.2, 0.09), x_range=(0.1, 0.3), y_range=(0.1, 0.3), z_range=(0.05, 0.15))
    assert infer_relations([block, box]) == []


def test_near_edges_are_opt_in():
    a = _box("red block", (0.40, 0.0, 0.08), 0.03)
    b = _box("blue block", (0.40, 0.10, 0.08), 0.03)
    c = _box("green block", (0.40, 0.40, 0.08), 0.03)

    assert not RelationConfig().near_edges
    assert infer_relations([a, b, c]) == []
    edges = infer_relations([a, b, c], RelationConfig(near_edges=True))
    assert edges == [Edge("red block", "near", "blue block")]


def test_duplicate_labels_rejected():
    record = ObjectRecord("cube", 0, "default", (0, 0, 0), (0, 1), (0, 1), (0, 1))
    with pytest.raises(DuplicateLabel):
        build_scene_graph(Observation(records=[record, record]))


def test_quantize_matches_wire_round_trip(scene0):
    simulator = Simulator()
    graph = build_scene_graph(simulator.observe(simulator.spawn_scene(scene0.spec)))
    assert quantize_graph(graph) == parse_graph(serialize_graph(graph))


def test_diff_graphs_reports_moves_states_and_edges():
    before = SceneGraph(
        nodes=(_box("a", (0.0, 0.0, 0.0), 0.01), _box("b", (0.5, 0.0, 0.0), 0.01), Node("drawer", state="closed")),
    )
    after = SceneGraph(
        nodes=(
            _box("a", (0.1, 0.0, 0.0), 0.01),
            _box("b", (0.503, 0.0, 0.0), 0.01),
            Node("drawer", state="open"),
            Node("c"),
        ),
        edges=(Edge("a", "near", "b"),),
    )
    delta = diff_graphs(before, after)

    assert [label for label, _, _ in delta.moved] == ["a"]
    assert ("drawer", "closed", "open") in delta.state_changed
    assert ("c", "absent", "default") in delta.state_changed
    assert delta.edges_added == (Edge("a", "near", "b"),)
    assert diff_graphs(after, after).empty


CATEGORIES = ("red block", "blue block", "plate", "bowl", "drawer", "drawer handle", "catapult button")
STATES = (None, "open", "closed", "triggered")


def _random_graph(rng):
    picks = rng.choice(len(CATEGORIES), size=int(rng.integers(1, len(CATEGORIES) + 1)), replace=False)
    labels = [CATEGORIES[i] + (f" {int(rng.integers(1, 4))}" if rng.random() < 0.3 else "") for i in picks]

    def values(n):
        return tuple(float(v) for v in rng.uniform(-1.0, 1.0, n))

    nodes = []
    for label in labels:
        ranges = [tuple(sorted(values(2))) for _ in range(3)] if rng.random() < 0.7 else [None] * 3
        nodes.append(Node(
            label,
            STATES[int(rng.integers(len(STATES)))],
            values(3) if rng.random() < 0.8 else None,
            *ranges,
        ))
    edges = []
    if len(labels) > 1:
        for _ in range(int(rng.integers(0, 5))):
            a, b = rng.choice(len(labels), size=2, replace=False)
            edges.append(Edge(labels[a], RELATIONS[int(rng.integers(len(RELATIONS)))], labels[b]))
    return SceneGraph(nodes=tuple(nodes), edges=tuple(edges))


def test_random_graphs_survive_the_wire_format():
    rng = np.random.default_rng(2024)
    for _ in range(500):
        graph = _random_graph(rng)
        assert parse_graph(serialize_graph(graph)) == quantize_graph(graph)
