import math

import pytest

from bodysync.errors import UnresolvedLabel
from bodysync.models import GoalPredicate, Node, SceneGraph, TaskSpec
from bodysync.prompts import FENCE, base_prompt, build_inference_prompt, extract_graphs, parse_verdict
from bodysync.rules import RuleBasedVerifier, describe, signature
from bodysync.scenegraph import build_scene_graph, quantize_graph


def _worked_examples():
    """(before, after) graph pairs of the worked inference examples"""
    pairs = []
    for block in base_prompt("success_inference").split(FENCE + "\n"):
        if not block.startswith("task description:"):
            continue
        query = block.split("success metric:", 1)[0] + "success metric: "
        graphs = extract_graphs(query)
        pairs.append((graphs[0], graphs[-1]))
    return pairs


def _at(label, x, y, z=0.08, half=0.03, state=None):
    return Node(
        label=label,
        state=state,
        position=(x, y, z),
        x_range=(x - half, x + half),
        y_range=(y - half, y + half),
        z_range=(z - half, z + half),
    )


@pytest.fixture
def verifier():
    return RuleBasedVerifier()


@pytest.mark.parametrize(
    "index, goal, answer",
    [
        (0, {"on_top": ["blue block", "plate"]}, "no"),
        (1, {"all_of": [{"on_top": ["blue block", "plate"]}, {"on_top": ["red block", "blue block"]}]}, "yes"),
        (2, {"left_of": ["red block", "plate"]}, "no"),
    ],
)
def test_worked_examples(verifier, index, goal, answer):
    before, after = _worked_examples()[index]
    verdict = verifier.rule_verdict(GoalPredicate.from_dict(goal), before, after)
    assert verdict.answer == answer
    assert verdict.route == "rule"


def test_directional_predicates(verifier):
    plate = _at("plate", 0.50, 0.00, half=0.08)
    graph = SceneGraph(nodes=(plate, _at("a", 0.50, -0.20), _at("b", 0.50, 0.20), _at("c", 0.70, 0.0), _at("d", 0.30, 0.0)))

    assert verifier.eval_predicate(GoalPredicate("left_of", "a", "plate"), graph, graph)
    assert verifier.eval_predicate(GoalPredicate("right_of", "b", "plate"), graph, graph)
    assert verifier.eval_predicate(GoalPredicate("in_front_of", "c", "plate"), graph, graph)
    assert verifier.eval_predicate(GoalPredicate("behind", "d", "plate"), graph, graph)
    assert not verifier.eval_predicate(GoalPredicate("left_of", "b", "plate"), graph, graph)


def test_moved_by_projects_on_direction(verifier):
    before = SceneGraph(nodes=(_at("cube", 0.40, 0.00),))
    after = SceneGraph(nodes=(_at("cube", 0.45, 0.08),))

    assert verifier.eval_predicate(GoalPredicate.from_dict({"moved_by": ["cube", [0, 1], 0.06]}), before, after)
    assert not verifier.eval_predicate(GoalPredicate.from_dict({"moved_by": ["cube", [0, -1], 0.01]}), before, after)
    assert verifier.eval_predicate(GoalPredicate.from_dict({"moved_by": ["cube", [0, 2], 0.08]}), before, after)


def test_state_near_and_box(verifier):
    graph = SceneGraph(nodes=(Node("drawer", state="open", position=(0.2, -0.25, 0.18)), _at("cube", 0.4, 0.0)))

    assert verifier.eval_predicate(GoalPredicate("state_is", "drawer", state="open"), graph, graph)
    assert not verifier.eval_predicate(GoalPredicate("state_is", "cube", state="open"), graph, graph)
    assert verifier.eval_predicate(GoalPredicate("state_is", "cube", state="default"), graph, graph)
    assert not verifier.eval_predicate(GoalPredicate("near", "cube", "drawer", radius=0.2), graph, graph)
    assert verifier.eval_predicate(GoalPredicate("near", "cube", "drawer", radius=math.inf), graph, graph)
    box = ((0.3, 0.5), (-0.1, 0.1), (0.0, 0.1))
    assert verifier.eval_predicate(GoalPredicate("position_within", "cube", box=box), graph, graph)


def test_any_of_and_all_of(verifier):
    graph = SceneGraph(nodes=(_at("cube", 0.4, 0.0), _at("plate", 0.4, 0.3)))
    left = GoalPredicate("left_of", "cube", "plate")
    right = GoalPredicate("right_of", "cube", "plate")

    assert verifier.eval_predicate(GoalPredicate("any_of", children=(right, left)), graph, graph)
    verdict = verifier.rule_verdict(GoalPredicate("all_of", children=(left, right)), graph, graph)
    assert verdict.answer == "no"
    assert "all_of failed at branch 2" in verdict.reasoning
    with pytest.raises(ValueError):
        GoalPredicate("all_of")


def test_unresolved_labels(verifier):
    graph = SceneGraph(nodes=(_at("cube", 0.4, 0.0), Node("ghost", position=(0.1, 0.1, 0.1))))

    with pytest.raises(UnresolvedLabel):
        verifier.eval_predicate(GoalPredicate("on_top", "sphere", "cube"), graph, graph)
    with pytest.raises(UnresolvedLabel):
        verifier.eval_predicate(GoalPredicate("near", "cube", "cube", radius=1.0), graph, graph)
    with pytest.raises(UnresolvedLabel):
        verifier.eval_predicate(GoalPredicate("on_top", "cube", "ghost"), graph, graph)
    verdict = verifier.rule_verdict(GoalPredicate("inside", "sphere", "cube"), graph, graph)
    assert verdict.answer == "not_sure"
    assert "sphere" in verdict.reasoning


def test_goal_dict_round_trip():
    data = {
        "all_of": [
            {"state_is": ["drawer", "open"]},
            {"near": ["cube", "plate", 0.1]},
            {"moved_by": ["cube", [1.0, 0.0], 0.05]},
            {"position_within": ["cube", [[0.0, 1.0], [-1.0, 1.0], [0.0, 0.5]]]},
        ]
    }
    goal = GoalPredicate.from_dict(data)
    assert goal.to_dict() == data
    assert GoalPredicate.from_dict(goal.to_dict()) == goal
    with pytest.raises(ValueError):
        GoalPredicate.from_dict({"hovering": ["cube"]})


def test_describe_and_signature():
    goal = GoalPredicate.from_dict({"all_of": [{"on_top": ["red block", "plate"]}, {"state_is": ["drawer", "closed"]}]})
    assert describe(goal) == "The red block is on top of the plate and the drawer is closed."
    assert signature(goal) == "all_of(on_top(red block, plate), state_is(drawer, closed))"


def _plan_graphs(simulator, bundle, entry):
    """Scene graph before the plan and after each executed call"""
    world = simulator.spawn_scene(bundle.spec)
    graphs = [build_scene_graph(simulator.observe(world))]
    for call in entry.decomposition.calls:
        world = simulator.exec_primitive(world, call).world
        graphs.append(build_scene_graph(simulator.observe(world)))
    return graphs


def test_truncated_plans_are_judged_no(verifier, simulator, bundles):
    for bundle in bundles:
        for entry in bundle.tasks:
            graphs = _plan_graphs(simulator, bundle, entry)
            assert verifier.rule_verdict(entry.goal, graphs[0], graphs[-1]).answer == "yes", entry.description
            for partial in graphs[:-1]:
                assert verifier.rule_verdict(entry.goal, graphs[0], partial).answer == "no", entry.description


def test_oracle_agrees_with_the_rule_verdict(verifier, simulator, oracle, bundles):
    for bundle in bundles:
        for entry in bundle.tasks:
            graphs = _plan_graphs(simulator, bundle, entry)
            task = TaskSpec(entry.description, bundle.scene_id)
            for after in graphs[1:]:
                prompt = build_inference_prompt(task, [graphs[0], after])
                answer = parse_verdict(oracle.query(prompt, scene_id=bundle.scene_id)).answer
                expected = verifier.rule_verdict(entry.goal, quantize_graph(graphs[0]), quantize_graph(after))
                assert answer == expected.answer, entry.description
