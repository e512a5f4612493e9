import numpy as np
import pytest

from bodysync.errors import (
    BadArity,
    MalformedStep,
    MissingAnswerSection,
    NoTasksFound,
    TooFewGraphs,
    UnknownPrimitive,
    UnrecognizedPromptShape,
)
from bodysync.models import NAMED_PRIMITIVES, Decomposition, PrimitiveCall, SceneGraph, Step, TaskSpec, Verdict
from bodysync.prompts import (
    FENCE,
    base_prompt,
    build_decomposition_prompt,
    build_inference_prompt,
    build_proposal_prompt,
    extract_graphs,
    extract_task_description,
    parse_call,
    parse_decomposition,
    parse_proposals,
    parse_verdict,
    prompt_kind,
    render_call,
    render_decomposition,
    render_verdict,
)
from bodysync.scenegraph import parse_graph

TASK = TaskSpec("place the red block on the plate", "scene_0")


@pytest.fixture
def graph(fixture_text):
    return parse_graph(fixture_text("stacked_graph.txt"))


def _examples(template: str):
    """Fenced worked examples of a base prompt, as raw text"""
    blocks = template.split(FENCE + "\n")
    return [block.split(FENCE)[0] for block in blocks if block.startswith("task description:")]


def test_builders_end_with_query_suffix(graph):
    proposal = build_proposal_prompt(graph)
    decomposition = build_decomposition_prompt(TASK, graph)
    inference = build_inference_prompt(TASK, [graph, graph])

    assert proposal.startswith(base_prompt("task_proposal"))
    assert prompt_kind(proposal) == "proposal"
    assert decomposition.endswith("reasoning: ")
    assert prompt_kind(decomposition) == "decomposition"
    assert inference.endswith("success metric: ")
    assert prompt_kind(inference) == "inference"
    with pytest.raises(UnrecognizedPromptShape):
        prompt_kind("hello")


def test_inference_prompt_needs_two_graphs(graph):
    with pytest.raises(TooFewGraphs):
        build_inference_prompt(TASK, [graph])


def test_query_block_is_recovered(graph):
    decomposition = build_decomposition_prompt(TASK, graph)
    inference = build_inference_prompt(TASK, [graph, SceneGraph(), graph])

    assert extract_task_description(decomposition) == TASK.description
    assert extract_graphs(decomposition) == [graph]
    assert extract_graphs(inference) == [graph, SceneGraph(), graph]
    assert extract_graphs(build_proposal_prompt(graph, "no_bbox"))[0].node("plate").x_range is None


def test_parse_proposals_drops_primitive_mentions():
    text = "tasks:\n - stack the red block on the blue block\n - Pick('red block') and lift it\nnoise\n -  open the drawer  \n"
    tasks = parse_proposals(text, scene_id="scene_0", origin="remote")

    assert [t.description for t in tasks] == ["stack the red block on the blue block", "open the drawer"]
    assert all(t.origin == "remote" and t.scene_id == "scene_0" for t in tasks)
    with pytest.raises(NoTasksFound):
        parse_proposals("tasks:\n - Press('button')\n")


@pytest.mark.parametrize(
    "line, kept",
    [
        ("Pick the cube from the table", False),
        ("then PlaceOn the plate", False),
        ("Press it", False),
        ("pick up the red block", True),
        ("press the catapult button", True),
        ("push the Pickle jar", True),
    ],
)
def test_bare_primitive_names_are_dropped(line, kept):
    tasks = parse_proposals(f"tasks:\n - {line}\n - open the drawer\n")
    assert [t.description for t in tasks] == ([line] if kept else []) + ["open the drawer"]


@pytest.mark.parametrize(
    "text, expected",
    [
        ("Pick('red block')", PrimitiveCall("Pick", "red block")),
        ("PlaceAt([0.05, 0.33, 0.08])", PrimitiveCall("PlaceAt", place_pos=(0.05, 0.33, 0.08))),
        ("Push('red block', [0, 1], 0.10)", PrimitiveCall("Push", "red block", direction=(0.0, 1.0), distance=0.1)),
        ("PlaceOn('plate)", PrimitiveCall("PlaceOn", "plate")),
        ("  Press( 'catapult button' ) ", PrimitiveCall("Press", "catapult button")),
    ],
)
def test_parse_call(text, expected):
    assert parse_call(text) == expected


@pytest.mark.parametrize(
    "text, error",
    [
        ("Grab('red block')", UnknownPrimitive),
        ("Pick()", BadArity),
        ("Pick('a', 'b')", BadArity),
        ("PlaceAt([0.1, 0.2])", BadArity),
        ("Push('red block', [0, 0], 0.1)", BadArity),
        ("Push('red block', [0, 1], -0.1)", BadArity),
        ("Push('red block', [0, 1], far)", BadArity),
        ("Pick", BadArity),
    ],
)
def test_parse_call_errors(text, error):
    with pytest.raises(error):
        parse_call(text)


def test_parse_decomposition(fixture_text):
    decomposition = parse_decomposition(fixture_text("decomposition_response.txt"))

    assert [step.index for step in decomposition.steps] == [1, 2, 3]
    assert decomposition.steps[2].subtask == "place the red block into the drawer"
    assert [call.name for call in decomposition.calls] == ["PrismaticJointOpen", "Pick", "PlaceOn"]
    assert decomposition.reasoning.startswith("The drawer is closed")


def test_decomposition_examples_in_base_prompt_parse():
    examples = [e for e in _examples(base_prompt("task_decomposition")) if "\nanswer:\n - " in e]
    assert len(examples) >= 3
    for example in examples:
        response = example.split("reasoning: ", 1)[1]
        assert parse_decomposition(response).steps


def test_parse_decomposition_errors():
    with pytest.raises(MissingAnswerSection):
        parse_decomposition("I would pick the block.")
    with pytest.raises(MalformedStep) as excinfo:
        parse_decomposition("answer:\n - 1. pick | [Pick('a')]\n - 3. place | [PlaceOn('b')]\n")
    assert excinfo.value.line == 3
    with pytest.raises(MalformedStep):
        parse_decomposition("answer:\n - 1. pick the block\n")
    with pytest.raises(MalformedStep):
        parse_decomposition("answer:\n - 1. pick | []\n")
    with pytest.raises(MalformedStep):
        parse_decomposition("answer:\n")
    with pytest.raises(UnknownPrimitive):
        parse_decomposition("answer:\n - 1. fly | [Fly('a')]\n")


def test_render_decomposition_parses_back(fixture_text):
    decomposition = parse_decomposition(fixture_text("decomposition_response.txt"))
    assert parse_decomposition(render_decomposition(decomposition)) == decomposition
    assert render_call(PrimitiveCall("PlaceAt", place_pos=(0.4, -0.05, 0.08))) == "PlaceAt([0.40, -0.05, 0.08])"
    assert render_call(PrimitiveCall("Push", "cube", direction=(0.0, 1.0), distance=0.125)) == "Push('cube', [0.00, 1.00], 0.125)"


@pytest.mark.parametrize(
    "text, answer",
    [
        ("The block is on the plate.\nreasoning: It is.\nanswer:\n  yes", "yes"),
        ("m\nreasoning: r\nanswer: No.", "no"),
        ("m\nreasoning: r\nanswer:\n  not sure", "not_sure"),
        ("m\nreasoning: r\nanswer:\n  maybe", "not_sure"),
        ("m\nreasoning: the answer: yes was wrong\nanswer:\n  no", "no"),
        ("m\nanswer:\n", "not_sure"),
    ],
)
def test_parse_verdict(text, answer):
    assert parse_verdict(text).answer == answer


def test_parse_verdict_sections():
    verdict = parse_verdict("success metric: The red block is on the plate.\nreasoning: It rests on it.\nanswer:\n  yes")
    assert verdict.success_metric == "The red block is on the plate."
    assert verdict.reasoning == "It rests on it."
    assert verdict.route == "brain"
    with pytest.raises(MissingAnswerSection):
        parse_verdict("yes")


def test_render_verdict_parses_back():
    verdict = Verdict("not_sure", "The drawer is open.", "Its state is unknown.")
    assert parse_verdict(render_verdict(verdict)) == verdict


def test_inference_examples_in_base_prompt():
    examples = _examples(base_prompt("success_inference"))
    answers = [parse_verdict(e.split("success metric:", 1)[1]).answer for e in examples]
    assert answers == ["no", "yes", "no"]


OBJECTS = ("red block", "blue block 2", "plate", "bowl", "drawer handle", "catapult button")
WORDS = ("pick", "up", "the", "red", "block", "place", "it", "on", "plate", "open", "drawer", "slowly")


def _random_call(rng):
    obj = OBJECTS[int(rng.integers(len(OBJECTS)))]
    kind = int(rng.integers(3))
    if kind == 0:
        names = sorted(NAMED_PRIMITIVES)
        return PrimitiveCall(names[int(rng.integers(len(names)))], obj)
    if kind == 1:
        x, y, z = (float(v) for v in rng.uniform(-1.0, 1.0, 3))
        return PrimitiveCall("PlaceAt", place_pos=(x, y, z))
    dx, dy = (float(v) for v in rng.uniform(-1.0, 1.0, 2))
    return PrimitiveCall("Push", obj, direction=(dx, dy), distance=float(rng.uniform(0.0, 0.5)))


def _random_decomposition(rng):
    steps = tuple(
        Step(
            index=i + 1,
            subtask=" ".join(WORDS[int(j)] for j in rng.integers(len(WORDS), size=int(rng.integers(1, 6)))),
            calls=tuple(_random_call(rng) for _ in range(int(rng.integers(1, 4)))),
        )
        for i in range(int(rng.integers(1, 6)))
    )
    reasoning = " ".join(WORDS[int(j)] for j in rng.integers(len(WORDS), size=8))
    return Decomposition(steps=steps, reasoning=reasoning)


def test_random_decompositions_survive_rendering():
    rng = np.random.default_rng(11)
    for _ in range(200):
        decomposition = _random_decomposition(rng)
        parsed = parse_decomposition(render_decomposition(decomposition))
        assert parsed == decomposition
        assert parsed.reasoning == decomposition.reasoning
