"""
Prompt construction and response grammars

Builders concatenate a verbatim base prompt with the query block. Parsers are
tolerant for task proposals (bad lines are dropped) and strict for
decompositions (any defect fails the task).
"""

import logging
import re
from functools import lru_cache
from importlib.resources import files
from typing import Any, List, Optional, Sequence

from .errors import (
    BadArity,
    MalformedStep,
    MissingAnswerSection,
    NoTasksFound,
    TooFewGraphs,
    UnknownPrimitive,
    UnrecognizedPromptShape,
)
from .models import (
    NAMED_PRIMITIVES,
    PRIMITIVES,
    Decomposition,
    PrimitiveCall,
    SceneGraph,
    Step,
    TaskSpec,
    Verdict,
)
from .scenegraph import parse_graph, serialize_graph

logger = logging.getLogger(__name__)

PROPOSAL_SUFFIX = "tasks:"
DECOMPOSITION_SUFFIX = "reasoning: "
INFERENCE_SUFFIX = "success metric: "
GRAPH_DIVIDER = "----------"
FENCE = "```"

_PRIMITIVE_USE = re.compile(r"\b(" + "|".join(PRIMITIVES) + r")\b")
_PROPOSAL_LINE = re.compile(r"^\s*-\s+(?P<text>.+?)\s*$")
_STEP_LINE = re.compile(r"^-\s*(?P<index>\d+)\.\s*(?P<rest>.*)$")
_CALL = re.compile(r"^(?P<name>[A-Za-z_]\w*)\s*\((?P<args>.*)\)$", re.DOTALL)
_ANSWER = re.compile(r"answer:", re.IGNORECASE)
_REASONING = re.compile(r"reasoning:", re.IGNORECASE)
_METRIC_HEADER = re.compile(r"^\s*success metric:\s*", re.IGNORECASE)


@lru_cache(maxsize=None)
def base_prompt(name: str) -> str:
    """Load a bundled base prompt: task_proposal, task_decomposition or success_inference"""
    text = files("bodysync").joinpath(f"prompt_templates/{name}.txt").read_text(encoding="utf-8")
    return text.rstrip("\n")


# ============================================================================
# BUILDERS
# ============================================================================

def build_proposal_prompt(graph: SceneGraph, mode: str = "full") -> str:
    return (
        base_prompt("task_proposal")
        + "\n" + FENCE + "\n"
        + "scene graph:\n"
        + serialize_graph(graph, mode)
        + PROPOSAL_SUFFIX
    )


def build_decomposition_prompt(task: TaskSpec, graph: SceneGraph, mode: str = "full") -> str:
    return (
        base_prompt("task_decomposition")
        + "\n" + FENCE + "\n"
        + "task description: " + task.description + "\n"
        + "scene graph:\n"
        + serialize_graph(graph, mode)
        + DECOMPOSITION_SUFFIX
    )


def build_inference_prompt(task: TaskSpec, graphs: Sequence[SceneGraph], mode: str = "full") -> str:
    """
    Success-inference prompt over a chronological graph list

    Raises:
        TooFewGraphs: fewer than a before and an after graph
    """
    if len(graphs) < 2:
        raise TooFewGraphs(f"need at least 2 scene graphs, got {len(graphs)}")
    graph_list = "".join(f"  {GRAPH_DIVIDER}\n" + serialize_graph(g, mode) for g in graphs)
    return (
        base_prompt("success_inference")
        + "\n" + FENCE + "\n"
        + "task description: " + task.description + "\n"
        + "scene graph list:\n"
        + graph_list
        + INFERENCE_SUFFIX
    )


def prompt_kind(prompt: str) -> str:
    """Classify a built prompt by its suffix"""
    if prompt.endswith(PROPOSAL_SUFFIX):
        return "proposal"
    if prompt.endswith(DECOMPOSITION_SUFFIX):
        return "decomposition"
    if prompt.endswith(INFERENCE_SUFFIX):
        return "inference"
    raise UnrecognizedPromptShape("prompt does not end with a known query suffix")


def query_block(prompt: str) -> str:
    """The part of a prompt after its last code fence"""
    return prompt.rsplit(FENCE + "\n", 1)[-1]


def extract_task_description(prompt: str) -> Optional[str]:
    for line in query_block(prompt).splitlines():
        if line.startswith("task description: "):
            return line[len("task description: "):]
    return None


def extract_graphs(prompt: str) -> List[SceneGraph]:
    """Parse every scene graph embedded in the query block of a prompt"""
    block = query_block(prompt)
    for suffix in (PROPOSAL_SUFFIX, DECOMPOSITION_SUFFIX, INFERENCE_SUFFIX):
        if block.endswith(suffix):
            block = block[: -len(suffix)]
            break
    if "scene graph list:\n" in block:
        body = block.split("scene graph list:\n", 1)[1]
        chunks: List[List[str]] = []
        for line in body.splitlines():
            if line.strip() == GRAPH_DIVIDER:
                chunks.append([])
            elif chunks:
                chunks[-1].append(line)
        return [parse_graph("\n".join(chunk)) for chunk in chunks]
    if "scene graph:\n" in block:
        return [parse_graph(block.split("scene graph:\n", 1)[1])]
    return []


# ============================================================================
# PROPOSALS
# ============================================================================

def parse_proposals(text: str, scene_id: str = "", origin: str = "oracle") -> List[TaskSpec]:
    """
    Parse " - task" lines into tasks, dropping invalid ones

    Raises:
        NoTasksFound: no valid task line
    """
    tasks = []
    for line in text.splitlines():
        match = _PROPOSAL_LINE.match(line)
        if not match:
            continue
        description = match.group("text")
        if _PRIMITIVE_USE.search(description):
            logger.info("dropping proposal naming a primitive action: %r", description)
            continue
        tasks.append(TaskSpec(description=description, scene_id=scene_id, origin=origin))
    if not tasks:
        raise NoTasksFound("no task lines in proposal response")
    return tasks


def render_proposals(tasks: Sequence[TaskSpec]) -> str:
    return "\n".join(f" - {task.description}" for task in tasks)


# ============================================================================
# DECOMPOSITION
# ============================================================================

def _split_top_level(text: str, separator: str) -> List[str]:
    parts = []
    depth = 0
    quoted = False
    current = []
    for char in text:
        if char == "'":
            quoted = not quoted
        elif not quoted and char in "[(":
            depth += 1
        elif not quoted and char in "])":
            depth -= 1
        if char == separator and depth == 0 and not quoted:
            parts.append("".join(current))
            current = []
        else:
            current.append(char)
    parts.append("".join(current))
    return parts


def _parse_argument(token: str, name: str) -> Any:
    token = token.strip()
    if token.startswith("'"):
        # a missing closing quote is tolerated
        return token[1:-1] if token.endswith("'") and len(token) > 1 else token[1:]
    if token.startswith("["):
        if not token.endswith("]"):
            raise BadArity(name, f"unterminated list {token!r}")
        inner = token[1:-1].strip()
        return [_number(item, name) for item in inner.split(",")] if inner else []
    return _number(token, name)


def _number(token: str, name: str) -> float:
    try:
        return float(token.strip())
    except ValueError as exc:
        raise BadArity(name, f"expected a numeric literal, got {token.strip()!r}") from exc


def parse_call(text: str) -> PrimitiveCall:
    """
    Parse one primitive invocation such as "Push('red block', [0, 1], 0.10)"

    Raises:
        UnknownPrimitive: the name is not in the primitive set
        BadArity: wrong argument count or types
    """
    match = _CALL.match(text.strip())
    if not match:
        raise BadArity(text.strip() or "<empty>", "not a call")
    name = match.group("name")
    if name not in PRIMITIVES:
        raise UnknownPrimitive(name)
    raw = match.group("args").strip()
    args = [_parse_argument(tok, name) for tok in _split_top_level(raw, ",")] if raw else []

    if name in NAMED_PRIMITIVES:
        if len(args) != 1 or not isinstance(args[0], str) or not args[0].strip():
            raise BadArity(name, "expects one object name")
        return PrimitiveCall(name=name, obj_name=args[0].strip())
    if name == "PlaceAt":
        if len(args) != 1 or not isinstance(args[0], list) or len(args[0]) != 3:
            raise BadArity(name, "expects one [x, y, z] position")
        x, y, z = args[0]
        return PrimitiveCall(name=name, place_pos=(x, y, z))
    # Push
    if (
        len(args) != 3
        or not isinstance(args[0], str)
        or not args[0].strip()
        or not isinstance(args[1], list)
        or len(args[1]) != 2
        or not isinstance(args[2], float)
    ):
        raise BadArity(name, "expects (obj_name, [dx, dy], distance)")
    dx, dy = args[1]
    if dx == 0.0 and dy == 0.0:
        raise BadArity(name, "direction must be non-zero")
    if args[2] < 0.0:
        raise BadArity(name, "distance must be non-negative")
    return PrimitiveCall(name=name, obj_name=args[0].strip(), direction=(dx, dy), distance=args[2])


def parse_decomposition(text: str) -> Decomposition:
    """
    Parse a decomposition response

    Each step line reads "- N. subtask | [Call(...); Call(...)]"; parsing
    stops at a closing code fence.

    Raises:
        MissingAnswerSection: no "answer:" header
        MalformedStep: a step line does not follow the grammar
        UnknownPrimitive / BadArity: a call is invalid
    """
    lines = text.splitlines()
    answer_line = next((i for i, line in enumerate(lines) if line.strip().lower().startswith("answer:")), None)
    if answer_line is None:
        raise MissingAnswerSection("decomposition response has no answer section")
    reasoning = "\n".join(lines[:answer_line]).strip()
    reasoning = _REASONING.sub("", reasoning, count=1).strip() if reasoning.lower().startswith("reasoning:") else reasoning

    steps: List[Step] = []
    for offset, raw in enumerate(lines[answer_line + 1:]):
        line_no = answer_line + offset + 2
        line = raw.strip()
        if line.startswith(FENCE):
            break
        if not line:
            continue
        match = _STEP_LINE.match(line)
        if not match:
            raise MalformedStep(line_no, "expected '- N. subtask | [calls]'")
        index = int(match.group("index"))
        if index != len(steps) + 1:
            raise MalformedStep(line_no, f"step index {index}, expected {len(steps) + 1}")
        subtask, separator, calls_text = match.group("rest").rpartition(" | ")
        calls_text = calls_text.strip()
        if not separator or not calls_text.startswith("[") or not calls_text.endswith("]"):
            raise MalformedStep(line_no, "missing '| [calls]'")
        chunks = [chunk for chunk in _split_top_level(calls_text[1:-1], ";") if chunk.strip()]
        if not chunks:
            raise MalformedStep(line_no, "step has no calls")
        calls = tuple(parse_call(chunk) for chunk in chunks)
        steps.append(Step(index=index, subtask=subtask.strip(), calls=calls))
    if not steps:
        raise MalformedStep(answer_line + 1, "answer section has no steps")
    return Decomposition(steps=tuple(steps), reasoning=reasoning)


def format_literal(value: float) -> str:
    text = f"{value:.2f}"
    return text if float(text) == value else repr(float(value))


def render_call(call: PrimitiveCall) -> str:
    if call.name == "PlaceAt":
        assert call.place_pos is not None
        return "PlaceAt([" + ", ".join(format_literal(v) for v in call.place_pos) + "])"
    if call.name == "Push":
        assert call.direction is not None and call.distance is not None
        direction = ", ".join(format_literal(v) for v in call.direction)
        return f"Push('{call.obj_name}', [{direction}], {format_literal(call.distance)})"
    return f"{call.name}('{call.obj_name}')"


def render_decomposition(decomposition: Decomposition) -> str:
    """Render in the response grammar, the text following "reasoning: " """
    lines = [decomposition.reasoning, "answer:"]
    for step in decomposition.steps:
        calls = "; ".join(render_call(call) for call in step.calls)
        lines.append(f" - {step.index}. {step.subtask} | [{calls}]")
    return "\n".join(lines)


# ============================================================================
# VERDICTS
# ============================================================================

def _answer_token(text: str) -> str:
    cleaned = text.strip().strip("\"'`.").lower()
    if cleaned.startswith("not sure"):
        return "not_sure"
    first = re.split(r"[\s.,;:!\"']+", cleaned, maxsplit=1)[0] if cleaned else ""
    return first if first in ("yes", "no") else "not_sure"


def parse_verdict(text: str) -> Verdict:
    """
    Parse a success-inference response

    Anything but a recognizable yes / no / not sure answer maps to not_sure.

    Raises:
        MissingAnswerSection: no "answer:" header
    """
    answers = list(_ANSWER.finditer(text))
    if not answers:
        raise MissingAnswerSection("inference response has no answer section")
    answer_at = answers[-1]
    head = text[: answer_at.start()]
    tail = text[answer_at.end():]

    reasoning_at = _REASONING.search(head)
    if reasoning_at:
        metric = head[: reasoning_at.start()]
        reasoning = head[reasoning_at.end():]
    else:
        metric, reasoning = head, ""
    metric = _METRIC_HEADER.sub("", metric.strip(), count=1)

    token_line = next((line for line in tail.splitlines() if line.strip()), "")
    return Verdict(
        answer=_answer_token(token_line),
        success_metric=metric.strip(),
        reasoning=reasoning.strip(),
        route="brain",
    )


def render_verdict(verdict: Verdict) -> str:
    """Render in the response grammar, the text following "success metric: " """
    answer = "not sure" if verdict.answer == "not_sure" else verdict.answer
    return f"{verdict.success_metric}\nreasoning: {verdict.reasoning}\nanswer:\n  {answer}"

