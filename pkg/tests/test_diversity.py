import csv
import itertools

import numpy as np
import pytest

from bodysync.config import REPO_ROOT
from bodysync.diversity import (
    MAX_DISTANCE,
    analyze,
    convex_hull,
    distance_matrix,
    extract_attributes,
    hull_area,
    kmeans,
    mds_embed,
    pairwise,
    read_task_list,
    task_distance,
    write_area_csv,
    write_distance_csv,
    write_embedding_csv,
)
from bodysync.errors import BadK, DiversityError, TooFewTasks
from bodysync.models import DistanceMatrix, TaskAttributes

TASK_SETS = REPO_ROOT / "task_sets"


@pytest.mark.parametrize(
    "text, expected",
    [
        ("move the green block into the bowl", TaskAttributes("move", "block", "bowl", "green", None)),
        ("push the red block towards the right", TaskAttributes("push", "block", "right", "red", None)),
        ("stack the red block on top of the blue block", TaskAttributes("stack", "block", "block", "red", "blue")),
        ("Pick up the red blocks", TaskAttributes("pick", "block", None, "red", None)),
        ("press the catapult button", TaskAttributes("press", "catapult button", None, None, None)),
        ("wave hello", TaskAttributes()),
    ],
)
def test_extract_attributes(text, expected):
    assert extract_attributes(text) == expected


def test_distance_weights():
    a = TaskAttributes("move", "block", "bowl", "green", None)
    assert task_distance(a, a) == 0
    assert task_distance(a, TaskAttributes("push", "block", "bowl", "green", None)) == 5
    assert task_distance(a, TaskAttributes("move", "block", "bowl", "red", "blue")) == 3
    assert task_distance(a, TaskAttributes()) == MAX_DISTANCE - 1
    assert task_distance(a, TaskAttributes("push", "bowl", "plate", "red", "blue")) == MAX_DISTANCE == 15


def test_distance_is_a_metric():
    rng = np.random.default_rng(0)
    pools = {
        "action": ["move", "push", None],
        "object_shape": ["block", "bowl", None],
        "location_shape": ["plate", "left", None],
        "object_color": ["red", "green", None],
        "target_color": ["blue", None],
    }
    tasks = [
        TaskAttributes(**{name: values[rng.integers(len(values))] for name, values in pools.items()})
        for _ in range(12)
    ]
    for a, b, c in itertools.product(tasks, repeat=3):
        assert task_distance(a, b) == task_distance(b, a)
        assert 0 <= task_distance(a, b) <= MAX_DISTANCE
        assert task_distance(a, c) <= task_distance(a, b) + task_distance(b, c)


def test_distance_matrix_needs_two_tasks():
    with pytest.raises(TooFewTasks):
        distance_matrix([TaskAttributes("move")])


@pytest.mark.parametrize(
    "entries",
    [
        [[0, 3, 4], [3, 0, 5], [4, 5, 0]],
        [[0, 1, np.sqrt(2), 1], [1, 0, 1, np.sqrt(2)], [np.sqrt(2), 1, 0, 1], [1, np.sqrt(2), 1, 0]],
        [[0, 2.5], [2.5, 0]],
    ],
)
def test_euclidean_distances_embed_exactly(entries):
    entries = np.array(entries, dtype=float)
    embedding = mds_embed(DistanceMatrix(len(entries), entries))

    assert embedding.stress < 1e-9
    assert np.allclose(pairwise(embedding.points), entries, atol=1e-5)


def test_stress_never_rises_on_task_distances():
    tasks = read_task_list(TASK_SETS / "tasks_30.txt")
    embedding = mds_embed(distance_matrix([extract_attributes(t) for t in tasks]))
    history = embedding.stress_history
    assert all(later <= earlier + 1e-9 for earlier, later in zip(history, history[1:]))


def test_stress_is_monotone_on_random_matrices():
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(3, 12))
        upper = np.triu(rng.uniform(0.1, 15.0, (n, n)), k=1)
        history = mds_embed(DistanceMatrix(n, upper + upper.T)).stress_history
        assert all(later <= earlier * (1 + 1e-12) + 1e-15 for earlier, later in zip(history, history[1:]))


def test_zero_distances_collapse():
    embedding = mds_embed(DistanceMatrix(3, np.zeros((3, 3))))
    assert embedding.degenerate
    assert not np.any(embedding.points)


def test_invalid_matrix():
    with pytest.raises(DiversityError):
        mds_embed(DistanceMatrix(2, np.array([[0.0, 1.0], [2.0, 0.0]])))
    with pytest.raises(DiversityError):
        mds_embed(DistanceMatrix(3, np.zeros((2, 2))))


def test_kmeans_separates_blobs():
    rng = np.random.default_rng(1)
    points = np.vstack([rng.normal(0, 0.1, (10, 2)), rng.normal(5, 0.1, (10, 2))])
    result = kmeans(points, 2, seed=3)

    assert len(set(result.assignments[:10])) == 1
    assert len(set(result.assignments[10:])) == 1
    assert result.assignments[0] != result.assignments[10]
    assert all(b <= a + 1e-12 for a, b in zip(result.inertia_history, result.inertia_history[1:]))


def test_kmeans_edge_k():
    points = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
    assert kmeans(points, 3).inertia == pytest.approx(0.0)
    single = kmeans(points, 1)
    assert np.allclose(single.centroids[0], points.mean(axis=0))
    for k in (0, 4):
        with pytest.raises(BadK):
            kmeans(points, k)


def test_hull():
    square = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5], [0.5, 0]])
    assert len(convex_hull(square)) == 4
    assert hull_area(square) == pytest.approx(1.0)
    assert hull_area(np.array([[0, 0], [1, 1], [2, 2]])) == 0.0
    assert len(convex_hull(np.array([[1, 1], [1, 1]]))) == 1


def test_nested_task_sets_span_nested_areas():
    task_sets = {name: read_task_list(TASK_SETS / f"{name}.txt") for name in ("tasks_10", "tasks_30", "tasks_60")}
    analysis = analyze(task_sets, k=4)

    assert len(analysis.descriptions) == 100
    assert analysis.distances.n == 100
    assert set(analysis.clusters.assignments) <= set(range(4))
    areas = analysis.group_areas
    assert 0 < areas["tasks_10"] <= areas["tasks_30"] + 1e-9 <= areas["tasks_60"] + 2e-9


def test_read_task_list(tmp_path):
    path = tmp_path / "tasks.txt"
    path.write_text("# header\n\n - move the bowl\n2. push the red block\n* open the drawer\nclose the drawer\n")
    assert read_task_list(path) == ["move the bowl", "push the red block", "open the drawer", "close the drawer"]


def test_csv_outputs(tmp_path):
    analysis = analyze({"a": ["move the red block", "push the bowl"], "b": ["open the drawer"]}, k=2)
    write_distance_csv(analysis, tmp_path / "distances.csv")
    write_embedding_csv(analysis, tmp_path / "embedding.csv")
    write_area_csv(analysis, tmp_path / "areas.csv")

    with open(tmp_path / "distances.csv", newline="") as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["task", "move the red block", "push the bowl", "open the drawer"]
    assert rows[1][1] == "0"
    with open(tmp_path / "embedding.csv", newline="") as handle:
        embedded = list(csv.DictReader(handle))
    assert [row["group"] for row in embedded] == ["a", "a", "b"]
    with open(tmp_path / "areas.csv", newline="") as handle:
        areas = list(csv.DictReader(handle))
    assert [(row["group"], row["tasks"]) for row in areas] == [("a", "2"), ("b", "1")]
    assert float(areas[1]["area_span"]) == 0.0
