"""
Task diversity analysis

Tasks are reduced to five attributes, compared with a weighted mismatch
distance, embedded in the plane with SMACOF and clustered with k-means. The
convex-hull area a task set covers in the embedding is its area span.
"""

import csv
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import BadK, DiversityError, TooFewTasks
from .models import DistanceMatrix, Embedding2D, KMeansResult, TaskAttributes

logger = logging.getLogger(__name__)

# factor -> weight, highest first
FACTOR_WEIGHTS: Tuple[Tuple[str, int], ...] = (
    ("action", 5),
    ("location_shape", 4),
    ("object_shape", 3),
    ("object_color", 2),
    ("target_color", 1),
)
# questionnaire votes per factor (500 responses)
SURVEY_VOTES: Dict[str, int] = {
    "action": 166,
    "location_shape": 112,
    "object_shape": 130,
    "object_color": 53,
    "target_color": 39,
}
MAX_DISTANCE = sum(weight for _, weight in FACTOR_WEIGHTS)


# ============================================================================
# ATTRIBUTE EXTRACTION
# ============================================================================

@dataclass(frozen=True)
class Lexicon:
    """Keyword tables; multi-word entries win over their prefixes"""
    actions: Mapping[str, str] = field(
        default_factory=lambda: {
            "move": "move", "push": "push", "pick": "pick", "pick up": "pick",
            "place": "place", "put": "place", "stack": "stack", "open": "open",
            "close": "close", "press": "press", "gather": "gather", "align": "align",
            "arrange": "arrange", "swap": "swap", "launch": "launch", "sort": "sort",
            "form": "arrange", "make": "arrange", "pull": "pull", "slide": "push",
            "insert": "place", "remove": "move", "rotate": "rotate", "lift": "pick",
            "shoot": "launch", "trigger": "press", "separate": "sort", "group": "gather",
        }
    )
    colors: Tuple[str, ...] = ("red", "green", "blue", "yellow")
    shapes: Tuple[str, ...] = (
        "block", "cube", "bowl", "bin", "drawer", "stick", "plate", "line", "triangle",
        "square", "circle", "corner", "catapult", "catapult button", "button",
        "airplane toy", "turbo airplane toy", "toy", "handle", "center", "edge",
        "left", "right", "front", "back", "row", "column", "tower", "pile",
    )


DEFAULT_LEXICON = Lexicon()

_WORD_RE = re.compile(r"[a-z]+")


def _singular(word: str, vocabulary: Sequence[str]) -> str:
    if word in vocabulary or not word.endswith("s"):
        return word
    for candidate in (word[:-1], word[:-2]):
        if candidate in vocabulary:
            return candidate
    return word


def _phrases(words: List[str], entries: Sequence[str]) -> Dict[int, Tuple[str, int]]:
    """Longest entry starting at each word position: start -> (entry, length)"""
    table = sorted((tuple(entry.split()) for entry in entries), key=len, reverse=True)
    found: Dict[int, Tuple[str, int]] = {}
    for start in range(len(words)):
        for entry in table:
            if tuple(words[start:start + len(entry)]) == entry:
                found[start] = (" ".join(entry), len(entry))
                break
    return found


def extract_attributes(description: str, lexicon: Lexicon = DEFAULT_LEXICON) -> TaskAttributes:
    """
    Keyword extraction of the five task factors

    The first lexicon verb is the action. Shape phrases are read left to right;
    the first is the manipulated object, the second the target location. A
    color right before a shape belongs to it.

    Args:
        description: free-form task text
        lexicon: keyword tables

    Returns:
        TaskAttributes with None for absent factors
    """
    vocabulary = set(lexicon.colors) | {w for s in lexicon.shapes for w in s.split()}
    words = [_singular(w, tuple(vocabulary)) for w in _WORD_RE.findall(description.lower())]

    actions = _phrases(words, list(lexicon.actions))
    shapes = _phrases(words, lexicon.shapes)

    action: Optional[str] = None
    nouns: List[Tuple[str, Optional[str]]] = []
    pending_color: Optional[str] = None
    position = 0
    while position < len(words):
        if action is None and position in actions:
            entry, length = actions[position]
            action = lexicon.actions[entry]
            position += length
            continue
        if position in shapes:
            entry, length = shapes[position]
            nouns.append((entry, pending_color))
            pending_color = None
            position += length
            continue
        if words[position] in lexicon.colors:
            pending_color = words[position]
        position += 1

    obj = nouns[0] if nouns else (None, None)
    target = nouns[1] if len(nouns) > 1 else (None, None)
    return TaskAttributes(
        action=action,
        object_shape=obj[0],
        object_color=obj[1],
        location_shape=target[0],
        target_color=target[1],
    )


# ============================================================================
# DISTANCES
# ============================================================================

def task_distance(a: TaskAttributes, b: TaskAttributes) -> float:
    """Weighted count of differing factors; one-sided absence differs, two-sided does not"""
    return float(sum(weight for name, weight in FACTOR_WEIGHTS if getattr(a, name) != getattr(b, name)))


def distance_matrix(tasks: Sequence[TaskAttributes]) -> DistanceMatrix:
    """
    Raises:
        TooFewTasks: fewer than two tasks
    """
    n = len(tasks)
    if n < 2:
        raise TooFewTasks(f"a distance matrix needs at least 2 tasks, got {n}")
    entries = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            entries[i, j] = entries[j, i] = task_distance(tasks[i], tasks[j])
    return DistanceMatrix(n=n, entries=entries)


def _check_matrix(d: DistanceMatrix) -> np.ndarray:
    entries = np.asarray(d.entries, dtype=float)
    if entries.shape != (d.n, d.n):
        raise DiversityError(f"distance matrix shape {entries.shape} does not match n={d.n}")
    if not np.allclose(entries, entries.T) or np.any(np.diag(entries) != 0) or np.any(entries < 0):
        raise DiversityError("distance matrix must be symmetric, non-negative and zero on the diagonal")
    return entries


# ============================================================================
# SMACOF
# ============================================================================

def classical_mds(entries: np.ndarray, dims: int = 2) -> np.ndarray:
    """Torgerson embedding from the double-centered squared distances"""
    n = len(entries)
    centering = np.eye(n) - np.ones((n, n)) / n
    gram = -0.5 * centering @ (entries ** 2) @ centering
    evals, evecs = np.linalg.eigh(gram)
    order = np.argsort(evals)[::-1][:dims]
    scale = np.sqrt(np.clip(evals[order], 0.0, None))
    points = evecs[:, order] * scale
    if points.shape[1] < dims:
        points = np.hstack([points, np.zeros((n, dims - points.shape[1]))])
    return points


def pairwise(points: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - points[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=-1))


def raw_stress(entries: np.ndarray, points: np.ndarray) -> float:
    upper = np.triu_indices(len(entries), k=1)
    return float(((entries - pairwise(points))[upper] ** 2).sum())


def guttman_transform(entries: np.ndarray, points: np.ndarray) -> np.ndarray:
    n = len(entries)
    dist = pairwise(points)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(dist > 0, entries / dist, 0.0)
    b = -ratio
    np.fill_diagonal(b, 0.0)
    np.fill_diagonal(b, -b.sum(axis=1))
    return b @ points / n


def mds_embed(d: DistanceMatrix, max_iters: int = 300, tol: float = 1e-9, seed: int = 0) -> Embedding2D:
    """
    Two-dimensional SMACOF embedding, started from classical MDS

    Args:
        d: valid distance matrix
        max_iters: Guttman transform budget
        tol: stop once the relative stress decrease falls below this
        seed: unused by the deterministic start; kept for a uniform signature

    Returns:
        Embedding2D; an all-zero matrix yields points at the origin flagged degenerate
    """
    entries = _check_matrix(d)
    if d.n >= 2 and not np.any(entries):
        logger.warning("all task distances are zero, embedding collapses to the origin")
        return Embedding2D(points=np.zeros((d.n, 2)), stress=0.0, stress_history=[0.0], degenerate=True)

    points = classical_mds(entries)
    stress = raw_stress(entries, points)
    history = [stress]
    iterations = 0
    while iterations < max_iters and stress > 0.0:
        candidate = guttman_transform(entries, points)
        new_stress = raw_stress(entries, candidate)
        iterations += 1
        if new_stress > stress * (1 + 1e-12) + 1e-15:
            logger.warning("stress rose from %.3e to %.3e at iteration %d, stopping", stress, new_stress, iterations)
            break
        points = candidate
        history.append(new_stress)
        decrease = (stress - new_stress) / stress
        stress = new_stress
        if decrease < tol:
            break
    logger.debug("smacof finished after %d iterations, stress %.3e", iterations, stress)
    return Embedding2D(points=points, stress=stress, stress_history=history, iterations=iterations)


# ============================================================================
# CLUSTERING
# ============================================================================

def _squared(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=-1)


def kmeans_plus_plus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    chosen = [int(rng.integers(n))]
    for _ in range(1, k):
        nearest = _squared(points, points[chosen]).min(axis=1)
        total = nearest.sum()
        if total <= 0:
            remaining = [i for i in range(n) if i not in chosen]
            chosen.append(int(rng.choice(remaining)))
        else:
            chosen.append(int(rng.choice(n, p=nearest / total)))
    return points[chosen].astype(float)


def kmeans(points: np.ndarray, k: int, seed: int = 0, max_iters: int = 100) -> KMeansResult:
    """
    Lloyd's algorithm from a k-means++ start

    Raises:
        BadK: k outside 1..n
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    if not 1 <= k <= n:
        raise BadK(f"k must lie in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    centroids = kmeans_plus_plus(points, k, rng)
    assignments = _squared(points, centroids).argmin(axis=1)
    history = [float(_squared(points, centroids).min(axis=1).sum())]

    for _ in range(max_iters):
        for cluster in range(k):
            members = points[assignments == cluster]
            if len(members):
                centroids[cluster] = members.mean(axis=0)
            else:
                # reseed at the point worst served by its centroid
                cost = ((points - centroids[assignments]) ** 2).sum(axis=1)
                far = int(cost.argmax())
                centroids[cluster] = points[far]
                assignments[far] = cluster
        updated = _squared(points, centroids).argmin(axis=1)
        history.append(float(((points - centroids[updated]) ** 2).sum()))
        stable = np.array_equal(updated, assignments)
        assignments = updated
        if stable:
            break

    return KMeansResult(
        assignments=assignments,
        centroids=centroids,
        inertia=history[-1],
        inertia_history=history,
    )


# ============================================================================
# AREA SPAN
# ============================================================================

def _cross(o: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    return float((a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]))


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Monotone chain hull, counter-clockwise, collinear points dropped"""
    unique = sorted({(float(x), float(y)) for x, y in np.asarray(points, dtype=float).reshape(-1, 2)})
    if len(unique) <= 2:
        return np.array(unique).reshape(-1, 2)
    pts = np.array(unique)
    lower: List[np.ndarray] = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: List[np.ndarray] = []
    for p in pts[::-1]:
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def polygon_area(vertices: np.ndarray) -> float:
    if len(vertices) < 3:
        return 0.0
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def hull_area(points: np.ndarray) -> float:
    return polygon_area(convex_hull(points))


def cluster_hull_areas(points: np.ndarray, assignments: np.ndarray, k: int) -> List[float]:
    return [hull_area(points[assignments == cluster]) for cluster in range(k)]


@dataclass
class DiversityAnalysis:
    descriptions: List[str]
    groups: List[str]
    attributes: List[TaskAttributes]
    distances: DistanceMatrix
    embedding: Embedding2D
    clusters: KMeansResult
    cluster_areas: List[float]
    group_areas: Dict[str, float]


def analyze(
    task_sets: Mapping[str, Sequence[str]],
    k: int = 4,
    seed: int = 0,
    max_iters: int = 300,
    lexicon: Lexicon = DEFAULT_LEXICON,
) -> DiversityAnalysis:
    """
    Embed several task sets jointly and measure each set's area span

    Args:
        task_sets: group name -> task descriptions
        k: cluster count, capped at the number of tasks
        seed: k-means++ seed
        max_iters: SMACOF budget
    """
    descriptions: List[str] = []
    groups: List[str] = []
    for name, tasks in task_sets.items():
        descriptions.extend(tasks)
        groups.extend([name] * len(tasks))
    attributes = [extract_attributes(text, lexicon) for text in descriptions]
    distances = distance_matrix(attributes)
    embedding = mds_embed(distances, max_iters=max_iters, seed=seed)
    k = min(k, len(descriptions))
    clusters = kmeans(embedding.points, k, seed=seed)
    members = np.array(groups)
    group_areas = {name: hull_area(embedding.points[members == name]) for name in task_sets}
    for name, area in group_areas.items():
        logger.info("task set %s: %d tasks, area span %.3f", name, int((members == name).sum()), area)
    return DiversityAnalysis(
        descriptions=descriptions,
        groups=groups,
        attributes=attributes,
        distances=distances,
        embedding=embedding,
        clusters=clusters,
        cluster_areas=cluster_hull_areas(embedding.points, clusters.assignments, k),
        group_areas=group_areas,
    )


# ============================================================================
# FILES
# ============================================================================

_BULLET_RE = re.compile(r"^\s*(?:[-*]\s+|\d+[.)]\s+)?")


def read_task_list(path: Path) -> List[str]:
    """One task per line; blank lines, '#' comments and list markers are ignored"""
    tasks = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            tasks.append(_BULLET_RE.sub("", text, count=1).strip())
    return tasks


def write_distance_csv(analysis: DiversityAnalysis, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["task"] + analysis.descriptions)
        for text, row in zip(analysis.descriptions, analysis.distances.entries):
            writer.writerow([text] + [f"{value:g}" for value in row])


def write_embedding_csv(analysis: DiversityAnalysis, path: Path) -> None:
    """Coordinates, cluster ids and cluster hull areas; the last column is left for external embeddings"""
    columns = ["index", "group", "task", "x", "y", "cluster", "cluster_hull_area", "external_embedding"]
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(columns)
        for i, text in enumerate(analysis.descriptions):
            cluster = int(analysis.clusters.assignments[i])
            x, y = analysis.embedding.points[i]
            writer.writerow([
                i, analysis.groups[i], text, f"{x:.6f}", f"{y:.6f}",
                cluster, f"{analysis.cluster_areas[cluster]:.6f}", "",
            ])


def write_area_csv(analysis: DiversityAnalysis, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["group", "tasks", "area_span"])
        for name, area in analysis.group_areas.items():
            writer.writerow([name, analysis.groups.count(name), f"{area:.6f}"])
