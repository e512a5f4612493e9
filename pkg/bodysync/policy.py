"""
Behavior-cloning policy

Observations and task text are flattened into a fixed-length feature vector;
a fully connected ReLU network regresses the recorded 10-D action frames,
with the target position expressed relative to the gripper.
Training is plain minibatch SGD with momentum and hand-derived gradients.
"""

import csv
import hashlib
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import geometry
from .config import PolicyConfig, RunConfig, TrainingConfig
from .errors import EmptyPool, MissingGoal, PolicyError, TooManyObjects, WorldError
from .metrics import format_percent, percent
from .models import (
    STATE_LISTS,
    ActionFrame,
    Observation,
    TaskSpec,
    Trajectory,
)
from .orchestrator import stable_hash
from .repertoire import RepertoireTask, SceneBundle
from .rules import RuleBasedVerifier
from .scenegraph import build_scene_graph
from .world import Simulator

logger = logging.getLogger(__name__)

ACTION_DIM = 10
STATE_SLOTS = 3
STD_FLOOR = 1e-6
# features varying by less than this are left unscaled
FEATURE_STD_FLOOR = 1e-3
CHECKPOINT_VERSION = 1

_TOKEN_RE = re.compile(r"[a-z0-9]+")


# ============================================================================
# FEATURES
# ============================================================================

def _bucket(text: str, buckets: int) -> int:
    return stable_hash(text) % buckets


def slot_width(config: PolicyConfig) -> int:
    # presence, position, offset from the gripper, half extents, state one-hot, category buckets
    return 1 + 3 + 3 + 3 + STATE_SLOTS + config.category_buckets


def feature_dim(config: PolicyConfig) -> int:
    return config.max_objects * slot_width(config) + 5 + config.text_buckets


def _state_index(category: str, state: str) -> int:
    states = STATE_LISTS.get(category.split()[-1])
    if states is None or state not in states:
        return 0
    return 1 + states.index(state)


def encode_text(description: str, buckets: int) -> np.ndarray:
    """Hashed bag of words, L2-normalized"""
    vector = np.zeros(buckets)
    for token in _TOKEN_RE.findall(description.lower()):
        vector[_bucket(token, buckets)] += 1.0
    norm = np.linalg.norm(vector)
    return vector / norm if norm > 0 else vector


def featurize(obs: Observation, task: TaskSpec, config: Optional[PolicyConfig] = None) -> np.ndarray:
    """
    Fixed-length feature vector for one observation under one task

    Raises:
        TooManyObjects: more objects than object slots
    """
    config = config or PolicyConfig()
    records = sorted(obs.records, key=lambda r: (r.category, r.instance_index))
    if len(records) > config.max_objects:
        raise TooManyObjects(f"{len(records)} objects exceed the {config.max_objects} feature slots")

    width = slot_width(config)
    gripper_position = np.asarray(obs.gripper_position, dtype=float)
    slots = np.zeros((config.max_objects, width))
    for row, record in zip(slots, records):
        lo = np.array([record.x_range[0], record.y_range[0], record.z_range[0]])
        hi = np.array([record.x_range[1], record.y_range[1], record.z_range[1]])
        row[0] = 1.0
        row[1:4] = record.position
        row[4:7] = np.asarray(record.position) - gripper_position
        row[7:10] = (hi - lo) / 2.0
        row[10 + _state_index(record.category, record.state)] = 1.0
        row[10 + STATE_SLOTS + _bucket(record.category, config.category_buckets)] = 1.0

    gripper = np.array([*obs.gripper_position, float(obs.gripper_closed), float(obs.holding)])
    return np.concatenate([slots.ravel(), gripper, encode_text(task.description, config.text_buckets)])


# ============================================================================
# NETWORK
# ============================================================================

@dataclass
class PolicyModel:
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    feature_mean: np.ndarray
    feature_std: np.ndarray
    action_mean: np.ndarray
    action_std: np.ndarray
    manifest: Dict = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return int(self.weights[0].shape[0])

    @property
    def output_dim(self) -> int:
        return int(self.weights[-1].shape[1])

    @property
    def hidden(self) -> Tuple[int, ...]:
        return tuple(int(w.shape[1]) for w in self.weights[:-1])

    def normalize_features(self, x: np.ndarray) -> np.ndarray:
        return (x - self.feature_mean) / self.feature_std

    def normalize_actions(self, y: np.ndarray) -> np.ndarray:
        return (y - self.action_mean) / self.action_std

    def denormalize_actions(self, y: np.ndarray) -> np.ndarray:
        return y * self.action_std + self.action_mean


def init_model(input_dim: int, hidden: Sequence[int], seed: int, output_dim: int = ACTION_DIM) -> PolicyModel:
    """He-initialized network with identity normalization"""
    rng = np.random.default_rng(seed)
    sizes = [input_dim, *hidden, output_dim]
    weights = [rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)) for fan_in, fan_out in zip(sizes, sizes[1:])]
    biases = [np.zeros(fan_out) for fan_out in sizes[1:]]
    return PolicyModel(
        weights=weights,
        biases=biases,
        feature_mean=np.zeros(input_dim),
        feature_std=np.ones(input_dim),
        action_mean=np.zeros(output_dim),
        action_std=np.ones(output_dim),
    )


def random_like(model: PolicyModel, seed: int) -> PolicyModel:
    """Untrained network of the same shape that keeps the normalization statistics"""
    fresh = init_model(model.input_dim, model.hidden, seed, model.output_dim)
    return replace(
        model,
        weights=fresh.weights,
        biases=fresh.biases,
        manifest={"random_seed": seed},
    )


def forward(model: PolicyModel, x: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Network output on normalized inputs, plus the layer inputs for backprop"""
    activations = [x]
    h = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        h = z if i == last else np.maximum(z, 0.0)
        activations.append(h)
    return h, activations


def loss_and_gradients(
    model: PolicyModel, x: np.ndarray, y: np.ndarray
) -> Tuple[float, List[np.ndarray], List[np.ndarray]]:
    """
    Mean squared error over all batch entries and its gradients

    Args:
        x: normalized features, (batch, input_dim)
        y: normalized targets, (batch, output_dim)

    Returns:
        (loss, weight gradients, bias gradients)
    """
    out, activations = forward(model, x)
    diff = out - y
    loss = float(np.mean(diff ** 2))
    delta = 2.0 * diff / diff.size
    grad_w: List[np.ndarray] = [np.empty(0)] * len(model.weights)
    grad_b: List[np.ndarray] = [np.empty(0)] * len(model.biases)
    for i in range(len(model.weights) - 1, -1, -1):
        grad_w[i] = activations[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * (activations[i] > 0)
    return loss, grad_w, grad_b


# ============================================================================
# TRAINING
# ============================================================================

@dataclass
class TrainingResult:
    model: PolicyModel
    loss_curve: List[float]


def pool_dataset(pool: Sequence[Trajectory], config: Optional[PolicyConfig] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Stack (features, target) pairs of every frame in the pool

    Targets are the recorded actions with the position replaced by its offset
    from the observed gripper position.
    """
    if not pool:
        raise EmptyPool("the demonstration pool is empty")
    failed = [t.key for t in pool if not t.success]
    if failed:
        raise PolicyError(f"pool holds unsuccessful trajectories: {failed[:3]}")
    features, actions = [], []
    for trajectory in pool:
        for frame in trajectory.frames:
            features.append(featurize(frame.observation, trajectory.task, config))
            actions.append(action_target(frame.observation, frame.action))
    if not features:
        raise EmptyPool("the demonstration pool has no frames")
    return np.vstack(features), np.vstack(actions)


def pool_hash(pool: Sequence[Trajectory]) -> str:
    digest = hashlib.sha256()
    for trajectory in pool:
        digest.update(trajectory.to_json(sort_keys=True).encode("utf-8"))
        digest.update(b"\n")
    return digest.hexdigest()


def action_target(obs: Observation, action: Sequence[float]) -> np.ndarray:
    target = np.array(action, dtype=float)
    target[:3] -= np.asarray(obs.gripper_position, dtype=float)
    return target


def _stats(data: np.ndarray, floor: float) -> Tuple[np.ndarray, np.ndarray]:
    """Per-column mean and std; columns below the floor keep unit scale"""
    std = data.std(axis=0)
    return data.mean(axis=0), np.where(std < floor, 1.0, std)


def bc_train(
    pool: Sequence[Trajectory],
    hyper: Optional[TrainingConfig] = None,
    policy_config: Optional[PolicyConfig] = None,
    init: Optional[PolicyModel] = None,
) -> TrainingResult:
    """
    Behavior cloning on every frame of the pool

    Args:
        pool: successful trajectories
        hyper: learning rate, momentum, batch, epochs, hidden sizes, seed
        policy_config: featurizer settings
        init: model to fine-tune; its normalization statistics are kept

    Returns:
        TrainingResult with the per-epoch mean loss in normalized action space

    Raises:
        EmptyPool: no trajectories or no frames
    """
    hyper = hyper or TrainingConfig()
    x_raw, y_raw = pool_dataset(pool, policy_config)
    rng = np.random.default_rng(hyper.seed)

    if init is None:
        model = init_model(x_raw.shape[1], hyper.hidden, hyper.seed)
        model.feature_mean, model.feature_std = _stats(x_raw, FEATURE_STD_FLOOR)
        model.action_mean, model.action_std = _stats(y_raw, STD_FLOOR)
    else:
        if init.input_dim != x_raw.shape[1]:
            raise PolicyError(f"checkpoint expects {init.input_dim} features, pool gives {x_raw.shape[1]}")
        model = replace(
            init,
            weights=[w.copy() for w in init.weights],
            biases=[b.copy() for b in init.biases],
        )
    x = model.normalize_features(x_raw)
    y = model.normalize_actions(y_raw)

    velocity_w = [np.zeros_like(w) for w in model.weights]
    velocity_b = [np.zeros_like(b) for b in model.biases]
    count = len(x)
    curve = []
    for epoch in range(hyper.epochs):
        order = rng.permutation(count)
        for start in range(0, count, hyper.batch):
            batch = order[start:start + hyper.batch]
            _, grad_w, grad_b = loss_and_gradients(model, x[batch], y[batch])
            for i in range(len(model.weights)):
                velocity_w[i] = hyper.momentum * velocity_w[i] - hyper.lr * grad_w[i]
                velocity_b[i] = hyper.momentum * velocity_b[i] - hyper.lr * grad_b[i]
                model.weights[i] += velocity_w[i]
                model.biases[i] += velocity_b[i]
        epoch_loss = float(np.mean((forward(model, x)[0] - y) ** 2))
        curve.append(epoch_loss)
        logger.debug("epoch %d loss %.6f", epoch + 1, epoch_loss)

    model.manifest = {
        "pool_hash": pool_hash(pool),
        "frames": int(count),
        "hyper": {
            "lr": hyper.lr,
            "momentum": hyper.momentum,
            "batch": hyper.batch,
            "epochs": hyper.epochs,
            "hidden": list(model.hidden),
            "seed": hyper.seed,
        },
        "finetuned": init is not None,
    }
    if curve:
        logger.info("trained on %d frames for %d epochs, final loss %.6f", count, hyper.epochs, curve[-1])
    return TrainingResult(model=model, loss_curve=curve)


# ============================================================================
# ACTING
# ============================================================================

def policy_act(
    model: PolicyModel, obs: Observation, task: TaskSpec, config: Optional[PolicyConfig] = None
) -> np.ndarray:
    """
    10-D action with orthonormal rotation rows and a binary gripper command

    The network predicts the position as an offset from the current gripper
    position; the returned action holds the absolute target.
    """
    x = model.normalize_features(featurize(obs, task, config))
    out, _ = forward(model, x[None, :])
    action = model.denormalize_actions(out[0])
    action[:3] += np.asarray(obs.gripper_position, dtype=float)
    row0, row1 = geometry.orthonormal_rows(action[3:6], action[6:9])
    action[3:6], action[6:9] = row0, row1
    action[9] = 1.0 if action[9] >= 0.5 else 0.0
    return action


# ============================================================================
# EVALUATION
# ============================================================================

@dataclass
class EvalRow:
    task: str
    scene_id: str
    episodes: int
    successes: int

    @property
    def rate(self) -> float:
        return percent(self.successes, self.episodes)


def _lookup(bundles: Sequence[SceneBundle], description: str) -> Tuple[SceneBundle, int, RepertoireTask]:
    for bundle in bundles:
        for index, entry in enumerate(bundle.tasks):
            if entry.description == description:
                return bundle, index, entry
    raise MissingGoal(f"no goal predicate for task {description!r}")


def _episode_rng(seed: int, scene_id: str, task_index: int, episode: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stable_hash(scene_id), task_index, episode]))


class PolicyEvaluator:
    """Closed-loop rollouts scored by the rule verifier"""

    def __init__(self, config: RunConfig, simulator: Optional[Simulator] = None):
        self.config = config
        self.simulator = simulator or Simulator(config.simulation, config.relations)
        self.verifier = RuleBasedVerifier(config.relations)

    def _start(self, bundle: SceneBundle, rng: np.random.Generator):
        world = self.simulator.spawn_scene(bundle.spec)
        noise = self.config.evaluation.init_noise
        if noise > 0:
            offset = rng.uniform(-noise, noise, size=2)
            world.gripper.pose.position[:2] += offset
        return world

    def _achieved(self, entry: RepertoireTask, before, world) -> bool:
        after = build_scene_graph(self.simulator.observe(world), self.config.relations)
        return self.verifier.rule_verdict(entry.goal, before, after).is_yes

    def rollout(self, model: PolicyModel, bundle: SceneBundle, task_index: int, entry: RepertoireTask, episode: int) -> bool:
        rng = _episode_rng(self.config.seed, bundle.scene_id, task_index, episode)
        world = self._start(bundle, rng)
        before = build_scene_graph(self.simulator.observe(world), self.config.relations)
        task = TaskSpec(entry.description, bundle.scene_id, "oracle")
        margin = self.config.evaluation.capture_margin
        for _ in range(self.config.evaluation.horizon):
            action = policy_act(model, self.simulator.observe(world), task, self.config.policy)
            self.simulator.step(world, ActionFrame.from_vector(action), capture_margin=margin)
            if world.gripper.held is None and self._achieved(entry, before, world):
                return True
        return False

    def scripted_episode(self, bundle: SceneBundle, task_index: int, entry: RepertoireTask, episode: int) -> bool:
        """One jittered execution of the repertoire plan"""
        rng = _episode_rng(self.config.seed, bundle.scene_id, task_index, episode)
        world = self._start(bundle, rng)
        before = build_scene_graph(self.simulator.observe(world), self.config.relations)
        for call in entry.decomposition.calls:
            try:
                result = self.simulator.exec_primitive(world, call, rng)
            except WorldError as exc:
                logger.debug("scripted episode %d of %r: %s", episode, entry.description, exc)
                return False
            world = result.world
            if not result.ok:
                return False
        return self._achieved(entry, before, world)

    def _run(self, tasks: Sequence[str], bundles: Sequence[SceneBundle], episodes: int, episode_fn) -> List[EvalRow]:
        if episodes < 1:
            raise ValueError("episodes must be at least 1")
        rows = []
        for description in tasks:
            bundle, task_index, entry = _lookup(bundles, description)
            with ThreadPoolExecutor(max_workers=max(1, self.config.evaluation.workers)) as executor:
                outcomes = list(executor.map(lambda e: episode_fn(bundle, task_index, entry, e), range(episodes)))
            row = EvalRow(description, bundle.scene_id, episodes, sum(outcomes))
            logger.info("%s: %d/%d (%s%%)", description, row.successes, episodes, format_percent(row.rate))
            rows.append(row)
        return rows

    def evaluate(self, model: PolicyModel, bundles: Sequence[SceneBundle], tasks: Sequence[str], episodes: int) -> List[EvalRow]:
        return self._run(tasks, bundles, episodes, lambda b, i, t, e: self.rollout(model, b, i, t, e))

    def evaluate_scripted(self, bundles: Sequence[SceneBundle], tasks: Sequence[str], episodes: int) -> List[EvalRow]:
        return self._run(tasks, bundles, episodes, self.scripted_episode)


def evaluate(
    model: PolicyModel,
    bundles: Sequence[SceneBundle],
    tasks: Sequence[str],
    episodes: int,
    horizon: int,
    seed: int,
    config: Optional[RunConfig] = None,
) -> List[EvalRow]:
    """
    Success rate of the policy per task

    Raises:
        MissingGoal: a task is not in any repertoire
        ValueError: episodes < 1
    """
    config = config or RunConfig()
    config = replace(config, seed=seed, evaluation=replace(config.evaluation, horizon=horizon))
    return PolicyEvaluator(config).evaluate(model, bundles, tasks, episodes)


def evaluate_scripted(
    bundles: Sequence[SceneBundle],
    tasks: Sequence[str],
    episodes: int,
    seed: int,
    config: Optional[RunConfig] = None,
) -> List[EvalRow]:
    config = replace(config or RunConfig(), seed=seed)
    return PolicyEvaluator(config).evaluate_scripted(bundles, tasks, episodes)


def write_eval_csv(path: Path, methods: Dict[str, List[EvalRow]]) -> None:
    """One row per task, one rate column per method, and an Average row"""
    names = list(methods)
    first = methods[names[0]] if names else []
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["task", "scene"] + names)
        for i, row in enumerate(first):
            writer.writerow([row.task, row.scene_id] + [format_percent(methods[n][i].rate) for n in names])
        if first:
            averages = [format_percent(float(np.mean([r.rate for r in methods[n]]))) for n in names]
            writer.writerow(["Average", ""] + averages)


# ============================================================================
# CHECKPOINTS
# ============================================================================

def save_model(model: PolicyModel, directory: Path, extra: Optional[Dict] = None) -> Path:
    """Weights and statistics to model.npz, dimensions and training manifest to model.json"""
    from . import __version__

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = {
        "feature_mean": model.feature_mean,
        "feature_std": model.feature_std,
        "action_mean": model.action_mean,
        "action_std": model.action_std,
    }
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"w{i}"] = w
        arrays[f"b{i}"] = b
    np.savez(directory / "model.npz", **arrays)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "package_version": __version__,
        "input_dim": model.input_dim,
        "output_dim": model.output_dim,
        "hidden": list(model.hidden),
        "layers": len(model.weights),
        "training": model.manifest,
        **(extra or {}),
    }
    with open(directory / "model.json", "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
    return directory


def load_model(directory: Path) -> PolicyModel:
    """
    Raises:
        PolicyError: missing or incompatible checkpoint
    """
    directory = Path(directory)
    meta_path, weights_path = directory / "model.json", directory / "model.npz"
    if not meta_path.exists() or not weights_path.exists():
        raise PolicyError(f"no checkpoint in {directory}")
    with open(meta_path, "r", encoding="utf-8") as handle:
        manifest = json.load(handle)
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise PolicyError(f"unsupported checkpoint version {manifest.get('version')}")
    with np.load(weights_path) as data:
        layers = int(manifest["layers"])
        return PolicyModel(
            weights=[data[f"w{i}"] for i in range(layers)],
            biases=[data[f"b{i}"] for i in range(layers)],
            feature_mean=data["feature_mean"],
            feature_std=data["feature_std"],
            action_mean=data["action_mean"],
            action_std=data["action_std"],
            manifest=manifest.get("training", {}),
        )
