"""
Demonstration collection orchestrator

Runs the brain-body loop: propose tasks for a scene, decompose each once,
execute the plan with jittered waypoints, infer success from the recorded
scene graphs, and keep the verified trajectories in an append-only pool.
"""

import hashlib
import json
import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from .config import RunConfig
from .errors import (
    BackendError,
    BrainError,
    CollectorError,
    DecompositionFailed,
    MissingAnswerSection,
    WorldError,
)
from .llm_reasoning import BrainBackend
from .metrics import count_outcomes
from .models import (
    ConfusionCounts,
    CampaignReport,
    Decomposition,
    GoalPredicate,
    SceneGraph,
    SceneReport,
    TaskReport,
    TaskSpec,
    Trajectory,
    TrajectoryFrame,
    TrialRecord,
    Verdict,
)
from .prompts import (
    build_decomposition_prompt,
    build_inference_prompt,
    build_proposal_prompt,
    parse_decomposition,
    parse_proposals,
    parse_verdict,
)
from .repertoire import SceneBundle
from .rules import RuleBasedVerifier
from .scenegraph import build_scene_graph
from .world import Simulator

logger = logging.getLogger(__name__)

PoolKey = Tuple[str, int, int]


def stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


def demo_rng(seed: int, scene_id: str, task_index: int, demo_index: int) -> np.random.Generator:
    """Independent jitter stream per demonstration"""
    sequence = np.random.SeedSequence([seed, stable_hash(scene_id), task_index, demo_index])
    return np.random.default_rng(sequence)


@dataclass
class TrialOutcome:
    record: TrialRecord
    frames: List[TrajectoryFrame]
    verdict: Verdict
    rule_verdict: Optional[Verdict]
    success: bool


@dataclass
class TaskOutcome:
    report: TaskReport
    trajectories: List[Trajectory] = field(default_factory=list)


# ============================================================================
# POOL STORAGE
# ============================================================================

class PoolWriter:
    """Append-only JSON-lines pool; every record is flushed to disk"""

    def __init__(self, path: Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        _truncate_partial_line(self.path)
        self._lock = threading.Lock()

    def append(self, trajectory: Trajectory) -> None:
        line = trajectory.to_json(sort_keys=True)
        with self._lock, open(self.path, "a", encoding="utf-8") as handle:
            handle.write(line + "\n")
            handle.flush()
            os.fsync(handle.fileno())


def _truncate_partial_line(path: Path) -> None:
    if not path.exists():
        return
    data = path.read_bytes()
    if data and not data.endswith(b"\n"):
        cut = data.rfind(b"\n") + 1
        logger.warning("dropping incomplete trailing record in %s", path)
        with open(path, "r+b") as handle:
            handle.truncate(cut)


def read_pool(path: Path) -> List[Trajectory]:
    """
    Load a pool file

    A malformed final line (an interrupted append) is skipped; malformed lines
    elsewhere raise CollectorError.
    """
    path = Path(path)
    if not path.exists():
        return []
    lines = path.read_text(encoding="utf-8").splitlines()
    pool = []
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            pool.append(Trajectory.from_json(line))
        except (ValueError, KeyError, TypeError) as exc:
            if number == len(lines):
                logger.warning("skipping malformed trailing record in %s", path)
                break
            raise CollectorError(f"{path}:{number}: malformed record: {exc}") from exc
    return pool


# ============================================================================
# ORCHESTRATOR
# ============================================================================

class CollectionOrchestrator:
    """
    Brain-body synchronization loop

    Coordinates the simulator, the brain backend and the rule verifier to turn
    proposed tasks into verified demonstrations.
    """

    def __init__(
        self,
        config: RunConfig,
        brain: BrainBackend,
        simulator: Optional[Simulator] = None,
    ):
        """
        Args:
            config: run configuration
            brain: backend answering proposal, decomposition and inference prompts
            simulator: world model; built from config when omitted
        """
        self.config = config
        self.brain = brain
        self.simulator = simulator or Simulator(config.simulation, config.relations)
        self.verifier = RuleBasedVerifier(config.relations)
        self.mode = config.collection.graph_mode

    def graph(self, world) -> SceneGraph:
        return build_scene_graph(self.simulator.observe(world), self.config.relations)

    def propose(self, bundle: SceneBundle) -> List[TaskSpec]:
        """Ask the brain for tasks grounded in the scene's initial graph"""
        world = self.simulator.spawn_scene(bundle.spec)
        prompt = build_proposal_prompt(self.graph(world), self.mode)
        text = self.brain.query(prompt, scene_id=bundle.scene_id)
        origin = "oracle" if self.brain.identity == "oracle" else "remote"
        tasks = parse_proposals(text, scene_id=bundle.scene_id, origin=origin)
        limit = self.config.collection.tasks_per_scene
        return tasks[:limit] if limit is not None else tasks

    def decompose(self, bundle: SceneBundle, task: TaskSpec) -> Decomposition:
        """
        Query and parse the task decomposition

        Raises:
            DecompositionFailed: the response does not follow the grammar
            BackendError: the brain could not be reached
        """
        world = self.simulator.spawn_scene(bundle.spec)
        prompt = build_decomposition_prompt(task, self.graph(world), self.mode)
        text = self.brain.query(prompt, scene_id=bundle.scene_id)
        try:
            return parse_decomposition(text)
        except BackendError:
            raise
        except BrainError as exc:
            raise DecompositionFailed(f"{task.description!r}: {exc}") from exc

    def precheck(self, bundle: SceneBundle, task: TaskSpec) -> Tuple[bool, str]:
        """Decompose a task and resolve every object it names, without executing"""
        try:
            decomposition = self.decompose(bundle, task)
        except DecompositionFailed as exc:
            return False, str(exc)
        world = self.simulator.spawn_scene(bundle.spec)
        for call in decomposition.calls:
            if call.obj_name is None:
                continue
            try:
                self.simulator.resolve(world, call.obj_name)
            except WorldError as exc:
                return False, str(exc)
        return True, ""

    def infer(self, task: TaskSpec, graphs: Sequence[SceneGraph], scene_id: str) -> Verdict:
        prompt = build_inference_prompt(task, graphs, self.mode)
        text = self.brain.query(prompt, scene_id=scene_id)
        try:
            return parse_verdict(text)
        except MissingAnswerSection:
            logger.info("inference response without answer section, treating as not sure")
            return Verdict(answer="not_sure", reasoning=text.strip())

    def run_trial(
        self,
        bundle: SceneBundle,
        task: TaskSpec,
        decomposition: Decomposition,
        goal: Optional[GoalPredicate],
        rng: np.random.Generator,
        trial_index: int,
    ) -> TrialOutcome:
        """
        One attempt from the scene's initial state

        A scene graph is taken before execution and after every step; the
        brain judges the whole list, the verifier judges first against last.
        """
        world = self.simulator.spawn_scene(bundle.spec)
        graphs = [self.graph(world)]
        frames: List[TrajectoryFrame] = []
        error: Optional[str] = None
        for step in decomposition.steps:
            for call in step.calls:
                try:
                    result = self.simulator.exec_primitive(world, call, rng)
                except WorldError as exc:
                    error = f"step {step.index}: {exc}"
                    break
                world = result.world
                frames.extend(
                    TrajectoryFrame(observation=obs, action=[float(v) for v in frame.as_vector()])
                    for obs, frame in zip(result.observations, result.motion)
                )
                if not result.ok:
                    error = f"step {step.index}: {call.name} did not take effect"
                    break
            graphs.append(self.graph(world))
            if error:
                break

        if len(graphs) < 2:
            graphs.append(graphs[0])
        verdict = self.infer(task, graphs, bundle.scene_id)
        truth = self.verifier.rule_verdict(goal, graphs[0], graphs[-1]) if goal is not None else None
        success = verdict.is_yes and (truth is None or truth.is_yes)
        if error:
            logger.debug("trial %d of %r: %s", trial_index, task.description, error)
        record = TrialRecord(
            trial_index=trial_index,
            executed=error is None,
            brain_answer=verdict.answer,
            rule_answer=truth.answer if truth is not None else None,
            error=error,
        )
        return TrialOutcome(record, frames, verdict, truth, success)

    def collect_demo(
        self,
        bundle: SceneBundle,
        task: TaskSpec,
        decomposition: Decomposition,
        goal: Optional[GoalPredicate],
        max_trials: int,
        rng: np.random.Generator,
        task_index: int = 0,
        demo_index: int = 0,
    ) -> Tuple[Optional[Trajectory], List[TrialRecord], ConfusionCounts]:
        """
        Retry a task until the first verified success

        Returns:
            (trajectory or None, per-trial records, brain-vs-truth confusion counts)
        """
        if max_trials < 1:
            raise ValueError("max_trials must be at least 1")
        records: List[TrialRecord] = []
        judged: List[Tuple[Verdict, bool]] = []
        for trial_index in range(max_trials):
            outcome = self.run_trial(bundle, task, decomposition, goal, rng, trial_index)
            records.append(outcome.record)
            if outcome.rule_verdict is not None:
                judged.append((outcome.verdict, outcome.rule_verdict.is_yes))
            if outcome.success:
                trajectory = Trajectory(
                    task=task,
                    scene_id=bundle.scene_id,
                    task_index=task_index,
                    demo_index=demo_index,
                    trial_index=trial_index,
                    success=True,
                    frames=outcome.frames,
                    verdict=outcome.verdict,
                    rule_verdict=outcome.rule_verdict,
                    trials=list(records),
                )
                return trajectory, records, count_outcomes(judged)
        logger.info("no success for %r after %d trials", task.description, max_trials)
        return None, records, count_outcomes(judged)

    def collect_task(
        self,
        bundle: SceneBundle,
        task_index: int,
        task: TaskSpec,
        done: Set[PoolKey],
    ) -> TaskOutcome:
        """Collect up to demos_per_task demonstrations for one task"""
        report = TaskReport(scene_id=bundle.scene_id, task_index=task_index, description=task.description)
        try:
            decomposition = self.decompose(bundle, task)
        except DecompositionFailed as exc:
            report.status, report.error = "decomposition_failed", str(exc)
            logger.warning("decomposition failed: %s", exc)
            return TaskOutcome(report)
        except BackendError as exc:
            report.status, report.error = "backend_error", str(exc)
            logger.error("brain unavailable for %r: %s", task.description, exc)
            return TaskOutcome(report)

        entry = bundle.task(task.description)
        goal = entry.goal if entry is not None else None
        outcome = TaskOutcome(report)
        collection = self.config.collection
        try:
            for demo_index in range(collection.demos_per_task):
                if (bundle.scene_id, task_index, demo_index) in done:
                    report.successes += 1
                    continue
                rng = demo_rng(self.config.seed, bundle.scene_id, task_index, demo_index)
                trajectory, records, counts = self.collect_demo(
                    bundle, task, decomposition, goal, collection.max_trials, rng, task_index, demo_index
                )
                report.trials += len(records)
                report.counts = report.counts + counts
                if trajectory is not None:
                    report.successes += 1
                    outcome.trajectories.append(trajectory)
        except BackendError as exc:
            report.status, report.error = "backend_error", str(exc)
            logger.error("brain failed while collecting %r: %s", task.description, exc)
            return outcome
        report.status = "feasible" if report.successes > 0 else "infeasible"
        return outcome

    def run_campaign(
        self,
        bundles: Sequence[SceneBundle],
        pool_path: Optional[Path] = None,
    ) -> Tuple[List[Trajectory], CampaignReport]:
        """
        Propose and collect over every scene

        Existing records in pool_path are kept and their (scene, task, demo)
        slots skipped, so an interrupted campaign resumes where it stopped.
        """
        existing = read_pool(pool_path) if pool_path is not None else []
        done = {trajectory.key for trajectory in existing}
        writer = PoolWriter(pool_path) if pool_path is not None else None
        report = CampaignReport()
        jobs = []
        for bundle in bundles:
            scene = SceneReport(scene_id=bundle.scene_id)
            report.scenes.append(scene)
            try:
                tasks = self.propose(bundle)
            except (BackendError, BrainError) as exc:
                scene.error = str(exc)
                logger.error("proposal failed for %s: %s", bundle.scene_id, exc)
                continue
            scene.proposed = len(tasks)
            jobs.extend((bundle, index, task) for index, task in enumerate(tasks))

        pool: List[Trajectory] = list(existing)
        workers = max(1, self.config.collection.workers)
        with ThreadPoolExecutor(max_workers=workers) as executor:
            futures = [executor.submit(self.collect_task, bundle, index, task, done) for bundle, index, task in jobs]
            scenes = {scene.scene_id: scene for scene in report.scenes}
            # consumed in submission order so the pool file is deterministic
            for future in futures:
                outcome = future.result()
                report.tasks.append(outcome.report)
                if outcome.report.status == "feasible":
                    scenes[outcome.report.scene_id].feasible += 1
                for trajectory in outcome.trajectories:
                    if writer is not None:
                        writer.append(trajectory)
                    pool.append(trajectory)
        for scene in report.scenes:
            logger.info(
                "%s: %d/%d tasks feasible (%.2f%%)",
                scene.scene_id, scene.feasible, scene.proposed, scene.feasibility_rate,
            )
        return pool, report


# ============================================================================
# CONVENIENCE FUNCTIONS
# ============================================================================

def collect_demo(
    bundle: SceneBundle,
    task: TaskSpec,
    brain: BrainBackend,
    goal: Optional[GoalPredicate],
    max_trials: int,
    rng: np.random.Generator,
    config: Optional[RunConfig] = None,
) -> Optional[Trajectory]:
    orchestrator = CollectionOrchestrator(config or RunConfig(), brain)
    decomposition = orchestrator.decompose(bundle, task)
    trajectory, _, _ = orchestrator.collect_demo(bundle, task, decomposition, goal, max_trials, rng)
    return trajectory


def run_campaign(
    bundles: Sequence[SceneBundle],
    brain: BrainBackend,
    config: RunConfig,
    pool_path: Optional[Path] = None,
) -> Tuple[List[Trajectory], CampaignReport]:
    return CollectionOrchestrator(config, brain).run_campaign(bundles, pool_path)


def scene_confusion(report: CampaignReport, scene_id: str) -> ConfusionCounts:
    total = ConfusionCounts()
    for task in report.tasks:
        if task.scene_id == scene_id:
            total = total + task.counts
    return total


def pool_keys(pool: Iterable[Trajectory]) -> Set[PoolKey]:
    return {trajectory.key for trajectory in pool}


def dump_tasks(tasks: Sequence[TaskSpec], path: Path) -> None:
    """Write proposed tasks as JSON lines"""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        for task in tasks:
            handle.write(json.dumps({"description": task.description, "scene_id": task.scene_id, "origin": task.origin}) + "\n")
