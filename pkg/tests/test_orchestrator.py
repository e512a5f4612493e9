from dataclasses import replace

import numpy as np
import pytest

from bodysync.errors import BackendError, CollectorError, DecompositionFailed
from bodysync.models import TaskSpec
from bodysync.prompts import prompt_kind
from bodysync.orchestrator import (
    CollectionOrchestrator,
    PoolWriter,
    demo_rng,
    pool_keys,
    read_pool,
    scene_confusion,
)


class ScriptedBrain:
    """Delegates to the oracle but overrides answers by prompt kind"""

    identity = "scripted"

    def __init__(self, inner, decomposition=None, verdict=None, fail_on=None):
        self.inner = inner
        self.decomposition = decomposition
        self.verdict = verdict
        self.fail_on = fail_on
        self.prompts = []

    def query(self, prompt, *, scene_id=None):
        self.prompts.append(prompt)
        kind = prompt_kind(prompt)
        if kind == self.fail_on:
            raise BackendError("brain offline", transient=False)
        if self.decomposition is not None and kind == "decomposition":
            return self.decomposition
        if self.verdict is not None and kind == "inference":
            return self.verdict
        return self.inner.query(prompt, scene_id=scene_id)


def _task(bundle, index=0):
    return TaskSpec(bundle.tasks[index].description, bundle.scene_id, "oracle")


def test_propose_tags_origin_and_caps(run_config, oracle, scene0):
    orchestrator = CollectionOrchestrator(replace(run_config, collection=replace(run_config.collection, tasks_per_scene=2)), oracle)
    tasks = orchestrator.propose(scene0)

    assert [t.description for t in tasks] == [entry.description for entry in scene0.tasks[:2]]
    assert all(t.origin == "oracle" and t.scene_id == "scene_0" for t in tasks)


def test_collect_demo_records_a_verified_trajectory(run_config, oracle, scene0):
    orchestrator = CollectionOrchestrator(run_config, oracle)
    task = _task(scene0)
    decomposition = orchestrator.decompose(scene0, task)
    trajectory, records, counts = orchestrator.collect_demo(
        scene0, task, decomposition, scene0.tasks[0].goal, 10, demo_rng(0, "scene_0", 0, 0)
    )

    assert trajectory is not None and trajectory.success
    assert trajectory.verdict.answer == "yes"
    assert trajectory.rule_verdict.answer == "yes"
    assert len(trajectory.frames) > 10
    assert all(len(frame.action) == 10 for frame in trajectory.frames)
    assert trajectory.frames[0].observation.records[0].label == "red block"
    assert counts.tp == 1 and counts.total == len(records)


def test_collect_demo_is_deterministic(run_config, oracle, scene0):
    orchestrator = CollectionOrchestrator(run_config, oracle)
    task = _task(scene0, 2)
    decomposition = orchestrator.decompose(scene0, task)
    goal = scene0.tasks[2].goal
    first, _, _ = orchestrator.collect_demo(scene0, task, decomposition, goal, 5, demo_rng(4, "scene_0", 2, 0))
    second, _, _ = orchestrator.collect_demo(scene0, task, decomposition, goal, 5, demo_rng(4, "scene_0", 2, 0))

    assert first.to_json() == second.to_json()


def test_collect_demo_needs_a_trial(run_config, oracle, scene0):
    orchestrator = CollectionOrchestrator(run_config, oracle)
    task = _task(scene0)
    with pytest.raises(ValueError):
        orchestrator.collect_demo(scene0, task, orchestrator.decompose(scene0, task), None, 0, demo_rng(0, "s", 0, 0))


def test_brain_and_truth_must_agree(run_config, oracle, scene0):
    always_yes = ScriptedBrain(oracle, verdict="x\nreasoning: y\nanswer:\n  yes")
    orchestrator = CollectionOrchestrator(run_config, always_yes)
    task = _task(scene0)
    wrong_plan = "Push it.\nanswer:\n - 1. push | [Push('green block', [0, -1], 0.05)]"
    decomposition = CollectionOrchestrator(run_config, ScriptedBrain(oracle, decomposition=wrong_plan)).decompose(scene0, task)

    trajectory, records, counts = orchestrator.collect_demo(
        scene0, task, decomposition, scene0.tasks[0].goal, 3, demo_rng(0, "scene_0", 0, 0)
    )
    assert trajectory is None
    assert [r.rule_answer for r in records] == ["no"] * 3
    assert counts.fp == 3


def test_inference_without_answer_is_not_sure(run_config, oracle, scene0):
    brain = ScriptedBrain(oracle, verdict="I cannot tell.")
    orchestrator = CollectionOrchestrator(run_config, brain)
    verdict = orchestrator.infer(_task(scene0), [orchestrator.graph(orchestrator.simulator.spawn_scene(scene0.spec))] * 2, "scene_0")
    assert verdict.answer == "not_sure"


def test_failed_step_stops_the_trial(run_config, oracle, scene0):
    plan = "p\nanswer:\n - 1. place | [PlaceOn('plate')]\n - 2. pick | [Pick('red block')]"
    orchestrator = CollectionOrchestrator(run_config, ScriptedBrain(oracle, decomposition=plan))
    task = _task(scene0)
    outcome = orchestrator.run_trial(scene0, task, orchestrator.decompose(scene0, task), scene0.tasks[0].goal, np.random.default_rng(0), 0)

    assert not outcome.record.executed
    assert outcome.record.error.startswith("step 1")
    assert outcome.frames == []
    assert not outcome.success
    assert "scene graph list:" in orchestrator.brain.prompts[-1]


def test_collect_task_statuses(run_config, oracle, scene0):
    task = _task(scene0)
    broken = CollectionOrchestrator(run_config, ScriptedBrain(oracle, decomposition="no steps here"))
    offline = CollectionOrchestrator(run_config, ScriptedBrain(oracle, fail_on="decomposition"))
    working = CollectionOrchestrator(run_config, oracle)

    assert broken.collect_task(scene0, 0, task, set()).report.status == "decomposition_failed"
    assert offline.collect_task(scene0, 0, task, set()).report.status == "backend_error"
    outcome = working.collect_task(scene0, 0, task, set())
    assert outcome.report.status == "feasible"
    assert len(outcome.trajectories) == run_config.collection.demos_per_task
    skipped = working.collect_task(scene0, 0, task, {("scene_0", 0, 0)})
    assert skipped.trajectories == [] and skipped.report.status == "feasible"
    with pytest.raises(DecompositionFailed):
        broken.decompose(scene0, task)


def test_precheck(run_config, oracle, scene0):
    good = CollectionOrchestrator(run_config, oracle)
    bad = CollectionOrchestrator(run_config, ScriptedBrain(oracle, decomposition="p\nanswer:\n - 1. pick | [Pick('purple block')]"))

    assert good.precheck(scene0, _task(scene0)) == (True, "")
    ok, reason = bad.precheck(scene0, _task(scene0))
    assert not ok and "purple block" in reason


def test_campaign_resumes_without_duplicates(run_config, oracle, bundle_index, tmp_path):
    config = replace(run_config, collection=replace(run_config.collection, tasks_per_scene=2))
    scenes = [bundle_index["scene_0"]]
    full_path, partial_path = tmp_path / "full.jsonl", tmp_path / "partial.jsonl"

    pool, report = CollectionOrchestrator(config, oracle).run_campaign(scenes, full_path)
    assert len(pool) == 2 and report.scenes[0].feasible == 2

    lines = full_path.read_text().splitlines(keepends=True)
    partial_path.write_text(lines[0] + lines[1][: len(lines[1]) // 2])
    resumed, _ = CollectionOrchestrator(config, oracle).run_campaign(scenes, partial_path)

    assert partial_path.read_text() == full_path.read_text()
    assert pool_keys(resumed) == pool_keys(pool)


def test_read_pool_rejects_corruption_in_the_middle(tmp_path, run_config, oracle, scene0):
    pool, _ = CollectionOrchestrator(
        replace(run_config, collection=replace(run_config.collection, tasks_per_scene=1)), oracle
    ).run_campaign([scene0])
    path = tmp_path / "pool.jsonl"
    writer = PoolWriter(path)
    writer.append(pool[0])
    with open(path, "a", encoding="utf-8") as handle:
        handle.write("{not json\n")
    writer.append(pool[0])

    with pytest.raises(CollectorError):
        read_pool(path)


def test_read_pool_skips_truncated_tail(tmp_path, run_config, oracle, scene0):
    pool, _ = CollectionOrchestrator(
        replace(run_config, collection=replace(run_config.collection, tasks_per_scene=1)), oracle
    ).run_campaign([scene0])
    path = tmp_path / "pool.jsonl"
    PoolWriter(path).append(pool[0])
    with open(path, "a", encoding="utf-8") as handle:
        handle.write('{"task": ')

    loaded = read_pool(path)
    assert len(loaded) == 1
    assert loaded[0].to_json(sort_keys=True) == pool[0].to_json(sort_keys=True)


@pytest.mark.slow
def test_oracle_campaign_is_fully_feasible(run_config, oracle, bundles):
    pool, report = CollectionOrchestrator(run_config, oracle).run_campaign(bundles)

    for scene in report.scenes:
        assert scene.proposed == 5 or scene.scene_id == "scene_3"
        assert scene.feasibility_rate == 100.0, [t for t in report.tasks if t.status != "feasible"]
    assert len(pool) == sum(scene.proposed for scene in report.scenes)
    for scene in report.scenes:
        counts = scene_confusion(report, scene.scene_id)
        assert counts.fp == 0 and counts.fn == 0
