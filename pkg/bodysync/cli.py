"""
Command-line entry point

    bodysync propose   --scene scene_0
    bodysync collect   [--resume]
    bodysync train     [--pool FILE] [--init CHECKPOINT]
    bodysync eval      [--task TEXT ...] [--scripted]
    bodysync diversity [--group NAME=FILE ...]
    bodysync report

Each command writes into <out>/<command>/ together with a manifest.json
holding the resolved configuration, its hash, the seed and library versions.
"""

import argparse
import csv
import json
import logging
import platform
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .config import REPO_ROOT, RunConfig, load_environment
from .diversity import analyze, read_task_list, write_area_csv, write_distance_csv, write_embedding_csv
from .errors import BodySyncError, ConfigError, PolicyError, UnknownScene
from .llm_reasoning import make_backend
from .metrics import CONFUSION_COLUMNS, confusion_row, format_percent, rates
from .models import CampaignReport, ConfusionCounts
from .orchestrator import CollectionOrchestrator, dump_tasks, read_pool, scene_confusion
from .policy import PolicyEvaluator, bc_train, load_model, random_like, save_model, write_eval_csv
from .repertoire import load_scenes

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
TASK_SETS_DIR = REPO_ROOT / "task_sets"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bodysync", description="Brain-body demonstration collection pipeline")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run configuration")
    common.add_argument("--seed", type=int, help="global seed")
    common.add_argument("--backend", choices=("oracle", "remote", "cached-remote"))
    common.add_argument("--scene", action="append", help="scene id (repeatable)")
    common.add_argument("--out", help="output directory")
    ablation = common.add_mutually_exclusive_group()
    ablation.add_argument("--no-bbox", action="store_true", help="drop ranges from scene graph nodes")
    ablation.add_argument("--no-bbox-positions", action="store_true", help="drop ranges and positions")

    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("propose", parents=[common], help="propose tasks and precheck them")

    collect = commands.add_parser("collect", parents=[common], help="collect demonstrations")
    collect.add_argument("--resume", action="store_true", help="continue an existing pool")

    train = commands.add_parser("train", parents=[common], help="behavior cloning on the pool")
    train.add_argument("--pool", type=Path)
    train.add_argument("--init", type=Path, help="checkpoint to fine-tune")

    evaluate = commands.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    evaluate.add_argument("--checkpoint", type=Path)
    evaluate.add_argument("--task", action="append", help="task description (repeatable)")
    evaluate.add_argument("--episodes", type=int)
    evaluate.add_argument("--scripted", action="store_true", help="also evaluate the scripted collector")
    evaluate.add_argument("--random", action="store_true", help="also evaluate an untrained network")

    diversity = commands.add_parser("diversity", parents=[common], help="task diversity analysis")
    diversity.add_argument("--tasks", type=Path, help="task list, one per line")
    diversity.add_argument("--group", action="append", metavar="NAME=FILE", help="task set to compare")
    diversity.add_argument("--k", type=int, default=4)

    commands.add_parser("report", parents=[common], help="summarize a collected pool")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    graph_mode = "no_bbox" if args.no_bbox else "no_bbox_positions" if args.no_bbox_positions else None
    overrides: Dict[str, Any] = {
        "seed": args.seed,
        "brain.backend": args.backend,
        "out_dir": args.out,
        "scenes": args.scene,
        "collection.graph_mode": graph_mode,
    }
    config = RunConfig.from_yaml(args.config, overrides)
    return replace(config, training=replace(config.training, seed=config.seed))


def stage_dir(config: RunConfig, command: str) -> Path:
    path = Path(config.out_dir) / command
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_manifest(directory: Path, command: str, config: RunConfig, extra: Optional[Dict[str, Any]] = None) -> None:
    manifest = {
        "command": command,
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "versions": {
            "bodysync": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        **(extra or {}),
    }
    with open(directory / "manifest.json", "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True, default=list)


def _write_rows(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)


# ============================================================================
# COMMANDS
# ============================================================================

def cmd_propose(config: RunConfig) -> int:
    bundles = load_scenes(Path(config.scenes_dir), config.scenes)
    out = stage_dir(config, "propose")
    orchestrator = CollectionOrchestrator(config, make_backend(config.brain, bundles, config.relations))
    rows = []
    for bundle in bundles:
        tasks = orchestrator.propose(bundle)
        dump_tasks(tasks, out / f"{bundle.scene_id}_tasks.jsonl")
        for index, task in enumerate(tasks):
            ok, reason = orchestrator.precheck(bundle, task)
            rows.append([bundle.scene_id, index, task.description, "yes" if ok else "no", reason])
        logger.info("%s: %d tasks proposed", bundle.scene_id, len(tasks))
    _write_rows(out / "precheck.csv", ["scene", "task_index", "task", "executable", "reason"], rows)
    write_manifest(out, "propose", config)
    return 0


def write_campaign_report(out: Path, report: CampaignReport) -> None:
    _write_rows(
        out / "feasibility.csv",
        ["scene", "proposed", "feasible", "feasibility_rate"],
        [[s.scene_id, s.proposed, s.feasible, format_percent(s.feasibility_rate)] for s in report.scenes],
    )
    _write_rows(
        out / "tasks.csv",
        ["scene", "task_index", "task", "trials", "successes", "status", "error"],
        [[t.scene_id, t.task_index, t.description, t.trials, t.successes, t.status, t.error or ""] for t in report.tasks],
    )
    total = ConfusionCounts()
    confusion = []
    for task in report.tasks:
        confusion.append([task.scene_id] + confusion_row(task.description, task.counts))
        total = total + task.counts
    confusion.append(["all"] + confusion_row("total", total))
    _write_rows(out / "inference.csv", ["scene", *CONFUSION_COLUMNS], confusion)

    accuracy = []
    for scene in report.scenes:
        summary = rates(scene_confusion(report, scene.scene_id))
        accuracy.append([scene.scene_id, summary.counts.total, *summary.as_strings().values()])
    _write_rows(out / "inference_accuracy.csv", ["scene", "trials", "tpr", "tnr", "accuracy"], accuracy)


def cmd_collect(config: RunConfig, resume: bool = False) -> int:
    bundles = load_scenes(Path(config.scenes_dir), config.scenes)
    out = stage_dir(config, "collect")
    pool_path = out / "pool.jsonl"
    if pool_path.exists() and not resume:
        raise ConfigError(f"{pool_path} exists; pass --resume or choose another --out")
    orchestrator = CollectionOrchestrator(config, make_backend(config.brain, bundles, config.relations))
    pool, report = orchestrator.run_campaign(bundles, pool_path)
    write_campaign_report(out, report)
    write_manifest(out, "collect", config, {"demonstrations": len(pool)})

    for scene in report.scenes:
        print(f"{scene.scene_id}: {scene.feasible}/{scene.proposed} feasible ({format_percent(scene.feasibility_rate)}%)")
    failed = report.failed_tasks
    if failed:
        print(f"{len(failed)} task(s) without demonstrations:")
        for task in failed:
            print(f"  {task.scene_id} #{task.task_index} {task.description!r}: {task.status} {task.error or ''}".rstrip())
    return 0


def cmd_train(config: RunConfig, pool_path: Optional[Path] = None, init: Optional[Path] = None) -> int:
    pool_path = pool_path or Path(config.out_dir) / "collect" / "pool.jsonl"
    if not pool_path.exists():
        raise PolicyError(f"no demonstration pool at {pool_path}; run collect first")
    pool = read_pool(pool_path)
    hyper = config.training
    initial = None
    if init is not None:
        initial = load_model(init)
        hyper = replace(hyper.finetune(), seed=config.seed)
    result = bc_train(pool, hyper, config.policy, init=initial)
    out = stage_dir(config, "train")
    save_model(result.model, out, {"pool": str(pool_path)})
    _write_rows(out / "loss.csv", ["epoch", "loss"], [[i + 1, f"{v:.8f}"] for i, v in enumerate(result.loss_curve)])
    write_manifest(out, "train", config, {"pool": str(pool_path), "finetune_from": str(init) if init else None})
    return 0


def cmd_eval(
    config: RunConfig,
    checkpoint: Optional[Path] = None,
    tasks: Optional[List[str]] = None,
    episodes: Optional[int] = None,
    scripted: bool = False,
    random: bool = False,
) -> int:
    checkpoint = checkpoint or Path(config.out_dir) / "train"
    model = load_model(checkpoint)
    bundles = load_scenes(Path(config.scenes_dir), config.scenes)
    tasks = tasks or [entry.description for bundle in bundles for entry in bundle.tasks]
    episodes = episodes if episodes is not None else config.evaluation.episodes
    evaluator = PolicyEvaluator(config)
    methods = {"distilled": evaluator.evaluate(model, bundles, tasks, episodes)}
    if scripted:
        methods["scripted"] = evaluator.evaluate_scripted(bundles, tasks, episodes)
    if random:
        methods["random"] = evaluator.evaluate(random_like(model, config.seed), bundles, tasks, episodes)
    out = stage_dir(config, "eval")
    write_eval_csv(out / "eval.csv", methods)
    write_manifest(out, "eval", config, {"checkpoint": str(checkpoint), "episodes": episodes, "tasks": tasks})
    return 0


def cmd_diversity(config: RunConfig, tasks: Optional[Path] = None, groups: Sequence[str] = (), k: int = 4) -> int:
    task_sets: Dict[str, List[str]] = {}
    for entry in groups:
        name, sep, file = entry.partition("=")
        if not sep or not name or not file:
            raise ConfigError(f"--group expects NAME=FILE, got {entry!r}")
        task_sets[name] = read_task_list(Path(file))
    if tasks is not None or not task_sets:
        path = tasks or TASK_SETS_DIR / "tasks_60.txt"
        task_sets[path.stem] = read_task_list(path)
    analysis = analyze(task_sets, k=k, seed=config.seed)
    out = stage_dir(config, "diversity")
    write_distance_csv(analysis, out / "distances.csv")
    write_embedding_csv(analysis, out / "embedding.csv")
    write_area_csv(analysis, out / "areas.csv")
    write_manifest(out, "diversity", config, {"task_sets": {n: len(t) for n, t in task_sets.items()}, "k": k})
    return 0


def cmd_report(config: RunConfig) -> int:
    pool_path = Path(config.out_dir) / "collect" / "pool.jsonl"
    if not pool_path.exists():
        raise BodySyncError(f"no demonstration pool at {pool_path}")
    summary: Dict[tuple, List[int]] = {}
    for trajectory in read_pool(pool_path):
        entry = summary.setdefault((trajectory.scene_id, trajectory.task.description), [0, 0])
        entry[0] += 1
        entry[1] += len(trajectory.frames)
    out = stage_dir(config, "report")
    rows = [[scene, task, demos, frames] for (scene, task), (demos, frames) in sorted(summary.items())]
    _write_rows(out / "pool_summary.csv", ["scene", "task", "demonstrations", "frames"], rows)
    write_manifest(out, "report", config)
    for row in rows:
        print(f"{row[0]} {row[1]!r}: {row[2]} demos, {row[3]} frames")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT)
    load_environment()
    try:
        config = resolve_config(args)
        if args.command == "propose":
            return cmd_propose(config)
        if args.command == "collect":
            return cmd_collect(config, args.resume)
        if args.command == "train":
            return cmd_train(config, args.pool, args.init)
        if args.command == "eval":
            return cmd_eval(config, args.checkpoint, args.task, args.episodes, args.scripted, args.random)
        if args.command == "diversity":
            return cmd_diversity(config, args.tasks, args.group or (), args.k)
        return cmd_report(config)
    except UnknownScene as exc:
        print(f"bodysync: {exc}", file=sys.stderr)
        return 2
    except BodySyncError as exc:
        print(f"bodysync: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
