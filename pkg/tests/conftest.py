"""Shared fixtures: bundled scenes, a simulator and an oracle brain"""

from dataclasses import replace
from pathlib import Path

import pytest

from bodysync.config import DEFAULT_SCENES_DIR, RunConfig
from bodysync.llm_reasoning import OracleBackend
from bodysync.repertoire import index_bundles, load_scenes
from bodysync.world import Simulator

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def bundles():
    return load_scenes(DEFAULT_SCENES_DIR)


@pytest.fixture(scope="session")
def bundle_index(bundles):
    return index_bundles(bundles)


@pytest.fixture
def scene0(bundle_index):
    return bundle_index["scene_0"]


@pytest.fixture
def simulator():
    return Simulator()


@pytest.fixture
def oracle(bundles):
    return OracleBackend(bundles)


@pytest.fixture
def run_config(tmp_path):
    config = RunConfig(out_dir=str(tmp_path / "runs"))
    return replace(
        config,
        collection=replace(config.collection, demos_per_task=1, max_trials=10),
        training=replace(config.training, hidden=(32,), epochs=3, batch=32),
    )


@pytest.fixture
def fixture_text():
    def read(name: str) -> str:
        return (FIXTURES / name).read_text(encoding="utf-8")
    return read
