"""
Brain backends

The brain answers three prompt kinds: task proposal, task decomposition and
success inference. The oracle answers from scripted scene repertoires; the
remote backend calls a chat-completion service; the caching wrapper persists
every exchange and can replay them offline.
"""

import hashlib
import json
import logging
import os
import tempfile
import threading
from pathlib import Path
from typing import Dict, Optional, Protocol, Sequence

import backoff
import openai

from .config import API_KEY_ENV, BrainConfig, RelationConfig
from .errors import (
    BackendError,
    BackendTimeout,
    BudgetExceeded,
    ConfigError,
    HttpError,
)
from .models import TaskSpec, Verdict, object_label
from .prompts import (
    extract_graphs,
    extract_task_description,
    prompt_kind,
    render_decomposition,
    render_proposals,
    render_verdict,
)
from .repertoire import RepertoireTask, SceneBundle
from .rules import RuleBasedVerifier

logger = logging.getLogger(__name__)

LOCK_STRIPES = 64


class BrainBackend(Protocol):
    """Anything that turns a prompt into completion text"""

    identity: str

    def query(self, prompt: str, *, scene_id: Optional[str] = None) -> str:
        ...


# ============================================================================
# ORACLE
# ============================================================================

class OracleBackend:
    """
    Deterministic brain answering from scene repertoires

    Proposals list the scene's scripted tasks, decompositions return their
    plans, and inference applies the rule verifier to the first and last
    graphs in the prompt.
    """

    identity = "oracle"

    def __init__(self, bundles: Sequence[SceneBundle], relations: Optional[RelationConfig] = None):
        self.bundles = list(bundles)
        self.verifier = RuleBasedVerifier(relations)

    def query(self, prompt: str, *, scene_id: Optional[str] = None) -> str:
        kind = prompt_kind(prompt)
        if kind == "proposal":
            bundle = self._bundle_for_prompt(prompt, scene_id)
            if bundle is None:
                return "tasks:\n"
            tasks = [TaskSpec(entry.description, bundle.scene_id, "oracle") for entry in bundle.tasks]
            return render_proposals(tasks)

        description = extract_task_description(prompt) or ""
        entry = self._find_task(description, scene_id)
        if kind == "decomposition":
            if entry is None:
                return "The task does not match anything I can plan.\nanswer:\n"
            return render_decomposition(entry.decomposition)

        graphs = extract_graphs(prompt)
        if entry is None or len(graphs) < 2:
            verdict = Verdict(
                answer="not_sure",
                success_metric="unknown",
                reasoning="No success criterion is known for this task.",
                route="rule",
            )
        else:
            verdict = self.verifier.rule_verdict(entry.goal, graphs[0], graphs[-1])
        return render_verdict(verdict)

    def _bundle_for_prompt(self, prompt: str, scene_id: Optional[str]) -> Optional[SceneBundle]:
        if scene_id is not None:
            return next((b for b in self.bundles if b.scene_id == scene_id), None)
        graphs = extract_graphs(prompt)
        if not graphs:
            return None
        labels = graphs[0].labels
        for bundle in self.bundles:
            if _spec_labels(bundle) == labels:
                return bundle
        return None

    def _find_task(self, description: str, scene_id: Optional[str]) -> Optional[RepertoireTask]:
        candidates = [b for b in self.bundles if scene_id is None or b.scene_id == scene_id]
        for bundle in candidates:
            entry = bundle.task(description)
            if entry is not None:
                return entry
        return None


def _spec_labels(bundle: SceneBundle) -> list:
    counts: Dict[str, int] = {}
    labels = []
    for obj in bundle.spec.objects:
        index = counts.get(obj.category, 0)
        counts[obj.category] = index + 1
        labels.append(object_label(obj.category, index))
    return labels


# ============================================================================
# REMOTE
# ============================================================================

class RemoteBackend:
    """Chat-completion client with exponential backoff on transient failures"""

    def __init__(
        self,
        config: BrainConfig,
        api_key: Optional[str] = None,
        client: Optional[openai.OpenAI] = None,
    ):
        self.config = config
        self.identity = f"remote:{config.model}"
        if client is None:
            api_key = api_key or os.environ.get(API_KEY_ENV)
            if not api_key:
                raise ConfigError(f"{API_KEY_ENV} is not set")
            client = openai.OpenAI(
                api_key=api_key,
                base_url=config.endpoint,
                timeout=config.timeout,
                max_retries=0,
            )
        self._client = client
        self._lock = threading.Lock()
        self.requests = 0

    def query(self, prompt: str, *, scene_id: Optional[str] = None) -> str:
        retrying = backoff.on_exception(
            backoff.expo,
            BackendError,
            max_tries=self.config.max_retries + 1,
            giveup=lambda exc: not getattr(exc, "transient", False),
            on_backoff=self._log_backoff,
            jitter=None,
            factor=self.config.backoff_factor,
        )
        return retrying(self._attempt)(prompt)

    def _attempt(self, prompt: str) -> str:
        with self._lock:
            if self.config.budget is not None and self.requests >= self.config.budget:
                raise BudgetExceeded(self.config.budget)
            self.requests += 1
        try:
            response = self._client.chat.completions.create(
                model=self.config.model,
                messages=[{"role": "user", "content": prompt}],
                temperature=self.config.temperature,
            )
        except openai.APITimeoutError as exc:
            raise BackendTimeout(str(exc)) from exc
        except openai.APIStatusError as exc:
            raise HttpError(exc.status_code, str(exc)) from exc
        except openai.APIConnectionError as exc:
            raise BackendError(f"connection failed: {exc}", transient=True) from exc
        if not response.choices:
            raise BackendError("response carried no choices", transient=True)
        return response.choices[0].message.content or ""

    @staticmethod
    def _log_backoff(details: dict) -> None:
        logger.warning(
            "brain request failed (attempt %d), retrying in %.1fs: %s",
            details["tries"], details["wait"], details.get("exception"),
        )


# ============================================================================
# CACHE
# ============================================================================

class PromptCache:
    """Content-addressed store of prompt/response pairs, one JSON file per key"""

    def __init__(self, directory: Path, stripes: int = LOCK_STRIPES):
        if stripes < 1:
            raise ValueError("stripes must be at least 1")
        self.directory = Path(directory)
        self._locks = [threading.Lock() for _ in range(stripes)]

    @staticmethod
    def key(prompt: str, model: str) -> str:
        return hashlib.sha256((prompt + model).encode("utf-8")).hexdigest()

    def lock_for(self, key: str) -> threading.Lock:
        """Lock guarding one key; keys share a fixed pool of locks"""
        return self._locks[int(key[:8], 16) % len(self._locks)]

    def get(self, key: str) -> Optional[str]:
        path = self.directory / f"{key}.json"
        if not path.exists():
            return None
        with open(path, "r", encoding="utf-8") as handle:
            return json.load(handle)["response"]

    def put(self, key: str, prompt: str, model: str, response: str) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        record = {"model": model, "prompt": prompt, "response": response}
        fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            json.dump(record, handle, sort_keys=True)
        os.replace(tmp, self.directory / f"{key}.json")


class CachingBackend:
    """Wraps a backend so each distinct prompt is sent at most once"""

    def __init__(
        self,
        inner: Optional[BrainBackend],
        cache: PromptCache,
        model: str,
        replay_only: bool = False,
    ):
        if inner is None and not replay_only:
            raise ConfigError("a caching backend without an inner backend must be replay-only")
        self.inner = inner
        self.cache = cache
        self.model = model
        self.replay_only = replay_only
        self.identity = f"cached:{model}" if inner is None else f"{inner.identity}+cache"

    def query(self, prompt: str, *, scene_id: Optional[str] = None) -> str:
        key = self.cache.key(prompt, self.model)
        with self.cache.lock_for(key):
            cached = self.cache.get(key)
            if cached is not None:
                logger.debug("prompt cache hit %s", key[:12])
                return cached
            if self.replay_only or self.inner is None:
                raise BackendError(f"prompt {key[:12]} is not in the replay cache", transient=False)
            response = self.inner.query(prompt, scene_id=scene_id)
            self.cache.put(key, prompt, self.model, response)
            return response


# ============================================================================
# CONVENIENCE FUNCTIONS
# ============================================================================

def make_backend(
    config: BrainConfig,
    bundles: Sequence[SceneBundle],
    relations: Optional[RelationConfig] = None,
) -> BrainBackend:
    """Build the backend named by the configuration"""
    if config.backend == "oracle":
        return OracleBackend(bundles, relations)
    cache = PromptCache(Path(config.cache_dir))
    if config.backend == "cached-remote":
        return CachingBackend(None, cache, config.model, replay_only=True)
    if config.backend == "remote":
        return CachingBackend(RemoteBackend(config), cache, config.model)
    raise ConfigError(f"unknown backend: {config.backend}")


def remote_query(
    endpoint: Optional[str],
    model_id: str,
    prompt: str,
    timeout: float = 60.0,
    max_retries: int = 3,
    cache_dir: Optional[Path] = None,
) -> str:
    """One-off remote query, optionally through the prompt cache"""
    config = BrainConfig(
        backend="remote", endpoint=endpoint, model=model_id, timeout=timeout, max_retries=max_retries
    )
    backend: BrainBackend = RemoteBackend(config)
    if cache_dir is not None:
        backend = CachingBackend(backend, PromptCache(cache_dir), model_id)
    return backend.query(prompt)


def oracle_query(prompt: str, bundles: Sequence[SceneBundle], scene_id: Optional[str] = None) -> str:
    """One-off oracle answer for a built prompt"""
    return OracleBackend(bundles).query(prompt, scene_id=scene_id)
