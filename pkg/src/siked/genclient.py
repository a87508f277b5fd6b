"""Generation backends: OpenAI-compatible completion endpoint and scripted mock.

Result ordering is a contract: batch outputs are ordered by
(question index, strategy index, sample index k), never by completion time.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol, Sequence, runtime_checkable

import requests

from .core import QuestionRecord, SikedError, Strategy
from .prompts import PromptTemplate, build_generation_prompt

DEFAULT_MAX_TOKENS = 512
DEFAULT_PARALLELISM = 8
DEFAULT_RETRIES = 3
DEFAULT_BACKOFF_SECONDS = 1.0


class BackendError(SikedError):
    """Generation failed after exhausting retries."""


@dataclass(frozen=True)
class GenConfig:
    samples_per_pair: int = 1
    temperature: float = 0.0
    max_tokens: int = DEFAULT_MAX_TOKENS
    stop_sequences: tuple[str, ...] = ()
    seed: Optional[int] = None  # honored by mock/simulated backends only
    cycle_short_scripts: bool = False
    retries: int = DEFAULT_RETRIES
    backoff_seconds: float = DEFAULT_BACKOFF_SECONDS
    parallelism: int = DEFAULT_PARALLELISM

    def __post_init__(self):
        if self.samples_per_pair < 1:
            raise SikedError("samples_per_pair (K) must be >= 1")
        if self.temperature < 0:
            raise SikedError("temperature must be >= 0")


def teacher_config(**overrides) -> GenConfig:
    """Teacher default: greedy, one sample per (question, strategy)."""
    return GenConfig(**{"samples_per_pair": 1, "temperature": 0.0, **overrides})


def student_config(**overrides) -> GenConfig:
    """Student self-generation default: K=10 at temperature 0.7."""
    return GenConfig(**{"samples_per_pair": 10, "temperature": 0.7, **overrides})


@dataclass(frozen=True)
class GenRequest:
    prompt: str
    question: Optional[QuestionRecord] = None
    strategy: Optional[Strategy] = None


@dataclass(frozen=True)
class EvalRequest:
    question: QuestionRecord
    seed: int = 0


@runtime_checkable
class GenerationBackend(Protocol):
    def generate(self, request: GenRequest, config: GenConfig) -> list[str]:
        """Return exactly K completions for the request, index-stable."""
        ...

    def complete_eval(self, request: EvalRequest) -> str:
        """One greedy completion in the fine-tune serialization (Strategy: line first)."""
        ...


def generate(backend: GenerationBackend, request: GenRequest, config: GenConfig) -> list[str]:
    completions = backend.generate(request, config)
    if len(completions) != config.samples_per_pair:
        raise BackendError(
            f"backend returned {len(completions)} completions, expected {config.samples_per_pair}"
        )
    return completions


class EndpointBackend:
    """Client for an OpenAI-compatible `/v1/completions` endpoint."""

    def __init__(
        self,
        base_url: str,
        model_name: str,
        auth_env: Optional[str] = None,
        eval_instruction: str = "",
        session: Optional[requests.Session] = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model_name = model_name
        self.auth_env = auth_env
        self.eval_instruction = eval_instruction
        self.session = session or requests.Session()

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.auth_env:
            token = os.environ.get(self.auth_env, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"
        return headers

    def _post(self, body: dict, config: GenConfig) -> list[str]:
        url = f"{self.base_url}/v1/completions"
        last_error = None
        for attempt in range(config.retries):
            try:
                response = self.session.post(url, json=body, headers=self._headers(), timeout=120)
                if response.status_code >= 500:
                    last_error = f"HTTP {response.status_code}"
                elif response.status_code >= 400:
                    raise BackendError(f"completion request rejected: HTTP {response.status_code}: {response.text[:200]}")
                else:
                    payload = response.json()
                    return [choice["text"] for choice in payload["choices"]]
            except (requests.RequestException, KeyError, ValueError) as exc:
                last_error = str(exc)
            if attempt + 1 < config.retries:
                time.sleep(config.backoff_seconds * (2 ** attempt))
        raise BackendError(f"completion request failed after {config.retries} attempts: {last_error}")

    def generate(self, request: GenRequest, config: GenConfig) -> list[str]:
        body = {
            "model": self.model_name,
            "prompt": request.prompt,
            "temperature": config.temperature,
            "n": config.samples_per_pair,
            "max_tokens": config.max_tokens,
            "stop": list(config.stop_sequences) or None,
        }
        completions = self._post(body, config)
        # Servers that ignore `n` get the remainder as sequential requests.
        while len(completions) < config.samples_per_pair:
            completions.extend(self._post({**body, "n": 1}, config))
        return completions[: config.samples_per_pair]

    def complete_eval(self, request: EvalRequest) -> str:
        prompt = f"{self.eval_instruction}\n\n{request.question.text}" if self.eval_instruction else request.question.text
        body = {
            "model": self.model_name,
            "prompt": prompt,
            "temperature": 0.0,
            "n": 1,
            "max_tokens": DEFAULT_MAX_TOKENS,
            "stop": None,
        }
        return self._post(body, GenConfig())[0]


class MockBackend:
    """Deterministic scripted backend keyed by (question_id, strategy).

    Script files are JSON maps from `"<question_id>|<strategy>"` to a list of
    canned completions. Unscripted keys are a hard configuration error unless
    the config opts into cycling.
    """

    def __init__(self, script: dict[str, list[str]], eval_script: Optional[dict[str, str]] = None):
        self.script = dict(script)
        self.eval_script = dict(eval_script or {})

    @classmethod
    def from_file(cls, path: str | Path) -> "MockBackend":
        with Path(path).open(encoding="utf-8") as fh:
            raw = json.load(fh)
        eval_script = raw.pop("__eval__", None)
        return cls(raw, eval_script)

    def generate(self, request: GenRequest, config: GenConfig) -> list[str]:
        if request.question is None or request.strategy is None:
            raise BackendError("mock backend needs (question, strategy) keys on the request")
        key = f"{request.question.id}|{request.strategy.value}"
        if key not in self.script:
            raise BackendError(f"mock backend has no script for key {key!r}")
        canned = self.script[key]
        k = config.samples_per_pair
        if len(canned) >= k:
            return list(canned[:k])
        if config.cycle_short_scripts:
            return [canned[i % len(canned)] for i in range(k)]
        raise BackendError(
            f"mock script for {key!r} has {len(canned)} completions, need {k}"
        )

    def complete_eval(self, request: EvalRequest) -> str:
        key = request.question.id
        if key not in self.eval_script:
            raise BackendError(f"mock backend has no eval script for question {key!r}")
        return self.eval_script[key]


def generate_llm_dataset(
    backend: GenerationBackend,
    questions: Sequence[QuestionRecord],
    strategies: Sequence[Strategy],
    templates: dict[Strategy, PromptTemplate],
    config: GenConfig,
) -> list[tuple[str, Strategy, str]]:
    """Fan out over (question, strategy) pairs; |questions|*|strategies|*K triples.

    Output order is (question index, strategy index, k) regardless of
    completion scheduling. Backend errors are tagged with the failing pair.
    """
    missing = [s for s in strategies if s not in templates]
    if missing:
        raise SikedError(f"no template for strategies: {[s.value for s in missing]}")
    pairs = [(q, s) for q in questions for s in strategies]

    def one(pair: tuple[QuestionRecord, Strategy]) -> list[str]:
        question, strategy = pair
        request = GenRequest(
            prompt=build_generation_prompt(templates[strategy], question),
            question=question,
            strategy=strategy,
        )
        try:
            return generate(backend, request, config)
        except SikedError as exc:
            raise BackendError(f"({question.id}, {strategy.value}): {exc}") from exc

    with ThreadPoolExecutor(max_workers=max(1, config.parallelism)) as pool:
        results = list(pool.map(one, pairs))

    triples = []
    for (question, strategy), completions in zip(pairs, results):
        for text in completions:
            triples.append((question.id, strategy, text))
    return triples
