"""Deterministic offline providers for tests and demos."""

from __future__ import annotations

import hashlib
import json
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigError, TransientError
from .base import BaseChatProvider, BaseEmbeddingProvider, ChatRequest, ProviderConfig

WILDCARD = "*"


@dataclass(frozen=True)
class RecordedCall:
    """One backend attempt seen by a fake chat provider."""

    prompt_name: str
    system_prompt: str
    user_content: str
    temperature: float
    failed: bool = False


class ScriptedChatProvider(BaseChatProvider):
    """Answers from a script table.

    Lookup order: exact ``user_content``, then ``"<prompt_name>:*"``, then
    ``"*"``. A missing entry yields an empty completion.
    """

    def __init__(
        self,
        script: Mapping[str, str],
        config: ProviderConfig | None = None,
        failures: int = 0,
    ):
        super().__init__(config or ProviderConfig(provider="fake", backoff=0.0))
        self.script = dict(script)
        self.failures_left = failures
        self.calls: list[RecordedCall] = []

    @classmethod
    def from_file(cls, path: str | Path, config: ProviderConfig) -> "ScriptedChatProvider":
        try:
            script = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot load chat script {path}: {e}") from e
        if not isinstance(script, dict):
            raise ConfigError(f"chat script {path} must be a JSON object")
        return cls(script, config)

    @property
    def system_prompts(self) -> list[str]:
        return [c.system_prompt for c in self.calls if not c.failed]

    def lookup(self, request: ChatRequest) -> str:
        for key in (request.user_content, f"{request.prompt_name}:{WILDCARD}", WILDCARD):
            if key in self.script:
                return self.script[key]
        return ""

    async def _complete(self, request: ChatRequest) -> str:
        failed = self.failures_left > 0
        self.calls.append(
            RecordedCall(
                prompt_name=request.prompt_name,
                system_prompt=request.system_prompt,
                user_content=request.user_content,
                temperature=request.temperature,
                failed=failed,
            )
        )
        if failed:
            self.failures_left -= 1
            raise TransientError("scripted transient failure")
        return self.lookup(request)


def _content_seed(text: str) -> int:
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


class HashEmbeddingProvider(BaseEmbeddingProvider):
    """Unit vectors drawn from an RNG seeded with a stable hash of the text.

    ``overrides`` maps exact texts to fixed vectors; ``default`` (if given)
    is returned for every text not in the table.
    """

    def __init__(
        self,
        dimension: int = 8,
        overrides: Mapping[str, Sequence[float]] | None = None,
        default: Sequence[float] | None = None,
        config: ProviderConfig | None = None,
    ):
        config = config or ProviderConfig(provider="fake", backoff=0.0, dimension=dimension)
        super().__init__(config)
        self.overrides = {k: list(v) for k, v in (overrides or {}).items()}
        self.default = list(default) if default is not None else None
        self.calls: list[str] = []

    async def _embed(self, text: str) -> Sequence[float]:
        self.calls.append(text)
        if text in self.overrides:
            return self.overrides[text]
        if self.default is not None:
            return self.default
        rng = np.random.default_rng(_content_seed(text))
        vec = rng.standard_normal(self.dimension)
        return (vec / np.linalg.norm(vec)).tolist()
