"""Shared provider types, retry policy and rate gate."""

from __future__ import annotations

import asyncio
import logging
import math
import time
from abc import ABC, abstractmethod
from collections.abc import Awaitable, Callable, Sequence
from dataclasses import dataclass
from typing import Protocol, TypeVar, runtime_checkable

import numpy as np

from ..errors import (
    DimensionMismatch,
    EmptyCompletion,
    InvalidEmbedding,
    PreconditionError,
    TransientError,
    TransportError,
)

logger = logging.getLogger(__name__)

T = TypeVar("T")


@dataclass(frozen=True)
class ChatRequest:
    """One agent call: system prompt, user content and decoding settings."""

    system_prompt: str
    user_content: str
    temperature: float = 0.0
    max_output: int = 4096
    prompt_name: str = ""

    def __post_init__(self) -> None:
        if not self.user_content or not self.user_content.strip():
            raise PreconditionError("ChatRequest.user_content must be non-empty")
        if not 0.0 <= self.temperature <= 1.0:
            raise PreconditionError(
                f"temperature must be within [0, 1], got {self.temperature}"
            )
        if self.max_output <= 0:
            raise PreconditionError("max_output must be a positive integer")


@dataclass(frozen=True)
class EmbeddingVector:
    """Immutable fixed-length embedding."""

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.values:
            raise InvalidEmbedding("embedding must have at least one coordinate")
        if not all(math.isfinite(v) for v in self.values):
            raise InvalidEmbedding("embedding contains non-finite values")

    @classmethod
    def of(cls, values: Sequence[float] | np.ndarray) -> "EmbeddingVector":
        return cls(tuple(float(v) for v in values))

    @property
    def dimension(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


@dataclass
class ProviderConfig:
    """Connection settings for one chat or embedding backend."""

    provider: str = "fake"
    endpoint: str = ""
    model_name: str = ""
    api_key_ref: str = ""
    timeout: float = 60.0
    max_retries: int = 2
    min_interval: float = 0.0
    backoff: float = 0.5
    dimension: int = 1536
    script: str | None = None

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise PreconditionError("timeout must be > 0")
        if self.max_retries < 0:
            raise PreconditionError("max_retries must be >= 0")
        if self.min_interval < 0:
            raise PreconditionError("min_interval must be >= 0")
        if self.dimension <= 0:
            raise PreconditionError("dimension must be a positive integer")


class RateGate:
    """Enforces a minimum interval between dispatches.

    Only dispatch is serialized; callers await their responses concurrently.
    """

    def __init__(self, min_interval: float = 0.0):
        self.min_interval = min_interval
        self._lock = asyncio.Lock()
        self._last = float("-inf")

    async def wait(self) -> None:
        if self.min_interval <= 0:
            return
        async with self._lock:
            delay = self._last + self.min_interval - time.monotonic()
            if delay > 0:
                await asyncio.sleep(delay)
            self._last = time.monotonic()


async def call_with_retries(
    attempt: Callable[[], Awaitable[T]],
    *,
    max_retries: int,
    backoff: float,
    gate: RateGate,
    what: str,
) -> T:
    """Run ``attempt`` until it succeeds or ``1 + max_retries`` attempts fail.

    Only :class:`TransientError` is retried; anything else propagates at once.
    """
    attempts = 0
    while True:
        attempts += 1
        await gate.wait()
        try:
            return await attempt()
        except TransientError as e:
            if attempts > max_retries:
                raise TransportError(
                    f"{what} failed after {attempts} attempts: {e}", attempts=attempts
                ) from e
            delay = backoff * (2 ** (attempts - 1))
            logger.info(
                "%s attempt %d failed (%s); retrying in %.2fs", what, attempts, e, delay
            )
            if delay > 0:
                await asyncio.sleep(delay)


@runtime_checkable
class ChatProvider(Protocol):
    async def chat(self, request: ChatRequest) -> str: ...


@runtime_checkable
class EmbeddingProvider(Protocol):
    async def embed(self, text: str) -> EmbeddingVector: ...


class BaseChatProvider(ABC):
    """Retry, rate limiting and empty-completion checks around a backend call."""

    def __init__(self, config: ProviderConfig):
        self.config = config
        self._gate = RateGate(config.min_interval)

    @abstractmethod
    async def _complete(self, request: ChatRequest) -> str:
        """Issue one backend attempt. Raise TransientError for retryable faults."""

    async def chat(self, request: ChatRequest) -> str:
        text = await call_with_retries(
            lambda: self._complete(request),
            max_retries=self.config.max_retries,
            backoff=self.config.backoff,
            gate=self._gate,
            what=f"chat[{request.prompt_name or 'anonymous'}]",
        )
        if not text or not text.strip():
            raise EmptyCompletion(
                f"backend returned an empty completion for '{request.prompt_name}'"
            )
        return text


class BaseEmbeddingProvider(ABC):
    """Retry, rate limiting and dimension checks around a backend call."""

    def __init__(self, config: ProviderConfig):
        self.config = config
        self.dimension = config.dimension
        self._gate = RateGate(config.min_interval)

    @abstractmethod
    async def _embed(self, text: str) -> Sequence[float]:
        """Issue one backend attempt. Raise TransientError for retryable faults."""

    async def embed(self, text: str) -> EmbeddingVector:
        if not text or not text.strip():
            raise PreconditionError("cannot embed empty text")
        values = await call_with_retries(
            lambda: self._embed(text),
            max_retries=self.config.max_retries,
            backoff=self.config.backoff,
            gate=self._gate,
            what="embed",
        )
        if len(values) != self.dimension:
            raise DimensionMismatch(
                f"expected {self.dimension} coordinates, backend returned {len(values)}"
            )
        return EmbeddingVector.of(values)

    async def aclose(self) -> None:
        """Release backend resources. Safe to call more than once."""
