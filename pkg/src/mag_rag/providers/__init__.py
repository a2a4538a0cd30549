"""Chat and embedding providers."""

from __future__ import annotations

from ..errors import ConfigError
from .base import (
    BaseChatProvider,
    BaseEmbeddingProvider,
    ChatProvider,
    ChatRequest,
    EmbeddingProvider,
    EmbeddingVector,
    ProviderConfig,
    RateGate,
)
from .fakes import HashEmbeddingProvider, RecordedCall, ScriptedChatProvider

__all__ = [
    "BaseChatProvider",
    "BaseEmbeddingProvider",
    "ChatProvider",
    "ChatRequest",
    "EmbeddingProvider",
    "EmbeddingVector",
    "HashEmbeddingProvider",
    "ProviderConfig",
    "RateGate",
    "RecordedCall",
    "ScriptedChatProvider",
    "create_chat_provider",
    "create_embedding_provider",
]


def create_chat_provider(config: ProviderConfig) -> BaseChatProvider:
    """Build the chat backend named by ``config.provider``."""
    if config.provider == "fake":
        if not config.script:
            raise ConfigError("chat.provider = 'fake' requires chat.script")
        return ScriptedChatProvider.from_file(config.script, config)
    if config.provider == "groq":
        # Imported lazily so offline runs never touch the SDK.
        from .groq_client import GroqChatProvider

        return GroqChatProvider(config)
    raise ConfigError(f"unknown chat provider: {config.provider!r}")


def create_embedding_provider(config: ProviderConfig) -> BaseEmbeddingProvider:
    """Build the embedding backend named by ``config.provider``."""
    if config.provider == "fake":
        return HashEmbeddingProvider(config.dimension, config=config)
    if config.provider == "openai":
        from .embeddings import HttpEmbeddingProvider

        return HttpEmbeddingProvider(config)
    raise ConfigError(f"unknown embedding provider: {config.provider!r}")
