"""OpenAI-compatible embedding backend over HTTP."""

import asyncio
import logging
import os
from collections.abc import Sequence

import httpx

from ..errors import ConfigError, TransientError, TransportError
from .base import BaseEmbeddingProvider, ProviderConfig

logger = logging.getLogger(__name__)

DEFAULT_ENDPOINT = "https://api.openai.com/v1"
DEFAULT_MODEL = "text-embedding-3-small"
DEFAULT_KEY_ENV = "OPENAI_API_KEY"


class HttpEmbeddingProvider(BaseEmbeddingProvider):
    """POSTs ``{"model", "input"}`` to ``<endpoint>/embeddings``.

    One ``httpx.AsyncClient`` is kept per event loop and reused across
    calls; ``aclose()`` releases it.
    """

    def __init__(
        self,
        config: ProviderConfig,
        api_key: str | None = None,
        transport: httpx.AsyncBaseTransport | None = None,
    ):
        super().__init__(config)
        self._transport = transport
        self._client: httpx.AsyncClient | None = None
        self._client_loop: asyncio.AbstractEventLoop | None = None
        key_env = config.api_key_ref or DEFAULT_KEY_ENV
        self.api_key = api_key or os.getenv(key_env)
        if not self.api_key:
            raise ConfigError(f"{key_env} not provided and not found in environment")
        self.base_url = (config.endpoint or DEFAULT_ENDPOINT).rstrip("/")
        self.model = config.model_name or DEFAULT_MODEL

    def _get_client(self) -> httpx.AsyncClient:
        loop = asyncio.get_running_loop()
        if self._client is None or self._client_loop is not loop:
            # A client from a finished asyncio.run cannot be reused.
            self._client = httpx.AsyncClient(timeout=self.config.timeout, transport=self._transport)
            self._client_loop = loop
        return self._client

    async def aclose(self) -> None:
        if self._client is not None:
            await self._client.aclose()
        self._client = None
        self._client_loop = None

    async def _embed(self, text: str) -> Sequence[float]:
        payload = {"model": self.model, "input": [text], "encoding_format": "float"}
        headers = {"Authorization": f"Bearer {self.api_key}"}
        try:
            response = await self._get_client().post(
                f"{self.base_url}/embeddings", json=payload, headers=headers
            )
        except httpx.TransportError as e:
            raise TransientError(f"embedding request failed: {e}") from e

        if response.status_code == 429 or response.status_code >= 500:
            raise TransientError(f"embedding endpoint returned {response.status_code}")
        if response.status_code >= 400:
            raise TransportError(
                f"embedding endpoint returned {response.status_code}: {response.text[:200]}"
            )

        data = response.json().get("data") or []
        if not data:
            raise TransportError("embedding endpoint returned empty data")
        return data[0]["embedding"]
