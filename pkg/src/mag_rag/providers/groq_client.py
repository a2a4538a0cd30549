"""Groq chat-completion backend."""

import logging
import os

import groq
from groq import AsyncGroq

from ..errors import ConfigError, TransientError, TransportError
from .base import BaseChatProvider, ChatRequest, ProviderConfig

logger = logging.getLogger(__name__)


class GroqChatProvider(BaseChatProvider):
    """Wrapper for the Groq API used by every agent."""

    DEFAULT_MODEL = "llama-3.3-70b-versatile"
    DEFAULT_KEY_ENV = "GROQ_API_KEY"

    def __init__(self, config: ProviderConfig, api_key: str | None = None):
        """
        Initialize the Groq client.

        Args:
            config: Provider settings. ``api_key_ref`` names the environment
                variable holding the key (defaults to GROQ_API_KEY).
            api_key: Optional explicit key, mostly for tests.
        """
        super().__init__(config)
        key_env = config.api_key_ref or self.DEFAULT_KEY_ENV
        self.api_key = api_key or os.getenv(key_env)
        if not self.api_key:
            raise ConfigError(f"{key_env} not provided and not found in environment")

        self.model = config.model_name or self.DEFAULT_MODEL
        # Retries are handled by call_with_retries, not by the SDK.
        self._client = AsyncGroq(
            api_key=self.api_key,
            base_url=config.endpoint or None,
            timeout=config.timeout,
            max_retries=0,
        )

    async def _complete(self, request: ChatRequest) -> str:
        logger.debug(
            "Calling Groq API (model: %s, prompt: %s)...", self.model, request.prompt_name
        )
        try:
            response = await self._client.chat.completions.create(
                model=self.model,
                messages=[
                    {"role": "system", "content": request.system_prompt},
                    {"role": "user", "content": request.user_content},
                ],
                temperature=request.temperature,
                max_tokens=request.max_output,
            )
        except (
            groq.APIConnectionError,
            groq.RateLimitError,
            groq.InternalServerError,
        ) as e:
            # APITimeoutError is a subclass of APIConnectionError
            raise TransientError(str(e)) from e
        except groq.APIError as e:
            raise TransportError(f"Groq API error: {e}") from e

        if not response.choices:
            return ""
        return response.choices[0].message.content or ""
