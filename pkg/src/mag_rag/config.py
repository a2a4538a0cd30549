"""Configuration loading for MAG-RAG."""

from __future__ import annotations

import logging
import os
import tomllib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError, PreconditionError
from .providers.base import ProviderConfig

logger = logging.getLogger(__name__)


# Default settings
DEFAULT_EPSILON = 0.8
DEFAULT_K = 3
DEFAULT_KNOWLEDGE_BUDGET_CHARS = 24000
DEFAULT_MAX_DOCUMENT_CHARS = 60000
DEFAULT_CONCURRENCY = 4
DEFAULT_MAX_OUTPUT_TOKENS = 4096
DEFAULT_RESULTS_DIR = "results"
DEFAULT_CHAT_MODEL = "llama-3.3-70b-versatile"
DEFAULT_EMBEDDING_MODEL = "text-embedding-3-small"
DEFAULT_EMBEDDING_DIMENSION = 1536
# Normalization agents run cold; generation agents slightly warmer.
DEFAULT_TEMPERATURES = {
    "extraction": 0.0,
    "terminology": 0.0,
    "knowledge_generation": 0.2,
    "modeling": 0.2,
    "direct_answer": 0.2,
    "judge": 0.0,
}

CONFIG_ENV_VAR = "MAGRAG_CONFIG"

# TOML key -> ProviderConfig field
_PROVIDER_KEYS = {
    "provider": "provider",
    "endpoint": "endpoint",
    "model": "model_name",
    "api_key_env": "api_key_ref",
    "timeout": "timeout",
    "max_retries": "max_retries",
    "min_interval": "min_interval",
    "backoff": "backoff",
    "dimension": "dimension",
    "script": "script",
}


def default_chat_config() -> ProviderConfig:
    return ProviderConfig(
        provider="groq",
        model_name=DEFAULT_CHAT_MODEL,
        api_key_ref="GROQ_API_KEY",
    )


def default_embedding_config() -> ProviderConfig:
    return ProviderConfig(
        provider="openai",
        endpoint="https://api.openai.com/v1",
        model_name=DEFAULT_EMBEDDING_MODEL,
        api_key_ref="OPENAI_API_KEY",
        dimension=DEFAULT_EMBEDDING_DIMENSION,
    )


@dataclass
class Config:
    """Effective settings for one CLI invocation."""

    chat: ProviderConfig = field(default_factory=default_chat_config)
    embedding: ProviderConfig = field(default_factory=default_embedding_config)
    epsilon: float = DEFAULT_EPSILON
    k: int = DEFAULT_K
    knowledge_budget_chars: int = DEFAULT_KNOWLEDGE_BUDGET_CHARS
    dd_same_layer_only: bool = False
    dd_expansion: bool = False
    prompt_dir: str | None = None
    results_dir: str = DEFAULT_RESULTS_DIR
    max_document_chars: int = DEFAULT_MAX_DOCUMENT_CHARS
    concurrency: int = DEFAULT_CONCURRENCY
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    temperatures: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_TEMPERATURES))

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if not 0.0 <= self.epsilon < 1.0:
            raise ConfigError(f"epsilon must be within [0, 1), got {self.epsilon}")
        if self.knowledge_budget_chars <= 0:
            raise ConfigError("knowledge_budget_chars must be positive")
        if self.max_document_chars <= 0:
            raise ConfigError("max_document_chars must be positive")
        if self.concurrency < 1:
            raise ConfigError("concurrency must be >= 1")
        for name, value in self.temperatures.items():
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"temperatures.{name} must be within [0, 1]")

    def temperature(self, prompt_name: str) -> float:
        return self.temperatures.get(prompt_name, DEFAULT_TEMPERATURES.get(prompt_name, 0.0))

    def to_dict(self) -> dict[str, Any]:
        """Convert to a plain dict for display."""
        return asdict(self)


def get_config_dir() -> Path:
    """Get the configuration directory (not created)."""
    # Use XDG config dir on Linux/macOS, or fall back to ~/.config
    xdg_config = os.environ.get("XDG_CONFIG_HOME")
    if xdg_config:
        return Path(xdg_config) / "magrag"
    return Path.home() / ".config" / "magrag"


def get_config_path(explicit: str | None = None) -> Path | None:
    """Resolve which config file to read, or None for built-in defaults."""
    if explicit:
        return Path(os.path.expanduser(explicit))
    env_path = os.environ.get(CONFIG_ENV_VAR)
    if env_path:
        return Path(os.path.expanduser(env_path))
    default = get_config_dir() / "config.toml"
    return default if default.exists() else None


def _expand(value: Any) -> Any:
    if isinstance(value, str):
        return os.path.expandvars(value)
    if isinstance(value, dict):
        return {k: _expand(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_expand(v) for v in value]
    return value


def _resolve_relative(value: str | None, base: Path | None) -> str | None:
    if not value or base is None:
        return value
    path = Path(os.path.expanduser(value))
    return str(path if path.is_absolute() else (base / path))


def _provider_from_table(
    table: Mapping[str, Any], defaults: ProviderConfig, section: str, base: Path | None
) -> ProviderConfig:
    if "api_key" in table:
        raise ConfigError(
            f"[{section}] api_key is not allowed in config files; set api_key_env instead"
        )
    values = asdict(defaults)
    for key, value in table.items():
        if key not in _PROVIDER_KEYS:
            raise ConfigError(f"unknown key [{section}].{key}")
        values[_PROVIDER_KEYS[key]] = value
    values["script"] = _resolve_relative(values.get("script"), base)
    try:
        return ProviderConfig(**values)
    except (PreconditionError, TypeError) as e:
        raise ConfigError(f"[{section}]: {e}") from e


def config_from_mapping(
    data: Mapping[str, Any],
    overrides: Mapping[str, Any] | None = None,
    base_dir: Path | None = None,
) -> Config:
    """Build a Config from parsed TOML data, applying CLI overrides on top."""
    data = _expand(dict(data))
    scalar_names = {f.name for f in fields(Config)} - {"chat", "embedding", "temperatures"}

    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key in ("chat", "embedding", "temperatures"):
            continue
        if key not in scalar_names:
            raise ConfigError(f"unknown config key: {key}")
        kwargs[key] = value

    kwargs["chat"] = _provider_from_table(
        data.get("chat", {}), default_chat_config(), "chat", base_dir
    )
    kwargs["embedding"] = _provider_from_table(
        data.get("embedding", {}), default_embedding_config(), "embedding", base_dir
    )
    temperatures = dict(DEFAULT_TEMPERATURES)
    temperatures.update(data.get("temperatures", {}))
    kwargs["temperatures"] = temperatures

    for key in ("prompt_dir", "results_dir"):
        if key in kwargs:
            kwargs[key] = _resolve_relative(kwargs[key], base_dir)

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in scalar_names:
            raise ConfigError(f"unknown override: {key}")
        kwargs[key] = value

    try:
        return Config(**kwargs)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def load_config(
    path: str | Path | None = None, overrides: Mapping[str, Any] | None = None
) -> Config:
    """Load configuration from disk (or defaults) with CLI overrides applied."""
    if path is None:
        logger.debug("No config file; using built-in defaults")
        return config_from_mapping({}, overrides)

    config_path = Path(path)
    try:
        with open(config_path, "rb") as f:
            data = tomllib.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {config_path}") from e
    except (tomllib.TOMLDecodeError, OSError) as e:
        raise ConfigError(f"cannot read config {config_path}: {e}") from e

    logger.debug("Loaded config from %s", config_path)
    return config_from_mapping(data, overrides, base_dir=config_path.resolve().parent)
