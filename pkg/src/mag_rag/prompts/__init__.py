"""Agent prompt templates shipped as versioned text assets.

Each ``<name>.txt`` holds a ``version:`` line followed by a ``=== system ===``
block and a ``=== user ===`` block. Slots use ``str.format`` syntax.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from ..errors import ConfigError

EXTRACTION = "extraction"
TERMINOLOGY = "terminology"
KNOWLEDGE_GENERATION = "knowledge_generation"
MODELING = "modeling"
DIRECT_ANSWER = "direct_answer"
JUDGE = "judge"

PROMPT_NAMES = (EXTRACTION, TERMINOLOGY, KNOWLEDGE_GENERATION, MODELING, DIRECT_ANSWER, JUDGE)

_BLOCK_RE = re.compile(r"^=== (system|user) ===[ \t]*$", re.MULTILINE)
_VERSION_RE = re.compile(r"^version:\s*(\d+)\s*$", re.MULTILINE)


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    version: int
    system: str
    user: str

    def render(self, **slots: str) -> tuple[str, str]:
        """Return ``(system_prompt, user_content)`` with slots filled."""
        try:
            return self.system.format(**slots), self.user.format(**slots)
        except KeyError as e:
            raise ConfigError(f"prompt '{self.name}' needs slot {e}") from e


def parse_template(name: str, text: str) -> PromptTemplate:
    version_match = _VERSION_RE.search(text)
    if not version_match:
        raise ConfigError(f"prompt '{name}' has no version line")

    blocks: dict[str, str] = {}
    matches = list(_BLOCK_RE.finditer(text))
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
        blocks[m.group(1)] = text[m.end() : end].strip()

    if "system" not in blocks or "user" not in blocks:
        raise ConfigError(f"prompt '{name}' needs both system and user blocks")
    return PromptTemplate(name, int(version_match.group(1)), blocks["system"], blocks["user"])


def load_prompts(prompt_dir: str | Path | None = None) -> dict[str, PromptTemplate]:
    """Load every agent template, preferring files in ``prompt_dir`` when set."""
    templates: dict[str, PromptTemplate] = {}
    package_files = resources.files(__name__)
    for name in PROMPT_NAMES:
        filename = f"{name}.txt"
        override = Path(prompt_dir) / filename if prompt_dir else None
        if override is not None and override.is_file():
            text = override.read_text(encoding="utf-8")
        else:
            text = package_files.joinpath(filename).read_text(encoding="utf-8")
        templates[name] = parse_template(name, text)
    return templates
