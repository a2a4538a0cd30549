"""Corpus loading and knowledge extraction."""

from __future__ import annotations

import asyncio
import logging
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping, Sequence

import pathspec

from .errors import (
    DuplicateDocument,
    EmptyCorpus,
    MalformedCompletion,
    PreconditionError,
    StageError,
    UnreadableFile,
)
from .prompts import EXTRACTION, PromptTemplate, load_prompts
from .providers.base import ChatProvider, ChatRequest

logger = logging.getLogger(__name__)


class Layer(str, Enum):
    """The four graph layers, in chain order."""

    PT = "PT"
    SM = "SM"
    OF = "OF"
    OA = "OA"

    @property
    def label(self) -> str:
        return LAYER_TITLES[self]


LAYER_ORDER = (Layer.PT, Layer.SM, Layer.OF, Layer.OA)
LAYER_TITLES = {
    Layer.PT: "Problem Type",
    Layer.SM: "System Model",
    Layer.OF: "Optimization Formulation",
    Layer.OA: "Optimization Algorithm",
}


class Section(str, Enum):
    """Canonical extraction headers (bit-exact wire names)."""

    TERMINOLOGICAL_DESCRIPTION = "Terminological Description"
    EXAMPLE_INFORMATION = "Example Information"
    SYSTEM_MODEL = "System Model"
    OPTIMIZATION_FORMULATION = "Optimization Formulation"
    OPTIMIZATION_ALGORITHM = "Optimization Algorithm"


SECTION_LAYERS = {
    Section.TERMINOLOGICAL_DESCRIPTION: Layer.PT,
    Section.EXAMPLE_INFORMATION: Layer.PT,
    Section.SYSTEM_MODEL: Layer.SM,
    Section.OPTIMIZATION_FORMULATION: Layer.OF,
    Section.OPTIMIZATION_ALGORITHM: Layer.OA,
}

# File extensions treated as documents
DOCUMENT_EXTENSIONS = {".md", ".markdown", ".txt"}

# Default ignore patterns
DEFAULT_IGNORES = [
    ".git",
    ".git/**",
    "__pycache__",
    "__pycache__/**",
    ".*",
]

IGNORE_FILE = ".magragignore"

_HEADER_RE = re.compile(r"^##[ \t]+(.+?)[ \t]*#*[ \t]*$")
_KEYWORDS_RE = re.compile(r"^keywords\s*:\s*(.*)$", re.IGNORECASE)
_TITLE_RE = re.compile(r"^#[ \t]+(.+?)\s*$", re.MULTILINE)
_SENTENCE_END_RE = re.compile(r"(?<=[.!?])\s")

FALLBACK_KEYWORD_CHARS = 200

CORRECTIVE_INSTRUCTION = (
    "\n\nYour previous answer was missing these required sections: {missing}. "
    "Answer again with EXACTLY the five level-2 headers: "
    + ", ".join(f"'## {s.value}'" for s in Section)
    + "."
)


@dataclass(frozen=True)
class SourceDocument:
    """One raw domain document."""

    doc_id: str
    title: str
    body: str
    origin_path: str


@dataclass(frozen=True)
class ParsedSections:
    """Output of :func:`parse_sections`: texts and keyword lines per header."""

    texts: dict[Section, str]
    keywords: dict[Section, tuple[str, ...]]


@dataclass(frozen=True)
class ExtractedKnowledge:
    """The five-part modeling distillate of one document."""

    doc_id: str
    terminological_description: str
    example_information: str
    system_model: str
    optimization_formulation: str
    optimization_algorithm: str
    keywords_per_section: Mapping[Layer, tuple[str, ...]]

    def __post_init__(self) -> None:
        for section in Section:
            if not self.section_text(section).strip():
                raise PreconditionError(f"{self.doc_id}: section '{section.value}' is empty")
        if set(self.keywords_per_section) != set(Layer):
            raise PreconditionError(
                f"{self.doc_id}: keywords must cover exactly the layers PT, SM, OF, OA"
            )

    def section_text(self, section: Section) -> str:
        return getattr(self, section.name.lower())

    def layer_content(self, layer: Layer) -> str:
        """Node content for a graph layer; PT carries the description and example."""
        if layer is Layer.PT:
            return (
                f"{self.terminological_description}\n\n"
                f"Example information:\n{self.example_information}"
            )
        section = next(s for s, l in SECTION_LAYERS.items() if l is layer)
        return self.section_text(section)

    def layer_keywords(self, layer: Layer) -> str:
        return "; ".join(self.keywords_per_section[layer])


# --- corpus loading ---


def load_ignore_spec(root: Path) -> pathspec.PathSpec:
    """Default ignore patterns plus an optional .magragignore."""
    patterns = list(DEFAULT_IGNORES)
    ignore_path = root / IGNORE_FILE
    if ignore_path.exists():
        with open(ignore_path, "r", encoding="utf-8", errors="ignore") as f:
            patterns.extend(f.read().splitlines())
    return pathspec.PathSpec.from_lines("gitwildmatch", patterns)


def _title_of(body: str, fallback: str) -> str:
    m = _TITLE_RE.search(body)
    return m.group(1) if m else fallback


def load_corpus(
    directory: str | Path,
    log_callback: Callable[[str], None] | None = None,
) -> list[SourceDocument]:
    """
    Load every text document under a directory.

    Args:
        directory: Corpus root
        log_callback: Optional callback for progress lines

    Returns:
        Documents ordered lexicographically by relative path; ``doc_id`` is
        the relative POSIX path without its extension.
    """

    def log(msg: str) -> None:
        if log_callback:
            log_callback(msg)

    root = Path(directory)
    if not root.is_dir():
        raise PreconditionError(f"corpus directory not found: {directory}")

    spec = load_ignore_spec(root)
    paths = sorted(
        (p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in DOCUMENT_EXTENSIONS),
        key=lambda p: p.relative_to(root).as_posix(),
    )

    documents: list[SourceDocument] = []
    seen: dict[str, str] = {}
    for path in paths:
        rel = path.relative_to(root).as_posix()
        if spec.match_file(rel):
            continue
        try:
            body = path.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as e:
            raise UnreadableFile(rel, str(e)) from e
        if not body.strip():
            logger.warning("Skipping empty document %s", rel)
            continue

        doc_id = rel.rsplit(".", 1)[0]
        if doc_id in seen:
            raise DuplicateDocument(f"{rel} and {seen[doc_id]} both map to doc_id '{doc_id}'")
        seen[doc_id] = rel
        documents.append(
            SourceDocument(
                doc_id=doc_id,
                title=_title_of(body, path.stem),
                body=body,
                origin_path=str(path),
            )
        )
        log(f"Loaded {rel}")

    if not documents:
        raise EmptyCorpus(f"no readable documents in {directory}")
    log(f"Corpus loaded: {len(documents)} documents")
    return documents


# --- section wire format ---


def _canonical_section(header: str) -> Section | None:
    normalized = " ".join(header.split()).lower()
    for section in Section:
        if section.value.lower() == normalized:
            return section
    return None


def parse_sections(completion: str) -> ParsedSections:
    """
    Split an extraction completion into the five canonical sections.

    Headers are matched case-insensitively; unknown level-2 headers and any
    text before the first header are ignored. A leading ``Keywords:`` line
    is lifted out of each section body.
    """
    if not completion or not completion.strip():
        raise PreconditionError("completion must be non-empty")

    raw_bodies: dict[Section, list[str]] = {}
    current: list[str] | None = None
    for line in completion.splitlines():
        m = _HEADER_RE.match(line.strip())
        if m:
            section = _canonical_section(m.group(1))
            if section is not None and section not in raw_bodies:
                current = raw_bodies[section] = []
            else:
                current = None
            continue
        if current is not None:
            current.append(line)

    texts: dict[Section, str] = {}
    keywords: dict[Section, tuple[str, ...]] = {}
    for section, lines in raw_bodies.items():
        body_lines = list(lines)
        phrases: tuple[str, ...] = ()
        for i, line in enumerate(body_lines):
            if not line.strip():
                continue
            km = _KEYWORDS_RE.match(line.strip())
            if km:
                phrases = tuple(p.strip() for p in km.group(1).split(";") if p.strip())
                del body_lines[i]
            break
        text = "\n".join(body_lines).strip()
        if text:
            texts[section] = text
            keywords[section] = phrases

    missing = [s.value for s in Section if s not in texts]
    if missing:
        raise MalformedCompletion(missing, raw=completion)
    return ParsedSections(texts=texts, keywords=keywords)


def _fallback_keywords(text: str) -> tuple[str, ...]:
    first = _SENTENCE_END_RE.split(text.strip(), maxsplit=1)[0]
    return (" ".join(first.split())[:FALLBACK_KEYWORD_CHARS],)


def knowledge_from_sections(doc_id: str, parsed: ParsedSections) -> ExtractedKnowledge:
    """Assemble ExtractedKnowledge, folding the five keyword lines onto four layers."""
    per_layer: dict[Layer, list[str]] = {layer: [] for layer in Layer}
    for section in Section:
        layer = SECTION_LAYERS[section]
        for phrase in parsed.keywords.get(section, ()):
            if phrase not in per_layer[layer]:
                per_layer[layer].append(phrase)
    for section in Section:
        layer = SECTION_LAYERS[section]
        if not per_layer[layer]:
            logger.debug("%s: no keywords for %s, using first sentence", doc_id, layer.value)
            per_layer[layer].extend(_fallback_keywords(parsed.texts[section]))

    t = parsed.texts
    return ExtractedKnowledge(
        doc_id=doc_id,
        terminological_description=t[Section.TERMINOLOGICAL_DESCRIPTION],
        example_information=t[Section.EXAMPLE_INFORMATION],
        system_model=t[Section.SYSTEM_MODEL],
        optimization_formulation=t[Section.OPTIMIZATION_FORMULATION],
        optimization_algorithm=t[Section.OPTIMIZATION_ALGORITHM],
        keywords_per_section={layer: tuple(p) for layer, p in per_layer.items()},
    )


def render_sections(knowledge: ExtractedKnowledge) -> str:
    """Render knowledge in the extraction wire format (inverse of parse_sections)."""
    parts: list[str] = []
    for section in Section:
        parts.append(f"## {section.value}")
        if section is not Section.EXAMPLE_INFORMATION:
            phrases = knowledge.keywords_per_section[SECTION_LAYERS[section]]
            if phrases:
                parts.append(f"Keywords: {'; '.join(phrases)}")
        parts.append("")
        parts.append(knowledge.section_text(section))
        parts.append("")
    return "\n".join(parts)


# --- extraction agent ---


async def extract_knowledge(
    doc: SourceDocument,
    chat: ChatProvider,
    prompt: PromptTemplate | None = None,
    *,
    temperature: float = 0.0,
    max_output: int = 4096,
    max_document_chars: int = 60000,
    retries: int = 1,
) -> ExtractedKnowledge:
    """
    Run the Extraction Agent on one document.

    A malformed completion is retried ``retries`` times with a corrective
    instruction naming the missing sections.
    """
    prompt = prompt or load_prompts()[EXTRACTION]
    body = doc.body
    if len(body) > max_document_chars:
        logger.warning(
            "%s: truncating document from %d to %d characters",
            doc.doc_id,
            len(body),
            max_document_chars,
        )
        body = body[:max_document_chars]

    system_prompt, user_content = prompt.render(title=doc.title, body=body)
    content = user_content
    attempt = 0
    while True:
        completion = await chat.chat(
            ChatRequest(
                system_prompt=system_prompt,
                user_content=content,
                temperature=temperature,
                max_output=max_output,
                prompt_name=EXTRACTION,
            )
        )
        try:
            parsed = parse_sections(completion)
        except MalformedCompletion as e:
            if attempt >= retries:
                raise MalformedCompletion(e.missing, raw=completion) from e
            attempt += 1
            logger.warning(
                "%s: extraction missing %s; retrying (%d/%d)",
                doc.doc_id,
                ", ".join(e.missing),
                attempt,
                retries,
            )
            content = user_content + CORRECTIVE_INSTRUCTION.format(missing=", ".join(e.missing))
            continue
        return knowledge_from_sections(doc.doc_id, parsed)


async def extract_corpus(
    documents: Sequence[SourceDocument],
    chat: ChatProvider,
    prompt: PromptTemplate | None = None,
    *,
    concurrency: int = 4,
    log_callback: Callable[[str], None] | None = None,
    **kwargs,
) -> list[ExtractedKnowledge]:
    """Extract every document concurrently; results keep the input order."""
    prompt = prompt or load_prompts()[EXTRACTION]
    semaphore = asyncio.Semaphore(concurrency)

    async def one(doc: SourceDocument) -> ExtractedKnowledge:
        async with semaphore:
            try:
                knowledge = await extract_knowledge(doc, chat, prompt, **kwargs)
            except Exception as e:
                raise StageError("extraction", e, doc_id=doc.doc_id) from e
            if log_callback:
                log_callback(f"Extracted {doc.doc_id}")
            return knowledge

    return list(await asyncio.gather(*(one(doc) for doc in documents)))
