"""Agent pipeline: MAG-RAG, pure MA and pure LLM modes."""

from __future__ import annotations

import hashlib
import logging
import re
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Callable

from .errors import PreconditionError, ResultFormatError, StageError, StorageError
from .graph import KnowledgeGraph
from .prompts import (
    DIRECT_ANSWER,
    KNOWLEDGE_GENERATION,
    MODELING,
    TERMINOLOGY,
    PromptTemplate,
    load_prompts,
)
from .providers.base import ChatProvider, ChatRequest, EmbeddingProvider
from .retriever import DEFAULT_BUDGET_CHARS, DEFAULT_K, KnowledgeBundle, retrieve_topk

logger = logging.getLogger(__name__)

RETRIEVAL = "retrieval"
APPENDIX_MARKER = "<!-- magrag:appendix -->"


class Mode(str, Enum):
    MAG_RAG = "MAG_RAG"
    PURE_MA = "PURE_MA"
    PURE_LLM = "PURE_LLM"

    @property
    def code(self) -> str:
        """One-letter method code used in score tables."""
        return {"MAG_RAG": "G", "PURE_MA": "T", "PURE_LLM": "D"}[self.value]

    @property
    def cli_name(self) -> str:
        return self.value.lower().replace("_", "-")

    @classmethod
    def from_code(cls, code: str) -> "Mode":
        for mode in cls:
            if mode.code == code:
                return mode
        raise ValueError(f"unknown method code {code!r}")

    @classmethod
    def parse(cls, name: str) -> "Mode":
        normalized = name.strip().upper().replace("-", "_")
        try:
            return cls(normalized)
        except ValueError:
            raise PreconditionError(f"unknown mode {name!r}") from None


@dataclass(frozen=True)
class UserQuery:
    text: str
    query_id: str = ""

    def __post_init__(self) -> None:
        if not self.text or not self.text.strip():
            raise PreconditionError("query text must be non-empty")
        if not self.query_id:
            digest = hashlib.sha1(self.text.encode("utf-8")).hexdigest()[:8]
            object.__setattr__(self, "query_id", f"q-{digest}")


@dataclass(frozen=True)
class TerminologicalDescription:
    text: str
    source_query: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise PreconditionError("terminological description must be non-empty")


@dataclass(frozen=True)
class TraceEntry:
    stage: str
    prompt_name: str
    elapsed: float
    completion_length: int

    def render(self) -> str:
        return (
            f"{self.stage:<22} prompt={self.prompt_name or '-':<22}"
            f" elapsed={self.elapsed:.3f}s chars={self.completion_length}"
        )


@dataclass
class ModelingResult:
    """The modeling answer M plus provenance."""

    text: str
    mode: Mode
    query: UserQuery
    knowledge_used: KnowledgeBundle | str | None
    trace: list[TraceEntry]
    description: str | None = None
    model: str = ""
    k: int | None = None
    started_at: str = ""
    finished_at: str = ""

    def __post_init__(self) -> None:
        if self.mode is Mode.PURE_LLM and self.knowledge_used is not None:
            raise PreconditionError("PURE_LLM results carry no knowledge")
        if not self.trace:
            raise PreconditionError("a result needs a non-empty trace")

    @property
    def method_label(self) -> str:
        return f"{self.model}:{self.mode.code}" if self.model else self.mode.code


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class ModelingPipeline:
    """Runs the agent chain for one query in any of the three modes."""

    def __init__(
        self,
        chat: ChatProvider,
        embed: EmbeddingProvider | None = None,
        prompts: dict[str, PromptTemplate] | None = None,
        *,
        k: int = DEFAULT_K,
        budget_chars: int = DEFAULT_BUDGET_CHARS,
        temperatures: dict[str, float] | None = None,
        max_output: int = 4096,
        model: str = "",
        dd_expansion: bool = False,
    ):
        """
        Initialize the pipeline.

        Args:
            chat: Chat provider shared by all agents
            embed: Embedding provider (MAG-RAG mode only)
            prompts: Agent templates; defaults to the packaged set
            k: Default number of retrieved chains
            budget_chars: Character cap on retrieved knowledge
            temperatures: Per-agent temperature overrides
            max_output: Output budget per agent call
            model: Base model tag recorded on results
        """
        self.chat = chat
        self.embed = embed
        self.prompts = prompts or load_prompts()
        self.k = k
        self.budget_chars = budget_chars
        self.temperatures = temperatures or {}
        self.max_output = max_output
        self.model = model
        self.dd_expansion = dd_expansion

    async def _agent(
        self, prompt_name: str, trace: list[TraceEntry], stage: str | None = None, **slots: str
    ) -> str:
        stage = stage or prompt_name
        system_prompt, user_content = self.prompts[prompt_name].render(**slots)
        started = time.perf_counter()
        try:
            completion = await self.chat.chat(
                ChatRequest(
                    system_prompt=system_prompt,
                    user_content=user_content,
                    temperature=self.temperatures.get(prompt_name, 0.0),
                    max_output=self.max_output,
                    prompt_name=prompt_name,
                )
            )
        except Exception as e:
            raise StageError(stage, e, trace) from e
        trace.append(TraceEntry(stage, prompt_name, time.perf_counter() - started, len(completion)))
        return completion

    async def terminologize(
        self, query: UserQuery, trace: list[TraceEntry] | None = None
    ) -> TerminologicalDescription:
        """Rewrite the user query in domain terminology (Terminology Agent)."""
        trace = trace if trace is not None else []
        text = await self._agent(TERMINOLOGY, trace, query=query.text)
        return TerminologicalDescription(text.strip(), query.query_id)

    async def run_mag_rag(
        self,
        query: UserQuery,
        graph: KnowledgeGraph,
        k: int | None = None,
        log_callback: Callable[[str], None] | None = None,
    ) -> ModelingResult:
        """Terminology -> graph retrieval -> modeling."""
        k = self.k if k is None else k
        started_at = _now()
        trace: list[TraceEntry] = []
        description = await self.terminologize(query, trace)

        started = time.perf_counter()
        try:
            bundle = await retrieve_topk(
                graph,
                description.text,
                k,
                self.embed,
                budget_chars=self.budget_chars,
                dd_expansion=self.dd_expansion,
                log_callback=log_callback,
            )
        except Exception as e:
            raise StageError(RETRIEVAL, e, trace) from e
        trace.append(
            TraceEntry(RETRIEVAL, "", time.perf_counter() - started, bundle.total_characters)
        )

        text = await self._agent(
            MODELING, trace, description=description.text, knowledge=bundle.render()
        )
        return ModelingResult(
            text=text,
            mode=Mode.MAG_RAG,
            query=query,
            knowledge_used=bundle,
            trace=trace,
            description=description.text,
            model=self.model,
            k=k,
            started_at=started_at,
            finished_at=_now(),
        )

    async def run_pure_ma(self, query: UserQuery) -> ModelingResult:
        """Terminology -> Knowledge Generation Agent -> modeling."""
        started_at = _now()
        trace: list[TraceEntry] = []
        description = await self.terminologize(query, trace)
        knowledge = await self._agent(KNOWLEDGE_GENERATION, trace, description=description.text)
        text = await self._agent(
            MODELING, trace, description=description.text, knowledge=knowledge.strip()
        )
        return ModelingResult(
            text=text,
            mode=Mode.PURE_MA,
            query=query,
            knowledge_used=knowledge,
            trace=trace,
            description=description.text,
            model=self.model,
            started_at=started_at,
            finished_at=_now(),
        )

    async def run_pure_llm(self, query: UserQuery) -> ModelingResult:
        """Single direct-answer call without prior knowledge."""
        started_at = _now()
        trace: list[TraceEntry] = []
        text = await self._agent(DIRECT_ANSWER, trace, query=query.text)
        return ModelingResult(
            text=text,
            mode=Mode.PURE_LLM,
            query=query,
            knowledge_used=None,
            trace=trace,
            model=self.model,
            started_at=started_at,
            finished_at=_now(),
        )

    async def run(
        self,
        mode: Mode,
        query: UserQuery,
        graph: KnowledgeGraph | None = None,
        k: int | None = None,
        log_callback: Callable[[str], None] | None = None,
    ) -> ModelingResult:
        if mode is Mode.MAG_RAG:
            if graph is None:
                raise PreconditionError("MAG-RAG mode needs a knowledge graph")
            return await self.run_mag_rag(query, graph, k, log_callback)
        if mode is Mode.PURE_MA:
            return await self.run_pure_ma(query)
        return await self.run_pure_llm(query)


# --- result files ---

_FRONT_MATTER_RE = re.compile(r"\A---\n(.*?)\n---\n", re.DOTALL)
_QUERY_SECTION_RE = re.compile(r"^## Query\n\n(.*?)(?=\n## |\Z)", re.DOTALL | re.MULTILINE)


def render_result(result: ModelingResult) -> str:
    """Markdown with front-matter, the modeling text, then knowledge and trace."""
    front = {
        "query_id": result.query.query_id,
        "mode": result.mode.value,
        "model": result.model,
        "k": "" if result.k is None else str(result.k),
        "started_at": result.started_at,
        "finished_at": result.finished_at,
    }
    if isinstance(result.knowledge_used, KnowledgeBundle):
        front["chains"] = str(len(result.knowledge_used.chains))

    parts = ["---"]
    parts.extend(f"{key}: {value}" for key, value in front.items())
    parts.extend(["---", "", result.text.strip(), "", APPENDIX_MARKER, ""])

    parts.extend(["## Query", "", result.query.text.strip(), ""])
    if result.description:
        parts.extend(["## Terminological Description", "", result.description, ""])
    if isinstance(result.knowledge_used, KnowledgeBundle):
        parts.extend(["## Retrieved Knowledge", ""])
        for chain in result.knowledge_used.chains:
            parts.append(f"- {chain.doc_id} (score {chain.score:.4f})")
        for notice in result.knowledge_used.notices:
            parts.append(f"- notice: {notice}")
        parts.append("")
    elif isinstance(result.knowledge_used, str):
        parts.extend(["## Generated Knowledge", "", "```text", result.knowledge_used, "```", ""])

    parts.extend(["## Trace", "", "```text"])
    parts.extend(entry.render() for entry in result.trace)
    parts.extend(["```", ""])
    return "\n".join(parts)


def write_result(result: ModelingResult, results_dir: str | Path) -> Path:
    """Write a new result file; existing files are never overwritten."""
    directory = Path(results_dir)
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%f")
    safe_id = re.sub(r"[^A-Za-z0-9._-]+", "_", result.query.query_id)
    path = directory / f"{stamp}-{safe_id}-{result.mode.cli_name}.md"
    try:
        directory.mkdir(parents=True, exist_ok=True)
        with open(path, "x", encoding="utf-8") as f:
            f.write(render_result(result))
    except OSError as e:
        raise StorageError(str(path), e.strerror or str(e)) from e
    return path


@dataclass(frozen=True)
class StoredResult:
    """A result file read back for evaluation."""

    path: str
    query_id: str
    mode: Mode
    model: str
    text: str
    metadata: dict[str, str] = field(default_factory=dict)
    question: str = ""

    @property
    def method_label(self) -> str:
        return f"{self.model}:{self.mode.code}" if self.model else self.mode.code


def read_result(path: str | Path) -> StoredResult:
    try:
        content = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise ResultFormatError(f"{path}: not valid UTF-8") from e
    except OSError as e:
        raise StorageError(str(path), e.strerror or str(e)) from e
    m = _FRONT_MATTER_RE.match(content)
    if not m:
        raise ResultFormatError(f"{path}: missing front-matter")
    metadata: dict[str, str] = {}
    for line in m.group(1).splitlines():
        key, sep, value = line.partition(":")
        if sep:
            metadata[key.strip()] = value.strip()
    try:
        mode = Mode(metadata["mode"])
        query_id = metadata["query_id"]
    except (KeyError, ValueError) as e:
        raise ResultFormatError(f"{path}: bad front-matter ({e})") from e

    body = content[m.end() :]
    marker = body.rfind(APPENDIX_MARKER)
    text = (body[:marker] if marker >= 0 else body).strip()
    if not text:
        raise ResultFormatError(f"{path}: empty modeling text")
    question = ""
    if marker >= 0:
        q = _QUERY_SECTION_RE.search(body[marker:])
        question = q.group(1).strip() if q else ""
    return StoredResult(
        str(path), query_id, mode, metadata.get("model", ""), text, metadata, question
    )


def read_results(results_dir: str | Path) -> list[StoredResult]:
    """Every result file in a directory, in file-name (timestamp) order."""
    directory = Path(results_dir)
    if not directory.is_dir():
        return []
    return [
        read_result(p)
        for p in sorted(directory.glob("*.md"))
        if not p.name.startswith("report-")
    ]
