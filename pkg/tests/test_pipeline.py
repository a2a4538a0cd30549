"""Tests for the three pipeline modes and result files."""

import asyncio

import pytest

from mag_rag.errors import PreconditionError, ResultFormatError, StageError, StorageError
from mag_rag.graph import KnowledgeGraph, build_graph
from mag_rag.pipeline import (
    APPENDIX_MARKER,
    Mode,
    ModelingPipeline,
    ModelingResult,
    TraceEntry,
    UserQuery,
    read_result,
    read_results,
    render_result,
    write_result,
)
from mag_rag.prompts import (
    DIRECT_ANSWER,
    KNOWLEDGE_GENERATION,
    MODELING,
    TERMINOLOGY,
    load_prompts,
)
from mag_rag.providers import HashEmbeddingProvider, ScriptedChatProvider
from mag_rag.retriever import KnowledgeBundle

DESCRIPTION = "DOA estimation with a uniform linear array"
QUERY = UserQuery("Where are the three people talking in this room?", "q1")

SCRIPT = {
    "terminology:*": DESCRIPTION,
    "knowledge_generation:*": "Generated background knowledge.",
    "modeling:*": "## System Model\n\nscripted modeling answer",
    "direct_answer:*": "direct scripted answer",
}


@pytest.fixture
def graph(knowledge_factory):
    knowledge = [knowledge_factory("d1"), knowledge_factory("d2")]
    return asyncio.run(build_graph(knowledge, HashEmbeddingProvider(dimension=8), 0.8))


def make_pipeline(script=None, **kwargs):
    chat = ScriptedChatProvider(script or SCRIPT)
    embed = HashEmbeddingProvider(dimension=8)
    return ModelingPipeline(chat, embed, model="scripted", **kwargs), chat


def stages(result):
    return [entry.stage for entry in result.trace]


def test_terminologize_passes_description_through():
    pipeline, chat = make_pipeline()
    trace = []
    description = asyncio.run(pipeline.terminologize(QUERY, trace))

    assert description.text == DESCRIPTION
    assert description.source_query == "q1"
    assert [t.stage for t in trace] == ["terminology"]
    assert QUERY.text in chat.calls[0].user_content


def test_empty_query_is_rejected():
    with pytest.raises(PreconditionError):
        UserQuery("   ")


def test_query_id_is_derived_from_text():
    a = UserQuery("same text")
    assert a.query_id.startswith("q-") and len(a.query_id) == 10
    assert UserQuery("same text").query_id == a.query_id


def test_mag_rag_mode(graph):
    pipeline, chat = make_pipeline()
    result = asyncio.run(pipeline.run_mag_rag(QUERY, graph, k=3))

    assert result.text == SCRIPT["modeling:*"]
    assert result.mode is Mode.MAG_RAG
    assert stages(result) == ["terminology", "retrieval", "modeling"]
    assert isinstance(result.knowledge_used, KnowledgeBundle)
    assert set(result.knowledge_used.doc_ids) <= set(graph.doc_ids)
    assert len(result.knowledge_used.chains) == 2
    assert result.description == DESCRIPTION
    assert result.method_label == "scripted:G"


def test_modeling_agent_sees_description_then_knowledge(graph):
    pipeline, chat = make_pipeline()
    asyncio.run(pipeline.run_mag_rag(QUERY, graph))

    modeling = chat.calls[-1]
    assert modeling.prompt_name == MODELING
    content = modeling.user_content
    assert content.index(DESCRIPTION) < content.index("### Reference 1") < content.index("## Task")
    assert QUERY.text not in content


def test_prompt_isolation(graph):
    """Each agent call carries exactly its own system prompt"""
    prompts = load_prompts()
    pipeline, chat = make_pipeline()
    asyncio.run(pipeline.run_mag_rag(QUERY, graph))
    asyncio.run(pipeline.run_pure_ma(QUERY))
    asyncio.run(pipeline.run_pure_llm(QUERY))

    names = [c.prompt_name for c in chat.calls]
    assert names == [
        TERMINOLOGY,
        MODELING,
        TERMINOLOGY,
        KNOWLEDGE_GENERATION,
        MODELING,
        DIRECT_ANSWER,
    ]
    assert chat.system_prompts == [prompts[name].system for name in names]


def test_pure_ma_mode():
    pipeline, _ = make_pipeline()
    pipeline.embed = None
    result = asyncio.run(pipeline.run_pure_ma(QUERY))

    assert stages(result) == ["terminology", "knowledge_generation", "modeling"]
    assert result.knowledge_used == "Generated background knowledge."
    assert result.mode is Mode.PURE_MA


def test_pure_llm_mode():
    pipeline, chat = make_pipeline()
    result = asyncio.run(pipeline.run_pure_llm(QUERY))

    assert result.text == "direct scripted answer"
    assert result.mode is Mode.PURE_LLM
    assert result.knowledge_used is None
    assert len(result.trace) == 1
    assert len(chat.calls) == 1


def test_modes_are_isolated(graph):
    pipeline, _ = make_pipeline()
    rag = asyncio.run(pipeline.run(Mode.MAG_RAG, QUERY, graph))
    direct = asyncio.run(pipeline.run(Mode.PURE_LLM, QUERY))
    assert rag.text != direct.text


def test_runs_are_deterministic(graph):
    pipeline, _ = make_pipeline()
    first = asyncio.run(pipeline.run_mag_rag(QUERY, graph))
    second = asyncio.run(pipeline.run_mag_rag(QUERY, graph))

    assert first.text == second.text
    assert stages(first) == stages(second)
    assert first.knowledge_used == second.knowledge_used


def test_trace_lengths_by_mode(graph):
    pipeline, _ = make_pipeline()
    lengths = {
        mode: len(asyncio.run(pipeline.run(mode, QUERY, graph)).trace) for mode in Mode
    }
    assert lengths == {Mode.MAG_RAG: 3, Mode.PURE_MA: 3, Mode.PURE_LLM: 1}


def test_stage_failure_keeps_partial_trace(graph):
    script = {k: v for k, v in SCRIPT.items() if k != "modeling:*"}
    pipeline, _ = make_pipeline(script)

    with pytest.raises(StageError) as exc:
        asyncio.run(pipeline.run_mag_rag(QUERY, graph))

    assert exc.value.stage == "modeling"
    assert [t.stage for t in exc.value.trace] == ["terminology", "retrieval"]


def test_retrieval_failure_is_reported_as_stage():
    pipeline, _ = make_pipeline()
    empty = KnowledgeGraph([], [], epsilon=0.8, embedding_dimension=8)
    with pytest.raises(StageError) as exc:
        asyncio.run(pipeline.run_mag_rag(QUERY, empty))
    assert exc.value.stage == "retrieval"
    assert len(exc.value.trace) == 1


def test_explicit_k_zero_is_rejected_not_replaced(graph):
    """k=0 reaches retrieval instead of falling back to the pipeline default"""
    pipeline, _ = make_pipeline()
    with pytest.raises(StageError) as exc:
        asyncio.run(pipeline.run_mag_rag(QUERY, graph, k=0))
    assert exc.value.stage == "retrieval"
    assert isinstance(exc.value.cause, PreconditionError)
    assert exc.value.code == "E_PRECONDITION"

    result = asyncio.run(pipeline.run_mag_rag(QUERY, graph))
    assert result.k == pipeline.k


def test_run_needs_graph_for_mag_rag():
    pipeline, _ = make_pipeline()
    with pytest.raises(PreconditionError):
        asyncio.run(pipeline.run(Mode.MAG_RAG, QUERY, None))


def test_mode_codes():
    assert [m.code for m in Mode] == ["G", "T", "D"]
    assert Mode.from_code("T") is Mode.PURE_MA
    assert Mode.parse("pure-llm") is Mode.PURE_LLM
    assert Mode.MAG_RAG.cli_name == "mag-rag"
    with pytest.raises(PreconditionError):
        Mode.parse("hybrid")


def test_pure_llm_results_carry_no_knowledge():
    with pytest.raises(PreconditionError):
        ModelingResult("x", Mode.PURE_LLM, QUERY, "knowledge", [TraceEntry("d", "d", 0.0, 1)])
    with pytest.raises(PreconditionError):
        ModelingResult("x", Mode.PURE_MA, QUERY, "knowledge", [])


def test_result_file_round_trip(tmp_path, graph):
    pipeline, _ = make_pipeline()
    result = asyncio.run(pipeline.run_mag_rag(QUERY, graph, k=2))

    path = write_result(result, tmp_path / "results")
    stored = read_result(path)

    assert path.name.endswith("-q1-mag-rag.md")
    assert stored.text == result.text.strip()
    assert stored.mode is Mode.MAG_RAG
    assert stored.query_id == "q1"
    assert stored.method_label == "scripted:G"
    assert stored.metadata["k"] == "2"
    assert stored.metadata["chains"] == "2"
    assert stored.question == QUERY.text

    rendered = path.read_text(encoding="utf-8")
    assert rendered.startswith("---\nquery_id: q1\n")
    assert APPENDIX_MARKER in rendered
    assert "## Trace" in rendered


def test_result_files_are_never_overwritten(tmp_path):
    pipeline, _ = make_pipeline()
    result = asyncio.run(pipeline.run_pure_llm(QUERY))
    first = write_result(result, tmp_path)
    second = write_result(result, tmp_path)
    assert first != second
    assert len(read_results(tmp_path)) == 2


def test_render_result_lists_generated_knowledge():
    pipeline, _ = make_pipeline()
    rendered = render_result(asyncio.run(pipeline.run_pure_ma(QUERY)))
    assert "## Generated Knowledge" in rendered
    assert "mode: PURE_MA" in rendered


def test_read_results_skips_reports_and_rejects_garbage(tmp_path):
    (tmp_path / "report-20260101T000000.md").write_text("# report", encoding="utf-8")
    assert read_results(tmp_path) == []
    assert read_results(tmp_path / "missing") == []

    bad = tmp_path / "bad.md"
    bad.write_text("no front matter", encoding="utf-8")
    with pytest.raises(ResultFormatError):
        read_result(bad)


def test_read_result_recovers_multiline_question(tmp_path):
    pipeline, _ = make_pipeline()
    query = UserQuery("Place 8 sensors.\n\nMinimize the CRB of 3 sources.", "q9")
    path = write_result(asyncio.run(pipeline.run_pure_ma(query)), tmp_path)

    stored = read_result(path)
    assert stored.question == query.text
    assert "## Generated Knowledge" not in stored.question


def test_result_file_storage_errors(tmp_path):
    pipeline, _ = make_pipeline()
    result = asyncio.run(pipeline.run_pure_llm(QUERY))
    blocker = tmp_path / "blocker"
    blocker.write_text("not a directory", encoding="utf-8")

    with pytest.raises(StorageError):
        write_result(result, blocker)
    with pytest.raises(StorageError):
        read_result(tmp_path / "missing.md")
