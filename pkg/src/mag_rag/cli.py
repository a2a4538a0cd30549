"""Command-line interface: build, query, inspect, eval and config."""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

from dotenv import load_dotenv

from .config import Config, get_config_path, load_config
from .corpus import Layer, extract_corpus, load_corpus
from .errors import (
    EmbeddingFailure,
    MagRagError,
    PreconditionError,
    RaggedTable,
    StageError,
    StorageError,
)
from .evaluation import (
    DEFAULT_RUBRIC,
    ScoreCard,
    ScoreTable,
    export_scores,
    import_scores,
    judge,
    reference_scores,
    render_report,
)
from .graph import build_graph, graph_stats, load_graph, make_node_id, save_graph
from .pipeline import Mode, ModelingPipeline, UserQuery, read_results, write_result
from .prompts import EXTRACTION, JUDGE, load_prompts
from .providers import create_chat_provider, create_embedding_provider
from .retriever import chain_text, walk_sd_chain

logger = logging.getLogger(__name__)

DEFAULT_GRAPH_PATH = "graph.jsonl"
USAGE_ERROR = "E_USAGE"
INTERRUPTED = "E_INTERRUPTED"

ProgressCallback = Callable[[str], None] | None


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose failures follow the ``error[CODE]`` convention."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        print(f"error[{USAGE_ERROR}]: {message}", file=sys.stderr)
        raise SystemExit(2)


def configure_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else logging.ERROR if quiet else logging.WARNING
    logging.basicConfig(
        level=level,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    logging.getLogger("mag_rag").setLevel(level)


def _progress(args: argparse.Namespace) -> ProgressCallback:
    if args.quiet:
        return None
    return lambda msg: print(f"   {msg}", file=sys.stderr)


def _status(args: argparse.Namespace, msg: str) -> None:
    if not args.quiet:
        print(msg, file=sys.stderr)


def _one_line(text: str) -> str:
    return " ".join(str(text).split())


# --- build ---


async def run_build(args: argparse.Namespace, config: Config) -> int:
    corpus_dir = Path(args.corpus)
    if not corpus_dir.is_dir():
        print(f"error[{PreconditionError.code}]: corpus directory not found: {corpus_dir}", file=sys.stderr)
        print("hint: magrag build CORPUS_DIR [--out GRAPH] [--force]", file=sys.stderr)
        return 2

    out = Path(args.out)
    if out.exists() and not args.force:
        raise PreconditionError(f"{out} already exists; pass --force to rebuild it")

    progress = _progress(args)
    _status(args, f"📁 Loading corpus: {corpus_dir}")
    try:
        documents = load_corpus(corpus_dir, log_callback=progress)
    except MagRagError as e:
        raise StageError("load_corpus", e) from e

    chat = create_chat_provider(config.chat)
    prompts = load_prompts(config.prompt_dir)
    _status(args, f"🔍 Extracting knowledge from {len(documents)} documents...")
    extracted = await extract_corpus(
        documents,
        chat,
        prompts[EXTRACTION],
        concurrency=config.concurrency,
        log_callback=progress,
        temperature=config.temperature(EXTRACTION),
        max_output=config.max_output_tokens,
        max_document_chars=config.max_document_chars,
    )

    embed = create_embedding_provider(config.embedding)
    _status(args, f"🔮 Building graph (epsilon={config.epsilon})...")
    try:
        graph = await build_graph(
            extracted,
            embed,
            config.epsilon,
            dd_same_layer_only=config.dd_same_layer_only,
            concurrency=config.concurrency,
            log_callback=progress,
        )
    except EmbeddingFailure as e:
        raise StageError("build_graph", e, doc_id=e.node_id.split("#", 1)[0]) from e
    except MagRagError as e:
        raise StageError("build_graph", e) from e
    finally:
        await embed.aclose()

    save_graph(graph, out)
    _status(args, f"✓ Graph saved: {out}")
    print(graph_stats(graph).render())
    return 0


# --- query ---


def _question_from_args(args: argparse.Namespace) -> str:
    if args.question_file:
        if args.question_file == "-":
            return sys.stdin.read().strip()
        try:
            return Path(args.question_file).read_text(encoding="utf-8").strip()
        except OSError as e:
            raise PreconditionError(f"cannot read question file {args.question_file}: {e}") from e
    return " ".join(args.question).strip()


async def run_query(args: argparse.Namespace, config: Config) -> int:
    mode = Mode.parse(args.mode)
    text = _question_from_args(args)
    if not text:
        raise PreconditionError("no question given (pass it inline or with --question-file)")
    query = UserQuery(text, args.query_id or "")

    graph = None
    embed = None
    if mode is Mode.MAG_RAG:
        graph_path = Path(args.graph)
        if not graph_path.exists():
            raise PreconditionError(
                f"graph file not found: {graph_path}; run `magrag build` first"
            )
        graph = load_graph(graph_path)
        embed = create_embedding_provider(config.embedding)

    chat = create_chat_provider(config.chat)
    pipeline = ModelingPipeline(
        chat,
        embed,
        load_prompts(config.prompt_dir),
        k=config.k,
        budget_chars=config.knowledge_budget_chars,
        temperatures=config.temperatures,
        max_output=config.max_output_tokens,
        model=config.chat.model_name,
        dd_expansion=config.dd_expansion,
    )

    _status(args, f"🔮 Running {mode.cli_name} for {query.query_id}...")
    try:
        result = await pipeline.run(mode, query, graph, config.k, log_callback=_progress(args))
    finally:
        if embed is not None:
            await embed.aclose()
    path = write_result(result, config.results_dir)
    _status(args, f"✓ {len(result.trace)} stages, {len(result.text)} characters")
    print(path)
    return 0


# --- inspect ---


def run_inspect(args: argparse.Namespace, config: Config) -> int:
    if not Path(args.graph).exists():
        raise PreconditionError(f"graph file not found: {args.graph}; run `magrag build` first")
    graph = load_graph(args.graph)

    if args.node:
        node = graph.node(args.node)
        print(f"node:     {node.node_id}")
        print(f"document: {node.doc_id}")
        print(f"layer:    {node.layer.value} ({node.layer.label})")
        print(f"keywords: {node.keywords}")
        for edge in graph.edges_of(node.node_id):
            print(f"edge:     {edge.kind.value} {edge.other(node.node_id)} {edge.weight:.4f}")
        print()
        print(node.content)
        return 0

    if args.doc:
        contents = walk_sd_chain(graph, make_node_id(args.doc, Layer.PT))
        print(chain_text(contents))
        return 0

    print(graph_stats(graph).render())
    return 0


# --- eval ---


async def run_eval(args: argparse.Namespace, config: Config) -> int:
    if not (args.results or args.scores or args.reference):
        raise PreconditionError("nothing to evaluate; pass --results, --scores or --reference")

    imported: ScoreTable | None = None
    if args.scores:
        imported = import_scores(args.scores)
        _status(args, f"✓ Imported {len(imported.rows)} methods x {len(imported.columns)} questions")
    elif args.reference:
        imported = reference_scores()

    cards: list[ScoreCard] = []
    judged: ScoreTable | None = None
    if args.results:
        stored = read_results(args.results)
        if not stored and imported is None:
            raise PreconditionError(f"no result files in {args.results}")
        if stored:
            chat = create_chat_provider(config.chat)
            prompt = load_prompts(config.prompt_dir)[JUDGE]
            _status(args, f"🔍 Judging {len(stored)} results...")
            for result in stored:
                cards.append(
                    await judge(
                        result.text,
                        result.query_id,
                        result.method_label,
                        chat,
                        DEFAULT_RUBRIC,
                        prompt,
                        question=result.question,
                        temperature=config.temperature(JUDGE),
                    )
                )
            try:
                judged = ScoreTable.from_cards(cards)
            except RaggedTable as e:
                logger.warning("Judged scores do not form a full table: %s", e)

    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S")
    report_path = Path(args.out) if args.out else Path(config.results_dir) / f"report-{stamp}.md"
    scores_path = report_path.with_suffix(".csv")
    try:
        report_path.parent.mkdir(parents=True, exist_ok=True)
        report_path.write_text(render_report(imported, cards, judged), encoding="utf-8")
        if judged is not None:
            export_scores(judged, scores_path)
    except OSError as e:
        raise StorageError(str(report_path), e.strerror or str(e)) from e
    if judged is not None:
        _status(args, f"✓ Judged scores: {scores_path}")

    print(report_path)
    return 0


# --- config ---


def run_show_config(args: argparse.Namespace, config: Config) -> int:
    path = get_config_path(args.config)
    print(f"Config file: {path if path else '(built-in defaults)'}")
    print(json.dumps(config.to_dict(), indent=2))
    return 0


def create_parser() -> argparse.ArgumentParser:
    """Create argument parser for CLI."""
    parser = _Parser(
        prog="magrag",
        description="Build a layered knowledge graph and run graph-RAG optimization modeling",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  magrag build corpus/ --out graph.jsonl            # Extract, embed and link a corpus
  magrag query --mode mag-rag "place 8 sensors..."  # Model a problem with retrieved knowledge
  magrag query --mode pure-llm --question-file q.txt
  magrag inspect --doc beamforming                  # Print one document's chain
  magrag eval --results results/                    # Judge stored results
  magrag eval --reference                           # Statistics over the published table
        """,
    )
    parser.add_argument("--config", metavar="PATH", help="Config file (default: $MAGRAG_CONFIG or ~/.config/magrag/config.toml)")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="Suppress progress output")

    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    build = sub.add_parser("build", help="Build the knowledge graph from a corpus directory")
    build.add_argument("corpus", help="Directory of domain documents")
    build.add_argument("-o", "--out", default=DEFAULT_GRAPH_PATH, help=f"Graph file (default: {DEFAULT_GRAPH_PATH})")
    build.add_argument("--force", action="store_true", help="Overwrite an existing graph file")
    build.add_argument("--epsilon", type=float, help="DD similarity threshold (default: from config, 0.8)")

    query = sub.add_parser("query", help="Answer a modeling question")
    query.add_argument("question", nargs="*", help="Question text")
    query.add_argument("--question-file", metavar="PATH", help="Read the question from a file ('-' for stdin)")
    query.add_argument("--query-id", help="Identifier recorded in the result file")
    query.add_argument(
        "-m",
        "--mode",
        choices=[m.cli_name for m in Mode],
        default=Mode.MAG_RAG.cli_name,
        help="Pipeline mode (default: mag-rag)",
    )
    query.add_argument("-k", "--k", type=int, dest="k", help="Number of retrieved chains (default: 3)")
    query.add_argument("-g", "--graph", default=DEFAULT_GRAPH_PATH, help="Graph file for mag-rag mode")

    inspect = sub.add_parser("inspect", help="Show graph statistics, a node or a document chain")
    inspect.add_argument("-g", "--graph", default=DEFAULT_GRAPH_PATH, help="Graph file")
    target = inspect.add_mutually_exclusive_group()
    target.add_argument("--stats", action="store_true", help="Layer and edge counts (default)")
    target.add_argument("--node", metavar="NODE_ID", help="Show one node, e.g. beamforming#SM")
    target.add_argument("--doc", metavar="DOC_ID", help="Show a document's PT-SM-OF-OA chain")

    ev = sub.add_parser("eval", help="Judge results and/or analyse score tables")
    ev.add_argument("--results", metavar="DIR", help="Directory of result files to judge")
    source = ev.add_mutually_exclusive_group()
    source.add_argument("--scores", metavar="CSV", help="Import a method x question score table")
    source.add_argument("--reference", action="store_true", help="Use the published score table")
    ev.add_argument("--out", metavar="PATH", help="Report path (default: <results_dir>/report-<time>.md)")

    sub.add_parser("config", help="Print the effective configuration")
    return parser


_COMMANDS = {
    "build": run_build,
    "query": run_query,
    "inspect": run_inspect,
    "eval": run_eval,
    "config": run_show_config,
}


def run_cli(argv: list[str] | None = None) -> int:
    """Run the CLI application and return its exit status."""
    parser = create_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2

    configure_logging(args.verbose, args.quiet)
    # API keys and ${VAR} references may come from .env
    load_dotenv()

    overrides = {
        "epsilon": getattr(args, "epsilon", None),
        "k": getattr(args, "k", None),
    }
    try:
        config = load_config(get_config_path(args.config), overrides)
        handler = _COMMANDS[args.command]
        outcome = handler(args, config)
        if asyncio.iscoroutine(outcome):
            outcome = asyncio.run(outcome)
        return outcome
    except KeyboardInterrupt:
        print(f"error[{INTERRUPTED}]: interrupted", file=sys.stderr)
        return 130
    except MagRagError as e:
        logger.debug("command failed", exc_info=True)
        print(f"error[{e.code}]: {_one_line(e)}", file=sys.stderr)
        return 1
    except OSError as e:
        logger.debug("command failed", exc_info=True)
        print(f"error[{StorageError.code}]: {e}", file=sys.stderr)
        return 1
