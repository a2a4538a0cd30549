"""PT-layer retrieval and knowledge-bundle assembly."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

from .corpus import LAYER_ORDER, Layer
from .errors import BrokenChain, EmptyGraph, PreconditionError, WrongLayer
from .graph import GraphNode, KnowledgeGraph, cosine_similarity
from .providers.base import EmbeddingProvider, EmbeddingVector

logger = logging.getLogger(__name__)

DEFAULT_K = 3
DEFAULT_BUDGET_CHARS = 24000


@dataclass(frozen=True)
class RelevanceEntry:
    node_id: str
    doc_id: str
    score: float


@dataclass(frozen=True)
class BundleChain:
    """One retrieved document chain."""

    doc_id: str
    node_id: str
    score: float
    text: str


@dataclass(frozen=True)
class KnowledgeBundle:
    """The prior knowledge K handed to the Modeling Agent."""

    chains: tuple[BundleChain, ...]
    notices: tuple[str, ...] = field(default=())

    @property
    def total_characters(self) -> int:
        return sum(len(c.text) for c in self.chains)

    @property
    def doc_ids(self) -> list[str]:
        return [c.doc_id for c in self.chains]

    def render(self) -> str:
        """Format for the modeling prompt: one labeled block per chain."""
        blocks = []
        for rank, chain in enumerate(self.chains, start=1):
            blocks.append(
                f"### Reference {rank}: {chain.doc_id} (relevance {chain.score:.3f})\n\n{chain.text}"
            )
        return "\n\n".join(blocks)


def layer_separator(layer: Layer) -> str:
    return f"--- {layer.value}: {layer.label} ---"


def chain_text(contents: list[str]) -> str:
    """Concatenate chain contents (PT, SM, OF, OA order) with labeled separators."""
    return "\n\n".join(
        f"{layer_separator(layer)}\n{content}" for layer, content in zip(LAYER_ORDER, contents)
    )


def walk_sd_chain(graph: KnowledgeGraph, pt_node: str) -> list[str]:
    """
    Follow SD edges PT -> SM -> OF -> OA from a PT node.

    Returns:
        The four node contents in canonical layer order.
    """
    node = graph.node(pt_node)
    if node.layer is not Layer.PT:
        raise WrongLayer(f"{pt_node} is on layer {node.layer.value}, expected PT")

    chain: list[GraphNode] = [node]
    for next_layer in LAYER_ORDER[1:]:
        current = chain[-1]
        step = [
            n
            for n in graph.sd_neighbors(current.node_id)
            if n.layer is next_layer and n.doc_id == node.doc_id
        ]
        if len(step) != 1:
            raise BrokenChain(
                f"document {node.doc_id}: no SD edge from {current.layer.value} to {next_layer.value}"
            )
        chain.append(step[0])
    return [n.content for n in chain]


def score_node(query_vector: EmbeddingVector, node: GraphNode) -> float:
    if node.layer is not Layer.PT:
        raise WrongLayer(f"{node.node_id} is on layer {node.layer.value}, expected PT")
    return cosine_similarity(query_vector, node.keyword_embedding)


async def query_relevance(description: str, node: GraphNode, embed: EmbeddingProvider) -> float:
    """Cosine similarity between the query embedding and a PT node's keyword embedding."""
    if node.layer is not Layer.PT:
        raise WrongLayer(f"{node.node_id} is on layer {node.layer.value}, expected PT")
    if not description or not description.strip():
        raise PreconditionError("description must be non-empty")
    return score_node(await embed.embed(description), node)


def rank_pt_nodes(graph: KnowledgeGraph, query_vector: EmbeddingVector) -> list[RelevanceEntry]:
    """Score every PT node; highest first, ties broken by doc_id."""
    entries = [
        RelevanceEntry(n.node_id, n.doc_id, score_node(query_vector, n))
        for n in graph.nodes_on(Layer.PT)
    ]
    entries.sort(key=lambda e: (-e.score, e.doc_id))
    return entries


async def retrieve_topk(
    graph: KnowledgeGraph,
    description: str,
    k: int = DEFAULT_K,
    embed: EmbeddingProvider | None = None,
    *,
    budget_chars: int = DEFAULT_BUDGET_CHARS,
    dd_expansion: bool = False,
    log_callback: Callable[[str], None] | None = None,
) -> KnowledgeBundle:
    """
    Select the top-k PT nodes for a description and concatenate their chains.

    Args:
        graph: Knowledge graph to search
        description: Terminological problem description
        k: Number of chains to return (fewer if the graph has fewer documents)
        embed: Provider used to embed the description
        budget_chars: Character cap on the bundle; lowest-ranked chains are
            dropped first and the top chain is always kept
        dd_expansion: Reserved; DD edges are not used at query time
        log_callback: Optional logging callback
    """

    def log(msg: str) -> None:
        if log_callback:
            log_callback(msg)

    if embed is None:
        raise PreconditionError("retrieve_topk needs an embedding provider")
    if k < 1:
        raise PreconditionError(f"k must be >= 1, got {k}")
    if not description or not description.strip():
        raise PreconditionError("description must be non-empty")
    if not graph.nodes_on(Layer.PT):
        raise EmptyGraph("graph has no PT nodes")
    if dd_expansion:
        logger.warning("dd_expansion is reserved and has no effect")

    query_vector = await embed.embed(description)
    ranked = rank_pt_nodes(graph, query_vector)
    selected = ranked[:k]
    log(f"Scored {len(ranked)} PT nodes, selected {len(selected)}.")

    chains = [
        BundleChain(e.doc_id, e.node_id, e.score, chain_text(walk_sd_chain(graph, e.node_id)))
        for e in selected
    ]

    notices: list[str] = []
    total = sum(len(c.text) for c in chains)
    while len(chains) > 1 and total > budget_chars:
        dropped = chains.pop()
        total -= len(dropped.text)
        notice = (
            f"dropped chain {dropped.doc_id} (score {dropped.score:.3f}) to fit"
            f" the {budget_chars}-character knowledge budget"
        )
        logger.warning(notice)
        notices.append(notice)
    if total > budget_chars:
        notice = f"top chain {chains[0].doc_id} alone exceeds the {budget_chars}-character budget"
        logger.warning(notice)
        notices.append(notice)

    return KnowledgeBundle(tuple(chains), tuple(notices))
