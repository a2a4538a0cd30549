"""Four-layer knowledge graph: construction, similarity and persistence."""

from __future__ import annotations

import asyncio
import json
import logging
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .corpus import LAYER_ORDER, ExtractedKnowledge, Layer
from .errors import (
    CorruptFile,
    DimensionMismatch,
    DuplicateDocument,
    EmbeddingFailure,
    InvalidEmbedding,
    PreconditionError,
    SchemaVersionMismatch,
    StorageError,
    UnknownNode,
    ZeroVector,
)
from .providers.base import EmbeddingProvider, EmbeddingVector

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SD_WEIGHT = 1.0
HISTOGRAM_BINS = 10

# Adjacent layer pairs of the PT-SM-OF-OA chain
SD_CHAIN = tuple(zip(LAYER_ORDER, LAYER_ORDER[1:]))


class EdgeKind(str, Enum):
    SD = "SD"  # same document, chain link
    DD = "DD"  # different documents, similarity link


def make_node_id(doc_id: str, layer: Layer) -> str:
    return f"{doc_id}#{layer.value}"


@dataclass(frozen=True)
class GraphNode:
    node_id: str
    doc_id: str
    layer: Layer
    content: str
    keywords: str
    keyword_embedding: EmbeddingVector

    def __post_init__(self) -> None:
        if not self.content.strip():
            raise PreconditionError(f"node {self.node_id} has empty content")
        if self.node_id != make_node_id(self.doc_id, self.layer):
            raise PreconditionError(
                f"node id {self.node_id!r} does not match ({self.doc_id}, {self.layer.value})"
            )


@dataclass(frozen=True)
class GraphEdge:
    """Unoriented edge; endpoints are stored in sorted order."""

    kind: EdgeKind
    endpoint_a: str
    endpoint_b: str
    weight: float

    @classmethod
    def between(cls, kind: EdgeKind, a: str, b: str, weight: float) -> "GraphEdge":
        if a == b:
            raise PreconditionError(f"self-edge on {a}")
        lo, hi = sorted((a, b))
        return cls(kind, lo, hi, weight)

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.kind.value, self.endpoint_a, self.endpoint_b)

    def other(self, node_id: str) -> str:
        return self.endpoint_b if node_id == self.endpoint_a else self.endpoint_a


class KnowledgeGraph:
    """Immutable G = (V, E) with per-node and per-document indexes."""

    def __init__(
        self,
        nodes: Iterable[GraphNode],
        edges: Iterable[GraphEdge],
        epsilon: float,
        embedding_dimension: int,
        schema_version: int = SCHEMA_VERSION,
        dd_same_layer_only: bool = False,
    ):
        self._nodes = tuple(sorted(nodes, key=lambda n: n.node_id))
        self._edges = tuple(sorted(edges, key=lambda e: e.key))
        self.epsilon = epsilon
        self.embedding_dimension = embedding_dimension
        self.schema_version = schema_version
        self.dd_same_layer_only = dd_same_layer_only

        self._by_id: dict[str, GraphNode] = {}
        for node in self._nodes:
            if node.node_id in self._by_id:
                raise DuplicateDocument(f"duplicate node {node.node_id}")
            if node.keyword_embedding.dimension != embedding_dimension:
                raise DimensionMismatch(
                    f"node {node.node_id} has dimension {node.keyword_embedding.dimension},"
                    f" graph expects {embedding_dimension}"
                )
            self._by_id[node.node_id] = node

        self._adjacency: dict[str, list[GraphEdge]] = {n: [] for n in self._by_id}
        seen: set[tuple[str, str, str]] = set()
        for edge in self._edges:
            if edge.key in seen:
                raise PreconditionError(f"duplicate edge {edge.key}")
            seen.add(edge.key)
            for end in (edge.endpoint_a, edge.endpoint_b):
                if end not in self._adjacency:
                    raise UnknownNode(f"edge references unknown node {end}")
            violation = edge_violation(edge, self._by_id, epsilon, dd_same_layer_only)
            if violation:
                raise PreconditionError(f"edge {edge.key}: {violation}")
            self._adjacency[edge.endpoint_a].append(edge)
            self._adjacency[edge.endpoint_b].append(edge)

    @property
    def nodes(self) -> tuple[GraphNode, ...]:
        return self._nodes

    @property
    def edges(self) -> tuple[GraphEdge, ...]:
        return self._edges

    @property
    def doc_ids(self) -> list[str]:
        return sorted({n.doc_id for n in self._nodes})

    def node(self, node_id: str) -> GraphNode:
        try:
            return self._by_id[node_id]
        except KeyError:
            raise UnknownNode(f"no node with id {node_id!r}") from None

    def has_node(self, node_id: str) -> bool:
        return node_id in self._by_id

    def nodes_on(self, layer: Layer) -> list[GraphNode]:
        return [n for n in self._nodes if n.layer is layer]

    def nodes_of(self, doc_id: str) -> list[GraphNode]:
        return [n for n in self._nodes if n.doc_id == doc_id]

    def edges_of(self, node_id: str, kind: EdgeKind | None = None) -> list[GraphEdge]:
        edges = self._adjacency.get(node_id, [])
        return [e for e in edges if kind is None or e.kind is kind]

    def sd_neighbors(self, node_id: str) -> list[GraphNode]:
        return [self.node(e.other(node_id)) for e in self.edges_of(node_id, EdgeKind.SD)]

    def __len__(self) -> int:
        return len(self._nodes)


def edge_violation(
    edge: GraphEdge,
    by_id: dict[str, GraphNode],
    epsilon: float,
    same_layer_only: bool = False,
) -> str | None:
    """Why ``edge`` cannot belong to a graph built with these settings, or None.

    Both endpoints must already be in ``by_id``.
    """
    if edge.endpoint_a >= edge.endpoint_b:
        return "endpoints are not in sorted order"
    a, b = by_id[edge.endpoint_a], by_id[edge.endpoint_b]
    if edge.kind is EdgeKind.SD:
        if a.doc_id != b.doc_id:
            return "SD edge joins different documents"
        if (a.layer, b.layer) not in SD_CHAIN and (b.layer, a.layer) not in SD_CHAIN:
            return f"SD edge joins non-adjacent layers {a.layer.value} and {b.layer.value}"
        if edge.weight != SD_WEIGHT:
            return f"SD edge weight {edge.weight!r} is not {SD_WEIGHT}"
        return None
    if a.doc_id == b.doc_id:
        return "DD edge joins two nodes of one document"
    if not epsilon < edge.weight <= 1.0:
        return f"DD edge weight {edge.weight!r} is outside ({epsilon}, 1]"
    if same_layer_only and a.layer is not b.layer:
        return "DD edge crosses layers in a same-layer graph"
    return None


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine of the angle between two non-zero vectors of equal dimension."""
    if a.dimension != b.dimension:
        raise DimensionMismatch(f"cannot compare dimension {a.dimension} with {b.dimension}")
    va, vb = a.as_array(), b.as_array()
    norm_a = float(np.linalg.norm(va))
    norm_b = float(np.linalg.norm(vb))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ZeroVector("cosine similarity is undefined for a zero vector")
    value = float(np.dot(va, vb)) / (norm_a * norm_b)
    return max(-1.0, min(1.0, value))


def dd_edges(
    nodes: Sequence[GraphNode], epsilon: float, same_layer_only: bool = False
) -> list[GraphEdge]:
    """All cross-document pairs whose keyword similarity is strictly above epsilon.

    Similarities come from one matrix product over the unit-normalized
    keyword embeddings.
    """
    if len(nodes) < 2:
        return []
    dimensions = sorted({n.keyword_embedding.dimension for n in nodes})
    if len(dimensions) > 1:
        raise DimensionMismatch(f"cannot compare embeddings of dimensions {dimensions}")

    matrix = np.vstack([n.keyword_embedding.as_array() for n in nodes])
    norms = np.linalg.norm(matrix, axis=1)
    if not np.all(norms > 0.0):
        zero = nodes[int(np.argmin(norms))].node_id
        raise ZeroVector(f"node {zero} has a zero keyword embedding")
    unit = matrix / norms[:, np.newaxis]
    similarity = np.clip(unit @ unit.T, -1.0, 1.0)

    docs = np.array([n.doc_id for n in nodes])
    mask = (docs[:, np.newaxis] != docs[np.newaxis, :]) & (similarity > epsilon)
    if same_layer_only:
        layers = np.array([n.layer.value for n in nodes])
        mask &= layers[:, np.newaxis] == layers[np.newaxis, :]

    rows, cols = np.nonzero(np.triu(mask, k=1))
    return [
        GraphEdge.between(EdgeKind.DD, nodes[i].node_id, nodes[j].node_id, float(similarity[i, j]))
        for i, j in zip(rows.tolist(), cols.tolist())
    ]


def sd_edges(doc_id: str) -> list[GraphEdge]:
    return [
        GraphEdge.between(EdgeKind.SD, make_node_id(doc_id, x), make_node_id(doc_id, y), SD_WEIGHT)
        for x, y in SD_CHAIN
    ]


async def build_graph(
    extracted: Sequence[ExtractedKnowledge],
    embed: EmbeddingProvider,
    epsilon: float = 0.8,
    *,
    dd_same_layer_only: bool = False,
    concurrency: int = 8,
    log_callback: Callable[[str], None] | None = None,
) -> KnowledgeGraph:
    """
    Build the layered graph from extracted knowledge.

    Args:
        extracted: One entry per document; doc_ids must be distinct
        embed: Provider for keyword embeddings (called concurrently per node)
        epsilon: DD threshold; pairs need similarity strictly above it
        dd_same_layer_only: Restrict DD edges to nodes on the same layer
        concurrency: Maximum number of embedding requests in flight
        log_callback: Optional callback for progress lines
    """

    def log(msg: str) -> None:
        if log_callback:
            log_callback(msg)

    if not extracted:
        raise PreconditionError("build_graph needs at least one document")
    if not 0.0 <= epsilon < 1.0:
        raise PreconditionError(f"epsilon must be within [0, 1), got {epsilon}")
    if concurrency < 1:
        raise PreconditionError(f"concurrency must be at least 1, got {concurrency}")
    counts = Counter(k.doc_id for k in extracted)
    duplicates = sorted(d for d, c in counts.items() if c > 1)
    if duplicates:
        raise DuplicateDocument(f"duplicate doc_ids: {', '.join(duplicates)}")

    specs = [(k, layer) for k in extracted for layer in LAYER_ORDER]
    log(f"Embedding keywords for {len(specs)} nodes...")

    semaphore = asyncio.Semaphore(concurrency)

    async def embed_node(knowledge: ExtractedKnowledge, layer: Layer) -> EmbeddingVector:
        async with semaphore:
            try:
                return await embed.embed(knowledge.layer_keywords(layer))
            except Exception as e:
                raise EmbeddingFailure(make_node_id(knowledge.doc_id, layer), e) from e

    vectors = await asyncio.gather(*(embed_node(k, layer) for k, layer in specs))

    dimension = vectors[0].dimension
    nodes: list[GraphNode] = []
    for (knowledge, layer), vector in zip(specs, vectors):
        node_id = make_node_id(knowledge.doc_id, layer)
        if vector.dimension != dimension:
            raise DimensionMismatch(
                f"node {node_id} embedding has dimension {vector.dimension}, expected {dimension}"
            )
        nodes.append(
            GraphNode(
                node_id=node_id,
                doc_id=knowledge.doc_id,
                layer=layer,
                content=knowledge.layer_content(layer),
                keywords=knowledge.layer_keywords(layer),
                keyword_embedding=vector,
            )
        )

    edges = [e for k in extracted for e in sd_edges(k.doc_id)]
    similar = dd_edges(nodes, epsilon, dd_same_layer_only)
    edges.extend(similar)
    log(f"Graph built: {len(nodes)} nodes, {len(edges) - len(similar)} SD edges, {len(similar)} DD edges")

    return KnowledgeGraph(
        nodes,
        edges,
        epsilon=epsilon,
        embedding_dimension=dimension,
        dd_same_layer_only=dd_same_layer_only,
    )


# --- persistence ---


def _node_record(node: GraphNode) -> dict[str, Any]:
    return {
        "record": "node",
        "node_id": node.node_id,
        "doc_id": node.doc_id,
        "layer": node.layer.value,
        "content": node.content,
        "keywords": node.keywords,
        "embedding": list(node.keyword_embedding.values),
    }


def _edge_record(edge: GraphEdge) -> dict[str, Any]:
    return {
        "record": "edge",
        "kind": edge.kind.value,
        "a": edge.endpoint_a,
        "b": edge.endpoint_b,
        "weight": edge.weight,
    }


def save_graph(graph: KnowledgeGraph, out: str | Path) -> None:
    """
    Write the graph as JSON lines: a header, then nodes, then edges.

    Floats are written with ``repr`` precision, so a reload is exact.
    """
    header = {
        "record": "header",
        "schema_version": graph.schema_version,
        "epsilon": graph.epsilon,
        "embedding_dimension": graph.embedding_dimension,
        "dd_same_layer_only": graph.dd_same_layer_only,
        "node_count": len(graph.nodes),
        "edge_count": len(graph.edges),
    }
    out_path = Path(out)
    try:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        with open(out_path, "w", encoding="utf-8", newline="\n") as f:
            for record in (header, *map(_node_record, graph.nodes), *map(_edge_record, graph.edges)):
                f.write(json.dumps(record, ensure_ascii=False, allow_nan=False))
                f.write("\n")
    except OSError as e:
        raise StorageError(str(out_path), e.strerror or str(e)) from e


def load_graph(path: str | Path) -> KnowledgeGraph:
    """Read a graph written by :func:`save_graph`.

    Every record is checked against the header settings, so a hand-edited
    file fails with the line of the first bad record.
    """
    src = str(path)
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise StorageError(src, e.strerror or str(e)) from e
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise CorruptFile(src, raw[: e.start].count(b"\n") + 1, "not valid UTF-8") from e
    # Content may hold U+2028 and friends, which str.splitlines would break on.
    lines = text.split("\n")
    if lines[-1] == "":
        lines.pop()

    def parse(lineno: int, line: str) -> dict[str, Any]:
        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            raise CorruptFile(src, lineno, f"invalid JSON ({e.msg})") from e
        if not isinstance(record, dict):
            raise CorruptFile(src, lineno, "record is not an object")
        return record

    if not lines:
        raise CorruptFile(src, 1, "file is empty")

    header = parse(1, lines[0])
    if header.get("record") != "header":
        raise CorruptFile(src, 1, "first record must be the header")
    if header.get("schema_version") != SCHEMA_VERSION:
        raise SchemaVersionMismatch(
            f"{src}: schema_version {header.get('schema_version')!r}, expected {SCHEMA_VERSION}"
        )
    try:
        epsilon = float(header["epsilon"])
        dimension = int(header["embedding_dimension"])
        same_layer_only = bool(header.get("dd_same_layer_only", False))
    except (KeyError, ValueError, TypeError) as e:
        raise CorruptFile(src, 1, f"bad header: {e}") from e

    by_id: dict[str, GraphNode] = {}
    edges: list[tuple[int, GraphEdge]] = []
    lineno = 1
    try:
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            record = parse(lineno, line)
            kind = record.get("record")
            if kind == "node":
                node = GraphNode(
                    node_id=record["node_id"],
                    doc_id=record["doc_id"],
                    layer=Layer(record["layer"]),
                    content=record["content"],
                    keywords=record["keywords"],
                    keyword_embedding=EmbeddingVector.of(record["embedding"]),
                )
                if node.node_id in by_id:
                    raise CorruptFile(src, lineno, f"duplicate node {node.node_id}")
                if node.keyword_embedding.dimension != dimension:
                    raise CorruptFile(
                        src,
                        lineno,
                        f"node {node.node_id} has dimension {node.keyword_embedding.dimension},"
                        f" header says {dimension}",
                    )
                by_id[node.node_id] = node
            elif kind == "edge":
                edge = GraphEdge.between(
                    EdgeKind(record["kind"]), record["a"], record["b"], float(record["weight"])
                )
                edges.append((lineno, edge))
            else:
                raise CorruptFile(src, lineno, f"unknown record type {kind!r}")
    except (KeyError, ValueError, TypeError, PreconditionError, InvalidEmbedding) as e:
        raise CorruptFile(src, lineno, f"bad record: {e}") from e

    expected = (header.get("node_count"), header.get("edge_count"))
    if expected != (len(by_id), len(edges)):
        raise CorruptFile(
            src,
            len(lines) + 1,
            f"expected {expected[0]} nodes and {expected[1]} edges,"
            f" found {len(by_id)} and {len(edges)} (truncated?)",
        )

    seen: set[tuple[str, str, str]] = set()
    sd_per_doc: Counter[str] = Counter()
    for lineno, edge in edges:
        if edge.key in seen:
            raise CorruptFile(src, lineno, f"duplicate edge {edge.key}")
        seen.add(edge.key)
        for end in (edge.endpoint_a, edge.endpoint_b):
            if end not in by_id:
                raise CorruptFile(src, lineno, f"edge references unknown node {end}")
        violation = edge_violation(edge, by_id, epsilon, same_layer_only)
        if violation:
            raise CorruptFile(src, lineno, violation)
        if edge.kind is EdgeKind.SD:
            sd_per_doc[by_id[edge.endpoint_a].doc_id] += 1

    layers_per_doc: Counter[str] = Counter(n.doc_id for n in by_id.values())
    for doc_id in sorted(layers_per_doc):
        if layers_per_doc[doc_id] != len(LAYER_ORDER) or sd_per_doc[doc_id] != len(SD_CHAIN):
            raise CorruptFile(
                src,
                len(lines) + 1,
                f"document {doc_id} has {layers_per_doc[doc_id]} nodes and"
                f" {sd_per_doc[doc_id]} SD edges, expected {len(LAYER_ORDER)} and {len(SD_CHAIN)}",
            )

    return KnowledgeGraph(
        by_id.values(),
        (edge for _, edge in edges),
        epsilon=epsilon,
        embedding_dimension=dimension,
        schema_version=SCHEMA_VERSION,
        dd_same_layer_only=same_layer_only,
    )


# --- statistics ---


@dataclass(frozen=True)
class GraphStats:
    layer_counts: dict[str, int]
    sd_edges: int
    dd_edges: int
    dd_histogram: list[tuple[float, float, int]]

    def as_dict(self) -> dict[str, int]:
        return {**self.layer_counts, "SD": self.sd_edges, "DD": self.dd_edges}

    def render(self) -> str:
        lines = [
            "Nodes per layer: "
            + ", ".join(f"{layer}={count}" for layer, count in self.layer_counts.items()),
            f"SD edges: {self.sd_edges}",
            f"DD edges: {self.dd_edges}",
        ]
        if self.dd_edges:
            lines.append("DD weight histogram:")
            for i, (lo, hi, count) in enumerate(self.dd_histogram):
                closing = "]" if i == len(self.dd_histogram) - 1 else ")"
                lines.append(f"  [{lo:.3f}, {hi:.3f}{closing}  {count}")
        return "\n".join(lines)


def graph_stats(graph: KnowledgeGraph) -> GraphStats:
    """Node counts per layer, edge counts per kind and a DD weight histogram."""
    layer_counts = {layer.value: len(graph.nodes_on(layer)) for layer in LAYER_ORDER}
    sd = [e for e in graph.edges if e.kind is EdgeKind.SD]
    dd_weights = np.array([e.weight for e in graph.edges if e.kind is EdgeKind.DD])

    histogram: list[tuple[float, float, int]] = []
    if dd_weights.size:
        counts, bin_edges = np.histogram(
            dd_weights, bins=HISTOGRAM_BINS, range=(graph.epsilon, 1.0)
        )
        histogram = [
            (float(bin_edges[i]), float(bin_edges[i + 1]), int(c)) for i, c in enumerate(counts)
        ]
    return GraphStats(layer_counts, len(sd), int(dd_weights.size), histogram)
