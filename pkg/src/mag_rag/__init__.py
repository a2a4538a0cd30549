"""MAG-RAG - layered knowledge graph and graph-RAG agents for optimization modeling."""

__version__ = "0.1.0"
