"""Multi-hypothesis quality estimation and reranking for grammatical error correction."""

__version__ = "0.1.0"
