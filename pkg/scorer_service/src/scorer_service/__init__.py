"""Reference implementation of the re-ranker scoring wire protocol.

The service speaks newline-delimited JSON over TCP or stdio: a one-line
handshake, then any number of ``{"id", "q", "c"}`` scoring requests, each
answered exactly once with ``{"id", "score"}``.  It ships a deterministic
token-set Jaccard scorer and an adapter skeleton marking where a learned
model's forward pass would plug in.
"""

from .scorers import SCORERS, ModelScorerAdapter, jaccard_score
from .server import serve_stdio, serve_stream, serve_tcp

__version__ = "0.1.0"

__all__ = [
    "SCORERS",
    "ModelScorerAdapter",
    "jaccard_score",
    "serve_stdio",
    "serve_stream",
    "serve_tcp",
    "__version__",
]
