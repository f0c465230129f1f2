"""Embedders: token sequences -> fixed-dimension vectors.

Two built-in hash embedders cover desk-scale retrieval without any model
download: ``bow-hash`` buckets single tokens, ``bigram-hash`` buckets
adjacent token pairs (order-sensitive).  Both are seeded, deterministic, and
emit unit-norm float64 vectors; an empty token sequence embeds to the zero
vector (cosine against it is defined as 0 downstream).

``external:<path>`` serves precomputed vectors from a JSONL sidecar of
``{"id": ..., "vector": [...]}`` rows, keyed by the sequence's origin id, so
any outboard model can plug into the same pipeline.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .corpus import Pool
from .normalize import NormalizeConfig, TokenSequence, normalize_function

logger = logging.getLogger(__name__)

DEFAULT_DIM = 128
DEFAULT_HASH_SEED = 0

BUILTIN_EMBEDDERS = ("bow-hash", "bigram-hash")


class EmbedError(Exception):
    """Unknown embedder, dimension mismatch, or missing sidecar vector."""


@dataclass
class EmbedderSpec:
    """Names an embedder plus the parameters that pin its output."""

    name: str
    dim: int = DEFAULT_DIM
    params: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise EmbedError(f"embedder {self.name!r}: dim must be >= 1")

    def seed(self) -> int:
        return int(self.params.get("seed", DEFAULT_HASH_SEED))  # type: ignore[arg-type]


class _HashEmbedder:
    """Shared machinery: seeded token hashing into ``dim`` buckets."""

    def __init__(self, spec: EmbedderSpec) -> None:
        self.spec = spec
        self._key = str(spec.seed()).encode("utf-8")
        self._cache: dict[str, int] = {}

    @property
    def name(self) -> str:
        return self.spec.name

    def bucket(self, token: str) -> int:
        b = self._cache.get(token)
        if b is None:
            digest = hashlib.blake2b(
                token.encode("utf-8"), digest_size=8, key=self._key
            ).digest()
            b = int.from_bytes(digest, "little") % self.spec.dim
            self._cache[token] = b
        return b

    def _units(self, tokens: tuple[str, ...]) -> tuple[str, ...]:
        raise NotImplementedError

    def embed(self, tokens: TokenSequence) -> np.ndarray:
        counts: dict[int, int] = {}
        bucket = self.bucket
        for unit in self._units(tokens.tokens):
            b = bucket(unit)
            counts[b] = counts.get(b, 0) + 1
        vec = np.zeros(self.spec.dim, dtype=np.float64)
        for b, c in counts.items():
            vec[b] = c
        norm = float(np.linalg.norm(vec))
        if norm > 0.0:
            vec /= norm
        return vec


class BowHashEmbedder(_HashEmbedder):
    def _units(self, tokens: tuple[str, ...]) -> tuple[str, ...]:
        return tokens


class BigramHashEmbedder(_HashEmbedder):
    # \x1f joins pair members; it cannot occur inside a token.
    def _units(self, tokens: tuple[str, ...]) -> tuple[str, ...]:
        return tuple(
            tokens[i] + "\x1f" + tokens[i + 1] for i in range(len(tokens) - 1)
        )


class ExternalVectors:
    """Sidecar-backed embedder; vectors are looked up by origin id."""

    def __init__(self, spec: EmbedderSpec) -> None:
        path = spec.params.get("path")
        if not path:
            raise EmbedError("external embedder requires params['path']")
        vectors: dict[str, np.ndarray] = {}
        dim: int | None = None
        with open(str(path), "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                    fid = str(obj["id"])
                    vec = np.asarray(obj["vector"], dtype=np.float64)
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise EmbedError(f"{path}:{lineno}: bad sidecar row: {exc}") from None
                if vec.ndim != 1 or vec.size == 0 or not np.all(np.isfinite(vec)):
                    raise EmbedError(f"{path}:{lineno}: bad vector for id {fid!r}")
                if dim is None:
                    dim = int(vec.size)
                elif vec.size != dim:
                    raise EmbedError(
                        f"{path}:{lineno}: vector for {fid!r} has dim {vec.size}, "
                        f"expected {dim}"
                    )
                vectors[fid] = vec
        if dim is None:
            raise EmbedError(f"{path}: sidecar is empty")
        declared = spec.params.get("dim")
        if declared is not None and int(declared) != dim:  # type: ignore[arg-type]
            raise EmbedError(f"sidecar dim {dim} != declared dim {declared}")
        self.spec = EmbedderSpec(name=spec.name, dim=dim, params=dict(spec.params))
        self._vectors = vectors

    @property
    def name(self) -> str:
        return self.spec.name

    def embed(self, tokens: TokenSequence) -> np.ndarray:
        vec = self._vectors.get(tokens.origin_id)
        if vec is None:
            raise EmbedError(f"no sidecar vector for id {tokens.origin_id!r}")
        return vec


def get_embedder(spec: EmbedderSpec):
    """Instantiate by name; unknown names fail loudly, listing what exists.
    The instance is memoized on the spec object so hash caches and sidecar
    loads are shared across calls."""
    inst = getattr(spec, "_instance", None)
    if inst is not None:
        return inst
    if spec.name == "bow-hash":
        inst = BowHashEmbedder(spec)
    elif spec.name == "bigram-hash":
        inst = BigramHashEmbedder(spec)
    elif spec.name == "external" or spec.name.startswith("external:"):
        inst = ExternalVectors(spec)
    else:
        known = ", ".join(BUILTIN_EMBEDDERS + ("external:<path>",))
        raise EmbedError(f"unknown embedder {spec.name!r}; known: {known}")
    spec._instance = inst  # type: ignore[attr-defined]
    return inst


def embed(spec: EmbedderSpec, tokens: TokenSequence) -> np.ndarray:
    return get_embedder(spec).embed(tokens)


def embed_pool(
    spec: EmbedderSpec,
    pool: Pool,
    norm_cfg: NormalizeConfig | None = None,
    jobs: int = 1,
    tokens_by_id: Mapping[str, TokenSequence] | None = None,
) -> list[tuple[str, np.ndarray]]:
    """Normalize and embed every record, sorted by id (the canonical order
    shared with the vector index).  Pass ``tokens_by_id`` to reuse an existing
    normalization pass."""
    norm_cfg = norm_cfg or NormalizeConfig()
    embedder = get_embedder(spec)
    ordered = sorted(pool.records, key=lambda r: r.id)

    def one(record) -> tuple[str, np.ndarray]:
        if tokens_by_id is not None and record.id in tokens_by_id:
            toks = tokens_by_id[record.id]
        else:
            toks = normalize_function(record, norm_cfg)
        return record.id, embedder.embed(toks)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool_exec:
            rows = list(pool_exec.map(one, ordered))
    else:
        rows = [one(r) for r in ordered]

    zero_ids = [fid for fid, vec in rows if not np.any(vec)]
    if zero_ids:
        logger.warning(
            "%d record(s) embedded to the zero vector (first few: %s)",
            len(zero_ids),
            ", ".join(zero_ids[:5]),
        )
    return rows
