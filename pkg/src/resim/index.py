"""Exact cosine retrieval over unit-normalized vectors, plus persistence.

Retrieval is brute force by design: similarities are a single matrix-vector
product and selection is O(n) partition plus an exact sort of the window.
The ordering contract is total and deterministic — descending similarity,
ties broken by ascending id — so windows nest monotonically and rankings are
reproducible bit-for-bit.

On disk an index is a small binary: magic ``RSIM``, format version, dim,
row count, embedder name, embedder params (JSON), then row-major 64-bit
little-endian floats and length-prefixed UTF-8 ids.  All integers are
little-endian uint32.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass

import numpy as np

from .corpus import Pool
from .embed import EmbedderSpec, embed_pool, get_embedder
from .normalize import NormalizeConfig, normalize_function

MAGIC = b"RSIM"
FORMAT_VERSION = 1


class IndexError_(Exception):
    """Index construction or file-format failure."""


@dataclass(frozen=True)
class Window(object):
    """Top-w retrieval result: (id, similarity) pairs, best first.

    Similarities are cosines in [-1, 1]; equal similarities appear in
    ascending id order.  len(candidates) == min(w, pool size).
    """

    query_id: str
    candidates: tuple[tuple[str, float], ...]
    w: int

    def ids(self) -> tuple[str, ...]:
        return tuple(c[0] for c in self.candidates)


@dataclass
class VectorIndex:
    embedder: EmbedderSpec
    ids: tuple[str, ...]  # ascending; row i belongs to ids[i]
    rows: np.ndarray  # (n, dim) float64, unit rows (zero rows permitted)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return int(self.rows.shape[1])

    def vector_for(self, function_id: str) -> np.ndarray:
        i = self._row_of().get(function_id)
        if i is None:
            raise IndexError_(f"id {function_id!r} not in index")
        return self.rows[i]

    def _row_of(self) -> dict[str, int]:
        cached = getattr(self, "_row_cache", None)
        if cached is None:
            cached = {fid: i for i, fid in enumerate(self.ids)}
            object.__setattr__(self, "_row_cache", cached)
        return cached


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    scale = np.where(norms > 0.0, norms, 1.0)  # zero rows stay zero
    return matrix / scale


def build_index(
    embedded_pool: list[tuple[str, np.ndarray]], embedder: EmbedderSpec
) -> VectorIndex:
    """Rows are re-sorted by id and unit-normalized at insert, so external
    sidecar vectors obey the same cosine geometry as built-in embedders."""
    if not embedded_pool:
        raise IndexError_("cannot build an index from zero vectors")
    dims = {int(v.shape[0]) for _, v in embedded_pool}
    if len(dims) != 1:
        raise IndexError_(f"mixed vector dimensions: {sorted(dims)}")
    (dim,) = dims
    ordered = sorted(embedded_pool, key=lambda item: item[0])
    ids = tuple(fid for fid, _ in ordered)
    if len(set(ids)) != len(ids):
        raise IndexError_("duplicate ids in embedded pool")
    matrix = np.stack([v.astype(np.float64, copy=False) for _, v in ordered])
    if not np.all(np.isfinite(matrix)):
        raise IndexError_("non-finite vector values")
    spec = EmbedderSpec(embedder.name, dim, dict(embedder.params))
    return VectorIndex(embedder=spec, ids=ids, rows=_unit_rows(matrix))


def index_pool(
    spec: EmbedderSpec,
    pool: Pool,
    norm_cfg: NormalizeConfig | None = None,
    jobs: int = 1,
    tokens_by_id=None,
) -> VectorIndex:
    """Convenience: normalize + embed + build in one step."""
    return build_index(
        embed_pool(spec, pool, norm_cfg, jobs=jobs, tokens_by_id=tokens_by_id), spec
    )


def query_window(
    index: VectorIndex, query_vec: np.ndarray, w: int, query_id: str = ""
) -> Window:
    """Exact top-w by cosine.  The selection below is equivalent to a full
    stable sort on (-similarity, id): ties at the cut take the smallest ids
    because rows are stored in ascending id order."""
    if w < 1:
        raise IndexError_("w must be >= 1")
    q = np.asarray(query_vec, dtype=np.float64)
    if q.shape != (index.dim,):
        raise IndexError_(f"query dim {q.shape} != index dim {index.dim}")
    norm = float(np.linalg.norm(q))
    if norm > 0.0:
        q = q / norm
    sims = index.rows @ q
    np.clip(sims, -1.0, 1.0, out=sims)

    n = sims.shape[0]
    m = min(w, n)
    if m == n:
        chosen = np.argsort(-sims, kind="stable")
    else:
        cut = np.partition(sims, n - m)[n - m]  # m-th largest similarity
        above = np.flatnonzero(sims > cut)
        at_cut = np.flatnonzero(sims == cut)
        need = m - above.shape[0]
        sel = np.concatenate([above, at_cut[:need]])
        # lexsort: primary descending similarity, secondary ascending row/id
        chosen = sel[np.lexsort((sel, -sims[sel]))]
    ids = index.ids
    candidates = tuple((ids[i], float(sims[i])) for i in chosen)
    return Window(query_id=query_id, candidates=candidates, w=w)


def timed_query(
    index: VectorIndex, query_vec: np.ndarray, w: int, query_id: str = ""
) -> tuple[Window, float]:
    start = time.perf_counter()
    window = query_window(index, query_vec, w, query_id)
    return window, time.perf_counter() - start


# ============================================================================
# Persistence
# ============================================================================


def save_index(index: VectorIndex, path: str) -> None:
    name_bytes = index.embedder.name.encode("utf-8")
    # The embedder params ride along so a loaded index can rebuild the exact
    # query-side embedder (hash seed, sidecar path) without external state.
    params_bytes = json.dumps(
        index.embedder.params, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", FORMAT_VERSION, index.dim, len(index.ids)))
        fh.write(struct.pack("<I", len(name_bytes)))
        fh.write(name_bytes)
        fh.write(struct.pack("<I", len(params_bytes)))
        fh.write(params_bytes)
        fh.write(np.ascontiguousarray(index.rows, dtype="<f8").tobytes())
        for fid in index.ids:
            raw = fid.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)


def load_index(path: str) -> VectorIndex:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise IndexError_(f"{path}: not an index file (magic {magic!r})")
        header = fh.read(12)
        if len(header) != 12:
            raise IndexError_(f"{path}: truncated header")
        version, dim, count = struct.unpack("<III", header)
        if version != FORMAT_VERSION:
            raise IndexError_(f"{path}: unsupported format version {version}")
        (name_len,) = struct.unpack("<I", fh.read(4))
        name = fh.read(name_len).decode("utf-8")
        (params_len,) = struct.unpack("<I", fh.read(4))
        try:
            params = json.loads(fh.read(params_len).decode("utf-8"))
        except ValueError as exc:
            raise IndexError_(f"{path}: bad embedder params block: {exc}") from None
        row_bytes = fh.read(count * dim * 8)
        if len(row_bytes) != count * dim * 8:
            raise IndexError_(f"{path}: truncated vector block")
        rows = np.frombuffer(row_bytes, dtype="<f8").astype(np.float64)
        rows = rows.reshape(count, dim)
        ids: list[str] = []
        for _ in range(count):
            (id_len,) = struct.unpack("<I", fh.read(4))
            ids.append(fh.read(id_len).decode("utf-8"))
    spec = EmbedderSpec(name=name, dim=dim, params=params)
    return VectorIndex(embedder=spec, ids=tuple(ids), rows=rows)


# ============================================================================
# Pool-backed candidate source (triplet mining)
# ============================================================================


class CorpusSearcher:
    """Embeds a pool once and answers ranked-candidate queries by record id.

    Satisfies the corpus module's CandidateSource protocol for hard-negative
    mining; one instance per embedder.
    """

    def __init__(
        self,
        spec: EmbedderSpec,
        pool: Pool,
        norm_cfg: NormalizeConfig | None = None,
        jobs: int = 1,
        tokens_by_id=None,
    ) -> None:
        self._norm_cfg = norm_cfg or NormalizeConfig()
        self.index = index_pool(
            spec, pool, self._norm_cfg, jobs=jobs, tokens_by_id=tokens_by_id
        )
        self._pool = pool
        self._embedder = get_embedder(self.index.embedder)
        self._tokens_by_id = tokens_by_id

    @property
    def name(self) -> str:
        return self.index.embedder.name

    def query_vector(self, query_id: str) -> np.ndarray:
        # Re-embedding (rather than reading the stored row) keeps this path
        # identical to how out-of-pool queries would be handled.
        if self._tokens_by_id is not None and query_id in self._tokens_by_id:
            toks = self._tokens_by_id[query_id]
        else:
            toks = normalize_function(self._pool.record(query_id), self._norm_cfg)
        return self._embedder.embed(toks)

    def top_candidates(self, query_id: str, limit: int) -> list[str]:
        window = query_window(self.index, self.query_vector(query_id), limit, query_id)
        return list(window.ids())


class WindowSource:
    """CandidateSource over an already-built index.

    Queries must be members of the index (their stored row is the query
    vector), which is always true for mining anchors.
    """

    def __init__(self, index: VectorIndex, name: str | None = None) -> None:
        self.index = index
        self._name = name if name is not None else index.embedder.name

    @property
    def name(self) -> str:
        return self._name

    def top_candidates(self, query_id: str, limit: int) -> list[str]:
        vec = self.index.vector_for(query_id)
        return list(query_window(self.index, vec, limit, query_id).ids())
