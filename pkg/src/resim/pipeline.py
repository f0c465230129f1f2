"""Two-stage search: embedding retrieval feeding pairwise re-ranking.

Stage one embeds the query and pulls the top-w window from a vector index;
stage two scores every window candidate against the query and keeps the
top-k (k <= w).  Window width trades recall ceiling against scoring cost,
which is linear in w; the three phase timings are recorded separately so
that trade is measurable.

Ensembling runs one window per embedder, re-ranks each with the same scorer,
and merges: duplicates keep their maximum raw score, then one global sort.
Merging after scoring keeps every branch's scores on the same scale.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .corpus import Pool
from .embed import EmbedderSpec, get_embedder
from .index import VectorIndex, Window, query_window
from .normalize import NormalizeConfig, TokenSequence, normalize_function
from .rerank import (
    DEFAULT_BATCH_SIZE,
    ExternalScorer,
    ScoredCandidate,
    Scorer,
    ScorerError,
    rerank_window,
    sort_candidates,
)


class PipelineError(Exception):
    """Configuration errors: k > w, embedder/index mismatch, bad query."""


@dataclass(frozen=True)
class TimingBreakdown:
    """Seconds per phase: embed query (t_phi), window retrieval (t_sim),
    window re-scoring (t_rho)."""

    t_phi: float
    t_sim: float
    t_rho: float
    w: int
    batch_size: int

    def to_json(self) -> dict[str, object]:
        return {
            "t_phi": self.t_phi,
            "t_sim": self.t_sim,
            "t_rho": self.t_rho,
            "w": self.w,
            "batch_size": self.batch_size,
        }


@dataclass
class SearchConfig:
    embedders: Sequence[EmbedderSpec]
    scorer: Scorer
    w: int
    k: int
    include_self: bool = True
    norm_cfg: NormalizeConfig = field(default_factory=NormalizeConfig)

    def __post_init__(self) -> None:
        if isinstance(self.embedders, EmbedderSpec):
            self.embedders = (self.embedders,)
        self.embedders = tuple(self.embedders)
        if not self.embedders:
            raise PipelineError("need at least one embedder")
        names = [e.name for e in self.embedders]
        if len(set(names)) != len(names):
            raise PipelineError(f"embedder names not unique: {names}")
        if self.k < 1:
            raise PipelineError("k must be >= 1")
        if self.k > self.w:
            raise PipelineError(f"k ({self.k}) must be <= w ({self.w})")


@dataclass(frozen=True)
class SearchResult:
    query_id: str
    windows: tuple[tuple[str, Window], ...]  # (embedder name, window)
    final: tuple[ScoredCandidate, ...]
    timing: TimingBreakdown

    def final_ids(self) -> tuple[str, ...]:
        return tuple(c.id for c in self.final)

    def window_ids(self) -> tuple[str, ...]:
        """Union of all retrieval windows, ascending (the candidate set the
        re-ranker was allowed to order)."""
        seen: set[str] = set()
        for _, window in self.windows:
            seen.update(window.ids())
        return tuple(sorted(seen))

    def to_json(self, include_timing: bool = False) -> dict[str, object]:
        obj: dict[str, object] = {
            "query_id": self.query_id,
            "final": [c.to_json() for c in self.final],
            "windows": [
                {
                    "embedder": name,
                    "w": window.w,
                    "candidates": [[i, s] for i, s in window.candidates],
                }
                for name, window in self.windows
            ],
        }
        if include_timing:
            obj["timing"] = self.timing.to_json()
        return obj

    @classmethod
    def from_json(cls, obj: Mapping[str, object]) -> "SearchResult":
        windows = tuple(
            (
                str(w["embedder"]),
                Window(
                    query_id=str(obj["query_id"]),
                    candidates=tuple((str(i), float(s)) for i, s in w["candidates"]),
                    w=int(w["w"]),
                ),
            )
            for w in obj["windows"]  # type: ignore[union-attr]
        )
        final = tuple(
            ScoredCandidate(id=str(c["id"]), raw_score=float(c["raw_score"]))
            for c in obj["final"]  # type: ignore[union-attr]
        )
        timing = obj.get("timing") or {}
        return cls(
            query_id=str(obj["query_id"]),
            windows=windows,
            final=final,
            timing=TimingBreakdown(
                t_phi=float(timing.get("t_phi", 0.0)),  # type: ignore[union-attr]
                t_sim=float(timing.get("t_sim", 0.0)),  # type: ignore[union-attr]
                t_rho=float(timing.get("t_rho", 0.0)),  # type: ignore[union-attr]
                w=int(timing.get("w", windows[0][1].w if windows else 0)),  # type: ignore[union-attr]
                batch_size=int(timing.get("batch_size", 1)),  # type: ignore[union-attr]
            ),
        )


def prepare_tokens(
    pool: Pool, norm_cfg: NormalizeConfig | None = None
) -> dict[str, TokenSequence]:
    """Normalize the whole pool once; pass the result to search calls that
    share the pool so per-query work stays at the query itself."""
    norm_cfg = norm_cfg or NormalizeConfig()
    return {r.id: normalize_function(r, norm_cfg) for r in pool.records}


def _query_tokens(
    cfg: SearchConfig,
    query_id: str,
    pool: Pool,
    tokens_by_id: Mapping[str, TokenSequence] | None,
) -> TokenSequence:
    if tokens_by_id is not None and query_id in tokens_by_id:
        return tokens_by_id[query_id]
    return normalize_function(pool.record(query_id), cfg.norm_cfg)


def _batch_size(scorer: Scorer) -> int:
    if isinstance(scorer, ExternalScorer):
        return scorer.client.batch_size
    return 1


def _retrieve(
    cfg: SearchConfig,
    spec: EmbedderSpec,
    index: VectorIndex,
    query_id: str,
    query_tokens: TokenSequence,
) -> tuple[Window, float, float]:
    """One embedder's window; returns (window, t_phi, t_sim)."""
    if index.embedder.name != spec.name:
        raise PipelineError(
            f"index built with {index.embedder.name!r}, config says {spec.name!r}"
        )
    embedder = get_embedder(spec)
    if embedder.spec.dim != index.dim:
        raise PipelineError(
            f"embedder dim {embedder.spec.dim} != index dim {index.dim}"
        )
    start = time.perf_counter()
    qvec = embedder.embed(query_tokens)
    t_phi = time.perf_counter() - start

    # Over-fetch by one when the query itself must be dropped from results.
    fetch = cfg.w if cfg.include_self else cfg.w + 1
    start = time.perf_counter()
    window = query_window(index, qvec, fetch, query_id)
    t_sim = time.perf_counter() - start
    if not cfg.include_self:
        kept = tuple(c for c in window.candidates if c[0] != query_id)[: cfg.w]
        window = Window(query_id=query_id, candidates=kept, w=cfg.w)
    return window, t_phi, t_sim


def search(
    cfg: SearchConfig,
    query_id: str,
    pool: Pool,
    index: VectorIndex,
    tokens_by_id: Mapping[str, TokenSequence] | None = None,
) -> SearchResult:
    """Single-embedder two-stage search."""
    if len(cfg.embedders) != 1:
        raise PipelineError("search() takes one embedder; use ensemble_search")
    if query_id not in pool.by_id:
        raise PipelineError(f"query id {query_id!r} not in pool")
    query_tokens = _query_tokens(cfg, query_id, pool, tokens_by_id)
    window, t_phi, t_sim = _retrieve(
        cfg, cfg.embedders[0], index, query_id, query_tokens
    )
    candidate_tokens = _window_tokens(cfg, window, pool, tokens_by_id)
    start = time.perf_counter()
    scored = rerank_window(cfg.scorer, query_tokens, window, candidate_tokens)
    t_rho = time.perf_counter() - start
    return SearchResult(
        query_id=query_id,
        windows=((cfg.embedders[0].name, window),),
        final=tuple(scored[: cfg.k]),
        timing=TimingBreakdown(
            t_phi=t_phi,
            t_sim=t_sim,
            t_rho=t_rho,
            w=cfg.w,
            batch_size=_batch_size(cfg.scorer),
        ),
    )


def _window_tokens(
    cfg: SearchConfig,
    window: Window,
    pool: Pool,
    tokens_by_id: Mapping[str, TokenSequence] | None,
) -> dict[str, TokenSequence] | None:
    if not cfg.scorer.needs_tokens:
        return None
    if tokens_by_id is not None:
        return tokens_by_id  # type: ignore[return-value]
    return {
        fid: normalize_function(pool.record(fid), cfg.norm_cfg)
        for fid in window.ids()
    }


def merge_ranked(
    branches: Sequence[Sequence[ScoredCandidate]],
) -> list[ScoredCandidate]:
    """Union of re-ranked branches; a candidate surfacing in several keeps
    its maximum raw score.  Idempotent: merging a branch with itself is the
    branch."""
    best: dict[str, ScoredCandidate] = {}
    for branch in branches:
        for cand in branch:
            held = best.get(cand.id)
            if held is None or cand.raw_score > held.raw_score:
                best[cand.id] = cand
    return sort_candidates(list(best.values()))


def ensemble_search(
    cfg: SearchConfig,
    query_id: str,
    pool: Pool,
    indexes: Sequence[VectorIndex],
    tokens_by_id: Mapping[str, TokenSequence] | None = None,
) -> SearchResult:
    """Multi-embedder search: one window per embedder, each re-ranked by the
    same scorer, merged, then cut to k.  Phase timings are summed across
    branches."""
    if len(indexes) != len(cfg.embedders):
        raise PipelineError(
            f"{len(cfg.embedders)} embedders but {len(indexes)} indexes"
        )
    if query_id not in pool.by_id:
        raise PipelineError(f"query id {query_id!r} not in pool")
    query_tokens = _query_tokens(cfg, query_id, pool, tokens_by_id)
    windows: list[tuple[str, Window]] = []
    branches: list[list[ScoredCandidate]] = []
    t_phi = t_sim = t_rho = 0.0
    for spec, index in zip(cfg.embedders, indexes):
        window, phi, sim = _retrieve(cfg, spec, index, query_id, query_tokens)
        candidate_tokens = _window_tokens(cfg, window, pool, tokens_by_id)
        start = time.perf_counter()
        scored = rerank_window(cfg.scorer, query_tokens, window, candidate_tokens)
        t_rho += time.perf_counter() - start
        t_phi += phi
        t_sim += sim
        windows.append((spec.name, window))
        branches.append(scored)
    merged = merge_ranked(branches)
    return SearchResult(
        query_id=query_id,
        windows=tuple(windows),
        final=tuple(merged[: cfg.k]),
        timing=TimingBreakdown(
            t_phi=t_phi,
            t_sim=t_sim,
            t_rho=t_rho,
            w=cfg.w,
            batch_size=_batch_size(cfg.scorer),
        ),
    )


def full_pool_rank(
    scorer: Scorer,
    query_id: str,
    pool: Pool,
    norm_cfg: NormalizeConfig | None = None,
    tokens_by_id: Mapping[str, TokenSequence] | None = None,
) -> list[ScoredCandidate]:
    """Re-rank the entire pool (no retrieval stage).  Equal, item for item,
    to search with w = |pool|: with the window maximal the embedder cannot
    matter, so the index is skipped outright."""
    norm_cfg = norm_cfg or NormalizeConfig()
    if query_id not in pool.by_id:
        raise PipelineError(f"query id {query_id!r} not in pool")
    ids = sorted(pool.by_id)
    window = Window(
        query_id=query_id,
        candidates=tuple((fid, 0.0) for fid in ids),
        w=len(ids),
    )
    if scorer.needs_tokens:
        if tokens_by_id is None:
            tokens_by_id = prepare_tokens(pool, norm_cfg)
        query_tokens: TokenSequence | None = tokens_by_id[query_id]
    else:
        query_tokens = (
            tokens_by_id.get(query_id)
            if tokens_by_id is not None
            else TokenSequence(origin_id=query_id, tokens=())
        )
    return rerank_window(
        scorer, query_tokens, window, tokens_by_id, query_id=query_id
    )


def save_run(results: Sequence[SearchResult], path: str, include_timing: bool = False) -> None:
    """Run file: one SearchResult JSON per line.  Timing is opt-in so data
    artifacts stay byte-identical across reruns."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in results:
            fh.write(json.dumps(r.to_json(include_timing=include_timing)) + "\n")


def load_run(path: str) -> list[SearchResult]:
    out: list[SearchResult] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(SearchResult.from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise PipelineError(f"{path}:{lineno}: bad run record: {exc}") from None
    if not out:
        raise PipelineError(f"{path}: empty run file")
    return out
