"""resim: two-stage binary function similarity search.

A small, deterministic retrieval engine for stripped-binary function search:
a cheap embedding stage proposes a top-w candidate window by exact cosine
similarity, and a pairwise scorer re-ranks that window into the final top-k.
Includes ensembling over multiple embedders, a trainable linear re-ranker,
a wire protocol for out-of-process scorers, and an evaluation harness with
Recall@k, nDCG@k, and the oracle re-ranking upper bound.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .corpus import (
    CandidateSource,
    CorpusError,
    FunctionRecord,
    MiningResult,
    Pool,
    QueryEntry,
    QuerySet,
    Triplet,
    load_corpus,
    load_queries,
    load_triplets,
    mine_triplets,
    save_corpus,
    save_queries,
    save_triplets,
    variants_of,
)
from .normalize import (
    NormalizeConfig,
    PairEncoding,
    TokenSequence,
    encode_pair,
    find_vocabulary_violations,
    load_libc_names,
    normalize_function,
)
from .embed import (
    BUILTIN_EMBEDDERS,
    EmbedError,
    EmbedderSpec,
    embed,
    embed_pool,
    get_embedder,
)
from .index import (
    IndexError_,
    CorpusSearcher,
    VectorIndex,
    Window,
    WindowSource,
    build_index,
    index_pool,
    load_index,
    query_window,
    save_index,
)
from .rerank import (
    FEATURE_NAMES,
    ExternalScorer,
    LexicalScorer,
    LinearScorer,
    LinearScorerModel,
    OracleScorer,
    ProtocolError,
    ScoredCandidate,
    Scorer,
    ScorerClient,
    ScorerError,
    ScorerServiceError,
    ScorerTarget,
    TrainConfig,
    TrainResult,
    TransportError,
    external_score_batch,
    logistic,
    margin_loss,
    pair_features,
    rerank_window,
    score,
    sort_candidates,
    train_linear_scorer,
    uniform_model,
)
from .pipeline import (
    PipelineError,
    SearchConfig,
    SearchResult,
    TimingBreakdown,
    ensemble_search,
    full_pool_rank,
    load_run,
    merge_ranked,
    prepare_tokens,
    save_run,
    search,
)
from .evaluation import (
    EvalError,
    MetricReport,
    QueryRun,
    SweepResult,
    evaluate_run,
    generate_synthetic_corpus,
    ndcg_at_k,
    oracle_rerank,
    recall_at_k,
    window_sweep,
)

__all__ = [
    "__version__",
    # corpus
    "CandidateSource", "CorpusError", "FunctionRecord", "MiningResult",
    "Pool", "QueryEntry", "QuerySet", "Triplet", "load_corpus",
    "load_queries", "load_triplets", "mine_triplets", "save_corpus",
    "save_queries", "save_triplets", "variants_of",
    # normalize
    "NormalizeConfig", "PairEncoding", "TokenSequence", "encode_pair",
    "find_vocabulary_violations", "load_libc_names", "normalize_function",
    # embed
    "BUILTIN_EMBEDDERS", "EmbedError", "EmbedderSpec", "embed", "embed_pool",
    "get_embedder",
    # index
    "IndexError_", "CorpusSearcher", "VectorIndex", "Window", "WindowSource",
    "build_index", "index_pool", "load_index", "query_window", "save_index",
    # rerank
    "FEATURE_NAMES", "ExternalScorer", "LexicalScorer", "LinearScorer",
    "LinearScorerModel", "OracleScorer", "ProtocolError", "ScoredCandidate",
    "Scorer", "ScorerClient", "ScorerError", "ScorerServiceError",
    "ScorerTarget", "TrainConfig", "TrainResult", "TransportError",
    "external_score_batch", "logistic", "margin_loss", "pair_features",
    "rerank_window", "score", "sort_candidates", "train_linear_scorer",
    "uniform_model",
    # pipeline
    "PipelineError", "SearchConfig", "SearchResult", "TimingBreakdown",
    "ensemble_search", "full_pool_rank", "load_run", "merge_ranked",
    "prepare_tokens", "save_run", "search",
    # evaluation
    "EvalError", "MetricReport", "QueryRun", "SweepResult", "evaluate_run",
    "generate_synthetic_corpus", "ndcg_at_k", "oracle_rerank", "recall_at_k",
    "window_sweep",
]
