"""
Desk-scale re-ranker training: mine hard-negative triplets from the
embedding index, fit the linear scorer with the margin ranking loss, and
show the trained weights beating uniform weights on held-out queries.

Run from the repository root after installing the package:

    python3 demos/train_scorer.py
"""

from __future__ import annotations

import random

from resim import (
    EmbedderSpec,
    LinearScorer,
    QueryEntry,
    QueryRun,
    QuerySet,
    SearchConfig,
    TrainConfig,
    evaluate_run,
    generate_synthetic_corpus,
    index_pool,
    mine_triplets,
    prepare_tokens,
    search,
    train_linear_scorer,
    uniform_model,
)
from resim.index import WindowSource
from resim.rerank import FEATURE_NAMES

EMBEDDER = EmbedderSpec(name="bow-hash", dim=64, params={"seed": 0})


if __name__ == "__main__":
    pool, queries = generate_synthetic_corpus(
        classes=500, variants_per_class=5, mutation_rate=0.3, seed=0
    )
    tokens = prepare_tokens(pool)
    index = index_pool(EMBEDDER, pool, tokens_by_id=tokens)
    all_ids = [e.query_id for e in queries.entries]

    # mine triplets around the first 150 queries: each anchor pairs a
    # same-source positive with near-miss negatives from its own window
    anchors = QuerySet(tuple(QueryEntry(q) for q in all_ids[:150]))
    mined = mine_triplets(
        pool, anchors, [WindowSource(index)],
        negatives_per_source=3, mining_depth=10, seed=0,
    )
    print(f"mined {len(mined.triplets)} triplets "
          f"({len(mined.skipped)} anchors skipped)")

    outcome = train_linear_scorer(
        mined.triplets, pool, TrainConfig(epochs=3), tokens_by_id=tokens
    )
    print(f"mean loss {outcome.initial_mean_loss:.4f} -> "
          f"{outcome.final_mean_loss:.4f} after training")
    for name, weight in zip(FEATURE_NAMES, outcome.model.weights):
        print(f"  {name:24s} {weight:+.4f}")

    # held-out comparison: same search, only the weights differ
    held_out = random.Random(7).sample(all_ids[150:], 100)
    for label, model in (("uniform", uniform_model()),
                         ("trained", outcome.model)):
        cfg = SearchConfig(
            embedders=EMBEDDER, scorer=LinearScorer(model), w=50, k=10,
            include_self=False,
        )
        runs = [
            QueryRun.from_search_result(search(cfg, q, pool, index, tokens))
            for q in held_out
        ]
        report = evaluate_run(runs, pool, ks=[10], include_self=False)
        print(f"{label}: nDCG@10 {report.mean_ndcg[10]:.4f}  "
              f"Recall@10 {report.mean_recall[10]:.4f}")
