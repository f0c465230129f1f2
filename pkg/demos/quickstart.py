"""
End-to-end tour of the search pipeline on a synthetic corpus: generate
functions, build a vector index, retrieve a window, re-rank it with the
lexical scorer, and compare the run against the ground-truth ceiling.

Run from the repository root after installing the package:

    python3 demos/quickstart.py
"""

from __future__ import annotations

import random

from resim import (
    EmbedderSpec,
    LexicalScorer,
    QueryRun,
    SearchConfig,
    evaluate_run,
    generate_synthetic_corpus,
    index_pool,
    prepare_tokens,
    search,
)

EMBEDDER = EmbedderSpec(name="bow-hash", dim=64, params={"seed": 0})


if __name__ == "__main__":
    # 200 source functions x 5 compiled variants each, light mutation
    pool, queries = generate_synthetic_corpus(
        classes=200, variants_per_class=5, mutation_rate=0.3, seed=0
    )
    tokens = prepare_tokens(pool)
    index = index_pool(EMBEDDER, pool, tokens_by_id=tokens)
    print(f"corpus: {len(pool)} functions, index dim {index.dim}")

    # one query up close: retrieve 50 candidates, keep the 10 best
    # after re-ranking, never returning the query itself
    cfg = SearchConfig(
        embedders=EMBEDDER, scorer=LexicalScorer(), w=50, k=10,
        include_self=False,
    )
    qid = queries.entries[0].query_id
    wanted = set(pool.by_source_key[pool.record(qid).source_key]) - {qid}
    result = search(cfg, qid, pool, index, tokens)
    print(f"\nquery {qid} (its {len(wanted)} siblings marked *):")
    for rank, cand in enumerate(result.final, start=1):
        mark = "*" if cand.id in wanted else " "
        print(f"  {rank:2d}. {mark} {cand.id}  score {cand.raw_score:.3f}")
    t = result.timing
    print(f"timing: embed {t.t_phi * 1e3:.2f} ms, "
          f"retrieve {t.t_sim * 1e3:.2f} ms, "
          f"re-rank {t.t_rho * 1e3:.2f} ms")

    # now a proper evaluation over 100 random queries
    sample = random.Random(1).sample([e.query_id for e in queries.entries], 100)
    runs = [
        QueryRun.from_search_result(search(cfg, q, pool, index, tokens))
        for q in sample
    ]
    report = evaluate_run(runs, pool, ks=[5, 10], include_self=False)
    print(f"\nmean over {len(runs)} queries:")
    for k in report.ks:
        print(f"  nDCG@{k} {report.mean_ndcg[k]:.4f}  "
              f"(ceiling {report.oracle_mean_ndcg[k]:.4f})   "
              f"Recall@{k} {report.mean_recall[k]:.4f}  "
              f"(ceiling {report.oracle_mean_recall[k]:.4f})")
