"""Scoring functions the service can serve.

A scorer is any callable ``(q_tokens, c_tokens) -> float`` returning a
finite score.  The shipped ``jaccard`` scorer is deliberately simple and
deterministic so the client side of the protocol can be validated end to
end; ``ModelScorerAdapter`` documents where a real model goes.
"""

from __future__ import annotations

from typing import Callable, Dict, Sequence


def jaccard_score(q: Sequence[str], c: Sequence[str]) -> float:
    """Jaccard similarity of the two token sets.

    Token multisets are collapsed to sets first.  A pair of empty sequences
    scores 0.0 — the same convention the in-process token-overlap feature
    uses, so the two implementations agree exactly on every input.
    """
    qs, cs = set(q), set(c)
    union = qs | cs
    if not union:
        return 0.0
    return len(qs & cs) / len(union)


class ModelScorerAdapter:
    """Skeleton for serving a learned pair scorer.

    Subclass and implement :meth:`score`.  The typical shape of a real
    implementation:

    1. map the two token sequences into the model's vocabulary and build
       one jointly encoded input (query, separator, candidate), truncating
       from the left so function tails survive;
    2. run the model forward pass (batching across pending requests is
       fine — the protocol allows answering request ids in any order);
    3. return the raw pair score as a finite float (the client applies its
       own display squashing, so do not sigmoid here).

    Register an instance to serve it::

        SCORERS["my-model"] = MyAdapter(weights_path).score
    """

    def score(self, q: Sequence[str], c: Sequence[str]) -> float:
        raise NotImplementedError("plug a model forward pass in here")


Scorer = Callable[[Sequence[str], Sequence[str]], float]

SCORERS: Dict[str, Scorer] = {
    "jaccard": jaccard_score,
}
