"""Pairwise re-ranking: scorers, features, margin training, wire client.

A scorer maps a (query, candidate) token pair to a raw score (a logit; any
finite real).  ``display_score`` is its logistic image in (0, 1) — a strictly
monotone map, so both orderings agree and either can be shown.  Re-ranking a
retrieval window sorts candidates by descending raw score with ties broken by
ascending id, which makes every ranking in the system deterministic.

Scorers:
  * ``lexical``  — logit of the mean of the non-bias pair features;
  * ``linear``   — learned weights dotted with the features (margin-trained);
  * ``oracle``   — +1/-1 from ground-truth source keys (upper bound probe);
  * ``external`` — newline-delimited JSON wire protocol over TCP or stdio.

Per-pair scoring is deliberately plain Python: the cost model mirrors a
cross-encoder forward pass (scoring dominates retrieval by design), and
batching is an internal concern that never changes output.
"""

from __future__ import annotations

import json
import math
import os
import random
import select
import socket
import subprocess
import time
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from .corpus import Pool, Triplet
from .normalize import (
    CALL_MNEMONICS,
    KNOWN_MNEMONICS,
    NormalizeConfig,
    PairEncoding,
    TokenSequence,
    normalize_function,
)


class ScorerError(Exception):
    """Scorer misuse: unknown model, missing ground truth, bad config."""


class ScorerServiceError(Exception):
    """Base for external scorer failures (CLI exit code 3)."""


class TransportError(ScorerServiceError):
    """Connection-level failure; the client retries the batch once."""


class ProtocolError(ScorerServiceError):
    """Wire protocol violation; never retried."""


# ============================================================================
# Scored candidates
# ============================================================================


def logistic(x: float) -> float:
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@dataclass(frozen=True)
class ScoredCandidate:
    """A candidate with its raw score; display_score = logistic(raw_score)."""

    id: str
    raw_score: float
    display_score: float = None  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if not math.isfinite(self.raw_score):
            raise ScorerError(f"non-finite raw score for {self.id!r}")
        object.__setattr__(self, "display_score", logistic(self.raw_score))

    def to_json(self) -> dict[str, object]:
        return {
            "id": self.id,
            "raw_score": self.raw_score,
            "display_score": self.display_score,
        }


def sort_candidates(scored: list[ScoredCandidate]) -> list[ScoredCandidate]:
    """Descending raw score, ties by ascending id: the one true order."""
    return sorted(scored, key=lambda s: (-s.raw_score, s.id))


# ============================================================================
# Pair features
# ============================================================================

FEATURE_NAMES = (
    "token_jaccard",
    "mnemonic_cosine",
    "length_ratio",
    "mnemonic_edit_similarity",
    "libc_call_jaccard",
    "bias",
)

# Guards the O(n*m) alignment against pathological inputs; tails are kept
# because function epilogues discriminate better than shared prologues.
_EDIT_CAP = 256

_MNEM_ID: dict[str, int] = {}


def _mnem_id(token: str) -> int:
    mid = _MNEM_ID.get(token)
    if mid is None:
        mid = len(_MNEM_ID)
        _MNEM_ID[token] = mid
    return mid


@dataclass(frozen=True)
class _FnStats:
    token_set: frozenset[str]
    mnem_counts: tuple[tuple[int, int], ...]
    mnem_norm: float
    mnem_seq: tuple[int, ...]
    libc_calls: frozenset[str]
    n_tokens: int


@lru_cache(maxsize=65536)
def _stats(tokens: tuple[str, ...], libc_names: frozenset[str]) -> _FnStats:
    counts: dict[int, int] = {}
    seq: list[int] = []
    libc: set[str] = set()
    n = len(tokens)
    for i, tok in enumerate(tokens):
        if tok in KNOWN_MNEMONICS:
            mid = _mnem_id(tok)
            seq.append(mid)
            counts[mid] = counts.get(mid, 0) + 1
            if tok in CALL_MNEMONICS and i + 1 < n and tokens[i + 1] in libc_names:
                libc.add(tokens[i + 1])
    norm = math.sqrt(sum(c * c for c in counts.values()))
    return _FnStats(
        token_set=frozenset(tokens),
        mnem_counts=tuple(sorted(counts.items())),
        mnem_norm=norm,
        mnem_seq=tuple(seq[-_EDIT_CAP:]),
        libc_calls=frozenset(libc),
        n_tokens=n,
    )


def _levenshtein(a: tuple[int, ...], b: tuple[int, ...]) -> int:
    la, lb = len(a), len(b)
    if la == 0:
        return lb
    if lb == 0:
        return la
    prev = list(range(la + 1))
    for j in range(1, lb + 1):
        bj = b[j - 1]
        cur = [j]
        append = cur.append
        last = j
        prev_im1 = prev[0]
        pi = 0
        for i in range(1, la + 1):
            pi = prev[i]
            c = prev_im1 if a[i - 1] == bj else prev_im1 + 1
            u = pi + 1
            if u < c:
                c = u
            u = last + 1
            if u < c:
                c = u
            append(c)
            last = c
            prev_im1 = pi
        prev = cur
    return prev[la]


def _jaccard(a: frozenset, b: frozenset) -> float:
    if not a and not b:
        return 0.0
    inter = len(a & b)
    if inter == 0:
        return 0.0
    return inter / (len(a) + len(b) - inter)


def _features_from_stats(sa: _FnStats, sb: _FnStats) -> np.ndarray:
    # token-overlap jaccard (set semantics; empty/empty -> 0)
    f0 = _jaccard(sa.token_set, sb.token_set)
    # mnemonic histogram cosine (a zero histogram has cosine 0)
    if sa.mnem_norm == 0.0 or sb.mnem_norm == 0.0:
        f1 = 0.0
    else:
        cb = dict(sb.mnem_counts)
        dot = 0
        for mid, c in sa.mnem_counts:
            other = cb.get(mid)
            if other:
                dot += c * other
        f1 = dot / (sa.mnem_norm * sb.mnem_norm)
    # token-length ratio min/max
    mx = max(sa.n_tokens, sb.n_tokens)
    f2 = (min(sa.n_tokens, sb.n_tokens) / mx) if mx else 0.0
    # normalized edit similarity over mnemonic sequences
    lm = max(len(sa.mnem_seq), len(sb.mnem_seq))
    if lm == 0:
        f3 = 1.0  # two empty programs align trivially
    else:
        f3 = 1.0 - _levenshtein(sa.mnem_seq, sb.mnem_seq) / lm
    # shared libc-call jaccard; neither side calling libc counts as agreement
    if not sa.libc_calls and not sb.libc_calls:
        f4 = 1.0
    else:
        f4 = _jaccard(sa.libc_calls, sb.libc_calls)
    return np.array([f0, f1, f2, f3, f4, 1.0], dtype=np.float64)


def _as_tokens(x: TokenSequence | Sequence[str]) -> tuple[tuple[str, ...], str | None]:
    if isinstance(x, TokenSequence):
        return x.tokens, x.origin_id
    return tuple(x), None


def pair_features(
    query: TokenSequence | Sequence[str],
    candidate: TokenSequence | Sequence[str],
    cfg: NormalizeConfig | None = None,
) -> np.ndarray:
    """Feature vector aligned with FEATURE_NAMES; every entry in [0, 1].
    Symmetric in its two arguments, maximal (all ones) for identical
    non-degenerate inputs."""
    cfg = cfg or NormalizeConfig()
    qt, _ = _as_tokens(query)
    ct, _ = _as_tokens(candidate)
    return _features_from_stats(_stats(qt, cfg.libc_names), _stats(ct, cfg.libc_names))


# ============================================================================
# Scorers
# ============================================================================

_CLAMP = 1e-6


class Scorer:
    """Base: subclasses provide score_pair returning a raw logit."""

    name = "scorer"
    needs_tokens = True

    def score_pair(
        self,
        query: TokenSequence | Sequence[str],
        candidate: TokenSequence | Sequence[str],
        query_id: str | None = None,
        candidate_id: str | None = None,
    ) -> float:
        raise NotImplementedError


class LexicalScorer(Scorer):
    """Logit of the mean of the non-bias features, clamped away from 0/1 so
    the logit stays finite.  No training required."""

    name = "lexical"

    def __init__(self, cfg: NormalizeConfig | None = None) -> None:
        self.cfg = cfg or NormalizeConfig()

    def score_pair(self, query, candidate, query_id=None, candidate_id=None) -> float:
        qt, _ = _as_tokens(query)
        ct, _ = _as_tokens(candidate)
        feats = _features_from_stats(
            _stats(qt, self.cfg.libc_names), _stats(ct, self.cfg.libc_names)
        )
        p = float(feats[:-1].mean())
        p = min(max(p, _CLAMP), 1.0 - _CLAMP)
        return math.log(p / (1.0 - p))


@dataclass(frozen=True)
class LinearScorerModel:
    """Learned weights over FEATURE_NAMES plus the training recipe that
    produced them (enough to reproduce the run)."""

    weights: tuple[float, ...]
    margin: float = 1.0
    seed: int = 0
    epochs: int = 1
    learning_rate: float = 0.01

    def __post_init__(self) -> None:
        if len(self.weights) != len(FEATURE_NAMES):
            raise ScorerError(
                f"model has {len(self.weights)} weights, expected {len(FEATURE_NAMES)}"
            )

    def to_json(self) -> dict[str, object]:
        return {
            "weights": list(self.weights),
            "margin": self.margin,
            "seed": self.seed,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, object]) -> "LinearScorerModel":
        try:
            return cls(
                weights=tuple(float(w) for w in obj["weights"]),  # type: ignore[union-attr]
                margin=float(obj.get("margin", 1.0)),  # type: ignore[arg-type]
                seed=int(obj.get("seed", 0)),  # type: ignore[arg-type]
                epochs=int(obj.get("epochs", 1)),  # type: ignore[arg-type]
                learning_rate=float(obj.get("learning_rate", 0.01)),  # type: ignore[arg-type]
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ScorerError(f"bad model file: {exc}") from None

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "LinearScorerModel":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def uniform_model(**kwargs) -> LinearScorerModel:
    """The untrained starting point: equal weight on every feature."""
    n = len(FEATURE_NAMES)
    return LinearScorerModel(weights=tuple([1.0 / n] * n), **kwargs)


class LinearScorer(Scorer):
    name = "linear"

    def __init__(
        self, model: LinearScorerModel, cfg: NormalizeConfig | None = None
    ) -> None:
        self.model = model
        self.cfg = cfg or NormalizeConfig()
        self._w = np.asarray(model.weights, dtype=np.float64)

    def score_pair(self, query, candidate, query_id=None, candidate_id=None) -> float:
        qt, _ = _as_tokens(query)
        ct, _ = _as_tokens(candidate)
        feats = _features_from_stats(
            _stats(qt, self.cfg.libc_names), _stats(ct, self.cfg.libc_names)
        )
        return float(self._w @ feats)


class OracleScorer(Scorer):
    """+1 for true variants, -1 otherwise, straight from source keys.  Only
    usable where ground truth exists; it exists to measure the re-ranking
    upper bound, never to ship."""

    name = "oracle"
    needs_tokens = False

    def __init__(self, pool: Pool) -> None:
        self._pool = pool

    def score_pair(self, query, candidate, query_id=None, candidate_id=None) -> float:
        _, qid = _as_tokens(query) if query is not None else ((), None)
        _, cid = _as_tokens(candidate) if candidate is not None else ((), None)
        qid = query_id or qid
        cid = candidate_id or cid
        if not qid or not cid:
            raise ScorerError("oracle scorer needs query and candidate ids")
        qk = self._pool.record(qid).source_key
        ck = self._pool.record(cid).source_key
        return 1.0 if qk == ck else -1.0


def score(
    scorer: Scorer,
    pair: PairEncoding | tuple,
) -> ScoredCandidate:
    """Score one pair: either a joint PairEncoding (split at its separator;
    a truncated-away query leaves an empty query side) or a (query,
    candidate) tuple of token sequences."""
    if isinstance(pair, PairEncoding):
        if pair.sep_index is None:
            q_tokens: tuple[str, ...] = ()
            c_tokens = pair.tokens
        else:
            q_tokens = pair.tokens[: pair.sep_index]
            c_tokens = pair.tokens[pair.sep_index + 1 :]
        raw = scorer.score_pair(
            q_tokens, c_tokens, query_id=pair.query_id, candidate_id=pair.candidate_id
        )
        return ScoredCandidate(id=pair.candidate_id, raw_score=raw)
    query, candidate = pair
    _, cid = _as_tokens(candidate)
    raw = scorer.score_pair(query, candidate)
    return ScoredCandidate(id=cid or "", raw_score=raw)


def rerank_window(
    scorer: Scorer,
    query: TokenSequence | None,
    window,
    candidate_tokens: Mapping[str, TokenSequence] | None = None,
    query_id: str | None = None,
) -> list[ScoredCandidate]:
    """Score every window candidate against the query and sort.  Output is
    independent of window input order and of any batching the scorer applies
    internally."""
    qid = query_id or (query.origin_id if query is not None else None)
    ids = [c[0] for c in window.candidates]
    if scorer.needs_tokens:
        if query is None:
            raise ScorerError(f"scorer {scorer.name!r} needs query tokens")
        if candidate_tokens is None:
            raise ScorerError(f"scorer {scorer.name!r} needs candidate tokens")
        missing = [i for i in ids if i not in candidate_tokens]
        if missing:
            raise ScorerError(f"no tokens for candidate(s) {missing[:5]}")
    if isinstance(scorer, ExternalScorer):
        pairs = [(query, candidate_tokens[i]) for i in ids]
        raws = scorer.client.score_batch_raw(pairs)
        scored = [ScoredCandidate(id=i, raw_score=r) for i, r in zip(ids, raws)]
    else:
        scored = []
        for i in ids:
            cand = candidate_tokens[i] if scorer.needs_tokens else None
            raw = scorer.score_pair(query, cand, query_id=qid, candidate_id=i)
            scored.append(ScoredCandidate(id=i, raw_score=raw))
    return sort_candidates(scored)


# ============================================================================
# Margin training
# ============================================================================


def margin_loss(y_pos: float, y_neg: float, margin: float) -> float:
    """Hinge on the score gap: zero once y_pos exceeds y_neg by the margin."""
    if margin <= 0.0:
        raise ScorerError("margin must be > 0")
    return max(0.0, -(y_pos - y_neg) + margin)


@dataclass(frozen=True)
class TrainConfig:
    margin: float = 1.0
    learning_rate: float = 0.01
    epochs: int = 1
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self) -> None:
        if self.margin <= 0.0:
            raise ScorerError("margin must be > 0")
        if self.learning_rate <= 0.0:
            raise ScorerError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ScorerError("epochs must be >= 1")


@dataclass(frozen=True)
class TrainResult:
    model: LinearScorerModel
    initial_mean_loss: float
    final_mean_loss: float
    triplet_count: int


def _triplet_diffs(
    triplets: Sequence[Triplet],
    pool: Pool,
    norm_cfg: NormalizeConfig,
    tokens_by_id: Mapping[str, TokenSequence] | None = None,
) -> np.ndarray:
    """feat(anchor, positive) - feat(anchor, negative), one row per triplet."""

    def toks(fid: str) -> tuple[str, ...]:
        if tokens_by_id is not None and fid in tokens_by_id:
            return tokens_by_id[fid].tokens
        return normalize_function(pool.record(fid), norm_cfg).tokens

    libc = norm_cfg.libc_names
    diffs = np.empty((len(triplets), len(FEATURE_NAMES)), dtype=np.float64)
    for row, t in enumerate(triplets):
        sa = _stats(toks(t.anchor_id), libc)
        fp = _features_from_stats(sa, _stats(toks(t.positive_id), libc))
        fn = _features_from_stats(sa, _stats(toks(t.negative_id), libc))
        diffs[row] = fp - fn
    return diffs


def train_linear_scorer(
    triplets: Sequence[Triplet],
    pool: Pool,
    cfg: TrainConfig | None = None,
    norm_cfg: NormalizeConfig | None = None,
    tokens_by_id: Mapping[str, TokenSequence] | None = None,
) -> TrainResult:
    """Margin-trained linear scorer via per-triplet subgradient descent.

    For a triplet with feature difference d the loss is max(0, m - w.d); the
    subgradient is -d while the hinge is active and exactly zero at and past
    the kink (loss 0), so each violating triplet moves the weights by
    learning_rate * d.  Triplet order is reshuffled per epoch under the
    seed.  Mean losses over all triplets are measured before and after.
    """
    if not triplets:
        raise ScorerError("no triplets to train on")
    cfg = cfg or TrainConfig()
    norm_cfg = norm_cfg or NormalizeConfig()
    diffs = _triplet_diffs(triplets, pool, norm_cfg, tokens_by_id)

    def mean_loss(w: np.ndarray) -> float:
        gaps = diffs @ w
        return float(np.maximum(0.0, cfg.margin - gaps).mean())

    w = np.asarray(uniform_model().weights, dtype=np.float64)
    initial = mean_loss(w)
    rng = random.Random(cfg.seed)
    order = list(range(len(triplets)))
    lr = cfg.learning_rate
    for _ in range(cfg.epochs):
        if cfg.shuffle:
            rng.shuffle(order)
        for i in order:
            d = diffs[i]
            if cfg.margin - float(w @ d) > 0.0:
                w = w + lr * d
    final = mean_loss(w)
    model = LinearScorerModel(
        weights=tuple(float(x) for x in w),
        margin=cfg.margin,
        seed=cfg.seed,
        epochs=cfg.epochs,
        learning_rate=cfg.learning_rate,
    )
    return TrainResult(
        model=model,
        initial_mean_loss=initial,
        final_mean_loss=final,
        triplet_count=len(triplets),
    )


# ============================================================================
# External scorer wire protocol (newline-delimited JSON over TCP or stdio)
# ============================================================================

HANDSHAKE_VERSION = 1
DEFAULT_BATCH_SIZE = 50
DEFAULT_TIMEOUT = 30.0


class _TcpTransport:
    kind = "tcp"

    def __init__(self, host: str, port: int, connect_timeout: float) -> None:
        try:
            self._sock = socket.create_connection((host, port), timeout=connect_timeout)
        except OSError as exc:
            raise TransportError(f"cannot connect to {host}:{port}: {exc}") from None
        self._buf = b""

    def send_line(self, text: str) -> None:
        try:
            self._sock.sendall(text.encode("utf-8") + b"\n")
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from None

    def recv_line(self, deadline: float) -> str:
        while b"\n" not in self._buf:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TransportError("timed out waiting for response")
            self._sock.settimeout(remaining)
            try:
                chunk = self._sock.recv(65536)
            except socket.timeout:
                raise TransportError("timed out waiting for response") from None
            except OSError as exc:
                raise TransportError(f"recv failed: {exc}") from None
            if not chunk:
                raise TransportError("connection closed by service")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line.decode("utf-8")

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class _StdioTransport:
    kind = "stdio"

    def __init__(self, argv: Sequence[str]) -> None:
        try:
            self._proc = subprocess.Popen(
                list(argv),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
            )
        except OSError as exc:
            raise TransportError(f"cannot spawn {argv!r}: {exc}") from None
        self._buf = b""

    def send_line(self, text: str) -> None:
        try:
            assert self._proc.stdin is not None
            self._proc.stdin.write(text.encode("utf-8") + b"\n")
            self._proc.stdin.flush()
        except (OSError, ValueError) as exc:
            raise TransportError(f"send failed: {exc}") from None

    def recv_line(self, deadline: float) -> str:
        assert self._proc.stdout is not None
        fd = self._proc.stdout.fileno()
        while b"\n" not in self._buf:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TransportError("timed out waiting for response")
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                raise TransportError("timed out waiting for response")
            chunk = os.read(fd, 65536)
            if not chunk:
                raise TransportError("service closed its stdout")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line.decode("utf-8")

    def close(self) -> None:
        for stream in (self._proc.stdin, self._proc.stdout):
            try:
                if stream is not None:
                    stream.close()
            except OSError:
                pass
        try:
            self._proc.wait(timeout=2.0)
        except subprocess.TimeoutExpired:
            self._proc.kill()


@dataclass(frozen=True)
class ScorerTarget:
    """Parsed ``host:port`` or ``stdio:<command>`` address."""

    kind: str  # "tcp" | "stdio"
    host: str = ""
    port: int = 0
    argv: tuple[str, ...] = ()

    @classmethod
    def parse(cls, text: str) -> "ScorerTarget":
        if text.startswith("stdio:"):
            import shlex

            argv = tuple(shlex.split(text[len("stdio:") :]))
            if not argv:
                raise ScorerError("empty stdio scorer command")
            return cls(kind="stdio", argv=argv)
        host, sep, port = text.rpartition(":")
        if not sep or not port.isdigit():
            raise ScorerError(f"bad scorer address {text!r}: want host:port or stdio:cmd")
        return cls(kind="tcp", host=host, port=int(port))


class ScorerClient:
    """Client side of the scoring protocol.

    Handshake: send {"resim_scorer": 1}, expect {"ok": true, "name": ...}.
    Requests {"id": n, "q": [...], "c": [...]} go out in batches; responses
    {"id": n, "score": x} may arrive in any order but each id must be
    answered exactly once with a finite score.  One transport-level retry
    (fresh connection, whole batch resent); protocol violations fail fast.
    """

    def __init__(
        self,
        target: ScorerTarget,
        batch_size: int = DEFAULT_BATCH_SIZE,
        timeout: float = DEFAULT_TIMEOUT,
    ) -> None:
        if batch_size < 1:
            raise ScorerError("batch_size must be >= 1")
        self.target = target
        self.batch_size = batch_size
        self.timeout = timeout
        self._transport: _TcpTransport | _StdioTransport | None = None
        self._next_id = 0
        self.service_name = ""

    def _connect(self) -> None:
        if self.target.kind == "tcp":
            self._transport = _TcpTransport(self.target.host, self.target.port, self.timeout)
        else:
            self._transport = _StdioTransport(self.target.argv)
        deadline = time.monotonic() + self.timeout
        self._transport.send_line(json.dumps({"resim_scorer": HANDSHAKE_VERSION}))
        reply_line = self._transport.recv_line(deadline)
        try:
            reply = json.loads(reply_line)
        except json.JSONDecodeError:
            raise ProtocolError(f"bad handshake reply: {reply_line!r}") from None
        if not isinstance(reply, dict) or reply.get("ok") is not True:
            detail = reply.get("error") if isinstance(reply, dict) else reply_line
            raise ProtocolError(f"service refused handshake: {detail}")
        self.service_name = str(reply.get("name", ""))

    def _teardown(self) -> None:
        if self._transport is not None:
            self._transport.close()
            self._transport = None

    def close(self) -> None:
        if self._transport is not None:
            try:
                self._transport.send_line(json.dumps({"bye": True}))
            except TransportError:
                pass
            self._teardown()

    def __enter__(self) -> "ScorerClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def score_batch_raw(self, pairs: Sequence[tuple]) -> list[float]:
        """Scores for (query, candidate) token pairs, order-aligned with the
        input.  Splits into wire batches of at most batch_size."""
        out: list[float] = []
        for start in range(0, len(pairs), self.batch_size):
            out.extend(self._one_batch(pairs[start : start + self.batch_size]))
        return out

    def _one_batch(self, pairs: Sequence[tuple]) -> list[float]:
        last_exc: TransportError | None = None
        for attempt in range(2):  # one retry on transport errors
            try:
                if self._transport is None:
                    self._connect()
                return self._send_and_collect(pairs)
            except TransportError as exc:
                self._teardown()
                last_exc = exc
        raise TransportError(f"scoring failed after retry: {last_exc}")

    def _send_and_collect(self, pairs: Sequence[tuple]) -> list[float]:
        assert self._transport is not None
        ids = []
        for query, candidate in pairs:
            qt, _ = _as_tokens(query)
            ct, _ = _as_tokens(candidate)
            rid = self._next_id
            self._next_id += 1
            ids.append(rid)
            self._transport.send_line(
                json.dumps({"id": rid, "q": list(qt), "c": list(ct)})
            )
        expected = set(ids)
        collected: dict[int, float] = {}
        deadline = time.monotonic() + self.timeout
        while len(collected) < len(ids):
            line = self._transport.recv_line(deadline)
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                raise ProtocolError(f"malformed response line: {line!r}") from None
            if not isinstance(obj, dict):
                raise ProtocolError(f"malformed response line: {line!r}")
            rid = obj.get("id")
            if obj.get("error") is not None:
                raise ProtocolError(f"service error for pair id {rid}: {obj['error']}")
            if rid not in expected:
                raise ProtocolError(f"response for unknown pair id {rid}")
            if rid in collected:
                raise ProtocolError(f"duplicate response for pair id {rid}")
            value = obj.get("score")
            if not isinstance(value, (int, float)) or not math.isfinite(float(value)):
                raise ProtocolError(f"non-finite score for pair id {rid}: {value!r}")
            collected[rid] = float(value)
        return [collected[rid] for rid in ids]


class ExternalScorer(Scorer):
    """Scorer backed by a remote service speaking the wire protocol."""

    needs_tokens = True

    def __init__(self, client: ScorerClient) -> None:
        self.client = client
        target = client.target
        where = f"{target.host}:{target.port}" if target.kind == "tcp" else "stdio"
        self.name = f"external:{where}"

    def score_pair(self, query, candidate, query_id=None, candidate_id=None) -> float:
        return self.client.score_batch_raw([(query, candidate)])[0]


def external_score_batch(
    client: ScorerClient, pairs: Sequence[tuple]
) -> list[ScoredCandidate]:
    """Batch scores as ScoredCandidates, order-aligned with the input; the
    candidate's origin id is used when it has one."""
    raws = client.score_batch_raw(pairs)
    out: list[ScoredCandidate] = []
    for (query, candidate), raw in zip(pairs, raws):
        _, cid = _as_tokens(candidate)
        out.append(ScoredCandidate(id=cid or "", raw_score=raw))
    return out
