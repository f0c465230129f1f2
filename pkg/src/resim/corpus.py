"""Corpus data model: function records, pools, query sets, and triplet mining.

A corpus is newline-delimited JSON, one record per line:

    {"id": "f00001v0", "binary_id": "bin0", "source_key": "src00001",
     "compiler": "gcc", "opt_level": "O2", "base_address": 4202496,
     "instructions": ["0x402000 push rbp", ...]}

Two records are equivalent iff their ``source_key`` values are equal.
Records are immutable once loaded; every structure here is safe to share
across worker threads.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol, Sequence


class CorpusError(Exception):
    """Malformed corpus data: bad JSON, missing fields, duplicate ids."""


# Exact field set of a corpus line; extras are rejected so that files
# round-trip byte-for-byte through load/save.
_RECORD_FIELDS = (
    "id",
    "binary_id",
    "source_key",
    "compiler",
    "opt_level",
    "base_address",
    "instructions",
)


@dataclass(frozen=True)
class FunctionRecord:
    """One disassembled function.

    ``instructions`` holds raw textual instructions of the form
    ``"<address> <mnemonic> [operands]"``.  ``base_address`` is the image
    address the function was loaded at; it anchors address rebasing during
    normalization.
    """

    id: str
    binary_id: str
    source_key: str
    compiler: str
    opt_level: str
    base_address: int
    instructions: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.id:
            raise CorpusError("record has empty id")
        if not self.source_key:
            raise CorpusError(f"record {self.id!r} has empty source_key")
        if not self.instructions:
            raise CorpusError(f"record {self.id!r} has no instructions")
        if not isinstance(self.base_address, int) or self.base_address < 0:
            raise CorpusError(f"record {self.id!r} has bad base_address")

    @classmethod
    def from_json(cls, obj: Mapping[str, object]) -> "FunctionRecord":
        missing = [f for f in _RECORD_FIELDS if f not in obj]
        if missing:
            raise CorpusError(f"missing fields {missing}")
        extra = sorted(set(obj) - set(_RECORD_FIELDS))
        if extra:
            raise CorpusError(f"unknown fields {extra}")
        instructions = obj["instructions"]
        if not isinstance(instructions, list) or not all(
            isinstance(i, str) for i in instructions
        ):
            raise CorpusError("instructions must be a list of strings")
        return cls(
            id=str(obj["id"]),
            binary_id=str(obj["binary_id"]),
            source_key=str(obj["source_key"]),
            compiler=str(obj["compiler"]),
            opt_level=str(obj["opt_level"]),
            base_address=obj["base_address"],  # type: ignore[arg-type]
            instructions=tuple(instructions),
        )

    def to_json(self) -> dict[str, object]:
        return {
            "id": self.id,
            "binary_id": self.binary_id,
            "source_key": self.source_key,
            "compiler": self.compiler,
            "opt_level": self.opt_level,
            "base_address": self.base_address,
            "instructions": list(self.instructions),
        }


@dataclass(frozen=True)
class Pool:
    """The searchable set of functions, indexed by id and by source_key."""

    records: tuple[FunctionRecord, ...]
    by_id: Mapping[str, FunctionRecord] = field(repr=False)
    by_source_key: Mapping[str, tuple[str, ...]] = field(repr=False)

    @classmethod
    def from_records(cls, records: Iterable[FunctionRecord]) -> "Pool":
        recs = tuple(records)
        if not recs:
            raise CorpusError("pool is empty")
        by_id: dict[str, FunctionRecord] = {}
        for r in recs:
            if r.id in by_id:
                raise CorpusError(f"duplicate record id {r.id!r}")
            by_id[r.id] = r
        groups: dict[str, list[str]] = {}
        for r in recs:
            groups.setdefault(r.source_key, []).append(r.id)
        by_source_key = {k: tuple(sorted(v)) for k, v in groups.items()}
        return cls(records=recs, by_id=by_id, by_source_key=by_source_key)

    def __len__(self) -> int:
        return len(self.records)

    def ids(self) -> tuple[str, ...]:
        return tuple(r.id for r in self.records)

    def record(self, function_id: str) -> FunctionRecord:
        try:
            return self.by_id[function_id]
        except KeyError:
            raise CorpusError(f"unknown function id {function_id!r}") from None


def variants_of(pool: Pool, query_id: str, include_self: bool = True) -> set[str]:
    """Ids sharing the query's source_key; the equivalence class used as
    ground truth everywhere.  ``include_self=False`` drops the query itself."""
    record = pool.record(query_id)
    out = set(pool.by_source_key[record.source_key])
    if not include_self:
        out.discard(query_id)
    return out


def load_corpus(path: str) -> Pool:
    """Load a newline-delimited JSON corpus.  Errors carry 1-based line
    numbers; duplicate ids are rejected by name."""
    records: list[FunctionRecord] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON: {exc}") from None
            try:
                rec = FunctionRecord.from_json(obj)
            except CorpusError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from None
            if rec.id in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate record id {rec.id!r}")
            seen.add(rec.id)
            records.append(rec)
    if not records:
        raise CorpusError(f"{path}: corpus is empty")
    return Pool.from_records(records)


def save_corpus(pool: Pool, path: str) -> None:
    """Inverse of load_corpus; load → save → load is an identity."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in pool.records:
            fh.write(json.dumps(rec.to_json()) + "\n")


# =============================================================================
# Query sets
# =============================================================================


@dataclass(frozen=True)
class QueryEntry:
    query_id: str
    group: str | None = None


@dataclass(frozen=True)
class QuerySet:
    """Ordered query ids with optional group labels (e.g. one label per CVE
    when reporting grouped means)."""

    entries: tuple[QueryEntry, ...]

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for e in self.entries:
            if e.query_id in seen:
                raise CorpusError(f"duplicate query id {e.query_id!r}")
            seen.add(e.query_id)

    def __len__(self) -> int:
        return len(self.entries)

    def ids(self) -> tuple[str, ...]:
        return tuple(e.query_id for e in self.entries)

    def validate(self, pool: Pool) -> None:
        for e in self.entries:
            if e.query_id not in pool.by_id:
                raise CorpusError(f"query id {e.query_id!r} not in pool")


def load_queries(path: str) -> QuerySet:
    """Queries file: newline-delimited JSON {"query_id": ..., "group": ...?}."""
    entries: list[QueryEntry] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON: {exc}") from None
            if "query_id" not in obj:
                raise CorpusError(f"{path}:{lineno}: missing query_id")
            group = obj.get("group")
            entries.append(QueryEntry(str(obj["query_id"]), group))
    if not entries:
        raise CorpusError(f"{path}: query set is empty")
    return QuerySet(tuple(entries))


def save_queries(queries: QuerySet, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in queries.entries:
            obj: dict[str, object] = {"query_id": e.query_id}
            if e.group is not None:
                obj["group"] = e.group
            fh.write(json.dumps(obj) + "\n")


# =============================================================================
# Triplet mining
# =============================================================================


class CandidateSource(Protocol):
    """Anything that can rank the pool against one of its own records.

    Implementations live above this module (an embedded pool with a vector
    index); mining only needs the ranked id list.
    """

    @property
    def name(self) -> str: ...

    def top_candidates(self, query_id: str, limit: int) -> list[str]: ...


@dataclass(frozen=True)
class Triplet:
    """(anchor, positive, negative) with the retriever that surfaced the
    negative.  Positives share the anchor's source_key; negatives must not."""

    anchor_id: str
    positive_id: str
    negative_id: str
    negative_source: str

    def to_json(self, seed: int, mining_depth: int) -> dict[str, object]:
        return {
            "anchor_id": self.anchor_id,
            "positive_id": self.positive_id,
            "negative_id": self.negative_id,
            "negative_source": self.negative_source,
            "seed": seed,
            "mining_depth": mining_depth,
        }


@dataclass(frozen=True)
class MiningResult:
    triplets: tuple[Triplet, ...]
    skipped: tuple[str, ...]  # anchors with no positive variant
    seed: int
    mining_depth: int


def _check_triplet(pool: Pool, t: Triplet) -> None:
    a = pool.record(t.anchor_id)
    p = pool.record(t.positive_id)
    n = pool.record(t.negative_id)
    if t.anchor_id == t.positive_id:
        raise CorpusError(f"triplet anchor == positive ({t.anchor_id!r})")
    if a.source_key != p.source_key:
        raise CorpusError(
            f"positive {t.positive_id!r} not equivalent to anchor {t.anchor_id!r}"
        )
    if a.source_key == n.source_key:
        raise CorpusError(
            f"negative {t.negative_id!r} equivalent to anchor {t.anchor_id!r}"
        )


def mine_triplets(
    pool: Pool,
    anchors: QuerySet,
    sources: Sequence[CandidateSource],
    negatives_per_source: int = 3,
    mining_depth: int = 10,
    seed: int = 0,
) -> MiningResult:
    """Mine hard-negative training triplets.

    For each anchor: one positive sampled uniformly from its other variants,
    then per candidate source up to ``negatives_per_source`` negatives sampled
    from the top ``mining_depth`` retrieved functions that are *not*
    equivalent to the anchor (equivalents are filtered before truncation).
    Anchors with no other variant are skipped and reported.

    The triplet count is exactly (anchors with a positive) x (negatives
    actually available per source, capped at ``negatives_per_source``); no
    other inflation or deduplication is applied.

    Deterministic for a fixed seed: per-anchor RNG streams are derived from
    string keys, so the result is independent of processing order, and the
    output is canonically ordered by anchor id.
    """
    if mining_depth < 1:
        raise CorpusError("mining_depth must be >= 1")
    if negatives_per_source < 1:
        raise CorpusError("negatives_per_source must be >= 1")
    if mining_depth < negatives_per_source:
        raise CorpusError("mining_depth must be >= negatives_per_source")
    anchors.validate(pool)
    names = [s.name for s in sources]
    if len(set(names)) != len(names):
        raise CorpusError(f"candidate source names not unique: {names}")

    triplets: list[Triplet] = []
    skipped: list[str] = []
    for anchor_id in sorted(anchors.ids()):
        positives = sorted(variants_of(pool, anchor_id, include_self=False))
        if not positives:
            skipped.append(anchor_id)
            continue
        pos_rng = random.Random(f"{seed}:pos:{anchor_id}")
        positive_id = pos_rng.choice(positives)
        equivalent = variants_of(pool, anchor_id, include_self=True)
        for source in sources:
            # Over-fetch so that filtering equivalents still leaves a full
            # top-mining_depth slate of non-equivalent candidates.
            fetched = source.top_candidates(anchor_id, mining_depth + len(equivalent))
            hard = [c for c in fetched if c not in equivalent][:mining_depth]
            if not hard:
                continue
            neg_rng = random.Random(f"{seed}:neg:{anchor_id}:{source.name}")
            take = min(negatives_per_source, len(hard))
            for negative_id in neg_rng.sample(hard, take):
                t = Triplet(anchor_id, positive_id, negative_id, source.name)
                _check_triplet(pool, t)
                triplets.append(t)
    return MiningResult(
        triplets=tuple(triplets),
        skipped=tuple(skipped),
        seed=seed,
        mining_depth=mining_depth,
    )


def save_triplets(result: MiningResult, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in result.triplets:
            fh.write(json.dumps(t.to_json(result.seed, result.mining_depth)) + "\n")


def load_triplets(path: str, pool: Pool | None = None) -> list[Triplet]:
    """Load triplets; when a pool is given, every line is re-validated against it."""
    out: list[Triplet] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON: {exc}") from None
            try:
                t = Triplet(
                    anchor_id=str(obj["anchor_id"]),
                    positive_id=str(obj["positive_id"]),
                    negative_id=str(obj["negative_id"]),
                    negative_source=str(obj["negative_source"]),
                )
            except KeyError as exc:
                raise CorpusError(f"{path}:{lineno}: missing field {exc}") from None
            if pool is not None:
                _check_triplet(pool, t)
            out.append(t)
    return out
