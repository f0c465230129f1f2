"""Evaluation harness: Recall@k, nDCG@k, oracle upper bound, sweeps, and a
synthetic corpus generator for desk-scale experiments.

Ground truth is the source-key equivalence class: every other compilation of
the query's source counts as relevant, nothing else does.  nDCG discounts a
hit at rank i (1-based) by 1/log(1+i) and normalizes by the ideal prefix, so
it rewards putting variants early; Recall@k ignores order inside the top k.
Logs are natural; the ratio is invariant to the base, and a test pins that.

The oracle re-ranker sorts a retrieval window by ground truth (variants
first, ascending id inside each side).  Its metrics are the ceiling any
re-ranker could reach on that window, which separates "the window missed the
variant" from "the scorer ranked it badly".
"""

from __future__ import annotations

import json
import math
import random
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import FunctionRecord, Pool, QueryEntry, QuerySet, variants_of
from .index import VectorIndex, Window
from .pipeline import SearchConfig, SearchResult, ensemble_search, search
from .normalize import TokenSequence


class EvalError(Exception):
    """Bad metric arguments or mismatched runs."""


# ============================================================================
# Metrics
# ============================================================================


def recall_at_k(ranked_ids: Sequence[str], relevant: Iterable[str], k: int) -> float:
    """|relevant ∩ top-k| / |relevant|."""
    rel = set(relevant)
    if not rel:
        raise EvalError("relevant set is empty")
    if k < 1:
        raise EvalError("k must be >= 1")
    hits = sum(1 for fid in ranked_ids[:k] if fid in rel)
    return hits / len(rel)


def ndcg_at_k(
    ranked_ids: Sequence[str],
    relevant: Iterable[str],
    k: int,
    log_base: float | None = None,
) -> float:
    """Binary-gain nDCG with 1/log(1+i) discounts at 1-based ranks.

    The ideal prefix has min(k, |relevant|) hits up front; ranks beyond the
    ranking's end contribute nothing.  log_base=None means natural log (the
    ratio is base-invariant anyway).
    """
    rel = set(relevant)
    if not rel:
        raise EvalError("relevant set is empty")
    if k < 1:
        raise EvalError("k must be >= 1")

    def discount(i: int) -> float:
        v = math.log(1 + i)
        return v if log_base is None else v / math.log(log_base)

    gained = sum(
        1.0 / discount(i)
        for i, fid in enumerate(ranked_ids[:k], start=1)
        if fid in rel
    )
    ideal = sum(1.0 / discount(i) for i in range(1, min(k, len(rel)) + 1))
    return gained / ideal


def oracle_rerank(window: Window | Sequence[str], relevant: Iterable[str]) -> list[str]:
    """Best possible ordering of a window: true variants first.  Ascending id
    inside each side keeps the output deterministic; any order inside a side
    yields the same binary-gain metrics."""
    ids = list(window.ids()) if isinstance(window, Window) else list(window)
    rel = set(relevant)
    hits = sorted(i for i in ids if i in rel)
    rest = sorted(i for i in ids if i not in rel)
    return hits + rest


# ============================================================================
# Run evaluation
# ============================================================================


@dataclass(frozen=True)
class QueryRun:
    """What evaluation needs from one executed query."""

    query_id: str
    final_ids: tuple[str, ...]
    window_ids: tuple[str, ...]
    group: str | None = None

    @classmethod
    def from_search_result(
        cls, result: SearchResult, group: str | None = None
    ) -> "QueryRun":
        return cls(
            query_id=result.query_id,
            final_ids=result.final_ids(),
            window_ids=result.window_ids(),
            group=group,
        )


@dataclass
class MetricReport:
    ks: tuple[int, ...]
    query_ids: tuple[str, ...]
    mean_ndcg: dict[int, float]
    mean_recall: dict[int, float]
    oracle_mean_ndcg: dict[int, float]
    oracle_mean_recall: dict[int, float]
    per_query: dict[str, dict[str, dict[int, float]]] = field(repr=False)
    group_means: dict[str, dict[str, object]] | None = None
    improvement: dict[str, dict[int, float]] | None = None

    def to_json(self) -> dict[str, object]:
        def km(d: Mapping[int, float]) -> dict[str, float]:
            return {str(k): v for k, v in d.items()}

        obj: dict[str, object] = {
            "ks": list(self.ks),
            "query_ids": list(self.query_ids),
            "mean_ndcg": km(self.mean_ndcg),
            "mean_recall": km(self.mean_recall),
            "oracle_mean_ndcg": km(self.oracle_mean_ndcg),
            "oracle_mean_recall": km(self.oracle_mean_recall),
            "per_query": {
                qid: {metric: km(vals) for metric, vals in metrics.items()}
                for qid, metrics in self.per_query.items()
            },
        }
        if self.group_means is not None:
            obj["group_means"] = {
                g: {
                    "count": gm["count"],
                    "ndcg": km(gm["ndcg"]),  # type: ignore[arg-type]
                    "recall": km(gm["recall"]),  # type: ignore[arg-type]
                }
                for g, gm in self.group_means.items()
            }
        if self.improvement is not None:
            obj["improvement_pct"] = {m: km(v) for m, v in self.improvement.items()}
        return obj

    @classmethod
    def from_json(cls, obj: Mapping[str, object]) -> "MetricReport":
        def mk(d: Mapping[str, float]) -> dict[int, float]:
            return {int(k): float(v) for k, v in d.items()}

        per_query = {
            qid: {metric: mk(vals) for metric, vals in metrics.items()}
            for qid, metrics in obj.get("per_query", {}).items()  # type: ignore[union-attr]
        }
        return cls(
            ks=tuple(int(k) for k in obj["ks"]),  # type: ignore[union-attr]
            query_ids=tuple(str(q) for q in obj["query_ids"]),  # type: ignore[union-attr]
            mean_ndcg=mk(obj["mean_ndcg"]),  # type: ignore[arg-type]
            mean_recall=mk(obj["mean_recall"]),  # type: ignore[arg-type]
            oracle_mean_ndcg=mk(obj["oracle_mean_ndcg"]),  # type: ignore[arg-type]
            oracle_mean_recall=mk(obj["oracle_mean_recall"]),  # type: ignore[arg-type]
            per_query=per_query,
        )

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def format_table(self) -> str:
        """Fixed-width summary: one nDCG and one Recall column per k."""
        headers = [f"nDCG@{k}" for k in self.ks] + [f"R@{k}" for k in self.ks]
        rows: list[tuple[str, list[float]]] = [
            (
                "run",
                [self.mean_ndcg[k] for k in self.ks]
                + [self.mean_recall[k] for k in self.ks],
            ),
            (
                "oracle",
                [self.oracle_mean_ndcg[k] for k in self.ks]
                + [self.oracle_mean_recall[k] for k in self.ks],
            ),
        ]
        if self.group_means is not None:
            for g, gm in self.group_means.items():
                ndcg: Mapping[int, float] = gm["ndcg"]  # type: ignore[assignment]
                recall: Mapping[int, float] = gm["recall"]  # type: ignore[assignment]
                rows.append(
                    (
                        f"group {g} (n={gm['count']})",
                        [ndcg[k] for k in self.ks] + [recall[k] for k in self.ks],
                    )
                )
        if self.improvement is not None:
            rows.append(
                (
                    "delta%",
                    [self.improvement["ndcg"][k] for k in self.ks]
                    + [self.improvement["recall"][k] for k in self.ks],
                )
            )
        label_w = max(len(r[0]) for r in rows) + 2
        col_w = max(8, max(len(h) for h in headers) + 2)
        out = [" " * label_w + "".join(h.rjust(col_w) for h in headers)]
        for label, vals in rows:
            out.append(
                label.ljust(label_w)
                + "".join(f"{v:{col_w}.4f}" for v in vals)
            )
        return "\n".join(out)


def evaluate_run(
    runs: Sequence[QueryRun],
    pool: Pool,
    ks: Sequence[int],
    include_self: bool = True,
    baseline: MetricReport | None = None,
) -> MetricReport:
    """Per-query and mean metrics, plus the oracle ceiling over each query's
    own retrieval window.  ks above the pool size are clamped (warned);
    baseline comparison requires the identical query set."""
    if not runs:
        raise EvalError("no runs to evaluate")
    if len({r.query_id for r in runs}) != len(runs):
        raise EvalError("duplicate query ids in runs")
    ks = tuple(sorted(set(int(k) for k in ks)))
    if not ks or ks[0] < 1:
        raise EvalError("ks must be positive")
    clamped = {k: min(k, len(pool)) for k in ks}
    if any(clamped[k] != k for k in ks):
        warnings.warn(
            f"some ks exceed the pool size {len(pool)}; metrics are clamped",
            stacklevel=2,
        )

    per_query: dict[str, dict[str, dict[int, float]]] = {}
    for run in runs:
        qid = run.query_id
        rel = variants_of(pool, qid, include_self=include_self)
        final = run.final_ids
        window = run.window_ids
        if not include_self:
            final = tuple(i for i in final if i != qid)
            window = tuple(i for i in window if i != qid)
        oracle_ids = oracle_rerank(window, rel)
        per_query[qid] = {
            "ndcg": {k: ndcg_at_k(final, rel, clamped[k]) for k in ks},
            "recall": {k: recall_at_k(final, rel, clamped[k]) for k in ks},
            "oracle_ndcg": {k: ndcg_at_k(oracle_ids, rel, clamped[k]) for k in ks},
            "oracle_recall": {k: recall_at_k(oracle_ids, rel, clamped[k]) for k in ks},
        }

    def mean_over(metric: str) -> dict[int, float]:
        return {
            k: sum(per_query[r.query_id][metric][k] for r in runs) / len(runs)
            for k in ks
        }

    group_means: dict[str, dict[str, object]] | None = None
    if any(r.group is not None for r in runs):
        group_means = {}
        for g in sorted({r.group for r in runs if r.group is not None}):
            members = [r for r in runs if r.group == g]
            group_means[g] = {
                "count": len(members),
                "ndcg": {
                    k: sum(per_query[m.query_id]["ndcg"][k] for m in members)
                    / len(members)
                    for k in ks
                },
                "recall": {
                    k: sum(per_query[m.query_id]["recall"][k] for m in members)
                    / len(members)
                    for k in ks
                },
            }

    improvement: dict[str, dict[int, float]] | None = None
    if baseline is not None:
        if set(baseline.query_ids) != {r.query_id for r in runs}:
            raise EvalError("baseline evaluates a different query set")
        shared = [k for k in ks if k in baseline.mean_ndcg]
        if not shared:
            raise EvalError("baseline shares no k values with this run")

        def pct(new: float, old: float) -> float:
            if old == 0.0:
                return math.inf if new > 0.0 else 0.0
            return (new - old) / old * 100.0

        mean_n = mean_over("ndcg")
        mean_r = mean_over("recall")
        improvement = {
            "ndcg": {k: pct(mean_n[k], baseline.mean_ndcg[k]) for k in shared},
            "recall": {k: pct(mean_r[k], baseline.mean_recall[k]) for k in shared},
        }

    return MetricReport(
        ks=ks,
        query_ids=tuple(r.query_id for r in runs),
        mean_ndcg=mean_over("ndcg"),
        mean_recall=mean_over("recall"),
        oracle_mean_ndcg=mean_over("oracle_ndcg"),
        oracle_mean_recall=mean_over("oracle_recall"),
        per_query=per_query,
        group_means=group_means,
        improvement=improvement,
    )


# ============================================================================
# Window sweep / timing profile
# ============================================================================


@dataclass(frozen=True)
class SweepRow:
    w: int
    mean_t_phi: float
    mean_t_sim: float
    mean_t_rho: float
    report: MetricReport | None


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]
    slope: float
    intercept: float
    r_squared: float

    def mean_t_rho(self, w: int) -> float:
        for row in self.rows:
            if row.w == w:
                return row.mean_t_rho
        raise EvalError(f"no sweep row for w={w}")

    def to_json(self) -> dict[str, object]:
        return {
            "rows": [
                {
                    "w": r.w,
                    "mean_t_phi": r.mean_t_phi,
                    "mean_t_sim": r.mean_t_sim,
                    "mean_t_rho": r.mean_t_rho,
                    "report": r.report.to_json() if r.report else None,
                }
                for r in self.rows
            ],
            "fit": {
                "slope": self.slope,
                "intercept": self.intercept,
                "r_squared": self.r_squared,
            },
        }


def _fit_line(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, float, float]:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if len(x) == 1:  # a single point is its own (flat) line
        return 0.0, float(y[0]), 1.0
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), r2


def window_sweep(
    cfg: SearchConfig,
    ws: Sequence[int],
    queries: QuerySet,
    pool: Pool,
    indexes: Sequence[VectorIndex],
    tokens_by_id: Mapping[str, TokenSequence] | None = None,
    ks: Sequence[int] | None = None,
    with_metrics: bool = True,
) -> SweepResult:
    """Re-run the query set at each window width; report per-width phase
    timings (means over queries), quality metrics, and the least-squares line
    through (w, mean t_rho)."""
    ws = sorted(set(int(w) for w in ws))
    if not ws:
        raise EvalError("no window widths")
    if cfg.k > ws[0]:
        raise EvalError(f"k ({cfg.k}) must be <= smallest w ({ws[0]})")
    queries.validate(pool)
    rows: list[SweepRow] = []
    for w in ws:
        cfg_w = SearchConfig(
            embedders=cfg.embedders,
            scorer=cfg.scorer,
            w=w,
            k=cfg.k,
            include_self=cfg.include_self,
            norm_cfg=cfg.norm_cfg,
        )
        results = []
        for entry in queries.entries:
            if len(cfg.embedders) == 1:
                r = search(cfg_w, entry.query_id, pool, indexes[0], tokens_by_id)
            else:
                r = ensemble_search(cfg_w, entry.query_id, pool, indexes, tokens_by_id)
            results.append((entry, r))
        n = len(results)
        report = None
        if with_metrics:
            report = evaluate_run(
                [QueryRun.from_search_result(r, e.group) for e, r in results],
                pool,
                ks if ks is not None else [cfg.k],
                include_self=cfg.include_self,
            )
        rows.append(
            SweepRow(
                w=w,
                mean_t_phi=sum(r.timing.t_phi for _, r in results) / n,
                mean_t_sim=sum(r.timing.t_sim for _, r in results) / n,
                mean_t_rho=sum(r.timing.t_rho for _, r in results) / n,
                report=report,
            )
        )
    slope, intercept, r2 = _fit_line(
        [float(r.w) for r in rows], [r.mean_t_rho for r in rows]
    )
    return SweepResult(rows=tuple(rows), slope=slope, intercept=intercept, r_squared=r2)


# ============================================================================
# Synthetic corpus
# ============================================================================

_GP_REGS = ("rax", "rbx", "rcx", "rdx", "rsi", "rdi", "r8", "r9", "r10", "r11",
            "r12", "r13", "r14", "r15")
_ARITH = ("add", "sub", "and", "or", "xor", "shl", "shr", "imul")
_JUMPS = ("jmp", "je", "jne", "jg", "jl", "jge", "jle", "ja", "jb")
_SMALL_IMMS = (0, 1, 2, 3, 4, 5, 7, 8, 10, 15, 16, 20, 24, 31, 32, 48, 63, 64,
               100, 128, 255, 256, 512, 1000, 1024, 2048, 4096, 4999, 5000)
_LARGE_IMMS = (5001, 8192, 65535, 1048576, 4194304, 2147483647)
_DISPS = (4, 8, 12, 16, 24, 32, 40, 48, 64, 72, 80, 96, 104, 128, 168, 200, 256)
_LIBC_CALLS = ("printf", "malloc", "free", "memcpy", "memset", "strlen",
               "strcmp", "puts", "exit", "fopen", "fclose", "read", "write")
_MEM_BASES = ("rbp", "rsp", "rax", "rbx", "rcx", "rdi", "rsi")
_SIZES = ("", "dword ptr ", "qword ptr ")

# Template kinds and their sampling weights.  Jump targets are symbolic
# instruction indexes until materialization, so mutations can re-point them.
_KIND_WEIGHTS = (
    ("mov_rr", 14), ("mov_ri", 12), ("mov_rm", 8), ("mov_mr", 8),
    ("arith_rr", 12), ("arith_ri", 10), ("lea", 5), ("push", 4), ("pop", 4),
    ("cmp_rr", 6), ("test_rr", 3), ("jump", 9), ("call_libc", 3),
    ("call_user", 2),
)
_KINDS = tuple(k for k, _ in _KIND_WEIGHTS)
_WEIGHTS = tuple(w for _, w in _KIND_WEIGHTS)


def _random_template(rng: random.Random, n_hint: int) -> tuple:
    kind = rng.choices(_KINDS, weights=_WEIGHTS, k=1)[0]
    r = rng.choice
    if kind == "mov_rr":
        return (kind, r(_GP_REGS), r(_GP_REGS))
    if kind == "mov_ri":
        imm = r(_LARGE_IMMS) if rng.random() < 0.2 else r(_SMALL_IMMS)
        return (kind, r(_GP_REGS), imm)
    if kind in ("mov_rm", "mov_mr", "lea"):
        disp = r(_DISPS) if rng.random() < 0.9 else 8192
        return (kind, r(_GP_REGS), r(_SIZES), r(_MEM_BASES), r(("+", "-")), disp)
    if kind == "arith_rr":
        return (kind, r(_ARITH), r(_GP_REGS), r(_GP_REGS))
    if kind == "arith_ri":
        imm = r(_LARGE_IMMS) if rng.random() < 0.15 else r(_SMALL_IMMS)
        return (kind, r(_ARITH), r(_GP_REGS), imm)
    if kind in ("push", "pop"):
        return (kind, r(_GP_REGS))
    if kind in ("cmp_rr", "test_rr"):
        return (kind, r(_GP_REGS), r(_GP_REGS))
    if kind == "jump":
        return (kind, r(_JUMPS), rng.randrange(max(1, n_hint)))
    if kind == "call_libc":
        return (kind, r(_LIBC_CALLS))
    return ("call_user",)


def _rename_registers(template: tuple, mapping: Mapping[str, str]) -> tuple:
    return tuple(mapping.get(x, x) if isinstance(x, str) else x for x in template)


def _materialize(
    templates: Sequence[tuple], base_address: int, rng: random.Random
) -> list[str]:
    n = len(templates)
    addr = lambda i: base_address + 4 * i  # noqa: E731  (fixed 4-byte slots)
    lines: list[str] = []
    for i, t in enumerate(templates):
        a = f"0x{addr(i):x}"
        kind = t[0]
        if kind == "mov_rr":
            lines.append(f"{a} mov {t[1]}, {t[2]}")
        elif kind == "mov_ri":
            lines.append(f"{a} mov {t[1]}, {hex(t[2])}")
        elif kind == "mov_rm":
            lines.append(f"{a} mov {t[1]}, {t[2]}[{t[3]}{t[4]}{hex(t[5])}]")
        elif kind == "mov_mr":
            lines.append(f"{a} mov {t[2]}[{t[3]}{t[4]}{hex(t[5])}], {t[1]}")
        elif kind == "lea":
            lines.append(f"{a} lea {t[1]}, [{t[3]}{t[4]}{hex(t[5])}]")
        elif kind == "arith_rr":
            lines.append(f"{a} {t[1]} {t[2]}, {t[3]}")
        elif kind == "arith_ri":
            lines.append(f"{a} {t[1]} {t[2]}, {hex(t[3])}")
        elif kind == "push":
            lines.append(f"{a} push {t[1]}")
        elif kind == "pop":
            lines.append(f"{a} pop {t[1]}")
        elif kind == "cmp_rr":
            lines.append(f"{a} cmp {t[1]}, {t[2]}")
        elif kind == "test_rr":
            lines.append(f"{a} test {t[1]}, {t[2]}")
        elif kind == "jump":
            target = min(t[2], n - 1)
            lines.append(f"{a} {t[1]} 0x{addr(target):x}")
        elif kind == "call_libc":
            lines.append(f"{a} call {t[1]}")
        elif kind == "call_user":
            lines.append(f"{a} call sub_{rng.randrange(16**6):06x}")
        elif kind == "ret":
            lines.append(f"{a} ret")
        else:  # pragma: no cover - template kinds are closed
            raise AssertionError(f"unknown template kind {kind}")
    return lines


def _mutate(
    base: Sequence[tuple], rate: float, rng: random.Random
) -> list[tuple]:
    """Instruction-level substitutions/insertions/deletions at ``rate``, with
    jump targets remapped through the index shift, plus consistent register
    renaming (also gated by ``rate``).  rate 0 reproduces the input."""
    body = list(base[:-1])  # keep the trailing ret fixed
    out: list[tuple] = []
    index_map: dict[int, int] = {}
    for i, t in enumerate(body):
        op = None
        if rate > 0.0 and rng.random() < rate:
            op = rng.choices(("sub", "del", "ins"), weights=(2, 1, 1), k=1)[0]
        if op == "del" and len(body) > 4:
            continue
        if op == "sub":
            index_map[i] = len(out)
            out.append(_random_template(rng, len(body)))
            continue
        index_map[i] = len(out)
        out.append(t)
        if op == "ins":
            out.append(_random_template(rng, len(body)))
    # re-point surviving jumps at surviving instructions
    n_new = len(out) + 1
    remapped: list[tuple] = []
    for t in out:
        if t[0] == "jump":
            old = t[2]
            new = index_map.get(old)
            if new is None:  # target deleted: nearest surviving successor
                later = [index_map[j] for j in index_map if j >= old]
                new = min(later) if later else n_new - 1
            remapped.append((t[0], t[1], min(new, n_new - 1)))
        else:
            remapped.append(t)
    if rate > 0.0 and rng.random() < rate:
        regs = list(_GP_REGS)
        rng.shuffle(regs)
        size = rng.randint(4, 8)
        cycle = regs[:size]
        mapping = {cycle[i]: cycle[(i + 1) % size] for i in range(size)}
        remapped = [_rename_registers(t, mapping) for t in remapped]
    remapped.append(("ret",))
    return remapped


def generate_synthetic_corpus(
    classes: int,
    variants_per_class: int,
    mutation_rate: float,
    seed: int = 0,
) -> tuple[Pool, QuerySet]:
    """Pool of ``classes`` x ``variants_per_class`` functions plus one query
    per class (its variant 0).  Every draw comes from RNG streams keyed on
    (seed, class, variant), so output is reproducible bit for bit and
    independent of generation order."""
    if classes < 1 or variants_per_class < 1:
        raise EvalError("classes and variants_per_class must be >= 1")
    if not 0.0 <= mutation_rate < 1.0:
        raise EvalError("mutation_rate must be in [0, 1)")
    records: list[FunctionRecord] = []
    entries: list[QueryEntry] = []
    compilers = ("gcc", "clang")
    opts = ("O0", "O1", "O2", "O3")
    for ci in range(classes):
        rng_c = random.Random(f"{seed}:class:{ci}")
        n = rng_c.randint(14, 44)
        base_templates = [_random_template(rng_c, n) for _ in range(n - 1)]
        base_templates.append(("ret",))
        source_key = f"src{ci:05d}"
        for v in range(variants_per_class):
            rng_v = random.Random(f"{seed}:class:{ci}:variant:{v}")
            if v == 0:
                templates: list[tuple] = list(base_templates)
            else:
                templates = _mutate(base_templates, mutation_rate, rng_v)
            base_address = rng_v.randrange(0x400000, 0x800000, 16)
            fid = f"f{ci:05d}v{v}"
            records.append(
                FunctionRecord(
                    id=fid,
                    binary_id=f"bin{v:02d}",
                    source_key=source_key,
                    compiler=rng_v.choice(compilers),
                    opt_level=rng_v.choice(opts),
                    base_address=base_address,
                    instructions=tuple(
                        _materialize(templates, base_address, rng_v)
                    ),
                )
            )
        entries.append(QueryEntry(query_id=f"f{ci:05d}v0"))
    return Pool.from_records(records), QuerySet(tuple(entries))
