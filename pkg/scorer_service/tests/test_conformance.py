"""Protocol conformance against the search engine.

The engine re-ranks with its in-process linear scorer configured to
token-overlap-only weights — whose raw score is exactly the token-set
Jaccard this service serves — and then again with the scorer swapped for
this service over stdio and over TCP.  All three runs must produce the
same rankings on every window.  The engine is driven through its
installed ``resim`` command line only, so this test crosses nothing but
the public surfaces.
"""

from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import pytest

WINDOWS = 100  # one query window per synthetic class
W = 12  # candidates per window


def _run(argv: list[str]) -> subprocess.CompletedProcess:
    proc = subprocess.run(argv, capture_output=True, text=True)
    assert proc.returncode == 0, f"{argv}: rc={proc.returncode}\n{proc.stderr}"
    return proc


@pytest.fixture(scope="module")
def engine_ws(tmp_path_factory) -> dict[str, str]:
    root = tmp_path_factory.mktemp("conformance")
    corpus = root / "corpus.jsonl"
    queries = root / "queries.jsonl"
    index = root / "bow.idx"
    model = root / "jaccard_only.json"
    _run(["resim", "synth", "--classes", str(WINDOWS), "--variants", "3",
          "--mutation-rate", "0.3", "--seed", "11",
          "--out", str(corpus), "--queries-out", str(queries)])
    _run(["resim", "index", "build", "--corpus", str(corpus),
          "--out", str(index), "--embedder", "bow-hash", "--dim", "64"])
    # token-overlap-only weights: the linear raw score IS the set Jaccard
    model.write_text(json.dumps({"weights": [1, 0, 0, 0, 0, 0]}) + "\n",
                     encoding="utf-8")
    return {"root": str(root), "corpus": str(corpus), "queries": str(queries),
            "index": str(index), "model": str(model)}


def _query(engine_ws: dict[str, str], scorer: str, out: str) -> None:
    _run(["resim", "query", "--corpus", engine_ws["corpus"],
          "--index", engine_ws["index"], "--queries", engine_ws["queries"],
          "-w", str(W), "-k", str(W), "--scorer", scorer, "--out", out])


@pytest.fixture(scope="module")
def inprocess_run(engine_ws) -> str:
    out = str(Path(engine_ws["root"]) / "run_inprocess.jsonl")
    _query(engine_ws, "linear:" + engine_ws["model"], out)
    return out


def _load_rankings(path: str) -> list[tuple[str, list[list]]]:
    rankings = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            obj = json.loads(line)
            rankings.append((obj["query_id"],
                             [[c["id"], c["raw_score"]] for c in obj["final"]]))
    return rankings


def test_stdio_service_matches_inprocess_scorer(engine_ws, inprocess_run):
    out = str(Path(engine_ws["root"]) / "run_stdio.jsonl")
    _query(engine_ws,
           f"external:stdio:{sys.executable} -m scorer_service --stdio --scorer jaccard",
           out)
    assert _load_rankings(out) == _load_rankings(inprocess_run)
    assert len(_load_rankings(out)) == WINDOWS
    # not merely the same order: the data files are identical bytes
    assert Path(out).read_bytes() == Path(inprocess_run).read_bytes()


def test_tcp_service_matches_inprocess_scorer(engine_ws, inprocess_run):
    service = subprocess.Popen(
        [sys.executable, "-m", "scorer_service", "--port", "0"],
        stdout=subprocess.DEVNULL, stderr=subprocess.PIPE, text=True,
    )
    try:
        banner = service.stderr.readline()  # "listening on 127.0.0.1:PORT"
        address = banner.rsplit(" ", 1)[-1].strip()
        out = str(Path(engine_ws["root"]) / "run_tcp.jsonl")
        _query(engine_ws, f"external:{address}", out)
        assert Path(out).read_bytes() == Path(inprocess_run).read_bytes()
    finally:
        service.terminate()
        service.wait(timeout=5)


def test_windows_are_fully_scored(inprocess_run):
    for query_id, ranking in _load_rankings(inprocess_run):
        assert len(ranking) == W
        ids = [i for i, _ in ranking]
        assert len(set(ids)) == W
        # descending score with ties broken by ascending id
        keys = [(-score, i) for i, score in ranking]
        assert keys == sorted(keys), query_id
