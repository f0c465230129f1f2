"""Retrieval correctness against brute-force selection, plus persistence."""

from __future__ import annotations

import random

import numpy as np
import pytest

from resim import (
    CorpusSearcher,
    EmbedderSpec,
    IndexError_,
    NormalizeConfig,
    VectorIndex,
    Window,
    WindowSource,
    build_index,
    index_pool,
    load_index,
    query_window,
    save_index,
)
from resim.index import timed_query

from util import make_record, make_pool, tiny_pool


def _brute_force(index: VectorIndex, qvec: np.ndarray, w: int) -> list[str]:
    """Reference: full sort on (-similarity, id) over the same unit rows."""
    q = np.asarray(qvec, dtype=np.float64)
    n = np.linalg.norm(q)
    if n > 0:
        q = q / n
    sims = index.rows @ q
    order = sorted(range(len(index.ids)), key=lambda i: (-sims[i], index.ids[i]))
    return [index.ids[i] for i in order[:w]]


def _random_index(rng: random.Random, n: int, dim: int) -> VectorIndex:
    rows = [(f"id{i:04d}", np.array([rng.gauss(0, 1) for _ in range(dim)]))
            for i in range(n)]
    return build_index(rows, EmbedderSpec("external", dim=dim, params={}))


def test_matches_brute_force_randomized():
    rng = random.Random("index-oracle")
    for trial in range(25):
        n = rng.randint(1, 300)
        dim = rng.choice([2, 3, 8])
        index = _random_index(rng, n, dim)
        q = np.array([rng.gauss(0, 1) for _ in range(dim)])
        for w in {1, 2, n // 2 + 1, n, n + 50}:
            got = query_window(index, q, w).ids()
            assert list(got) == _brute_force(index, q, w)[:w], f"trial {trial} w={w}"


def test_hand_built_cosines():
    rows = [
        ("east", np.array([1.0, 0.0])),
        ("north", np.array([0.0, 1.0])),
        ("diag", np.array([0.6, 0.8])),
        ("west", np.array([-1.0, 0.0])),
    ]
    index = build_index(rows, EmbedderSpec("external", dim=2, params={}))
    window = query_window(index, np.array([2.0, 0.0]), 4)  # normalization applies
    assert [c[0] for c in window.candidates] == ["east", "diag", "north", "west"]
    sims = dict(window.candidates)
    assert sims["east"] == pytest.approx(1.0)
    assert sims["diag"] == pytest.approx(0.6)
    assert sims["north"] == pytest.approx(0.0)
    assert sims["west"] == pytest.approx(-1.0)


def test_exact_ties_resolve_by_ascending_id():
    u = np.array([1.0, 0.0])
    v = np.array([0.0, 1.0])
    rows = [(f"u{i}", u.copy()) for i in (5, 3, 9, 1, 7, 2)]
    rows += [(f"v{i}", v.copy()) for i in (4, 8)]
    index = build_index(rows, EmbedderSpec("external", dim=2, params={}))
    # w below the tie-group size forces the partition path to split the tie
    got = query_window(index, u, 3).ids()
    assert list(got) == ["u1", "u2", "u3"]
    got = query_window(index, u, 7).ids()
    assert list(got) == ["u1", "u2", "u3", "u5", "u7", "u9", "v4"]


def test_windows_nest_monotonically():
    rng = random.Random("index-nesting")
    index = _random_index(rng, 120, 4)
    q = np.array([rng.gauss(0, 1) for _ in range(4)])
    widths = [1, 5, 17, 60, 120]
    windows = {w: list(query_window(index, q, w).ids()) for w in widths}
    for small, big in zip(widths, widths[1:]):
        assert windows[big][: len(windows[small])] == windows[small]


def test_zero_query_vector_yields_zero_sims_ascending_ids():
    rng = random.Random("index-zero")
    index = _random_index(rng, 20, 3)
    window = query_window(index, np.zeros(3), 5)
    assert list(window.ids()) == sorted(index.ids)[:5]
    assert all(s == 0.0 for _, s in window.candidates)


def test_window_clamps_to_pool_size():
    rng = random.Random("index-clamp")
    index = _random_index(rng, 7, 2)
    window = query_window(index, np.array([1.0, 0.0]), 50)
    assert len(window.candidates) == 7
    assert window.w == 50


def test_self_retrieval_on_real_pool():
    pool = tiny_pool()
    index = index_pool(EmbedderSpec("bow-hash", dim=64), pool, NormalizeConfig())
    for fid in pool.ids():
        window = query_window(index, index.vector_for(fid), 1, fid)
        assert window.ids() == (fid,)
        assert window.candidates[0][1] == pytest.approx(1.0)


def test_build_index_validations():
    spec = EmbedderSpec("external", dim=2, params={})
    with pytest.raises(IndexError_, match="zero vectors"):
        build_index([], spec)
    with pytest.raises(IndexError_, match="mixed"):
        build_index([("a", np.zeros(2)), ("b", np.zeros(3))], spec)
    with pytest.raises(IndexError_, match="duplicate"):
        build_index([("a", np.zeros(2)), ("a", np.ones(2))], spec)
    with pytest.raises(IndexError_, match="finite"):
        build_index([("a", np.array([np.nan, 1.0]))], spec)


def test_query_window_validations():
    index = build_index(
        [("a", np.ones(2))], EmbedderSpec("external", dim=2, params={})
    )
    with pytest.raises(IndexError_, match="w must be"):
        query_window(index, np.ones(2), 0)
    with pytest.raises(IndexError_, match="dim"):
        query_window(index, np.ones(3), 1)


def test_rows_are_unit_normalized_at_build():
    index = build_index(
        [("a", np.array([3.0, 4.0])), ("z", np.zeros(2))],
        EmbedderSpec("external", dim=2, params={}),
    )
    np.testing.assert_allclose(index.vector_for("a"), [0.6, 0.8])
    np.testing.assert_array_equal(index.vector_for("z"), [0.0, 0.0])


def test_timed_query_returns_same_window():
    rng = random.Random("index-timed")
    index = _random_index(rng, 30, 3)
    q = np.ones(3)
    window, seconds = timed_query(index, q, 5)
    assert window.ids() == query_window(index, q, 5).ids()
    assert seconds > 0.0


# ----------------------------------------------------------------------------
# Persistence
# ----------------------------------------------------------------------------


def test_roundtrip(tmp_path):
    pool = tiny_pool()
    spec = EmbedderSpec("bow-hash", dim=48, params={"seed": 3})
    index = index_pool(spec, pool)
    path = tmp_path / "x.rsim"
    save_index(index, str(path))
    loaded = load_index(str(path))
    assert loaded.ids == index.ids
    assert loaded.dim == index.dim
    assert loaded.embedder.name == "bow-hash"
    assert loaded.embedder.params == {"seed": 3}
    np.testing.assert_array_equal(loaded.rows, index.rows)
    q = index.vector_for("a1")
    assert query_window(loaded, q, 4).candidates == query_window(index, q, 4).candidates


def test_saved_file_is_deterministic(tmp_path):
    pool = tiny_pool()
    for name in ("one.rsim", "two.rsim"):
        save_index(index_pool(EmbedderSpec("bow-hash", dim=16), pool), str(tmp_path / name))
    assert (tmp_path / "one.rsim").read_bytes() == (tmp_path / "two.rsim").read_bytes()


def test_load_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.rsim"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(IndexError_, match="magic"):
        load_index(str(path))


def test_load_rejects_bad_version(tmp_path):
    pool = tiny_pool()
    path = tmp_path / "v.rsim"
    save_index(index_pool(EmbedderSpec("bow-hash", dim=8), pool), str(path))
    blob = bytearray(path.read_bytes())
    blob[4] = 99  # version field, little-endian u32 at offset 4
    path.write_bytes(bytes(blob))
    with pytest.raises(IndexError_, match="version"):
        load_index(str(path))


def test_load_rejects_truncation(tmp_path):
    pool = tiny_pool()
    path = tmp_path / "t.rsim"
    save_index(index_pool(EmbedderSpec("bow-hash", dim=8), pool), str(path))
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(IndexError_):
        load_index(str(path))


# ----------------------------------------------------------------------------
# Candidate sources
# ----------------------------------------------------------------------------


def test_window_source_matches_query_window():
    pool = tiny_pool()
    index = index_pool(EmbedderSpec("bow-hash", dim=32), pool)
    src = WindowSource(index)
    assert src.name == "bow-hash"
    expected = query_window(index, index.vector_for("a1"), 3).ids()
    assert src.top_candidates("a1", 3) == list(expected)
    with pytest.raises(IndexError_):
        src.top_candidates("ghost", 3)


def test_corpus_searcher_self_first():
    pool = tiny_pool()
    searcher = CorpusSearcher(EmbedderSpec("bow-hash", dim=64), pool)
    top = searcher.top_candidates("b", 2)
    assert top[0] == "b"
    assert searcher.name == "bow-hash"
