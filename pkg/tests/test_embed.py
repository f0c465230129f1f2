"""Embedding tests against a from-scratch reference implementation.

The reference below re-derives the hashing scheme (keyed blake2b into dim
buckets, token counts, L2 normalization) straight from hashlib, sharing no
code with the module under test.
"""

from __future__ import annotations

import hashlib
import logging
import math
import random

import numpy as np
import pytest

from resim import (
    BUILTIN_EMBEDDERS,
    EmbedError,
    EmbedderSpec,
    NormalizeConfig,
    TokenSequence,
    embed,
    embed_pool,
    get_embedder,
)

from util import make_record, make_pool, tiny_pool


def _ref_bucket(unit: str, dim: int, seed: int) -> int:
    digest = hashlib.blake2b(
        unit.encode("utf-8"), digest_size=8, key=str(seed).encode("utf-8")
    ).digest()
    return int.from_bytes(digest, "little") % dim


def _ref_vector(units: list[str], dim: int, seed: int) -> np.ndarray:
    vec = [0.0] * dim
    for unit in units:
        vec[_ref_bucket(unit, dim, seed)] += 1.0
    norm = math.sqrt(sum(x * x for x in vec))
    if norm > 0.0:
        vec = [x / norm for x in vec]
    return np.array(vec)


def _seq(toks: list[str], fid: str = "t") -> TokenSequence:
    return TokenSequence(origin_id=fid, tokens=tuple(toks))


def test_bow_hand_computed_counts():
    dim, seed = 16, 0
    ba = _ref_bucket("alpha", dim, seed)
    bb = _ref_bucket("beta", dim, seed)
    assert ba != bb  # chosen tokens do not collide at dim 16
    got = embed(EmbedderSpec("bow-hash", dim=dim), _seq(["alpha", "alpha", "beta"]))
    expected = np.zeros(dim)
    expected[ba] = 2.0 / math.sqrt(5.0)
    expected[bb] = 1.0 / math.sqrt(5.0)
    np.testing.assert_allclose(got, expected, rtol=0, atol=1e-15)


def test_bigram_hand_computed_units():
    dim, seed = 32, 0
    units = ["x\x1fy", "y\x1fx"]
    assert len({_ref_bucket(u, dim, seed) for u in units}) == 2
    got = embed(EmbedderSpec("bigram-hash", dim=dim), _seq(["x", "y", "x"]))
    np.testing.assert_allclose(got, _ref_vector(units, dim, seed), atol=1e-15)


@pytest.mark.parametrize("name", BUILTIN_EMBEDDERS)
def test_matches_reference_randomized(name):
    rng = random.Random(f"embed-ref:{name}")
    vocab = ["mov", "eax", "ebx", "[", "]", "+", "IMM", "call", "func", "ret", "5000"]
    for trial in range(60):
        dim = rng.choice([8, 32, 128])
        seed = rng.choice([0, 1, 7])
        tokens = [rng.choice(vocab) for _ in range(rng.randint(0, 40))]
        spec = EmbedderSpec(name, dim=dim, params={"seed": seed})
        got = embed(spec, _seq(tokens))
        if name == "bow-hash":
            units = tokens
        else:
            units = [tokens[i] + "\x1f" + tokens[i + 1] for i in range(len(tokens) - 1)]
        np.testing.assert_allclose(
            got, _ref_vector(units, dim, seed), atol=1e-12,
            err_msg=f"trial {trial}: {tokens}",
        )


@pytest.mark.parametrize("name", BUILTIN_EMBEDDERS)
def test_unit_norm_or_zero(name):
    rng = random.Random(f"embed-norm:{name}")
    for _ in range(40):
        tokens = [str(rng.randint(0, 30)) for _ in range(rng.randint(0, 25))]
        vec = embed(EmbedderSpec(name, dim=64), _seq(tokens))
        norm = float(np.linalg.norm(vec))
        assert norm == 0.0 or abs(norm - 1.0) < 1e-12


def test_empty_tokens_embed_to_zero():
    assert not embed(EmbedderSpec("bow-hash", dim=8), _seq([])).any()
    # a single token has no bigrams
    assert not embed(EmbedderSpec("bigram-hash", dim=8), _seq(["only"])).any()


def test_deterministic_across_instances():
    toks = _seq(["push", "rbp", "mov", "rbp", "rsp"])
    a = embed(EmbedderSpec("bow-hash", dim=64), toks)
    b = embed(EmbedderSpec("bow-hash", dim=64), toks)
    np.testing.assert_array_equal(a, b)


def test_hash_seed_changes_layout():
    toks = _seq(["push", "rbp", "mov", "rax", "rbx", "call", "func"])
    a = embed(EmbedderSpec("bow-hash", dim=128, params={"seed": 0}), toks)
    b = embed(EmbedderSpec("bow-hash", dim=128, params={"seed": 1}), toks)
    assert not np.array_equal(a, b)


def test_bigram_is_order_sensitive_bow_is_not():
    fwd = ["a", "b", "c", "d"]
    rev = list(reversed(fwd))
    bow = EmbedderSpec("bow-hash", dim=64)
    np.testing.assert_array_equal(embed(bow, _seq(fwd)), embed(bow, _seq(rev)))
    bigram = EmbedderSpec("bigram-hash", dim=64)
    assert not np.array_equal(embed(bigram, _seq(fwd)), embed(bigram, _seq(rev)))


def test_get_embedder_unknown_name():
    with pytest.raises(EmbedError, match="bow-hash"):
        get_embedder(EmbedderSpec("made-up", dim=8))


def test_get_embedder_memoizes_instance():
    spec = EmbedderSpec("bow-hash", dim=8)
    assert get_embedder(spec) is get_embedder(spec)


def test_spec_validation():
    with pytest.raises(EmbedError, match="dim"):
        EmbedderSpec("bow-hash", dim=0)


# ----------------------------------------------------------------------------
# External sidecar vectors
# ----------------------------------------------------------------------------


def _write_sidecar(path, rows):
    import json

    with open(path, "w", encoding="utf-8") as fh:
        for fid, vec in rows:
            fh.write(json.dumps({"id": fid, "vector": vec}) + "\n")


def test_external_sidecar_lookup(tmp_path):
    path = tmp_path / "vecs.jsonl"
    _write_sidecar(path, [("a1", [1.0, 0.0]), ("a2", [0.6, 0.8])])
    spec = EmbedderSpec("external", params={"path": str(path)})
    emb = get_embedder(spec)
    assert emb.spec.dim == 2  # inferred from the file
    np.testing.assert_array_equal(emb.embed(_seq([], fid="a2")), [0.6, 0.8])
    with pytest.raises(EmbedError, match="no sidecar vector"):
        emb.embed(_seq([], fid="missing"))


def test_external_sidecar_validation(tmp_path):
    ragged = tmp_path / "ragged.jsonl"
    _write_sidecar(ragged, [("a", [1.0, 0.0]), ("b", [1.0])])
    with pytest.raises(EmbedError, match="dim"):
        get_embedder(EmbedderSpec("external", params={"path": str(ragged)}))

    empty = tmp_path / "empty.jsonl"
    empty.write_text("", encoding="utf-8")
    with pytest.raises(EmbedError, match="empty"):
        get_embedder(EmbedderSpec("external", params={"path": str(empty)}))

    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "a"}\n', encoding="utf-8")
    with pytest.raises(EmbedError, match=r"bad\.jsonl:1"):
        get_embedder(EmbedderSpec("external", params={"path": str(bad)}))

    nonfinite = tmp_path / "nan.jsonl"
    nonfinite.write_text('{"id": "a", "vector": [1.0, null]}\n', encoding="utf-8")
    with pytest.raises(EmbedError):
        get_embedder(EmbedderSpec("external", params={"path": str(nonfinite)}))

    declared = tmp_path / "declared.jsonl"
    _write_sidecar(declared, [("a", [1.0, 0.0, 0.0])])
    with pytest.raises(EmbedError, match="declared"):
        get_embedder(
            EmbedderSpec("external", params={"path": str(declared), "dim": 2})
        )

    with pytest.raises(EmbedError, match="path"):
        get_embedder(EmbedderSpec("external"))


# ----------------------------------------------------------------------------
# Pool embedding
# ----------------------------------------------------------------------------


def test_embed_pool_sorted_and_parallel_identical():
    pool = tiny_pool()
    spec1 = EmbedderSpec("bow-hash", dim=32)
    seq = embed_pool(spec1, pool, NormalizeConfig(), jobs=1)
    assert [fid for fid, _ in seq] == sorted(pool.ids())
    spec2 = EmbedderSpec("bow-hash", dim=32)
    par = embed_pool(spec2, pool, NormalizeConfig(), jobs=3)
    assert [fid for fid, _ in par] == [fid for fid, _ in seq]
    for (_, a), (_, b) in zip(seq, par):
        np.testing.assert_array_equal(a, b)


def test_embed_pool_reuses_prepared_tokens():
    pool = tiny_pool()
    toks = {"a1": _seq(["zzz"], fid="a1")}
    out = dict(
        embed_pool(EmbedderSpec("bow-hash", dim=16), pool, tokens_by_id=toks)
    )
    ref = _ref_vector(["zzz"], 16, 0)
    np.testing.assert_allclose(out["a1"], ref, atol=1e-15)


def test_embed_pool_warns_on_zero_vector(caplog):
    # one-token record bigram-embeds to the zero vector and is logged
    lone = make_record("lone", ["0x10 ret"], source_key="s")
    pool = make_pool(lone)
    with caplog.at_level(logging.WARNING, logger="resim.embed"):
        out = embed_pool(EmbedderSpec("bigram-hash", dim=8), pool)
    assert not out[0][1].any()
    assert any("lone" in r.message for r in caplog.records)
