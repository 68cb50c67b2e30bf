import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from belink.cache import EmbeddingCache, cache_key, cached_embed, encode_record
from belink.embedding import EmbeddingProviderConfig, HttpEmbeddingProvider, normalize
from belink.exceptions import ContractError, ProtocolError, TransportError
from belink.mocks import MockEmbeddingProvider, MockServer, mock_embed


finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@settings(max_examples=200)
@given(arrays(np.float64, st.integers(1, 32), elements=finite).filter(lambda v: np.linalg.norm(v) > 1e-6))
def test_normalize_idempotent_and_unit(v):
    n1 = normalize(v)
    assert abs(np.linalg.norm(n1) - 1.0) <= 1e-9
    assert np.array_equal(normalize(n1), n1)


def test_normalize_rejects_zero_and_nan():
    with pytest.raises(ContractError):
        normalize([0.0, 0.0])
    with pytest.raises(ContractError):
        normalize([np.nan, 1.0])


def test_mock_provider_deterministic_and_unit():
    p = MockEmbeddingProvider(dim=8)
    a, b = p.embed_batch(["AO1", "AO1"])
    assert np.array_equal(a, b)
    assert abs(np.linalg.norm(a) - 1.0) <= 1e-9
    assert a.shape == (8,)


@settings(max_examples=50)
@given(st.text(min_size=1, max_size=20), st.integers(1, 64), st.integers(0, 2**32))
def test_mock_embed_is_pure(text, dim, seed):
    assert np.array_equal(mock_embed(text, dim, seed), mock_embed(text, dim, seed))


def test_embed_batch_preconditions():
    p = MockEmbeddingProvider()
    with pytest.raises(ContractError):
        p.embed_batch([])
    with pytest.raises(ContractError):
        p.embed_batch(["ok", ""])


def test_http_provider_returns_vectors_in_request_order():
    canned = {"a": [1.0, 0.0, 0.0], "b": [0.0, 2.0, 0.0], "c": [0.0, 0.0, 3.0]}
    with MockServer(canned_vectors=canned) as srv:
        prov = HttpEmbeddingProvider(EmbeddingProviderConfig(endpoint_url=srv.url, model_name="m", batch_size=2))
        out = prov.embed_batch(["c", "a", "b"])
        bodies = [r["body"] for r in srv.requests]
    np.testing.assert_array_equal(out, [[0, 0, 1], [1, 0, 0], [0, 1, 0]])
    assert bodies == [{"model": "m", "input": ["c", "a"]}, {"model": "m", "input": ["b"]}]


def test_http_provider_dimension_mismatch():
    canned = {"a": [1.0, 0.0], "b": [0.0, 1.0, 0.0]}
    with MockServer(canned_vectors=canned) as srv:
        prov = HttpEmbeddingProvider(EmbeddingProviderConfig(endpoint_url=srv.url))
        with pytest.raises(ProtocolError):
            prov.embed_batch(["a", "b"])


def test_http_provider_unreachable():
    prov = HttpEmbeddingProvider(EmbeddingProviderConfig(endpoint_url="http://127.0.0.1:9", retries=1, timeout=0.5))
    with pytest.raises(TransportError):
        prov.embed_batch(["a"])


def test_http_matches_in_process_mock():
    emb = MockEmbeddingProvider(dim=16)
    with MockServer(embedder=emb) as srv:
        prov = HttpEmbeddingProvider(EmbeddingProviderConfig(endpoint_url=srv.url))
        out = prov.embed_batch(["x", "y"])
    np.testing.assert_allclose(out, emb.embed_batch(["x", "y"]), atol=1e-15)


def test_config_validation():
    with pytest.raises(ContractError):
        EmbeddingProviderConfig(batch_size=0)


# -- cache -----------------------------------------------------------------

def test_cache_hit_skips_provider(tmp_path):
    p = MockEmbeddingProvider()
    path = tmp_path / "c.bin"
    first = cached_embed(["a", "b", "a"], path, p)
    calls = p.calls
    second = cached_embed(["a", "b"], path, p)
    assert p.calls == calls
    assert np.array_equal(first[:2], second)
    assert p.texts_embedded == 2


def test_cache_deleted_recomputes_same_vectors(tmp_path):
    p = MockEmbeddingProvider()
    path = tmp_path / "c.bin"
    first = cached_embed(["a"], path, p)
    path.unlink()
    second = cached_embed(["a"], path, p)
    assert p.calls == 2
    assert np.array_equal(first, second)


def test_cache_cold_warm_bit_identical_1000(tmp_path):
    texts = [f"alias {i}" for i in range(1000)]
    p = MockEmbeddingProvider(dim=32)
    cold = EmbeddingCache(tmp_path / "c.bin").embed(texts, p)
    snapshot = (tmp_path / "c.bin").read_bytes()
    warm_cache = EmbeddingCache(tmp_path / "c.bin")
    warm = warm_cache.embed(texts, p)
    assert p.calls == 1
    assert cold.tobytes() == warm.tobytes()
    assert (tmp_path / "c.bin").read_bytes() == snapshot


def test_cache_file_layout(tmp_path):
    p = MockEmbeddingProvider(dim=4, model_name="m")
    EmbeddingCache(tmp_path / "c.bin").embed(["hi"], p)
    raw = (tmp_path / "c.bin").read_bytes()
    key = b"m\x00hi"
    assert raw[:4] == len(key).to_bytes(4, "little")
    assert raw[4:4 + len(key)] == key
    assert raw[4 + len(key):8 + len(key)] == (4).to_bytes(4, "little")
    assert len(raw) == 8 + len(key) + 16
    vec = np.frombuffer(raw[8 + len(key):], dtype="<f4")
    np.testing.assert_array_equal(vec, mock_embed("hi", 4, 0).astype(np.float32))


def test_cache_keyed_by_model(tmp_path):
    path = tmp_path / "c.bin"
    a = MockEmbeddingProvider(seed=0, model_name="m1")
    b = MockEmbeddingProvider(seed=1, model_name="m2")
    va = EmbeddingCache(path).embed(["x"], a)
    vb = EmbeddingCache(path).embed(["x"], b)
    assert b.calls == 1
    assert not np.allclose(va, vb)


def test_corrupt_entries_discarded_and_recomputed(tmp_path, caplog):
    p = MockEmbeddingProvider(dim=4, model_name="m")
    path = tmp_path / "c.bin"
    good = encode_record(cache_key("m", "a"), mock_embed("a", 4))
    bad = encode_record(cache_key("m", "b"), np.array([np.nan, 1, 1, 1]))
    path.write_bytes(good + bad + b"\x05\x00\x00")
    with caplog.at_level(logging.WARNING):
        cache = EmbeddingCache(path)
    assert "corrupt" in caplog.text
    assert cache_key("m", "a") in cache and cache_key("m", "b") not in cache
    out = cache.embed(["a", "b"], p)
    assert p.texts_embedded == 1
    np.testing.assert_allclose(out[1], mock_embed("b", 4), atol=1e-6)
    reloaded = EmbeddingCache(path)
    assert len(reloaded) == 2
