import numpy as np
import pytest

from sqlsentinel.embedding import (
    EncoderConfig,
    EmbeddingVector,
    encode,
    parse_external_embeddings,
    read_external_embeddings,
    split_chunks,
    write_embeddings,
)
from sqlsentinel.errors import CorpusFormatError, DimensionMismatch, MissingEmbedding, UnknownFingerprint
from sqlsentinel.normalizer import RawQuery, normalize


CFG = EncoderConfig(dimension=128, capacity=512, seed=7)


def test_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(dimension=0)
    with pytest.raises(ValueError):
        EncoderConfig(capacity=-1)
    with pytest.raises(ValueError):
        EncoderConfig(ngram_orders=())
    with pytest.raises(ValueError):
        EncoderConfig(ngram_orders=(0, 1))
    with pytest.raises(ValueError):
        EncoderConfig(kind="transformer")


def test_embedding_rejects_non_finite():
    with pytest.raises(ValueError):
        EmbeddingVector(np.array([1.0, np.nan]))


def test_determinism():
    tokens = "select * from t1 where a = ?".split()
    a = encode(tokens, CFG)
    b = encode(tokens, CFG)
    assert np.array_equal(a.values, b.values)
    c = encode(tokens, EncoderConfig(dimension=128, capacity=512, seed=8))
    assert not np.array_equal(a.values, c.values)


def test_unit_norm_and_finite():
    tokens = "select * from t1 where a = ?".split()
    vec = encode(tokens, CFG)
    assert np.isfinite(vec.values).all()
    assert np.linalg.norm(vec.values) == pytest.approx(1.0, abs=1e-12)


def test_empty_tokens_zero_vector_with_flag():
    vec = encode([], CFG)
    assert vec.empty_input
    assert np.all(vec.values == 0.0)
    assert vec.dimension == CFG.dimension


def test_single_chunk_equals_direct_path():
    tokens = "select * from t1 where depid = ? and name like ?".split()
    assert len(tokens) <= CFG.capacity
    whole = encode(tokens, CFG)
    chunks = split_chunks(tokens, CFG.capacity)
    assert len(chunks) == 1
    assert np.array_equal(whole.values, encode(list(chunks[0]), CFG).values)


def test_1900_tokens_make_four_chunks_at_512():
    tokens = [f"tok{i % 97}" for i in range(1900)]
    chunks = split_chunks(tokens, 512)
    assert [len(c) for c in chunks] == [512, 512, 512, 364]
    vec = encode(tokens, EncoderConfig(dimension=64, capacity=512, seed=1))
    assert np.isfinite(vec.values).all()
    assert np.linalg.norm(vec.values) == pytest.approx(1.0, abs=1e-12)


def test_identical_repeated_chunks_mean_equals_single_chunk():
    # C identical capacity-length chunks: the pre-normalization mean equals
    # the single-chunk vector, so the final embedding matches it exactly.
    cfg = EncoderConfig(dimension=64, capacity=16, seed=3)
    chunk = [f"t{i}" for i in range(16)]
    repeated = chunk * 5
    single = encode(chunk, cfg)
    combined = encode(repeated, cfg)
    assert np.allclose(single.values, combined.values, atol=1e-12)


def test_order_sensitivity_with_higher_ngrams():
    tokens = "select alpha beta from t1".split()
    swapped = "select beta alpha from t1".split()
    a = encode(tokens, CFG)
    b = encode(swapped, CFG)
    assert not np.allclose(a.values, b.values)


def test_order_sensitivity_on_generated_corpus():
    from sqlsentinel.normalizer import normalize
    from sqlsentinel.workload import generate_normal, load_schema

    schema = load_schema()
    checked = 0
    for rec in generate_normal(schema, "finance", 40, seed=11):
        tokens = list(normalize(rec.to_raw()).tokens)
        # find two adjacent distinct tokens to swap
        for i in range(len(tokens) - 1):
            if tokens[i] != tokens[i + 1]:
                swapped = tokens.copy()
                swapped[i], swapped[i + 1] = swapped[i + 1], swapped[i]
                assert not np.array_equal(encode(tokens, CFG).values,
                                          encode(swapped, CFG).values)
                checked += 1
                break
    assert checked == 40


# ---------------------------------------------------------------------------
# external embedding file
# ---------------------------------------------------------------------------


def _corpus_vectors(n, dim=16):
    rng = np.random.default_rng(0)
    queries = [normalize(RawQuery(f"select c{i} from t1 where c{i} = ?")) for i in range(n)]
    vectors = [
        EmbeddingVector(rng.normal(size=dim), query_fingerprint=q.fingerprint)
        for q in queries
    ]
    return queries, vectors


def test_roundtrip_exact(tmp_path):
    queries, vectors = _corpus_vectors(300)
    path = tmp_path / "emb.jsonl"
    write_embeddings(path, vectors)
    loaded = read_external_embeddings(path, 16, [q.fingerprint for q in queries])
    assert len(loaded) == 300
    for orig, back in zip(vectors, loaded):
        assert np.array_equal(orig.values, back.values)
        assert orig.query_fingerprint == back.query_fingerprint


def test_dimension_mismatch(tmp_path):
    queries, vectors = _corpus_vectors(3)
    path = tmp_path / "emb.jsonl"
    write_embeddings(path, vectors)
    with pytest.raises(DimensionMismatch):
        read_external_embeddings(path, 768, [q.fingerprint for q in queries])


def test_missing_embeddings_listed(tmp_path):
    queries, vectors = _corpus_vectors(10)
    path = tmp_path / "emb.jsonl"
    write_embeddings(path, vectors[:7])
    with pytest.raises(MissingEmbedding) as err:
        read_external_embeddings(path, 16, [q.fingerprint for q in queries])
    assert len(err.value.fingerprints) == 3
    missing = {f"{q.fingerprint:016x}" for q in queries[7:]}
    assert set(err.value.fingerprints) == missing


def test_unknown_fingerprints_listed(tmp_path):
    queries, vectors = _corpus_vectors(5)
    path = tmp_path / "emb.jsonl"
    write_embeddings(path, vectors)
    with pytest.raises(UnknownFingerprint) as err:
        read_external_embeddings(path, 16, [q.fingerprint for q in queries[:3]])
    assert len(err.value.fingerprints) == 2


def test_header_count_checked():
    lines = [
        '{"format": "sqlsentinel-emb", "version": 1, "dim": 2, "count": 5}',
        '{"fp": "00000000000000aa", "dim": 2, "v": [1.0, 2.0]}',
    ]
    with pytest.raises(CorpusFormatError):
        parse_external_embeddings(lines, 2, [0xAA])


def test_bad_format_tag_rejected():
    with pytest.raises(CorpusFormatError):
        parse_external_embeddings(['{"format": "something-else", "dim": 2, "count": 0}'], 2, [])
