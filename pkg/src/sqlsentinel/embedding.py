"""Token sequences to fixed-dimension vectors.

The built-in encoder is signed feature hashing over token n-grams: each
n-gram is hashed (keyed by the config seed) to a coordinate and a sign,
accumulated, and the result L2-normalized. It is deterministic, needs no
model runtime, and is order-sensitive through its 2- and 3-gram terms.

Sequences longer than the encoder capacity are split into consecutive
chunks of at most ``capacity`` tokens; each chunk is embedded on its own
and the element-wise mean of the chunk vectors (renormalized) represents
the query. Chunks do not overlap.

Externally computed embeddings (e.g. from a transformer encoder) enter
through :func:`read_external_embeddings`, matched to corpus queries by
fingerprint. File format, JSON-lines:

    {"format": "sqlsentinel-emb", "version": 1, "dim": D, "count": N}
    {"fp": "<16 hex digits>", "dim": D, "v": [floats...]}
    ...
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import CorpusFormatError, DimensionMismatch, MissingEmbedding, UnknownFingerprint

EMBEDDING_FORMAT = "sqlsentinel-emb"
EMBEDDING_VERSION = 1


@dataclass(frozen=True)
class EncoderConfig:
    dimension: int = 768
    capacity: int = 512
    kind: str = "hashing"
    ngram_orders: tuple[int, ...] = (1, 2, 3)
    seed: int = 0

    def __post_init__(self):
        if self.dimension <= 0:
            raise ValueError("dimension must be positive")
        if self.capacity <= 0:
            raise ValueError("capacity must be positive")
        if self.kind not in ("hashing", "external"):
            raise ValueError(f"unknown encoder kind {self.kind!r}")
        if not self.ngram_orders or any(n < 1 for n in self.ngram_orders):
            raise ValueError("ngram_orders must be non-empty with all orders >= 1")
        object.__setattr__(self, "ngram_orders", tuple(self.ngram_orders))


@dataclass
class EmbeddingVector:
    values: np.ndarray
    query_fingerprint: int = 0
    user_label: Optional[str] = None
    empty_input: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("embedding contains non-finite components")

    @property
    def dimension(self) -> int:
        return int(self.values.shape[0])


def _hash_ngram(key: bytes, gram: str) -> int:
    digest = hashlib.blake2b(gram.encode("utf-8"), key=key, digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _embed_chunk(tokens: Sequence[str], cfg: EncoderConfig, key: bytes) -> np.ndarray:
    vec = np.zeros(cfg.dimension, dtype=np.float64)
    for order in cfg.ngram_orders:
        if len(tokens) < order:
            continue
        for i in range(len(tokens) - order + 1):
            gram = "\x1f".join(tokens[i:i + order])
            h = _hash_ngram(key, f"{order}\x1e{gram}")
            idx = (h & 0x7FFFFFFFFFFFFFFF) % cfg.dimension
            vec[idx] += 1.0 if h & (1 << 63) else -1.0
    norm = float(np.linalg.norm(vec))
    if norm > 0.0:
        vec /= norm
    return vec


def encode(tokens: Sequence[str], cfg: EncoderConfig,
           fingerprint: int = 0, user_label: Optional[str] = None) -> EmbeddingVector:
    """Embed one token sequence with the hashing encoder.

    Sequences over capacity are embedded chunk-by-chunk and averaged, then
    renormalized so every non-degenerate output sits on the unit sphere.
    An empty token list yields the zero vector flagged ``empty_input``
    rather than an error: degenerate inputs should surface in reports, not
    abort batch jobs.
    """
    if cfg.kind != "hashing":
        raise ValueError("encode() requires a hashing encoder config")
    if not tokens:
        return EmbeddingVector(np.zeros(cfg.dimension), fingerprint, user_label, empty_input=True)
    key = int(cfg.seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")
    if len(tokens) <= cfg.capacity:
        vec = _embed_chunk(tokens, cfg, key)
    else:
        chunks = [tokens[i:i + cfg.capacity] for i in range(0, len(tokens), cfg.capacity)]
        vec = np.mean([_embed_chunk(c, cfg, key) for c in chunks], axis=0)
        norm = float(np.linalg.norm(vec))
        if norm > 0.0:
            vec = vec / norm
    return EmbeddingVector(vec, fingerprint, user_label)


def split_chunks(tokens: Sequence[str], capacity: int) -> list[Sequence[str]]:
    """Consecutive chunks of at most *capacity* tokens (last may be short)."""
    return [tokens[i:i + capacity] for i in range(0, len(tokens), capacity)]


def stack(vectors: Iterable[EmbeddingVector]) -> np.ndarray:
    """Stack embedding values into an (n, d) matrix."""
    return np.stack([v.values for v in vectors], axis=0)


# ---------------------------------------------------------------------------
# External embedding file I/O
# ---------------------------------------------------------------------------


def write_embeddings(path, vectors: Sequence[EmbeddingVector], dim: Optional[int] = None) -> None:
    if dim is None:
        dim = vectors[0].dimension if vectors else 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        header = {"format": EMBEDDING_FORMAT, "version": EMBEDDING_VERSION,
                  "dim": dim, "count": len(vectors)}
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for vec in vectors:
            row = {"fp": f"{vec.query_fingerprint:016x}", "dim": vec.dimension,
                   "v": [float(x) for x in vec.values]}
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def parse_external_embeddings(lines, expected_dim: int,
                              corpus_fingerprints: Sequence[int]) -> list[EmbeddingVector]:
    """Parse embedding JSON-lines and align them to the corpus order.

    All three contract violations are fatal for the whole batch and list
    their offenders: a row of the wrong dimension, an embedding whose
    fingerprint matches no corpus query, and a corpus query that received
    no embedding.
    """
    by_fp: dict[int, np.ndarray] = {}
    header = None
    for line_number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        if header is None:
            header = json.loads(line)
            if header.get("format") != EMBEDDING_FORMAT:
                raise CorpusFormatError(1, f"unexpected format tag {header.get('format')!r}")
            if header.get("dim") != expected_dim:
                raise DimensionMismatch(
                    f"header dim {header.get('dim')} != expected {expected_dim}")
            continue
        row = json.loads(line)
        if int(row["dim"]) != expected_dim or len(row["v"]) != expected_dim:
            raise DimensionMismatch(
                f"line {line_number}: row dim {row['dim']} (|v|={len(row['v'])}) "
                f"!= expected {expected_dim}")
        by_fp[int(row["fp"], 16)] = np.asarray(row["v"], dtype=np.float64)
    if header is None:
        raise CorpusFormatError(1, "empty embedding file")
    if header.get("count") != len(by_fp):
        raise CorpusFormatError(
            1, f"header count {header.get('count')} != {len(by_fp)} records")

    corpus_set = set(corpus_fingerprints)
    unknown = sorted(by_fp.keys() - corpus_set)
    if unknown:
        raise UnknownFingerprint([f"{fp:016x}" for fp in unknown])
    missing = sorted(corpus_set - by_fp.keys())
    if missing:
        raise MissingEmbedding([f"{fp:016x}" for fp in missing])

    return [EmbeddingVector(by_fp[fp], query_fingerprint=fp) for fp in corpus_fingerprints]


def read_external_embeddings(path, expected_dim: int,
                             corpus_fingerprints: Sequence[int]) -> list[EmbeddingVector]:
    """File-path wrapper around :func:`parse_external_embeddings`."""
    with open(path, "r", encoding="utf-8") as fh:
        return parse_external_embeddings(fh, expected_dim, corpus_fingerprints)
