"""Compute transformer-encoder embeddings for a normalized SQL corpus.

Consumes the corpus JSON-lines format (records carrying "normalized" and
"fingerprint" fields) and writes the external embedding file format:

    {"format": "sqlsentinel-emb", "version": 1, "dim": D, "count": N}
    {"fp": "<16 hex digits>", "dim": D, "v": [floats...]}

Each query is subword-tokenized, split into chunks that fit the encoder
capacity, and every chunk is embedded as the attention-masked mean of its
last-hidden-state token vectors; the query embedding is the mean of its
chunk embeddings. Inference only (eval mode, no dropout), so output is
deterministic for a given checkpoint. Any compatible checkpoint path or
hub name works; fine-tuning happens elsewhere.

Duplicate fingerprints (same normalized text under several users) are
embedded once, so the header count equals the number of distinct
fingerprints.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import torch
from transformers import AutoModel, AutoTokenizer

logger = logging.getLogger("sqlsentinel_exporter")

EMBEDDING_FORMAT = "sqlsentinel-emb"
EMBEDDING_VERSION = 1


class ExporterError(Exception):
    pass


@dataclass
class ExporterConfig:
    model: str
    capacity: int = 0       # 0: take the model's own max position embeddings
    dim: int = 0            # 0: take the model's hidden size
    batch_size: int = 16

    def __post_init__(self):
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")


def read_normalized_corpus(path) -> list[tuple[str, str]]:
    """(fingerprint hex, normalized text) per record, in file order."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            record = json.loads(line)
            if "normalized" not in record or "fingerprint" not in record:
                raise ExporterError(
                    f"line {line_number}: corpus is not in normalized form "
                    f"(missing 'normalized'/'fingerprint')")
            out.append((record["fingerprint"], record["normalized"]))
    return out


class Encoder:
    def __init__(self, cfg: ExporterConfig):
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(cfg.model)
            self.model = AutoModel.from_pretrained(cfg.model)
        except Exception as exc:
            raise ExporterError(f"cannot load model {cfg.model!r}: {exc}") from exc
        self.model.eval()
        hidden = getattr(self.model.config, "dim", None) \
            or getattr(self.model.config, "hidden_size", None)
        if hidden is None:
            raise ExporterError("model config exposes neither 'dim' nor 'hidden_size'")
        self.dim = int(hidden)
        if cfg.dim and cfg.dim != self.dim:
            raise ExporterError(
                f"requested dim {cfg.dim} but model hidden size is {self.dim}")
        max_pos = int(getattr(self.model.config, "max_position_embeddings", 512))
        self.capacity = cfg.capacity or max_pos
        if self.capacity > max_pos:
            raise ExporterError(
                f"capacity {self.capacity} exceeds model maximum {max_pos}")
        self.batch_size = cfg.batch_size
        self.cls_id = self.tokenizer.cls_token_id
        self.sep_id = self.tokenizer.sep_token_id
        self.pad_id = self.tokenizer.pad_token_id

    def chunk_ids(self, text: str) -> list[list[int]]:
        """Subword ids wrapped as [CLS] ... [SEP], at most `capacity` long."""
        ids = self.tokenizer.encode(text, add_special_tokens=False)
        body = self.capacity - 2
        if not ids:
            ids = [self.tokenizer.unk_token_id]
        chunks = [ids[i:i + body] for i in range(0, len(ids), body)]
        return [[self.cls_id, *chunk, self.sep_id] for chunk in chunks]

    @torch.no_grad()
    def embed_chunks(self, chunks: list[list[int]]) -> torch.Tensor:
        """Masked-mean last-hidden-state vector per chunk, batched."""
        vectors = []
        for start in range(0, len(chunks), self.batch_size):
            batch = chunks[start:start + self.batch_size]
            width = max(len(c) for c in batch)
            input_ids = torch.full((len(batch), width), self.pad_id, dtype=torch.long)
            mask = torch.zeros((len(batch), width), dtype=torch.long)
            for row, chunk in enumerate(batch):
                input_ids[row, :len(chunk)] = torch.tensor(chunk, dtype=torch.long)
                mask[row, :len(chunk)] = 1
            hidden = self.model(input_ids=input_ids, attention_mask=mask).last_hidden_state
            weights = mask.unsqueeze(-1).to(hidden.dtype)
            vectors.append((hidden * weights).sum(dim=1) / weights.sum(dim=1))
        return torch.cat(vectors, dim=0)

    def embed_query(self, text: str) -> torch.Tensor:
        """Direct path: chunk, embed, average chunk vectors."""
        return self.embed_chunks(self.chunk_ids(text)).mean(dim=0)


def export(corpus_path, cfg: ExporterConfig, out_path) -> int:
    """Embed every distinct corpus query and write the embedding file.

    Returns the number of records written. Chunks from all queries are
    flattened into shared inference batches, then re-assembled per query.
    """
    corpus = read_normalized_corpus(corpus_path)
    seen = set()
    queries = []
    for fp, text in corpus:
        if fp not in seen:
            seen.add(fp)
            queries.append((fp, text))
    logger.info("embedding %d distinct queries (%d records)", len(queries), len(corpus))

    encoder = Encoder(cfg)
    all_chunks = []
    spans = []
    for _, text in queries:
        chunks = encoder.chunk_ids(text)
        spans.append((len(all_chunks), len(all_chunks) + len(chunks)))
        all_chunks.extend(chunks)
    vectors = encoder.embed_chunks(all_chunks) if all_chunks else torch.empty(0, encoder.dim)

    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        header = {"format": EMBEDDING_FORMAT, "version": EMBEDDING_VERSION,
                  "dim": encoder.dim, "count": len(queries)}
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for (fp, _), (lo, hi) in zip(queries, spans):
            vec = vectors[lo:hi].mean(dim=0)
            row = {"fp": fp, "dim": encoder.dim, "v": [float(x) for x in vec]}
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    return len(queries)
