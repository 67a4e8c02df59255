from pathlib import Path

import pytest
import torch
from transformers import DistilBertConfig, DistilBertModel, DistilBertTokenizer

# SQL-ish wordpiece vocabulary; column/table names split into pieces so
# chunking at the subword level actually differs from whitespace tokens.
VOCAB = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
    "select", "from", "where", "and", "or", "order", "by", "count", "like",
    "in", "between", "insert", "into", "values", "update", "set", "desc",
    "t", "v", "##1", "##2", "##3", "##4", "##5", "##6", "##7", "##8", "##9",
    "##_", "##id", "##emp", "##dep", "##dept", "##name", "##status", "##hired",
    "##role", "##grade", "##site", "##budget", "##period", "##owner", "##acct",
    "##amount", "##date", "##ccy", "##host", "##metric", "##value", "##region",
    "##job", "##sched", "##obj", "##priv", "##grantee", "##since", "##event",
    "##ts", "##detail", "##actor", "sensitive", "##c", "col", "?", "*", "(",
    ")", ",", "=", ">", "<",
]


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory) -> str:
    """A small randomly-initialized encoder saved to disk, so the exporter
    exercises the real load/tokenize/forward path without downloads."""
    directory = tmp_path_factory.mktemp("tiny-encoder")
    vocab_file = directory / "vocab.txt"
    vocab_file.write_text("\n".join(VOCAB) + "\n", encoding="utf-8")
    tokenizer = DistilBertTokenizer(str(vocab_file), do_lower_case=True)
    config = DistilBertConfig(
        vocab_size=len(VOCAB), dim=32, hidden_dim=64, n_layers=2, n_heads=2,
        max_position_embeddings=48,
    )
    torch.manual_seed(1234)
    model = DistilBertModel(config)
    model.eval()
    model.save_pretrained(directory)
    tokenizer.save_pretrained(directory)
    return str(directory)


@pytest.fixture(scope="session")
def corpus_50(tmp_path_factory) -> Path:
    """50-query normalized corpus produced through the primary pipeline."""
    from sqlsentinel.normalizer import write_corpus
    from sqlsentinel.pipeline import run_normalize
    from sqlsentinel.workload import generate_normal, load_schema

    schema = load_schema()
    records = generate_normal(schema, "finance", 25, seed=42)
    records += generate_normal(schema, "hr", 25, seed=43, start_seq=25)
    result = run_normalize(records, apply_dedup=False)
    assert len(result.records) == 50
    path = tmp_path_factory.mktemp("corpus") / "corpus.jsonl"
    write_corpus(path, result.records)
    return path
