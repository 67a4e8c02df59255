import csv
from pathlib import Path

import numpy as np
import pytest

from sqlsentinel.embedding import EncoderConfig
from sqlsentinel.workload import load_schema

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def schema():
    return load_schema()


@pytest.fixture(scope="session")
def small_encoder():
    # Small dimension keeps detector fits fast; tests that exercise the
    # production default build their own config.
    return EncoderConfig(dimension=64, capacity=512, seed=99)


@pytest.fixture(scope="session")
def reference_matrix():
    """42 x 11 validation probability matrix used as a published reference."""
    rows = []
    with open(DATA_DIR / "reference_probability_matrix.csv", newline="") as fh:
        for row in csv.reader(fh):
            rows.append([float(x) for x in row])
    matrix = np.array(rows)
    assert matrix.shape == (42, 11)
    return matrix


def rank_auc(negatives, positives):
    """Rank-based ROC-AUC (Mann-Whitney)."""
    neg = np.asarray(negatives, dtype=float)
    pos = np.asarray(positives, dtype=float)
    scores = np.concatenate([neg, pos])
    labels = np.concatenate([np.zeros(len(neg)), np.ones(len(pos))])
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    ranks[order] = np.arange(1, len(scores) + 1)
    # midranks for ties
    sorted_scores = scores[order]
    i = 0
    while i < len(sorted_scores):
        j = i
        while j + 1 < len(sorted_scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        if j > i:
            ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    pos_rank_sum = ranks[labels == 1].sum()
    return (pos_rank_sum - len(pos) * (len(pos) + 1) / 2.0) / (len(pos) * len(neg))
