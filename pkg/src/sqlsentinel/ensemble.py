"""Three-detector ensemble: normalization, averaging, threshold, reports.

The learning period fixes everything: the three detectors are fitted on
the learning embeddings (the one-class SVM on their PCA-reduced form),
per-detector min/max normalization parameters are taken from the
learning-score distributions, and the alert threshold is the maximum
averaged normalized score over the learning set. Detection-time scores
are normalized with the learning parameters WITHOUT clipping, so extreme
anomalies can exceed 1. A query is flagged when its average strictly
exceeds threshold * (1 + slack).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .config import TrainConfig
from .detectors import (
    AutoencoderModel,
    OcsvmModel,
    PcaModel,
    ae_fit,
    ae_score_batch,
    detector_from_dict,
    detector_to_dict,
    ocsvm_fit,
    ocsvm_score_batch,
    pca_fit,
    pca_reduce_batch,
    pca_score_batch,
)
from .embedding import EmbeddingVector, stack
from .errors import DegenerateDetector

ENSEMBLE_DOC_FORMAT = "sqlsentinel-ensemble"
ENSEMBLE_DOC_VERSION = 1

HISTOGRAM_BINS = 50


@dataclass(frozen=True)
class ScoreTriple:
    pca: float
    ae: float
    ocsvm: float

    def as_tuple(self):
        return (self.pca, self.ae, self.ocsvm)


@dataclass(frozen=True)
class NormalizationParams:
    pca_min: float
    pca_max: float
    ae_min: float
    ae_max: float
    ocsvm_min: float
    ocsvm_max: float

    def normalize(self, raw: ScoreTriple) -> ScoreTriple:
        return ScoreTriple(
            (raw.pca - self.pca_min) / (self.pca_max - self.pca_min),
            (raw.ae - self.ae_min) / (self.ae_max - self.ae_min),
            (raw.ocsvm - self.ocsvm_min) / (self.ocsvm_max - self.ocsvm_min),
        )


@dataclass
class EnsembleModel:
    pca_model: PcaModel
    ae_model: AutoencoderModel
    ocsvm_model: OcsvmModel
    norm: NormalizationParams
    threshold: float
    slack: float = 0.05

    @property
    def cutoff(self) -> float:
        return self.threshold * (1.0 + self.slack)


@dataclass(frozen=True)
class AnomalyVerdict:
    query_fingerprint: int
    raw_scores: ScoreTriple
    normalized_scores: ScoreTriple
    average: float
    flagged: bool
    margin: float


def _raw_score_matrix(m_pca, m_ae, m_oc, X: np.ndarray) -> np.ndarray:
    reduced = pca_reduce_batch(m_pca, X)
    return np.column_stack([
        pca_score_batch(m_pca, X),
        ae_score_batch(m_ae, X),
        ocsvm_score_batch(m_oc, reduced),
    ])


def fit_ensemble(learning: Sequence[EmbeddingVector], cfg: TrainConfig,
                 nu: float = 0.05, gamma: Optional[float] = None,
                 slack: float = 0.05, pca_target_ratio: float = 0.98) -> EnsembleModel:
    """Fit detectors, normalization parameters and threshold on one corpus."""
    if len(learning) < 10:
        raise ValueError(f"need at least 10 learning vectors, got {len(learning)}")
    if slack < 0:
        raise ValueError("slack must be >= 0")
    X = stack(learning)
    m_pca = pca_fit(X, target_ratio=pca_target_ratio)
    m_ae = ae_fit(X, cfg)
    m_oc = ocsvm_fit(pca_reduce_batch(m_pca, X), nu=nu, gamma=gamma)

    raw = _raw_score_matrix(m_pca, m_ae, m_oc, X)
    mins = raw.min(axis=0)
    maxs = raw.max(axis=0)
    for name, lo, hi in zip(("pca", "ae", "ocsvm"), mins, maxs):
        if not hi > lo:
            raise DegenerateDetector(
                f"{name} scores collapse to a single value ({lo}) on the learning set")
    norm = NormalizationParams(float(mins[0]), float(maxs[0]), float(mins[1]),
                               float(maxs[1]), float(mins[2]), float(maxs[2]))
    normalized = (raw - mins) / (maxs - mins)
    threshold = float(normalized.mean(axis=1).max())
    return EnsembleModel(m_pca, m_ae, m_oc, norm, threshold, slack)


def score_query(m: EnsembleModel, x: EmbeddingVector) -> AnomalyVerdict:
    return score_batch(m, [x])[0]


def score_batch(m: EnsembleModel, xs: Sequence[EmbeddingVector]) -> list[AnomalyVerdict]:
    if not xs:
        return []
    X = stack(xs)
    raw = _raw_score_matrix(m.pca_model, m.ae_model, m.ocsvm_model, X)
    verdicts = []
    for vec, row in zip(xs, raw):
        raw_triple = ScoreTriple(*(float(v) for v in row))
        norm_triple = m.norm.normalize(raw_triple)
        average = (norm_triple.pca + norm_triple.ae + norm_triple.ocsvm) / 3.0
        margin = average - m.cutoff
        verdicts.append(AnomalyVerdict(
            query_fingerprint=vec.query_fingerprint,
            raw_scores=raw_triple,
            normalized_scores=norm_triple,
            average=average,
            flagged=average > m.cutoff,
            margin=margin,
        ))
    return verdicts


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def render_score_csv(verdicts: Sequence[AnomalyVerdict]) -> str:
    """Scores CSV, rows sorted ascending by average."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["fingerprint", "pca_norm", "ae_norm", "ocsvm_norm", "average", "flagged"])
    for v in sorted(verdicts, key=lambda v: v.average):
        writer.writerow([
            f"{v.query_fingerprint:016x}",
            repr(v.normalized_scores.pca),
            repr(v.normalized_scores.ae),
            repr(v.normalized_scores.ocsvm),
            repr(v.average),
            str(v.flagged).lower(),
        ])
    return buf.getvalue()


def render_histogram_csv(verdicts: Sequence[AnomalyVerdict], bins: int = HISTOGRAM_BINS) -> str:
    """Histogram CSV over averaged scores with uniform bins."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["bin_left", "bin_right", "count"])
    if verdicts:
        averages = np.array([v.average for v in verdicts])
        lo = float(averages.min())
        hi = float(averages.max())
        if hi <= lo:
            hi = lo + 1.0
        counts, edges = np.histogram(averages, bins=bins, range=(lo, hi))
        for b in range(bins):
            writer.writerow([repr(float(edges[b])), repr(float(edges[b + 1])), int(counts[b])])
    return buf.getvalue()


def emit_score_report(verdicts: Sequence[AnomalyVerdict], scores_path, histogram_path) -> None:
    with open(scores_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(render_score_csv(verdicts))
    with open(histogram_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(render_histogram_csv(verdicts))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def ensemble_to_dict(m: EnsembleModel) -> dict:
    return {
        "format": ENSEMBLE_DOC_FORMAT,
        "version": ENSEMBLE_DOC_VERSION,
        "pca": detector_to_dict(m.pca_model),
        "autoencoder": detector_to_dict(m.ae_model),
        "ocsvm": detector_to_dict(m.ocsvm_model),
        "normalization": {
            "pca": [m.norm.pca_min, m.norm.pca_max],
            "ae": [m.norm.ae_min, m.norm.ae_max],
            "ocsvm": [m.norm.ocsvm_min, m.norm.ocsvm_max],
        },
        "threshold": m.threshold,
        "slack": m.slack,
    }


def ensemble_from_dict(doc: dict) -> EnsembleModel:
    if doc.get("format") != ENSEMBLE_DOC_FORMAT:
        raise ValueError(f"not an ensemble bundle: format={doc.get('format')!r}")
    norm = doc["normalization"]
    return EnsembleModel(
        pca_model=detector_from_dict(doc["pca"]),
        ae_model=detector_from_dict(doc["autoencoder"]),
        ocsvm_model=detector_from_dict(doc["ocsvm"]),
        norm=NormalizationParams(
            norm["pca"][0], norm["pca"][1],
            norm["ae"][0], norm["ae"][1],
            norm["ocsvm"][0], norm["ocsvm"][1],
        ),
        threshold=float(doc["threshold"]),
        slack=float(doc["slack"]),
    )
