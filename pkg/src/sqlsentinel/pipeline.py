"""Orchestration of the two-tier workflow.

The learning run fits everything on an attack-free corpus and produces a
bundle of four documents (encoder config, ensemble, classifier,
thresholds). The detection run replays new queries against a bundle and
emits combined tier-1/tier-2 verdicts plus the score reports. Both are
plain functions over in-memory records so the HTTP service and the CLI
share one implementation.

Every run produces a manifest capturing the config snapshot, seeds and a
corpus digest; manifests carry wall-clock timestamps and are the one
output that is not byte-reproducible.
"""

from __future__ import annotations

import hashlib
import json
import sys
import warnings
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .config import AE_LEARNING_RATE, CLASSIFIER_LEARNING_RATE, TrainConfig
from .embedding import EmbeddingVector, EncoderConfig, encode, parse_external_embeddings
from .ensemble import (
    EnsembleModel,
    ensemble_from_dict,
    ensemble_to_dict,
    fit_ensemble,
    render_histogram_csv,
    render_score_csv,
    score_batch,
)
from .errors import SqlSentinelError, UndefinedThreshold
from .normalizer import CorpusRecord, normalize, normalize_records
from .roleclassifier import (
    ClassifierModel,
    LabeledQuery,
    MetricsRecord,
    Verdict,
    balanced_subsample,
    build_probability_matrix,
    derive_thresholds,
    detect,
    evaluate,
    fit_classifier,
    render_matrix_csv,
    stratified_split,
    thresholds_from_dict,
    thresholds_to_dict,
    verdict_to_dict,
)
from .workload import (
    GeneratedCorpus,
    SchemaSpec,
    generate_long,
    generate_normal,
    inject_attacks,
    inject_internal_masquerade,
    load_schema,
)

BUNDLE_FORMAT = "sqlsentinel-bundle"
BUNDLE_VERSION = 1
CLASSIFIER_DOC_FORMAT = "sqlsentinel-classifier"


@dataclass(frozen=True)
class PipelineConfig:
    encoder: EncoderConfig = EncoderConfig()
    train: TrainConfig = TrainConfig()
    ae_learning_rate: float = AE_LEARNING_RATE
    classifier_learning_rate: float = CLASSIFIER_LEARNING_RATE
    ae_hidden_dim: Optional[int] = None
    nu: float = 0.05
    gamma: Optional[float] = None
    slack_unsup: float = 0.05
    slack_sup: float = 0.0
    split_ratio: float = 0.85
    repeats: int = 5
    pca_target_ratio: float = 0.98
    few_shot_per_user: Optional[int] = None

    def __post_init__(self):
        if not 0.5 < self.split_ratio < 0.95:
            raise ValueError("split_ratio must lie in (0.5, 0.95)")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.slack_unsup < 0 or self.slack_sup < 0:
            raise ValueError("slack values must be >= 0")

    def to_dict(self) -> dict:
        return {
            "encoder": encoder_to_dict(self.encoder),
            "train": {
                "epochs": self.train.epochs,
                "batch_size": self.train.batch_size,
                "seed": self.train.seed,
                "ae_learning_rate": self.ae_learning_rate,
                "classifier_learning_rate": self.classifier_learning_rate,
            },
            "ae_hidden_dim": self.ae_hidden_dim,
            "nu": self.nu,
            "gamma": self.gamma,
            "slack_unsup": self.slack_unsup,
            "slack_sup": self.slack_sup,
            "split_ratio": self.split_ratio,
            "repeats": self.repeats,
            "pca_target_ratio": self.pca_target_ratio,
            "few_shot_per_user": self.few_shot_per_user,
        }


def encoder_to_dict(cfg: EncoderConfig) -> dict:
    return {
        "dimension": cfg.dimension,
        "capacity": cfg.capacity,
        "kind": cfg.kind,
        "ngram_orders": list(cfg.ngram_orders),
        "seed": cfg.seed,
    }


def encoder_from_dict(doc: dict) -> EncoderConfig:
    return EncoderConfig(
        dimension=int(doc["dimension"]),
        capacity=int(doc["capacity"]),
        kind=doc.get("kind", "hashing"),
        ngram_orders=tuple(doc.get("ngram_orders", (1, 2, 3))),
        seed=int(doc.get("seed", 0)),
    )


def corpus_digest(records: Sequence[CorpusRecord]) -> str:
    h = hashlib.sha256()
    for rec in records:
        h.update(json.dumps(rec.to_json_obj(), sort_keys=True).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def build_manifest(command: str, config: dict, seeds: dict, digest: str) -> dict:
    return {
        "command": command,
        "tool_version": __version__,
        "python": sys.version.split()[0],
        "config": config,
        "seeds": seeds,
        "corpus_digest": digest,
        "created_utc": datetime.now(timezone.utc).isoformat(),
    }


# ---------------------------------------------------------------------------
# Embedding of corpus records
# ---------------------------------------------------------------------------


def embed_records(records: Sequence[CorpusRecord], encoder: EncoderConfig,
                  external_lines: Optional[Sequence[str]] = None) -> list[EmbeddingVector]:
    """One embedding per record, in record order.

    Records are normalized on the way in (idempotent for already-normalized
    text), so fingerprints always refer to the canonical form. With
    *external_lines* set, vectors come from the external file content and
    the hashing encoder is bypassed.
    """
    queries = [normalize(rec.to_raw()) for rec in records]
    for rec, nq in zip(records, queries):
        rec.normalized = nq.text
        rec.fingerprint = nq.fingerprint_hex
    if external_lines is not None:
        vectors = parse_external_embeddings(
            external_lines, encoder.dimension, [nq.fingerprint for nq in queries])
        for vec, nq in zip(vectors, queries):
            vec.user_label = nq.user_label
        return vectors
    return [
        encode(nq.tokens, encoder, fingerprint=nq.fingerprint, user_label=nq.user_label)
        for nq in queries
    ]


def _labeled(records: Sequence[CorpusRecord],
             vectors: Sequence[EmbeddingVector]) -> list[LabeledQuery]:
    return [
        LabeledQuery(embedding=vec, claimed_user=rec.user, fingerprint=vec.query_fingerprint)
        for rec, vec in zip(records, vectors)
        if rec.user is not None
    ]


# ---------------------------------------------------------------------------
# normalize
# ---------------------------------------------------------------------------


@dataclass
class NormalizeResult:
    records: list[CorpusRecord]
    read: int
    kept: int
    duplicates_removed: int
    manifest: dict


def run_normalize(records: Sequence[CorpusRecord], apply_dedup: bool = True) -> NormalizeResult:
    read = len(records)
    kept, removed = normalize_records(list(records), apply_dedup=apply_dedup)
    manifest = build_manifest("normalize", {"dedup": apply_dedup}, {},
                              corpus_digest(kept))
    return NormalizeResult(kept, read, len(kept), removed, manifest)


# ---------------------------------------------------------------------------
# learn
# ---------------------------------------------------------------------------


@dataclass
class LearnResult:
    encoder_doc: dict
    ensemble_doc: dict
    classifier_doc: dict
    thresholds_doc: dict
    matrix_csv: str
    warnings: list[str]
    manifest: dict

    def bundle(self) -> dict:
        return {
            "format": BUNDLE_FORMAT,
            "version": BUNDLE_VERSION,
            "encoder": self.encoder_doc,
            "ensemble": self.ensemble_doc,
            "classifier": self.classifier_doc,
            "thresholds": self.thresholds_doc,
        }


def classifier_to_dict(m: ClassifierModel) -> dict:
    return {
        "format": CLASSIFIER_DOC_FORMAT,
        "version": 1,
        "users": list(m.users),
        "weights": np.asarray(m.weights, dtype=np.float64).tolist(),
        "biases": np.asarray(m.biases, dtype=np.float64).tolist(),
        "train": {
            "epochs": m.train_config.epochs,
            "batch_size": m.train_config.batch_size,
            "learning_rate": m.train_config.learning_rate,
            "seed": m.train_config.seed,
        },
    }


def classifier_from_dict(doc: dict) -> ClassifierModel:
    if doc.get("format") != CLASSIFIER_DOC_FORMAT:
        raise ValueError(f"not a classifier bundle: format={doc.get('format')!r}")
    train = doc["train"]
    return ClassifierModel(
        users=tuple(doc["users"]),
        weights=np.asarray(doc["weights"], dtype=np.float64),
        biases=np.asarray(doc["biases"], dtype=np.float64),
        train_config=TrainConfig(
            epochs=int(train["epochs"]),
            batch_size=int(train["batch_size"]),
            learning_rate=float(train["learning_rate"]),
            seed=int(train["seed"]),
        ),
    )


def fit_supervised_tier(labeled: Sequence[LabeledQuery], config: PipelineConfig,
                        seed: Optional[int] = None):
    """Classifier + probability matrix + per-user thresholds for one corpus.

    The classifier trains on the stratified training slice and the exported
    matrix holds the validation rows (one per validation query). Each
    user's threshold is floored over the significant probabilities of the
    WHOLE corpus pushed through the fitted classifier, not only the
    validation rows: a learning-period query re-detected at slack 0 then
    can never fall below its own user's threshold. A user stays undefined
    (with a warning) when the validation slice never attributes a row to
    it, and support counts report validation rows only.

    Returns (classifier, validation_matrix, thresholds).
    """
    from .roleclassifier import UserThreshold, UserThresholds

    if seed is None:
        seed = config.train.seed
    train_set, validation = stratified_split(labeled, config.split_ratio, seed=seed)
    classifier = fit_classifier(
        train_set,
        config.train.with_learning_rate(config.classifier_learning_rate).with_seed(seed))
    matrix = build_probability_matrix(classifier, validation)
    validation_support = derive_thresholds(matrix, slack=config.slack_sup)
    full_matrix = build_probability_matrix(classifier, labeled)
    floored = derive_thresholds(full_matrix, slack=config.slack_sup)
    per_user = {}
    for user in classifier.users:
        val_entry = validation_support.per_user[user]
        if val_entry.support_count == 0:
            per_user[user] = UserThreshold(threshold=None, support_count=0)
        else:
            per_user[user] = UserThreshold(
                threshold=floored.per_user[user].threshold,
                support_count=val_entry.support_count)
    thresholds = UserThresholds(per_user=per_user, slack=config.slack_sup)
    return classifier, matrix, thresholds


def run_learn(records: Sequence[CorpusRecord], config: PipelineConfig,
              external_lines: Optional[Sequence[str]] = None) -> LearnResult:
    """Fit both tiers on a learning-period corpus."""
    kept, _ = normalize_records(list(records), apply_dedup=True)
    if not kept:
        raise SqlSentinelError("learning corpus is empty after normalization")
    vectors = embed_records(kept, config.encoder, external_lines)

    captured: list[str] = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")

        ensemble_model = fit_ensemble(
            vectors,
            config.train.with_learning_rate(config.ae_learning_rate),
            nu=config.nu,
            gamma=config.gamma,
            slack=config.slack_unsup,
            pca_target_ratio=config.pca_target_ratio,
        )

        labeled = _labeled(kept, vectors)
        classifier, matrix, thresholds = fit_supervised_tier(labeled, config)

        captured.extend(str(w.message) for w in caught)

    manifest = build_manifest(
        "learn", config.to_dict(),
        {"encoder": config.encoder.seed, "train": config.train.seed},
        corpus_digest(kept))
    return LearnResult(
        encoder_doc=encoder_to_dict(config.encoder),
        ensemble_doc=ensemble_to_dict(ensemble_model),
        classifier_doc=classifier_to_dict(classifier),
        thresholds_doc=thresholds_to_dict(thresholds),
        matrix_csv=render_matrix_csv(matrix),
        warnings=captured,
        manifest=manifest,
    )


# ---------------------------------------------------------------------------
# detect
# ---------------------------------------------------------------------------


@dataclass
class DetectResult:
    verdicts: list[dict]
    score_csv: str
    histogram_csv: str
    summary: dict
    manifest: dict


def run_detect(records: Sequence[CorpusRecord], bundle: dict,
               slack_unsup: Optional[float] = None, slack_sup: Optional[float] = None,
               external_lines: Optional[Sequence[str]] = None) -> DetectResult:
    """Score every record with tier 1 and, where a user is claimed, tier 2.

    The bundle is read-only; slack overrides apply to this run only.
    """
    if bundle.get("format") != BUNDLE_FORMAT:
        raise SqlSentinelError(f"not a model bundle: format={bundle.get('format')!r}")
    for name, value in (("slack_unsup", slack_unsup), ("slack_sup", slack_sup)):
        if value is not None and value < 0:
            raise SqlSentinelError(f"{name} must be >= 0, got {value}")
    encoder = encoder_from_dict(bundle["encoder"])
    ensemble_model = ensemble_from_dict(bundle["ensemble"])
    classifier = classifier_from_dict(bundle["classifier"])
    thresholds = thresholds_from_dict(bundle["thresholds"])
    if slack_unsup is not None:
        ensemble_model = EnsembleModel(
            ensemble_model.pca_model, ensemble_model.ae_model, ensemble_model.ocsvm_model,
            ensemble_model.norm, ensemble_model.threshold, slack_unsup)
    if slack_sup is not None:
        thresholds.slack = slack_sup

    records = list(records)
    vectors = embed_records(records, encoder, external_lines)
    tier1 = score_batch(ensemble_model, vectors)

    combined: list[dict] = []
    summary = {
        "queries": len(records),
        "tier1_flagged": 0,
        "tier2_wrong_user": 0,
        "tier2_below_threshold": 0,
        "tier2_errors": 0,
        "tier2_skipped": 0,
    }
    for rec, vec, t1 in zip(records, vectors, tier1):
        entry: dict = {
            "fingerprint": rec.fingerprint,
            "query": rec.normalized,
            "tier1": {
                "raw_scores": {"pca": t1.raw_scores.pca, "ae": t1.raw_scores.ae,
                               "ocsvm": t1.raw_scores.ocsvm},
                "normalized_scores": {"pca": t1.normalized_scores.pca,
                                      "ae": t1.normalized_scores.ae,
                                      "ocsvm": t1.normalized_scores.ocsvm},
                "average": t1.average,
                "flagged": t1.flagged,
                "margin": t1.margin,
            },
        }
        if t1.flagged:
            summary["tier1_flagged"] += 1
        if rec.user is None:
            entry["tier2"] = None
            summary["tier2_skipped"] += 1
        else:
            try:
                sv = detect(classifier, thresholds,
                            LabeledQuery(vec, rec.user, vec.query_fingerprint))
                entry["tier2"] = verdict_to_dict(sv)
                if sv.reason.value == "WrongUser":
                    summary["tier2_wrong_user"] += 1
                elif sv.reason.value == "BelowThreshold":
                    summary["tier2_below_threshold"] += 1
            except UndefinedThreshold as exc:
                entry["tier2"] = {"error": str(exc), "claimed_user": rec.user}
                summary["tier2_errors"] += 1
        combined.append(entry)

    manifest = build_manifest(
        "detect",
        {"slack_unsup": ensemble_model.slack, "slack_sup": thresholds.slack},
        {"encoder": encoder.seed},
        corpus_digest(records))
    return DetectResult(
        verdicts=combined,
        score_csv=render_score_csv(tier1),
        histogram_csv=render_histogram_csv(tier1),
        summary=summary,
        manifest=manifest,
    )


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------


@dataclass
class GenerateResult:
    learning: list[CorpusRecord]
    detection: list[CorpusRecord]
    manifest: dict


def run_generate(seed: int, normal_per_role: int = 100, heldout_per_role: int = 20,
                 attack_count: int = 30, attack_kinds: Sequence[str] = ("data_leak", "sabotage", "sqli"),
                 masquerade: Optional[tuple[str, str, int]] = None,
                 mode: str = "short", target_mean_tokens: int = 200,
                 max_tokens: int = 1900, schema: Optional[SchemaSpec] = None) -> GenerateResult:
    """Produce a learning corpus and a labeled detection corpus.

    Held-out normals come from the same per-role generation stream as the
    learning queries (positions beyond normal_per_role), so they are
    guaranteed unique against the learning set while staying on the same
    distribution.
    """
    if schema is None:
        schema = load_schema()
    learning: list[CorpusRecord] = []
    detection: list[CorpusRecord] = []
    seq = 0
    for role_index, role in enumerate(schema.roles):
        total = normal_per_role + heldout_per_role
        role_seed = seed * 1000 + role_index
        if mode == "long":
            recs = generate_long(schema, role, total, target_mean_tokens=target_mean_tokens,
                                 max_tokens=max_tokens, seed=role_seed, start_seq=seq)
        else:
            recs = generate_normal(schema, role, total, seed=role_seed, start_seq=seq)
        seq += total
        learning.extend(recs[:normal_per_role])
        detection.extend(recs[normal_per_role:])
    if attack_count > 0:
        attacks = inject_attacks(schema, attack_kinds, attack_count,
                                 seed=seed * 1000 + 777, start_seq=seq)
        seq += attack_count
        detection.extend(attacks)
    if masquerade is not None:
        victim, source, m_count = masquerade
        base = GeneratedCorpus(records=detection, generation_seed=seed)
        detection = inject_internal_masquerade(
            base, schema, victim, source, m_count, seed=seed * 1000 + 778).records
    manifest = build_manifest(
        "gen",
        {
            "normal_per_role": normal_per_role,
            "heldout_per_role": heldout_per_role,
            "attack_count": attack_count,
            "attack_kinds": list(attack_kinds),
            "masquerade": list(masquerade) if masquerade else None,
            "mode": mode,
        },
        {"seed": seed},
        corpus_digest(learning + detection))
    return GenerateResult(learning, detection, manifest)


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


@dataclass
class EvaluateResult:
    runs: list[MetricsRecord]
    mean: MetricsRecord
    csv: str
    manifest: dict


def _truth_of(rec: CorpusRecord) -> Verdict:
    if rec.truth is None or rec.truth == "normal":
        return Verdict.NORMAL
    return Verdict.ABNORMAL


def _mean_metric(values: list[Optional[float]]) -> Optional[float]:
    defined = [v for v in values if v is not None]
    return sum(defined) / len(defined) if defined else None


def run_evaluate(records: Sequence[CorpusRecord], config: PipelineConfig,
                 base_seed: Optional[int] = None) -> EvaluateResult:
    """Repeated 85:15 evaluation of the supervised tier.

    Per repeat: the Normal-truth labeled queries are split per user into a
    learning pool and a held-out test slice; the learning pool is balanced
    per user (few-shot), split again into train/validation, and the fitted
    classifier + thresholds face the held-out normals together with every
    Abnormal-truth record. Metrics target the Abnormal class.
    """
    if base_seed is None:
        base_seed = config.train.seed
    records = list(records)
    kept, _ = normalize_records(records, apply_dedup=False)
    vectors = embed_records(kept, config.encoder)
    labeled_all = [(rec, vec) for rec, vec in zip(kept, vectors) if rec.user is not None]
    normal_pool = [(r, v) for r, v in labeled_all if _truth_of(r) == Verdict.NORMAL]
    abnormal_pool = [(r, v) for r, v in labeled_all if _truth_of(r) == Verdict.ABNORMAL]
    if not normal_pool:
        raise SqlSentinelError("no Normal-truth labeled queries to train on")

    runs: list[MetricsRecord] = []
    for repeat in range(config.repeats):
        seed = base_seed + repeat
        pool = [LabeledQuery(v, r.user, v.query_fingerprint) for r, v in normal_pool]
        learn_pool, test_normals = stratified_split(pool, config.split_ratio, seed=seed)
        per_user_counts: dict[str, int] = {}
        for q in learn_pool:
            per_user_counts[q.claimed_user] = per_user_counts.get(q.claimed_user, 0) + 1
        shots = config.few_shot_per_user or min(per_user_counts.values())
        shots = min(shots, min(per_user_counts.values()))
        few_shot = balanced_subsample(learn_pool, shots, seed=seed)

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            classifier, _, thresholds = fit_supervised_tier(few_shot, config, seed=seed)

        test_pairs = [(q, Verdict.NORMAL) for q in test_normals]
        test_pairs += [
            (LabeledQuery(v, r.user, v.query_fingerprint), Verdict.ABNORMAL)
            for r, v in abnormal_pool
        ]
        runs.append(evaluate(classifier, thresholds, test_pairs))

    mean = MetricsRecord(
        precision=_mean_metric([r.precision for r in runs]),
        recall=_mean_metric([r.recall for r in runs]),
        f1=_mean_metric([r.f1 for r in runs]),
        true_positives=sum(r.true_positives for r in runs),
        false_positives=sum(r.false_positives for r in runs),
        false_negatives=sum(r.false_negatives for r in runs),
        true_negatives=sum(r.true_negatives for r in runs),
    )
    csv_text = render_metrics_csv(runs, mean)
    manifest = build_manifest(
        "eval", config.to_dict(),
        {"base_seed": base_seed, "repeats": config.repeats},
        corpus_digest(kept))
    return EvaluateResult(runs, mean, csv_text, manifest)


def pipeline_config_from_dict(doc: dict) -> PipelineConfig:
    """Build a PipelineConfig from a parsed config-file document.

    Recognized sections: [encoder], [train], [ensemble], [supervised].
    Unknown keys raise so typos in a config file fail loudly.
    """
    known_sections = {"encoder", "train", "ensemble", "supervised"}
    unknown = set(doc) - known_sections
    if unknown:
        raise ValueError(f"unknown config section(s): {sorted(unknown)}")

    def section(name: str, allowed: set[str]) -> dict:
        sec = doc.get(name, {})
        bad = set(sec) - allowed
        if bad:
            raise ValueError(f"unknown key(s) in [{name}]: {sorted(bad)}")
        return sec

    enc = section("encoder", {"dimension", "capacity", "kind", "ngram_orders", "seed"})
    encoder = EncoderConfig(
        dimension=int(enc.get("dimension", 768)),
        capacity=int(enc.get("capacity", 512)),
        kind=enc.get("kind", "hashing"),
        ngram_orders=tuple(enc.get("ngram_orders", (1, 2, 3))),
        seed=int(enc.get("seed", 0)),
    )
    tr = section("train", {"epochs", "batch_size", "seed",
                           "ae_learning_rate", "classifier_learning_rate", "ae_hidden_dim"})
    train = TrainConfig(
        epochs=int(tr.get("epochs", 6)),
        batch_size=int(tr.get("batch_size", 16)),
        seed=int(tr.get("seed", 0)),
    )
    ens = section("ensemble", {"nu", "gamma", "slack", "pca_target_ratio"})
    sup = section("supervised", {"slack", "split_ratio", "repeats", "few_shot_per_user"})
    return PipelineConfig(
        encoder=encoder,
        train=train,
        ae_learning_rate=float(tr.get("ae_learning_rate", AE_LEARNING_RATE)),
        classifier_learning_rate=float(
            tr.get("classifier_learning_rate", CLASSIFIER_LEARNING_RATE)),
        ae_hidden_dim=tr.get("ae_hidden_dim"),
        nu=float(ens.get("nu", 0.05)),
        gamma=ens.get("gamma"),
        slack_unsup=float(ens.get("slack", 0.05)),
        slack_sup=float(sup.get("slack", 0.0)),
        split_ratio=float(sup.get("split_ratio", 0.85)),
        repeats=int(sup.get("repeats", 5)),
        pca_target_ratio=float(ens.get("pca_target_ratio", 0.98)),
        few_shot_per_user=sup.get("few_shot_per_user"),
    )


def render_metrics_csv(runs: Sequence[MetricsRecord], mean: MetricsRecord) -> str:
    def fmt(v):
        return "undefined" if v is None else repr(v)

    lines = ["run,precision,recall,f1,tp,fp,fn,tn"]
    for i, r in enumerate(runs, start=1):
        lines.append(f"{i},{fmt(r.precision)},{fmt(r.recall)},{fmt(r.f1)},"
                     f"{r.true_positives},{r.false_positives},{r.false_negatives},"
                     f"{r.true_negatives}")
    lines.append(f"mean,{fmt(mean.precision)},{fmt(mean.recall)},{fmt(mean.f1)},"
                 f"{mean.true_positives},{mean.false_positives},{mean.false_negatives},"
                 f"{mean.true_negatives}")
    return "\n".join(lines) + "\n"
