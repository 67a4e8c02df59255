"""Supervised tier: per-role probabilistic classification with per-user
probability thresholds.

Learning period: a softmax linear model is fitted on labeled embeddings,
a held-out stratified validation slice is pushed through it to build the
probability matrix (one row per validation query, one column per user,
rows summing to 1), and each user's threshold is the LOWEST of the
row-maximum ("significant") probabilities attributed to that user by
argmax.

Detection period, two rules: a query claiming user u is abnormal when the
argmax user differs from u (WrongUser), or when the argmax is u but the
top probability falls below u's threshold scaled by (1 - slack)
(BelowThreshold). Users that received no validation rows carry an
explicitly undefined threshold and detection for them refuses to guess.

The softmax linear model stands in for a fine-tuned transformer
classification head; the matrix -> thresholds -> rules protocol is
classifier-agnostic.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .config import TrainConfig
from .embedding import EmbeddingVector
from .errors import NonFiniteLoss, SingleClass, UndefinedThreshold

ROW_SUM_TOL = 1e-9


@dataclass(frozen=True)
class LabeledQuery:
    embedding: EmbeddingVector
    claimed_user: str
    fingerprint: int = 0


@dataclass
class ClassifierModel:
    users: tuple[str, ...]
    weights: np.ndarray  # (u, d)
    biases: np.ndarray   # (u,)
    train_config: TrainConfig

    @property
    def n_users(self) -> int:
        return len(self.users)


@dataclass
class ProbabilityMatrix:
    users: tuple[str, ...]
    fingerprints: tuple[int, ...]
    rows: np.ndarray  # (n, u)

    def validate_rows(self) -> None:
        sums = self.rows.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)
        if bad.size:
            raise ValueError(
                f"{bad.size} matrix row(s) do not sum to 1 (first: row {bad[0]}, "
                f"sum {sums[bad[0]]!r})")


@dataclass(frozen=True)
class UserThreshold:
    threshold: Optional[float]  # None when the user had no validation support
    support_count: int

    @property
    def defined(self) -> bool:
        return self.threshold is not None


@dataclass
class UserThresholds:
    per_user: dict[str, UserThreshold]
    slack: float = 0.0

    def require(self, user: str) -> float:
        entry = self.per_user.get(user)
        if entry is None or not entry.defined:
            raise UndefinedThreshold(user)
        return entry.threshold


class Verdict(str, Enum):
    NORMAL = "Normal"
    ABNORMAL = "Abnormal"


class Reason(str, Enum):
    NONE = "None"
    WRONG_USER = "WrongUser"
    BELOW_THRESHOLD = "BelowThreshold"


@dataclass(frozen=True)
class SupervisedVerdict:
    fingerprint: int
    claimed_user: str
    predicted_user: str
    top_probability: float
    verdict: Verdict
    reason: Reason


@dataclass
class MetricsRecord:
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]
    true_positives: int = 0
    false_positives: int = 0
    false_negatives: int = 0
    true_negatives: int = 0


# ---------------------------------------------------------------------------
# Training and inference
# ---------------------------------------------------------------------------


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_loss_and_grads(W, b, X, y):
    """Mean cross-entropy over a batch with analytic gradients.

    Returns (loss, (dW, db)); y holds class indices.
    """
    P = _softmax(X @ W.T + b)
    n = X.shape[0]
    loss = float(-np.mean(np.log(P[np.arange(n), y] + 1e-300)))
    G = P.copy()
    G[np.arange(n), y] -= 1.0
    G /= n
    return loss, (G.T @ X, G.sum(axis=0))


def fit_classifier(train: Sequence[LabeledQuery], cfg: TrainConfig) -> ClassifierModel:
    """Fit the softmax linear model; deterministic under cfg.seed."""
    users = tuple(sorted({q.claimed_user for q in train}))
    if len(users) < 2:
        raise SingleClass(f"need at least 2 users, got {len(users)}")
    index = {u: i for i, u in enumerate(users)}
    X = np.stack([q.embedding.values for q in train])
    y = np.array([index[q.claimed_user] for q in train])
    n, d = X.shape
    u = len(users)

    W = np.zeros((u, d))
    b = np.zeros(u)
    m_t = [np.zeros_like(W), np.zeros_like(b)]
    v_t = [np.zeros_like(W), np.zeros_like(b)]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    rng = np.random.default_rng(cfg.seed)

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for batch_index, start in enumerate(range(0, n, cfg.batch_size)):
            sel = order[start:start + cfg.batch_size]
            loss, grads = cross_entropy_loss_and_grads(W, b, X[sel], y[sel])
            if not np.isfinite(loss):
                raise NonFiniteLoss(epoch + 1, batch_index + 1)
            step += 1
            bc1 = 1.0 - beta1 ** step
            bc2 = 1.0 - beta2 ** step
            for p, g, mm, vv in zip((W, b), grads, m_t, v_t):
                mm *= beta1
                mm += (1.0 - beta1) * g
                vv *= beta2
                vv += (1.0 - beta2) * g * g
                p -= cfg.learning_rate * (mm / bc1) / (np.sqrt(vv / bc2) + eps)

    return ClassifierModel(users=users, weights=W, biases=b, train_config=cfg)


def predict_proba(m: ClassifierModel, x: EmbeddingVector) -> np.ndarray:
    return _softmax(m.weights @ x.values + m.biases)


def build_probability_matrix(m: ClassifierModel,
                             validation: Sequence[LabeledQuery]) -> ProbabilityMatrix:
    """One probability row per validation query, row order preserved.

    Users absent from the validation slice trigger a warning: their
    thresholds will come out undefined downstream.
    """
    if not validation:
        raise ValueError("validation set is empty")
    present = {q.claimed_user for q in validation}
    absent = [u for u in m.users if u not in present]
    if absent:
        warnings.warn(
            f"validation set is missing user(s) {absent}; their thresholds "
            f"will be undefined", stacklevel=2)
    # Row-wise through predict_proba so stored rows are bit-identical to
    # any later recomputation.
    rows = np.stack([predict_proba(m, q.embedding) for q in validation])
    pm = ProbabilityMatrix(
        users=m.users,
        fingerprints=tuple(q.fingerprint for q in validation),
        rows=rows,
    )
    pm.validate_rows()
    return pm


def derive_thresholds(pm: ProbabilityMatrix, slack: float = 0.0) -> UserThresholds:
    """Per-user lowest significant probability.

    Each row's significant probability is its maximum, attributed to the
    argmax user (ties resolve to the lowest user index). A user's
    threshold is the minimum significant probability over rows attributed
    to it. Rows are taken as printed: no row-sum re-validation here, so
    externally sourced matrices are accepted verbatim.
    """
    significant = pm.rows.max(axis=1)
    owners = pm.rows.argmax(axis=1)
    per_user: dict[str, UserThreshold] = {}
    for idx, user in enumerate(pm.users):
        mask = owners == idx
        count = int(mask.sum())
        if count == 0:
            warnings.warn(f"user {user!r} has no validation support; threshold undefined",
                          stacklevel=2)
            per_user[user] = UserThreshold(threshold=None, support_count=0)
        else:
            per_user[user] = UserThreshold(
                threshold=float(significant[mask].min()), support_count=count)
    return UserThresholds(per_user=per_user, slack=slack)


def detect(m: ClassifierModel, th: UserThresholds, q: LabeledQuery) -> SupervisedVerdict:
    """Apply the two detection rules to one claimed-user query."""
    if q.claimed_user not in m.users:
        raise UndefinedThreshold(q.claimed_user)
    threshold = th.require(q.claimed_user)
    p = predict_proba(m, q.embedding)
    top = int(np.argmax(p))
    predicted = m.users[top]
    top_probability = float(p[top])
    if predicted != q.claimed_user:
        verdict, reason = Verdict.ABNORMAL, Reason.WRONG_USER
    elif top_probability < threshold * (1.0 - th.slack):
        verdict, reason = Verdict.ABNORMAL, Reason.BELOW_THRESHOLD
    else:
        verdict, reason = Verdict.NORMAL, Reason.NONE
    return SupervisedVerdict(
        fingerprint=q.fingerprint,
        claimed_user=q.claimed_user,
        predicted_user=predicted,
        top_probability=top_probability,
        verdict=verdict,
        reason=reason,
    )


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def evaluate(m: ClassifierModel, th: UserThresholds,
             test: Sequence[tuple[LabeledQuery, Verdict]]) -> MetricsRecord:
    """Precision/recall/F1 over the Abnormal class.

    A metric whose denominator is zero is reported as None (undefined),
    never as 0.
    """
    if not test:
        raise ValueError("test set is empty")
    tp = fp = fn = tn = 0
    for query, truth in test:
        predicted = detect(m, th, query).verdict
        if predicted == Verdict.ABNORMAL and truth == Verdict.ABNORMAL:
            tp += 1
        elif predicted == Verdict.ABNORMAL:
            fp += 1
        elif truth == Verdict.ABNORMAL:
            fn += 1
        else:
            tn += 1
    precision = tp / (tp + fp) if (tp + fp) > 0 else None
    recall = tp / (tp + fn) if (tp + fn) > 0 else None
    f1 = f1_score(precision, recall)
    return MetricsRecord(precision, recall, f1, tp, fp, fn, tn)


def f1_score(precision: Optional[float], recall: Optional[float]) -> Optional[float]:
    """2PR / (P + R), undefined when either input is undefined or both 0."""
    if precision is None or recall is None or (precision + recall) == 0:
        return None
    return 2.0 * precision * recall / (precision + recall)


def stratified_split(queries: Sequence[LabeledQuery], ratio: float,
                     seed: int) -> tuple[list[LabeledQuery], list[LabeledQuery]]:
    """Seeded per-user shuffle and split; every user lands in both halves
    when it has at least 2 queries (the held-out half gets at least 1)."""
    rng = np.random.default_rng(seed)
    by_user: dict[str, list[LabeledQuery]] = {}
    for q in queries:
        by_user.setdefault(q.claimed_user, []).append(q)
    first: list[LabeledQuery] = []
    second: list[LabeledQuery] = []
    for user in sorted(by_user):
        group = by_user[user]
        order = rng.permutation(len(group))
        n_first = int(round(len(group) * ratio))
        n_first = min(n_first, len(group) - 1) if len(group) > 1 else len(group)
        n_first = max(n_first, 1)
        for pos, idx in enumerate(order):
            (first if pos < n_first else second).append(group[idx])
    return first, second


def balanced_subsample(queries: Sequence[LabeledQuery], per_user: int,
                       seed: int) -> list[LabeledQuery]:
    """Equal number of queries per user, seeded."""
    rng = np.random.default_rng(seed)
    by_user: dict[str, list[LabeledQuery]] = {}
    for q in queries:
        by_user.setdefault(q.claimed_user, []).append(q)
    picked: list[LabeledQuery] = []
    for user in sorted(by_user):
        group = by_user[user]
        if len(group) < per_user:
            raise ValueError(f"user {user!r} has only {len(group)} queries, "
                             f"cannot sample {per_user}")
        order = rng.permutation(len(group))[:per_user]
        picked.extend(group[i] for i in order)
    return picked


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------


def render_matrix_csv(pm: ProbabilityMatrix) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["fingerprint", *pm.users])
    for fp, row in zip(pm.fingerprints, pm.rows):
        writer.writerow([f"{fp:016x}", *(repr(float(p)) for p in row)])
    return buf.getvalue()


def thresholds_to_dict(th: UserThresholds) -> dict:
    return {
        "slack": th.slack,
        "users": {
            user: {"threshold": entry.threshold, "support_count": entry.support_count}
            for user, entry in sorted(th.per_user.items())
        },
    }


def thresholds_from_dict(doc: dict) -> UserThresholds:
    per_user = {
        user: UserThreshold(
            threshold=entry["threshold"],
            support_count=int(entry["support_count"]),
        )
        for user, entry in doc["users"].items()
    }
    return UserThresholds(per_user=per_user, slack=float(doc.get("slack", 0.0)))


def verdict_to_dict(v: SupervisedVerdict) -> dict:
    return {
        "fingerprint": f"{v.fingerprint:016x}",
        "claimed_user": v.claimed_user,
        "predicted_user": v.predicted_user,
        "top_probability": v.top_probability,
        "verdict": v.verdict.value,
        "reason": v.reason.value,
    }
