"""
Task metrics, stability/plasticity aggregation and concept-consistency audits.
"""
import math
from dataclasses import asdict, dataclass
from typing import List, Optional

import numpy as np
from scipy.stats import rankdata, sem
from sklearn.metrics import f1_score

from config import CONFIDENCE_TAU
from errors import ClassOutOfRange, EmptyInput, LengthMismatch, MissingEntries, ProtocolError, SingleClass

AUROC = "auroc"
MACRO_F1 = "macro_f1"
ACCURACY = "accuracy"
METRICS = (AUROC, MACRO_F1, ACCURACY)


def _pair(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape[0] != b.shape[0]:
        raise LengthMismatch(f"lengths differ: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] == 0:
        raise EmptyInput("metric needs at least one sample")
    return a, b


# ============================================================================
# Task metrics
# ============================================================================

def auroc(scores, labels):
    """P(score+ > score-) + 0.5 P(tie), via midranks."""
    scores, labels = _pair(np.asarray(scores, dtype=float), np.asarray(labels, dtype=np.int64))
    if np.any((labels != 0) & (labels != 1)):
        raise ClassOutOfRange("AUROC expects binary labels")
    positive = labels == 1
    n_pos = int(positive.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUROC undefined: only one class present")
    ranks = rankdata(scores)
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def macro_f1(preds, labels, n_classes):
    """Unweighted mean of per-class F1 over all K classes; absent classes count 0."""
    preds, labels = _pair(np.asarray(preds, dtype=np.int64), np.asarray(labels, dtype=np.int64))
    for arr in (preds, labels):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise ClassOutOfRange(f"class id outside 0..{n_classes - 1}")
    return float(f1_score(labels, preds, labels=list(range(n_classes)), average="macro", zero_division=0))


def accuracy(preds, labels):
    preds, labels = _pair(preds, labels)
    return float(np.mean(preds == labels))


def score_metric(metric, probs, labels, n_classes):
    """Evaluate class-probability rows with the named metric."""
    probs = np.asarray(probs, dtype=float)
    if metric == AUROC:
        if n_classes != 2:
            raise ClassOutOfRange("AUROC is only implemented for binary tasks")
        return auroc(probs[:, 1], labels)
    if metric == MACRO_F1:
        return macro_f1(np.argmax(probs, axis=1), labels, n_classes)
    if metric == ACCURACY:
        return accuracy(np.argmax(probs, axis=1), labels)
    raise ProtocolError(f"unknown metric '{metric}'")


def safe_score(metric, probs, labels, n_classes):
    """score_metric, or None when AUROC is undefined on a single-class split."""
    try:
        return score_metric(metric, probs, labels, n_classes)
    except SingleClass:
        return None


def validation_score(probs, labels, metric, n_classes):
    """Early-stopping score. Falls back to accuracy when AUROC is undefined."""
    value = safe_score(metric, probs, labels, n_classes)
    if value is None:
        value = accuracy(np.argmax(probs, axis=1), labels)
    return value


# ============================================================================
# Stability / plasticity
# ============================================================================

class MetricMatrix:
    """R[t][j]: metric of the step-t model on slice j's test split (1-based, j <= t).

    An entry may be set to None when the metric is undefined on that split.
    """

    def __init__(self, n_steps, metric):
        self.n_steps = int(n_steps)
        self.metric = metric
        self._values = np.full((self.n_steps, self.n_steps), np.nan)
        self._filled = np.zeros((self.n_steps, self.n_steps), dtype=bool)

    def set(self, t, j, value):
        if not 1 <= j <= t <= self.n_steps:
            raise ProtocolError(f"entry R[{t}][{j}] outside the lower triangle", step=t)
        self._values[t - 1, j - 1] = np.nan if value is None else float(value)
        self._filled[t - 1, j - 1] = True

    def get(self, t, j):
        value = self._values[t - 1, j - 1]
        return None if math.isnan(value) else float(value)

    def row(self, t):
        if not 1 <= t <= self.n_steps or not self._filled[t - 1, :t].all():
            raise MissingEntries(f"row {t} of the metric matrix is not fully populated", step=t)
        return [self.get(t, j) for j in range(1, t + 1)]

    def is_complete(self):
        return bool(np.array_equal(self._filled, np.tril(np.ones_like(self._filled))))

    def to_dict(self):
        rows = []
        for t in range(1, self.n_steps + 1):
            rows.append([self.get(t, j) if self._filled[t - 1, j - 1] else None for j in range(1, t + 1)])
        return {"metric": self.metric, "steps": self.n_steps, "rows": rows}

    @classmethod
    def from_dict(cls, data):
        matrix = cls(data["steps"], data["metric"])
        for t, row in enumerate(data["rows"], start=1):
            for j, value in enumerate(row, start=1):
                matrix.set(t, j, value)
        return matrix


def _mean_defined(values):
    defined = [v for v in values if v is not None]
    return float(np.mean(defined)) if defined else None


def stability_plasticity(matrix, t):
    """(P_t, S_t). S_1 is None: there is no past slice yet."""
    row = matrix.row(t)
    plasticity = row[-1]
    stability = _mean_defined(row[:-1]) if t > 1 else None
    return plasticity, stability


def summarize_matrix(matrix):
    """Per-step P_t / S_t plus the Avg. Current-Task and Avg. Past-Task aggregates."""
    P, S = [], []
    for t in range(1, matrix.n_steps + 1):
        p, s = stability_plasticity(matrix, t)
        P.append(p)
        S.append(s)
    return {
        "plasticity": P,
        "stability": S,
        "avg_current": _mean_defined(P),
        "avg_past": _mean_defined(S[1:]),
        "final_past": S[-1],
    }


def mean_se(values):
    """(mean, standard error) over defined seed values; SE is None for a single value."""
    defined = [float(v) for v in values if v is not None]
    if not defined:
        return None, None
    mean = float(np.mean(defined))
    if len(defined) < 2:
        return mean, None
    return mean, float(sem(defined))


# ============================================================================
# Concept consistency
# ============================================================================

@dataclass(frozen=True)
class ConceptAudit:
    node_agreement: float
    fidelity_gap: Optional[float]
    contradiction_rate: float
    no_confident_samples: bool
    tau: float
    n_samples: int
    confusion: Optional[List[List[int]]] = None

    def to_dict(self):
        return asdict(self)


def node_agreement(z, z_hat):
    z, z_hat = _pair(z, z_hat)
    return float(np.mean(z == z_hat))


def high_conf_contradiction(concepts, z, tau=CONFIDENCE_TAU):
    """(rate, no_confident_samples) among rows whose top concept mass exceeds tau."""
    if not 0.0 < tau < 1.0:
        raise ProtocolError(f"confidence threshold {tau} outside (0, 1)")
    concepts = np.asarray(concepts, dtype=float)
    z = np.asarray(z)
    confident = concepts.max(axis=1) > tau
    if not confident.any():
        return 0.0, True
    disagree = np.argmax(concepts, axis=1) != z
    return float(disagree[confident].mean()), False
