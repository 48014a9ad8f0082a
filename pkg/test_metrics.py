#!/usr/bin/env python3
"""
Tests for task metrics, the stability/plasticity matrix and concept audits.
Run: pytest test_metrics.py -v
"""
import numpy as np
import pytest

from concept_tree import FrozenTree, TreeNode
from errors import ClassOutOfRange, EmptyInput, LengthMismatch, MissingEntries, ProtocolError, SingleClass
from metrics import (
    MetricMatrix,
    accuracy,
    auroc,
    high_conf_contradiction,
    macro_f1,
    mean_se,
    node_agreement,
    safe_score,
    score_metric,
    stability_plasticity,
    summarize_matrix,
    validation_score,
)
from nn_core import Layer, MlpParams
from toc_model import HARD, ToCModel, concept_audit, rule_fidelity_gap


# ============================================================================
# AUROC
# ============================================================================

def brute_force_auroc(scores, labels):
    pos, neg = scores[labels == 1], scores[labels == 0]
    wins = sum(1.0 for p in pos for n in neg if p > n)
    ties = sum(1.0 for p in pos for n in neg if p == n)
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


def test_auroc_matches_pairwise_definition():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(2, 60))
        labels = rng.integers(0, 2, size=n)
        labels[:2] = [0, 1]
        scores = rng.integers(0, 10, size=n).astype(float)
        assert auroc(scores, labels) == brute_force_auroc(scores, labels)


def test_auroc_reference_values():
    assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auroc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0
    assert auroc([0.5] * 6, [0, 1, 0, 1, 1, 0]) == 0.5


def test_auroc_is_rank_based():
    rng = np.random.default_rng(1)
    scores = rng.standard_normal(100)
    labels = (rng.random(100) < 0.4).astype(int)
    labels[:2] = [0, 1]
    assert auroc(np.exp(scores) * 3 + 1, labels) == pytest.approx(auroc(scores, labels), abs=1e-12)
    assert auroc(scores, labels) + auroc(-scores, labels) == pytest.approx(1.0, abs=1e-12)


def test_auroc_errors():
    with pytest.raises(SingleClass):
        auroc([0.1, 0.4], [1, 1])
    with pytest.raises(LengthMismatch):
        auroc([0.1, 0.4, 0.2], [0, 1])
    with pytest.raises(EmptyInput):
        auroc([], [])
    with pytest.raises(ClassOutOfRange):
        auroc([0.1, 0.4, 0.3], [0, 1, 2])


# ============================================================================
# Macro-F1 & accuracy
# ============================================================================

def test_macro_f1_reference_value():
    assert macro_f1([0, 0, 0, 0], [0, 0, 1, 1], 2) == pytest.approx(1.0 / 3.0)
    assert macro_f1([2, 0, 1], [2, 0, 1], 3) == 1.0


def confusion_f1(preds, labels, n_classes):
    scores = []
    for k in range(n_classes):
        tp = np.sum((preds == k) & (labels == k))
        fp = np.sum((preds == k) & (labels != k))
        fn = np.sum((preds != k) & (labels == k))
        scores.append(2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 0.0)
    return float(np.mean(scores))


def test_macro_f1_matches_confusion_counts():
    rng = np.random.default_rng(2)
    for _ in range(50):
        labels = rng.integers(0, 3, size=100)
        preds = rng.integers(0, 3, size=100)
        assert macro_f1(preds, labels, 3) == pytest.approx(confusion_f1(preds, labels, 3), abs=1e-12)
        order = rng.permutation(100)
        assert macro_f1(preds[order], labels[order], 3) == pytest.approx(macro_f1(preds, labels, 3), abs=1e-12)


def test_macro_f1_counts_absent_classes():
    # class 2 never appears: its F1 is 0 and still averaged in
    assert macro_f1([0, 1], [0, 1], 3) == pytest.approx(2.0 / 3.0)
    with pytest.raises(ClassOutOfRange):
        macro_f1([0, 3], [0, 1], 3)


def test_score_metric_dispatch():
    probs = np.array([[0.9, 0.1], [0.3, 0.7], [0.6, 0.4]])
    labels = np.array([0, 1, 1])
    assert score_metric("auroc", probs, labels, 2) == 1.0
    assert score_metric("accuracy", probs, labels, 2) == pytest.approx(2.0 / 3.0)
    assert accuracy(np.array([1, 1]), np.array([1, 0])) == 0.5
    with pytest.raises(ProtocolError):
        score_metric("brier", probs, labels, 2)


def test_single_class_split_handling():
    probs = np.array([[0.2, 0.8], [0.6, 0.4]])
    assert safe_score("auroc", probs, [1, 1], 2) is None
    assert validation_score(probs, np.array([1, 1]), "auroc", 2) == 0.5


# ============================================================================
# Stability / plasticity
# ============================================================================

def scripted_matrix(last_row=(0.6, 0.8, 0.9)):
    matrix = MetricMatrix(3, "auroc")
    for t, row in enumerate([(0.7,), (0.65, 0.85), last_row], start=1):
        for j, value in enumerate(row, start=1):
            matrix.set(t, j, value)
    return matrix


def test_stability_and_plasticity():
    matrix = scripted_matrix()
    plasticity, stability = stability_plasticity(matrix, 3)
    assert plasticity == 0.9
    assert stability == pytest.approx(0.7)
    assert stability_plasticity(matrix, 1) == (0.7, None)


def test_summary_aggregates():
    summary = summarize_matrix(scripted_matrix())
    assert summary["plasticity"] == [0.7, 0.85, 0.9]
    assert summary["stability"][0] is None
    assert summary["avg_current"] == pytest.approx((0.7 + 0.85 + 0.9) / 3)
    assert summary["avg_past"] == pytest.approx((0.65 + 0.7) / 2)
    assert summary["final_past"] == pytest.approx(0.7)


def test_undefined_entries_are_skipped():
    matrix = scripted_matrix(last_row=(None, 0.8, 0.9))
    assert matrix.get(3, 1) is None
    assert stability_plasticity(matrix, 3)[1] == pytest.approx(0.8)
    assert matrix.is_complete()


def test_matrix_guards():
    matrix = MetricMatrix(2, "auroc")
    with pytest.raises(ProtocolError):
        matrix.set(1, 2, 0.5)
    matrix.set(1, 1, 0.5)
    matrix.set(2, 2, 0.5)
    assert not matrix.is_complete()
    with pytest.raises(MissingEntries):
        matrix.row(2)


def test_matrix_serialisation_keeps_undefined_entries():
    matrix = scripted_matrix(last_row=(None, 0.8, 0.9))
    restored = MetricMatrix.from_dict(matrix.to_dict())
    assert restored.to_dict() == matrix.to_dict()
    assert restored.to_dict()["rows"][2][0] is None


def test_mean_se():
    mean, se = mean_se([1.0, 2.0, 3.0])
    assert mean == 2.0
    assert se == pytest.approx(1.0 / np.sqrt(3.0))
    assert mean_se([0.8]) == (0.8, None)
    assert mean_se([None, 0.5, None]) == (0.5, None)
    assert mean_se([]) == (None, None)


# ============================================================================
# Concept consistency
# ============================================================================

def test_node_agreement():
    assert node_agreement([0, 1, 2, 2], [0, 1, 2, 2]) == 1.0
    assert node_agreement([0, 1, 2, 2], [1, 1, 2, 0]) == 0.5
    with pytest.raises(EmptyInput):
        node_agreement([], [])


def test_contradiction_rate_among_confident_rows():
    concepts = np.array(
        [[0.9, 0.1], [0.95, 0.05], [0.1, 0.9], [0.85, 0.15]]
        + [[0.6, 0.4]] * 6
    )
    z = np.array([0, 0, 1, 1, 0, 0, 0, 0, 0, 0])
    assert high_conf_contradiction(concepts, z, tau=0.8) == (0.25, False)
    assert high_conf_contradiction(np.full((3, 2), 0.5), [0, 1, 0], tau=0.8) == (0.0, True)
    with pytest.raises(ProtocolError):
        high_conf_contradiction(concepts, z, tau=1.0)


def threshold_model():
    """Tree splits x <= 0; the LeafNet's boundary sits at x = 0.125 instead."""
    tree = FrozenTree(
        nodes=(TreeNode(feature=0, threshold=0.0, left=1, right=2),
               TreeNode(leaf_id=0, counts=(5, 0)),
               TreeNode(leaf_id=1, counts=(0, 5))),
        n_features=1, n_classes=2, depth=1, n_leaves=2, max_depth=1, min_leaf=1, fingerprint="threshold")
    leafnet = MlpParams((Layer(np.array([[-100.0], [100.0]]), np.array([0.0, -25.0])),))
    head = MlpParams((Layer(np.array([[5.0, -5.0], [-5.0, 5.0]]), np.zeros(2)),))
    return ToCModel(leafnet=leafnet, head=head, tree=tree, concept_mode=HARD)


def test_fidelity_gap_on_hand_built_model():
    model = threshold_model()
    X = np.array([[-1.0], [-0.8], [-0.6], [-0.4], [-0.2], [0.1], [0.4], [0.6], [0.8], [1.0]])
    y = np.array([0, 0, 0, 0, 0, 1, 1, 1, 1, 1])
    assert rule_fidelity_gap(model, X, y, "accuracy", 2) == pytest.approx(0.1)

    audit = concept_audit(model, X, y, "accuracy", 2, tau=0.8, with_confusion=True)
    assert audit.node_agreement == pytest.approx(0.9)
    assert audit.contradiction_rate == pytest.approx(0.1)
    assert audit.confusion == [[5, 0], [1, 4]]
    assert audit.n_samples == 10


def test_fidelity_gap_vanishes_when_concepts_match_the_tree():
    model = threshold_model()
    X = np.array([[-1.0], [-0.5], [0.5], [1.0]])
    y = np.array([0, 1, 1, 0])
    assert rule_fidelity_gap(model, X, y, "accuracy", 2) == 0.0
    assert concept_audit(model, X, np.array([1, 1, 1, 1]), "auroc", 2).fidelity_gap is None


if __name__ == "__main__":
    import sys
    print("=" * 70)
    print("METRICS TESTS")
    print("=" * 70)
    sys.exit(pytest.main([__file__, "-v"]))
