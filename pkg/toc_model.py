"""
Tree of Concepts predictor.

LeafNet f_phi maps encoded features to a distribution over the frozen tree's
leaves; the label head g_psi maps that distribution to class probabilities.
Training minimises concept_weight * CE(f(x), z(x)) + lam * CE(g(f(x)), y), where
z(x) is the leaf x routes to.
"""
import json
import time
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np

from concept_tree import route_batch
from config import CONFIDENCE_TAU
from errors import ConfigError, EmptyInput, EmptySlice, FingerprintMismatch, InvalidDims, SingleClass, WidthMismatch
from metrics import ConceptAudit, high_conf_contradiction, node_agreement, score_metric, validation_score
from nn_core import (
    Layer,
    MlpParams,
    adam_step,
    backward,
    forward,
    init_mlp,
    new_adam,
    one_hot,
    softmax,
    softmax_xent,
    train_with_early_stopping,
)
from replay import mixed_batches

SOFT = "soft"
HARD = "hard"


@dataclass(frozen=True, eq=False)
class ToCModel:
    leafnet: MlpParams
    head: MlpParams
    tree: object
    lam: float = 1.0
    concept_mode: str = SOFT
    concept_weight: float = 1.0

    @property
    def n_leaves(self):
        return self.tree.n_leaves

    @property
    def n_classes(self):
        return self.head.dims[-1]

    @property
    def d_enc(self):
        return self.leafnet.dims[0]


def tree_head(tree, n_classes):
    """Linear head L -> K seeded with the tree's smoothed leaf class log-frequencies.

    On a one-hot concept the head reproduces the leaf's class ranking, so the
    label term starts from the tree's predictions instead of noise.
    """
    if tree.n_classes > n_classes:
        raise InvalidDims(f"tree predicts {tree.n_classes} classes, head has {n_classes}")
    counts = np.zeros((tree.n_leaves, n_classes))
    for node in tree.nodes:
        if node.is_leaf:
            counts[node.leaf_id, :len(node.counts)] = node.counts
    log_freq = np.log((counts + 1.0) / (counts.sum(axis=1, keepdims=True) + n_classes))
    return MlpParams((Layer(weight=log_freq.T.copy(), bias=np.zeros(n_classes)),))


def build_toc(tree, d_enc, n_classes, lam=1.0, seed=0, hidden=(128, 64), dropout=0.1,
              concept_mode=SOFT, concept_weight=1.0):
    """LeafNet d_enc -> hidden -> L and a tree-seeded linear head L -> K around a frozen tree."""
    if d_enc < 1 or n_classes < 1:
        raise InvalidDims(f"d_enc and K must be >= 1, got {d_enc}, {n_classes}")
    if d_enc != tree.n_features:
        raise WidthMismatch(f"tree was fitted on {tree.n_features} features, model input is {d_enc}")
    if lam < 0 or concept_weight < 0:
        raise ConfigError("loss weights must be non-negative")
    if concept_mode not in (SOFT, HARD):
        raise ConfigError(f"unknown concept mode '{concept_mode}'")
    leafnet = init_mlp((d_enc,) + tuple(hidden) + (tree.n_leaves,), dropout=dropout, seed=[seed, 0])
    head = tree_head(tree, n_classes)
    return ToCModel(leafnet, head, tree, float(lam), concept_mode, float(concept_weight))


# ============================================================================
# Forward passes
# ============================================================================

def concept_forward(model, X, mode="eval", seed=0):
    """c_hat(x): rows on the L-simplex."""
    logits, _ = forward(model.leafnet, X, mode=mode, seed=seed)
    return softmax(logits)


def _head_input(model, concepts):
    if model.concept_mode == HARD:
        return one_hot(np.argmax(concepts, axis=1), model.n_leaves)
    return concepts


def label_forward(model, concepts):
    concepts = np.asarray(concepts, dtype=float)
    if concepts.ndim != 2 or concepts.shape[1] != model.n_leaves:
        raise WidthMismatch(f"concept width {concepts.shape[-1]} != leaf count {model.n_leaves}")
    logits, _ = forward(model.head, _head_input(model, concepts))
    return softmax(logits)


def predict_scores(model, X):
    return label_forward(model, concept_forward(model, X))


@dataclass(frozen=True)
class LossBreakdown:
    concept: float
    label: float
    total: float


def toc_loss_and_grads(model, X, y, z, mode="eval", seed=0):
    """Composite loss and exact gradients for (leafnet, head).

    The label term reaches phi through the softmax Jacobian in soft mode; in
    hard mode argmax blocks it and phi learns from the concept term alone.
    """
    logits_c, cache_c = forward(model.leafnet, X, mode=mode, seed=seed)
    concept_loss, g_concept = softmax_xent(logits_c, z)
    concepts = softmax(logits_c)

    logits_y, cache_y = forward(model.head, _head_input(model, concepts))
    label_loss, g_label = softmax_xent(logits_y, y)
    head_grads, g_head_in = backward(model.head, cache_y, model.lam * g_label, return_input_grad=True)

    g_logits = model.concept_weight * g_concept
    if model.concept_mode == SOFT:
        g_logits = g_logits + concepts * (g_head_in - (g_head_in * concepts).sum(axis=1, keepdims=True))
    leaf_grads = backward(model.leafnet, cache_c, g_logits)

    total = model.concept_weight * concept_loss + model.lam * label_loss
    return LossBreakdown(concept_loss, label_loss, total), leaf_grads, head_grads


# ============================================================================
# Continual training
# ============================================================================

@dataclass(frozen=True)
class TrainLog:
    slice_id: int
    epochs: Tuple[dict, ...]
    best_epoch: int
    stopped_epoch: int
    seconds: float = 0.0

    def to_dict(self):
        # wall-clock stays out of reports so they are byte-deterministic
        return {"slice_id": self.slice_id, "epochs": list(self.epochs),
                "best_epoch": self.best_epoch, "stopped_epoch": self.stopped_epoch}


def _eval_split(slice_):
    """Validation rows, or the training rows when the validation split is empty."""
    if len(slice_.val_idx):
        return slice_.part("val")
    return slice_.part("train")


def history_to_log(slice_id, history, started):
    epochs = tuple(
        dict(epoch=r.epoch, val_metric=r.metric, **{k: float(v) for k, v in r.losses.items()})
        for r in history.records
    )
    return TrainLog(slice_id, epochs, history.best_epoch, history.stopped_epoch, time.time() - started)


def train_slice(model, slice_, buffer, control, mix_ratio=1.0, lr=1e-3, weight_decay=1e-5,
                decoupled=True):
    """Warm-started training on one slice with replay mixing; returns (best model, TrainLog)."""
    if len(slice_.train_idx) == 0:
        raise EmptySlice(f"slice {slice_.slice_id} has no training rows", step=slice_.slice_id)
    started = time.time()
    optim = {
        "leaf": new_adam(model.leafnet, lr=lr, weight_decay=weight_decay, decoupled=decoupled),
        "head": new_adam(model.head, lr=lr, weight_decay=weight_decay, decoupled=decoupled),
    }

    def batcher(epoch):
        return mixed_batches(slice_, buffer, control.batch_size, mix_ratio, control.seed, epoch)

    def step(current, batch, epoch, index):
        X, y = batch
        z = route_batch(current.tree, X)
        losses, g_leaf, g_head = toc_loss_and_grads(
            current, X, y, z, mode="train", seed=[control.seed, slice_.slice_id, epoch, index])
        optim["leaf"], leafnet = adam_step(optim["leaf"], current.leafnet, g_leaf)
        optim["head"], head = adam_step(optim["head"], current.head, g_head)
        return replace(current, leafnet=leafnet, head=head), {
            "concept_loss": losses.concept, "label_loss": losses.label, "total_loss": losses.total}

    X_val, y_val = _eval_split(slice_)

    def val_eval(current):
        return validation_score(predict_scores(current, X_val), y_val, control.metric, current.n_classes)

    best, history = train_with_early_stopping(model, batcher, control, val_eval, step)
    return best, history_to_log(slice_.slice_id, history, started)


# ============================================================================
# Tree refresh, audits & checkpoints
# ============================================================================

def retarget_tree(model, tree, seed=0):
    """Swap in a refitted tree. Hidden layers stay warm; the leaf output layer and
    the head are re-initialised (the head from the new tree) only when the leaf count changes."""
    if tree.n_features != model.d_enc:
        raise WidthMismatch(f"new tree expects {tree.n_features} features, model input is {model.d_enc}")
    if tree.n_leaves == model.n_leaves:
        return replace(model, tree=tree)
    hidden_width = model.leafnet.dims[-2]
    fresh = init_mlp((hidden_width, tree.n_leaves), seed=[seed, 2]).layers[0]
    leafnet = MlpParams(model.leafnet.layers[:-1] + (fresh,))
    head = tree_head(tree, model.n_classes)
    return replace(model, leafnet=leafnet, head=head, tree=tree)


def concept_confusion(model, X):
    """(L, L) counts; rows are tree-assigned z, columns the predicted top concept."""
    L = model.n_leaves
    z = route_batch(model.tree, X)
    z_hat = np.argmax(concept_forward(model, X), axis=1)
    return np.bincount(z * L + z_hat, minlength=L * L).reshape(L, L)


def rule_fidelity_gap(model, X, y, metric, n_classes):
    """|M(head(predicted concepts)) - M(head(tree-assigned one-hot concepts))| on (X, y)."""
    concepts = concept_forward(model, X)
    z = route_batch(model.tree, X)
    predicted = score_metric(metric, label_forward(model, concepts), y, n_classes)
    assigned = score_metric(metric, label_forward(model, one_hot(z, model.n_leaves)), y, n_classes)
    return abs(predicted - assigned)


def concept_audit(model, X, y, metric, n_classes, tau=CONFIDENCE_TAU, with_confusion=False):
    """Node agreement, fidelity gap and contradiction rate on one labeled set."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] == 0:
        raise EmptyInput("concept audit needs at least one sample")
    concepts = concept_forward(model, X)
    z = route_batch(model.tree, X)
    rate, flagged = high_conf_contradiction(concepts, z, tau)
    try:
        gap = rule_fidelity_gap(model, X, y, metric, n_classes)
    except SingleClass:
        gap = None
    return ConceptAudit(
        node_agreement=node_agreement(z, np.argmax(concepts, axis=1)),
        fidelity_gap=gap,
        contradiction_rate=rate,
        no_confident_samples=flagged,
        tau=tau,
        n_samples=int(X.shape[0]),
        confusion=concept_confusion(model, X).tolist() if with_confusion else None,
    )


def checkpoint(model, config_hash):
    return {
        "leafnet": model.leafnet.to_dict(),
        "head": model.head.to_dict(),
        "tree_fingerprint": model.tree.fingerprint,
        "lam": model.lam,
        "concept_mode": model.concept_mode,
        "concept_weight": model.concept_weight,
        "config_hash": config_hash,
    }


def save_checkpoint(model, path, config_hash):
    with open(path, "w") as f:
        json.dump(checkpoint(model, config_hash), f, sort_keys=True)


def restore_checkpoint(payload, tree):
    if payload["tree_fingerprint"] != tree.fingerprint:
        raise FingerprintMismatch("checkpoint was trained against a different tree")
    return ToCModel(
        leafnet=MlpParams.from_dict(payload["leafnet"]),
        head=MlpParams.from_dict(payload["head"]),
        tree=tree,
        lam=payload["lam"],
        concept_mode=payload["concept_mode"],
        concept_weight=payload["concept_weight"],
    )
