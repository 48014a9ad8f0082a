"""
Learners behind one interface: Tree of Concepts, a per-slice refitted CART and
a direct MLP on encoded features.

The protocol only talks to LearnerInterface, so every learner sees the same
slices, buffer and training control.
"""
import time
from typing import Optional, Protocol

import numpy as np

from concept_tree import fit_tree, predict_tree_batch, render_rules, route_batch
from errors import ConfigError, EmptyData, EmptySlice
from metrics import validation_score
from nn_core import adam_step, backward, forward, init_mlp, new_adam, softmax, softmax_xent, train_with_early_stopping
from replay import mixed_batches
from toc_model import build_toc, concept_audit, history_to_log, predict_scores, retarget_tree, train_slice

TOC = "toc"
TREE_BASELINE = "tree_baseline"
MLP_DIRECT = "mlp_direct"
LEARNERS = (TOC, TREE_BASELINE, MLP_DIRECT)


class LearnerInterface(Protocol):
    name: str

    def init(self, seed, d_enc, n_classes, scaffold): ...

    def train_slice(self, slice_, buffer, control): ...

    def predict_scores(self, X): ...

    def snapshot(self): ...

    def rules(self, prep=None) -> Optional[str]: ...

    def replay_concepts(self, slice_): ...


# ============================================================================
# Tree of Concepts
# ============================================================================

class TocLearner:
    name = TOC

    def __init__(self, max_depth=4, min_leaf=50, lam=1.0, concept_mode="soft", concept_weight=1.0,
                 hidden=(128, 64), dropout=0.1, mix_ratio=1.0, lr=1e-3, weight_decay=1e-5,
                 decoupled=True, refresh_tree=False):
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.lam = lam
        self.concept_mode = concept_mode
        self.concept_weight = concept_weight
        self.hidden = tuple(hidden)
        self.dropout = dropout
        self.mix_ratio = mix_ratio
        self.optim = {"lr": lr, "weight_decay": weight_decay, "decoupled": decoupled}
        self.refresh_tree = refresh_tree
        self.model = None
        self.seed = 0

    def init(self, seed, d_enc, n_classes, scaffold):
        """Fit the concept tree on the scaffold training rows, then build LeafNet + head."""
        X, y = scaffold.part("train")
        tree = fit_tree(X, y, self.max_depth, self.min_leaf, seed=seed, n_classes=n_classes)
        self.seed = seed
        self.model = build_toc(tree, d_enc, n_classes, lam=self.lam, seed=seed, hidden=self.hidden,
                               dropout=self.dropout, concept_mode=self.concept_mode,
                               concept_weight=self.concept_weight)
        return self

    def train_slice(self, slice_, buffer, control):
        if self.refresh_tree and slice_.slice_id > 1:
            X, y = slice_.part("train")
            if len(y) == 0:
                raise EmptySlice(f"slice {slice_.slice_id} has no training rows", step=slice_.slice_id)
            tree = fit_tree(X, y, self.max_depth, self.min_leaf, seed=self.seed,
                            n_classes=self.model.n_classes)
            self.model = retarget_tree(self.model, tree, seed=self.seed + slice_.slice_id)
        self.model, log = train_slice(self.model, slice_, buffer, control, mix_ratio=self.mix_ratio,
                                      **self.optim)
        return log

    def predict_scores(self, X):
        return predict_scores(self.model, X)

    def snapshot(self):
        return self.model

    def rules(self, prep=None):
        return render_rules(self.model.tree, prep)

    def replay_concepts(self, slice_):
        return route_batch(self.model.tree, slice_.X)

    def audit(self, X, y, metric, n_classes, tau, with_confusion=False):
        return concept_audit(self.model, X, y, metric, n_classes, tau, with_confusion=with_confusion)


# ============================================================================
# Per-slice refitted decision tree
# ============================================================================

def tree_baseline_step(state, slice_, buffer, max_depth=4, min_leaf=50, n_classes=None):
    """Fresh CART on the current train split plus every buffered item; `state` is discarded."""
    X, y = slice_.part("train")
    if len(buffer) > 0:
        X_mem, y_mem = buffer.all_arrays()
        X, y = np.vstack([X, X_mem]), np.concatenate([y, y_mem])
    if len(y) == 0:
        raise EmptyData(f"no training rows for slice {slice_.slice_id}", step=slice_.slice_id)
    return fit_tree(X, y, max_depth, min_leaf, seed=slice_.slice_id, n_classes=n_classes)


class TreeBaseline:
    name = TREE_BASELINE

    def __init__(self, max_depth=4, min_leaf=50):
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.tree = None
        self.n_classes = None

    def init(self, seed, d_enc, n_classes, scaffold):
        self.n_classes = n_classes
        return self

    def train_slice(self, slice_, buffer, control):
        self.tree = tree_baseline_step(self.tree, slice_, buffer, self.max_depth, self.min_leaf, self.n_classes)
        return None

    def predict_scores(self, X):
        return predict_tree_batch(self.tree, X)

    def snapshot(self):
        return self.tree

    def rules(self, prep=None):
        return render_rules(self.tree, prep)

    def replay_concepts(self, slice_):
        return route_batch(self.tree, slice_.X)

    def audit(self, X, y, metric, n_classes, tau, with_confusion=False):
        return None


# ============================================================================
# Direct MLP (deep stand-in)
# ============================================================================

def mlp_direct_step(params, slice_, buffer, control, mix_ratio=1.0, lr=1e-3, weight_decay=1e-5,
                    decoupled=True):
    """Warm-started label-only training with the same replay mixing and early stopping as toc."""
    if len(slice_.train_idx) == 0:
        raise EmptySlice(f"slice {slice_.slice_id} has no training rows", step=slice_.slice_id)
    started = time.time()
    state = {"adam": new_adam(params, lr=lr, weight_decay=weight_decay, decoupled=decoupled)}
    n_classes = params.dims[-1]

    def batcher(epoch):
        return mixed_batches(slice_, buffer, control.batch_size, mix_ratio, control.seed, epoch)

    def step(current, batch, epoch, index):
        X, y = batch
        logits, cache = forward(current, X, mode="train", seed=[control.seed, slice_.slice_id, epoch, index])
        loss, grad = softmax_xent(logits, y)
        state["adam"], current = adam_step(state["adam"], current, backward(current, cache, grad))
        return current, {"label_loss": loss, "total_loss": loss}

    if len(slice_.val_idx):
        X_val, y_val = slice_.part("val")
    else:
        X_val, y_val = slice_.part("train")

    def val_eval(current):
        probs = softmax(forward(current, X_val)[0])
        return validation_score(probs, y_val, control.metric, n_classes)

    best, history = train_with_early_stopping(params, batcher, control, val_eval, step)
    return best, history_to_log(slice_.slice_id, history, started)


class MlpDirect:
    name = MLP_DIRECT

    def __init__(self, hidden=(128, 64), dropout=0.1, mix_ratio=1.0, lr=1e-3, weight_decay=1e-5,
                 decoupled=True):
        self.hidden = tuple(hidden)
        self.dropout = dropout
        self.mix_ratio = mix_ratio
        self.optim = {"lr": lr, "weight_decay": weight_decay, "decoupled": decoupled}
        self.params = None

    def init(self, seed, d_enc, n_classes, scaffold):
        # same seed stream as the LeafNet, only the output width differs
        self.params = init_mlp((d_enc,) + self.hidden + (n_classes,), dropout=self.dropout, seed=[seed, 0])
        return self

    def train_slice(self, slice_, buffer, control):
        self.params, log = mlp_direct_step(self.params, slice_, buffer, control, self.mix_ratio, **self.optim)
        return log

    def predict_scores(self, X):
        return softmax(forward(self.params, X)[0])

    def snapshot(self):
        return self.params

    def rules(self, prep=None):
        return None

    def replay_concepts(self, slice_):
        return None

    def audit(self, X, y, metric, n_classes, tau, with_confusion=False):
        return None


def make_learner(config, ablation=None):
    """Learner for a RunConfig; `ablation` switches the toc variants."""
    optim = {"lr": config.optim.lr, "weight_decay": config.optim.weight_decay,
             "decoupled": config.optim.decoupled_decay}
    mix_ratio = config.replay.mix_ratio
    if config.learner == TOC:
        concept_weight = 0.0 if ablation == "no_concept_loss" else config.concept_weight
        return TocLearner(config.tree.max_depth, config.tree.min_leaf, lam=config.lam,
                          concept_mode=config.concept_mode, concept_weight=concept_weight,
                          hidden=config.hidden, dropout=config.dropout, mix_ratio=mix_ratio,
                          refresh_tree=ablation == "refresh_tree", **optim)
    if config.learner == TREE_BASELINE:
        return TreeBaseline(config.tree.max_depth, config.tree.min_leaf)
    if config.learner == MLP_DIRECT:
        return MlpDirect(hidden=config.hidden, dropout=config.dropout, mix_ratio=mix_ratio, **optim)
    raise ConfigError(f"unknown learner '{config.learner}'", field="learner")
