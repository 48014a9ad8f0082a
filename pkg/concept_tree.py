"""
Frozen CART scaffold whose leaves form the concept vocabulary.

The tree is grown once (greedy Gini CART), then only routed through. Leaf ids
are assigned left-to-right so a given fit always yields the same vocabulary.
"""
import hashlib
import json
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from errors import EmptyData, InvalidDims, InvalidLeafId, WidthMismatch

# Impurity differences below this are treated as ties
GINI_TOL = 1e-12


@dataclass(frozen=True)
class TreeNode:
    feature: int = -1
    threshold: float = 0.0
    left: int = -1
    right: int = -1
    leaf_id: int = -1
    counts: Tuple[int, ...] = ()

    @property
    def is_leaf(self):
        return self.leaf_id >= 0


@dataclass(frozen=True, eq=False)
class FrozenTree:
    nodes: Tuple[TreeNode, ...]
    n_features: int
    n_classes: int
    depth: int
    n_leaves: int
    max_depth: int
    min_leaf: int
    fingerprint: str
    root: int = 0

    def __post_init__(self):
        # routing tables, read-only
        arrays = {
            "_feature": np.array([n.feature for n in self.nodes], dtype=np.int64),
            "_threshold": np.array([n.threshold for n in self.nodes], dtype=float),
            "_left": np.array([n.left for n in self.nodes], dtype=np.int64),
            "_right": np.array([n.right for n in self.nodes], dtype=np.int64),
            "_leaf_id": np.array([n.leaf_id for n in self.nodes], dtype=np.int64),
        }
        for name, arr in arrays.items():
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        leaf_nodes = {n.leaf_id: i for i, n in enumerate(self.nodes) if n.is_leaf}
        object.__setattr__(self, "_leaf_nodes", leaf_nodes)

    def leaf_node(self, leaf):
        if leaf not in self._leaf_nodes:
            raise InvalidLeafId(f"leaf id {leaf} not in 0..{self.n_leaves - 1}", leaf=leaf)
        return self.nodes[self._leaf_nodes[leaf]]

    def to_dict(self):
        return {
            "nodes": [
                {"feature": n.feature, "threshold": n.threshold, "left": n.left,
                 "right": n.right, "leaf_id": n.leaf_id, "counts": list(n.counts)}
                for n in self.nodes
            ],
            "n_features": self.n_features,
            "n_classes": self.n_classes,
            "depth": self.depth,
            "n_leaves": self.n_leaves,
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "fingerprint": self.fingerprint,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, data):
        nodes = tuple(
            TreeNode(feature=n["feature"], threshold=float(n["threshold"]), left=n["left"],
                     right=n["right"], leaf_id=n["leaf_id"], counts=tuple(n["counts"]))
            for n in data["nodes"]
        )
        return cls(nodes=nodes, n_features=data["n_features"], n_classes=data["n_classes"],
                   depth=data["depth"], n_leaves=data["n_leaves"], max_depth=data["max_depth"],
                   min_leaf=data["min_leaf"], fingerprint=data["fingerprint"])


# ============================================================================
# Fitting
# ============================================================================

def _gini(counts):
    total = counts.sum(axis=-1, keepdims=True)
    p = counts / np.maximum(total, 1)
    return 1.0 - (p ** 2).sum(axis=-1)


def best_split(X, y, n_classes, min_leaf):
    """Gini-minimising (feature, threshold) over midpoints of consecutive distinct values.

    Returns (impurity, feature, threshold) or None when no split respects min_leaf.
    Ties go to the lowest feature index, then the lowest threshold.
    """
    n, d = X.shape
    best = None
    for j in range(d):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        onehot = np.eye(n_classes)[y[order]]
        left = np.cumsum(onehot, axis=0)[:-1]
        right = onehot.sum(axis=0) - left
        n_left = np.arange(1, n)
        valid = (xs[:-1] < xs[1:]) & (n_left >= min_leaf) & (n - n_left >= min_leaf)
        if not valid.any():
            continue
        weighted = (n_left * _gini(left) + (n - n_left) * _gini(right)) / n
        weighted = np.where(valid, weighted, np.inf)
        lowest = weighted.min()
        i = int(np.flatnonzero(weighted <= lowest + GINI_TOL)[0])
        if best is None or lowest < best[0] - GINI_TOL:
            best = (float(lowest), j, float((xs[i] + xs[i + 1]) / 2.0))
    return best


def _fingerprint(X, y, max_depth, min_leaf, seed):
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(X, dtype=float).tobytes())
    digest.update(np.ascontiguousarray(y, dtype=np.int64).tobytes())
    digest.update(json.dumps({"max_depth": max_depth, "min_leaf": min_leaf, "seed": seed}).encode())
    return digest.hexdigest()


def fit_tree(X, y, max_depth=4, min_leaf=50, seed=0, n_classes=None):
    """Grow a greedy Gini CART and freeze it.

    The growth is deterministic; `seed` only enters the fingerprint.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyData("cannot fit a tree on empty data")
    if len(y) != X.shape[0]:
        raise WidthMismatch("X and y have different row counts")
    if max_depth < 1 or min_leaf < 1:
        raise InvalidDims("max_depth and min_leaf must be >= 1")
    n_classes = int(n_classes if n_classes is not None else y.max() + 1)

    nodes = []
    leaf_counter = [0]
    reached = [0]

    def grow(rows, depth):
        index = len(nodes)
        nodes.append(None)
        counts = np.bincount(y[rows], minlength=n_classes)
        split = None
        if depth < max_depth and len(rows) >= 2 * min_leaf and _gini(counts) > 0:
            split = best_split(X[rows], y[rows], n_classes, min_leaf)
        if split is None:
            nodes[index] = TreeNode(leaf_id=leaf_counter[0], counts=tuple(int(c) for c in counts))
            leaf_counter[0] += 1
            reached[0] = max(reached[0], depth)
            return index
        _, feature, threshold = split
        goes_left = X[rows, feature] <= threshold
        left = grow(rows[goes_left], depth + 1)
        right = grow(rows[~goes_left], depth + 1)
        nodes[index] = TreeNode(feature=feature, threshold=threshold, left=left, right=right)
        return index

    grow(np.arange(X.shape[0]), 0)
    return FrozenTree(
        nodes=tuple(nodes),
        n_features=X.shape[1],
        n_classes=n_classes,
        depth=reached[0],
        n_leaves=leaf_counter[0],
        max_depth=max_depth,
        min_leaf=min_leaf,
        fingerprint=_fingerprint(X, y, max_depth, min_leaf, seed),
    )


# ============================================================================
# Routing & prediction
# ============================================================================

def _check_width(tree, width):
    if width != tree.n_features:
        raise WidthMismatch(f"expected {tree.n_features} features, got {width}")


def route_batch(tree, X):
    """Leaf ids z(x) for every row of X (go left iff x[feature] <= threshold)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise WidthMismatch("route_batch expects a 2-D matrix")
    _check_width(tree, X.shape[1])
    node = np.full(X.shape[0], tree.root, dtype=np.int64)
    rows = np.arange(X.shape[0])
    for _ in range(tree.depth):
        feature = tree._feature[node]
        internal = feature >= 0
        if not internal.any():
            break
        values = X[rows, np.where(internal, feature, 0)]
        go_left = values <= tree._threshold[node]
        nxt = np.where(go_left, tree._left[node], tree._right[node])
        node = np.where(internal, nxt, node)
    return tree._leaf_id[node]


def route(tree, x):
    """Leaf id for a single feature vector"""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise WidthMismatch("route expects a 1-D vector")
    return int(route_batch(tree, x.reshape(1, -1))[0])


def leaf_distributions(tree):
    """(L, K) normalised training class counts per leaf"""
    dist = np.zeros((tree.n_leaves, tree.n_classes))
    for node in tree.nodes:
        if node.is_leaf:
            counts = np.asarray(node.counts, dtype=float)
            dist[node.leaf_id] = counts / counts.sum() if counts.sum() > 0 else 1.0 / tree.n_classes
    return dist


def predict_tree_batch(tree, X):
    return leaf_distributions(tree)[route_batch(tree, X)]


def predict_tree(tree, x):
    """Class probabilities of the leaf x routes to"""
    return leaf_distributions(tree)[route(tree, x)]


# ============================================================================
# Rules
# ============================================================================

@dataclass(frozen=True)
class Clause:
    feature: str
    comparator: str
    threshold: float
    text: str


@dataclass(frozen=True)
class RuleText:
    leaf_id: int
    clauses: Tuple[Clause, ...]
    rendered: str


def _leaf_path(tree, leaf):
    """Root-to-leaf list of (node, went_left)."""
    target = tree._leaf_nodes[leaf]
    path = []

    def walk(index):
        if index == target:
            return True
        node = tree.nodes[index]
        if node.is_leaf:
            return False
        for child, went_left in ((node.left, True), (node.right, False)):
            path.append((node, went_left))
            if walk(child):
                return True
            path.pop()
        return False

    walk(tree.root)
    return path


def _clause(node, went_left, prep):
    comparator = "≤" if went_left else ">"
    if prep is None:
        name = f"x{node.feature}"
        return Clause(name, comparator, node.threshold, f"{name} {comparator} {round(node.threshold, 4)}")

    kind, column, detail = prep.describe_feature(node.feature)
    if kind == "continuous":
        mean, scale = detail
        raw = node.threshold * scale + mean
        return Clause(column, comparator, raw, f"{column} {comparator} {round(raw, 4)}")
    if kind == "onehot":
        text = f"{column} ≠ {detail}" if went_left else f"{column} = {detail}"
        return Clause(f"{column}={detail}", comparator, node.threshold, text)
    text = f"{column} observed" if went_left else f"{column} missing"
    return Clause(f"{column}__missing", comparator, node.threshold, text)


def path_rule(tree, leaf, prep=None):
    """Human-readable conjunction for a leaf, thresholds in raw units when prep is given."""
    tree.leaf_node(leaf)
    clauses = tuple(_clause(node, went_left, prep) for node, went_left in _leaf_path(tree, leaf))
    rendered = " AND ".join(c.text for c in clauses) if clauses else "TRUE"
    return RuleText(leaf_id=leaf, clauses=clauses, rendered=rendered)


def render_rules(tree, prep=None):
    """One line per leaf id, for the per-step rule dump."""
    lines = [f"leaf {leaf}: {path_rule(tree, leaf, prep).rendered}" for leaf in range(tree.n_leaves)]
    return "\n".join(lines) + "\n"


def rules_hash(tree, prep=None):
    return hashlib.sha256(render_rules(tree, prep).encode("utf-8")).hexdigest()
