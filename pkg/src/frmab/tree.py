"""Greedy oblique classification trees for control imitation.

Each internal node tests a hyperplane w . f < b on standardized features.
Node hyperplanes are found by coordinate-descent local search on the weighted
Gini impurity, multi-started from the best axis-parallel split and from
random projections.  Depth is chosen by validation-accuracy grid search.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dataset import LabeledDataset
from .dynamics import instance_to_dict
from .errors import DegenerateData, DimensionMismatch, EmptyDataset, MalformedModel

_GAIN_TOL = 1e-12
_SPARSIFY_TOL = 1e-8
_DELTAS = (0.5, 0.2, 0.05)
_PASSES = 2


@dataclass
class TrainConfig:
    depth_grid: tuple[int, ...] = (5, 10, 15)
    min_leaf: int = 20
    val_fraction: float = 0.2
    restarts_per_node: int = 10
    seed: int = 0
    oblique: bool = True  # False restricts splits to single features

    def __post_init__(self):
        if any(d < 1 for d in self.depth_grid):
            raise ValueError("depths must be positive")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")


class ObliquePolicyTree:
    """Immutable trained tree mapping feature vectors to control vectors."""

    def __init__(self, nodes, feature_names, class_table, means, stds, depth, train_meta):
        self.nodes = nodes
        self.feature_names = list(feature_names)
        self.class_table = [tuple(int(v) for v in lab) for lab in class_table]
        self.means = np.asarray(means, dtype=float)
        self.stds = np.asarray(stds, dtype=float)
        self.depth = int(depth)
        self.train_meta = train_meta
        self._compile()

    def _compile(self):
        F = len(self.feature_names)
        K = len(self.nodes)
        self._w = np.zeros((K, F))
        self._b = np.zeros(K)
        self._left = np.full(K, -1, dtype=np.int64)
        self._right = np.full(K, -1, dtype=np.int64)
        self._class = np.full(K, -1, dtype=np.int64)
        for k, node in enumerate(self.nodes):
            if "class_id" in node:
                self._class[k] = node["class_id"]
            else:
                self._w[k] = node["weights"]
                self._b[k] = node["threshold"]
                self._left[k] = node["left"]
                self._right[k] = node["right"]

    def predict_class(self, features) -> int:
        f = np.asarray(features, dtype=float).ravel()
        if f.shape[0] != len(self.feature_names):
            raise DimensionMismatch(
                f"expected {len(self.feature_names)} features, got {f.shape[0]}")
        fs = (f - self.means) / self.stds
        k = 0
        while self._class[k] < 0:
            k = self._left[k] if float(self._w[k] @ fs) < self._b[k] else self._right[k]
        return int(self._class[k])

    def predict(self, features) -> np.ndarray:
        """Control vector of the leaf reached by the feature vector."""
        return np.array(self.class_table[self.predict_class(features)], dtype=np.int8)

    def predict_class_many(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[1] != len(self.feature_names):
            raise DimensionMismatch(
                f"expected {len(self.feature_names)} features, got {X.shape[1]}")
        Xs = (X - self.means) / self.stds
        out = np.empty(X.shape[0], dtype=np.int64)
        for i in range(X.shape[0]):
            k = 0
            while self._class[k] < 0:
                k = self._left[k] if float(self._w[k] @ Xs[i]) < self._b[k] else self._right[k]
            out[i] = self._class[k]
        return out


# ---------------------------------------------------------------------------
# split search

def _best_threshold(z, onehot, min_leaf):
    """Minimum weighted-Gini boundary along projections z, or None."""
    N = z.shape[0]
    order = np.argsort(z, kind="stable")
    zs = z[order]
    cum = np.cumsum(onehot[order], axis=0)
    n_left = np.arange(1, N, dtype=float)
    left = cum[:-1]
    right = cum[-1] - left
    n_right = N - n_left
    score = 1.0 - ((left * left).sum(axis=1) / n_left
                   + (right * right).sum(axis=1) / n_right) / N
    valid = zs[1:] > zs[:-1]
    valid &= (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return None
    score = np.where(valid, score, np.inf)
    k = int(np.argmin(score))
    return float(score[k]), float(0.5 * (zs[k] + zs[k + 1]))


def _axis_best(X, onehot, min_leaf):
    best = None
    for j in range(X.shape[1]):
        res = _best_threshold(X[:, j], onehot, min_leaf)
        if res is not None and (best is None or res[0] < best[0]):
            best = (res[0], j, res[1])
    return best


def _local_search(X, onehot, w0, min_leaf, rng):
    w = np.asarray(w0, dtype=float)
    nrm = np.linalg.norm(w)
    if nrm < 1e-12:
        return None
    w = w / nrm
    res = _best_threshold(X @ w, onehot, min_leaf)
    if res is None:
        return None
    score, thr = res
    for _ in range(_PASSES):
        improved = False
        for j in rng.permutation(X.shape[1]):
            cand = None
            for d in _DELTAS:
                for sgn in (1.0, -1.0):
                    w_try = w.copy()
                    w_try[j] += sgn * d
                    w_try /= np.linalg.norm(w_try)
                    r = _best_threshold(X @ w_try, onehot, min_leaf)
                    if r is not None and (cand is None or r[0] < cand[0]):
                        cand = (r[0], w_try, r[1])
            if cand is not None and cand[0] < score - _GAIN_TOL:
                score, w, thr = cand
                improved = True
        if not improved:
            break
    return score, w, thr


def _find_split(X, onehot, parent_gini, cfg: TrainConfig, rng):
    F = X.shape[1]
    axis = _axis_best(X, onehot, cfg.min_leaf)
    if axis is None:
        return None
    if not cfg.oblique:
        score, j, thr = axis
        if score >= parent_gini - _GAIN_TOL:
            return None
        w = np.zeros(F)
        w[j] = 1.0
        return w, thr
    starts = []
    w_axis = np.zeros(F)
    w_axis[axis[1]] = 1.0
    starts.append(w_axis)
    for _ in range(cfg.restarts_per_node):
        starts.append(rng.standard_normal(F))
    best = None
    for w0 in starts:
        res = _local_search(X, onehot, w0, cfg.min_leaf, rng)
        if res is not None and (best is None or res[0] < best[0]):
            best = res
    if best is None or best[0] >= parent_gini - _GAIN_TOL:
        return None
    score, w, thr = best
    small = np.abs(w) < _SPARSIFY_TOL
    if small.any() and not small.all():
        ws = np.where(small, 0.0, w)
        ws /= np.linalg.norm(ws)
        res = _best_threshold(X @ ws, onehot, cfg.min_leaf)
        if res is not None and res[0] < parent_gini - _GAIN_TOL:
            w, thr = ws, res[1]
    return w, thr


def _gini(counts):
    N = counts.sum()
    p = counts / N
    return 1.0 - float((p * p).sum())


def _grow(X, onehot, max_depth, cfg: TrainConfig, seed_u):
    """Grow the node list; node RNG streams keyed by heap index so the split
    at a node is independent of tree depth limits and traversal order."""
    nodes = []

    def build(Xn, hot_n, depth, heap):
        idx = len(nodes)
        nodes.append(None)
        counts = hot_n.sum(axis=0)
        majority = int(np.argmax(counts))
        pure = counts.max() == hot_n.shape[0]
        if depth >= max_depth or pure or Xn.shape[0] < 2 * cfg.min_leaf:
            nodes[idx] = {"class_id": majority}
            return idx
        rng = np.random.default_rng(np.random.SeedSequence([seed_u, 1, heap]))
        split = _find_split(Xn, hot_n, _gini(counts), cfg, rng)
        if split is None:
            nodes[idx] = {"class_id": majority}
            return idx
        w, thr = split
        mask = Xn @ w < thr
        nodes[idx] = {"weights": w, "threshold": thr, "left": -1, "right": -1}
        nodes[idx]["left"] = build(Xn[mask], hot_n[mask], depth + 1, 2 * heap)
        nodes[idx]["right"] = build(Xn[~mask], hot_n[~mask], depth + 1, 2 * heap + 1)
        return idx

    build(X, onehot, 0, 1)
    return nodes


def train(data: LabeledDataset, cfg: TrainConfig | None = None) -> ObliquePolicyTree:
    """Grid-search tree depth on a held-out validation split.

    Features are standardized internally (constants stored in the model);
    ties in validation accuracy go to the smaller depth.
    """
    cfg = cfg or TrainConfig()
    X = np.asarray(data.features, dtype=float)
    ids = np.asarray(data.class_ids, dtype=np.int64)
    N = X.shape[0]
    if N == 0:
        raise EmptyDataset("no training samples")
    n_classes = len(data.class_table)
    if n_classes > 1 and bool(np.all(X == X[0])):
        raise DegenerateData("all feature rows identical but labels conflict")

    seed_u = cfg.seed % (2 ** 63)
    rng = np.random.default_rng(np.random.SeedSequence([seed_u, 0]))
    perm = rng.permutation(N)
    n_val = min(max(int(round(cfg.val_fraction * N)), 1), N - 1) if N >= 2 else 0
    val_idx, tr_idx = perm[:n_val], perm[n_val:]
    Xtr, ytr = X[tr_idx], ids[tr_idx]
    Xval, yval = X[val_idx], ids[val_idx]

    means = Xtr.mean(axis=0)
    stds = Xtr.std(axis=0)
    stds = np.where(stds < 1e-12, 1.0, stds)
    Xtr_s = (Xtr - means) / stds
    Xval_s = (Xval - means) / stds
    onehot = np.zeros((Xtr_s.shape[0], n_classes))
    onehot[np.arange(Xtr_s.shape[0]), ytr] = 1.0

    results = {}
    best = None
    for depth in cfg.depth_grid:
        nodes = _grow(Xtr_s, onehot, depth, cfg, seed_u)
        tree = ObliquePolicyTree(nodes, data.feature_names, data.class_table,
                                 np.zeros(X.shape[1]), np.ones(X.shape[1]), depth, {})
        if n_val:
            acc = float(np.mean(tree.predict_class_many(Xval_s) == yval))
        else:
            acc = 1.0
        results[depth] = acc
        if best is None or acc > best[0]:
            best = (acc, depth, nodes)

    val_acc, depth, nodes = best
    meta = {
        "seed": cfg.seed,
        "depth_grid": list(cfg.depth_grid),
        "val_accuracy": val_acc,
        "val_accuracy_per_depth": results,
        "min_leaf": cfg.min_leaf,
        "restarts_per_node": cfg.restarts_per_node,
        "val_fraction": cfg.val_fraction,
    }
    # carry what closed-loop evaluation needs to recompute features
    if data.plan is not None:
        meta["augmentation"] = data.plan.to_jsonable()
    if data.instance is not None:
        meta["instance"] = instance_to_dict(data.instance)
    return ObliquePolicyTree(nodes, data.feature_names, data.class_table,
                             means, stds, depth, meta)


# ---------------------------------------------------------------------------
# serialization

def tree_to_dict(tree: ObliquePolicyTree) -> dict:
    nodes = []
    for node in tree.nodes:
        if "class_id" in node:
            nodes.append({"class_id": int(node["class_id"])})
        else:
            nodes.append({
                "weights": [float(v) for v in node["weights"]],
                "threshold": float(node["threshold"]),
                "left": int(node["left"]),
                "right": int(node["right"]),
            })
    return {
        "feature_names": tree.feature_names,
        "standardization": {"means": [float(v) for v in tree.means],
                            "stds": [float(v) for v in tree.stds]},
        "nodes": nodes,
        "class_table": [list(lab) for lab in tree.class_table],
        "depth": tree.depth,
        "train_meta": tree.train_meta,
    }


def save(tree: ObliquePolicyTree, path):
    with open(path, "w") as fh:
        json.dump(tree_to_dict(tree), fh, indent=2)
        fh.write("\n")


def _validate_nodes(nodes, n_features, n_classes):
    if not nodes:
        raise MalformedModel("empty node list")
    seen = set()
    stack = [0]
    while stack:
        k = stack.pop()
        if not 0 <= k < len(nodes):
            raise MalformedModel(f"node link {k} out of range")
        if k in seen:
            raise MalformedModel(f"node {k} reachable twice (cycle or shared subtree)")
        seen.add(k)
        node = nodes[k]
        if "class_id" in node:
            if not 0 <= int(node["class_id"]) < n_classes:
                raise MalformedModel("leaf class_id outside the class table")
            continue
        for key in ("weights", "threshold", "left", "right"):
            if key not in node:
                raise MalformedModel(f"internal node missing {key!r}")
        if len(node["weights"]) != n_features:
            raise MalformedModel("hyperplane weight length does not match features")
        if not np.isfinite(node["weights"]).all() or not np.isfinite(node["threshold"]):
            raise MalformedModel("non-finite hyperplane")
        stack.extend((int(node["left"]), int(node["right"])))


def tree_from_dict(doc: dict) -> ObliquePolicyTree:
    try:
        names = list(doc["feature_names"])
        table = [tuple(int(v) for v in lab) for lab in doc["class_table"]]
        means = np.asarray(doc["standardization"]["means"], dtype=float)
        stds = np.asarray(doc["standardization"]["stds"], dtype=float)
        nodes = doc["nodes"]
        depth = int(doc["depth"])
        meta = doc.get("train_meta", {})
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedModel(f"model document malformed: {exc}") from exc
    if means.shape != (len(names),) or stds.shape != (len(names),):
        raise MalformedModel("standardization constants do not match the features")
    _validate_nodes(nodes, len(names), len(table))
    fixed = []
    for node in nodes:
        if "class_id" in node:
            fixed.append({"class_id": int(node["class_id"])})
        else:
            fixed.append({"weights": np.asarray(node["weights"], dtype=float),
                          "threshold": float(node["threshold"]),
                          "left": int(node["left"]), "right": int(node["right"])})
    return ObliquePolicyTree(fixed, names, table, means, stds, depth, meta)


def load(path) -> ObliquePolicyTree:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise MalformedModel(f"not valid JSON: {exc}") from exc
    return tree_from_dict(doc)
