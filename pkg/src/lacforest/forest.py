"""LACForest: exploration trees, pseudo-labelling and Gini refinement."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import DataError, rng_for
from .impurity import best_gini_split, best_split, node_stats, vartheta_vector

MODEL_VERSION = 1
_STEP1, _STEP2 = 1, 2


@dataclass
class Tree:
    """Binary tree in flat arrays; ``feature == -1`` marks a leaf.

    ``value`` holds one row per node; only leaf rows are meaningful.  For an
    exploration tree a leaf row is the class-estimate vector of the node, for
    a refined tree the empirical class distribution.  ``origin`` (refined
    trees only) gives, for every node, the exploration-tree leaf it lies in,
    or -1 above the exploration leaves.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    origin: np.ndarray | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, node) -> bool:
        return self.feature[node] < 0

    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.feature < 0)

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by each row; ``x_j <= threshold`` goes left."""
        X = np.asarray(X, dtype=float)
        node = np.zeros(len(X), dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            cur = node[active]
            go_left = X[active, self.feature[cur]] <= self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
            active = active[self.feature[node[active]] >= 0]
        return node

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    # nested records for JSON
    def to_record(self, node=0):
        if self.feature[node] < 0:
            rec = {"value": [float(v) for v in self.value[node]]}
        else:
            rec = {
                "feature": int(self.feature[node]),
                "threshold": float(self.threshold[node]),
                "left": self.to_record(int(self.left[node])),
                "right": self.to_record(int(self.right[node])),
            }
        if self.origin is not None:
            rec["origin"] = int(self.origin[node])
        return rec

    @classmethod
    def from_record(cls, rec, width):
        b = _Builder(width, with_origin="origin" in rec)
        stack = [(rec, None, None)]
        while stack:
            r, parent, side = stack.pop()
            if "feature" in r:
                nid = b.internal(r["feature"], r["threshold"], r.get("origin", -1))
            else:
                nid = b.leaf(r["value"], r.get("origin", -1))
            if parent is not None:
                b.link(parent, side, nid)
            if "feature" in r:
                stack.append((r["right"], nid, "right"))
                stack.append((r["left"], nid, "left"))
        return b.build()


class _Builder:
    def __init__(self, width, with_origin=False):
        self.width = width
        self.with_origin = with_origin
        self.feature, self.threshold, self.left, self.right = [], [], [], []
        self.value, self.origin = [], []

    def _add(self, feature, threshold, value, origin):
        self.feature.append(int(feature))
        self.threshold.append(float(threshold))
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(np.zeros(self.width) if value is None else np.asarray(value, dtype=float))
        self.origin.append(int(origin))
        return len(self.feature) - 1

    def internal(self, feature, threshold, origin=-1):
        return self._add(feature, threshold, None, origin)

    def leaf(self, value, origin=-1):
        return self._add(-1, 0.0, value, origin)

    def link(self, parent, side, child):
        (self.left if side == "left" else self.right)[parent] = child

    def build(self) -> Tree:
        return Tree(
            np.array(self.feature, dtype=np.int64),
            np.array(self.threshold, dtype=float),
            np.array(self.left, dtype=np.int64),
            np.array(self.right, dtype=np.int64),
            np.array(self.value, dtype=float).reshape(len(self.feature), self.width),
            np.array(self.origin, dtype=np.int64) if self.with_origin else None,
        )


def _feature_subset(rng, d, tau):
    return np.sort(rng.choice(d, size=tau, replace=False))


# -- Step-I ---------------------------------------------------------------------


def grow_exploration_tree(X_l, y_l, X_u, kappa, theta, gamma, tau, rng, min_reduction=None) -> Tree:
    """Grow one exploration tree under the augmented Gini and the gamma constraints."""
    X_l = np.asarray(X_l, dtype=float)
    X_u = np.asarray(X_u, dtype=float)
    y_l = np.asarray(y_l, dtype=np.int64)
    n_l, n_u = len(y_l), len(X_u)
    d = X_u.shape[1]
    if not 1 <= tau <= d:
        raise ValueError("tau must lie in [1, d]")
    b = _Builder(kappa + 1)
    stack = [(None, None, np.arange(n_l), np.arange(n_u))]
    while stack:
        parent, side, il, iu = stack.pop()
        feats = _feature_subset(rng, d, tau)
        dec = best_split(X_l[il], y_l[il], X_u[iu], feats, gamma, n_l, n_u, theta, kappa, min_reduction)
        if dec is None:
            stats = node_stats(y_l[il], len(iu), kappa, n_l, n_u, theta)
            nid = b.leaf(vartheta_vector(stats))
        else:
            nid = b.internal(dec.feature, dec.threshold)
        if parent is not None:
            b.link(parent, side, nid)
        if dec is not None:
            gl = X_l[il, dec.feature] <= dec.threshold
            gu = X_u[iu, dec.feature] <= dec.threshold
            stack.append((nid, "right", il[~gl], iu[~gu]))
            stack.append((nid, "left", il[gl], iu[gu]))
    return b.build()


def tree_augmented_score(tree: Tree, X) -> np.ndarray:
    """Augmented-class estimate of the leaf each row falls in."""
    return tree.value[tree.apply(X), -1]


def forest_augmented_score(trees, X) -> np.ndarray:
    """Mean augmented score over the exploration trees."""
    X = np.asarray(X, dtype=float)
    total = np.zeros(len(X))
    for t in trees:
        total += tree_augmented_score(t, X)
    return total / len(trees)


def pseudo_label(trees, X_u, theta) -> np.ndarray:
    """Indices of the floor(theta * n_u) unlabeled rows with highest forest score.

    Ties go to the lower index.  Returned in ranking order.
    """
    X_u = np.asarray(X_u, dtype=float)
    n_p = math.floor(theta * len(X_u))
    if n_p <= 0:
        return np.empty(0, dtype=np.int64)
    scores = forest_augmented_score(trees, X_u)
    order = np.argsort(-scores, kind="stable")
    return order[:n_p].astype(np.int64)


# -- Step-II --------------------------------------------------------------------


def refine_tree(exploration_tree: Tree, X, y, n_classes, tau, rng) -> Tree:
    """Split every exploration leaf further with the ordinary Gini impurity.

    ``X``/``y`` are the labeled rows plus pseudo-labeled rows (labels
    1..n_classes).  A node stops when its labels are homogeneous, it has
    fewer than 2 rows, or no candidate split improves the Gini.  Leaves carry
    the empirical class distribution (all zeros when empty).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    d = X.shape[1]
    if not 1 <= tau <= d:
        raise ValueError("tau must lie in [1, d]")
    src = exploration_tree
    b = _Builder(n_classes, with_origin=True)
    # (parent, side, exploration node or None once below it, origin leaf, rows)
    stack = [(None, None, 0, -1, np.arange(len(y)))]
    while stack:
        parent, side, snode, origin, rows = stack.pop()
        if snode is not None and src.feature[snode] >= 0:
            f, a = int(src.feature[snode]), float(src.threshold[snode])
            nid = b.internal(f, a, -1)
            go = X[rows, f] <= a
            children = [(src.right[snode], rows[~go], "right"), (src.left[snode], rows[go], "left")]
            for child, r, s in children:
                stack.append((nid, s, int(child), -1, r))
        else:
            if snode is not None:
                origin = snode
            labels = y[rows]
            split = None
            if len(rows) >= 2 and np.any(labels != labels[0]):
                split = best_gini_split(X[rows], labels, _feature_subset(rng, d, tau), n_classes)
            if split is None:
                counts = np.bincount(labels - 1, minlength=n_classes)[:n_classes].astype(float)
                nid = b.leaf(counts / max(1, len(rows)), origin)
            else:
                f, a, _ = split
                nid = b.internal(f, a, origin)
                go = X[rows, f] <= a
                stack.append((nid, "right", None, origin, rows[~go]))
                stack.append((nid, "left", None, origin, rows[go]))
        if parent is not None:
            b.link(parent, side, nid)
    return b.build()


# -- model ------------------------------------------------------------------------


@dataclass
class LACForestModel:
    trees: list
    exploration_trees: list
    theta: float
    gamma: float
    tau: int
    kappa: int
    d: int
    seed: int
    manifest: dict = field(default_factory=dict)
    pseudo_indices: np.ndarray | None = None

    @property
    def m(self) -> int:
        return len(self.trees)

    def _check(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.d:
            raise DataError(f"expected {self.d} features, got {X.shape[1]}")
        return X

    def predict_scores(self, X) -> np.ndarray:
        """Sum over trees of the leaf class distributions, shape (n, kappa+1)."""
        X = self._check(X)
        scores = np.zeros((len(X), self.kappa + 1))
        for t in self.trees:
            scores += t.value[t.apply(X)]
        return scores

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_scores(X), axis=1) + 1

    def augmented_score(self, X) -> np.ndarray:
        """Exploration-forest augmented score, used for detection AUC."""
        X = self._check(X)
        if not self.exploration_trees:
            return self.predict_scores(X)[:, -1] / self.m
        return forest_augmented_score(self.exploration_trees, X)

    def to_dict(self):
        return {
            "format": "lacforest",
            "version": MODEL_VERSION,
            "kappa": self.kappa,
            "d": self.d,
            "theta": self.theta,
            "gamma": self.gamma,
            "tau": self.tau,
            "m": self.m,
            "seed": self.seed,
            "manifest": self.manifest,
            "exploration_trees": [t.to_record() for t in self.exploration_trees],
            "refined_trees": [t.to_record() for t in self.trees],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != "lacforest" or doc.get("version") != MODEL_VERSION:
            raise DataError("not a LACForest model document of a supported version")
        width = doc["kappa"] + 1
        return cls(
            trees=[Tree.from_record(r, width) for r in doc["refined_trees"]],
            exploration_trees=[Tree.from_record(r, width) for r in doc["exploration_trees"]],
            theta=doc["theta"],
            gamma=doc["gamma"],
            tau=doc["tau"],
            kappa=doc["kappa"],
            d=doc["d"],
            seed=doc["seed"],
            manifest=doc.get("manifest", {}),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def default_tau(d) -> int:
    return max(1, math.isqrt(d))


def _map(fn, items, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def train_lacforest(
    S_l,
    S_u,
    theta,
    m=100,
    tau=None,
    gamma=0.01,
    seed=0,
    threads=1,
    manifest=None,
    min_reduction=None,
) -> LACForestModel:
    """Two-step LACForest training.

    Step I grows ``m`` exploration trees on (S_l, S_u); the top
    ``floor(theta * n_u)`` unlabeled rows by average augmented score are
    pseudo-labeled as the augmented class; Step II refines each exploration
    tree with the ordinary Gini on S_l plus the pseudo-labeled rows.  Every
    tree draws from its own stream derived from ``(seed, step, index)`` so the
    result does not depend on ``threads``.
    """
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    if m < 1:
        raise ValueError("m must be >= 1")
    X_l, y_l, kappa = S_l.X, S_l.y, S_l.kappa
    X_u = S_u.X
    d = X_l.shape[1]
    if X_u.shape[1] != d:
        raise DataError("labeled and unlabeled sets have different dimensions")
    if np.any((y_l < 1) | (y_l > kappa)):
        raise DataError("labeled set contains labels outside 1..kappa")
    tau = default_tau(d) if tau is None else int(tau)

    def step1(i):
        return grow_exploration_tree(
            X_l, y_l, X_u, kappa, theta, gamma, tau, rng_for(seed, _STEP1, i), min_reduction
        )

    exploration = _map(step1, range(m), threads)
    pseudo = pseudo_label(exploration, X_u, theta)
    X_ref = np.vstack([X_l, X_u[pseudo]])
    y_ref = np.concatenate([y_l, np.full(len(pseudo), kappa + 1, dtype=np.int64)])

    def step2(i):
        return refine_tree(exploration[i], X_ref, y_ref, kappa + 1, tau, rng_for(seed, _STEP2, i))

    refined = _map(step2, range(m), threads)
    return LACForestModel(
        refined, exploration, float(theta), float(gamma), tau, kappa, d, int(seed), manifest or {}, pseudo
    )


def train_gini_forest(S_l, m=100, tau=None, seed=0, threads=1, manifest=None) -> LACForestModel:
    """Baseline: ordinary Gini forest on the labeled data alone.

    Scores keep a (always zero) augmented column so it is evaluated on the
    same kappa+1 footing as LACForest.
    """
    kappa, d = S_l.kappa, S_l.d
    tau = default_tau(d) if tau is None else int(tau)
    stump = Tree(
        np.array([-1]), np.zeros(1), np.array([-1]), np.array([-1]), np.zeros((1, kappa + 1))
    )

    def grow(i):
        return refine_tree(stump, S_l.X, S_l.y, kappa + 1, tau, rng_for(seed, _STEP2, i))

    trees = _map(grow, range(m), threads)
    return LACForestModel(trees, [], None, None, tau, kappa, d, int(seed), manifest or {})
