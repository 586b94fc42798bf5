"""Augmented Gini impurity and the constrained split search.

Every impurity value in this module is produced by the same element-wise
array routines, whether it is asked for one node (``augmented_gini``) or
for every candidate threshold of a feature at once (``best_split``).  The
per-class sums are accumulated column by column in a fixed order, so a
scalar evaluation and the corresponding entry of a vectorised evaluation
are bit-identical.  The exhaustive oracle relies on this.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Step-II splits must beat this to count as a strict Gini improvement.
GINI_TOL = 1e-12


@dataclass(frozen=True)
class NodeStats:
    """Sufficient statistics of one node.

    ``n_l``/``n_u`` are the global labeled/unlabeled sizes, ``n_node_l`` and
    ``n_node_u`` the counts falling in the node, and ``class_counts`` the
    labeled count of each known class inside the node.
    """

    n_l: int
    n_u: int
    n_node_l: int
    n_node_u: int
    class_counts: tuple
    theta: float

    def __post_init__(self):
        counts = tuple(int(c) for c in self.class_counts)
        object.__setattr__(self, "class_counts", counts)
        if min(self.n_l, self.n_u, self.n_node_l, self.n_node_u) < 0 or min(counts, default=0) < 0:
            raise ValueError("counts must be non-negative")
        if self.n_node_l > self.n_l or self.n_node_u > self.n_u:
            raise ValueError("node counts exceed global counts")
        if sum(counts) != self.n_node_l:
            raise ValueError("class_counts must sum to n_node_l")

    @property
    def kappa(self) -> int:
        return len(self.class_counts)


@dataclass(frozen=True)
class SplitDecision:
    feature: int
    threshold: float
    reduction: float
    left_stats: NodeStats
    right_stats: NodeStats


# -- array kernels ----------------------------------------------------------


def _vartheta_aug(n_l, n_u, n_cl, n_cu, theta):
    n_cl = np.asarray(n_cl)
    n_cu = np.asarray(n_cu)
    num = (1.0 - theta) * n_u * n_cl
    den = n_l * np.maximum(1, n_cu)
    inner = 1.0 - num / den
    return np.where(n_cu > 0, np.maximum(inner, 0.0), 0.0)


def _vartheta_known(aug, n_cl, counts):
    # counts: (..., kappa)
    scale = (1.0 - aug) / np.maximum(1, np.asarray(n_cl))
    return np.asarray(counts) * scale[..., None]


def _sum_squares(cols):
    acc = np.zeros(cols.shape[:-1])
    for k in range(cols.shape[-1]):
        acc = acc + cols[..., k] * cols[..., k]
    return acc


def _augmented_gini(n_l, n_u, n_cl, n_cu, counts, theta):
    aug = _vartheta_aug(n_l, n_u, n_cl, n_cu, theta)
    known = _vartheta_known(aug, n_cl, counts)
    return 1.0 - (_sum_squares(known) + aug * aug)


def _standard_gini(counts):
    counts = np.asarray(counts)
    total = counts.sum(axis=-1)
    p = counts / np.maximum(total, 1)[..., None]
    return np.where(total > 0, 1.0 - _sum_squares(p), 0.0)


def _reduction(g_parent, parent_n, g_left, left_n, g_right, right_n):
    return g_parent - (left_n / parent_n) * g_left - (right_n / parent_n) * g_right


# -- scalar API -------------------------------------------------------------


def vartheta_augmented(stats: NodeStats) -> float:
    """Estimated augmented-class probability of the node."""
    return float(_vartheta_aug(stats.n_l, stats.n_u, stats.n_node_l, stats.n_node_u, stats.theta))


def vartheta_vector(stats: NodeStats) -> np.ndarray:
    """Length kappa+1 vector of class estimates; last entry is the augmented class."""
    aug = _vartheta_aug(stats.n_l, stats.n_u, stats.n_node_l, stats.n_node_u, stats.theta)
    known = _vartheta_known(aug, stats.n_node_l, np.asarray(stats.class_counts, dtype=np.int64))
    return np.append(known, aug)


def augmented_gini(stats: NodeStats) -> float:
    return float(
        _augmented_gini(
            stats.n_l,
            stats.n_u,
            stats.n_node_l,
            stats.n_node_u,
            np.asarray(stats.class_counts, dtype=np.int64),
            stats.theta,
        )
    )


def gini_of_vector(theta_vec) -> float:
    """``1 - sum(v**2)`` for an arbitrary class-probability vector."""
    v = np.asarray(theta_vec, dtype=float)
    return float(1.0 - _sum_squares(v))


def standard_gini(class_counts) -> float:
    """Ordinary Gini impurity of a count vector (0 for an empty node)."""
    return float(_standard_gini(np.asarray(class_counts, dtype=np.int64)))


def split_reduction(parent: NodeStats, left: NodeStats, right: NodeStats) -> float:
    """Augmented Gini reduction, children weighted by unlabeled-count fractions."""
    if parent.n_node_u <= 0:
        raise ValueError("split_reduction is undefined for a parent without unlabeled data")
    if (
        left.n_node_l + right.n_node_l != parent.n_node_l
        or left.n_node_u + right.n_node_u != parent.n_node_u
        or any(a + b != c for a, b, c in zip(left.class_counts, right.class_counts, parent.class_counts))
    ):
        raise ValueError("children do not partition the parent")
    return float(
        _reduction(
            np.float64(augmented_gini(parent)),
            parent.n_node_u,
            np.float64(augmented_gini(left)),
            np.int64(left.n_node_u),
            np.float64(augmented_gini(right)),
            np.int64(right.n_node_u),
        )
    )


def node_stats(y_node, n_node_u, kappa, n_l, n_u, theta) -> NodeStats:
    """Build NodeStats from the labels (1..kappa) of the labeled rows in a node."""
    y_node = np.asarray(y_node, dtype=np.int64)
    counts = np.bincount(y_node - 1, minlength=kappa)[:kappa] if y_node.size else np.zeros(kappa, np.int64)
    return NodeStats(n_l, n_u, int(y_node.size), int(n_node_u), tuple(counts.tolist()), theta)


# -- split search -----------------------------------------------------------


def best_split(
    X_l,
    y_l,
    X_u,
    features,
    gamma,
    n_l,
    n_u,
    theta,
    kappa,
    min_reduction=None,
):
    """Best feasible axis-aligned split of a node under the augmented Gini.

    ``X_l``/``y_l`` are the labeled rows in the node (labels 1..kappa),
    ``X_u`` the unlabeled rows.  Candidate thresholds are midpoints between
    consecutive distinct values of the pooled rows.  A split is feasible when
    both children hold at least ``gamma * n_l`` labeled and ``gamma * n_u``
    unlabeled rows.  Ties go to the lower feature index, then the lower
    threshold.  Returns ``None`` when nothing is feasible.
    """
    X_l = np.asarray(X_l, dtype=float)
    X_u = np.asarray(X_u, dtype=float)
    y_l = np.asarray(y_l, dtype=np.int64)
    p_l, p_u = len(y_l), X_u.shape[0]
    min_l, min_u = gamma * n_l, gamma * n_u
    if p_u < 2 * min_u or p_l < 2 * min_l or p_u == 0:
        return None

    onehot = np.zeros((p_l, kappa), dtype=np.int64)
    onehot[np.arange(p_l), y_l - 1] = 1
    parent_counts = onehot.sum(axis=0)
    g_parent = _augmented_gini(n_l, n_u, p_l, p_u, parent_counts, theta)

    best = None  # (reduction, feature, threshold, left_counts, left_u)
    for j in sorted(int(f) for f in features):
        xl = X_l[:, j]
        xu = X_u[:, j]
        values = np.unique(np.concatenate([xl, xu]))
        if values.size < 2:
            continue
        thresholds = (values[:-1] + values[1:]) / 2.0

        order_l = np.argsort(xl, kind="stable")
        sorted_l = xl[order_l]
        cum_counts = np.vstack([np.zeros((1, kappa), np.int64), np.cumsum(onehot[order_l], axis=0)])
        pos_l = np.searchsorted(sorted_l, thresholds, side="right")
        left_counts = cum_counts[pos_l]
        left_l = pos_l.astype(np.int64)
        left_u = np.searchsorted(np.sort(xu), thresholds, side="right").astype(np.int64)
        right_l = p_l - left_l
        right_u = p_u - left_u

        feasible = (left_l >= min_l) & (right_l >= min_l) & (left_u >= min_u) & (right_u >= min_u)
        if not feasible.any():
            continue
        g_left = _augmented_gini(n_l, n_u, left_l, left_u, left_counts, theta)
        g_right = _augmented_gini(n_l, n_u, right_l, right_u, parent_counts - left_counts, theta)
        red = _reduction(g_parent, p_u, g_left, left_u, g_right, right_u)
        if min_reduction is not None:
            feasible &= red >= min_reduction
            if not feasible.any():
                continue
        red = np.where(feasible, red, -np.inf)
        i = int(np.argmax(red))
        if best is None or red[i] > best[0]:
            best = (float(red[i]), j, float(thresholds[i]), left_counts[i], int(left_u[i]))

    if best is None:
        return None
    reduction, j, threshold, lc, lu = best
    lc = lc.astype(np.int64)
    left = NodeStats(n_l, n_u, int(lc.sum()), lu, tuple(lc.tolist()), theta)
    right = NodeStats(
        n_l, n_u, p_l - int(lc.sum()), p_u - lu, tuple((parent_counts - lc).tolist()), theta
    )
    return SplitDecision(j, threshold, reduction, left, right)


def best_gini_split(X, y, features, n_classes, tol=GINI_TOL):
    """Best threshold split under the ordinary Gini impurity.

    Children are weighted by their row fractions.  Only splits improving the
    impurity by more than ``tol`` are returned; ``None`` otherwise.  Labels
    are in 1..n_classes.  Returns ``(feature, threshold, reduction)``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    n = len(y)
    if n < 2:
        return None
    onehot = np.zeros((n, n_classes), dtype=np.int64)
    onehot[np.arange(n), y - 1] = 1
    parent_counts = onehot.sum(axis=0)
    g_parent = _standard_gini(parent_counts)

    best = None
    for j in sorted(int(f) for f in features):
        x = X[:, j]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        values = np.unique(xs)
        if values.size < 2:
            continue
        thresholds = (values[:-1] + values[1:]) / 2.0
        cum = np.vstack([np.zeros((1, n_classes), np.int64), np.cumsum(onehot[order], axis=0)])
        pos = np.searchsorted(xs, thresholds, side="right")
        left = cum[pos]
        right = parent_counts - left
        n_left = pos.astype(np.int64)
        red = _reduction(g_parent, n, _standard_gini(left), n_left, _standard_gini(right), n - n_left)
        red = np.where((n_left > 0) & (n_left < n), red, -np.inf)
        i = int(np.argmax(red))
        if red[i] > tol and (best is None or red[i] > best[2]):
            best = (j, float(thresholds[i]), float(red[i]))
    return best
