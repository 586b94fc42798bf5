import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lacforest.impurity import (
    NodeStats,
    augmented_gini,
    best_split,
    gini_of_vector,
    node_stats,
    split_reduction,
    standard_gini,
    vartheta_augmented,
    vartheta_vector,
)
from lacforest.oracle import exhaustive_best_split


def stats(n_cl, n_cu, counts=None, n_l=100, n_u=100, theta=0.5):
    counts = counts if counts is not None else (n_cl,)
    return NodeStats(n_l, n_u, n_cl, n_cu, tuple(counts), theta)


# -- vartheta ------------------------------------------------------------------


def test_no_unlabeled_gives_zero():
    assert vartheta_augmented(stats(10, 0)) == 0.0


def test_no_labeled_gives_one():
    assert vartheta_augmented(stats(0, 50)) == 1.0


def test_hand_value():
    # 1 - 0.5 * 100 * 10 / (100 * 40) = 0.875
    assert vartheta_augmented(stats(10, 40)) == pytest.approx(0.875, abs=1e-15)


def test_clamped_at_zero():
    # inner value 1 - 0.5 * 90 / 40 = -0.125
    assert vartheta_augmented(stats(90, 40)) == 0.0


def test_vector_pure_node():
    np.testing.assert_array_equal(vartheta_vector(stats(5, 0, (5, 0))), [1.0, 0.0, 0.0])


def test_vector_empty_labeled():
    v = vartheta_vector(stats(0, 7, (0, 0)))
    np.testing.assert_array_equal(v[:2], [0.0, 0.0])
    assert v[2] == 1.0


def test_vector_hand_value():
    v = vartheta_vector(stats(10, 40, (6, 4)))
    np.testing.assert_allclose(v, [0.075, 0.05, 0.875], atol=1e-15)


def test_gini_values():
    assert gini_of_vector([0, 1, 0]) == 0.0
    assert gini_of_vector([0.5, 0.5, 0]) == 0.5
    assert augmented_gini(stats(10, 40, (6, 4))) == pytest.approx(0.22625, abs=1e-14)


def test_standard_gini():
    assert standard_gini([10, 0, 0]) == 0.0
    assert standard_gini([5, 5]) == 0.5
    assert standard_gini([3, 1, 0]) == pytest.approx(0.375, abs=1e-15)
    assert standard_gini([0, 0]) == 0.0


def test_invalid_stats_rejected():
    with pytest.raises(ValueError):
        NodeStats(10, 10, 11, 0, (11,), 0.5)
    with pytest.raises(ValueError):
        NodeStats(10, 10, 3, 0, (2,), 0.5)


@st.composite
def node_stats_strategy(draw):
    kappa = draw(st.integers(1, 4))
    n_l = draw(st.integers(1, 300))
    n_u = draw(st.integers(1, 300))
    counts = draw(st.lists(st.integers(0, n_l), min_size=kappa, max_size=kappa).filter(lambda c: sum(c) <= n_l))
    n_cu = draw(st.integers(0, n_u))
    theta = draw(st.floats(0.01, 0.99))
    return NodeStats(n_l, n_u, sum(counts), n_cu, tuple(counts), theta)


@settings(max_examples=300, deadline=None)
@given(node_stats_strategy())
def test_vector_in_simplex(s):
    v = vartheta_vector(s)
    assert np.all(v >= 0) and np.all(v <= 1)
    assert v.sum() <= 1 + 1e-12
    if s.n_node_l >= 1 and s.n_node_u >= 1:
        assert v.sum() == pytest.approx(1.0, abs=1e-12)
    g = augmented_gini(s)
    assert 0.0 <= g <= 1.0
    if s.n_node_l + s.n_node_u > 0:
        assert g < 1.0


@settings(max_examples=200, deadline=None)
@given(node_stats_strategy(), st.integers(1, 50))
def test_monotone_in_labeled_count(s, extra):
    more = NodeStats(s.n_l + extra, s.n_u, s.n_node_l + extra, s.n_node_u,
                     (s.class_counts[0] + extra,) + tuple(s.class_counts[1:]), s.theta)
    # keep the global n_l fixed: compare at the larger global count
    base = NodeStats(s.n_l + extra, s.n_u, s.n_node_l, s.n_node_u, s.class_counts, s.theta)
    assert vartheta_augmented(more) <= vartheta_augmented(base)


def test_gini_matches_standard_when_frequency_known():
    # fully labeled kappa+1 counts: plug the true augmented frequency in
    counts = np.array([3, 5, 2])
    freq = counts / counts.sum()
    assert gini_of_vector(freq) == pytest.approx(standard_gini(counts), abs=1e-15)


# -- reduction ---------------------------------------------------------------------


def test_reduction_identical_children_is_zero():
    parent = stats(20, 40, (12, 8))
    half = stats(10, 20, (6, 4))
    assert split_reduction(parent, half, half) == pytest.approx(0.0, abs=1e-15)


def test_reduction_perfect_split_equals_parent():
    # left: all known labeled and unlabeled known-looking; right: pure augmented
    parent = stats(50, 100, (50,), n_l=50, n_u=100)
    left = stats(50, 50, (50,), n_l=50, n_u=100)
    right = stats(0, 50, (0,), n_l=50, n_u=100)
    assert augmented_gini(left) == 0.0 and augmented_gini(right) == 0.0
    assert split_reduction(parent, left, right) == pytest.approx(augmented_gini(parent), abs=1e-15)


def test_reduction_random_direct_recomputation():
    rng = np.random.default_rng(4)
    for _ in range(200):
        kappa = int(rng.integers(1, 4))
        n_l, n_u = 200, 300
        cl = rng.integers(0, 30, kappa)
        cr = rng.integers(0, 30, kappa)
        ul, ur = int(rng.integers(0, 50)), int(rng.integers(1, 50))
        theta = float(rng.uniform(0.1, 0.9))
        left = NodeStats(n_l, n_u, int(cl.sum()), ul, tuple(cl.tolist()), theta)
        right = NodeStats(n_l, n_u, int(cr.sum()), ur, tuple(cr.tolist()), theta)
        parent = NodeStats(n_l, n_u, int(cl.sum() + cr.sum()), ul + ur, tuple((cl + cr).tolist()), theta)

        def g(n_cl, n_cu, counts):
            aug = 0.0
            if n_cu > 0:
                aug = max(0.0, 1 - (1 - theta) * n_u * n_cl / (n_l * n_cu))
            known = [(1 - aug) * c / max(1, n_cl) for c in counts]
            return 1 - sum(v * v for v in known + [aug])

        want = g(parent.n_node_l, ul + ur, cl + cr) - ul / (ul + ur) * g(left.n_node_l, ul, cl) \
            - ur / (ul + ur) * g(right.n_node_l, ur, cr)
        assert split_reduction(parent, left, right) == pytest.approx(want, abs=1e-12)


def test_reduction_rejects_bad_input():
    with pytest.raises(ValueError):
        split_reduction(stats(2, 0), stats(1, 0), stats(1, 0))
    with pytest.raises(ValueError):
        split_reduction(stats(4, 4), stats(1, 2), stats(1, 2))


# -- split search ------------------------------------------------------------------


def test_node_stats_helper():
    s = node_stats(np.array([1, 2, 2]), 5, 2, 10, 20, 0.3)
    assert s.class_counts == (1, 2) and s.n_node_l == 3 and s.n_node_u == 5


def test_infeasible_unlabeled_count():
    rng = np.random.default_rng(0)
    X_l = rng.random((40, 2))
    y_l = rng.integers(1, 3, 40)
    X_u = rng.random((3, 2))
    # each child needs >= 0.2 * 10 = 2 unlabeled rows, only 3 in the node
    assert best_split(X_l, y_l, X_u, [0, 1], 0.2, 40, 10, 0.5, 2) is None


def test_separating_midpoint():
    # known mass on the left, augmented mass on the right; the labeled rows
    # need a share on the right too, otherwise no split is feasible at all
    X_u = np.array([[0.1], [0.2], [0.8], [0.9]])
    X_l = np.concatenate([np.linspace(0.1, 0.2, 20), np.full(10, 0.95)])[:, None]
    y_l = np.ones(30, dtype=int)
    dec = best_split(X_l, y_l, X_u, [0], 0.3, 30, 4, 0.5, 1)
    assert dec is not None
    assert 0.2 < dec.threshold < 0.8
    assert dec.threshold == 0.5
    assert dec == exhaustive_best_split(X_l, y_l, X_u, [0], 0.3, 30, 4, 0.5, 1)


def test_labeled_only_on_one_side_never_separates():
    # with every labeled row left of the gap, a split in the gap leaves the
    # right child without labeled rows, which no positive gamma allows
    X_u = np.array([[0.1], [0.2], [0.8], [0.9]])
    X_l = np.array([[0.1], [0.2]])
    dec = best_split(X_l, np.array([1, 1]), X_u, [0], 0.05, 2, 4, 0.5, 1)
    assert dec is None or not 0.2 < dec.threshold < 0.8
    assert dec == exhaustive_best_split(X_l, np.array([1, 1]), X_u, [0], 0.05, 2, 4, 0.5, 1)


def test_children_partition_parent():
    rng = np.random.default_rng(1)
    X_l, X_u = rng.random((60, 3)), rng.random((80, 3))
    y_l = rng.integers(1, 4, 60)
    dec = best_split(X_l, y_l, X_u, [0, 1, 2], 0.05, 60, 80, 0.4, 3)
    assert dec.left_stats.n_node_l + dec.right_stats.n_node_l == 60
    assert dec.left_stats.n_node_u + dec.right_stats.n_node_u == 80
    assert int(np.sum(X_l[:, dec.feature] <= dec.threshold)) == dec.left_stats.n_node_l


def test_tie_break_lower_feature():
    # two identical features: the lower index must win
    rng = np.random.default_rng(2)
    col = rng.random(30)
    X_l = np.column_stack([col[:10], col[:10]])
    X_u = np.column_stack([col[10:], col[10:]])
    y_l = rng.integers(1, 3, 10)
    dec = best_split(X_l, y_l, X_u, [1, 0], 0.05, 10, 20, 0.5, 2)
    assert dec.feature == 0


def test_min_reduction_knob():
    rng = np.random.default_rng(3)
    X_l, X_u = rng.random((30, 1)), rng.random((30, 1))
    y_l = np.ones(30, dtype=int)
    dec = best_split(X_l, y_l, X_u, [0], 0.05, 30, 30, 0.5, 1)
    assert dec is not None
    assert best_split(X_l, y_l, X_u, [0], 0.05, 30, 30, 0.5, 1, min_reduction=dec.reduction + 1.0) is None


def test_matches_exhaustive_oracle():
    from lacforest.cli import random_node

    rng = np.random.default_rng(11)
    for _ in range(200):
        args = random_node(rng)
        assert best_split(*args) == exhaustive_best_split(*args)
