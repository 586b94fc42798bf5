"""Independent checks: brute-force minimisers, Monte-Carlo convergence, exhaustive splits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .dataset import rng_for
from .impurity import NodeStats, SplitDecision, split_reduction, vartheta_augmented
from .neural import route, total_loss, vartheta_soft

# -- squared loss over the simplex --------------------------------------------------


def closed_form_loss(p) -> float:
    p = np.asarray(p, dtype=float)
    return float(1.0 - np.sum(p * p))


def expected_squared_loss(w, p) -> np.ndarray:
    """E ||w - onehot(y)||^2 with y ~ p; ``w`` may be a stack of points."""
    w = np.asarray(w, dtype=float)
    p = np.asarray(p, dtype=float)
    total = np.zeros(w.shape[:-1])
    for k in range(p.size):
        diff = w.copy()
        diff[..., k] -= 1.0
        total += p[k] * np.sum(diff * diff, axis=-1)
    return total


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ks = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / ks > 0)[0][-1]
    tau = css[rho] / (rho + 1)
    return np.maximum(v - tau, 0.0)


@lru_cache(maxsize=8)
def _simplex_grid(k, steps):
    """All compositions of ``steps`` into ``k`` non-negative integer parts.

    Returns the parts as uint8 rows and their sums of squares.
    """
    grid = np.arange(steps + 1, dtype=np.int64)[:, None]
    for _ in range(k - 2):
        room = steps - grid.sum(axis=1)
        reps = room + 1
        base = np.repeat(grid, reps, axis=0)
        offs = np.arange(reps.sum()) - np.repeat(np.cumsum(reps) - reps, reps)
        grid = np.column_stack([base, offs])
    grid = np.column_stack([grid, steps - grid.sum(axis=1)])
    return grid.astype(np.uint8), (grid * grid).sum(axis=1)


def optimal_squared_loss_bruteforce(p, resolution=0.01, pgd_steps=200, chunk=1 << 20) -> float:
    """Minimum of the expected squared loss over the simplex, found numerically.

    Combines projected gradient descent from the centroid with an exhaustive
    sweep of the simplex grid of the given resolution; returns the smaller
    value found.
    """
    p = np.asarray(p, dtype=float)
    k = p.size
    w = np.full(k, 1.0 / k)
    for _ in range(pgd_steps):
        grad = np.zeros(k)
        for j in range(k):
            e = np.zeros(k)
            e[j] = 1.0
            grad += p[j] * 2.0 * (w - e)
        w = project_simplex(w - 0.25 * grad)
    best = float(expected_squared_loss(w, p))
    if k == 1:
        return best

    steps = int(round(1.0 / resolution))
    grid, sq = _simplex_grid(k, steps)
    # E||w - e_y||^2 = sum_y p_y (|w|^2 - 2 w_y + 1), with w = grid / steps
    for s in range(0, len(grid), chunk):
        g = grid[s : s + chunk].astype(float)
        vals = sq[s : s + chunk] / steps**2 - 2.0 * (g @ p) / steps + p.sum()
        best = min(best, float(vals.min()))
    return best


# -- convergence of the augmented-class estimate ----------------------------------------


@dataclass
class ConvergenceCurve:
    """Rows of (n, median abs error, 0.95-quantile abs error)."""

    rows: list = field(default_factory=list)

    @property
    def n(self):
        return [r[0] for r in self.rows]

    @property
    def median(self):
        return [r[1] for r in self.rows]

    @property
    def q95(self):
        return [r[2] for r in self.rows]

    def at(self, n):
        for r in self.rows:
            if r[0] == n:
                return r
        raise KeyError(n)

    def ratios(self, ns=None):
        """Median-error ratio between consecutive grid points (restricted to ``ns``)."""
        rows = self.rows if ns is None else [self.at(n) for n in ns]
        return [a[1] / b[1] if b[1] > 0 else math.inf for a, b in zip(rows, rows[1:])]

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "median", "q95"])
            for n, med, q in self.rows:
                w.writerow([n, repr(med), repr(q)])


def _box_area(box):
    return float(np.prod([hi - lo for lo, hi in box]))


def _box_intersection(a, b):
    out = []
    for (alo, ahi), (blo, bhi) in zip(a, b):
        lo, hi = max(alo, blo), min(ahi, bhi)
        if hi <= lo:
            return None
        out.append((lo, hi))
    return tuple(out)


def _in_box(X, box):
    mask = np.ones(len(X), dtype=bool)
    for j, (lo, hi) in enumerate(box):
        mask &= (X[:, j] >= lo) & (X[:, j] <= hi)
    return mask


@dataclass(frozen=True)
class BoxPopulation:
    """Two-dimensional class-shift population built from uniform boxes.

    Known classes: uniform on the unit square, class 1 where ``x0 < split``
    and class 2 otherwise.  Augmented class: uniform on ``aug_box``.  The
    unlabeled distribution is the ``theta`` mixture of the two.
    """

    theta: float = 0.5
    aug_box: tuple = ((0.25, 0.75), (0.0, 1.0))
    region: tuple = ((0.0, 0.5), (0.0, 0.5))
    split: float = 0.5
    kappa: int = 2

    def region_mass_known(self):
        return _box_area(self.region)

    def region_mass_aug(self):
        inter = _box_intersection(self.region, self.aug_box)
        return 0.0 if inter is None else _box_area(inter) / _box_area(self.aug_box)

    def region_mass(self):
        return (1 - self.theta) * self.region_mass_known() + self.theta * self.region_mass_aug()

    def true_theta_region(self):
        """Pr[y = augmented | x in region], exact."""
        aug = self.theta * self.region_mass_aug()
        return aug / self.region_mass()

    def sample_labeled(self, n, rng):
        X = rng.random((n, 2))
        y = np.where(X[:, 0] < self.split, 1, 2)
        return X, y

    def sample_unlabeled(self, n, rng):
        is_aug = rng.random(n) < self.theta
        X = rng.random((n, 2))
        (a0, b0), (a1, b1) = self.aug_box
        k = int(is_aug.sum())
        X[is_aug] = np.column_stack([rng.uniform(a0, b0, k), rng.uniform(a1, b1, k)])
        return X, is_aug


def lemma_population(theta_region=0.5) -> BoxPopulation:
    """Region of mixture mass 0.25 whose augmented share is 0.5 (or 0 when asked)."""
    if theta_region == 0:
        return BoxPopulation(aug_box=((0.6, 1.0), (0.0, 1.0)))
    return BoxPopulation()


def _summarise(n_grid, errors):
    rows = []
    for n, errs in zip(n_grid, errors):
        errs = np.asarray(errs)
        rows.append((int(n), float(np.median(errs)), float(np.quantile(errs, 0.95))))
    return ConvergenceCurve(rows)


def vartheta_convergence_experiment(population: BoxPopulation, n_grid, trials=200, seed=0, return_estimates=False):
    """Monte-Carlo error of the hard-region augmented estimate versus the truth.

    For each n, ``trials`` independent draws of n labeled and n unlabeled
    points are made and the absolute error of the node estimate for
    ``population.region`` is recorded.
    """
    truth = population.true_theta_region()
    errors, estimates = [], []
    for n in n_grid:
        errs, ests = [], []
        for trial in range(trials):
            rng = rng_for(seed, int(n), trial)
            X_l, y_l = population.sample_labeled(int(n), rng)
            X_u, _ = population.sample_unlabeled(int(n), rng)
            in_l = _in_box(X_l, population.region)
            counts = np.bincount(y_l[in_l] - 1, minlength=population.kappa)
            stats = NodeStats(int(n), int(n), int(in_l.sum()), int(_in_box(X_u, population.region).sum()),
                              tuple(counts.tolist()), population.theta)
            est = vartheta_augmented(stats)
            ests.append(est)
            errs.append(abs(est - truth))
        errors.append(errs)
        estimates.append(ests)
    curve = _summarise(n_grid, errors)
    return (curve, estimates) if return_estimates else curve


# -- soft tree version --------------------------------------------------------------------


def _softplus(z):
    return np.logaddexp(0.0, z)


def _int_sigmoid(w, b, lo, hi):
    """Integral of sigmoid(w x + b) over [lo, hi]."""
    if w == 0:
        return (hi - lo) / (1.0 + math.exp(-b))
    return float((_softplus(w * hi + b) - _softplus(w * lo + b)) / w)


@dataclass(frozen=True)
class SoftTreePopulation:
    """Depth-3 soft tree whose root gates on x0 and whose children gate on x1.

    Every leaf probability factorises over the two coordinates, so its
    expectation over a uniform box is a product of closed-form sigmoid
    integrals.
    """

    base: BoxPopulation = BoxPopulation(aug_box=((0.2, 0.9), (0.1, 0.7)))
    sharpness: float = 8.0
    cuts: tuple = (0.5, 0.4, 0.6)  # root (x0), left child (x1), right child (x1)

    def tree(self):
        s = self.sharpness
        w = np.array([[s, 0.0], [0.0, s], [0.0, s]])
        b = -s * np.array(self.cuts)
        # sigmoid(w.x + b) is the probability of going left
        return -w, -b

    def _leaf_integral(self, leaf, box):
        w, b = self.tree()
        (a0, b0), (a1, b1) = box
        go_left_root = leaf < 2
        child = 1 if go_left_root else 2
        go_left_child = leaf % 2 == 0
        i0 = _int_sigmoid(w[0, 0], b[0], a0, b0)
        i0 = i0 if go_left_root else (b0 - a0) - i0
        i1 = _int_sigmoid(w[child, 1], b[child], a1, b1)
        i1 = i1 if go_left_child else (b1 - a1) - i1
        return i0 * i1

    def true_vartheta(self):
        """Exact Pr[y = k | x reaches leaf], shape (4, kappa+1)."""
        pop = self.base
        out = np.zeros((4, pop.kappa + 1))
        unit = ((0.0, 1.0), (0.0, 1.0))
        class_boxes = [((0.0, pop.split), (0.0, 1.0)), ((pop.split, 1.0), (0.0, 1.0))]
        for leaf in range(4):
            kc = [self._leaf_integral(leaf, cb) for cb in class_boxes]
            e_kc = self._leaf_integral(leaf, unit)
            e_ac = self._leaf_integral(leaf, pop.aug_box) / _box_area(pop.aug_box)
            e_d = (1 - pop.theta) * e_kc + pop.theta * e_ac
            out[leaf, :2] = [(1 - pop.theta) * c / e_d for c in kc]
            out[leaf, 2] = pop.theta * e_ac / e_d
        return out

    def leaf_mass(self):
        pop = self.base
        unit = ((0.0, 1.0), (0.0, 1.0))
        return np.array([
            (1 - pop.theta) * self._leaf_integral(l, unit)
            + pop.theta * self._leaf_integral(l, pop.aug_box) / _box_area(pop.aug_box)
            for l in range(4)
        ])


def soft_vartheta_convergence_experiment(population: SoftTreePopulation, n_grid, trials=200, seed=0, component=None):
    """Monte-Carlo error of the soft leaf estimates for a frozen depth-3 tree.

    The recorded error per trial is the largest absolute deviation over all
    leaves and classes, or of a single ``(leaf, class_index)`` entry.
    """
    truth = population.true_vartheta()
    w, b = population.tree()
    pop = population.base
    errors = []
    for n in n_grid:
        errs = []
        for trial in range(trials):
            rng = rng_for(seed, int(n), trial, 1)
            X_l, y_l = pop.sample_labeled(int(n), rng)
            X_u, _ = pop.sample_unlabeled(int(n), rng)
            mu_l = route(w, b, X_l)
            mu_u = route(w, b, X_u)
            onehot = np.eye(pop.kappa)[y_l - 1]
            est = vartheta_soft(mu_l.sum(0), mu_u.sum(0), mu_l.T @ onehot, int(n), int(n), pop.theta)
            diff = np.abs(est - truth)
            errs.append(float(diff.max() if component is None else diff[component]))
        errors.append(errs)
    return _summarise(n_grid, errors)


# -- exhaustive split search ----------------------------------------------------------------


def exhaustive_best_split(X_l, y_l, X_u, features, gamma, n_l, n_u, theta, kappa, min_reduction=None):
    """Reference split search: every feature and midpoint, statistics recounted directly."""
    X_l = np.asarray(X_l, dtype=float)
    X_u = np.asarray(X_u, dtype=float)
    y_l = np.asarray(y_l, dtype=np.int64)

    def stats(mask_l, mask_u):
        counts = [int(np.sum(y_l[mask_l] == k)) for k in range(1, kappa + 1)]
        return NodeStats(n_l, n_u, int(mask_l.sum()), int(mask_u.sum()), tuple(counts), theta)

    parent = stats(np.ones(len(y_l), bool), np.ones(len(X_u), bool))
    best = None
    for j in sorted(int(f) for f in features):
        values = sorted(set(X_l[:, j].tolist()) | set(X_u[:, j].tolist()))
        for lo, hi in zip(values, values[1:]):
            a = (np.float64(lo) + np.float64(hi)) / 2.0
            left_l = X_l[:, j] <= a
            left_u = X_u[:, j] <= a
            left = stats(left_l, left_u)
            right = stats(~left_l, ~left_u)
            if min(left.n_node_l, right.n_node_l) < gamma * n_l:
                continue
            if min(left.n_node_u, right.n_node_u) < gamma * n_u:
                continue
            red = split_reduction(parent, left, right)
            if min_reduction is not None and red < min_reduction:
                continue
            if best is None or red > best.reduction:
                best = SplitDecision(j, float(a), red, left, right)
    return best


# -- finite differences ---------------------------------------------------------------------


def gradient_check(params, grads, X_l, y_l, X_u, kappa, theta, lambda_ce, activation="identity", step=1e-5, floor=1e-6):
    """Largest relative error between ``grads`` and central differences, per parameter array.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``. The floor is raised
    to ``1e4 * eps * max(1, |L|) / step``, the scale below which a central
    difference cannot resolve a component to 1e-4 because of round-off in L.
    """
    base = total_loss(params, X_l, y_l, X_u, kappa, theta, lambda_ce, activation).total
    floor = max(floor, 1e4 * np.finfo(float).eps * max(1.0, abs(base)) / step)
    worst = {}
    for key, arr in params.items():
        err = 0.0
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + step
            up = total_loss(params, X_l, y_l, X_u, kappa, theta, lambda_ce, activation).total
            arr[idx] = old - step
            down = total_loss(params, X_l, y_l, X_u, kappa, theta, lambda_ce, activation).total
            arr[idx] = old
            num = (up - down) / (2 * step)
            ana = grads[key][idx]
            err = max(err, abs(ana - num) / max(abs(ana), abs(num), floor))
        worst[key] = err
    return worst


def random_tiny_problem(rng):
    """Random small network and batch for gradient checks.

    d <= 5, depth 3, one tree, batches of at most 16 rows; parameters are
    spread out so that routing is far from uniform.
    """
    from .neural import ACTIVATIONS, EncoderConfig, init_params

    d = int(rng.integers(1, 6))
    kappa = int(rng.integers(1, 4))
    activation = ACTIVATIONS[int(rng.integers(len(ACTIVATIONS)))]
    hidden = int(rng.integers(2, 5)) if rng.random() < 0.5 else None
    enc = EncoderConfig(int(rng.integers(1, 5)), activation, hidden)
    params = init_params(d, kappa, 1, 3, enc, seed=int(rng.integers(2**31)))
    for key in params:
        params[key] = params[key] + rng.normal(0.0, 1.0, params[key].shape)
    n_l, n_u = int(rng.integers(2, 17)), int(rng.integers(2, 17))
    X_l = rng.random((n_l, d))
    y_l = rng.integers(1, kappa + 1, n_l)
    X_u = rng.random((n_u, d))
    theta = float(rng.uniform(0.1, 0.9))
    lambda_ce = float(rng.uniform(0.1, 2.0))
    return params, (X_l, y_l, X_u, kappa, theta, lambda_ce, activation)
