"""Data ingestion, normalisation, synthetic data and the class-shift split.

Labels are always integers 1..kappa for known classes; the augmented class,
where present, is kappa+1.  All randomness flows through an explicit seed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MANIFEST_VERSION = 1
AUGMENTED_NAME = "augmented"


class DataError(ValueError):
    """Malformed or insufficient input data."""


@dataclass
class LabeledSet:
    X: np.ndarray
    y: np.ndarray
    kappa: int
    label_map: dict = field(default_factory=dict)
    feature_names: list = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X.reshape(len(self.X), -1)
        self.y = np.asarray(self.y, dtype=np.int64)
        if len(self.X) != len(self.y):
            raise DataError("features and labels have different lengths")
        if self.kappa < 1:
            raise DataError("kappa must be >= 1")
        if not np.all(np.isfinite(self.X)):
            raise DataError("non-finite feature value")

    def __len__(self):
        return len(self.y)

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass
class UnlabeledSet:
    X: np.ndarray
    feature_names: list = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if not np.all(np.isfinite(self.X)):
            raise DataError("non-finite feature value")

    def __len__(self):
        return len(self.X)

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class ShiftSplitConfig:
    augmented_class_fraction: float = 0.5
    theta: float = 0.5
    n_l: int = 500
    n_u: int = 1000
    n_test: int = 100
    seed: int = 0


@dataclass
class ShiftSplit:
    S_l: LabeledSet
    S_u: UnlabeledSet
    S_test: LabeledSet
    augmented_classes: list
    u_is_augmented: np.ndarray
    realized_theta_u: float
    realized_theta_test: float


@dataclass(frozen=True)
class Cluster:
    mean: tuple
    std: float
    count: int
    label: int | None = None  # None marks an augmented cluster


@dataclass(frozen=True)
class SyntheticSpec:
    d: int
    clusters: tuple
    seed: int = 0

    def __post_init__(self):
        for c in self.clusters:
            if len(c.mean) != self.d:
                raise DataError("cluster mean has wrong dimension")
            if not c.std > 0:
                raise DataError("cluster std must be > 0")
            if c.count < 0:
                raise DataError("cluster count must be >= 0")
        labels = sorted({c.label for c in self.clusters if c.label is not None})
        if labels != list(range(1, len(labels) + 1)):
            raise DataError("known class labels must be contiguous 1..kappa")

    @property
    def kappa(self) -> int:
        return len({c.label for c in self.clusters if c.label is not None})


def rng_for(*key) -> np.random.Generator:
    """Generator whose stream is a deterministic function of integer ``key``."""
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


# -- CSV ----------------------------------------------------------------------


def load_csv(path, label_column=None, label_map=None):
    """Read a CSV with a header row.

    Without ``label_column`` an :class:`UnlabeledSet` is returned.  Labels are
    remapped to 1..kappa in order of first appearance, unless ``label_map``
    (name -> index) is given; with a fixed map, names outside it become the
    augmented class kappa+1.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if r]
    if not body:
        raise DataError(f"{path}: no data rows")
    if label_column is not None and label_column not in header:
        raise DataError(f"{path}: missing column {label_column!r}")
    label_idx = header.index(label_column) if label_column is not None else None
    feat_idx = [i for i in range(len(header)) if i != label_idx]
    feature_names = [header[i] for i in feat_idx]

    X = np.empty((len(body), len(feat_idx)))
    raw_labels = []
    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r} has {len(row)} cells, expected {len(header)}")
        for c, i in enumerate(feat_idx):
            cell = row[i].strip()
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {r}, column {header[i]!r}: non-numeric cell {cell!r}") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: row {r}, column {header[i]!r}: non-finite cell {cell!r}")
            X[r - 2, c] = v
        if label_idx is not None:
            raw_labels.append(row[label_idx].strip())

    if label_idx is None:
        return UnlabeledSet(X, feature_names)

    if label_map is None:
        label_map = {}
        for name in raw_labels:
            label_map.setdefault(name, len(label_map) + 1)
        kappa = len(label_map)
        y = np.array([label_map[n] for n in raw_labels], dtype=np.int64)
    else:
        label_map = {str(k): int(v) for k, v in label_map.items()}
        kappa = len(label_map)
        y = np.array([label_map.get(n, kappa + 1) for n in raw_labels], dtype=np.int64)
    return LabeledSet(X, y, kappa, label_map, feature_names)


def write_csv(path, X, labels=None, feature_names=None, label_column="label"):
    """Write features (and optionally a label column) with full float precision."""
    X = np.asarray(X, dtype=float)
    names = list(feature_names) if feature_names else [f"x{j}" for j in range(X.shape[1])]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names + ([label_column] if labels is not None else []))
        for i, row in enumerate(X):
            cells = [repr(float(v)) for v in row]
            if labels is not None:
                cells.append(str(labels[i]))
            w.writerow(cells)


def label_names(y, label_map, kappa):
    """Inverse of the label map; kappa+1 is written as ``augmented``."""
    inv = {v: k for k, v in label_map.items()} if label_map else {}
    return [inv.get(int(v), AUGMENTED_NAME if int(v) == kappa + 1 else str(int(v))) for v in y]


# -- normalisation ------------------------------------------------------------


def normalize_unit_interval(train_sets, apply_sets=()):
    """Min-max scale every set with ranges taken from ``train_sets`` only.

    Constant features map to 0 and values outside the training range are
    clamped to [0, 1].  Returns ``(normalized_train, normalized_apply, ranges)``
    where sets are plain arrays and ``ranges`` is a list of (min, max).
    """
    train = [np.asarray(getattr(s, "X", s), dtype=float) for s in train_sets]
    apply = [np.asarray(getattr(s, "X", s), dtype=float) for s in apply_sets]
    pooled = np.vstack(train)
    lo = pooled.min(axis=0)
    hi = pooled.max(axis=0)
    ranges = list(zip(lo.tolist(), hi.tolist()))
    return [apply_ranges(a, ranges) for a in train], [apply_ranges(a, ranges) for a in apply], ranges


def apply_ranges(X, ranges):
    X = np.asarray(X, dtype=float)
    lo = np.array([r[0] for r in ranges])
    hi = np.array([r[1] for r in ranges])
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (X - lo) / safe, 0.0)
    return np.clip(out, 0.0, 1.0)


def make_manifest(feature_names, label_map, ranges):
    return {
        "version": MANIFEST_VERSION,
        "feature_names": list(feature_names),
        "label_map": dict(label_map),
        "normalization": [[float(a), float(b)] for a, b in ranges],
    }


# -- class-shift split ----------------------------------------------------------


def make_shift_split(full: LabeledSet, cfg: ShiftSplitConfig, augmented_classes=None) -> ShiftSplit:
    """Split a fully labeled source into (S_l, S_u, S_test).

    A seeded choice of ``ceil(fraction * C)`` source classes forms the
    augmented class (or ``augmented_classes`` when given).  S_l holds known
    classes only; each S_u / S_test slot is augmented with probability
    ``theta``, and is filled by an instance drawn uniformly from the
    corresponding role's remaining pool.  No instance is used twice.
    """
    if not 0.0 <= cfg.theta < 1.0:
        raise DataError("theta must lie in [0, 1)")
    rng = rng_for(cfg.seed, 0x5EED)
    source = np.unique(full.y)
    if augmented_classes is None:
        if len(source) < 2:
            raise DataError("need at least 2 source classes")
        if not 0.0 < cfg.augmented_class_fraction < 1.0:
            raise DataError("augmented_class_fraction must lie in (0, 1)")
        n_aug = min(math.ceil(cfg.augmented_class_fraction * len(source)), len(source) - 1)
        aug = sorted(rng.choice(source, size=n_aug, replace=False).tolist())
    else:
        aug = sorted(int(a) for a in augmented_classes)
    known = [int(c) for c in source if c not in aug]
    if not known:
        raise DataError("no known classes left")

    remap = {c: i + 1 for i, c in enumerate(known)}
    kappa = len(known)
    inv_map = {v: k for k, v in full.label_map.items()} if full.label_map else {}
    label_map = {inv_map.get(c, str(c)): remap[c] for c in known}

    is_aug = np.isin(full.y, aug)
    pools = {
        False: list(rng.permutation(np.flatnonzero(~is_aug))),
        True: list(rng.permutation(np.flatnonzero(is_aug))),
    }

    def take(role, n, what):
        pool = pools[role]
        if n > len(pool):
            kind = "augmented" if role else "known"
            raise DataError(f"{what}: need {n} {kind} instances, only {len(pool)} left (deficit {n - len(pool)})")
        out, pools[role] = pool[:n], pool[n:]
        return out

    idx_l = take(False, cfg.n_l, "S_l")

    def mixture(n, what):
        flags = rng.random(n) < cfg.theta
        n_aug = int(flags.sum())
        a = iter(take(True, n_aug, what))
        k = iter(take(False, n - n_aug, what))
        return np.array([next(a) if f else next(k) for f in flags], dtype=np.int64), flags

    idx_u, flags_u = mixture(cfg.n_u, "S_u")
    idx_t, flags_t = mixture(cfg.n_test, "S_test")

    def relabel(idx):
        return np.array([kappa + 1 if full.y[i] in aug else remap[int(full.y[i])] for i in idx], dtype=np.int64)

    names = full.feature_names
    S_l = LabeledSet(full.X[idx_l], relabel(idx_l), kappa, label_map, names)
    S_u = UnlabeledSet(full.X[idx_u], names)
    S_test = LabeledSet(full.X[idx_t], relabel(idx_t), kappa, label_map, names)
    return ShiftSplit(
        S_l,
        S_u,
        S_test,
        aug,
        flags_u,
        float(flags_u.mean()) if cfg.n_u else 0.0,
        float(flags_t.mean()) if cfg.n_test else 0.0,
    )


# -- synthetic data -------------------------------------------------------------


def generate_synthetic(spec: SyntheticSpec) -> LabeledSet:
    """Isotropic Gaussian clusters, min-max normalised into [0, 1].

    Augmented clusters (``label=None``) get label kappa+1.
    """
    rng = rng_for(spec.seed, 0xC1A55)
    kappa = spec.kappa
    Xs, ys = [], []
    for c in spec.clusters:
        Xs.append(rng.normal(np.asarray(c.mean, float), c.std, size=(c.count, spec.d)))
        ys.append(np.full(c.count, kappa + 1 if c.label is None else c.label, dtype=np.int64))
    X = np.vstack(Xs) if Xs else np.empty((0, spec.d))
    y = np.concatenate(ys) if ys else np.empty(0, np.int64)
    if len(X):
        (X,), _, _ = normalize_unit_interval([X])
    label_map = {str(k): k for k in range(1, kappa + 1)}
    return LabeledSet(X, y, kappa, label_map, [f"x{j}" for j in range(spec.d)])


def synthetic_spec_from_dict(doc) -> SyntheticSpec:
    clusters = tuple(
        Cluster(tuple(c["mean"]), float(c["std"]), int(c["count"]), c.get("label"))
        for c in doc["clusters"]
    )
    return SyntheticSpec(int(doc["d"]), clusters, int(doc.get("seed", 0)))


def separated_benchmark_spec(n_per_cluster=2000, separation=10.0, std=1.0, seed=0) -> SyntheticSpec:
    """2-D mixture: 3 known Gaussian clusters and 1 augmented one on a square.

    Cluster means sit on the corners of a square of side ``separation * std``.
    """
    s = separation * std
    means = [(0.0, 0.0), (s, 0.0), (0.0, s), (s, s)]
    clusters = tuple(
        Cluster(m, std, n_per_cluster, label=(i + 1 if i < 3 else None)) for i, m in enumerate(means)
    )
    return SyntheticSpec(2, clusters, seed)


def benchmark_split(seed, theta=0.5, n_l=500, n_u=1000, n_test=400, separation=10.0) -> ShiftSplit:
    """Separable synthetic benchmark split with the augmented cluster fixed."""
    spec = separated_benchmark_spec(separation=separation, seed=seed)
    full = generate_synthetic(spec)
    cfg = ShiftSplitConfig(theta=theta, n_l=n_l, n_u=n_u, n_test=n_test, seed=seed)
    return make_shift_split(full, cfg, augmented_classes=[full.kappa + 1])
