"""Deep neural LACForest with a small encoder and analytic gradients.

Parameters live in a plain ``dict`` of numpy arrays:

``enc_W0``, ``enc_b0`` (and ``enc_W1``, ``enc_b1`` with a hidden layer)
    encoder layers, ``W`` has shape (out, in).
``tree_W`` (m, t, d'), ``tree_b`` (m, t)
    routing parameters of the ``t = 2**(depth-1) - 1`` internal nodes of each
    tree, in heap order (children of node i are 2i+1 and 2i+2).
``head_W`` (kappa, d'), ``head_b`` (kappa,)
    the auxiliary softmax head used by the cross-entropy term.

Leaves are numbered left to right, ``t + 1`` per tree.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import DataError, rng_for

MODEL_VERSION = 1
EPS = 1e-12
ACTIVATIONS = ("identity", "logistic", "rectifier")


@dataclass(frozen=True)
class EncoderConfig:
    out_dim: int | None = None  # None: same as the input dimension
    activation: str = "identity"
    hidden_dim: int | None = None

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    batch_l: int = 512
    batch_u: int = 512
    lambda_ce: float = 1.0
    lr_init: float = 1e-2
    lr_final: float = 1e-3
    weight_decay: float = 5e-3
    eps: float = EPS
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_l < 1 or self.batch_u < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.lambda_ce < 0:
            raise ValueError("lambda_ce must be >= 0")

    def lr_at(self, epoch) -> float:
        """Cosine annealing from ``lr_init`` (first epoch) to ``lr_final`` (last)."""
        if self.epochs <= 1:
            return self.lr_init
        frac = epoch / (self.epochs - 1)
        return self.lr_final + 0.5 * (self.lr_init - self.lr_final) * (1.0 + math.cos(math.pi * frac))


# -- structure ----------------------------------------------------------------------


def n_internal(depth) -> int:
    if depth < 2:
        raise ValueError("tree depth must be >= 2")
    return 2 ** (depth - 1) - 1


def path_masks(depth):
    """(leaves, internal) 0/1 matrices: leaf lies in the left / right subtree of node."""
    t = n_internal(depth)
    left = np.zeros((t + 1, t))
    right = np.zeros((t + 1, t))
    for j in range(t + 1):
        node = t + j
        while node > 0:
            parent = (node - 1) // 2
            if node == 2 * parent + 1:
                left[j, parent] = 1.0
            else:
                right[j, parent] = 1.0
            node = parent
    return left, right


def init_params(d, kappa, m, depth, encoder=EncoderConfig(), seed=0):
    """Weights uniform in +-1/sqrt(fan_in), biases zero."""
    rng = rng_for(seed, 3)
    d_out = encoder.out_dim or d
    t = n_internal(depth)

    def uni(shape, fan_in):
        lim = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-lim, lim, size=shape)

    p = {}
    if encoder.hidden_dim:
        p["enc_W0"] = uni((encoder.hidden_dim, d), d)
        p["enc_b0"] = np.zeros(encoder.hidden_dim)
        p["enc_W1"] = uni((d_out, encoder.hidden_dim), encoder.hidden_dim)
        p["enc_b1"] = np.zeros(d_out)
    else:
        p["enc_W0"] = uni((d_out, d), d)
        p["enc_b0"] = np.zeros(d_out)
    p["tree_W"] = uni((m, t, d_out), d_out)
    p["tree_b"] = np.zeros((m, t))
    p["head_W"] = uni((kappa, d_out), d_out)
    p["head_b"] = np.zeros(kappa)
    return p


def _enc_layers(params):
    k = 0
    while f"enc_W{k}" in params:
        k += 1
    return k


# -- forward pieces -------------------------------------------------------------------


def _act(z, kind):
    if kind == "identity":
        return z
    if kind == "logistic":
        return sigmoid(z)
    return np.maximum(z, 0.0)


def _act_grad(z, a, kind):
    if kind == "identity":
        return np.ones_like(z)
    if kind == "logistic":
        return a * (1.0 - a)
    return (z > 0).astype(float)


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def encode(params, X, activation="identity", _cache=None):
    """Apply the encoder to rows of ``X``."""
    h = np.atleast_2d(np.asarray(X, dtype=float))
    if h.shape[1] != params["enc_W0"].shape[1]:
        raise DataError(f"expected {params['enc_W0'].shape[1]} features, got {h.shape[1]}")
    for k in range(_enc_layers(params)):
        z = h @ params[f"enc_W{k}"].T + params[f"enc_b{k}"]
        a = _act(z, activation)
        if _cache is not None:
            _cache.append((h, z, a))
        h = a
    return h


def route_all(tree_W, tree_b, H):
    """Leaf reaching probabilities for every tree: returns (mu, f).

    ``mu`` has shape (m, n, leaves) and ``f`` (m, n, internal) holds the
    left-child probabilities.
    """
    H = np.atleast_2d(H)
    f = sigmoid(np.einsum("nd,mtd->mnt", H, tree_W) + tree_b[:, None, :])
    m, n, t = f.shape
    mu = np.ones((m, n, 1))
    start, width = 0, 1
    while start < t:
        fl = f[:, :, start : start + width]
        mu = np.stack([mu * fl, mu * (1.0 - fl)], axis=-1).reshape(m, n, 2 * width)
        start += width
        width *= 2
    return mu, f


def route(w, b, h):
    """Leaf probabilities of a single tree with internal weights ``w`` (t, d') and biases ``b``."""
    mu, _ = route_all(np.asarray(w, float)[None], np.asarray(b, float)[None], np.atleast_2d(h))
    return mu[0]


@dataclass
class SoftLeafStats:
    """Soft counts for each tree and leaf: shapes (m, L), (m, L), (m, L, kappa)."""

    n_leaf_l: np.ndarray
    n_leaf_u: np.ndarray
    class_mass: np.ndarray
    n_l: int
    n_u: int
    theta: float
    eps: float = EPS


def soft_counts(mu_l, y_l, mu_u, kappa, theta, eps=EPS) -> SoftLeafStats:
    """Aggregate routing probabilities into per-leaf soft counts."""
    y_l = np.asarray(y_l, dtype=np.int64)
    onehot = np.zeros((len(y_l), kappa))
    onehot[np.arange(len(y_l)), y_l - 1] = 1.0
    return SoftLeafStats(
        mu_l.sum(axis=1),
        mu_u.sum(axis=1),
        np.einsum("mnl,nk->mlk", mu_l, onehot),
        mu_l.shape[1],
        mu_u.shape[1],
        theta,
        eps,
    )


def vartheta_soft(n_leaf_l, n_leaf_u, class_mass, n_l, n_u, theta, eps=EPS):
    """Soft class estimates, last component the augmented class.

    Works element-wise over leading axes; ``class_mass`` has a trailing
    kappa axis.
    """
    n_leaf_l = np.asarray(n_leaf_l, dtype=float)
    n_leaf_u = np.asarray(n_leaf_u, dtype=float)
    ratio = (1.0 - theta) * n_u * n_leaf_l / (n_l * np.maximum(eps, n_leaf_u))
    aug = np.maximum(1.0 - ratio, 0.0)
    known = (1.0 - aug)[..., None] * np.asarray(class_mass, float) / np.maximum(eps, n_leaf_l)[..., None]
    return np.concatenate([known, aug[..., None]], axis=-1)


def soft_augmented_gini(theta_vec):
    v = np.asarray(theta_vec, dtype=float)
    return 1.0 - np.sum(v * v, axis=-1)


def leaf_weights(mu_u):
    """Unlabeled mass fraction of each leaf, shape (m, L)."""
    return mu_u.mean(axis=1)


def loss_ag(mu_l, y_l, mu_u, kappa, theta, eps=EPS):
    """Per-tree weighted augmented Gini, shape (m,)."""
    st = soft_counts(mu_l, y_l, mu_u, kappa, theta, eps)
    vt = vartheta_soft(st.n_leaf_l, st.n_leaf_u, st.class_mass, st.n_l, st.n_u, theta, eps)
    return np.sum(leaf_weights(mu_u) * soft_augmented_gini(vt), axis=-1)


def head_probs(params, H):
    logits = H @ params["head_W"].T + params["head_b"]
    logits = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def loss_ce(probs, y_l, eps=EPS):
    """Mean negative log-probability of the true known class."""
    y_l = np.asarray(y_l, dtype=np.int64)
    p = probs[np.arange(len(y_l)), y_l - 1]
    return float(-np.mean(np.log(np.maximum(p, eps))))


# -- objective and gradient ------------------------------------------------------------


@dataclass
class LossParts:
    ag: float
    ce: float
    total: float


def total_loss(params, X_l, y_l, X_u, kappa, theta, lambda_ce, activation="identity", eps=EPS) -> LossParts:
    H = encode(params, np.vstack([X_l, X_u]), activation)
    n = len(X_l)
    mu, _ = route_all(params["tree_W"], params["tree_b"], H)
    ag = float(np.mean(loss_ag(mu[:, :n], y_l, mu[:, n:], kappa, theta, eps)))
    ce = loss_ce(head_probs(params, H[:n]), y_l, eps)
    return LossParts(ag, ce, ag + lambda_ce * ce)


def gradients(params, X_l, y_l, X_u, kappa, theta, lambda_ce, activation="identity", eps=EPS, masks=None):
    """Total loss and its gradient with respect to every parameter array.

    At the kink of the ``(.)_+`` clamp and of the ``max(eps, .)`` floors the
    inactive branch is used (subgradient 0).  Raises ``FloatingPointError``
    on non-finite values.
    """
    X_l = np.asarray(X_l, dtype=float)
    X_u = np.asarray(X_u, dtype=float)
    y_l = np.asarray(y_l, dtype=np.int64)
    if len(X_l) == 0 or len(X_u) == 0:
        raise ValueError("batches must be nonempty")
    n_l, n_u = len(X_l), len(X_u)
    m = params["tree_W"].shape[0]
    depth = int(round(math.log2(params["tree_W"].shape[1] + 1))) + 1
    left_mask, right_mask = masks if masks is not None else path_masks(depth)

    cache = []
    H = encode(params, np.vstack([X_l, X_u]), activation, cache)
    mu, f = route_all(params["tree_W"], params["tree_b"], H)
    mu_l, mu_u = mu[:, :n_l], mu[:, n_l:]

    # soft augmented Gini per leaf
    onehot = np.zeros((n_l, kappa))
    onehot[np.arange(n_l), y_l - 1] = 1.0
    nbl = mu_l.sum(axis=1)
    nbu = mu_u.sum(axis=1)
    mass = np.einsum("mnl,nk->mlk", mu_l, onehot)
    den_u = np.maximum(eps, nbu)
    den_l = np.maximum(eps, nbl)
    c_ratio = (1.0 - theta) * n_u / n_l
    r = c_ratio * nbl / den_u
    a = np.maximum(1.0 - r, 0.0)
    q = mass / den_l[..., None]
    sq = np.sum(q * q, axis=-1)
    one_a = 1.0 - a
    vt = np.concatenate([one_a[..., None] * q, a[..., None]], axis=-1)
    gini = soft_augmented_gini(vt)
    omega = nbu / n_u
    ag_tree = np.sum(omega * gini, axis=-1)
    ag = float(np.mean(ag_tree))

    probs = head_probs(params, H[:n_l])
    p_true = probs[np.arange(n_l), y_l - 1]
    ce = float(-np.mean(np.log(np.maximum(p_true, eps))))
    total = ag + lambda_ce * ce
    if not np.isfinite(total):
        raise FloatingPointError("non-finite loss")

    # backward through the Gini terms
    c = 1.0 / m
    d_gini = c * omega
    d_nbu = c * gini / n_u
    d_a = d_gini * (-2.0 * a + 2.0 * one_a * sq)
    d_q = d_gini[..., None] * (-2.0 * (one_a * one_a)[..., None] * q)
    d_r = np.where(1.0 - r > 0.0, -d_a, 0.0)
    d_nbl = d_r * c_ratio / den_u
    d_nbu = d_nbu + np.where(nbu > eps, -d_r * r / den_u, 0.0)
    d_mass = d_q / den_l[..., None]
    d_nbl = d_nbl + np.where(nbl > eps, -np.sum(d_q * q, axis=-1) / den_l, 0.0)

    d_mu_l = d_nbl[:, None, :] + np.einsum("mlk,nk->mnl", d_mass, onehot)
    d_mu_u = np.broadcast_to(d_nbu[:, None, :], mu_u.shape)
    d_mu = np.concatenate([d_mu_l, d_mu_u], axis=1)
    g = d_mu * mu
    d_s = (g @ left_mask) * (1.0 - f) - (g @ right_mask) * f

    grads = {
        "tree_W": np.einsum("mnt,nd->mtd", d_s, H),
        "tree_b": d_s.sum(axis=1),
    }
    d_H = np.einsum("mnt,mtd->nd", d_s, params["tree_W"])

    # cross-entropy head
    d_logits = (probs - onehot) * (lambda_ce / n_l)
    d_logits[p_true <= eps] = 0.0
    grads["head_W"] = d_logits.T @ H[:n_l]
    grads["head_b"] = d_logits.sum(axis=0)
    d_H[:n_l] += d_logits @ params["head_W"]

    # encoder
    for k in reversed(range(len(cache))):
        h_in, z, act = cache[k]
        d_z = d_H * _act_grad(z, act, activation)
        grads[f"enc_W{k}"] = d_z.T @ h_in
        grads[f"enc_b{k}"] = d_z.sum(axis=0)
        d_H = d_z @ params[f"enc_W{k}"]

    for key, val in grads.items():
        if not np.all(np.isfinite(val)):
            raise FloatingPointError(f"non-finite gradient for {key}")
    return LossParts(ag, ce, total), grads


# -- model ------------------------------------------------------------------------------


@dataclass
class NeuralForestModel:
    params: dict
    depth: int
    kappa: int
    theta: float
    activation: str
    leaf_theta: np.ndarray  # (m, leaves, kappa+1), frozen after training
    config: dict = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.params["tree_W"].shape[0]

    @property
    def d(self) -> int:
        return self.params["enc_W0"].shape[1]

    def leaf_probs(self, X):
        H = encode(self.params, X, self.activation)
        mu, _ = route_all(self.params["tree_W"], self.params["tree_b"], H)
        return mu

    def tree_scores(self, X):
        """Per-tree class probabilities, shape (m, n, kappa+1)."""
        return np.einsum("mnl,mlk->mnk", self.leaf_probs(X), self.leaf_theta)

    def predict_scores(self, X):
        return self.tree_scores(X).sum(axis=0)

    def predict(self, X):
        return np.argmax(self.predict_scores(X), axis=1) + 1

    def augmented_score(self, X):
        return self.predict_scores(X)[:, -1] / self.m

    def to_dict(self):
        return {
            "format": "neural-lacforest",
            "version": MODEL_VERSION,
            "kappa": self.kappa,
            "theta": self.theta,
            "depth": self.depth,
            "activation": self.activation,
            "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in sorted(self.params.items())},
            "leaf_theta": {"shape": list(self.leaf_theta.shape), "data": self.leaf_theta.ravel().tolist()},
            "config": self.config,
            "manifest": self.manifest,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != "neural-lacforest" or doc.get("version") != MODEL_VERSION:
            raise DataError("not a neural LACForest model document of a supported version")

        def arr(rec):
            return np.asarray(rec["data"], dtype=float).reshape(rec["shape"])

        return cls(
            params={k: arr(v) for k, v in doc["params"].items()},
            depth=doc["depth"],
            kappa=doc["kappa"],
            theta=doc["theta"],
            activation=doc["activation"],
            leaf_theta=arr(doc["leaf_theta"]),
            config=doc.get("config", {}),
            manifest=doc.get("manifest", {}),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def freeze_leaf_theta(params, X_l, y_l, X_u, kappa, theta, activation="identity", eps=EPS, chunk=4096):
    """Leaf class estimates from soft counts over the full labeled and unlabeled sets."""
    m, t = params["tree_b"].shape
    nbl = np.zeros((m, t + 1))
    nbu = np.zeros((m, t + 1))
    mass = np.zeros((m, t + 1, kappa))
    y_l = np.asarray(y_l, dtype=np.int64)
    for s in range(0, len(X_l), chunk):
        mu, _ = route_all(params["tree_W"], params["tree_b"], encode(params, X_l[s : s + chunk], activation))
        nbl += mu.sum(axis=1)
        onehot = np.zeros((mu.shape[1], kappa))
        onehot[np.arange(mu.shape[1]), y_l[s : s + chunk] - 1] = 1.0
        mass += np.einsum("mnl,nk->mlk", mu, onehot)
    for s in range(0, len(X_u), chunk):
        mu, _ = route_all(params["tree_W"], params["tree_b"], encode(params, X_u[s : s + chunk], activation))
        nbu += mu.sum(axis=1)
    return vartheta_soft(nbl, nbu, mass, len(X_l), len(X_u), theta, eps)


@dataclass
class EpochLog:
    epoch: int
    loss_ag: float
    loss_ce: float
    total: float
    lr: float


def train_neural(
    S_l,
    S_u,
    theta,
    cfg: TrainConfig = TrainConfig(),
    m=3,
    depth=6,
    encoder: EncoderConfig = EncoderConfig(),
    manifest=None,
    on_step=None,
):
    """Mini-batch SGD on the soft augmented Gini plus cross-entropy.

    Each epoch shuffles the labeled and unlabeled sets independently and
    pairs their mini-batches, cycling the shorter stream.  The update is
    ``p <- p - lr * (grad + weight_decay * p)``.  ``on_step(epoch, step,
    params, loss)`` is called after each update.  Returns ``(model, log)``.
    """
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    X_l, y_l, kappa = S_l.X, S_l.y, S_l.kappa
    X_u = S_u.X
    if X_u.shape[1] != X_l.shape[1]:
        raise DataError("labeled and unlabeled sets have different dimensions")
    params = init_params(X_l.shape[1], kappa, m, depth, encoder, cfg.seed)
    masks = path_masks(depth)
    rng = rng_for(cfg.seed, 4)
    log = []
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        perm_l = rng.permutation(len(X_l))
        perm_u = rng.permutation(len(X_u))
        bl = [perm_l[i : i + cfg.batch_l] for i in range(0, len(X_l), cfg.batch_l)]
        bu = [perm_u[i : i + cfg.batch_u] for i in range(0, len(X_u), cfg.batch_u)]
        sums = np.zeros(3)
        steps = max(len(bl), len(bu))
        for step in range(steps):
            il, iu = bl[step % len(bl)], bu[step % len(bu)]
            try:
                parts, grads = gradients(
                    params, X_l[il], y_l[il], X_u[iu], kappa, theta, cfg.lambda_ce,
                    encoder.activation, cfg.eps, masks,
                )
            except FloatingPointError as exc:
                raise FloatingPointError(f"epoch {epoch + 1}, batch {step + 1}: {exc}") from None
            for key, g in grads.items():
                params[key] -= lr * (g + cfg.weight_decay * params[key])
            sums += (parts.ag, parts.ce, parts.total)
            if on_step is not None:
                on_step(epoch, step, params, parts)
        ag, ce, tot = sums / steps
        log.append(EpochLog(epoch + 1, ag, ce, tot, lr))

    leaf_theta = freeze_leaf_theta(params, X_l, y_l, X_u, kappa, theta, encoder.activation, cfg.eps)
    config = {"train": asdict(cfg), "encoder": asdict(encoder), "m": m, "depth": depth}
    model = NeuralForestModel(params, depth, kappa, float(theta), encoder.activation, leaf_theta, config, manifest or {})
    return model, log


def write_epoch_log(path, log):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "L_ag", "L_ce", "total", "lr"])
        for e in log:
            w.writerow([e.epoch] + [repr(float(v)) for v in (e.loss_ag, e.loss_ce, e.total, e.lr)])
