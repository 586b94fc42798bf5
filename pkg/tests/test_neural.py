import math

import numpy as np
import pytest

from lacforest.dataset import DataError, benchmark_split
from lacforest.neural import (
    EncoderConfig,
    NeuralForestModel,
    TrainConfig,
    encode,
    gradients,
    head_probs,
    init_params,
    leaf_weights,
    loss_ag,
    loss_ce,
    n_internal,
    path_masks,
    route,
    route_all,
    soft_augmented_gini,
    soft_counts,
    total_loss,
    train_neural,
    vartheta_soft,
    write_epoch_log,
)
from lacforest.oracle import gradient_check, random_tiny_problem


# -- encoder -----------------------------------------------------------------------


def test_identity_encoder():
    X = np.random.default_rng(0).random((4, 3))
    params = {"enc_W0": np.eye(3), "enc_b0": np.zeros(3)}
    np.testing.assert_array_equal(encode(params, X), X)


def test_zero_weights_logistic():
    params = {"enc_W0": np.zeros((2, 3)), "enc_b0": np.zeros(2)}
    np.testing.assert_array_equal(encode(params, np.ones((5, 3)), "logistic"), 0.5)


def test_encoder_matches_matrix_arithmetic():
    rng = np.random.default_rng(1)
    p = init_params(4, 2, 1, 2, EncoderConfig(3, "rectifier", 5), seed=2)
    X = rng.random((6, 4))
    hidden = np.maximum(0.0, X @ p["enc_W0"].T + p["enc_b0"])
    want = np.maximum(0.0, hidden @ p["enc_W1"].T + p["enc_b1"])
    np.testing.assert_allclose(encode(p, X, "rectifier"), want, atol=1e-12)


def test_encoder_dimension_mismatch():
    p = init_params(3, 2, 1, 2)
    with pytest.raises(DataError):
        encode(p, np.zeros((2, 4)))


# -- routing -----------------------------------------------------------------------


def test_depth_two_symmetric():
    mu = route(np.zeros((1, 2)), np.zeros(1), np.ones((1, 2)))
    np.testing.assert_array_equal(mu, [[0.5, 0.5]])


def test_saturated_goes_leftmost():
    t = n_internal(3)
    mu = route(np.zeros((t, 1)), np.full(t, 60.0), np.zeros((1, 1)))
    assert mu[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert np.all(mu[0, 1:] < 1e-12)


def test_route_matches_path_products():
    rng = np.random.default_rng(5)
    depth = 4
    t = n_internal(depth)
    w, b = rng.normal(size=(t, 3)), rng.normal(size=t)
    h = rng.normal(size=(7, 3))
    f = 1 / (1 + np.exp(-(h @ w.T + b)))
    left, right = path_masks(depth)
    want = np.ones((7, t + 1))
    for j in range(t + 1):
        for i in range(t):
            if left[j, i]:
                want[:, j] *= f[:, i]
            elif right[j, i]:
                want[:, j] *= 1 - f[:, i]
    np.testing.assert_allclose(route(w, b, h), want, atol=1e-14)


def test_partition_of_unity_many_samples():
    rng = np.random.default_rng(6)
    depth = 4
    t = n_internal(depth)
    W = rng.normal(0, 3, size=(100, t, 5))
    B = rng.normal(0, 3, size=(100, t))
    H = rng.normal(size=(100, 5))
    mu, _ = route_all(W, B, H)  # 100 trees x 100 samples
    assert mu.shape == (100, 100, t + 1)
    assert np.max(np.abs(mu.sum(-1) - 1)) < 1e-9
    assert np.all(mu >= 0) and np.all(mu <= 1)


def test_leaf_count():
    assert n_internal(6) == 31
    left, right = path_masks(6)
    assert left.shape == (32, 31)
    np.testing.assert_array_equal(left.sum(1) + right.sum(1), 5)


# -- soft statistics -----------------------------------------------------------------


def test_soft_counts_single_sample():
    mu = np.array([[[0.3, 0.7]]])
    st = soft_counts(mu, np.array([1]), mu, 1, 0.5)
    np.testing.assert_allclose(st.n_leaf_l[0], [0.3, 0.7])
    np.testing.assert_allclose(st.n_leaf_u[0], [0.3, 0.7])


def test_soft_counts_double_loop():
    rng = np.random.default_rng(7)
    mu_l = rng.dirichlet(np.ones(4), size=(2, 9))
    mu_u = rng.dirichlet(np.ones(4), size=(2, 11))
    y = rng.integers(1, 4, 9)
    st = soft_counts(mu_l, y, mu_u, 3, 0.4)
    for m in range(2):
        for j in range(4):
            assert st.n_leaf_u[m, j] == pytest.approx(sum(mu_u[m, i, j] for i in range(11)), abs=1e-10)
            for k in range(3):
                want = sum(mu_l[m, i, j] for i in range(9) if y[i] == k + 1)
                assert st.class_mass[m, j, k] == pytest.approx(want, abs=1e-10)
    np.testing.assert_allclose(st.n_leaf_l.sum(1), 9, atol=1e-6)
    np.testing.assert_allclose(st.n_leaf_u.sum(1), 11, atol=1e-6)


def test_vartheta_soft_examples():
    v = vartheta_soft(20.0, 50.0, np.array([12.0, 8.0]), 100, 100, 0.5)
    assert v[-1] == pytest.approx(0.8, abs=1e-14)
    v = vartheta_soft(1e-12, 40.0, np.array([1e-12, 0.0]), 100, 100, 0.5)
    assert v[-1] == pytest.approx(1.0, abs=1e-12)
    assert v[0] == pytest.approx(0.0, abs=1e-12)
    v = vartheta_soft(60.0, 20.0, np.array([0.0, 60.0]), 100, 100, 0.5)
    np.testing.assert_allclose(v, [0, 1, 0], atol=1e-15)


def test_vartheta_soft_simplex():
    rng = np.random.default_rng(8)
    for _ in range(500):
        kappa = int(rng.integers(1, 5))
        mass = rng.random(kappa) * 10 + 1e-3
        v = vartheta_soft(mass.sum(), rng.random() * 20 + 1e-3, mass, 50, 60, rng.uniform(0.05, 0.95))
        assert np.all(v >= -1e-9) and np.all(v <= 1 + 1e-9)
        assert abs(v.sum() - 1) < 1e-9


def test_soft_gini_examples():
    assert soft_augmented_gini([0, 1, 0]) == 0
    assert soft_augmented_gini(np.full(3, 1 / 3)) == pytest.approx(2 / 3)
    assert soft_augmented_gini([0.1, 0.1, 0.8]) == pytest.approx(0.34, abs=1e-15)


def test_leaf_weights_sum_to_one():
    rng = np.random.default_rng(9)
    W, B = rng.normal(size=(3, 7, 2)), rng.normal(size=(3, 7))
    mu, _ = route_all(W, B, rng.normal(size=(50, 2)))
    np.testing.assert_allclose(leaf_weights(mu).sum(-1), 1.0, atol=1e-9)


def test_loss_ag_identical_leaves():
    # f = 0.5 everywhere: both leaves carry the same statistics
    mu_l = np.full((1, 4, 2), 0.5)
    mu_u = np.full((1, 6, 2), 0.5)
    y = np.array([1, 1, 2, 2])
    got = loss_ag(mu_l, y, mu_u, 2, 0.5)[0]
    v = vartheta_soft(2.0, 3.0, np.array([1.0, 1.0]), 4, 6, 0.5)
    assert got == pytest.approx(soft_augmented_gini(v), abs=1e-15)


def test_loss_ag_summed_recomputation():
    rng = np.random.default_rng(10)
    mu_l = rng.dirichlet(np.ones(4), size=(1, 8))
    mu_u = rng.dirichlet(np.ones(4), size=(1, 12))
    y = rng.integers(1, 3, 8)
    total = 0.0
    for j in range(4):
        nbl = mu_l[0, :, j].sum()
        nbu = mu_u[0, :, j].sum()
        mass = np.array([mu_l[0, y == k, j].sum() for k in (1, 2)])
        total += nbu / 12 * soft_augmented_gini(vartheta_soft(nbl, nbu, mass, 8, 12, 0.3))
    assert loss_ag(mu_l, y, mu_u, 2, 0.3)[0] == pytest.approx(total, abs=1e-10)


def test_loss_ag_one_hot_zero():
    # leaf 0 holds all labeled mass (class 1) and half the unlabeled mass, so
    # its augmented estimate is exactly 0; leaf 1 has no labeled mass
    mu_l = np.array([[[1.0, 0.0]]])
    mu_u = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    assert loss_ag(mu_l, np.array([1]), mu_u, 2, 0.5)[0] == pytest.approx(0.0, abs=1e-15)


def test_loss_ce_examples():
    probs = np.array([[0.8, 0.2], [0.6, 0.4]])
    assert loss_ce(probs, np.array([1, 2])) == pytest.approx(-(math.log(0.8) + math.log(0.4)) / 2, abs=1e-15)
    assert loss_ce(np.full((3, 4), 0.25), np.array([1, 2, 3])) == pytest.approx(math.log(4))
    assert loss_ce(np.array([[1.0 - 1e-15, 1e-15]]), np.array([1])) < 1e-12


def test_total_loss_lambda_zero_is_ag():
    params, (X_l, y_l, X_u, kappa, theta, _, act) = random_tiny_problem(np.random.default_rng(11))
    parts = total_loss(params, X_l, y_l, X_u, kappa, theta, 0.0, act)
    assert parts.total == parts.ag


# -- gradients -----------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(6))
def test_gradients_finite_differences(seed):
    params, args = random_tiny_problem(np.random.default_rng(100 + seed))
    _, grads = gradients(params, *args)
    errs = gradient_check(params, grads, *args)
    assert max(errs.values()) < 1e-4, errs


def test_gradients_scale_linearly():
    params, (X_l, y_l, X_u, kappa, theta, lam, act) = random_tiny_problem(np.random.default_rng(12))
    _, g1 = gradients(params, X_l, y_l, X_u, kappa, theta, lam, act)
    # with lambda scaled and the ag term absent, the loss is exactly lam * ce
    _, ga = gradients(params, X_l, y_l, X_u, kappa, theta, 0.0, act)
    _, g3 = gradients(params, X_l, y_l, X_u, kappa, theta, 3.0 * lam, act)
    for k in g1:
        np.testing.assert_allclose(g3[k] - ga[k], 3.0 * (g1[k] - ga[k]), atol=1e-10, rtol=1e-10)


def test_gradient_vanishes_at_constructed_minimum():
    # saturated depth-2 tree: the labeled row and one unlabeled row go left,
    # the other unlabeled row goes right, so both leaves are one-hot; the head
    # is saturated on the true class
    params = {
        "enc_W0": np.eye(1),
        "enc_b0": np.zeros(1),
        "tree_W": np.array([[[-200.0]]]),
        "tree_b": np.array([[100.0]]),
        "head_W": np.array([[-200.0], [200.0]]),
        "head_b": np.array([100.0, -100.0]),
    }
    X_u = np.array([[0.0], [1.0]])
    parts, grads = gradients(params, X_u[:1], np.array([1]), X_u, 2, 0.5, 1.0)
    assert parts.total < 1e-12
    assert max(np.abs(g).max() for g in grads.values()) < 1e-8


def test_gradients_reject_non_finite():
    params = init_params(2, 2, 1, 2)
    params["tree_W"][:] = np.nan
    with pytest.raises(FloatingPointError):
        gradients(params, np.zeros((2, 2)), np.array([1, 2]), np.zeros((2, 2)), 2, 0.5, 1.0)


# -- training, prediction, serialisation ---------------------------------------------


@pytest.fixture(scope="module")
def tiny_split():
    return benchmark_split(seed=1, n_l=120, n_u=200, n_test=100)


def test_default_config():
    cfg = TrainConfig()
    assert (cfg.epochs, cfg.batch_l, cfg.lambda_ce, cfg.lr_init, cfg.lr_final, cfg.weight_decay) == (
        500, 512, 1.0, 1e-2, 1e-3, 5e-3)
    assert cfg.lr_at(0) == pytest.approx(1e-2) and cfg.lr_at(499) == pytest.approx(1e-3)


def test_zero_epochs_is_initialisation(tiny_split):
    cfg = TrainConfig(epochs=0, seed=4)
    model, log = train_neural(tiny_split.S_l, tiny_split.S_u, 0.5, cfg, m=2, depth=3)
    assert log == []
    init = init_params(2, tiny_split.S_l.kappa, 2, 3, EncoderConfig(), seed=4)
    for k in init:
        np.testing.assert_array_equal(model.params[k], init[k])
    assert np.all(np.abs(model.leaf_theta.sum(-1) - 1) < 1e-9)


def test_fixed_seed_trajectory(tiny_split):
    def run():
        seen = []

        def hook(epoch, step, params, parts):
            if len(seen) < 3:
                seen.append({k: v.copy() for k, v in params.items()})

        cfg = TrainConfig(epochs=2, batch_l=32, batch_u=32, seed=5)
        train_neural(tiny_split.S_l, tiny_split.S_u, 0.5, cfg, m=2, depth=3, on_step=hook)
        return seen

    a, b = run(), run()
    assert len(a) == 3
    for pa, pb in zip(a, b):
        for k in pa:
            assert pa[k].tobytes() == pb[k].tobytes()


def test_sgd_update_rule(tiny_split):
    cfg = TrainConfig(epochs=1, batch_l=1000, batch_u=1000, lr_init=0.1, lr_final=0.1, seed=6)
    after = {}
    train_neural(tiny_split.S_l, tiny_split.S_u, 0.5, cfg, m=1, depth=2,
                 on_step=lambda e, s, p, parts: after.update({k: v.copy() for k, v in p.items()}))
    p0 = init_params(2, tiny_split.S_l.kappa, 1, 2, EncoderConfig(), seed=6)
    _, g = gradients(p0, tiny_split.S_l.X, tiny_split.S_l.y, tiny_split.S_u.X, tiny_split.S_l.kappa, 0.5, 1.0)
    for k in p0:
        np.testing.assert_allclose(after[k], p0[k] - 0.1 * (g[k] + 5e-3 * p0[k]), atol=1e-12)


def test_predictions_and_round_trip(tiny_split, tmp_path):
    cfg = TrainConfig(epochs=5, batch_l=64, batch_u=64, lr_init=1.0, lr_final=0.1, seed=0)
    model, log = train_neural(tiny_split.S_l, tiny_split.S_u, 0.5, cfg, m=2, depth=3)
    X = tiny_split.S_test.X
    ts = model.tree_scores(X)
    np.testing.assert_allclose(ts.sum(-1), 1.0, atol=1e-9)
    mu = model.leaf_probs(X)
    want = np.zeros((len(X), model.kappa + 1))
    for i in range(model.m):
        for j in range(mu.shape[2]):
            want += mu[i, :, j, None] * model.leaf_theta[i, j]
    np.testing.assert_allclose(model.predict_scores(X), want, atol=1e-12)
    back = NeuralForestModel.from_json(model.to_json())
    assert back.to_json() == model.to_json()
    np.testing.assert_array_equal(back.predict_scores(X), model.predict_scores(X))
    with pytest.raises(DataError):
        model.predict(np.zeros((1, 3)))
    write_epoch_log(tmp_path / "log.csv", log)
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,L_ag,L_ce,total,lr" and len(lines) == 6
    float(lines[1].split(",")[1])


def test_one_hot_leaves_predict_class(tiny_split):
    model, _ = train_neural(tiny_split.S_l, tiny_split.S_u, 0.5, TrainConfig(epochs=0), m=2, depth=3)
    model.leaf_theta[:] = 0.0
    model.leaf_theta[..., 2] = 1.0
    assert np.all(model.predict(tiny_split.S_test.X) == 3)


def test_head_probs_normalised():
    p = init_params(3, 4, 1, 2)
    probs = head_probs(p, np.random.default_rng(0).random((5, 3)))
    np.testing.assert_allclose(probs.sum(1), 1.0)
    assert np.all(probs > 0)
