import math

import numpy as np
import pytest

from cadc.dataset import InteractionDataset, NegativeSet
from cadc.mf import (MfConfig, MfMlpModel, MfModel, export_embeddings, mf_loss, mf_loss_and_grads,
                     mf_predict, train_mf, train_mf_mlp)

from conftest import numeric_grad, rel_error


def toy():
    """One user who consumed item 0 out of two."""
    return InteractionDataset.from_arrays([0], [0], n_users=1, n_items=2)


TOY_CONFIG = MfConfig(dim=8, epochs=50, lr=0.05, seed=0)


def test_predict_zero_tables():
    m = MfModel(np.zeros((2, 4), np.float32), np.zeros((3, 4), np.float32))
    assert mf_predict(m, 1, 2) == 0.5


def test_predict_basis_vectors():
    u = np.zeros((1, 4), np.float32)
    v = np.zeros((1, 4), np.float32)
    u[0, 0] = v[0, 0] = 1.0
    assert mf_predict(MfModel(u, v), 0, 0) == pytest.approx(1 / (1 + math.exp(-1)))


def test_predict_bias_columns_and_saturation():
    u = np.zeros((1, 3), np.float32)
    v = np.zeros((1, 3), np.float32)
    u[0, -1], v[0, -1] = 0.5, -1.5
    m = MfModel(u, v, np.array([0.25], np.float32))
    assert mf_predict(m, 0, 0) == pytest.approx(1 / (1 + math.exp(0.75)))
    m.global_bias[0] = 80.0
    assert mf_predict(m, 0, 0) == pytest.approx(1.0)
    with pytest.raises(IndexError):
        mf_predict(m, 1, 0)


def test_prediction_symmetry():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(1, 6)).astype(np.float32)
    b = rng.normal(size=(1, 6)).astype(np.float32)
    assert mf_predict(MfModel(a, b), 0, 0) == mf_predict(MfModel(b, a), 0, 0)


def test_loss_half_everywhere():
    m = MfModel(np.zeros((2, 3), np.float32), np.zeros((2, 3), np.float32))
    negs = NegativeSet(np.array([0, 1, 1]), np.array([1, 0, 1]), seed=0)
    assert mf_loss(m, [(0, 0), (1, 1)], negs) == pytest.approx(5 * math.log(2))


def test_loss_separated_model_hits_clamp_floor():
    u = np.zeros((1, 2), np.float32)
    v = np.zeros((2, 2), np.float32)
    v[0, -1], v[1, -1] = 100.0, -100.0
    negs = NegativeSet(np.array([0]), np.array([1]), seed=0)
    assert mf_loss(MfModel(u, v), [(0, 0)], negs) == pytest.approx(2 * 1e-7, rel=1e-3)


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    for trial in range(100):
        m = MfModel(rng.normal(size=(3, 4)), rng.normal(size=(3, 4)), rng.normal(size=1))
        users = rng.integers(0, 3, size=6)
        items = rng.integers(0, 3, size=6)
        labels = rng.integers(0, 2, size=6).astype(float)
        _, grads = mf_loss_and_grads(m, users, items, labels)
        loss = lambda: mf_loss_and_grads(m, users, items, labels)[0]
        assert rel_error(grads["user_table"].dense(3), numeric_grad(loss, m.user_table)) < 1e-3
        assert rel_error(grads["item_table"].dense(3), numeric_grad(loss, m.item_table)) < 1e-3
        assert rel_error(grads["global_bias"], numeric_grad(loss, m.global_bias)) < 1e-3


def test_single_pair_gradient_formula():
    rng = np.random.default_rng(2)
    m = MfModel(rng.normal(size=(1, 5)), rng.normal(size=(1, 5)))
    _, grads = mf_loss_and_grads(m, [0], [0], [1.0])
    y_hat = mf_predict(m, 0, 0)
    np.testing.assert_allclose(grads["user_table"].values[0, :-1], (y_hat - 1) * m.item_table[0, :-1])
    assert grads["user_table"].values[0, -1] == pytest.approx(y_hat - 1)


def test_train_toy_separates():
    ds = toy()
    m = train_mf(ds.interactions, ds, TOY_CONFIG)
    assert mf_predict(m, 0, 0) > 0.9 > mf_predict(m, 0, 1)
    hist = np.array(m.loss_history)
    assert np.count_nonzero(np.diff(hist) > 0) <= 5


def test_train_alternation_freezes_other_table():
    ds = toy()
    cfg = MfConfig(dim=6, epochs=1, lr=0.05, seed=3)
    m = MfModel.init(1, 2, 6, seed=3)
    items_before = m.item_table.tobytes()
    users_before = m.user_table.tobytes()
    train_mf(ds.interactions, ds, cfg, model=m)          # epoch 0 updates users
    assert m.item_table.tobytes() == items_before
    assert m.user_table.tobytes() != users_before

    m2 = train_mf(ds.interactions, ds, MfConfig(dim=6, epochs=2, lr=0.05, seed=3))
    m1 = train_mf(ds.interactions, ds, MfConfig(dim=6, epochs=1, lr=0.05, seed=3))
    # epoch 1 touches only the item table
    assert m2.user_table.tobytes() == m1.user_table.tobytes()
    assert m2.item_table.tobytes() != m1.item_table.tobytes()


def test_train_deterministic(small_dataset, small_split):
    cfg = MfConfig(dim=8, epochs=3, seed=11)
    a = train_mf(small_split.train, small_dataset, cfg)
    b = train_mf(small_split.train, small_dataset, cfg)
    assert a.user_table.tobytes() == b.user_table.tobytes()
    assert a.item_table.tobytes() == b.item_table.tobytes()
    assert a.global_bias.tobytes() == b.global_bias.tobytes()


def test_train_empty_input(small_dataset):
    from cadc.dataset import Interactions
    from cadc.nncore import TrainingError
    with pytest.raises(TrainingError):
        train_mf(Interactions.empty(), small_dataset, MfConfig(epochs=1))


def test_init_layout():
    m = MfModel.init(5, 7, dim=96, seed=0)
    assert m.user_table.shape == (5, 96) and m.item_table.shape == (7, 96)
    assert not m.user_table[:, -1].any() and m.global_bias[0] == 0
    with pytest.raises(ValueError):
        MfModel(np.zeros((2, 1)), np.zeros((2, 1)))


def test_export_is_a_copy():
    m = MfModel.init(3, 4, dim=96, seed=0)
    u, v = export_embeddings(m)
    assert u.shape[1] == v.shape[1] == 96
    assert u.tobytes() == m.user_table.tobytes()
    u[:] = 1.0
    assert not np.all(m.user_table == 1.0)


# -- MLP interaction variant ---------------------------------------------------------

def test_mf_mlp_gradients():
    rng = np.random.default_rng(4)
    for trial in range(20):
        # unit-scale init keeps ReLU pre-activations away from the kink at the probe step
        m = MfMlpModel.init(3, 3, dim=3, hidden=(4, 3), seed=trial, std=1.0).astype(np.float64)
        for layer in m.interaction_mlp.layers:
            layer.bias[:] = rng.normal(size=layer.bias.shape)
        users, items = rng.integers(0, 3, 5), rng.integers(0, 3, 5)
        labels = rng.integers(0, 2, 5).astype(float)
        _, grads = m.loss_and_grads(users, items, labels)
        loss = lambda: m.loss_and_grads(users, items, labels)[0]
        for name, p in m.parameters().items():
            g = grads[name]
            g = g.dense(len(p)) if hasattr(g, "dense") else g
            assert rel_error(g, numeric_grad(loss, p)) < 1e-3, (trial, name)


def test_mf_mlp_toy_shape_and_determinism():
    ds = toy()
    cfg = MfConfig(dim=96, epochs=50, lr=0.01, seed=0)
    m = train_mf_mlp(ds.interactions, ds, cfg)
    p = 1 / (1 + np.exp(-m.logits(np.array([0, 0]), np.array([0, 1]))))
    assert p[0] > 0.9 > p[1]
    u, v = export_embeddings(m)
    assert u.shape == (1, 96) and v.shape == (2, 96)
    m2 = train_mf_mlp(ds.interactions, ds, cfg)
    assert m2.user_table.tobytes() == m.user_table.tobytes()
