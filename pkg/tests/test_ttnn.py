import math

import numpy as np
import pytest

from cadc.dataset import InteractionDataset
from cadc.nncore import MLP, LinearLayer, TrainingError
from cadc.ttnn import (STRATEGIES, IntegrationStrategy, TtnnConfig, TtnnModel, _Side, build_ttnn,
                       logq_correct, train_ttnn, ttnn_score)
from cadc.synthetic import latent_factor_log

from conftest import numeric_grad, rel_error


def pretrained_for(ds, width=96, seed=0):
    rng = np.random.default_rng(seed)
    return (rng.normal(size=(ds.n_users, width)).astype(np.float32),
            rng.normal(size=(ds.n_items, width)).astype(np.float32))


def strategy(kind, ds, width=96, seed=0):
    if kind == "random":
        return IntegrationStrategy("random")
    return IntegrationStrategy(kind, *pretrained_for(ds, width, seed))


def identity_model(user_ids, item_ids):
    """Towers are exact identity maps over id embeddings (no features)."""
    d = user_ids.shape[1]
    eye = lambda: MLP([LinearLayer(np.eye(d), np.zeros(d))])
    no_feats = lambda n: np.zeros((n, 0), np.float32)
    user = _Side(user_ids, None, None, eye(), no_feats(len(user_ids)))
    item = _Side(item_ids, None, None, eye(), no_feats(len(item_ids)))
    return TtnnModel(user, item, "init-frz")


def test_identity_tower_scores():
    zeros = np.zeros((1, 3))
    assert ttnn_score(identity_model(zeros, zeros), 0, 0) == 0.5
    u = np.array([[1.0, 0.0, 0.0]])
    assert ttnn_score(identity_model(u, u), 0, 0) == pytest.approx(1 / (1 + math.exp(-1)))


def test_score_in_open_interval(small_dataset):
    m = build_ttnn(small_dataset, strategy("random", small_dataset), TtnnConfig(seed=1))
    users = np.repeat(np.arange(small_dataset.n_users), small_dataset.n_items)
    items = np.tile(np.arange(small_dataset.n_items), small_dataset.n_users)
    s = ttnn_score(m, users, items)
    assert np.all((s > 0) & (s < 1))
    with pytest.raises(IndexError):
        ttnn_score(m, small_dataset.n_users, 0)


def test_tower_swap_symmetry():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(1, 4))
    b = rng.normal(size=(1, 4))
    assert ttnn_score(identity_model(a, b), 0, 0) == ttnn_score(identity_model(b, a), 0, 0)


@pytest.mark.parametrize("kind", STRATEGIES)
def test_build_shapes(small_dataset, kind):
    m = build_ttnn(small_dataset, strategy(kind, small_dataset), TtnnConfig())
    assert m.user_id_table.shape == (small_dataset.n_users, 96)
    assert m.item_id_table.shape == (small_dataset.n_items, 96)
    assert m.user.tower.widths[-1] == m.item.tower.widths[-1] == 96
    assert m.user.tower.widths[0] == 96 + small_dataset.user_features.shape[1]
    assert m.frozen_columns == {"random": 0, "init": 0, "hybrid": 64}.get(kind, 96)


def test_build_init_frz_copies_pretrained(small_dataset):
    st = strategy("init-frz", small_dataset)
    m = build_ttnn(small_dataset, st, TtnnConfig())
    assert m.user_id_table.tobytes() == st.user_table.tobytes()
    assert m.item_id_table.tobytes() == st.item_table.tobytes()
    assert "user_ids" not in m.parameters() and "item_ids" not in m.parameters()


def test_build_hybrid_prefix(small_dataset):
    st = strategy("hybrid", small_dataset)
    m = build_ttnn(small_dataset, st, TtnnConfig())
    assert np.array_equal(m.user_id_table[:, :64], st.user_table[:, :64])
    assert m.parameters()["user_ids"].shape == (small_dataset.n_users, 32)


def test_build_adapters(small_dataset):
    lin = build_ttnn(small_dataset, strategy("linear", small_dataset), TtnnConfig())
    mlp = build_ttnn(small_dataset, strategy("mlp", small_dataset), TtnnConfig())
    assert lin.user.adapter.widths == [96, 96]
    assert mlp.item.adapter.widths == [96, 128, 96]


def test_build_errors(small_dataset):
    with pytest.raises(ValueError):
        IntegrationStrategy("init-frz")
    with pytest.raises(ValueError):
        IntegrationStrategy("nonsense")
    bad = IntegrationStrategy("init", np.zeros((3, 96)), np.zeros((3, 96)))
    with pytest.raises(ValueError):
        build_ttnn(small_dataset, bad, TtnnConfig())


def test_build_deterministic(small_dataset):
    a = build_ttnn(small_dataset, strategy("random", small_dataset), TtnnConfig(seed=4))
    b = build_ttnn(small_dataset, strategy("random", small_dataset), TtnnConfig(seed=4))
    for name, p in a.parameters().items():
        assert p.tobytes() == b.parameters()[name].tobytes()


def test_init_and_init_frz_agree_before_training(small_dataset):
    cfg = TtnnConfig(seed=2)
    tables = pretrained_for(small_dataset)
    a = build_ttnn(small_dataset, IntegrationStrategy("init", *tables), cfg)
    b = build_ttnn(small_dataset, IntegrationStrategy("init-frz", *tables), cfg)
    users = np.arange(small_dataset.n_users)
    np.testing.assert_array_equal(a.score_matrix(users), b.score_matrix(users))


# -- gradients ----------------------------------------------------------------------

def tiny_dataset(n_feat=2):
    rng = np.random.default_rng(0)
    return InteractionDataset.from_arrays([0, 1], [1, 0], n_users=2, n_items=2,
                                          user_features=rng.normal(size=(2, n_feat)),
                                          item_features=rng.normal(size=(2, n_feat)))


def check_gradients(model, users, items, labels, logq=None):
    _, grads = model.loss_and_grads(users, items, labels, logq=logq, reduction="sum")
    loss = lambda: model.loss_and_grads(users, items, labels, logq=logq, reduction="sum")[0]
    params = model.parameters()
    assert set(grads) == set(params)
    for name, p in params.items():
        g = grads[name]
        g = g.dense(len(p)) if hasattr(g, "dense") else g
        err = rel_error(g, numeric_grad(loss, p))
        assert err < 1e-3, (name, err)


@pytest.mark.parametrize("kind", STRATEGIES)
def test_end_to_end_gradients(kind):
    ds = tiny_dataset()
    cfg = TtnnConfig(emb=6, tower_hidden=(4,), adapter_hidden=5, hybrid_frozen=4)
    rng = np.random.default_rng(10)
    for trial in range(5):
        st = strategy(kind, ds, width=6, seed=trial)
        model = build_ttnn(ds, st, TtnnConfig(**{**cfg.__dict__, "seed": trial})).astype(np.float64)
        users, items = rng.integers(0, 2, 4), rng.integers(0, 2, 4)
        labels = rng.integers(0, 2, 4).astype(float)
        check_gradients(model, users, items, labels)
        check_gradients(model, users, items, labels, logq=np.array([0.3, 0.7]))


# -- training -----------------------------------------------------------------------

def test_train_freeze_contract(small_dataset, small_split):
    cfg = TtnnConfig(epochs=3, seed=0, batch_size=64)
    for kind in ("init-frz", "hybrid", "linear", "mlp"):
        m = build_ttnn(small_dataset, strategy(kind, small_dataset), cfg)
        frozen = {k: v.tobytes() for k, v in m.frozen_parameters().items()}
        trainable = {k: v.copy() for k, v in m.parameters().items()}
        train_ttnn(m, small_split.train, small_dataset, cfg)
        assert {k: v.tobytes() for k, v in m.frozen_parameters().items()} == frozen
        assert any(not np.array_equal(trainable[k], v) for k, v in m.parameters().items())


def test_train_toy_separates():
    ds = InteractionDataset.from_arrays([0], [0], n_users=1, n_items=2)
    cfg = TtnnConfig(emb=8, tower_hidden=(8,), epochs=100, lr=0.01, seed=0)
    m, seconds = train_ttnn(build_ttnn(ds, IntegrationStrategy("random"), cfg), ds.interactions, ds, cfg)
    assert ttnn_score(m, 0, 0) > ttnn_score(m, 0, 1)
    assert seconds > 0 and m.train_seconds == seconds


def test_train_deterministic(small_dataset, small_split):
    cfg = TtnnConfig(epochs=2, seed=5, batch_size=128)
    runs = []
    for _ in range(2):
        m = build_ttnn(small_dataset, strategy("hybrid", small_dataset), cfg)
        train_ttnn(m, small_split.train, small_dataset, cfg)
        runs.append({k: v.tobytes() for k, v in m.parameters().items()})
    assert runs[0] == runs[1]


def test_train_empty(small_dataset):
    from cadc.dataset import Interactions
    m = build_ttnn(small_dataset, IntegrationStrategy("random"), TtnnConfig(epochs=1))
    with pytest.raises(TrainingError):
        train_ttnn(m, Interactions.empty(), small_dataset, TtnnConfig(epochs=1))


def test_logq_uniform_is_constant_shift(small_dataset):
    m = build_ttnn(small_dataset, IntegrationStrategy("random"), TtnnConfig(seed=0))
    n = small_dataset.n_items
    q = np.full(n, 1.0 / n)
    logits = m.score_matrix(np.arange(5))
    corrected = logq_correct(logits, q)
    np.testing.assert_allclose(corrected - logits, -math.log(1.0 / n))
    assert np.array_equal(np.argmax(corrected, axis=1), np.argmax(logits, axis=1))


def test_logq_correct_values():
    assert logq_correct(2.5, 1.0) == 2.5
    assert logq_correct(0.0, math.exp(-1)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        logq_correct(0.0, 0.0)


def test_logq_only_affects_training(small_dataset, small_split):
    from cadc.dataset import item_frequency
    cfg = TtnnConfig(epochs=2, seed=1, batch_size=128)
    q = item_frequency(small_split.train, small_dataset.n_items)
    plain = build_ttnn(small_dataset, IntegrationStrategy("random"), cfg)
    corr = build_ttnn(small_dataset, IntegrationStrategy("random"), cfg)
    users = np.arange(3)
    # same weights -> identical evaluation scores regardless of the training-time q
    np.testing.assert_array_equal(plain.score_matrix(users), corr.score_matrix(users))
    train_ttnn(plain, small_split.train, small_dataset, cfg)
    train_ttnn(corr, small_split.train, small_dataset, cfg, logq=q)
    assert not np.array_equal(plain.score_matrix(users), corr.score_matrix(users))
