"""Matrix-factorization pretraining of user and item embeddings.

Each embedding row carries its bias in the last column, so a width-96 table
holds 95 latent factors plus one bias. Training uses binary cross-entropy
against freshly sampled negatives and alternates between the user and item
tables epoch by epoch.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .dataset import InteractionDataset, Interactions, NegativeSet, sample_negatives
from .nncore import MLP, Adam, RowGrad, TrainingError, bce_with_logits, scatter_rows, sigmoid

logger = logging.getLogger(__name__)


@dataclass
class MfConfig:
    dim: int = 96
    epochs: int = 100
    batch_size: int = 1024
    k_neg: int = 1
    lr: float = 1e-3
    seed: int = 0
    init_std: float = 0.01
    mlp_hidden: tuple = (128, 64)


@dataclass
class MfModel:
    user_table: np.ndarray
    item_table: np.ndarray
    global_bias: np.ndarray = field(default_factory=lambda: np.zeros(1, dtype=np.float32))
    loss_history: list = field(default_factory=list)

    def __post_init__(self):
        if self.user_table.shape[1] != self.item_table.shape[1]:
            raise ValueError("user and item tables must have the same width")
        if self.dim < 2:
            raise ValueError("embedding width must be >= 2 (latent factors plus bias slot)")
        self.global_bias = np.asarray(self.global_bias, dtype=self.user_table.dtype).reshape(1)

    @classmethod
    def init(cls, n_users: int, n_items: int, dim: int = 96, seed: int = 0, std: float = 0.01):
        rng = np.random.default_rng(seed)
        user = rng.normal(0.0, std, size=(n_users, dim)).astype(np.float32)
        item = rng.normal(0.0, std, size=(n_items, dim)).astype(np.float32)
        user[:, -1] = 0.0
        item[:, -1] = 0.0
        return cls(user, item)

    @property
    def dim(self) -> int:
        return self.user_table.shape[1]

    def astype(self, dtype) -> "MfModel":
        return MfModel(self.user_table.astype(dtype), self.item_table.astype(dtype),
                       self.global_bias.astype(dtype))

    def parameters(self) -> dict[str, np.ndarray]:
        return {"user_table": self.user_table, "item_table": self.item_table,
                "global_bias": self.global_bias}

    def logits(self, users, items) -> np.ndarray:
        u = self.user_table[users]
        v = self.item_table[items]
        dot = np.einsum("ij,ij->i", u[:, :-1].astype(np.float64), v[:, :-1])
        return dot + u[:, -1] + v[:, -1] + float(self.global_bias[0])

    def score_matrix(self, users) -> np.ndarray:
        """Logits of the given users against every item."""
        u = self.user_table[users].astype(np.float64)
        v = self.item_table.astype(np.float64)
        return u[:, :-1] @ v[:, :-1].T + u[:, -1:] + v[:, -1] + float(self.global_bias[0])


def _check_index(index, n, what):
    index = np.asarray(index)
    if index.size and (index.min() < 0 or index.max() >= n):
        raise IndexError(f"{what} index out of range")


def mf_predict(model: MfModel, u, i):
    """Interaction probability; scalars in, scalar out."""
    _check_index(u, len(model.user_table), "user")
    _check_index(i, len(model.item_table), "item")
    p = sigmoid(model.logits(np.atleast_1d(u), np.atleast_1d(i)))
    return float(p[0]) if np.ndim(u) == 0 and np.ndim(i) == 0 else p


def _pairs_with_labels(positives, negatives: NegativeSet | None):
    if isinstance(positives, Interactions):
        pu, pi = positives.user, positives.item
    else:
        pu, pi = (np.asarray(c, dtype=np.int64) for c in zip(*positives)) if len(positives) else ([], [])
        pu, pi = np.asarray(pu, dtype=np.int64), np.asarray(pi, dtype=np.int64)
    nu = negatives.user if negatives is not None else np.zeros(0, np.int64)
    ni = negatives.item if negatives is not None else np.zeros(0, np.int64)
    users = np.concatenate([pu, nu])
    items = np.concatenate([pi, ni])
    labels = np.concatenate([np.ones(len(pu)), np.zeros(len(nu))])
    return users, items, labels


def mf_loss(model: MfModel, positives, negatives: NegativeSet | None = None) -> float:
    """Summed BCE over positives (label 1) and negatives (label 0)."""
    users, items, labels = _pairs_with_labels(positives, negatives)
    if not len(users):
        raise ValueError("mf_loss needs at least one pair")
    loss, _ = bce_with_logits(model.logits(users, items), labels)
    return float(loss.sum())


def mf_loss_and_grads(model: MfModel, users, items, labels, reduction: str = "sum",
                      tables=("user_table", "item_table")):
    """BCE loss and its gradients (row-sparse for the tables, dense for the global bias)."""
    loss, dlogit = bce_with_logits(model.logits(users, items), labels)
    if reduction == "mean":
        scale = 1.0 / len(users)
        loss, dlogit = loss.sum() * scale, dlogit * scale
    else:
        loss = loss.sum()
    dtype = model.user_table.dtype
    grads = {"global_bias": np.array([dlogit.sum()], dtype=dtype)}
    for name, idx, other_tab, other_idx in (
        ("user_table", users, model.item_table, items),
        ("item_table", items, model.user_table, users),
    ):
        if name not in tables:
            continue
        other = other_tab[other_idx]
        g = np.empty((len(idx), model.dim), dtype=dtype)
        g[:, :-1] = dlogit[:, None] * other[:, :-1]
        g[:, -1] = dlogit
        rows, summed = scatter_rows(idx, g)
        grads[name] = RowGrad(rows, summed)
    return float(loss), grads


def _epoch_batches(positives: Interactions, dataset: InteractionDataset, config, epoch: int):
    negs = sample_negatives(positives, dataset, config.k_neg,
                            seed=np.random.SeedSequence([config.seed, epoch, 0]))
    users, items, labels = _pairs_with_labels(positives, negs)
    order = np.random.default_rng([config.seed, epoch, 1]).permutation(len(users))
    users, items, labels = users[order], items[order], labels[order]
    for start in range(0, len(users), config.batch_size):
        sl = slice(start, start + config.batch_size)
        yield users[sl], items[sl], labels[sl]


def train_mf(train: Interactions, dataset: InteractionDataset, config: MfConfig | None = None,
             model: MfModel | None = None) -> MfModel:
    """Fit an :class:`MfModel` with epoch-level alternation.

    Even epochs update the user table, odd epochs the item table; the global
    bias is updated every epoch. Mini-batches minimise the mean BCE.
    """
    config = config or MfConfig()
    if not len(train):
        raise TrainingError("no training interactions")
    if model is None:
        model = MfModel.init(dataset.n_users, dataset.n_items, config.dim, config.seed, config.init_std)
    optim = Adam(lr=config.lr)
    params = model.parameters()
    start = time.perf_counter()
    for epoch in range(config.epochs):
        table = "user_table" if epoch % 2 == 0 else "item_table"
        total, count = 0.0, 0
        for users, items, labels in _epoch_batches(train, dataset, config, epoch):
            loss, grads = mf_loss_and_grads(model, users, items, labels, "mean", tables=(table,))
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite MF loss at epoch {epoch}")
            optim.step(params, grads)
            total += loss * len(users)
            count += len(users)
        model.loss_history.append(total / count)
        logger.debug("mf epoch %d (%s) loss %.5f", epoch, table, total / count)
    logger.info("mf trained %d epochs in %.1fs, final loss %.4f",
                config.epochs, time.perf_counter() - start, model.loss_history[-1] if model.loss_history else float("nan"))
    return model


# ---------------------------------------------------------------------------
# MLP interaction variant

@dataclass
class MfMlpModel:
    user_table: np.ndarray
    item_table: np.ndarray
    interaction_mlp: MLP
    loss_history: list = field(default_factory=list)

    def __post_init__(self):
        if self.interaction_mlp.widths[0] != 2 * self.dim:
            raise ValueError("interaction MLP input must be twice the embedding width")
        if self.interaction_mlp.widths[-1] != 1:
            raise ValueError("interaction MLP must end in a scalar logit")

    @classmethod
    def init(cls, n_users: int, n_items: int, dim: int = 96, hidden=(128, 64), seed: int = 0,
             std: float = 0.01):
        rng = np.random.default_rng(seed)
        user = rng.normal(0.0, std, size=(n_users, dim)).astype(np.float32)
        item = rng.normal(0.0, std, size=(n_items, dim)).astype(np.float32)
        return cls(user, item, MLP.init([2 * dim, *hidden, 1], rng))

    @property
    def dim(self) -> int:
        return self.user_table.shape[1]

    def astype(self, dtype) -> "MfMlpModel":
        return MfMlpModel(self.user_table.astype(dtype), self.item_table.astype(dtype),
                          self.interaction_mlp.astype(dtype))

    def parameters(self) -> dict[str, np.ndarray]:
        return {"user_table": self.user_table, "item_table": self.item_table,
                **self.interaction_mlp.named_parameters("mlp")}

    def logits(self, users, items) -> np.ndarray:
        x = np.concatenate([self.user_table[users], self.item_table[items]], axis=1)
        return self.interaction_mlp(x)[:, 0].astype(np.float64)

    def score_matrix(self, users) -> np.ndarray:
        n_items = len(self.item_table)
        out = np.empty((len(users), n_items))
        for k, u in enumerate(users):
            out[k] = self.logits(np.full(n_items, u), np.arange(n_items))
        return out

    def loss_and_grads(self, users, items, labels, reduction: str = "sum"):
        x = np.concatenate([self.user_table[users], self.item_table[items]], axis=1)
        out, cache = self.interaction_mlp.forward(x)
        loss, dlogit = bce_with_logits(out[:, 0], labels)
        if reduction == "mean":
            scale = 1.0 / len(users)
            loss, dlogit = loss.sum() * scale, dlogit * scale
        else:
            loss = loss.sum()
        gx, layer_grads = self.interaction_mlp.backward(cache, dlogit[:, None].astype(x.dtype))
        d = self.dim
        grads = MLP.named_grads("mlp", layer_grads)
        grads["user_table"] = RowGrad(*scatter_rows(users, gx[:, :d]))
        grads["item_table"] = RowGrad(*scatter_rows(items, gx[:, d:]))
        return float(loss), grads


def train_mf_mlp(train: Interactions, dataset: InteractionDataset,
                 config: MfConfig | None = None) -> MfMlpModel:
    """Fit the MLP-interaction variant; every parameter updates every epoch."""
    config = config or MfConfig()
    if not len(train):
        raise TrainingError("no training interactions")
    model = MfMlpModel.init(dataset.n_users, dataset.n_items, config.dim, config.mlp_hidden,
                            config.seed, config.init_std)
    optim = Adam(lr=config.lr)
    params = model.parameters()
    for epoch in range(config.epochs):
        total, count = 0.0, 0
        for users, items, labels in _epoch_batches(train, dataset, config, epoch):
            loss, grads = model.loss_and_grads(users, items, labels, "mean")
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite MF-MLP loss at epoch {epoch}")
            optim.step(params, grads)
            total += loss * len(users)
            count += len(users)
        model.loss_history.append(total / count)
    return model


def export_embeddings(model: MfModel | MfMlpModel) -> tuple[np.ndarray, np.ndarray]:
    """Copies of the full user and item tables (bias column included for MF)."""
    return model.user_table.copy(), model.item_table.copy()
