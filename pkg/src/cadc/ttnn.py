"""Two-tower model over ``[id embedding; side features]`` with pluggable id-embedding strategies.

Strategies (``IntegrationStrategy.kind``):

``random``    id tables Xavier-initialised and trainable (no pretraining)
``hybrid``    first 64 columns copied from the pretrained tables and frozen, last 32 trainable
``init``      tables copied from the pretrained tables, trainable
``init-frz``  tables copied from the pretrained tables, frozen
``linear``    ``init-frz`` plus a trainable 96 -> 96 linear adapter on the id embedding
``mlp``       ``init-frz`` plus a trainable 96 -> 128 -> 96 ReLU adapter

Frozen and trainable column ranges are kept as separate arrays, so frozen
parameters are never handed to the optimizer.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .dataset import InteractionDataset, Interactions, sample_negatives
from .nncore import MLP, Adam, RowGrad, TrainingError, bce_with_logits, scatter_rows, sigmoid, xavier_uniform

logger = logging.getLogger(__name__)

STRATEGIES = ("random", "hybrid", "init", "init-frz", "linear", "mlp")


@dataclass
class IntegrationStrategy:
    kind: str = "random"
    user_table: np.ndarray | None = None
    item_table: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown integration strategy {self.kind!r}")
        if self.kind != "random" and (self.user_table is None or self.item_table is None):
            raise ValueError(f"strategy {self.kind!r} needs pretrained user and item tables")


@dataclass
class TtnnConfig:
    emb: int = 96
    tower_hidden: tuple = (128,)
    adapter_hidden: int = 128
    hybrid_frozen: int | None = None   # frozen prefix for hybrid; default 2/3 of emb (64 of 96)
    epochs: int = 100
    batch_size: int = 1024
    k_neg: int = 1
    lr: float = 1e-3
    seed: int = 0

    @property
    def frozen_prefix(self) -> int:
        k = self.hybrid_frozen if self.hybrid_frozen is not None else (2 * self.emb) // 3
        if not 0 < k < self.emb:
            raise ValueError(f"hybrid frozen prefix {k} must lie strictly between 0 and emb={self.emb}")
        return k


class _Side:
    """One tower: id embedding (frozen part, trainable part), optional adapter, MLP."""

    def __init__(self, frozen, free, adapter, tower, features):
        self.frozen = frozen
        self.free = free
        self.adapter = adapter
        self.tower = tower
        self.features = features

    @property
    def n_frozen(self) -> int:
        return 0 if self.frozen is None else self.frozen.shape[1]

    def id_table(self) -> np.ndarray:
        parts = [p for p in (self.frozen, self.free) if p is not None]
        return np.concatenate(parts, axis=1) if len(parts) > 1 else parts[0].copy()

    def ids(self, idx) -> np.ndarray:
        parts = [p[idx] for p in (self.frozen, self.free) if p is not None]
        return np.concatenate(parts, axis=1) if len(parts) > 1 else parts[0]

    def forward(self, idx):
        e = self.ids(idx)
        acache = None
        if self.adapter is not None:
            e, acache = self.adapter.forward(e)
        x = np.concatenate([e, self.features[idx].astype(e.dtype)], axis=1)
        z, tcache = self.tower.forward(x)
        return z, (acache, tcache, e.shape[1])

    def backward(self, idx, cache, dz, prefix: str) -> dict:
        acache, tcache, width = cache
        gx, tgrads = self.tower.backward(tcache, dz)
        grads = MLP.named_grads(f"{prefix}_tower", tgrads)
        ge = gx[:, :width]
        if self.adapter is not None:
            ge, agrads = self.adapter.backward(acache, ge)
            grads.update(MLP.named_grads(f"{prefix}_adapter", agrads))
        if self.free is not None:
            grads[f"{prefix}_ids"] = RowGrad(*scatter_rows(idx, ge[:, self.n_frozen:]))
        return grads

    def parameters(self, prefix: str) -> dict:
        params = {}
        if self.free is not None:
            params[f"{prefix}_ids"] = self.free
        if self.adapter is not None:
            params.update(self.adapter.named_parameters(f"{prefix}_adapter"))
        params.update(self.tower.named_parameters(f"{prefix}_tower"))
        return params

    def astype(self, dtype) -> "_Side":
        cast = lambda a: None if a is None else a.astype(dtype)
        return _Side(cast(self.frozen), cast(self.free),
                     None if self.adapter is None else self.adapter.astype(dtype),
                     self.tower.astype(dtype), self.features)


class TtnnModel:
    """Score = sigmoid(T_user([id_u; feat_u]) . T_item([id_i; feat_i]))."""

    def __init__(self, user: _Side, item: _Side, strategy: str):
        self.user = user
        self.item = item
        self.strategy = strategy
        self.train_seconds = 0.0
        self.loss_history: list[float] = []

    @property
    def user_id_table(self) -> np.ndarray:
        return self.user.id_table()

    @property
    def item_id_table(self) -> np.ndarray:
        return self.item.id_table()

    @property
    def frozen_columns(self) -> int:
        return self.user.n_frozen

    @property
    def n_users(self) -> int:
        return len(self.user.features)

    @property
    def n_items(self) -> int:
        return len(self.item.features)

    def astype(self, dtype) -> "TtnnModel":
        return TtnnModel(self.user.astype(dtype), self.item.astype(dtype), self.strategy)

    def parameters(self) -> dict[str, np.ndarray]:
        """Trainable parameters only."""
        return {**self.user.parameters("user"), **self.item.parameters("item")}

    def frozen_parameters(self) -> dict[str, np.ndarray]:
        out = {}
        if self.user.frozen is not None:
            out["user_ids_frozen"] = self.user.frozen
        if self.item.frozen is not None:
            out["item_ids_frozen"] = self.item.frozen
        return out

    def _check(self, users, items):
        users, items = np.asarray(users), np.asarray(items)
        if users.size and (users.min() < 0 or users.max() >= self.n_users):
            raise IndexError("user index out of range")
        if items.size and (items.min() < 0 or items.max() >= self.n_items):
            raise IndexError("item index out of range")

    def logits(self, users, items) -> np.ndarray:
        users, items = np.atleast_1d(users), np.atleast_1d(items)
        self._check(users, items)
        zu, _ = self.user.forward(users)
        zi, _ = self.item.forward(items)
        return np.einsum("ij,ij->i", zu.astype(np.float64), zi)

    def item_vectors(self) -> np.ndarray:
        return self.item.forward(np.arange(self.n_items))[0].astype(np.float64)

    def score_matrix(self, users, item_vectors=None) -> np.ndarray:
        """Uncorrected logits of ``users`` against the whole catalog."""
        if item_vectors is None:
            item_vectors = self.item_vectors()
        zu = self.user.forward(np.asarray(users))[0].astype(np.float64)
        return zu @ item_vectors.T

    def loss_and_grads(self, users, items, labels, logq=None, reduction: str = "mean"):
        """BCE of the (optionally LogQ-corrected) logits and gradients of every trainable tensor."""
        zu, ucache = self.user.forward(users)
        zi, icache = self.item.forward(items)
        logit = np.einsum("ij,ij->i", zu.astype(np.float64), zi)
        if logq is not None:
            logit = logit - np.log(logq[items])
        loss, dlogit = bce_with_logits(logit, labels)
        if reduction == "mean":
            loss, dlogit = loss.mean(), dlogit / len(users)
        else:
            loss = loss.sum()
        dlogit = dlogit[:, None].astype(zu.dtype)
        grads = self.user.backward(users, ucache, dlogit * zi, "user")
        grads.update(self.item.backward(items, icache, dlogit * zu, "item"))
        return float(loss), grads


def ttnn_score(model: TtnnModel, u, i):
    p = sigmoid(model.logits(u, i))
    return float(p[0]) if np.ndim(u) == 0 and np.ndim(i) == 0 else p


def logq_correct(logit, q):
    """Subtract the log sampling probability from a logit."""
    q = np.asarray(q, dtype=np.float64)
    if np.any(q <= 0):
        raise ValueError("sampling probability must be positive")
    out = np.asarray(logit, dtype=np.float64) - np.log(q)
    return float(out) if out.ndim == 0 else out


def _id_tables(n: int, strategy: IntegrationStrategy, pretrained, config: TtnnConfig, rng):
    """Return (frozen, free) arrays for one side."""
    emb = config.emb
    if pretrained is not None:
        pretrained = np.asarray(pretrained, dtype=np.float32)
        if pretrained.shape != (n, emb):
            raise ValueError(f"pretrained table shape {pretrained.shape} != {(n, emb)}")
    kind = strategy.kind
    if kind == "random":
        return None, xavier_uniform(rng, n, emb)
    if kind == "hybrid":
        k = config.frozen_prefix
        return pretrained[:, :k].copy(), xavier_uniform(rng, n, emb - k)
    if kind == "init":
        return None, pretrained.copy()
    return pretrained.copy(), None


def build_ttnn(dataset: InteractionDataset, strategy: IntegrationStrategy,
               config: TtnnConfig | None = None) -> TtnnModel:
    config = config or TtnnConfig()
    rng = np.random.default_rng(config.seed)
    sides = []
    for n, pretrained, feats in (
        (dataset.n_users, strategy.user_table, dataset.user_features),
        (dataset.n_items, strategy.item_table, dataset.item_features),
    ):
        frozen, free = _id_tables(n, strategy, pretrained, config, rng)
        adapter = None
        if strategy.kind == "linear":
            adapter = MLP.init([config.emb, config.emb], rng)
        elif strategy.kind == "mlp":
            adapter = MLP.init([config.emb, config.adapter_hidden, config.emb], rng)
        tower = MLP.init([config.emb + feats.shape[1], *config.tower_hidden, config.emb], rng)
        sides.append(_Side(frozen, free, adapter, tower, np.asarray(feats, dtype=np.float32)))
    return TtnnModel(sides[0], sides[1], strategy.kind)


def train_ttnn(model: TtnnModel, d_sel: Interactions, dataset: InteractionDataset,
               config: TtnnConfig | None = None, logq=None):
    """Train on ``d_sel`` plus per-epoch uniform negatives; returns ``(model, seconds)``.

    ``logq`` is an optional per-item sampling-probability vector. When given,
    training logits are corrected by ``-log(q_item)``; scoring is unaffected.
    """
    config = config or TtnnConfig()
    if not len(d_sel):
        raise TrainingError("empty training subset")
    optim = Adam(lr=config.lr)
    params = model.parameters()
    start = time.perf_counter()
    for epoch in range(config.epochs):
        negs = sample_negatives(d_sel, dataset, config.k_neg,
                                seed=np.random.SeedSequence([config.seed, epoch, 0]))
        users = np.concatenate([d_sel.user, negs.user])
        items = np.concatenate([d_sel.item, negs.item])
        labels = np.concatenate([np.ones(len(d_sel)), np.zeros(len(negs))])
        order = np.random.default_rng([config.seed, epoch, 1]).permutation(len(users))
        users, items, labels = users[order], items[order], labels[order]
        total = 0.0
        for s in range(0, len(users), config.batch_size):
            sl = slice(s, s + config.batch_size)
            loss, grads = model.loss_and_grads(users[sl], items[sl], labels[sl], logq)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite TTNN loss at epoch {epoch}")
            optim.step(params, grads)
            total += loss * len(labels[sl])
        model.loss_history.append(total / len(users))
        logger.debug("ttnn epoch %d loss %.5f", epoch, model.loss_history[-1])
    seconds = time.perf_counter() - start
    model.train_seconds = seconds
    logger.info("ttnn (%s) trained %d epochs on %d rows in %.1fs",
                model.strategy, config.epochs, len(d_sel), seconds)
    return model, seconds
