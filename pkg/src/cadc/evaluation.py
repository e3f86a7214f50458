"""Full-catalog leave-one-out ranking metrics (HR@k, NDCG@k).

Each test user's held-out item is ranked against every item the user has not
interacted with in train or validation. Ties go to the lower item index, so
ranks are deterministic without any random tie-breaking.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .dataset import SplitDataset

logger = logging.getLogger(__name__)


@dataclass
class MetricsReport:
    hr_at_10: float
    ndcg_at_10: float
    train_seconds: float = 0.0
    pretrain_seconds: float = 0.0
    method: str = ""
    dataset: str = ""
    ratio: float = 1.0
    seed: int = 0

    def as_dict(self) -> dict:
        return asdict(self)

    def __str__(self) -> str:
        label = f"{self.method} " if self.method else ""
        return f"{label}HR@10 {self.hr_at_10:.2f}  NDCG@10 {self.ndcg_at_10:.2f}"


def hr_at_k(ranks, k: int = 10) -> float:
    ranks = np.asarray(ranks)
    if not ranks.size:
        raise ValueError("no ranks to aggregate")
    if np.any(ranks < 1):
        raise ValueError("ranks are 1-based")
    return float(100.0 * np.count_nonzero(ranks <= k) / ranks.size)


def ndcg_at_k(ranks, k: int = 10) -> float:
    ranks = np.asarray(ranks)
    if not ranks.size:
        raise ValueError("no ranks to aggregate")
    if np.any(ranks < 1):
        raise ValueError("ranks are 1-based")
    gains = np.where(ranks <= k, 1.0 / np.log2(ranks + 1.0), 0.0)
    return float(100.0 * gains.mean())


def rank_of_target(scorer, user: int, target: int, n_items: int, exclusions=()) -> int:
    """1-based rank of ``target`` among the non-excluded items for ``user``.

    ``scorer(users, items)`` returns one score per pair.
    """
    exclusions = set(int(x) for x in exclusions)
    if target in exclusions:
        raise ValueError(f"target item {target} is in the exclusion set")
    items = np.arange(n_items)
    scores = np.asarray(scorer(np.full(n_items, user), items), dtype=np.float64)
    mask = np.zeros(n_items, dtype=bool)
    if exclusions:
        mask[list(exclusions)] = True
    return int(_ranks(scores[None, :], np.array([target]), mask[None, :])[0])


def _ranks(scores: np.ndarray, targets: np.ndarray, excluded: np.ndarray) -> np.ndarray:
    rows = np.arange(len(targets))
    t = scores[rows, targets][:, None]
    idx = np.arange(scores.shape[1])[None, :]
    ahead = (scores > t) | ((scores == t) & (idx < targets[:, None]))
    return 1 + np.count_nonzero(ahead & ~excluded, axis=1)


class _PairwiseScorer:
    def __init__(self, fn, n_items):
        self.fn = fn
        self.n_items = n_items

    def score_matrix(self, users):
        users = np.asarray(users)
        u = np.repeat(users, self.n_items)
        i = np.tile(np.arange(self.n_items), len(users))
        return np.asarray(self.fn(u, i), dtype=np.float64).reshape(len(users), self.n_items)


def ranks_for_split(scorer, split: SplitDataset, chunk: int = 512) -> np.ndarray:
    """Rank of every test row's item; ``scorer`` is a model or a pairwise function."""
    test = split.test
    if not len(test):
        raise ValueError("empty test split")
    n_items = split.parent.n_items
    if not hasattr(scorer, "score_matrix"):
        scorer = _PairwiseScorer(scorer, n_items)
    item_vectors = scorer.item_vectors() if hasattr(scorer, "item_vectors") else None
    seen_u = np.concatenate([split.train.user, split.validation.user])
    seen_i = np.concatenate([split.train.item, split.validation.item])
    order = np.argsort(seen_u, kind="stable")
    seen_u, seen_i = seen_u[order], seen_i[order]

    ranks = np.empty(len(test), dtype=np.int64)
    for start in range(0, len(test), chunk):
        users = test.user[start:start + chunk]
        targets = test.item[start:start + chunk]
        if item_vectors is not None:
            scores = scorer.score_matrix(users, item_vectors)
        else:
            scores = scorer.score_matrix(users)
        excluded = np.zeros(scores.shape, dtype=bool)
        lo = np.searchsorted(seen_u, users, "left")
        hi = np.searchsorted(seen_u, users, "right")
        for row, (a, b) in enumerate(zip(lo, hi)):
            excluded[row, seen_i[a:b]] = True
        rows = np.arange(len(users))
        clash = excluded[rows, targets]
        if clash.any():
            # repeated consumption: the held-out item also occurs earlier in the log
            logger.warning("%d test items also occur in train/validation; ranking them anyway",
                           int(clash.sum()))
            excluded[rows, targets] = False
        ranks[start:start + chunk] = _ranks(scores, targets, excluded)
    return ranks


def evaluate(scorer, split: SplitDataset, k: int = 10) -> MetricsReport:
    ranks = ranks_for_split(scorer, split)
    return MetricsReport(hr_at_k(ranks, k), ndcg_at_k(ranks, k), dataset=split.parent.name)
