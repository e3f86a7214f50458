"""Interaction logs: ingestion, leave-last-two splits, compression and sampling.

Interactions are stored column-wise (parallel ``user``/``item``/``timestamp``
arrays) so that every transform here is a vectorized numpy operation. Row
access is still available through :class:`Interaction` for inspection.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

logger = logging.getLogger(__name__)

MOVIELENS_GENRES = (
    "Action", "Adventure", "Animation", "Children's", "Comedy", "Crime",
    "Documentary", "Drama", "Fantasy", "Film-Noir", "Horror", "Musical",
    "Mystery", "Romance", "Sci-Fi", "Thriller", "War", "Western",
)
MOVIELENS_AGES = (1, 18, 25, 35, 45, 50, 56)
MOVIELENS_OCCUPATIONS = 21
USER_FEATURE_DIM = 2 + len(MOVIELENS_AGES) + MOVIELENS_OCCUPATIONS
ITEM_FEATURE_DIM = len(MOVIELENS_GENRES)


class DatasetError(ValueError):
    """Raised for unreadable, malformed or degenerate interaction data."""


class Interaction(NamedTuple):
    user: int
    item: int
    timestamp: int
    label: int = 1


@dataclass(frozen=True)
class Interactions:
    """A column-wise list of positive interactions."""

    user: np.ndarray
    item: np.ndarray
    timestamp: np.ndarray

    def __post_init__(self):
        n = len(self.user)
        if len(self.item) != n or len(self.timestamp) != n:
            raise ValueError("user, item and timestamp columns differ in length")

    @classmethod
    def from_arrays(cls, user, item, timestamp=None) -> "Interactions":
        user = np.asarray(user, dtype=np.int64)
        item = np.asarray(item, dtype=np.int64)
        if timestamp is None:
            timestamp = np.arange(len(user), dtype=np.int64)
        return cls(user, item, np.asarray(timestamp, dtype=np.int64))

    @classmethod
    def empty(cls) -> "Interactions":
        return cls.from_arrays([], [], [])

    def __len__(self) -> int:
        return len(self.user)

    def __iter__(self) -> Iterator[Interaction]:
        for u, i, t in zip(self.user.tolist(), self.item.tolist(), self.timestamp.tolist()):
            yield Interaction(u, i, t)

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return Interaction(int(self.user[idx]), int(self.item[idx]), int(self.timestamp[idx]))
        return Interactions(self.user[idx], self.item[idx], self.timestamp[idx])

    @property
    def label(self) -> np.ndarray:
        return np.ones(len(self), dtype=np.int8)

    def triples(self) -> set[tuple[int, int, int]]:
        return set(zip(self.user.tolist(), self.item.tolist(), self.timestamp.tolist()))

    def sorted_key(self) -> np.ndarray:
        """Rows as an (n, 3) array in lexicographic order; handy for multiset comparisons."""
        rows = np.stack([self.user, self.item, self.timestamp], axis=1)
        return rows[np.lexsort(rows.T[::-1])] if len(rows) else rows.reshape(0, 3)


def _empty_features(n: int) -> np.ndarray:
    return np.zeros((n, 0), dtype=np.float32)


@dataclass
class InteractionDataset:
    """The full interaction log with dense id spaces and side features."""

    interactions: Interactions
    user_ids: list  # dense -> raw
    item_ids: list
    user_features: np.ndarray = None
    item_features: np.ndarray = None
    name: str = "dataset"
    _positive_keys: np.ndarray = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.user_features is None:
            self.user_features = _empty_features(self.n_users)
        if self.item_features is None:
            self.item_features = _empty_features(self.n_items)
        self.user_index = {raw: k for k, raw in enumerate(self.user_ids)}
        self.item_index = {raw: k for k, raw in enumerate(self.item_ids)}

    @classmethod
    def from_arrays(cls, user, item, timestamp=None, n_users=None, n_items=None,
                    user_features=None, item_features=None, name="synthetic"):
        """Build a dataset from already-dense ids (raw id = dense id)."""
        inter = Interactions.from_arrays(user, item, timestamp)
        if n_users is None:
            n_users = int(inter.user.max()) + 1 if len(inter) else 0
        if n_items is None:
            n_items = int(inter.item.max()) + 1 if len(inter) else 0
        if len(inter) and (inter.user.max() >= n_users or inter.item.max() >= n_items):
            raise DatasetError("dense id out of range")
        return cls(inter, list(range(n_users)), list(range(n_items)),
                   user_features, item_features, name)

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    def positive_keys(self) -> np.ndarray:
        """Sorted unique ``user * n_items + item`` codes of every logged pair."""
        if self._positive_keys is None:
            inter = self.interactions
            self._positive_keys = np.unique(inter.user * self.n_items + inter.item)
        return self._positive_keys

    def is_positive(self, users, items) -> np.ndarray:
        keys = self.positive_keys()
        codes = np.asarray(users, dtype=np.int64) * self.n_items + np.asarray(items, dtype=np.int64)
        pos = np.searchsorted(keys, codes)
        pos = np.minimum(pos, len(keys) - 1)
        return keys[pos] == codes if len(keys) else np.zeros(codes.shape, bool)


@dataclass
class SplitDataset:
    train: Interactions
    validation: Interactions
    test: Interactions
    parent: InteractionDataset


@dataclass
class NegativeSet:
    user: np.ndarray
    item: np.ndarray
    seed: int

    def __len__(self) -> int:
        return len(self.user)

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.user.tolist(), self.item.tolist()))


# ---------------------------------------------------------------------------
# ingestion

def _read_lines(path, encoding="utf-8"):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    try:
        text = raw.decode(encoding)
    except UnicodeDecodeError:
        # MovieLens ships latin-1 titles
        text = raw.decode("latin-1")
    return text.splitlines()


def parse_interactions(path, format: str = "movielens-dat", name: str | None = None) -> InteractionDataset:
    """Read an interaction log, remapping raw ids to dense ids in first-occurrence order.

    ``movielens-dat`` rows are ``user::item::rating::timestamp`` (the rating is
    discarded); ``tsv`` rows are ``user<TAB>item<TAB>timestamp`` and ``#`` lines
    are comments.
    """
    if format not in ("movielens-dat", "tsv"):
        raise DatasetError(f"unknown interaction format {format!r}")
    users, items, stamps = [], [], []
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    for lineno, line in enumerate(_read_lines(path), start=1):
        line = line.strip()
        if not line:
            continue
        if format == "tsv":
            if line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise DatasetError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}")
            raw_u, raw_i, raw_t = fields
        else:
            fields = line.split("::")
            if len(fields) != 4:
                raise DatasetError(f"{path}:{lineno}: expected user::item::rating::timestamp")
            raw_u, raw_i, _, raw_t = fields
        try:
            ts = int(raw_t)
        except ValueError:
            raise DatasetError(f"{path}:{lineno}: bad timestamp {raw_t!r}") from None
        users.append(user_index.setdefault(raw_u.strip(), len(user_index)))
        items.append(item_index.setdefault(raw_i.strip(), len(item_index)))
        stamps.append(ts)
    if not users:
        raise DatasetError(f"{path}: no interactions")
    return InteractionDataset(
        Interactions.from_arrays(users, items, stamps),
        user_ids=list(user_index), item_ids=list(item_index),
        name=name or Path(path).parent.name or Path(path).stem,
    )


def _user_feature_row(fields) -> np.ndarray:
    gender, age, occupation = fields[1], int(fields[2]), int(fields[3])
    vec = np.zeros(USER_FEATURE_DIM, dtype=np.float32)
    if gender not in ("F", "M"):
        raise ValueError(f"gender {gender!r}")
    vec[0 if gender == "F" else 1] = 1.0
    vec[2 + MOVIELENS_AGES.index(age)] = 1.0
    if not 0 <= occupation < MOVIELENS_OCCUPATIONS:
        raise ValueError(f"occupation {occupation}")
    vec[2 + len(MOVIELENS_AGES) + occupation] = 1.0
    return vec


def parse_side_features(dataset: InteractionDataset, users_path=None, items_path=None,
                        schema: str = "movielens") -> InteractionDataset:
    """Attach MovieLens side features in place and return the dataset.

    Users get one-hot gender, age bucket and occupation (30 dims); items get a
    multi-hot over the 18 genres. Rows for unknown ids are skipped with a
    warning, and ids with no feature row keep a zero vector. ``schema="none"``
    produces zero-width features.
    """
    if schema == "none":
        dataset.user_features = _empty_features(dataset.n_users)
        dataset.item_features = _empty_features(dataset.n_items)
        return dataset
    if schema != "movielens":
        raise DatasetError(f"unknown feature schema {schema!r}")

    user_feats = np.zeros((dataset.n_users, USER_FEATURE_DIM), dtype=np.float32)
    if users_path is not None:
        skipped = 0
        for lineno, line in enumerate(_read_lines(users_path), start=1):
            if not line.strip():
                continue
            fields = line.strip().split("::")
            dense = dataset.user_index.get(fields[0])
            if dense is None:
                skipped += 1
                continue
            try:
                user_feats[dense] = _user_feature_row(fields)
            except (IndexError, ValueError) as exc:
                raise DatasetError(f"{users_path}:{lineno}: malformed user row ({exc})") from None
        if skipped:
            logger.warning("skipped %d user feature rows with unknown ids", skipped)

    item_feats = np.zeros((dataset.n_items, ITEM_FEATURE_DIM), dtype=np.float32)
    if items_path is not None:
        skipped, unknown_genres = 0, set()
        for lineno, line in enumerate(_read_lines(items_path), start=1):
            if not line.strip():
                continue
            fields = line.strip().split("::")
            if len(fields) < 3:
                raise DatasetError(f"{items_path}:{lineno}: expected id::title::genres")
            dense = dataset.item_index.get(fields[0])
            if dense is None:
                skipped += 1
                continue
            for genre in fields[-1].split("|"):
                if genre in MOVIELENS_GENRES:
                    item_feats[dense, MOVIELENS_GENRES.index(genre)] = 1.0
                else:
                    unknown_genres.add(genre)
        if skipped:
            logger.warning("skipped %d item feature rows with unknown ids", skipped)
        if unknown_genres:
            logger.warning("ignored unknown genres: %s", sorted(unknown_genres))

    dataset.user_features = user_feats
    dataset.item_features = item_feats
    return dataset


# ---------------------------------------------------------------------------
# splitting and compression

def split_leave_last_two(dataset: InteractionDataset) -> SplitDataset:
    """Most recent interaction per user to test, second most recent to validation.

    Users with fewer than three interactions are dropped from every split.
    Timestamp ties are broken by file order.
    """
    inter = dataset.interactions
    n = len(inter)
    order = np.lexsort((np.arange(n), inter.timestamp, inter.user))
    users = inter.user[order]
    counts = np.bincount(users, minlength=dataset.n_users)
    # position of each row counted from the end of its user's history
    ends = np.cumsum(counts)[users]
    from_end = ends - np.arange(n)  # 1 = most recent
    keep = counts[users] >= 3
    test_rows = order[keep & (from_end == 1)]
    val_rows = order[keep & (from_end == 2)]
    train_rows = np.sort(order[keep & (from_end > 2)])
    if not len(test_rows):
        raise DatasetError("no user has at least 3 interactions")
    return SplitDataset(inter[train_rows], inter[np.sort(val_rows)], inter[np.sort(test_rows)], dataset)


def _check_ratio(ratio: float) -> None:
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")


def sample_size(n: int, ratio: float) -> int:
    _check_ratio(ratio)
    # the epsilon absorbs binary representation error, e.g. 0.29 * 100
    return min(n, math.floor(ratio * n + 1e-9))


def sample_uniform(train: Interactions, ratio: float, seed: int) -> Interactions:
    """Uniform sample without replacement of floor(ratio * n) rows, order preserved."""
    size = sample_size(len(train), ratio)
    if size == len(train):
        return train[np.arange(len(train))]
    rng = np.random.default_rng(seed)
    rows = np.sort(rng.choice(len(train), size=size, replace=False))
    return train[rows]


def sample_negatives(positives: Interactions, dataset: InteractionDataset, k: int = 1,
                     seed=0) -> NegativeSet:
    """Draw ``k`` never-interacted items per positive, uniformly, by rejection."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(seed)
    users = np.repeat(positives.user, k)
    n_items = dataset.n_items
    distinct = np.bincount(dataset.positive_keys() // n_items, minlength=dataset.n_users)
    saturated = distinct[users] >= n_items
    if saturated.any():
        logger.warning("%d users interacted with every item; their negatives are skipped",
                       len(np.unique(users[saturated])))
        users = users[~saturated]
    items = rng.integers(0, n_items, size=len(users))
    bad = np.flatnonzero(dataset.is_positive(users, items))
    while len(bad):
        items[bad] = rng.integers(0, n_items, size=len(bad))
        bad = bad[dataset.is_positive(users[bad], items[bad])]
    return NegativeSet(users, items, seed)


def _item_groups(train: Interactions):
    """Rows grouped by item: (items, counts, rows sorted by item)."""
    order = np.argsort(train.item, kind="stable")
    items, counts = np.unique(train.item[order], return_counts=True)
    return items, counts, order


def oversample_tail(train: Interactions, seed: int, max_factor: int = 10) -> Interactions:
    """Duplicate rows of items below the median item frequency up to the median.

    Duplication is capped at ``max_factor`` times the original count. Whole
    copies are made first, then the remainder is drawn without replacement.
    The result is shuffled deterministically.
    """
    if not len(train):
        raise ValueError("empty training set")
    rng = np.random.default_rng(seed)
    items, counts, order = _item_groups(train)
    median = float(np.median(counts))
    target = math.floor(median)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    extra = []
    for item_pos in np.flatnonzero(counts < median):
        c = int(counts[item_pos])
        want = min(target, max_factor * c)
        rows = order[starts[item_pos]:starts[item_pos] + c]
        copies, rem = divmod(want - c, c)
        if copies:
            extra.append(np.tile(rows, copies))
        if rem:
            extra.append(rng.choice(rows, size=rem, replace=False))
    all_rows = np.concatenate([np.arange(len(train))] + extra)
    return train[rng.permutation(all_rows)]


def undersample_head(train: Interactions, seed: int) -> Interactions:
    """Subsample rows of items above the median item frequency down to the median."""
    if not len(train):
        raise ValueError("empty training set")
    rng = np.random.default_rng(seed)
    items, counts, order = _item_groups(train)
    median = float(np.median(counts))
    target = math.ceil(median)
    keep = np.ones(len(train), dtype=bool)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    for item_pos in np.flatnonzero(counts > median):
        c = int(counts[item_pos])
        rows = order[starts[item_pos]:starts[item_pos] + c]
        drop = rng.choice(rows, size=c - target, replace=False)
        keep[drop] = False
    return train[np.flatnonzero(keep)]


def item_frequency(train: Interactions, n_items: int) -> np.ndarray:
    """Add-one smoothed empirical item probabilities (strictly positive, sums to 1)."""
    if not len(train):
        raise ValueError("empty training set")
    counts = np.bincount(train.item, minlength=n_items).astype(np.float64) + 1.0
    return counts / counts.sum()
