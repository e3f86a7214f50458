"""Synthetic implicit-feedback logs drawn from a latent-factor model.

Used by the tests and demos where the MovieLens files are not available.
Users and items get Gaussian taste vectors; each user consumes items sampled
from a softmax over affinity plus a Zipf-like popularity term, so the log has
both collaborative structure and a long tail.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .dataset import MOVIELENS_AGES, MOVIELENS_GENRES, InteractionDataset


def latent_factor_log(n_users: int = 200, n_items: int = 150, per_user: int = 20, dim: int = 8,
                      popularity: float = 1.0, temperature: float = 1.0, seed: int = 0,
                      features: bool = True) -> InteractionDataset:
    rng = np.random.default_rng(seed)
    taste = rng.normal(size=(n_users, dim))
    traits = rng.normal(size=(n_items, dim))
    pop = -popularity * np.log1p(rng.permutation(n_items))
    users, items = [], []
    for u in range(n_users):
        logits = (traits @ taste[u]) / (temperature * np.sqrt(dim)) * 3.0 + pop
        p = np.exp(logits - logits.max())
        p /= p.sum()
        chosen = rng.choice(n_items, size=min(per_user, n_items), replace=False, p=p)
        users.extend([u] * len(chosen))
        items.extend(chosen.tolist())
    users = np.asarray(users)
    stamps = rng.permutation(len(users)) + 1_000_000
    user_feats = item_feats = None
    if features:
        # coarse, noisy side information correlated with the taste vectors
        user_feats = np.eye(4, dtype=np.float32)[np.argmax(taste[:, :4], axis=1)]
        item_feats = (traits[:, :6] > 0.8).astype(np.float32)
    return InteractionDataset.from_arrays(users, items, stamps, n_users, n_items,
                                          user_feats, item_feats, name="synthetic")


def write_movielens(dataset: InteractionDataset, directory, side_files: bool = True) -> Path:
    """Write ``ratings.dat`` (raw ids offset by 1) in MovieLens ``::`` format.

    With ``side_files``, synthetic features are also rendered as ``users.dat``
    (the feature argmax picks gender, age bucket and occupation) and
    ``movies.dat`` (each active feature column becomes a genre).
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    inter = dataset.interactions
    lines = [f"{u + 1}::{i + 1}::5::{t}" for u, i, t in
             zip(inter.user.tolist(), inter.item.tolist(), inter.timestamp.tolist())]
    path = directory / "ratings.dat"
    path.write_text("\n".join(lines) + "\n")
    if side_files:
        uf, itf = dataset.user_features, dataset.item_features
        code = np.argmax(uf, axis=1) if uf.shape[1] else np.zeros(dataset.n_users, dtype=int)
        users = [f"{u + 1}::{'FM'[c % 2]}::{MOVIELENS_AGES[c % len(MOVIELENS_AGES)]}::{c % 21}::00000"
                 for u, c in enumerate(code.tolist())]
        (directory / "users.dat").write_text("\n".join(users) + "\n")
        movies = []
        for i in range(dataset.n_items):
            cols = np.flatnonzero(itf[i]).tolist() if itf.shape[1] else []
            genres = "|".join(MOVIELENS_GENRES[c % len(MOVIELENS_GENRES)] for c in cols) or MOVIELENS_GENRES[-1]
            movies.append(f"{i + 1}::Item {i + 1} (2000)::{genres}")
        (directory / "movies.dat").write_text("\n".join(movies) + "\n")
    return path
