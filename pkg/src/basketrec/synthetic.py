"""Synthetic corpora and models for tests, benchmarks and smoke runs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Basket, TransactionLog, Vocabulary
from .model import TripleModel


@dataclass
class PlantedCorpus:
    log: TransactionLog
    partner: np.ndarray  # partner[i] is the planted mate of item i


def planted_corpus(
    n_pairs: int = 250,
    n_users: int = 2000,
    baskets_per_user: int = 5,
    pairs_per_basket: int = 3,
    prefs_per_user: int = 8,
    pair_completion: float = 0.9,
    popularity_skew: float = 0.0,
    seed: int = 0,
) -> PlantedCorpus:
    """Baskets built from complementary item pairs.

    Item ``2p`` and ``2p + 1`` form pair ``p``. Each user prefers
    ``prefs_per_user`` pairs, with pair ``r`` of a random ordering weighted by
    ``(r + 1) ** -popularity_skew`` (0 is uniform); every basket
    picks ``pairs_per_basket`` of them and includes both mates with
    probability ``pair_completion`` (else one mate at random).
    """
    rng = np.random.default_rng(seed)
    n_items = 2 * n_pairs
    pair_weight = np.arange(1, n_pairs + 1, dtype=np.float64) ** -popularity_skew
    pair_weight /= pair_weight.sum()
    pair_weight = pair_weight[rng.permutation(n_pairs)]

    vocab = Vocabulary([f"user{u}" for u in range(n_users)], [f"item{i}" for i in range(n_items)])
    baskets = []
    for u in range(n_users):
        prefs = rng.choice(n_pairs, size=prefs_per_user, replace=False, p=pair_weight)
        for b in range(baskets_per_user):
            chosen = rng.choice(prefs, size=min(pairs_per_basket, prefs_per_user), replace=False)
            items = set()
            for p in chosen:
                if rng.random() < pair_completion:
                    items.update((2 * p, 2 * p + 1))
                else:
                    items.add(2 * p + int(rng.integers(2)))
            baskets.append(Basket(u, f"u{u}b{b}", tuple(sorted(int(i) for i in items))))
    partner = np.arange(n_items) ^ 1
    return PlantedCorpus(TransactionLog(baskets, vocab), partner)


def random_model(
    n_items: int, n_users: int, d: int, seed: int = 0, dtype=np.float64, scale: float = 1.0
) -> TripleModel:
    """Gaussian embeddings, for properties that hold for any model."""
    rng = np.random.default_rng(seed)

    def draw(rows):
        return (scale * rng.standard_normal((rows, d))).astype(dtype)

    return TripleModel(P=draw(n_items), Q=draw(n_items), H=draw(n_users))


def random_baskets(n_items: int, n_users: int, size: int, count: int, seed: int = 0):
    """``count`` (user, items) pairs with ``size`` distinct items each."""
    rng = np.random.default_rng(seed)
    size = min(size, n_items)
    return [
        (int(rng.integers(n_users)), tuple(int(i) for i in rng.choice(n_items, size=size, replace=False)))
        for _ in range(count)
    ]
