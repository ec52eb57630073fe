"""Basket transaction ingestion, id interning, frequency tables and holdout splits."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

HEADER = ("user_id", "basket_id", "item_id")


class CorpusError(ValueError):
    """Raised for malformed transaction files or impossible splits."""


@dataclass
class Vocabulary:
    """Bidirectional maps between external string ids and dense integer ids."""

    users: list[str] = field(default_factory=list)
    items: list[str] = field(default_factory=list)
    _user_index: dict[str, int] = field(default_factory=dict, repr=False)
    _item_index: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._user_index:
            self._user_index = {u: k for k, u in enumerate(self.users)}
        if not self._item_index:
            self._item_index = {i: k for k, i in enumerate(self.items)}
        if len(self._user_index) != len(self.users) or len(self._item_index) != len(self.items):
            raise CorpusError("duplicate external id in vocabulary")

    @property
    def user_count(self) -> int:
        return len(self.users)

    @property
    def item_count(self) -> int:
        return len(self.items)

    def intern_user(self, external: str) -> int:
        idx = self._user_index.get(external)
        if idx is None:
            idx = len(self.users)
            self.users.append(external)
            self._user_index[external] = idx
        return idx

    def intern_item(self, external: str) -> int:
        idx = self._item_index.get(external)
        if idx is None:
            idx = len(self.items)
            self.items.append(external)
            self._item_index[external] = idx
        return idx

    def user_id(self, external: str) -> int | None:
        return self._user_index.get(external)

    def item_id(self, external: str) -> int | None:
        return self._item_index.get(external)

    def copy(self) -> "Vocabulary":
        return Vocabulary(list(self.users), list(self.items))

    def __eq__(self, other):
        if not isinstance(other, Vocabulary):
            return NotImplemented
        return self.users == other.users and self.items == other.items


@dataclass(frozen=True)
class Basket:
    """One shopping basket. ``items`` is a sorted tuple of distinct dense item ids."""

    user: int
    basket_id: str
    items: tuple[int, ...]

    def __post_init__(self):
        if not self.items:
            raise CorpusError(f"basket {self.basket_id!r} is empty")
        canonical = tuple(sorted(set(self.items)))
        if canonical != self.items:
            object.__setattr__(self, "items", canonical)

    def __len__(self):
        return len(self.items)


@dataclass
class TransactionLog:
    baskets: list[Basket]
    vocabulary: Vocabulary

    def __post_init__(self):
        m, n = self.vocabulary.user_count, self.vocabulary.item_count
        for b in self.baskets:
            if not 0 <= b.user < m or b.items[0] < 0 or b.items[-1] >= n:
                raise CorpusError(f"basket {b.basket_id!r} references an unregistered id")

    def __len__(self):
        return len(self.baskets)

    def csr(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(offsets, items, users)`` arrays; basket ``b`` owns ``items[offsets[b]:offsets[b+1]]``."""
        sizes = np.fromiter((len(b) for b in self.baskets), dtype=np.int64, count=len(self.baskets))
        offsets = np.zeros(len(self.baskets) + 1, dtype=np.int64)
        np.cumsum(sizes, out=offsets[1:])
        items = np.fromiter(
            (i for b in self.baskets for i in b.items), dtype=np.int64, count=int(offsets[-1])
        )
        users = np.fromiter((b.user for b in self.baskets), dtype=np.int64, count=len(self.baskets))
        return offsets, items, users


@dataclass(frozen=True)
class FrequencyTable:
    """Basket-level occurrence counts plus a rank permutation (descending count, ascending id)."""

    counts: np.ndarray
    rank: np.ndarray

    @classmethod
    def from_counts(cls, counts: Sequence[int] | np.ndarray) -> "FrequencyTable":
        counts = np.asarray(counts, dtype=np.int64)
        ids = np.arange(len(counts))
        rank = np.lexsort((ids, -counts))
        return cls(counts=counts, rank=rank)

    def __len__(self):
        return len(self.counts)

    @property
    def rank_of(self) -> np.ndarray:
        """Inverse permutation: ``rank_of[id]`` is the rank position of ``id``."""
        inv = np.empty_like(self.rank)
        inv[self.rank] = np.arange(len(self.rank))
        return inv


def _read_rows(text: str, source: str) -> Iterable[tuple[int, str, str, str]]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise CorpusError(f"{source}: empty file") from None
    if tuple(h.strip() for h in header) != HEADER:
        raise CorpusError(f"{source}:1: expected header {','.join(HEADER)}, got {','.join(header)}")
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        if len(row) != 3:
            raise CorpusError(f"{source}:{line}: expected 3 fields, got {len(row)}")
        user, basket, item = (field.strip() for field in row)
        if not user or not basket or not item:
            raise CorpusError(f"{source}:{line}: empty id")
        yield line, user, basket, item


def load_baskets(
    path: str | Path,
    format: str = "csv",
    vocabulary: Vocabulary | None = None,
) -> TransactionLog:
    """Read a ``user_id,basket_id,item_id`` CSV into a TransactionLog.

    Rows sharing ``(user_id, basket_id)`` merge into one basket and repeated
    items collapse. Passing an existing ``vocabulary`` keeps its dense ids and
    appends any ids it has not seen; the caller's object is not mutated.
    """
    if format != "csv":
        raise CorpusError(f"unsupported ingestion format {format!r}")
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    vocab = vocabulary.copy() if vocabulary is not None else Vocabulary()

    grouped: dict[tuple[int, str], set[int]] = {}
    for _, user, basket, item in _read_rows(text, str(path)):
        key = (vocab.intern_user(user), basket)
        grouped.setdefault(key, set()).add(vocab.intern_item(item))
    if not grouped:
        raise CorpusError(f"{path}: no transactions")
    baskets = [Basket(u, b, tuple(sorted(items))) for (u, b), items in grouped.items()]
    return TransactionLog(baskets, vocab)


def write_baskets(log: TransactionLog, path: str | Path) -> None:
    """Write ``log`` back out in the canonical CSV format, one row per (basket, item)."""
    vocab = log.vocabulary
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HEADER)
        for b in log.baskets:
            user = vocab.users[b.user]
            for i in b.items:
                writer.writerow((user, b.basket_id, vocab.items[i]))


def split_holdout(
    log: TransactionLog, test_fraction: float, seed: int
) -> tuple[TransactionLog, TransactionLog]:
    """Seeded random basket-level split with user-coverage rebalancing.

    A user whose baskets all land in test gets them moved back to train; if
    the user has two or more baskets, the one drawn first stays in test.
    Both halves share ``log.vocabulary``.
    """
    if not 0.0 < test_fraction < 1.0:
        raise CorpusError(f"test_fraction must be in (0, 1), got {test_fraction}")
    if len(log) < 2:
        raise CorpusError("need at least 2 baskets to split")
    n = len(log)
    n_test = int(round(test_fraction * n))
    if n_test == 0 or n_test == n:
        raise CorpusError(f"test_fraction {test_fraction} leaves one side empty for {n} baskets")

    order = np.random.default_rng(seed).permutation(n)
    in_test = np.zeros(n, dtype=bool)
    in_test[order[:n_test]] = True

    per_user: dict[int, list[int]] = {}
    for pos in order:
        per_user.setdefault(log.baskets[pos].user, []).append(int(pos))
    for drawn in per_user.values():
        if all(in_test[b] for b in drawn):
            in_test[drawn] = False
            if len(drawn) >= 2:
                in_test[drawn[0]] = True

    train = [b for b, t in zip(log.baskets, in_test) if not t]
    test = [b for b, t in zip(log.baskets, in_test) if t]
    if not test or not train:
        raise CorpusError("split produced an empty side after rebalancing")
    return TransactionLog(train, log.vocabulary), TransactionLog(test, log.vocabulary)


def item_frequencies(log: TransactionLog) -> FrequencyTable:
    _, items, _ = log.csr()
    return FrequencyTable.from_counts(np.bincount(items, minlength=log.vocabulary.item_count))


def user_frequencies(log: TransactionLog) -> FrequencyTable:
    """Baskets per user, ranked like item frequencies."""
    _, _, users = log.csr()
    return FrequencyTable.from_counts(np.bincount(users, minlength=log.vocabulary.user_count))
