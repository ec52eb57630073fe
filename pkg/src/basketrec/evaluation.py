"""Offline evaluation: within-basket holdout splits, Recall@K / NDCG@K and strategy comparison."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import FrequencyTable, TransactionLog
from .index import CatalogIndex, IndexParams, build_catalog
from .model import TripleModel
from .recommend import (
    BasketContext,
    PostProcessConfig,
    RecommendConfig,
    item_pop_recommend,
    recommend,
)

__all__ = [
    "EvalSplit",
    "MetricsReport",
    "MetricsRow",
    "Strategy",
    "default_strategies",
    "evaluate",
    "item_pop_recommend",
    "make_eval_split",
    "ndcg_at_k",
    "recall_at_k",
]


@dataclass(frozen=True)
class EvalSplit:
    user: int
    inference: tuple[int, ...]
    heldout: tuple[int, ...]


def make_eval_split(
    test: TransactionLog, fraction: float = 0.8, seed: int = 0
) -> tuple[list[EvalSplit], int]:
    """Split each test basket into inference and held-out parts. Returns ``(splits, skipped)``.

    A basket of size ``s >= 2`` keeps ``max(1, floor(fraction * s))`` items
    for inference (at most ``s - 1``); size-1 baskets are skipped.
    """
    rng = np.random.default_rng(seed)
    splits, skipped = [], 0
    for b in test.baskets:
        s = len(b.items)
        if s < 2:
            skipped += 1
            continue
        n_inf = min(max(1, math.floor(fraction * s)), s - 1)
        perm = rng.permutation(s)
        items = np.asarray(b.items)
        splits.append(EvalSplit(
            user=b.user,
            inference=tuple(sorted(int(i) for i in items[perm[:n_inf]])),
            heldout=tuple(sorted(int(i) for i in items[perm[n_inf:]])),
        ))
    return splits, skipped


def recall_at_k(recommended: Sequence[int], relevant: Iterable[int], k: int) -> float:
    relevant = set(relevant)
    if not relevant:
        raise ValueError("relevant set is empty")
    if k < 1:
        raise ValueError("k must be at least 1")
    return len(set(recommended[:k]) & relevant) / len(relevant)


def ndcg_at_k(
    recommended: Sequence[int], relevant: Iterable[int], k: int, normalized: bool = True
) -> float:
    """DCG over the first ``k`` positions with a ``1 / log2(p + 1)`` discount.

    With ``normalized=False`` the raw sum is returned; otherwise it is divided
    by the ideal DCG of ``min(k, |relevant|)`` hits.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    relevant = set(relevant)
    dcg = sum(1.0 / math.log2(p + 2) for p, item in enumerate(recommended[:k]) if item in relevant)
    if not normalized:
        return dcg
    ideal = sum(1.0 / math.log2(p + 2) for p in range(min(k, len(relevant))))
    return dcg / ideal if ideal > 0 else 0.0


@dataclass
class Strategy:
    """``index=None`` means item popularity; otherwise the recommend pipeline over ``index``."""

    name: str
    index: CatalogIndex | None = None
    config: RecommendConfig = field(default_factory=RecommendConfig)


@dataclass(frozen=True)
class MetricsRow:
    strategy: str
    recall: float
    ndcg_literal: float
    ndcg_norm: float
    baskets: int
    skipped: int


@dataclass
class MetricsReport:
    k: int
    rows: list[MetricsRow]

    def row(self, strategy: str) -> MetricsRow:
        for r in self.rows:
            if r.strategy == strategy:
                return r
        raise KeyError(strategy)

    @property
    def header(self) -> list[str]:
        k = self.k
        return ["strategy", f"recall_at_{k}", f"ndcg_literal_at_{k}", f"ndcg_norm_at_{k}", "baskets", "skipped"]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.header)
            for r in self.rows:
                writer.writerow([
                    r.strategy, f"{r.recall:.6f}", f"{r.ndcg_literal:.6f}",
                    f"{r.ndcg_norm:.6f}", r.baskets, r.skipped,
                ])

    def format_table(self) -> str:
        head = self.header
        body = [
            [r.strategy, f"{r.recall:.4f}", f"{r.ndcg_literal:.4f}", f"{r.ndcg_norm:.4f}", str(r.baskets), str(r.skipped)]
            for r in self.rows
        ]
        widths = [max(len(x) for x in col) for col in zip(head, *body)]
        lines = ["  ".join(c.ljust(w) for c, w in zip(head, widths))]
        lines.append("  ".join("-" * w for w in widths))
        lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in body]
        return "\n".join(lines)


def default_strategies(
    model: TripleModel,
    backend: str = "exact",
    params: IndexParams | None = None,
    seed: int = 0,
    threshold: int = 6,
) -> list[Strategy]:
    """Item popularity plus the embedding variants, each per-anchor and basket-average.

    ``triple2vec`` scores by the plain cohesion score, ``triple2vec_np`` by
    ``p_i . q_j`` alone, ``symmetric_np`` by the user-free symmetrized score
    and ``symmetric`` by the full symmetrized score.
    """
    sym = build_catalog(model, backend, params, layout="symmetric")
    asym = build_catalog(model, backend, params, layout="asymmetric")
    out = [Strategy("itempop")]
    for name, idx, anon in (
        ("triple2vec", asym, False),
        ("triple2vec_np", asym, True),
        ("symmetric_np", sym, True),
        ("symmetric", sym, False),
    ):
        for mode, suffix in (("anchor", ""), ("average", "_avg")):
            cfg = RecommendConfig(anchor_threshold=threshold, seed=seed, query_mode=mode, anonymous=anon)
            out.append(Strategy(name + suffix, idx, cfg))
    return out


def evaluate(
    model: TripleModel,
    strategies: Sequence[Strategy],
    splits: Sequence[EvalSplit],
    freq: FrequencyTable,
    k: int = 20,
    skipped: int = 0,
    postprocess: PostProcessConfig | None = None,
) -> MetricsReport:
    """Mean Recall@K and NDCG@K (literal and normalized) of every strategy over ``splits``."""
    if not splits:
        raise ValueError("no evaluable baskets")
    rows = []
    for strat in strategies:
        recall = lit = norm = 0.0
        for sp in splits:
            if strat.index is None:
                recs = item_pop_recommend(freq, k, exclude=sp.inference)
            else:
                ctx = BasketContext(items=sp.inference, user=sp.user, k=k)
                recs = recommend(model, strat.index, ctx, strat.config, postprocess, freq).items
            recall += recall_at_k(recs, sp.heldout, k)
            lit += ndcg_at_k(recs, sp.heldout, k, normalized=False)
            norm += ndcg_at_k(recs, sp.heldout, k, normalized=True)
        n = len(splits)
        rows.append(MetricsRow(strat.name, recall / n, lit / n, norm / n, n, skipped))
    return MetricsReport(k=k, rows=rows)
