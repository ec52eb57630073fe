"""Basket-to-item recommendation: anchors, batched retrieval, aggregation, post-processing."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml

from .corpus import FrequencyTable, Vocabulary
from .index import (
    CatalogIndex,
    make_query_vector,
    make_query_vector_anonymous,
    make_query_vector_asymmetric,
)
from .index.catalog import QueryVector, Ranked
from .model import TripleModel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BasketContext:
    items: tuple[int, ...]
    user: int | None = None
    k: int = 20


@dataclass(frozen=True)
class Recommendation:
    item: int
    score: float
    anchors: tuple[int, ...] = ()


@dataclass
class RecommendationSet:
    entries: list[Recommendation]
    k: int
    overflow: list[Recommendation] = field(default_factory=list)
    fallback: bool = False
    anchors_sampled: bool = False
    short: bool = False

    @property
    def items(self) -> list[int]:
        return [e.item for e in self.entries]


@dataclass
class RecommendConfig:
    anchor_threshold: int = 6
    depth_factor: int = 3
    seed: int = 0
    # "anchor": one query per anchor item; "average": one query from basket-mean item embeddings
    query_mode: str = "anchor"
    anonymous: bool = False
    batch: bool = True

    def __post_init__(self):
        if self.query_mode not in ("anchor", "average"):
            raise ValueError(f"unknown query_mode {self.query_mode!r}")
        if self.anchor_threshold < 1 or self.depth_factor < 1:
            raise ValueError("anchor_threshold and depth_factor must be positive")


@dataclass
class PostProcessConfig:
    blacklist_items: frozenset[int] = frozenset()
    blacklist_categories: frozenset[str] = frozenset()
    categories: dict[int, str] = field(default_factory=dict)
    max_per_category: int | None = None
    deny_category_pairs: frozenset[frozenset[str]] = frozenset()

    def __post_init__(self):
        if self.max_per_category is not None and self.max_per_category < 1:
            raise ValueError("max_per_category must be at least 1")

    @property
    def empty(self) -> bool:
        return not (
            self.blacklist_items or self.blacklist_categories
            or self.max_per_category is not None or self.deny_category_pairs
        )

    @classmethod
    def from_dict(cls, doc: dict, vocabulary: Vocabulary | None = None) -> "PostProcessConfig":
        """Build from a document whose item ids are external strings (dense ints if no vocabulary)."""
        known = {
            "blacklist_items", "blacklist_categories", "categories",
            "max_per_category", "deny_category_pairs",
        }
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown post-process keys: {sorted(unknown)}")

        def dense(ext):
            if vocabulary is None:
                return int(ext)
            idx = vocabulary.item_id(str(ext))
            if idx is None:
                log.warning("post-process config names unknown item %r; ignored", ext)
            return idx

        items = {dense(e) for e in doc.get("blacklist_items", [])}
        cats = {}
        for ext, cat in (doc.get("categories") or {}).items():
            idx = dense(ext)
            if idx is not None:
                cats[idx] = str(cat)
        pairs = set()
        for pair in doc.get("deny_category_pairs", []):
            if len(pair) != 2:
                raise ValueError(f"deny rule must name two categories, got {pair!r}")
            pairs.add(frozenset(str(c) for c in pair))
        return cls(
            blacklist_items=frozenset(i for i in items if i is not None),
            blacklist_categories=frozenset(str(c) for c in doc.get("blacklist_categories", [])),
            categories=cats,
            max_per_category=doc.get("max_per_category"),
            deny_category_pairs=frozenset(pairs),
        )

    @classmethod
    def load(cls, path: str | Path, vocabulary: Vocabulary | None = None) -> "PostProcessConfig":
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        if not isinstance(doc, dict):
            raise ValueError(f"{path}: post-process config must be a mapping")
        return cls.from_dict(doc, vocabulary)


def item_pop_recommend(freq: FrequencyTable, k: int, exclude: Iterable[int] = ()) -> list[int]:
    """Top-``k`` ids by basket frequency (ties by ascending id), skipping ``exclude``."""
    banned = set(exclude)
    out = []
    for i in freq.rank:
        if len(out) >= k:
            break
        if int(i) not in banned:
            out.append(int(i))
    return out


def select_anchor_set(basket: Iterable[int], threshold: int, seed: int) -> tuple[int, ...]:
    """Whole basket if it has at most ``threshold`` items, else a seeded half (rounded up)."""
    items = sorted(set(basket))
    if not items:
        raise ValueError("empty basket")
    if len(items) <= threshold:
        return tuple(items)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(items), size=math.ceil(len(items) / 2), replace=False)
    return tuple(sorted(items[c] for c in chosen))


def _query(model: TripleModel, layout: str, user: int | None, anchor: int) -> QueryVector:
    if layout == "asymmetric":
        return make_query_vector_asymmetric(model, user, anchor)
    if user is None:
        return make_query_vector_anonymous(model, anchor)
    return make_query_vector(model, user, anchor)


def _average_query(model: TripleModel, layout: str, user: int | None, items: Sequence[int]) -> QueryVector:
    rows = np.asarray(items)
    p, q = model.P[rows].mean(axis=0), model.Q[rows].mean(axis=0)
    h = model.H[user] if user is not None else np.zeros(model.d, dtype=model.P.dtype)
    if layout == "asymmetric":
        return QueryVector(np.concatenate([p, h]), anchor=-1, user=user)
    return QueryVector(np.concatenate([p, h, q, h]), anchor=-1, user=user)


def recommend_for_anchor(
    model: TripleModel,
    index: CatalogIndex,
    user: int | None,
    anchor: int,
    k: int,
    exclude: Iterable[int] = (),
) -> Ranked:
    if not 0 <= anchor < model.n:
        raise KeyError(f"unknown anchor item {anchor}")
    if user is not None and not 0 <= user < model.m:
        user = None
    return index.topk(_query(model, index.layout, user, anchor), k, exclude)


def aggregate(
    per_anchor: Sequence[Ranked],
    k: int,
    anchors: Sequence[int] | None = None,
    buffer: int | None = None,
) -> RecommendationSet:
    """Blend per-anchor ranked lists by summing min-max normalized scores.

    Ranking: aggregate score desc, then number of contributing lists desc,
    then item id asc. The first ``k`` become entries and the next
    ``buffer - k`` (default ``3k`` total) are kept as overflow.
    """
    if not per_anchor:
        raise ValueError("need at least one ranked list")
    anchors = list(anchors) if anchors is not None else list(range(len(per_anchor)))
    totals: dict[int, float] = {}
    sources: dict[int, list[int]] = {}
    for anchor, ranked in zip(anchors, per_anchor):
        if not ranked:
            continue
        scores = np.array([s for _, s in ranked], dtype=np.float64)
        lo, hi = scores.min(), scores.max()
        norm = (scores - lo) / (hi - lo) if hi > lo else np.ones_like(scores)
        for (item, _), v in zip(ranked, norm):
            totals[item] = totals.get(item, 0.0) + float(v)
            sources.setdefault(item, []).append(anchor)
    ordered = sorted(totals, key=lambda i: (-totals[i], -len(sources[i]), i))
    depth = buffer if buffer is not None else 3 * k
    recs = [Recommendation(i, totals[i], tuple(sources[i])) for i in ordered[:max(depth, k)]]
    return RecommendationSet(entries=recs[:k], k=k, overflow=recs[k:])


def post_process(
    rs: RecommendationSet,
    config: PostProcessConfig | None,
    k: int,
    basket: Iterable[int] = (),
) -> RecommendationSet:
    """Blacklists, per-category cap and category-pair deny rules, refilling from overflow.

    A deny pair ``{a, b}`` drops an item of category ``b`` when ``a`` is
    already present among the basket's or the accepted items' categories.
    """
    if config is None or config.empty:
        entries = (rs.entries + rs.overflow)[:k]
        return replace(rs, entries=entries, k=k, overflow=(rs.entries + rs.overflow)[k:],
                       short=rs.short or len(entries) < k)
    cat = config.categories
    present = {cat[i] for i in basket if i in cat}
    per_cat: dict[str, int] = {}
    kept, rest = [], []
    for rec in rs.entries + rs.overflow:
        if len(kept) >= k:
            rest.append(rec)
            continue
        if rec.item in config.blacklist_items:
            continue
        c = cat.get(rec.item)
        if c is not None:
            if c in config.blacklist_categories:
                continue
            if config.max_per_category is not None and per_cat.get(c, 0) >= config.max_per_category:
                continue
            if any(frozenset((c, other)) in config.deny_category_pairs for other in present):
                continue
            per_cat[c] = per_cat.get(c, 0) + 1
            present.add(c)
        kept.append(rec)
    return replace(rs, entries=kept, k=k, overflow=rest, short=len(kept) < k)


def recommend(
    model: TripleModel,
    index: CatalogIndex,
    ctx: BasketContext,
    config: RecommendConfig | None = None,
    postprocess: PostProcessConfig | None = None,
    freq: FrequencyTable | None = None,
) -> RecommendationSet:
    """Full pipeline. Unknown basket items are ignored; an empty known basket falls back to item popularity."""
    config = config or RecommendConfig()
    k = ctx.k
    if k < 1:
        raise ValueError("k must be at least 1")
    known = sorted({i for i in ctx.items if 0 <= i < model.n})
    user = ctx.user if ctx.user is not None and 0 <= ctx.user < model.m and not config.anonymous else None

    if not known:
        if freq is None:
            counts = model.item_counts if model.item_counts is not None else np.zeros(model.n, dtype=np.int64)
            freq = FrequencyTable.from_counts(counts)
        pop = item_pop_recommend(freq, config.depth_factor * k, exclude=ctx.items)
        counts = freq.counts
        recs = [Recommendation(i, float(counts[i])) for i in pop]
        rs = RecommendationSet(entries=recs[:k], k=k, overflow=recs[k:], fallback=True)
        return post_process(rs, postprocess, k, basket=known)

    depth = config.depth_factor * k
    if config.query_mode == "average":
        anchors: tuple[int, ...] = tuple(known)
        queries = [_average_query(model, index.layout, user, known)]
        sampled = False
    else:
        anchors = select_anchor_set(known, config.anchor_threshold, config.seed)
        queries = [_query(model, index.layout, user, a) for a in anchors]
        sampled = len(anchors) < len(known)
    if config.batch:
        lists = index.batch_topk(queries, depth, exclude=known)
    else:
        lists = [index.topk(q, depth, exclude=known) for q in queries]
    rs = aggregate(lists, k, anchors=anchors if config.query_mode == "anchor" else [-1], buffer=depth)
    rs.anchors_sampled = sampled
    return post_process(rs, postprocess, k, basket=known)
