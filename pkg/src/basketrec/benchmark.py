"""Latency measurement of retrieval and of the full recommend path."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .index import CatalogIndex
from .model import TripleModel
from .recommend import BasketContext, RecommendConfig, recommend
from .synthetic import random_baskets

CSV_HEADER = ("backend", "basket_size", "mean_ms", "p50_ms", "p99_ms")


@dataclass(frozen=True)
class LatencyRow:
    backend: str
    basket_size: int
    mean_ms: float
    p50_ms: float
    p99_ms: float

    @classmethod
    def from_samples(cls, backend: str, basket_size: int, samples_ms: Sequence[float]) -> "LatencyRow":
        a = np.asarray(samples_ms, dtype=np.float64)
        return cls(backend, basket_size, float(a.mean()), float(np.percentile(a, 50)), float(np.percentile(a, 99)))


def benchmark_latency(
    model: TripleModel,
    indexes: Mapping[str, CatalogIndex],
    basket_sizes: Sequence[int],
    repetitions: int,
    k: int = 20,
    seed: int = 0,
    config: RecommendConfig | None = None,
) -> list[LatencyRow]:
    """Time ``recommend()`` on synthetic baskets for every backend and basket size.

    Each backend sees the same baskets. One untimed warm-up call per backend
    absorbs JIT compilation.
    """
    if repetitions <= 0:
        return []
    config = config or RecommendConfig(seed=seed)
    rows = []
    for name, index in indexes.items():
        warm = BasketContext(items=(0,), user=0 if model.m else None, k=k)
        recommend(model, index, warm, config)
        for size in basket_sizes:
            baskets = random_baskets(model.n, max(model.m, 1), size, repetitions, seed=seed + size)
            samples = []
            for user, items in baskets:
                ctx = BasketContext(items=items, user=user if model.m else None, k=k)
                t0 = time.perf_counter()
                recommend(model, index, ctx, config)
                samples.append((time.perf_counter() - t0) * 1e3)
            rows.append(LatencyRow.from_samples(name, size, samples))
    return rows


def retrieval_latency(index: CatalogIndex, queries: np.ndarray, k: int, batch: bool = False) -> np.ndarray:
    """Per-query milliseconds for single-query ``topk`` calls, or one ``batch_topk`` call amortized."""
    index.topk(queries[0], k)
    if batch:
        t0 = time.perf_counter()
        index.batch_topk(queries, k)
        return np.full(len(queries), (time.perf_counter() - t0) * 1e3 / len(queries))
    out = np.empty(len(queries))
    for t, q in enumerate(queries):
        t0 = time.perf_counter()
        index.topk(q, k)
        out[t] = (time.perf_counter() - t0) * 1e3
    return out


def write_latency_csv(rows: Sequence[LatencyRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in rows:
            writer.writerow([r.backend, r.basket_size, f"{r.mean_ms:.4f}", f"{r.p50_ms:.4f}", f"{r.p99_ms:.4f}"])
