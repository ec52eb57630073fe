"""User and dual-item embeddings trained by noise-contrastive estimation over triples."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .corpus import Vocabulary
from .triples import ZipfSampler, sample_negatives_batch

log = logging.getLogger(__name__)

MODEL_MAGIC = b"T2VM"
MODEL_VERSION = 1
_MODEL_HEADER = struct.Struct("<4sIQQI")
_FREQ_TAG = b"FREQ"


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TripleModel:
    """Embedding matrices: ``P`` anchor-item (n, d), ``Q`` dual-item (n, d), ``H`` user (m, d)."""

    P: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    vocabulary: Vocabulary | None = None
    item_counts: np.ndarray | None = None

    def __post_init__(self):
        if self.P.shape != self.Q.shape or self.P.ndim != 2:
            raise ValueError(f"P and Q must share an (n, d) shape, got {self.P.shape} and {self.Q.shape}")
        if self.H.ndim != 2 or self.H.shape[1] != self.P.shape[1]:
            raise ValueError(f"H must be (m, {self.P.shape[1]}), got {self.H.shape}")
        if self.vocabulary is not None and (
            self.vocabulary.item_count != self.n or self.vocabulary.user_count != self.m
        ):
            raise ValueError("vocabulary size does not match embedding rows")

    @property
    def d(self) -> int:
        return self.P.shape[1]

    @property
    def n(self) -> int:
        return self.P.shape[0]

    @property
    def m(self) -> int:
        return self.H.shape[0]

    def _check(self, u: int | None, *items: int) -> None:
        if u is not None and not 0 <= u < self.m:
            raise IndexError(f"user id {u} out of range [0, {self.m})")
        for i in items:
            if not 0 <= i < self.n:
                raise IndexError(f"item id {i} out of range [0, {self.n})")


def cohesion_score(model: TripleModel, u: int, i: int, j: int) -> float:
    model._check(u, i, j)
    p, q, h = model.P[i], model.Q[j], model.H[u]
    return float(p @ q + p @ h + q @ h)


def symmetric_score(model: TripleModel, u: int, i: int, j: int) -> float:
    """Average of the cohesion scores with the two items swapped."""
    return 0.5 * (cohesion_score(model, u, i, j) + cohesion_score(model, u, j, i))


class SparseGrad(NamedTuple):
    rows: np.ndarray
    values: np.ndarray


def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(_log_sigmoid(x))


def _scatter(rows: list[np.ndarray], values: list[np.ndarray], d: int) -> SparseGrad:
    flat_rows = np.concatenate([r.reshape(-1) for r in rows])
    flat_vals = np.concatenate([v.reshape(-1, d) for v in values])
    order = np.argsort(flat_rows, kind="stable")
    rows_sorted = flat_rows[order]
    starts = np.flatnonzero(np.r_[True, rows_sorted[1:] != rows_sorted[:-1]])
    return SparseGrad(rows_sorted[starts], np.add.reduceat(flat_vals[order], starts, axis=0))


def draw_negatives(
    triples: np.ndarray,
    k: int,
    item_sampler: ZipfSampler,
    user_sampler: ZipfSampler,
    rng: np.random.Generator,
) -> dict[str, np.ndarray]:
    """Noise ids for the three prediction terms; each row excludes its true target."""
    return {
        "i": sample_negatives_batch(item_sampler, triples[:, 1], k, rng),
        "j": sample_negatives_batch(item_sampler, triples[:, 2], k, rng),
        "u": sample_negatives_batch(user_sampler, triples[:, 0], k, rng),
    }


def nce_objective_and_gradients(
    model: TripleModel,
    triples: np.ndarray,
    negatives: dict[str, np.ndarray],
    item_sampler: ZipfSampler,
    user_sampler: ZipfSampler,
) -> tuple[float, dict[str, SparseGrad]]:
    """NCE loss and sparse gradients for a batch of (user, i, j) triples.

    Each triple contributes three binary discrimination terms: item ``i``
    given ``(j, u)``, item ``j`` given ``(i, u)`` and user ``u`` given
    ``(i, j)``. A candidate ``t`` with cohesion score ``s`` enters through the
    logit ``s - log(k * Pn(t))``. The loss is the negated mean over the
    ``3 * len(triples)`` terms, so gradients are of that mean.
    """
    if len(triples) == 0:
        raise ValueError("empty batch")
    u, i, j = triples[:, 0], triples[:, 1], triples[:, 2]
    if u.min() < 0 or u.max() >= model.m or min(i.min(), j.min()) < 0 or max(i.max(), j.max()) >= model.n:
        raise IndexError("triple id out of range")
    P, Q, H = model.P, model.Q, model.H
    d = model.d
    k = negatives["i"].shape[1]
    scale = 1.0 / (3 * len(triples))
    log_k = np.log(k) if k > 0 else 0.0

    pi, qj, hu = P[i], Q[j], H[u]
    labels = np.zeros((len(triples), k + 1))
    labels[:, 0] = 1.0

    def term(targets, emb, ctx, const, sampler):
        # score(t) = emb[t] . ctx + const
        vecs = emb[targets]
        s = np.einsum("btd,bd->bt", vecs, ctx) + const[:, None]
        x = s - (log_k + np.log(sampler.probability(targets)))
        loss = -(labels * _log_sigmoid(x) + (1.0 - labels) * _log_sigmoid(-x)).sum()
        g = (_sigmoid(x) - labels) * scale
        return loss, g, vecs

    t_i = np.concatenate([i[:, None], negatives["i"]], axis=1)
    loss_i, g_i, vp = term(t_i, P, qj + hu, np.einsum("bd,bd->b", qj, hu), item_sampler)
    t_j = np.concatenate([j[:, None], negatives["j"]], axis=1)
    loss_j, g_j, vq = term(t_j, Q, pi + hu, np.einsum("bd,bd->b", pi, hu), item_sampler)
    t_u = np.concatenate([u[:, None], negatives["u"]], axis=1)
    loss_u, g_u, vh = term(t_u, H, pi + qj, np.einsum("bd,bd->b", pi, qj), user_sampler)

    si, sj, su = g_i.sum(1)[:, None], g_j.sum(1)[:, None], g_u.sum(1)[:, None]
    wp = np.einsum("bt,btd->bd", g_i, vp)
    wq = np.einsum("bt,btd->bd", g_j, vq)
    wh = np.einsum("bt,btd->bd", g_u, vh)

    grads = {
        "P": _scatter(
            [t_i, i, i],
            [g_i[..., None] * (qj + hu)[:, None, :], wq + sj * hu, wh + su * qj],
            d,
        ),
        "Q": _scatter(
            [t_j, j, j],
            [g_j[..., None] * (pi + hu)[:, None, :], wp + si * hu, wh + su * pi],
            d,
        ),
        "H": _scatter(
            [t_u, u, u],
            [g_u[..., None] * (pi + qj)[:, None, :], wp + si * qj, wq + sj * pi],
            d,
        ),
    }
    return float((loss_i + loss_j + loss_u) * scale), grads


@dataclass
class TrainConfig:
    dim: int = 64
    learning_rate: float = 1.0
    batch_size: int = 1000
    max_epochs: int = 100
    negatives: int = 5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    init_scale: float | None = None
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.dim < 1 or self.batch_size < 1 or self.max_epochs < 0 or self.negatives < 1:
            raise ValueError("dim, batch_size and negatives must be positive; max_epochs non-negative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    @property
    def scale(self) -> float:
        return self.init_scale if self.init_scale is not None else 0.5 / self.dim


def init_model(
    n_users: int, n_items: int, config: TrainConfig, vocabulary: Vocabulary | None = None
) -> TripleModel:
    rng = np.random.default_rng(config.seed)
    s, d, dt = config.scale, config.dim, np.dtype(config.dtype)
    H = rng.uniform(-s, s, size=(n_users, d)).astype(dt)
    P = rng.uniform(-s, s, size=(n_items, d)).astype(dt)
    Q = rng.uniform(-s, s, size=(n_items, d)).astype(dt)
    return TripleModel(P=P, Q=Q, H=H, vocabulary=vocabulary)


class _LazyAdam:
    """Adam whose moment estimates only move for rows present in the gradient."""

    def __init__(self, shapes: dict[str, tuple[int, int]], config: TrainConfig, dtype):
        self.cfg = config
        self.m = {k: np.zeros(s, dtype=dtype) for k, s in shapes.items()}
        self.v = {k: np.zeros(s, dtype=dtype) for k, s in shapes.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, SparseGrad]) -> None:
        c = self.cfg
        self.t += 1
        lr = c.learning_rate * np.sqrt(1 - c.beta2**self.t) / (1 - c.beta1**self.t)
        for name, (rows, g) in grads.items():
            m = c.beta1 * self.m[name][rows] + (1 - c.beta1) * g
            v = c.beta2 * self.v[name][rows] + (1 - c.beta2) * g * g
            self.m[name][rows] = m
            self.v[name][rows] = v
            params[name][rows] -= (lr * m / (np.sqrt(v) + c.epsilon)).astype(params[name].dtype)


def train(
    triples: np.ndarray,
    n_users: int,
    n_items: int,
    config: TrainConfig,
    item_sampler: ZipfSampler,
    user_sampler: ZipfSampler,
    vocabulary: Vocabulary | None = None,
    callback: Callable[[int, float], None] | None = None,
) -> TripleModel:
    """Fit a TripleModel with shuffled mini-batches and lazy Adam.

    ``callback(epoch, mean_loss)`` fires after every epoch. The run is
    deterministic for a fixed ``config.seed``.
    """
    triples = np.asarray(triples, dtype=np.int64)
    if triples.size == 0:
        raise ValueError("no training triples")
    model = init_model(n_users, n_items, config, vocabulary)
    params = {"P": model.P, "Q": model.Q, "H": model.H}
    opt = _LazyAdam({k: v.shape for k, v in params.items()}, config, model.P.dtype)
    rng = np.random.default_rng([config.seed, 1])

    for epoch in range(config.max_epochs):
        order = rng.permutation(len(triples))
        total, batches = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            batch = triples[order[start:start + config.batch_size]]
            neg = draw_negatives(batch, config.negatives, item_sampler, user_sampler, rng)
            loss, grads = nce_objective_and_gradients(model, batch, neg, item_sampler, user_sampler)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} batch {batches} "
                    f"(learning_rate={config.learning_rate}); try a smaller rate"
                )
            opt.step(params, grads)
            total += loss
            batches += 1
        mean = total / batches
        for name, mat in params.items():
            if not np.isfinite(mat).all():
                raise TrainingDiverged(f"non-finite entries in {name} after epoch {epoch}")
        log.info("epoch %d loss %.6f", epoch, mean)
        if callback is not None:
            callback(epoch, mean)
    return model


def _pack_strings(strings: list[str]) -> bytes:
    out = bytearray(struct.pack("<Q", len(strings)))
    for s in strings:
        raw = s.encode("utf-8")
        out += struct.pack("<I", len(raw))
        out += raw
    return bytes(out)


def _unpack_strings(data: bytes, pos: int, path) -> tuple[list[str], int]:
    try:
        (count,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        strings = []
        for _ in range(count):
            (size,) = struct.unpack_from("<I", data, pos)
            pos += 4
            if pos + size > len(data):
                raise struct.error("string runs past end of file")
            strings.append(data[pos:pos + size].decode("utf-8"))
            pos += size
    except struct.error as exc:
        raise ValueError(f"{path}: truncated vocabulary table") from exc
    return strings, pos


def save_model(model: TripleModel, path: str | Path) -> None:
    """Write the model file: header, H/P/Q as row-major f32, vocabulary, optional item counts."""
    vocab = model.vocabulary
    if vocab is None:
        vocab = Vocabulary([f"u{k}" for k in range(model.m)], [f"i{k}" for k in range(model.n)])
    with open(path, "wb") as fh:
        fh.write(_MODEL_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, model.m, model.n, model.d))
        for mat in (model.H, model.P, model.Q):
            fh.write(np.ascontiguousarray(mat, dtype="<f4").tobytes())
        fh.write(_pack_strings(vocab.users))
        fh.write(_pack_strings(vocab.items))
        if model.item_counts is not None:
            fh.write(_FREQ_TAG)
            fh.write(np.asarray(model.item_counts, dtype="<u8").tobytes())


def read_model_header(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read(_MODEL_HEADER.size)
    if len(raw) < _MODEL_HEADER.size:
        raise ValueError(f"{path}: truncated model header")
    magic, version, m, n, d = _MODEL_HEADER.unpack(raw)
    if magic != MODEL_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, not a model file")
    if version != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {version}")
    return {"m": m, "n": n, "d": d}


def load_model(path: str | Path) -> TripleModel:
    header = read_model_header(path)
    m, n, d = header["m"], header["n"], header["d"]
    data = Path(path).read_bytes()
    pos = _MODEL_HEADER.size
    mats = []
    for rows in (m, n, n):
        size = rows * d * 4
        if pos + size > len(data):
            raise ValueError(f"{path}: truncated embedding block")
        mats.append(np.frombuffer(data, dtype="<f4", count=rows * d, offset=pos).reshape(rows, d).astype(np.float32))
        pos += size
    users, pos = _unpack_strings(data, pos, path)
    items, pos = _unpack_strings(data, pos, path)
    if len(users) != m or len(items) != n:
        raise ValueError(f"{path}: vocabulary size disagrees with header")
    counts = None
    if pos < len(data):
        if data[pos:pos + 4] != _FREQ_TAG or len(data) != pos + 4 + 8 * n:
            raise ValueError(f"{path}: unrecognized trailing data")
        counts = np.frombuffer(data, dtype="<u8", count=n, offset=pos + 4).astype(np.int64)
    H, P, Q = mats
    return TripleModel(P=P, Q=Q, H=H, vocabulary=Vocabulary(users, items), item_counts=counts)
