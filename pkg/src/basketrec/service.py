"""HTTP recommendation service over a loaded model and catalog index."""

from __future__ import annotations

import asyncio
import logging
import secrets
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.concurrency import run_in_threadpool
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .corpus import FrequencyTable
from .index import CatalogIndex, load_index
from .model import TripleModel, load_model
from .recommend import BasketContext, PostProcessConfig, RecommendConfig, recommend

log = logging.getLogger(__name__)

MAX_K = 500


class ServiceStartupError(RuntimeError):
    pass


@dataclass
class ServiceConfig:
    model_path: Path
    index_path: Path
    postprocess_path: Path | None = None
    host: str = "127.0.0.1"
    port: int = 8080
    default_k: int = 20
    anchor_threshold: int = 6
    seed_mode: str = "fixed"
    seed: int = 0
    timeout_s: float = 2.0

    def validate(self) -> None:
        for label, p in (("model", self.model_path), ("index", self.index_path), ("post-process config", self.postprocess_path)):
            if p is not None and not Path(p).is_file():
                raise ServiceStartupError(f"{label} file not found: {p}")
        if self.seed_mode not in ("fixed", "per-request"):
            raise ServiceStartupError(f"seed_mode must be 'fixed' or 'per-request', got {self.seed_mode!r}")
        if not 1 <= self.default_k <= MAX_K:
            raise ServiceStartupError(f"default_k must be in [1, {MAX_K}]")


class RecommendRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    user_id: str | None = None
    basket: list[str]
    k: int | None = Field(default=None, ge=1, le=MAX_K)


class RecommendedItem(BaseModel):
    item_id: str
    score: float


class ResponseFlags(BaseModel):
    fallback: bool
    unknown_items: list[str]


class RecommendResponse(BaseModel):
    items: list[RecommendedItem]
    flags: ResponseFlags
    latency_ms: float


class RecommenderService:
    """Holds the immutable model/index pair; handlers are safe to call from many threads."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.model: TripleModel | None = None
        self.index: CatalogIndex | None = None
        self.postprocess: PostProcessConfig | None = None
        self.freq: FrequencyTable | None = None
        self.ready = False
        self._lock = threading.Lock()
        self.requests_served = 0

    def load(self) -> "RecommenderService":
        cfg = self.config
        cfg.validate()
        try:
            model = load_model(cfg.model_path)
        except (OSError, ValueError) as exc:
            raise ServiceStartupError(f"cannot load model {cfg.model_path}: {exc}") from exc
        try:
            index = load_index(cfg.index_path)
        except (OSError, ValueError) as exc:
            raise ServiceStartupError(f"cannot load index {cfg.index_path}: {exc}") from exc
        want = 4 * model.d if index.layout == "symmetric" else 2 * model.d
        if index.n != model.n or index.dim != want:
            raise ServiceStartupError(
                f"index {cfg.index_path} ({index.n} x {index.dim}) does not match model "
                f"{cfg.model_path} ({model.n} items, d={model.d})"
            )
        if cfg.postprocess_path is not None:
            try:
                self.postprocess = PostProcessConfig.load(cfg.postprocess_path, model.vocabulary)
            except (OSError, ValueError) as exc:
                raise ServiceStartupError(f"cannot load post-process config {cfg.postprocess_path}: {exc}") from exc
        counts = model.item_counts if model.item_counts is not None else np.zeros(model.n, dtype=np.int64)
        self.freq = FrequencyTable.from_counts(counts)
        self.model, self.index = model, index
        # compile the retrieval kernels before reporting ready
        if model.n:
            recommend(model, index, BasketContext(items=(0,), k=1), RecommendConfig(seed=cfg.seed), None, self.freq)
        self.ready = True
        log.info("loaded model n=%d m=%d d=%d, %s index", model.n, model.m, model.d, index.backend)
        return self

    def handle_health(self) -> dict:
        if not self.ready:
            return {"status": "loading"}
        m = self.model
        return {
            "status": "ready",
            "model": {"n": m.n, "m": m.m, "d": m.d, "backend": self.index.backend, "layout": self.index.layout},
            "requests_served": self.requests_served,
        }

    def handle_recommend(self, body: dict | RecommendRequest) -> dict:
        """Validate, map external ids, run the pipeline, map back. Raises ``ValueError`` on bad input."""
        t0 = time.perf_counter()
        if not self.ready:
            raise RuntimeError("service not ready")
        req = body if isinstance(body, RecommendRequest) else RecommendRequest.model_validate(body)
        vocab = self.model.vocabulary
        k = req.k if req.k is not None else self.config.default_k

        user = vocab.user_id(req.user_id) if req.user_id is not None else None
        items, unknown = [], []
        for ext in req.basket:
            idx = vocab.item_id(ext)
            if idx is None:
                if ext not in unknown:
                    unknown.append(ext)
            else:
                items.append(idx)

        seed = self.config.seed if self.config.seed_mode == "fixed" else secrets.randbits(63)
        rcfg = RecommendConfig(anchor_threshold=self.config.anchor_threshold, seed=seed)
        ctx = BasketContext(items=tuple(sorted(set(items))), user=user, k=k)
        rs = recommend(self.model, self.index, ctx, rcfg, self.postprocess, self.freq)

        with self._lock:
            self.requests_served += 1
        return {
            "items": [{"item_id": vocab.items[e.item], "score": e.score} for e in rs.entries],
            "flags": {"fallback": rs.fallback, "unknown_items": unknown},
            "latency_ms": (time.perf_counter() - t0) * 1e3,
        }


def create_app(service: RecommenderService) -> FastAPI:
    app = FastAPI(title="basketrec", version="0.1.0")

    @app.exception_handler(Exception)
    async def opaque_error(request: Request, exc: Exception):
        log.exception("unhandled error on %s", request.url.path)
        return JSONResponse(status_code=500, content={"detail": "internal error"})

    @app.get("/v1/health")
    async def health():
        body = service.handle_health()
        return JSONResponse(status_code=200 if service.ready else 503, content=body)

    @app.post("/v1/recommendations", response_model=RecommendResponse)
    async def recommendations(req: RecommendRequest):
        if not service.ready:
            raise HTTPException(status_code=503, detail="loading")
        try:
            return await asyncio.wait_for(
                run_in_threadpool(service.handle_recommend, req), service.config.timeout_s
            )
        except asyncio.TimeoutError:
            raise HTTPException(status_code=504, detail="request timed out") from None
        except ValidationError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from None

    return app


def start(config: ServiceConfig) -> None:
    """Load artifacts (failing fast), then serve until interrupted. Restart to pick up new artifacts."""
    import uvicorn

    service = RecommenderService(config).load()
    uvicorn.run(create_app(service), host=config.host, port=config.port, log_level="info")
