"""HTTP JSON API for session-based interactive search: accumulate labels,
fit-and-query against the loaded index set, refine, repeat."""

from __future__ import annotations

import json
import threading
import time
import uuid
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from sbc.core import ConfigError, DomainError, LabeledDataset
from sbc.dbranch import DBranchConfig
from sbc import engine

__all__ = ["create_app", "SessionState"]

MAX_LABEL_BATCH = 1_000_000


class SessionConfig(BaseModel):
    variant: str = "B"
    p: Optional[int] = None         # default: round(sqrt(k))
    mu: int = 1
    p_m: int = 20
    M: int = Field(default=1, ge=1)
    seed: int = 0


class LabelItem(BaseModel):
    id: int
    label: int = Field(ge=0, le=1)


class QueryBody(BaseModel):
    random_negatives: int = Field(default=0, ge=0)
    seed: Optional[int] = None


@dataclass
class SessionState:
    session_id: str
    config: SessionConfig
    labels: dict = field(default_factory=dict)     # catalog id -> 0/1
    last_result: Optional[dict] = None
    created: float = field(default_factory=time.time)
    updated: float = field(default_factory=time.time)


def _pca_projection(features: np.ndarray, sample_cap: int = 20_000) -> np.ndarray:
    """First two principal components, display-only."""
    n = features.shape[0]
    rng = np.random.default_rng(0)
    sample = features if n <= sample_cap else \
        features[rng.choice(n, size=sample_cap, replace=False)]
    mean = sample.mean(axis=0)
    _, _, vt = np.linalg.svd(sample - mean, full_matrices=False)
    comps = vt[:2] if vt.shape[0] >= 2 else np.vstack([vt, np.zeros((1, vt.shape[1]))])
    return (features - mean) @ comps.T


def _ok(data, seed=None, timings=None, status_code: int = 200) -> JSONResponse:
    return JSONResponse(
        {"ok": True, "data": data, "seed": seed, "timings": timings},
        status_code=status_code,
    )


def create_app(index_dir, catalog_path, static_dir=None,
               snapshot_path=None) -> FastAPI:
    iset = engine.load_index_set(index_dir)
    catalog_path = Path(catalog_path)
    if catalog_path.suffix == ".csv":
        catalog = engine.load_catalog_csv(catalog_path)
    else:
        catalog = engine.load_catalog_packed(catalog_path, mmap=True)
    projection = _pca_projection(catalog.features)
    id_to_row = {int(i): r for r, i in enumerate(catalog.ids)}

    sessions: dict = {}
    lock = threading.Lock()

    @asynccontextmanager
    async def lifespan(_app: FastAPI):
        yield
        if snapshot_path:
            with lock:
                blob = {
                    sid: {"labels": s.labels, "config": s.config.model_dump()}
                    for sid, s in sessions.items()
                }
            with open(snapshot_path, "w") as fh:
                json.dump(blob, fh)

    app = FastAPI(title="search-by-classification service", lifespan=lifespan)

    @app.exception_handler(HTTPException)
    async def http_error(_req: Request, exc: HTTPException):
        return JSONResponse(
            {"ok": False, "error": exc.detail, "seed": None, "timings": None},
            status_code=exc.status_code,
        )

    @app.exception_handler(RequestValidationError)
    async def validation_error(_req: Request, exc: RequestValidationError):
        return JSONResponse(
            {"ok": False, "error": str(exc.errors()), "seed": None, "timings": None},
            status_code=422,
        )

    def get_session(session_id: str) -> SessionState:
        with lock:
            session = sessions.get(session_id)
        if session is None:
            raise HTTPException(404, f"unknown session {session_id}")
        return session

    @app.post("/sessions")
    async def create_session(config: SessionConfig):
        if config.variant not in ("B", "Ts", "Ta"):
            raise HTTPException(422, f"unknown variant {config.variant}")
        if config.variant == "Ta" and iset.layout != "Ta":
            raise HTTPException(422, "variant Ta requires indexes with the Ta layout")
        session = SessionState(session_id=uuid.uuid4().hex, config=config)
        with lock:
            sessions[session.session_id] = session
        return _ok({"session_id": session.session_id}, seed=config.seed)

    @app.post("/sessions/{session_id}/labels")
    async def add_labels(session_id: str, items: List[LabelItem]):
        session = get_session(session_id)
        if len(items) > MAX_LABEL_BATCH:
            raise HTTPException(413, f"label batch exceeds {MAX_LABEL_BATCH}")
        seen = set()
        for item in items:
            if item.id in seen:
                raise HTTPException(400, f"duplicate id {item.id} in one batch")
            seen.add(item.id)
            if item.id not in id_to_row:
                raise HTTPException(422, f"id {item.id} not in catalog")
        with lock:
            for item in items:
                session.labels[item.id] = item.label
            session.updated = time.time()
            n_pos = sum(1 for v in session.labels.values() if v == 1)
            n_neg = len(session.labels) - n_pos
        return _ok({"n_labels": len(session.labels), "n_pos": n_pos, "n_neg": n_neg})

    @app.post("/sessions/{session_id}/query")
    async def run_query(session_id: str, body: QueryBody = None):
        body = body or QueryBody()
        session = get_session(session_id)
        with lock:
            labels = dict(session.labels)
        n_pos = sum(1 for v in labels.values() if v == 1)
        if n_pos == 0:
            raise HTTPException(422, "label at least one positive before querying")
        seed = body.seed if body.seed is not None else session.config.seed
        rows = [id_to_row[i] for i in labels]
        y = np.asarray([labels[i] for i in labels], dtype=np.uint8)
        ids = np.asarray(list(labels), dtype=np.uint64)
        X = catalog.features[rows]
        if body.random_negatives:
            rng = np.random.default_rng(seed)
            pool = np.setdiff1d(catalog.ids, ids)
            extra = rng.choice(pool, size=min(body.random_negatives, pool.size),
                               replace=False)
            extra_rows = [id_to_row[int(i)] for i in extra]
            X = np.vstack([X, catalog.features[extra_rows]])
            y = np.concatenate([y, np.zeros(len(extra_rows), dtype=np.uint8)])
            ids = np.concatenate([ids, extra.astype(np.uint64)])
        dataset = LabeledDataset(X, y, ids)
        k = len(iset.subsets)
        p = session.config.p or max(1, int(round(np.sqrt(k))))
        cfg = DBranchConfig(
            subsets=iset.subsets, p=min(p, k), mu=session.config.mu,
            variant=session.config.variant, p_m=session.config.p_m, rng_seed=seed,
        )
        try:
            result = engine.process_query(iset, dataset, cfg,
                                          ensemble_size=session.config.M)
        except (DomainError, ConfigError) as exc:
            raise HTTPException(422, str(exc)) from exc
        data = {
            "positive_ids": [int(i) for i in result.positive_ids],
            "per_branch_counts": result.per_branch_counts,
        }
        with lock:
            session.last_result = data
            session.updated = time.time()
        return _ok(data, seed=seed, timings=result.timings)

    @app.get("/sessions/{session_id}")
    async def session_state(session_id: str):
        session = get_session(session_id)
        with lock:
            data = {
                "session_id": session.session_id,
                "config": session.config.model_dump(),
                "labels": [{"id": i, "label": v} for i, v in sorted(session.labels.items())],
                "last_result": session.last_result,
                "created": session.created,
                "updated": session.updated,
            }
        return _ok(data)

    @app.get("/catalog/points")
    async def catalog_points(ids: str = ""):
        if not ids.strip():
            raise HTTPException(422, "pass ?ids=1,2,3")
        try:
            wanted = [int(tok) for tok in ids.split(",") if tok.strip()]
        except ValueError as exc:
            raise HTTPException(422, f"bad id list: {exc}") from exc
        points = []
        for i in wanted:
            row = id_to_row.get(i)
            if row is None:
                raise HTTPException(404, f"id {i} not in catalog")
            points.append({
                "id": i,
                "features": [float(v) for v in catalog.features[row]],
                "x": float(projection[row, 0]),
                "y": float(projection[row, 1]),
            })
        return _ok({"points": points})

    @app.get("/catalog/summary")
    async def catalog_summary():
        return _ok({
            "n": catalog.n,
            "d": catalog.d,
            "k": len(iset.subsets),
            "D": iset.manifest["D"],
            "layout": iset.layout,
            "ids": [int(i) for i in catalog.ids] if catalog.n <= 200_000 else [],
            "projection": projection.round(6).tolist() if catalog.n <= 200_000 else [],
        })

    static = Path(static_dir) if static_dir else Path("frontend/dist")
    if static.is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static, html=True), name="static")

    return app
