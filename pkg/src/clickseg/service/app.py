"""The interactive session service: cases, PNG slices, click sessions, and
on-demand prediction with metrics. This is the surface the browser viewer
drives; predictions use fixed mirror axes so a session replay reproduces
identical masks."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, HTTPException, Query, Response, status
from fastapi.staticfiles import StaticFiles

from ..data import Dataset, LoadedCase, load_case
from ..inference import ModelRegistry, PredictConfig, predict_case
from ..metrics import evaluate
from .rendering import (
    CT_WINDOW,
    PET_WINDOW,
    extract_slice,
    guidance_slice,
    render_slice_png,
)
from .schemas import (
    CaseSummary,
    ClickIn,
    ClickOut,
    MetricsOut,
    PredictResponse,
    SessionCreate,
    SessionState,
)
from .sessions import ClickLimitError, OutOfBoundsError, SessionStore


@dataclass
class AppState:
    dataset: Dataset
    registry: ModelRegistry
    predict_cfg: PredictConfig
    sessions: SessionStore = field(default_factory=SessionStore)
    predict_semaphore: threading.Semaphore = field(
        default_factory=lambda: threading.Semaphore(1))
    _case_cache: dict = field(default_factory=dict)
    _cache_lock: threading.Lock = field(default_factory=threading.Lock)

    def case(self, case_id: str) -> LoadedCase:
        with self._cache_lock:
            if case_id not in self._case_cache:
                try:
                    record = self.dataset.record(case_id)
                except KeyError:
                    raise HTTPException(404, f"unknown case {case_id!r}")
                self._case_cache[case_id] = load_case(record)
            return self._case_cache[case_id]


def _session_state(session) -> SessionState:
    return SessionState(
        session_id=session.session_id,
        case_id=session.case_id,
        clicks=[ClickOut(**c.to_json()) for c in session.clicks],
        mask_version=session.mask_version,
        metrics=MetricsOut(**session.metrics) if session.metrics else None,
        n_fg=session.count("FG"),
        n_bg=session.count("BG"),
    )


def create_app(state: AppState, frontend_dir: Path | None = None) -> FastAPI:
    app = FastAPI(title="clickseg session service", version="0.1.0")
    app.state.clickseg = state

    @app.get("/cases", response_model=list[CaseSummary])
    def list_cases():
        out = []
        for r in state.dataset.records:
            grid = state.dataset.manifest.get("grid", {})
            out.append(CaseSummary(
                case_id=r.case_id, tracer=r.tracer,
                shape=list(grid.get("shape", [])),
                spacing=list(grid.get("spacing", [])),
                n_lesions=r.n_lesions))
        return out

    @app.get("/cases/{case_id}/slice")
    def case_slice(case_id: str,
                   plane: str = Query("axial"),
                   index: int = Query(0),
                   channel: str = Query("CT"),
                   overlay: str = Query(""),
                   session_id: str | None = Query(None),
                   ct_low: float = Query(CT_WINDOW[0]),
                   ct_high: float = Query(CT_WINDOW[1]),
                   pet_low: float = Query(PET_WINDOW[0]),
                   pet_high: float = Query(PET_WINDOW[1])):
        case = state.case(case_id)
        try:
            ct_slice = extract_slice(case.ct.values, plane, index)
            pet_slice = extract_slice(case.pet.values, plane, index)
        except (ValueError, IndexError) as exc:
            raise HTTPException(422, str(exc))

        wanted = {w.strip() for w in overlay.split(",") if w.strip()}
        unknown = wanted - {"mask", "fg", "bg"}
        if unknown:
            raise HTTPException(422, f"unknown overlays: {sorted(unknown)}")
        mask_slice = fg_slice = bg_slice = None
        if wanted & {"mask", "fg", "bg"}:
            if session_id is None:
                raise HTTPException(422, "overlays need a session_id")
            session = state.sessions.get(session_id)
            if session is None:
                raise HTTPException(404, f"unknown session {session_id!r}")
            if "mask" in wanted and session.mask is not None:
                mask_slice = extract_slice(session.mask, plane, index)
            gcfg = state.predict_cfg.guidance
            if "fg" in wanted:
                fg_slice = guidance_slice(session.clicks, "FG", case.grid,
                                          plane, index, gcfg)
            if "bg" in wanted:
                bg_slice = guidance_slice(session.clicks, "BG", case.grid,
                                          plane, index, gcfg)

        png = render_slice_png(ct_slice, pet_slice, channel=channel,
                               ct_window=(ct_low, ct_high),
                               pet_window=(pet_low, pet_high),
                               mask_slice=mask_slice, fg_slice=fg_slice,
                               bg_slice=bg_slice)
        return Response(content=png, media_type="image/png")

    @app.post("/sessions", response_model=SessionState,
              status_code=status.HTTP_201_CREATED)
    def create_session(body: SessionCreate):
        case = state.case(body.case_id)
        session = state.sessions.create(body.case_id, case.grid)
        return _session_state(session)

    def _get_session(session_id: str):
        session = state.sessions.get(session_id)
        if session is None:
            raise HTTPException(404, f"unknown session {session_id!r}")
        return session

    @app.post("/sessions/{session_id}/clicks", response_model=ClickOut,
              status_code=status.HTTP_201_CREATED)
    def add_click(session_id: str, body: ClickIn):
        session = _get_session(session_id)
        with session.lock:
            try:
                click = session.add_click(body.pos, body.kind, body.ordinal)
            except ClickLimitError as exc:
                raise HTTPException(409, str(exc))
            except OutOfBoundsError as exc:
                raise HTTPException(422, str(exc))
            state.sessions.snapshot(session)
        return ClickOut(**click.to_json())

    @app.delete("/sessions/{session_id}/clicks/last",
                response_model=ClickOut)
    def undo_click(session_id: str):
        session = _get_session(session_id)
        with session.lock:
            removed = session.undo_last()
            if removed is None:
                raise HTTPException(404, "no clicks to undo")
            state.sessions.snapshot(session)
        return ClickOut(**removed.to_json())

    @app.post("/sessions/{session_id}/predict",
              response_model=PredictResponse)
    def predict(session_id: str):
        session = _get_session(session_id)
        case = state.case(session.case_id)
        with session.lock:
            clicks = session.click_list()
        with state.predict_semaphore:
            mask, provenance = predict_case(case, None, state.registry,
                                            state.predict_cfg, clicks=clicks)
        metrics = None
        if case.lesion_gt is not None:
            metrics = evaluate(mask.labels > 0, case.lesion_gt.foreground(),
                               case.grid).to_dict()
        with session.lock:
            session.mask = mask.labels > 0
            session.mask_version += 1
            session.metrics = metrics
            state.sessions.snapshot(session)
            version = session.mask_version
        return PredictResponse(
            mask_version=version,
            metrics=MetricsOut(**metrics) if metrics else None,
            provenance=provenance)

    @app.get("/sessions/{session_id}/state", response_model=SessionState)
    def session_state(session_id: str):
        return _session_state(_get_session(session_id))

    if frontend_dir is not None and Path(frontend_dir).exists():
        app.mount("/", StaticFiles(directory=frontend_dir, html=True),
                  name="viewer")
    return app
