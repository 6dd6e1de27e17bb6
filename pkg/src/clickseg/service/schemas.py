"""Request/response models for the session API. The click JSON schema
({"pos": [z, y, x], "kind": "FG"|"BG", "ordinal": n}) is shared verbatim
with ClickList serialization and the browser UI."""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field


class ClickIn(BaseModel):
    pos: list[int] = Field(min_length=3, max_length=3)
    kind: Literal["FG", "BG"]
    ordinal: int | None = None


class ClickOut(BaseModel):
    pos: list[int]
    kind: Literal["FG", "BG"]
    ordinal: int


class CaseSummary(BaseModel):
    case_id: str
    tracer: str
    shape: list[int]
    spacing: list[float]
    n_lesions: int | None = None


class SessionCreate(BaseModel):
    case_id: str


class MetricsOut(BaseModel):
    dice: float
    fpv_ml: float
    fnv_ml: float


class PredictResponse(BaseModel):
    mask_version: int
    metrics: MetricsOut | None
    provenance: dict


class SessionState(BaseModel):
    session_id: str
    case_id: str
    clicks: list[ClickOut]
    mask_version: int
    metrics: MetricsOut | None = None
    n_fg: int
    n_bg: int
