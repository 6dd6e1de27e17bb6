"""In-memory session store with JSON snapshot persistence.

Each session serializes its own mutations behind a lock; prediction runs
are additionally funneled through the service-wide semaphore so only one
heavy inference runs at a time.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from ..guidance import MAX_CLICKS_PER_KIND, Click, ClickList
from ..volumes import ImageGrid


class ClickLimitError(Exception):
    pass


class OutOfBoundsError(Exception):
    pass


@dataclass
class Session:
    session_id: str
    case_id: str
    grid: ImageGrid
    clicks: list[Click] = field(default_factory=list)  # insertion order
    mask: object = None  # latest binary mask (np.ndarray) for overlays
    mask_version: int = 0
    metrics: dict | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)

    def count(self, kind: str) -> int:
        return sum(1 for c in self.clicks if c.kind == kind)

    def click_list(self) -> ClickList:
        return ClickList(list(self.clicks), self.grid)

    def add_click(self, pos, kind: str, ordinal: int | None) -> Click:
        next_ordinal = self.count(kind)
        if next_ordinal >= MAX_CLICKS_PER_KIND:
            raise ClickLimitError(
                f"click limit reached: at most {MAX_CLICKS_PER_KIND} {kind} "
                f"clicks per session")
        if ordinal is not None and ordinal != next_ordinal:
            raise OutOfBoundsError(
                f"ordinal {ordinal} out of sequence, expected {next_ordinal}")
        if not self.grid.contains(pos):
            raise OutOfBoundsError(
                f"click {list(pos)} outside volume {list(self.grid.shape)}")
        click = Click(tuple(int(p) for p in pos), kind, next_ordinal)
        self.clicks.append(click)
        return click

    def undo_last(self) -> Click | None:
        if not self.clicks:
            return None
        return self.clicks.pop()

    def to_snapshot(self) -> dict:
        return {
            "session_id": self.session_id,
            "case_id": self.case_id,
            "clicks": [c.to_json() for c in self.clicks],
            "mask_version": self.mask_version,
            "metrics": self.metrics,
        }


class SessionStore:
    def __init__(self, snapshot_dir: Path | None = None):
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()
        self.snapshot_dir = Path(snapshot_dir) if snapshot_dir else None
        if self.snapshot_dir:
            self.snapshot_dir.mkdir(parents=True, exist_ok=True)

    def create(self, case_id: str, grid: ImageGrid) -> Session:
        session = Session(session_id=uuid.uuid4().hex[:12], case_id=case_id,
                          grid=grid)
        with self._lock:
            self._sessions[session.session_id] = session
        self.snapshot(session)
        return session

    def get(self, session_id: str) -> Session | None:
        with self._lock:
            return self._sessions.get(session_id)

    def snapshot(self, session: Session) -> None:
        if self.snapshot_dir is None:
            return
        path = self.snapshot_dir / f"{session.session_id}.json"
        with open(path, "w") as f:
            json.dump(session.to_snapshot(), f)
