"""Session server for interactive labeling on a live embedding.

Exposes optimization sessions over HTTP plus a binary WebSocket position
stream, applying the same action accounting as the emulator: selecting a
focus costs 1 action, the first slider set within an event costs 1 (later
re-adjustments are free), every deselect costs 1, and applying a label
writes the current class to all selected unlabeled points and closes the
event. Selection state lives server-side so the accounting is
authoritative; the UI only renders what the server reports.

Stream frame layout (little-endian): epoch u32, N u32, d u8, then N*d
float32 positions, then an annotation delta block of count u32 followed by
(index u32, class u16) pairs. A new subscriber's first frame carries the
full annotation state as its delta block.
"""

from __future__ import annotations

import asyncio
import csv
import dataclasses
import io
import struct
import time
import uuid
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import Body, FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from fastapi.responses import FileResponse

from .dataset import Dataset, load_dataset
from .emulator import ActionLog, exact_knn
from .engine import Engine, TsneConfig

MAX_WIRE_CLASS = 0xFFFF
DEFAULT_THROTTLE_EPS = 60.0

_CONFIG_TUPLE_FIELDS = ("alpha_epochs", "momentum_lo_hi")


def config_from_dict(payload: dict | None) -> TsneConfig:
    """Build a TsneConfig from a JSON object, rejecting unknown fields."""
    payload = dict(payload or {})
    valid = {f.name for f in dataclasses.fields(TsneConfig)}
    kwargs = {}
    for key, value in payload.items():
        if key not in valid:
            raise ValueError(f"unknown config field {key!r}")
        if key in _CONFIG_TUPLE_FIELDS:
            value = tuple(value)
        kwargs[key] = value
    return TsneConfig(**kwargs)


def pack_frame(epoch: int, positions: np.ndarray,
               deltas: list[tuple[int, int]]) -> bytes:
    """Encode one stream frame; positions are downcast to float32."""
    n, d = positions.shape
    parts = [struct.pack("<IIB", epoch, n, d),
             np.ascontiguousarray(positions, dtype="<f4").tobytes(),
             struct.pack("<I", len(deltas))]
    for index, class_id in deltas:
        parts.append(struct.pack("<IH", index, class_id))
    return b"".join(parts)


def parse_labels_tsv(text: str) -> list[tuple[int, str]]:
    """Inverse of the export format: header line, then index<TAB>class rows."""
    lines = text.splitlines()
    if not lines or lines[0] != "index\tclass":
        raise ValueError("missing labels export header")
    out = []
    for line in lines[1:]:
        if not line:
            continue
        index, name = line.split("\t")
        out.append((int(index), name))
    return out


@dataclass
class _Subscriber:
    queue: asyncio.Queue
    cursor: int = 0


@dataclass
class _OpenEvent:
    epoch: int
    focus: int
    k: int = 0
    slider_charged: bool = False
    deselected: set = field(default_factory=set)
    selection: list = field(default_factory=list)
    actions: int = 1
    labels: int = 0


class LabelSession:
    """One dataset + engine + annotation session with a single writer."""

    def __init__(self, session_id: str, dataset: Dataset, engine: Engine,
                 throttle_eps: float = DEFAULT_THROTTLE_EPS):
        self.id = session_id
        self.dataset = dataset
        self.engine = engine
        self.throttle_eps = throttle_eps
        self.lock = asyncio.Lock()
        self.running = False
        self.closed = False
        self._run_task: asyncio.Task | None = None
        self.cumulative_labels = 0
        self.cumulative_actions = 0
        self.annotation_writes: list[tuple[int, int]] = []
        self.subscribers: list[_Subscriber] = []
        self.event_rows: list[dict] = []
        self.open_event: _OpenEvent | None = None

    # ------------------------------------------------------------------ #
    # action accounting

    def _flush_open_event(self) -> None:
        """Abandoned events keep their accrued actions in the log so the
        exported cumulative columns always match the live counters."""
        ev = self.open_event
        if ev is not None:
            self.event_rows.append({"epoch": ev.epoch, "focus": ev.focus,
                                    "chosen_k": ev.k, "labels": ev.labels,
                                    "actions": ev.actions})
            self.open_event = None

    def select_focus(self, v: int) -> None:
        if not 0 <= v < self.engine.n:
            raise HTTPException(400, f"sample {v} out of range")
        self._flush_open_event()
        self.cumulative_actions += 1
        self.open_event = _OpenEvent(epoch=self.engine.epoch, focus=int(v),
                                     selection=[int(v)])

    def set_k(self, k: int) -> list[int]:
        ev = self.open_event
        if ev is None:
            raise HTTPException(409, "no focus selected")
        if not 0 <= k <= self.engine.n - 1:
            raise HTTPException(400, f"k must be in [0, {self.engine.n - 1}]")
        if not ev.slider_charged:
            ev.slider_charged = True
            ev.actions += 1
            self.cumulative_actions += 1
        neighbors = [int(j) for j in exact_knn(self.engine.state.y, ev.focus, k)]
        ev.k = int(k)
        ev.selection = [ev.focus] + [j for j in neighbors if j not in ev.deselected]
        return neighbors

    def deselect(self, j: int) -> None:
        ev = self.open_event
        if ev is None:
            raise HTTPException(409, "no focus selected")
        if j == ev.focus:
            raise HTTPException(400, "cannot deselect the focus sample")
        if j not in ev.selection:
            raise HTTPException(400, f"sample {j} is not selected")
        ev.deselected.add(int(j))
        ev.selection.remove(int(j))
        ev.actions += 1
        self.cumulative_actions += 1

    def apply_label(self, class_id: int) -> int:
        ev = self.open_event
        if ev is None:
            raise HTTPException(409, "no focus selected")
        if not ev.selection:
            raise HTTPException(400, "selection is empty")
        if not 0 <= class_id <= MAX_WIRE_CLASS:
            raise HTTPException(400, f"class id must be in [0, {MAX_WIRE_CLASS}]")
        if self.dataset.n_classes and class_id >= self.dataset.n_classes:
            raise HTTPException(400, f"unknown class id {class_id}")
        written = 0
        for idx in ev.selection:
            if self.engine.annotations.c[idx] < 0:
                self.engine.label(idx, class_id)
                self.annotation_writes.append((int(idx), int(class_id)))
                written += 1
        ev.labels = written
        self.cumulative_labels += written
        self.event_rows.append({"epoch": ev.epoch, "focus": ev.focus,
                                "chosen_k": ev.k, "labels": ev.labels,
                                "actions": ev.actions})
        self.open_event = None
        return written

    # ------------------------------------------------------------------ #
    # streaming

    def broadcast(self) -> None:
        y = self.engine.state.y
        epoch = self.engine.epoch
        for sub in self.subscribers:
            deltas = self.annotation_writes[sub.cursor:]
            sub.cursor = len(self.annotation_writes)
            sub.queue.put_nowait(pack_frame(epoch, y, deltas))

    def subscribe(self) -> tuple[_Subscriber, bytes]:
        """Register a subscriber; its first frame carries the full
        annotation state."""
        sub = _Subscriber(queue=asyncio.Queue())
        snapshot = pack_frame(self.engine.epoch, self.engine.state.y,
                              list(self.annotation_writes))
        sub.cursor = len(self.annotation_writes)
        self.subscribers.append(sub)
        return sub, snapshot

    def close(self) -> None:
        self.closed = True
        self.running = False
        for sub in self.subscribers:
            sub.queue.put_nowait(None)

    # ------------------------------------------------------------------ #
    # stepping

    async def advance(self, epochs: int, throttled: bool) -> int:
        period = 1.0 / self.throttle_eps if throttled and self.throttle_eps > 0 else 0.0
        stepped = 0
        for _ in range(epochs):
            if self.closed or not self.engine.can_step():
                break
            if throttled and not self.running:
                break
            started = time.perf_counter()
            async with self.lock:
                await asyncio.to_thread(self.engine.step, 1)
                self.broadcast()
            stepped += 1
            elapsed = time.perf_counter() - started
            if period > elapsed:
                await asyncio.sleep(period - elapsed)
            else:
                await asyncio.sleep(0)
        return stepped

    async def _run_loop(self) -> None:
        try:
            await self.advance(self.engine.config.e_max - self.engine.epoch,
                               throttled=True)
        finally:
            self.running = False

    def start(self) -> None:
        if self.running:
            return
        if not self.engine.can_step():
            raise HTTPException(409, "epoch budget exhausted")
        self.running = True
        self._run_task = asyncio.get_running_loop().create_task(self._run_loop())

    def pause(self) -> None:
        self.running = False

    # ------------------------------------------------------------------ #
    # export / summaries

    def counters(self) -> dict:
        return {"labels": self.cumulative_labels,
                "actions": self.cumulative_actions}

    def summary(self) -> dict:
        ev = self.open_event
        return {"id": self.id,
                "dataset": self.dataset.name,
                "n": self.engine.n,
                "out_dims": self.engine.config.out_dims,
                "epoch": self.engine.epoch,
                "e_max": self.engine.config.e_max,
                "running": self.running,
                "counters": self.counters(),
                "focus": ev.focus if ev else None,
                "k": ev.k if ev else None,
                "selection": list(ev.selection) if ev else [],
                "n_labeled": self.engine.annotations.n_labeled,
                "class_names": list(self.dataset.class_names)}

    def _class_name(self, class_id: int) -> str:
        names = self.dataset.class_names
        if 0 <= class_id < len(names):
            return names[class_id]
        return str(class_id)

    def labels_tsv(self) -> str:
        lines = ["index\tclass"]
        c = self.engine.annotations.c
        for idx in np.flatnonzero(c >= 0):
            lines.append(f"{int(idx)}\t{self._class_name(int(c[idx]))}")
        return "\n".join(lines) + "\n"

    def action_log_csv(self) -> str:
        rows = list(self.event_rows)
        if self.open_event is not None:
            ev = self.open_event
            rows.append({"epoch": ev.epoch, "focus": ev.focus, "chosen_k": ev.k,
                         "labels": ev.labels, "actions": ev.actions})
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(ActionLog.CSV_COLUMNS)
        labels = actions = 0
        for row in rows:
            labels += row["labels"]
            actions += row["actions"]
            writer.writerow([row["epoch"], row["focus"], row["chosen_k"],
                             row["labels"], row["actions"], labels, actions])
        return buf.getvalue()


class DatasetRegistry:
    """Datasets available for sessions: programmatically registered ones
    plus any <root>/<name>/features.tsv (+ labels.tsv, images/) on disk."""

    def __init__(self, root=None):
        self.root = Path(root) if root is not None else None
        self._datasets: dict[str, Dataset] = {}

    def register(self, dataset: Dataset) -> None:
        self._datasets[dataset.name] = dataset

    def scan(self) -> None:
        if self.root is None or not self.root.is_dir():
            return
        for child in sorted(self.root.iterdir()):
            features = child / "features.tsv"
            if not features.is_file() or child.name in self._datasets:
                continue
            labels = child / "labels.tsv"
            self._datasets[child.name] = load_dataset(
                features, labels if labels.is_file() else None, name=child.name)

    def get(self, name: str) -> Dataset | None:
        return self._datasets.get(name)

    def listing(self) -> list[dict]:
        return [{"name": ds.name, "n": ds.n, "dim": ds.dim,
                 "n_classes": ds.n_classes, "class_names": list(ds.class_names)}
                for ds in self._datasets.values()]

    def thumbnail_path(self, name: str, index: int) -> Path | None:
        if self.root is None:
            return None
        path = self.root / name / "images" / f"{index}.png"
        return path if path.is_file() else None


def create_app(data_root=None, datasets: tuple[Dataset, ...] = ()) -> FastAPI:
    registry = DatasetRegistry(data_root)
    for ds in datasets:
        registry.register(ds)
    registry.scan()
    sessions: dict[str, LabelSession] = {}

    @asynccontextmanager
    async def lifespan(_app: FastAPI):
        yield
        for session in list(sessions.values()):
            session.close()

    app = FastAPI(title="sstsne session server", lifespan=lifespan)
    app.state.registry = registry
    app.state.sessions = sessions

    def _session(session_id: str) -> LabelSession:
        session = sessions.get(session_id)
        if session is None:
            raise HTTPException(404, f"unknown session {session_id!r}")
        return session

    @app.get("/health")
    async def health():
        return {"status": "ok"}

    @app.get("/datasets")
    async def list_datasets():
        return {"datasets": registry.listing()}

    @app.get("/datasets/{name}/thumbnail/{index}")
    async def thumbnail(name: str, index: int):
        path = registry.thumbnail_path(name, index)
        if path is None:
            raise HTTPException(404, "no thumbnail for this sample")
        return FileResponse(path, media_type="image/png")

    @app.post("/sessions")
    async def create_session(payload: dict = Body(default=None)):
        payload = payload or {}
        name = payload.get("dataset")
        ds = registry.get(name) if name else None
        if ds is None:
            raise HTTPException(404, f"unknown dataset {name!r}")
        try:
            config = config_from_dict(payload.get("config"))
        except (TypeError, ValueError) as exc:
            raise HTTPException(400, f"invalid config: {exc}")
        throttle = float(payload.get("throttle_eps", DEFAULT_THROTTLE_EPS))
        engine = await asyncio.to_thread(Engine, ds, config)
        session_id = uuid.uuid4().hex
        sessions[session_id] = LabelSession(session_id, ds, engine, throttle)
        return sessions[session_id].summary()

    @app.get("/sessions/{session_id}")
    async def session_summary(session_id: str, kl: bool = False):
        session = _session(session_id)
        out = session.summary()
        if kl:
            out["kl"] = await asyncio.to_thread(session.engine.kl)
        return out

    @app.post("/sessions/{session_id}/control")
    async def control(session_id: str, payload: dict = Body(...)):
        session = _session(session_id)
        command = payload.get("command")
        if command == "run":
            session.start()
            return session.summary()
        if command == "pause":
            session.pause()
            return session.summary()
        if command == "step":
            if session.running:
                raise HTTPException(409, "session is running; pause first")
            requested = int(payload.get("n", 1))
            if requested < 1:
                raise HTTPException(400, "step count must be >= 1")
            available = session.engine.config.e_max - session.engine.epoch
            stepped = await session.advance(min(requested, available),
                                            throttled=False)
            out = session.summary()
            out["stepped"] = stepped
            out["clamped"] = requested > available
            return out
        raise HTTPException(400, f"unknown command {command!r}")

    @app.post("/sessions/{session_id}/actions")
    async def act(session_id: str, payload: dict = Body(...)):
        session = _session(session_id)
        kind = payload.get("action")
        async with session.lock:
            extra = {}
            if kind == "select_focus":
                session.select_focus(int(payload.get("v", -1)))
            elif kind == "set_k":
                extra["neighbors"] = session.set_k(int(payload.get("k", -1)))
            elif kind == "deselect":
                session.deselect(int(payload.get("j", -1)))
            elif kind == "apply_label":
                extra["written"] = session.apply_label(int(payload.get("class_id", -1)))
            else:
                raise HTTPException(400, f"unknown action {kind!r}")
            out = session.summary()
            out.update(extra)
            return out

    @app.get("/sessions/{session_id}/export")
    async def export_labels(session_id: str):
        session = _session(session_id)
        async with session.lock:
            return {"labels_tsv": session.labels_tsv(),
                    "action_log_csv": session.action_log_csv(),
                    "counters": session.counters()}

    @app.delete("/sessions/{session_id}")
    async def close_session(session_id: str):
        session = _session(session_id)
        session.close()
        del sessions[session_id]
        return {"closed": session_id}

    @app.websocket("/sessions/{session_id}/stream")
    async def stream(websocket: WebSocket, session_id: str):
        session = sessions.get(session_id)
        if session is None:
            await websocket.close(code=4404)
            return
        await websocket.accept()
        async with session.lock:
            sub, snapshot = session.subscribe()
        try:
            await websocket.send_bytes(snapshot)
            while True:
                frame = await sub.queue.get()
                if frame is None:
                    break
                await websocket.send_bytes(frame)
            await websocket.close()
        except WebSocketDisconnect:
            pass
        finally:
            if sub in session.subscribers:
                session.subscribers.remove(sub)

    return app


def serve(data_root=None, host: str = "127.0.0.1", port: int = 8000,
          datasets: tuple[Dataset, ...] = ()) -> None:
    """Blocking server launch used by the command line."""
    import uvicorn

    uvicorn.run(create_app(data_root, datasets), host=host, port=port,
                log_level="warning")
