"""HTTP service over the built artifacts, plus a websocket event feed.

All read endpoints answer from immutable in-memory state loaded at
startup, so identical requests yield byte-identical responses for the
lifetime of the process. Interface events posted to the service fan out
to every connected websocket client in order; a client whose send queue
overflows is disconnected, leaving the others untouched.
"""

from __future__ import annotations

import asyncio
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

from fastapi import FastAPI, Request, WebSocket, WebSocketDisconnect
from fastapi.exceptions import RequestValidationError
from fastapi.responses import FileResponse, JSONResponse, PlainTextResponse
from fastapi.staticfiles import StaticFiles

from . import atlas as atlas_mod
from . import dataset as ds
from .layout import read_layout

log = logging.getLogger(__name__)

DEFAULT_QUEUE_SIZE = 256
DEFAULT_MAX_CLIENTS = 64


@dataclass
class ServeConfig:
    dataset_dir: Path
    atlas_dir: Path
    layout_path: Path
    ui_dir: Path | None = None
    host: str = "127.0.0.1"
    port: int = 8080
    max_ws_clients: int = DEFAULT_MAX_CLIENTS
    ws_queue_size: int = DEFAULT_QUEUE_SIZE

    def validate(self) -> None:
        for label, path in (("dataset", self.dataset_dir),
                            ("atlas", self.atlas_dir),
                            ("layout", self.layout_path)):
            if not Path(path).exists():
                raise FileNotFoundError(f"{label} path does not exist: {path}")
        if self.ui_dir is not None and not Path(self.ui_dir).is_dir():
            raise FileNotFoundError(f"ui directory does not exist: {self.ui_dir}")


@dataclass
class _Client:
    queue: asyncio.Queue
    dropped: asyncio.Event


class EventHub:
    """Orders events into per-client bounded queues; overflow disconnects."""

    def __init__(self, queue_size: int = DEFAULT_QUEUE_SIZE,
                 max_clients: int = DEFAULT_MAX_CLIENTS):
        self.queue_size = queue_size
        self.max_clients = max_clients
        self._clients: dict[int, _Client] = {}
        self._next_id = 0

    def attach(self) -> tuple[int, _Client] | None:
        if len(self._clients) >= self.max_clients:
            return None
        cid = self._next_id
        self._next_id += 1
        client = _Client(queue=asyncio.Queue(maxsize=self.queue_size),
                         dropped=asyncio.Event())
        self._clients[cid] = client
        return cid, client

    def detach(self, cid: int) -> None:
        self._clients.pop(cid, None)

    @property
    def client_count(self) -> int:
        return len(self._clients)

    def publish(self, message: str) -> int:
        """Deliver one message to every client; returns the delivery count."""
        delivered = 0
        for cid, client in list(self._clients.items()):
            try:
                client.queue.put_nowait(message)
                delivered += 1
            except asyncio.QueueFull:
                log.warning("websocket client %d overflowed its queue; dropping",
                            cid)
                self.detach(cid)
                client.dropped.set()
        return delivered


def publish_events(hub: EventHub, events) -> int:
    """Serialize interface events onto the hub (trace-line text messages)."""
    count = 0
    for ev in events:
        line = ev if isinstance(ev, str) else ev.trace_line()
        hub.publish(line)
        count += 1
    return count


def _build_hash(config: ServeConfig) -> str:
    digest = hashlib.sha256()
    digest.update(Path(config.layout_path).read_bytes())
    manifest = Path(config.atlas_dir) / atlas_mod.MANIFEST_FILE
    digest.update(manifest.read_bytes())
    return digest.hexdigest()[:16]


def build_app(config: ServeConfig) -> FastAPI:
    """Load artifacts and assemble the service (pure; does not bind a port)."""
    config.validate()
    layout = read_layout(config.layout_path)
    atlas = atlas_mod.load_atlas(config.atlas_dir, layout)
    index_entries = ds.read_index(Path(config.dataset_dir))
    known_ids = {e.object_id for e in index_entries}
    build_hash = _build_hash(config)
    manifest = atlas_mod.read_manifest(config.atlas_dir)
    hub = EventHub(queue_size=config.ws_queue_size,
                   max_clients=config.max_ws_clients)

    bounds = layout.bounds
    app = FastAPI(title="cartographer", docs_url=None, redoc_url=None)
    app.state.hub = hub
    app.state.atlas = atlas

    @app.exception_handler(RequestValidationError)
    async def malformed(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400,
                            content={"error": "malformed request",
                                     "detail": str(exc)})

    def error(status: int, message: str) -> JSONResponse:
        return JSONResponse(status_code=status, content={"error": message})

    @app.get("/api/stats")
    async def stats():
        return {
            "objects": len(index_entries),
            "points": len(layout.ids),
            "bounds": list(bounds),
            "zoom_levels": atlas.zoom_levels,
            "base_budget": atlas.base_budget,
            "tiles": len(manifest.tiles),
            "build_hash": build_hash,
        }

    @app.get("/api/objects/{object_id}")
    async def get_object(object_id: str):
        if object_id not in known_ids:
            return error(404, f"unknown object id {object_id!r}")
        meta = ds.meta_path(Path(config.dataset_dir), object_id)
        return json.loads(meta.read_text(encoding="utf-8"))

    @app.get("/api/layout")
    async def get_layout():
        return PlainTextResponse(
            Path(config.layout_path).read_text(encoding="utf-8"))

    @app.get("/api/tiles/{zoom}/{tx}/{ty}")
    async def get_tile(zoom: int, tx: int, ty: int):
        if not (0 <= zoom < atlas.zoom_levels):
            return error(404, f"zoom {zoom} out of range")
        grid = 2 ** zoom
        if not (0 <= tx < grid and 0 <= ty < grid):
            return error(404, f"tile {tx},{ty} out of range at zoom {zoom}")
        points = atlas_mod.read_tile_points(config.atlas_dir, zoom, tx, ty)
        rects = atlas_mod.read_tile_map(config.atlas_dir, zoom, tx, ty)
        sprite = None
        if rects:
            sprite = f"/api/sprites/{zoom}/{tx}_{ty}.png"
        return {
            "zoom": zoom, "tx": tx, "ty": ty,
            "members": [{"id": oid, "x": x, "y": y, "sample": flag}
                        for oid, x, y, flag in points],
            "sprite": sprite,
            "sprite_map": {oid: list(rect) for oid, rect in rects.items()},
        }

    @app.get("/api/sprites/{zoom}/{name}")
    async def get_sprite(zoom: int, name: str):
        path = Path(config.atlas_dir) / atlas_mod.TILES_DIR / str(zoom) / name
        if not (name.endswith(".png") and path.is_file()):
            return error(404, "no such sprite")
        return FileResponse(path, media_type="image/png", headers={
            "Cache-Control": "public, max-age=31536000, immutable",
            "ETag": f'"{build_hash}"',
        })

    @app.get("/api/viewport")
    async def viewport(x0: float, y0: float, x1: float, y1: float, zoom: int):
        if not (0 <= zoom < atlas.zoom_levels):
            return error(400, f"zoom {zoom} out of range")
        samples, circles = atlas_mod.query_viewport(
            atlas, (min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1)), zoom)
        return {
            "samples": [{"id": oid, "x": x, "y": y} for oid, x, y in samples],
            "circles": [[x, y] for x, y in circles],
        }

    @app.post("/api/events")
    async def post_events(payload: dict):
        events = payload.get("events")
        if not isinstance(events, list) or not all(isinstance(e, str) for e in events):
            return error(400, "body must be {\"events\": [\"t\\tkind\\tmagnitude\", ...]}")
        delivered = publish_events(hub, events)
        return {"published": len(events), "clients": hub.client_count,
                "delivered": delivered}

    @app.websocket("/ws/events")
    async def ws_events(ws: WebSocket):
        await ws.accept()
        slot = hub.attach()
        if slot is None:
            await ws.close(code=1013)  # try again later: at capacity
            return
        cid, client = slot
        try:
            while True:
                queue_task = asyncio.create_task(client.queue.get())
                drop_task = asyncio.create_task(client.dropped.wait())
                done, pending = await asyncio.wait(
                    {queue_task, drop_task},
                    return_when=asyncio.FIRST_COMPLETED)
                for task in pending:
                    task.cancel()
                if drop_task in done and client.dropped.is_set():
                    await ws.close(code=1011)
                    return
                await ws.send_text(queue_task.result())
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            hub.detach(cid)

    if config.ui_dir is not None:
        app.mount("/", StaticFiles(directory=config.ui_dir, html=True),
                  name="ui")

    return app


def serve(config: ServeConfig) -> None:
    """Run the service until interrupted. Port conflicts abort fatally."""
    import uvicorn

    app = build_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
