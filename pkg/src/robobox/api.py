"""HTTP surface: recorder queries, bulk export, live status, diagnosis,
remote test runs, and the central-side segment receiver.

The same app factory serves both tiers: ``robot`` mode exposes one
robot's recorder/monitors/diagnosis/test runner; ``central`` mode
receives offloaded segments from the fleet. Status updates stream as
server-sent events, one ``data:`` line per status message, so remote
consoles stay one-directional.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
from dataclasses import dataclass
from io import StringIO
from pathlib import Path

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse, PlainTextResponse, StreamingResponse
from fastapi.staticfiles import StaticFiles

from .clock import Clock, WallClock
from .model import FlatRecord, ModelError
from .store import InvalidRange, QuerySpec
from .testflow import RunAlreadyActive, UnknownRun, UnknownWorkflow

logger = logging.getLogger(__name__)

STREAM_KEEPALIVE_SEC = 0.5


@dataclass
class RobotSystem:
    """Everything the API needs to serve one robot."""

    robot_id: str
    store: object
    bus: object
    monitors: object = None
    diagnosis: object = None
    runs: object = None
    display_name: str = ""
    status_period_sec: float = 1.0
    clock: Clock = None

    def __post_init__(self):
        if self.clock is None:
            self.clock = WallClock()
        if not self.display_name:
            self.display_name = self.robot_id

    def registration(self) -> dict:
        last_seen = self.bus.last_seen() if self.bus is not None else None
        online = last_seen is not None and (self.clock.now() - last_seen) <= 3 * self.status_period_sec
        return {
            "robotId": self.robot_id,
            "displayName": self.display_name,
            "online": online,
            "lastSeen": last_seen,
        }


class CentralSystem:
    """Receives offloaded segments; one directory per robot."""

    def __init__(self, data_dir):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def put_segment(self, robot_id: str, segment_id: int, body: bytes) -> bool:
        """Validate and persist one segment; True when newly stored."""
        for line in body.splitlines():
            if not line.strip():
                continue
            FlatRecord.from_json(line.decode("utf-8"))  # raises ModelError on corrupt lines
        with self._lock:
            robot_dir = self.data_dir / robot_id
            robot_dir.mkdir(parents=True, exist_ok=True)
            target = robot_dir / f"segment-{segment_id:08d}.ndjson"
            created = not target.exists()
            tmp = target.with_suffix(".tmp")
            tmp.write_bytes(body)
            tmp.replace(target)
            return created

    def robots(self) -> list:
        out = []
        for robot_dir in sorted(self.data_dir.iterdir()):
            if not robot_dir.is_dir():
                continue
            segments = sorted(robot_dir.glob("segment-*.ndjson"))
            last = max((p.stat().st_mtime for p in segments), default=None)
            out.append(
                {
                    "robotId": robot_dir.name,
                    "displayName": robot_dir.name,
                    "online": False,
                    "lastSeen": last,
                }
            )
        return out


def _error(status_code: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status_code, content={"error": message})


def create_app(
    robot: RobotSystem | None = None,
    central: CentralSystem | None = None,
    token: str | None = None,
    ui_dir=None,
) -> FastAPI:
    app = FastAPI(title="robobox", docs_url=None, redoc_url=None)

    if token:

        @app.middleware("http")
        async def require_bearer(request: Request, call_next):
            if request.url.path.startswith("/api") and request.url.path != "/api/health":
                provided = request.headers.get("Authorization", "")
                if provided != f"Bearer {token}":
                    return _error(401, "missing or invalid bearer token")
            return await call_next(request)

    @app.get("/api/health")
    def health():
        return {"status": "ok", "mode": "robot" if robot is not None else "central"}

    @app.get("/api/robots")
    def robots():
        if robot is not None:
            return [robot.registration()]
        if central is not None:
            return central.robots()
        return []

    def _resolve(robot_id: str) -> RobotSystem | None:
        if robot is not None and robot.robot_id == robot_id:
            return robot
        return None

    @app.get("/api/robots/{robot_id}/variables")
    def variables(robot_id: str):
        view = _resolve(robot_id)
        if view is None:
            return _error(404, f"unknown robot {robot_id!r}")
        return {"variables": view.store.variables()}

    def _parse_range(from_ts, to_ts):
        try:
            return float(from_ts), float(to_ts)
        except (TypeError, ValueError):
            raise InvalidRange(f"from/to must be numbers, got {from_ts!r}/{to_ts!r}")

    @app.get("/api/robots/{robot_id}/data")
    def data(robot_id: str, request: Request):
        view = _resolve(robot_id)
        if view is None:
            return _error(404, f"unknown robot {robot_id!r}")
        params = request.query_params
        variables = params.getlist("vars")
        if len(variables) == 1 and "," in variables[0]:
            variables = [v for v in variables[0].split(",") if v]
        try:
            from_ts, to_ts = _parse_range(params.get("from"), params.get("to"))
            q = QuerySpec(tuple(variables) or ("*",), from_ts, to_ts)
            points = view.store.query(q)
        except (InvalidRange, ModelError) as exc:
            return _error(400, str(exc))
        series: dict = {}
        for ts, name, value in points:
            series.setdefault(name, []).append([ts, value])
        return {
            "series": [{"variable": name, "points": series[name]} for name in sorted(series)]
        }

    @app.get("/api/robots/{robot_id}/export")
    def export(robot_id: str, request: Request):
        view = _resolve(robot_id)
        if view is None:
            return _error(404, f"unknown robot {robot_id!r}")
        params = request.query_params
        try:
            from_ts, to_ts = _parse_range(params.get("from"), params.get("to"))
            q = QuerySpec(("*",), from_ts, to_ts)
        except (InvalidRange, ModelError) as exc:
            return _error(400, str(exc))
        sink = StringIO()
        count = view.store.export(q, sink)
        filename = f"{robot_id}-{from_ts:.3f}-{to_ts:.3f}.ndjson"
        return PlainTextResponse(
            sink.getvalue(),
            media_type="application/x-ndjson",
            headers={
                "Content-Disposition": f'attachment; filename="{filename}"',
                "X-Record-Count": str(count),
            },
        )

    @app.get("/api/robots/{robot_id}/status")
    def status(robot_id: str):
        view = _resolve(robot_id)
        if view is None:
            return _error(404, f"unknown robot {robot_id!r}")
        statuses = [s.to_doc() for s in view.bus.latest()]
        components = view.monitors.snapshot() if view.monitors is not None else {}
        return {"robotId": robot_id, "statuses": statuses, "components": components}

    @app.get("/api/robots/{robot_id}/status/stream")
    def status_stream(robot_id: str):
        view = _resolve(robot_id)
        if view is None:
            return _error(404, f"unknown robot {robot_id!r}")
        subscription = view.bus.subscribe()

        def events():
            try:
                yield "retry: 2000\n\n"
                while True:
                    try:
                        message = subscription.get(timeout=STREAM_KEEPALIVE_SEC)
                    except queue.Empty:
                        yield ": keepalive\n\n"
                        continue
                    yield f"data: {message.to_json()}\n\n"
            finally:
                view.bus.unsubscribe(subscription)

        return StreamingResponse(events(), media_type="text/event-stream")

    @app.get("/api/robots/{robot_id}/diagnosis")
    def diagnosis(robot_id: str):
        view = _resolve(robot_id)
        if view is None:
            return _error(404, f"unknown robot {robot_id!r}")
        if view.diagnosis is None:
            return {"hypotheses": [], "symptomFacts": []}
        return {
            "hypotheses": [h.to_doc() for h in view.diagnosis.hypotheses()],
            "symptomFacts": view.diagnosis.symptom_facts(),
        }

    @app.get("/api/robots/{robot_id}/workflows")
    def workflows(robot_id: str):
        view = _resolve(robot_id)
        if view is None:
            return _error(404, f"unknown robot {robot_id!r}")
        return {"workflows": view.runs.list_workflows() if view.runs is not None else []}

    @app.post("/api/robots/{robot_id}/tests/{workflow_id}/run", status_code=202)
    def start_run(robot_id: str, workflow_id: str):
        view = _resolve(robot_id)
        if view is None or view.runs is None:
            return _error(404, f"unknown robot {robot_id!r}")
        try:
            run = view.runs.start_run(workflow_id)
        except UnknownWorkflow as exc:
            return _error(404, str(exc))
        except RunAlreadyActive as exc:
            return _error(409, str(exc))
        return {"runId": run.run_id, "workflowId": workflow_id}

    def _runs_registry():
        return robot.runs if robot is not None else None

    @app.post("/api/runs/{run_id}/ack/{step_id}")
    def ack(run_id: str, step_id: str):
        registry = _runs_registry()
        if registry is None:
            return _error(404, "no test runner")
        try:
            registry.ack(run_id, step_id)
        except UnknownRun as exc:
            return _error(404, str(exc))
        return {"ok": True}

    @app.post("/api/runs/{run_id}/cancel")
    def cancel(run_id: str):
        registry = _runs_registry()
        if registry is None:
            return _error(404, "no test runner")
        try:
            registry.cancel(run_id)
        except UnknownRun as exc:
            return _error(404, str(exc))
        return {"ok": True}

    @app.get("/api/runs/{run_id}")
    def get_run(run_id: str):
        registry = _runs_registry()
        if registry is None:
            return _error(404, "no test runner")
        try:
            return registry.get(run_id).to_doc()
        except UnknownRun as exc:
            return _error(404, str(exc))

    @app.put("/api/segments/{robot_id}/{segment_id}")
    async def put_segment(robot_id: str, segment_id: int, request: Request):
        if central is None:
            return _error(404, "not running in central mode")
        body = await request.body()
        try:
            created = central.put_segment(robot_id, segment_id, body)
        except (ModelError, UnicodeDecodeError) as exc:
            return _error(400, f"malformed segment body: {exc}")
        return JSONResponse(status_code=201 if created else 200, content={"stored": True})

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app


def serve_in_thread(app: FastAPI, host: str, port: int):
    """Run uvicorn on a background thread; returns (server, thread).

    The caller polls ``server.started`` for readiness and sets
    ``server.should_exit`` to stop.
    """
    import uvicorn

    config = uvicorn.Config(
        app, host=host, port=port, log_level="warning", timeout_graceful_shutdown=2
    )
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, name="api-server", daemon=True)
    thread.start()
    return server, thread
