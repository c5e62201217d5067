"""HTTP and WebSocket surface over a running Gateway.

Endpoints (versioned under /api/v1):
  GET  /api/v1/status      engine snapshot
  POST /api/v1/panic       start the panic countdown (202)
  POST /api/v1/cancel      cancel a running countdown (200 / 409)
  POST /api/v1/send        fire a running countdown now (200 / 409)
  PUT  /api/v1/contacts    store the contact registry (200 / 422)
  GET  /api/v1/events      log entries with seq > since
  POST /api/v1/replay      replay a trace file server-side (202 / 409)
  WS   /api/v1/live        snapshot message, then every event as it happens
"""

from __future__ import annotations

import math
import queue
import threading

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse
from starlette.concurrency import run_in_threadpool

from .engine import StateError
from .gateway import Gateway
from .simulate import TraceError, load_trace


def _coerce_speed(value) -> float:
    if isinstance(value, str) and value.lower() in ("inf", "infinity", "max"):
        return math.inf
    return float(value)


def create_app(gateway: Gateway, console_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="vigil gateway", version="0.1.0")
    app.state.gateway = gateway

    @app.get("/api/v1/status")
    def status() -> dict:
        return gateway.status()

    @app.post("/api/v1/panic")
    def panic() -> JSONResponse:
        result = dict(gateway.command("panic"))
        code = result.pop("status")
        return JSONResponse(result, status_code=code)

    @app.post("/api/v1/cancel")
    def cancel() -> JSONResponse:
        result = dict(gateway.command("cancel"))
        code = result.pop("status")
        return JSONResponse(result, status_code=code)

    @app.post("/api/v1/send")
    def send() -> JSONResponse:
        result = dict(gateway.command("send"))
        code = result.pop("status")
        return JSONResponse(result, status_code=code)

    @app.put("/api/v1/contacts")
    def put_contacts(payload: dict) -> JSONResponse:
        result = dict(gateway.put_contacts(payload))
        code = result.pop("status")
        return JSONResponse(result, status_code=code)

    @app.get("/api/v1/events")
    def events(since: int = 0) -> list:
        return gateway.events_since(since)

    @app.post("/api/v1/replay")
    def replay_trace(payload: dict) -> JSONResponse:
        path = payload.get("trace", "")
        try:
            speed = _coerce_speed(payload.get("speed", "inf"))
            records = load_trace(path)
        except FileNotFoundError:
            return JSONResponse({"detail": f"trace not found: {path}"}, status_code=404)
        except (TraceError, ValueError) as exc:
            return JSONResponse({"detail": str(exc)}, status_code=422)
        if gateway.replay_busy:
            return JSONResponse({"detail": "a replay is already running"}, status_code=409)

        def run():
            try:
                gateway.replay_records(records, speed)
            except (StateError, TraceError):
                pass

        threading.Thread(target=run, name="gateway-replay", daemon=True).start()
        return JSONResponse({"accepted": True, "records": len(records)}, status_code=202)

    @app.websocket("/api/v1/live")
    async def live(ws: WebSocket) -> None:
        await ws.accept()
        sub = await run_in_threadpool(gateway.subscribe)

        def next_message():
            try:
                return sub.queue.get(timeout=0.25)
            except queue.Empty:
                return None

        idle_polls = 0
        try:
            while sub.alive:
                message = await run_in_threadpool(next_message)
                if message is None:
                    # Quiet stream: let clients tell idle from dead.
                    idle_polls += 1
                    if idle_polls >= 3:
                        idle_polls = 0
                        await ws.send_json({"type": "heartbeat"})
                    continue
                idle_polls = 0
                await ws.send_json(message)
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            gateway.unsubscribe(sub)

    if console_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=console_dir, html=True), name="console")

    return app
