"""The running service: event queue, persistence, HTTP/WS API.

One consumer thread owns the engine and the event log; HTTP handlers,
the replayer and the wall-mode ticker only enqueue. Every state-changing
input (sample, command, tick) is totally ordered by the log sequence
number, so replaying the log through a fresh engine reproduces the
exact same state — that property is what crash recovery leans on.

The event log is JSON Lines, append-only, fsync'd on Triggered
transitions. Entry kinds: vital, motion, fix, transition, delivery,
command.
"""

from __future__ import annotations

import json
import os
import re
import threading
import queue
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any
from urllib.parse import urlparse

from .engine import (
    Cancelled,
    DetectionEngine,
    MotionSample,
    StateError,
    Thresholds,
    Transition,
    Triggered,
    VitalSample,
    state_to_dict,
)
from .geo import (
    CityTable,
    GeoFix,
    NoFixError,
    ParseError,
    default_city_table,
    load_city_table,
    parse_gga,
    reverse_geocode,
)
from .notify import (
    ALERT_SENTENCE,
    AlertMessage,
    Dispatcher,
    LogicalClock,
    SinkConfig,
    WallClock,
    compose_message,
    format_utc,
)
from .simulate import TraceRecord, load_trace, replay

WALL_TICK_MS = 100

_PHONE_RE = re.compile(r"^\+[0-9]{7,15}$")


class ConfigError(ValueError):
    """Service configuration is unusable; startup must fail."""


@dataclass(frozen=True)
class ContactRegistry:
    phone: str = ""
    email: str = ""
    social_webhook: str = ""

    def to_dict(self) -> dict:
        return {"phone": self.phone, "email": self.email, "social_webhook": self.social_webhook}


def validate_contacts(data: dict) -> list[dict]:
    """Field-level validation errors; empty list means the payload is good."""
    errors = []
    phone = data.get("phone", "")
    if not isinstance(phone, str) or not _PHONE_RE.match(phone):
        errors.append({"field": "phone", "message": "must be E.164: '+' then 7-15 digits"})
    email = data.get("email", "")
    parts = email.split("@") if isinstance(email, str) else []
    if len(parts) != 2 or not parts[0] or not parts[1]:
        errors.append({"field": "email", "message": "must contain exactly one '@' with text on both sides"})
    url = data.get("social_webhook", "")
    scheme = urlparse(url).scheme if isinstance(url, str) else ""
    if scheme not in ("http", "https"):
        errors.append({"field": "social_webhook", "message": "must be an http(s) URL"})
    return errors


@dataclass
class ServiceConfig:
    port: int = 8080
    thresholds: Thresholds = field(default_factory=Thresholds)
    sinks: list[SinkConfig] = field(default_factory=list)
    city_table_path: str = ""
    log_path: str = "events.jsonl"
    clock: str = "replay"

    def __post_init__(self) -> None:
        if not 1 <= self.port <= 65535:
            raise ConfigError(f"port {self.port} outside 1-65535")
        if self.clock not in ("wall", "replay"):
            raise ConfigError(f"clock must be 'wall' or 'replay', not {self.clock!r}")
        if self.city_table_path and not os.path.exists(self.city_table_path):
            raise ConfigError(f"city table not found: {self.city_table_path}")

    @staticmethod
    def from_file(path: str) -> "ServiceConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        try:
            thresholds = Thresholds(**raw.get("thresholds", {}))
            sinks = [SinkConfig(**s) for s in raw.get("sinks", [])]
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config file {path}: {exc}") from exc
        return ServiceConfig(
            port=raw.get("port", 8080),
            thresholds=thresholds,
            sinks=sinks,
            city_table_path=raw.get("city_table_path", ""),
            log_path=raw.get("log_path", "events.jsonl"),
            clock=raw.get("clock", "replay"),
        )


@dataclass(frozen=True)
class EventLogEntry:
    seq: int
    t_ms: int
    kind: str
    payload: dict

    def to_dict(self) -> dict:
        return {"seq": self.seq, "t_ms": self.t_ms, "kind": self.kind, "payload": self.payload}


class EventLog:
    """Append-only JSONL log with a gap-free sequence number."""

    def __init__(self, path: str):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self.last_seq = 0
        for entry in self.iter_file(str(self.path)):
            self.last_seq = entry.seq
        self._fh = open(self.path, "a", encoding="utf-8")

    @staticmethod
    def iter_file(path: str):
        """Yield entries; a truncated trailing line (crash artifact) is dropped."""
        try:
            fh = open(path, encoding="utf-8")
        except FileNotFoundError:
            return
        with fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    d = json.loads(line)
                    yield EventLogEntry(d["seq"], d["t_ms"], d["kind"], d["payload"])
                except (json.JSONDecodeError, KeyError):
                    return

    def append(self, t_ms: int, kind: str, payload: dict, fsync: bool = False) -> EventLogEntry:
        with self._lock:
            self.last_seq += 1
            entry = EventLogEntry(self.last_seq, t_ms, kind, payload)
            self._fh.write(json.dumps(entry.to_dict(), separators=(",", ":")) + "\n")
            self._fh.flush()
            if fsync:
                os.fsync(self._fh.fileno())
            return entry

    def entries_since(self, since_seq: int) -> list[EventLogEntry]:
        return [e for e in self.iter_file(str(self.path)) if e.seq > since_seq]

    def close(self) -> None:
        with self._lock:
            self._fh.close()


class _Reply:
    def __init__(self) -> None:
        self._event = threading.Event()
        self.value: Any = None

    def set(self, value: Any) -> None:
        self.value = value
        self._event.set()

    def wait(self, timeout: float = 30.0) -> Any:
        if not self._event.wait(timeout):
            raise TimeoutError("gateway consumer did not answer")
        return self.value


class Subscriber:
    """One live-stream consumer; disconnected when its backlog overflows."""

    BACKLOG = 1024

    def __init__(self) -> None:
        self.queue: queue.Queue = queue.Queue(maxsize=self.BACKLOG)
        self.alive = True

    def push(self, message: dict) -> None:
        if not self.alive:
            return
        try:
            self.queue.put_nowait(message)
        except queue.Full:
            self.alive = False


class Gateway:
    """Event-queue core. All I/O surfaces (HTTP, CLI, replay) feed this."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.city_table: CityTable = (
            load_city_table(config.city_table_path) if config.city_table_path else default_city_table()
        )
        self.clock = WallClock() if config.clock == "wall" else LogicalClock()
        self.engine = DetectionEngine(config.thresholds)
        self.log = EventLog(config.log_path)
        self.dispatcher = Dispatcher(self.clock)
        self.contacts = self._load_contacts()
        self.last_fix: GeoFix | None = None
        self._queue: queue.Queue = queue.Queue()
        self._subscribers: list[Subscriber] = []
        self._consumer: threading.Thread | None = None
        self._ticker: threading.Thread | None = None
        self._stopping = threading.Event()
        self._replay_lock = threading.Lock()
        self._replay_busy = False
        self._delivered: dict[str, set[str]] = {}  # event_id -> sink kinds delivered
        self.dropped_samples = 0
        self._restore()

    # -- lifecycle --

    def start(self) -> None:
        self._consumer = threading.Thread(target=self._consume, name="gateway-consumer", daemon=True)
        self._consumer.start()
        if self.config.clock == "wall":
            self._ticker = threading.Thread(target=self._tick_loop, name="gateway-ticker", daemon=True)
            self._ticker.start()
        # Settle an episode left open by a crash: redeliver what is missing,
        # then return to monitoring. Runs through the queue like any command.
        if isinstance(self.engine.state, (Triggered, Cancelled)):
            self.command("recover")

    def stop(self) -> None:
        if self._stopping.is_set():
            return
        self._stopping.set()
        if self._consumer and self._consumer.is_alive():
            reply = _Reply()
            self._queue.put(("stop", None, reply))
            reply.wait()
            self._consumer.join(timeout=5)
        if self._ticker:
            self._ticker.join(timeout=2)
        self.log.close()

    def _tick_loop(self) -> None:
        while not self._stopping.wait(WALL_TICK_MS / 1000.0):
            self._queue.put(("tick", self.clock.now_ms(), None))

    # -- producers --

    def submit_trace_record(self, rec: TraceRecord) -> None:
        self._queue.put(("record", rec, None))

    def command(self, op: str) -> dict:
        reply = _Reply()
        self._queue.put(("command", op, reply))
        return reply.wait()

    def put_contacts(self, data: dict) -> dict:
        errors = validate_contacts(data)
        if errors:
            return {"status": 422, "errors": errors}
        reply = _Reply()
        self._queue.put(("contacts", data, reply))
        return reply.wait()

    def subscribe(self) -> Subscriber:
        sub = Subscriber()
        reply = _Reply()
        self._queue.put(("subscribe", sub, reply))
        reply.wait()
        return sub

    def unsubscribe(self, sub: Subscriber) -> None:
        sub.alive = False

    def drain(self) -> None:
        """Block until everything enqueued so far has been consumed."""
        reply = _Reply()
        self._queue.put(("noop", None, reply))
        reply.wait()

    # -- replay --

    def replay_records(self, records: list[TraceRecord], speed: float) -> dict:
        with self._replay_lock:
            if self._replay_busy:
                raise StateError("a replay is already running")
            self._replay_busy = True
        try:
            report = replay(records, speed, self.submit_trace_record)
            self.drain()
            return report.to_dict()
        finally:
            with self._replay_lock:
                self._replay_busy = False

    def replay_file(self, path: str, speed: float) -> dict:
        return self.replay_records(load_trace(path), speed)

    @property
    def replay_busy(self) -> bool:
        with self._replay_lock:
            return self._replay_busy

    # -- observation --

    def status(self) -> dict:
        return self.engine.snapshot(self.clock.now_ms())

    def events_since(self, since_seq: int) -> list[dict]:
        return [e.to_dict() for e in self.log.entries_since(since_seq)]

    # -- consumer side --

    def _consume(self) -> None:
        while True:
            kind, payload, reply = self._queue.get()
            result: Any = None
            try:
                if kind == "stop":
                    return
                if kind == "record":
                    self._handle_record(payload)
                elif kind == "tick":
                    self._handle_tick(payload)
                elif kind == "command":
                    result = self._handle_command(payload)
                elif kind == "contacts":
                    result = self._handle_contacts(payload)
                elif kind == "subscribe":
                    self._handle_subscribe(payload)
                elif kind == "noop":
                    pass
            except Exception as exc:  # the queue must survive any input
                result = {"status": 500, "detail": f"{type(exc).__name__}: {exc}"}
            finally:
                if reply is not None:
                    reply.set(result)

    def _handle_record(self, rec: TraceRecord) -> None:
        if isinstance(self.clock, LogicalClock):
            self.clock.advance_to(rec.t_ms)
        self._run_tick(rec.t_ms)
        if rec.kind == "hr":
            # Validate before logging: every logged sample must re-apply cleanly.
            if self.engine.last_vital_ms is not None and rec.t_ms < self.engine.last_vital_ms:
                self.dropped_samples += 1
                return
            sample = VitalSample(rec.t_ms, rec.bpm)
            self._log_event(rec.t_ms, "vital", {"bpm": rec.bpm})
            self._emit_transitions(self.engine.ingest_vital(sample))
        elif rec.kind == "motion":
            if self.engine.last_motion_ms is not None and rec.t_ms < self.engine.last_motion_ms:
                self.dropped_samples += 1
                return
            try:
                sample = MotionSample(rec.t_ms, rec.ax, rec.ay, rec.az)
            except ValueError:
                self.dropped_samples += 1
                return
            self._log_event(rec.t_ms, "motion", {"ax": rec.ax, "ay": rec.ay, "az": rec.az})
            self._emit_transitions(self.engine.ingest_motion(sample))
        elif rec.kind == "nmea":
            try:
                fix = parse_gga(rec.sentence)
                self.last_fix = fix
                self._log_event(
                    rec.t_ms,
                    "fix",
                    {
                        "lat": fix.latitude_deg,
                        "lon": fix.longitude_deg,
                        "quality": fix.fix_quality,
                        "satellites": fix.satellites,
                    },
                )
            except (ParseError, NoFixError) as exc:
                self._log_event(rec.t_ms, "fix", {"error": f"{type(exc).__name__}: {exc}"})

    def _handle_tick(self, now_ms: int) -> None:
        self._run_tick(now_ms)

    def _run_tick(self, now_ms: int) -> None:
        transitions = self.engine.tick(now_ms)
        if transitions:
            self._log_event(transitions[0].t_ms, "command", {"op": "tick", "now_ms": now_ms})
            self._emit_transitions(transitions)

    def _handle_command(self, op: str) -> dict:
        now = self.clock.now_ms()
        self._run_tick(now)
        try:
            if op == "panic":
                tr = self.engine.press_panic(now)
                if tr is None:
                    self._log_event(now, "command", {"op": "panic", "noop": True})
                    return {"status": 202, "noop": True, **self.status()}
                self._log_event(now, "command", {"op": "panic"})
                self._emit_transitions([tr])
                return {"status": 202, **self.status()}
            if op == "cancel":
                tr = self.engine.cancel(now)
                self._log_event(now, "command", {"op": "cancel"})
                self._emit_transitions([tr])
                self._reset(now, "post-cancel reset")
                return {"status": 200, **self.status()}
            if op == "send":
                tr = self.engine.send_now(now)
                self._log_event(now, "command", {"op": "send"})
                self._emit_transitions([tr])
                return {"status": 200, **self.status()}
            if op == "recover":
                self._recover_episode(now)
                return {"status": 200, **self.status()}
        except StateError as exc:
            return {"status": 409, "detail": str(exc)}
        return {"status": 400, "detail": f"unknown command {op!r}"}

    def _handle_contacts(self, data: dict) -> dict:
        self.contacts = ContactRegistry(
            phone=data["phone"], email=data["email"], social_webhook=data["social_webhook"]
        )
        self._save_contacts()
        return {"status": 200, **self.contacts.to_dict()}

    def _handle_subscribe(self, sub: Subscriber) -> None:
        snapshot = {"type": "snapshot", "seq": self.log.last_seq, **self.status()}
        sub.push(snapshot)
        self._subscribers.append(sub)

    # -- transition plumbing --

    def _emit_transitions(self, transitions: list[Transition]) -> None:
        for tr in transitions:
            triggered = isinstance(tr.to_state, Triggered)
            entry = self._log_event(
                tr.t_ms,
                "transition",
                {
                    "from": state_to_dict(tr.from_state),
                    "to": state_to_dict(tr.to_state),
                    "reason": tr.reason,
                },
                fsync=triggered,
            )
            if triggered:
                self._dispatch_alert(f"ep-{entry.seq}", tr.to_state)
                self._reset(tr.to_state.at_ms, "post-dispatch reset")

    def _dispatch_alert(self, event_id: str, state: Triggered) -> None:
        msg = self._compose(state)
        sinks = self._effective_sinks()
        already = self._delivered.get(event_id, set())
        pending = [s for s in sinks if s.kind not in already]
        records = self.dispatcher.dispatch(event_id, msg, pending, at_ms=state.at_ms)
        for record in records:
            self._log_event(state.at_ms, "delivery", record.to_dict())
            if record.status == "delivered":
                self._delivered.setdefault(event_id, set()).add(record.sink_kind)

    def _compose(self, state: Triggered) -> AlertMessage:
        at = datetime.fromtimestamp(state.at_ms / 1000.0, tz=timezone.utc)
        if self.last_fix is not None:
            place = reverse_geocode(self.last_fix, self.city_table)
            return compose_message(state.cause, self.last_fix, place, at)
        # No fix ever received: alert anyway, honestly marked.
        from .geo import Place

        body = (
            f"{ALERT_SENTENCE} Cause: {state.cause.value}. "
            f"Location: unknown at {format_utc(at)}."
        )
        return AlertMessage(state.cause, body, 0.0, 0.0, Place("unknown", "unknown"), at)

    def _effective_sinks(self) -> list[SinkConfig]:
        out = []
        for sink in self.config.sinks:
            if sink.kind == "sms" and self.contacts.phone:
                sink = replace(sink, target=self.contacts.phone)
            elif sink.kind == "email" and self.contacts.email:
                sink = replace(sink, target=self.contacts.email)
            elif sink.kind == "social" and self.contacts.social_webhook:
                sink = replace(sink, endpoint=self.contacts.social_webhook)
            out.append(sink)
        return out

    def _reset(self, t_ms: int, reason: str) -> None:
        tr = self.engine.reset(t_ms)
        self._log_event(t_ms, "command", {"op": "reset", "reason": reason})
        self._emit_transitions([tr])

    def _recover_episode(self, now: int) -> None:
        if isinstance(self.engine.state, Triggered):
            # Redeliver whatever sinks have no delivered record, then settle.
            event_id = self._last_trigger_event_id()
            if event_id is not None:
                self._dispatch_alert(event_id, self.engine.state)
            self._reset(now, "restart recovery")
        elif isinstance(self.engine.state, Cancelled):
            self._reset(now, "restart recovery")

    def _last_trigger_event_id(self) -> str | None:
        last = None
        for entry in self.log.iter_file(str(self.log.path)):
            if entry.kind == "transition" and entry.payload["to"]["kind"] == "triggered":
                last = f"ep-{entry.seq}"
        return last

    def _log_event(self, t_ms: int, kind: str, payload: dict, fsync: bool = False) -> EventLogEntry:
        entry = self.log.append(t_ms, kind, payload, fsync=fsync)
        message = {"type": kind, "seq": entry.seq, "t_ms": t_ms, **payload}
        self._subscribers = [s for s in self._subscribers if s.alive]
        for sub in self._subscribers:
            sub.push(message)
        return entry

    # -- persistence --

    def _contacts_path(self) -> Path:
        return Path(str(self.config.log_path) + ".contacts.json")

    def _load_contacts(self) -> ContactRegistry:
        try:
            with open(self._contacts_path(), encoding="utf-8") as fh:
                return ContactRegistry(**json.load(fh))
        except (FileNotFoundError, json.JSONDecodeError, TypeError):
            return ContactRegistry()

    def _save_contacts(self) -> None:
        with open(self._contacts_path(), "w", encoding="utf-8") as fh:
            json.dump(self.contacts.to_dict(), fh)

    def _restore(self) -> None:
        """Rebuild engine state by re-applying logged inputs (no side effects)."""
        if self.log.last_seq == 0:
            return
        try:
            rebuilt = replay_log_entries(
                self.log.iter_file(str(self.log.path)), self.config.thresholds
            )
        except Exception as exc:
            raise ConfigError(f"event log {self.config.log_path} does not replay cleanly: {exc}") from exc
        self.engine = rebuilt.engine
        self.last_fix = rebuilt.last_fix
        self._delivered = rebuilt.delivered
        if isinstance(self.clock, LogicalClock):
            self.clock.advance_to(rebuilt.max_t_ms)


@dataclass
class ReplayedLog:
    engine: DetectionEngine
    last_fix: GeoFix | None
    delivered: dict[str, set[str]]
    max_t_ms: int


def replay_log_entries(entries, thresholds: Thresholds | None = None) -> ReplayedLog:
    """Drive a fresh engine with the input entries of an event log.

    Transition entries are outputs, not inputs: they are skipped here,
    which is exactly what makes "replay equals live" a meaningful check.
    """
    engine = DetectionEngine(thresholds or Thresholds())
    last_fix: GeoFix | None = None
    delivered: dict[str, set[str]] = {}
    max_t = 0
    for entry in entries:
        max_t = max(max_t, entry.t_ms)
        p = entry.payload
        if entry.kind == "vital":
            engine.tick(entry.t_ms)
            engine.ingest_vital(VitalSample(entry.t_ms, p["bpm"]))
        elif entry.kind == "motion":
            engine.tick(entry.t_ms)
            engine.ingest_motion(MotionSample(entry.t_ms, p["ax"], p["ay"], p["az"]))
        elif entry.kind == "fix":
            if "error" not in p:
                last_fix = GeoFix(
                    p["lat"], p["lon"], datetime.min.time(), p["quality"], p["satellites"]
                )
        elif entry.kind == "delivery":
            if p["status"] == "delivered":
                delivered.setdefault(p["event_id"], set()).add(p["sink_kind"])
        elif entry.kind == "command":
            op = p["op"]
            if op == "tick":
                engine.tick(p["now_ms"])
            elif op == "panic":
                engine.press_panic(entry.t_ms)
            elif op == "cancel":
                engine.cancel(entry.t_ms)
            elif op == "send":
                engine.send_now(entry.t_ms)
            elif op == "reset":
                engine.reset(entry.t_ms)
    return ReplayedLog(engine, last_fix, delivered, max_t)
