"""Alert composition and fan-out to the configured sinks.

Sinks are delivered independently and concurrently: one failing sink
never blocks another. Each sink gets at most three attempts with 1 s /
2 s backoff measured on the injected clock, so replayed and test runs
retry instantly while a live service paces in real time. Dispatch is
idempotent per event id.

Wire contracts:
  - SMS gateway   POST {endpoint}/send    {"to": ..., "body": ...}   200 = delivered
  - Social wall   POST {endpoint}         {"wall": ..., "message": ...}  2xx = delivered
  - Email         SMTP to host:port, plaintext, subject "EMERGENCY ALERT"
  - Controller    raw TCP byte stream, single alert byte 0x45
"""

from __future__ import annotations

import re
import smtplib
import threading
import time as _time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone

import requests

from .engine import Cause
from .geo import GeoFix, Place
from .protocol import TcpChannel

ALERT_SENTENCE = "This person is under emergency take necessary action."
ALERT_BYTE = 0x45
LED_PIN = 13
BLINK_DURATION_MS = 10_000
BLINK_HALF_PERIOD_MS = 250  # toggle at 2 Hz
MAX_ATTEMPTS = 3
BACKOFF_MS = (1000, 2000)
EMAIL_SUBJECT = "EMERGENCY ALERT"
EMAIL_FROM = "alerts@vigil.local"

_E164_RE = re.compile(r"^\+[0-9]{7,15}$")

SINK_KINDS = ("sms", "email", "social", "controller")


class WallClock:
    def now_ms(self) -> int:
        return int(_time.time() * 1000)

    def sleep_ms(self, ms: int) -> None:
        _time.sleep(ms / 1000.0)


class LogicalClock:
    """Trace-driven time. Sleeping costs nothing; advance() is the only mover."""

    def __init__(self, start_ms: int = 0):
        self._now = start_ms
        self._lock = threading.Lock()

    def now_ms(self) -> int:
        with self._lock:
            return self._now

    def advance_to(self, t_ms: int) -> None:
        with self._lock:
            if t_ms > self._now:
                self._now = t_ms

    def sleep_ms(self, ms: int) -> None:
        pass


@dataclass(frozen=True)
class SinkConfig:
    kind: str
    endpoint: str
    target: str = ""
    enabled: bool = True

    def __post_init__(self) -> None:
        if self.kind not in SINK_KINDS:
            raise ValueError(f"unknown sink kind {self.kind!r}")
        if self.enabled and not self.endpoint:
            raise ValueError(f"{self.kind} sink enabled without an endpoint")
        if self.kind == "sms" and self.enabled and self.target and not _E164_RE.match(self.target):
            raise ValueError(f"sms target {self.target!r} is not E.164 (+, 7-15 digits)")


@dataclass(frozen=True)
class AlertMessage:
    cause: Cause
    body: str
    latitude_deg: float
    longitude_deg: float
    place: Place
    at: datetime


@dataclass
class DeliveryRecord:
    event_id: str
    sink_kind: str
    attempts: int
    status: str  # delivered | failed | exhausted
    first_at: int
    last_at: int
    last_error: str = ""

    def to_dict(self) -> dict:
        return {
            "event_id": self.event_id,
            "sink_kind": self.sink_kind,
            "attempts": self.attempts,
            "status": self.status,
            "first_at": self.first_at,
            "last_at": self.last_at,
            "last_error": self.last_error,
        }


def format_utc(at: datetime) -> str:
    if at.tzinfo is None:
        at = at.replace(tzinfo=timezone.utc)
    return at.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def compose_message(cause: Cause, fix: GeoFix, place: Place, at: datetime) -> AlertMessage:
    """Build the alert text. The first sentence is fixed; never reword it."""
    if fix.fix_quality == 0:
        raise ValueError("refusing to compose an alert from a no-fix position")
    if not place.city or not place.country:
        raise ValueError("place must be resolved before composing")
    body = (
        f"{ALERT_SENTENCE} Cause: {cause.value}. "
        f"Location: {place.city}, {place.country} "
        f"({fix.latitude_deg:+.5f}, {fix.longitude_deg:+.5f}) at {format_utc(at)}."
    )
    return AlertMessage(cause, body, fix.latitude_deg, fix.longitude_deg, place, at)


# --- sink transports --------------------------------------------------------


def _send_sms(sink: SinkConfig, msg: AlertMessage) -> None:
    resp = requests.post(
        f"{sink.endpoint.rstrip('/')}/send",
        json={"to": sink.target, "body": msg.body},
        timeout=2.0,
    )
    if resp.status_code != 200:
        raise RuntimeError(f"sms gateway returned {resp.status_code}")


def _send_social(sink: SinkConfig, msg: AlertMessage) -> None:
    resp = requests.post(
        sink.endpoint,
        json={"wall": sink.target, "message": msg.body},
        timeout=2.0,
    )
    if not 200 <= resp.status_code < 300:
        raise RuntimeError(f"social webhook returned {resp.status_code}")


def _send_email(sink: SinkConfig, msg: AlertMessage) -> None:
    host, _, port = sink.endpoint.partition(":")
    data = (
        f"From: {EMAIL_FROM}\r\n"
        f"To: {sink.target}\r\n"
        f"Subject: {EMAIL_SUBJECT}\r\n"
        f"\r\n"
        f"{msg.body}\r\n"
    )
    with smtplib.SMTP(host, int(port or 25), timeout=2.0) as smtp:
        smtp.sendmail(EMAIL_FROM, [sink.target], data.encode("utf-8"))


def send_controller_alert(channel, now_ms: int | None = None) -> int:
    """Write the single alert byte; returns bytes written (the acknowledgment)."""
    return channel.write(bytes([ALERT_BYTE]))


def _send_controller(sink: SinkConfig, msg: AlertMessage) -> None:
    host, _, port = sink.endpoint.partition(":")
    channel = TcpChannel(host, int(port))
    try:
        send_controller_alert(channel)
    finally:
        channel.close()


_SENDERS = {
    "sms": _send_sms,
    "email": _send_email,
    "social": _send_social,
    "controller": _send_controller,
}


class Dispatcher:
    """At-least-once fan-out with bounded retries, idempotent per event id."""

    def __init__(self, clock=None):
        self.clock = clock or WallClock()
        self._done: dict[str, list[DeliveryRecord]] = {}
        self._lock = threading.Lock()

    def dispatch(
        self, event_id: str, msg: AlertMessage, sinks: list[SinkConfig], at_ms: int | None = None
    ) -> list[DeliveryRecord]:
        with self._lock:
            if event_id in self._done:
                return self._done[event_id]

        enabled = [s for s in sinks if s.enabled]
        base_ms = self.clock.now_ms() if at_ms is None else at_ms
        if enabled:
            with ThreadPoolExecutor(max_workers=len(enabled)) as pool:
                records = list(
                    pool.map(lambda s: self._deliver(event_id, s, msg, base_ms), enabled)
                )
        else:
            records = []

        with self._lock:
            self._done.setdefault(event_id, records)
            return self._done[event_id]

    def _deliver(
        self, event_id: str, sink: SinkConfig, msg: AlertMessage, base_ms: int
    ) -> DeliveryRecord:
        # Attempt timestamps are computed arithmetically from the dispatch
        # time so records are identical no matter how threads interleave.
        record = DeliveryRecord(event_id, sink.kind, 0, "failed", base_ms, base_ms)
        elapsed = 0
        send = _SENDERS[sink.kind]
        for attempt in range(1, MAX_ATTEMPTS + 1):
            record.attempts = attempt
            record.last_at = base_ms + elapsed
            try:
                send(sink, msg)
                record.status = "delivered"
                record.last_error = ""
                return record
            except Exception as exc:
                record.status = "failed"
                record.last_error = f"{type(exc).__name__}: {exc}"
            if attempt < MAX_ATTEMPTS:
                backoff = BACKOFF_MS[attempt - 1]
                self.clock.sleep_ms(backoff)
                elapsed += backoff
        record.status = "exhausted"
        return record


class ControllerEmulator:
    """Desk-scale stand-in for the alert microcontroller.

    Pin 13 drives the LED; while an alert window is active the LED
    toggles every 250 ms. Unknown bytes are counted, never acted on.
    """

    def __init__(self) -> None:
        self.led_pin = LED_PIN
        self.blink_until_ms = 0
        self.bad_bytes = 0
        self.alerts = 0
        self._anchor_ms = 0
        self._lock = threading.Lock()

    def receive(self, data: bytes, now_ms: int) -> None:
        with self._lock:
            for byte in data:
                if byte == ALERT_BYTE:
                    self.alerts += 1
                    if now_ms >= self.blink_until_ms:
                        self._anchor_ms = now_ms
                    self.blink_until_ms = max(self.blink_until_ms, now_ms + BLINK_DURATION_MS)
                else:
                    self.bad_bytes += 1

    def led(self, now_ms: int) -> bool:
        with self._lock:
            if now_ms < self._anchor_ms or now_ms >= self.blink_until_ms:
                return False
            return ((now_ms - self._anchor_ms) // BLINK_HALF_PERIOD_MS) % 2 == 0

    @property
    def blinking(self) -> bool:
        return self.blink_until_ms > self._anchor_ms


class ControllerEmulatorServer:
    """TCP front end for a ControllerEmulator."""

    def __init__(self, emulator: ControllerEmulator, now_fn, host: str = "127.0.0.1", port: int = 0):
        import socket

        self.emulator = emulator
        self._now_fn = now_fn
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(8)
        self.port = self._sock.getsockname()[1]
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._serve, daemon=True)
        self._thread.start()

    def _serve(self) -> None:
        self._sock.settimeout(0.1)
        while not self._stop.is_set():
            try:
                conn, _ = self._sock.accept()
            except OSError:
                continue
            with conn:
                conn.settimeout(0.5)
                try:
                    while True:
                        data = conn.recv(64)
                        if not data:
                            break
                        self.emulator.receive(data, self._now_fn())
                except OSError:
                    pass

    def close(self) -> None:
        self._stop.set()
        self._thread.join(timeout=2)
        self._sock.close()
