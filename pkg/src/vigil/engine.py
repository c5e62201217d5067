"""Emergency detection state machine.

Classifies vital and motion samples against thresholds, debounces
heart-rate anomalies, and runs the cancelable countdown for crash and
panic episodes. Heart-rate emergencies trigger immediately once the
debounce count is reached; crash and panic go through the countdown
window so a conscious user can cancel.

All behavior is driven by explicit millisecond timestamps (a logical
clock); the engine never reads wall time, so identical inputs always
produce identical transitions.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from enum import Enum


class Cause(str, Enum):
    BRADYCARDIA = "Bradycardia"
    TACHYCARDIA = "Tachycardia"
    CRASH = "Crash"
    PANIC = "Panic"


class BpmClass(Enum):
    NORMAL = "Normal"
    LOW = "Low"
    HIGH = "High"


class OrderingError(ValueError):
    """Sample timestamps went backwards within a stream."""


class StateError(ValueError):
    """Operation not legal in the current state (mapped to HTTP 409)."""


@dataclass(frozen=True)
class Thresholds:
    hr_low: int = 60
    hr_high: int = 120
    consecutive_abnormal: int = 5
    freefall_g: float = 0.35
    freefall_min_ms: int = 200
    impact_g: float = 2.5
    tilt_deg: float = 60.0
    tilt_window_ms: int = 1000
    countdown_ms: int = 14000

    def __post_init__(self) -> None:
        if self.hr_low >= self.hr_high:
            raise ValueError("hr_low must be below hr_high")
        for name in (
            "hr_low",
            "consecutive_abnormal",
            "freefall_g",
            "freefall_min_ms",
            "impact_g",
            "tilt_deg",
            "tilt_window_ms",
            "countdown_ms",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class VitalSample:
    t_ms: int
    bpm: int

    def __post_init__(self) -> None:
        if not 0 <= self.bpm <= 255:
            raise ValueError(f"bpm {self.bpm} outside 0-255")


@dataclass(frozen=True)
class MotionSample:
    t_ms: int
    ax: float
    ay: float
    az: float

    def __post_init__(self) -> None:
        for c in (self.ax, self.ay, self.az):
            if not math.isfinite(c) or abs(c) > 16.0:
                raise ValueError(f"acceleration component {c} not finite or beyond 16 g")

    @property
    def magnitude_g(self) -> float:
        return math.sqrt(self.ax**2 + self.ay**2 + self.az**2)


# --- states ---------------------------------------------------------------


@dataclass(frozen=True)
class Monitoring:
    pass


@dataclass(frozen=True)
class Suspected:
    cause: Cause
    count: int
    since_ms: int


@dataclass(frozen=True)
class Countdown:
    cause: Cause
    deadline_ms: int


@dataclass(frozen=True)
class Triggered:
    cause: Cause
    at_ms: int


@dataclass(frozen=True)
class Cancelled:
    at_ms: int


EngineState = Monitoring | Suspected | Countdown | Triggered | Cancelled

_STATE_NAMES = {
    Monitoring: "monitoring",
    Suspected: "suspected",
    Countdown: "countdown",
    Triggered: "triggered",
    Cancelled: "cancelled",
}


def state_to_dict(state: EngineState) -> dict:
    d: dict = {"kind": _STATE_NAMES[type(state)]}
    if isinstance(state, Suspected):
        d.update(cause=state.cause.value, count=state.count, since_ms=state.since_ms)
    elif isinstance(state, Countdown):
        d.update(cause=state.cause.value, deadline_ms=state.deadline_ms)
    elif isinstance(state, Triggered):
        d.update(cause=state.cause.value, at_ms=state.at_ms)
    elif isinstance(state, Cancelled):
        d.update(at_ms=state.at_ms)
    return d


def state_from_dict(d: dict) -> EngineState:
    kind = d["kind"]
    if kind == "monitoring":
        return Monitoring()
    if kind == "suspected":
        return Suspected(Cause(d["cause"]), d["count"], d["since_ms"])
    if kind == "countdown":
        return Countdown(Cause(d["cause"]), d["deadline_ms"])
    if kind == "triggered":
        return Triggered(Cause(d["cause"]), d["at_ms"])
    if kind == "cancelled":
        return Cancelled(d["at_ms"])
    raise ValueError(f"unknown state kind {kind!r}")


@dataclass(frozen=True)
class Transition:
    t_ms: int
    from_state: EngineState
    to_state: EngineState
    reason: str

    def __post_init__(self) -> None:
        if self.from_state == self.to_state:
            raise ValueError("transition must change state")

    def to_dict(self) -> dict:
        return {
            "t_ms": self.t_ms,
            "from": state_to_dict(self.from_state),
            "to": state_to_dict(self.to_state),
            "reason": self.reason,
        }


def classify_bpm(bpm: int, th: Thresholds) -> BpmClass:
    """Low below hr_low, High above hr_high; boundary values count as Normal."""
    if bpm < th.hr_low:
        return BpmClass.LOW
    if bpm > th.hr_high:
        return BpmClass.HIGH
    return BpmClass.NORMAL


class DetectionEngine:
    """Single-writer state machine; feed all events in timestamp order.

    Read-only snapshots may be taken concurrently; every mutating call
    returns the transitions it produced (possibly empty).
    """

    def __init__(self, thresholds: Thresholds | None = None):
        self.thresholds = thresholds or Thresholds()
        self.state: EngineState = Monitoring()
        self.last_bpm: int | None = None
        self._last_vital_ms: int | None = None
        self._last_motion_ms: int | None = None
        self._motion_window: deque[MotionSample] = deque()
        self._window_sum = [0.0, 0.0, 0.0]
        self._freefall_since: int | None = None

    # -- sample ingestion --

    def ingest_vital(self, s: VitalSample) -> list[Transition]:
        if self._last_vital_ms is not None and s.t_ms < self._last_vital_ms:
            raise OrderingError(f"vital at {s.t_ms} ms after {self._last_vital_ms} ms")
        self._last_vital_ms = s.t_ms
        self.last_bpm = s.bpm

        if isinstance(self.state, (Triggered, Cancelled, Countdown)):
            # Countdown outranks vitals; terminal states ignore samples.
            return []

        cls = classify_bpm(s.bpm, self.thresholds)
        if cls is BpmClass.NORMAL:
            if isinstance(self.state, Suspected):
                return [self._move(Monitoring(), s.t_ms, f"bpm {s.bpm} back in range")]
            return []

        cause = Cause.BRADYCARDIA if cls is BpmClass.LOW else Cause.TACHYCARDIA
        if isinstance(self.state, Suspected) and self.state.cause is cause:
            count = self.state.count + 1
            since = self.state.since_ms
        else:
            count = 1
            since = s.t_ms

        if count >= self.thresholds.consecutive_abnormal:
            # Heart-rate emergencies skip the countdown: the wearer may
            # already be incapacitated and unable to confirm.
            return [self._move(Triggered(cause, s.t_ms), s.t_ms, f"{count} consecutive abnormal bpm")]

        new = Suspected(cause, count, since)
        if isinstance(self.state, Suspected) and self.state.cause is cause:
            self.state = new  # count bump, not worth a transition record
            return []
        reason = f"abnormal bpm {s.bpm}"
        if isinstance(self.state, Suspected):
            reason = f"abnormal bpm {s.bpm} (cause switched, count restarted)"
        return [self._move(new, s.t_ms, reason)]

    def ingest_motion(self, s: MotionSample) -> list[Transition]:
        if self._last_motion_ms is not None and s.t_ms < self._last_motion_ms:
            raise OrderingError(f"motion at {s.t_ms} ms after {self._last_motion_ms} ms")
        self._last_motion_ms = s.t_ms

        # Evict first so the window holds exactly the trailing tilt_window_ms
        # before this sample; running sums keep the mean O(1) at 50 Hz.
        cutoff = s.t_ms - self.thresholds.tilt_window_ms
        while self._motion_window and self._motion_window[0].t_ms <= cutoff:
            old = self._motion_window.popleft()
            self._window_sum[0] -= old.ax
            self._window_sum[1] -= old.ay
            self._window_sum[2] -= old.az

        crash_reason = self._crash_reason(s)

        self._motion_window.append(s)
        self._window_sum[0] += s.ax
        self._window_sum[1] += s.ay
        self._window_sum[2] += s.az

        if crash_reason is None:
            return []
        if isinstance(self.state, (Triggered, Cancelled, Countdown)):
            return []
        deadline = s.t_ms + self.thresholds.countdown_ms
        return [self._move(Countdown(Cause.CRASH, deadline), s.t_ms, crash_reason)]

    def _crash_reason(self, s: MotionSample) -> str | None:
        th = self.thresholds
        m = s.magnitude_g

        if m > th.impact_g:
            self._freefall_since = None
            return f"impact {m:.2f} g"

        if m < th.freefall_g:
            if self._freefall_since is None:
                self._freefall_since = s.t_ms
            elif s.t_ms - self._freefall_since >= th.freefall_min_ms:
                return f"free fall for {s.t_ms - self._freefall_since} ms"
        else:
            self._freefall_since = None

        # Tilt: angle of the current vector against the trailing-window mean.
        n = len(self._motion_window)
        if n and m > 1e-6:
            mx = self._window_sum[0] / n
            my = self._window_sum[1] / n
            mz = self._window_sum[2] / n
            norm = math.sqrt(mx**2 + my**2 + mz**2)
            if norm > 1e-6:
                cosang = (s.ax * mx + s.ay * my + s.az * mz) / (m * norm)
                angle = math.degrees(math.acos(max(-1.0, min(1.0, cosang))))
                if angle > th.tilt_deg:
                    return f"tilt {angle:.1f} deg"
        return None

    # -- commands --

    def press_panic(self, t_ms: int) -> Transition | None:
        """Start the panic countdown; a no-op if an episode is already underway."""
        if not isinstance(self.state, (Monitoring, Suspected)):
            return None
        deadline = t_ms + self.thresholds.countdown_ms
        return self._move(Countdown(Cause.PANIC, deadline), t_ms, "panic pressed")

    def cancel(self, t_ms: int) -> Transition:
        if not isinstance(self.state, Countdown):
            raise StateError("no countdown to cancel")
        return self._move(Cancelled(t_ms), t_ms, "cancelled by user")

    def send_now(self, t_ms: int) -> Transition:
        if not isinstance(self.state, Countdown):
            raise StateError("no countdown to send")
        return self._move(Triggered(self.state.cause, t_ms), t_ms, "sent by user")

    def tick(self, now_ms: int) -> list[Transition]:
        """Fire the countdown if its deadline has passed; otherwise do nothing."""
        if isinstance(self.state, Countdown) and now_ms >= self.state.deadline_ms:
            deadline = self.state.deadline_ms
            return [self._move(Triggered(self.state.cause, deadline), deadline, "countdown expired")]
        return []

    def reset(self, t_ms: int) -> Transition:
        if not isinstance(self.state, (Triggered, Cancelled)):
            raise StateError("reset requires a settled episode")
        self._motion_window.clear()
        self._window_sum = [0.0, 0.0, 0.0]
        self._freefall_since = None
        return self._move(Monitoring(), t_ms, "episode reset")

    # -- observation --

    @property
    def last_vital_ms(self) -> int | None:
        return self._last_vital_ms

    @property
    def last_motion_ms(self) -> int | None:
        return self._last_motion_ms

    def snapshot(self, now_ms: int | None = None) -> dict:
        remaining = None
        if isinstance(self.state, Countdown) and now_ms is not None:
            remaining = max(0, self.state.deadline_ms - now_ms)
        cause = getattr(self.state, "cause", None)
        return {
            "state": _STATE_NAMES[type(self.state)],
            "cause": cause.value if cause is not None else None,
            "bpm": self.last_bpm,
            "countdown_remaining_ms": remaining,
        }

    def _move(self, to: EngineState, t_ms: int, reason: str) -> Transition:
        tr = Transition(t_ms, self.state, to, reason)
        self.state = to
        return tr
