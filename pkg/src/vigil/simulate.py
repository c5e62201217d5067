"""Deterministic sensor trace generation and timed replay.

Stands in for a chest strap (1 Hz heart rate), a phone in a car dock
(50 Hz accelerometer) and a GPS receiver (one GGA sentence every 5 s).
All randomness comes from a seeded PCG64 generator, so a (spec, seed,
duration) triple always produces the same bytes; golden traces stay
valid across runs and platforms.

Trace files are JSON Lines, one record per line:

    {"t_ms": 0, "kind": "hr", "bpm": 74}
    {"t_ms": 0, "kind": "motion", "ax": 0.0, "ay": 0.0, "az": 1.0}
    {"t_ms": 0, "kind": "nmea", "sentence": "$GPGGA,...*hh"}
"""

from __future__ import annotations

import json
import math
import time as _time
from dataclasses import dataclass
from datetime import time

from numpy.random import PCG64, Generator

from .geo import render_gga

HR_PERIOD_MS = 1000
MOTION_PERIOD_MS = 20  # 50 Hz
NMEA_PERIOD_MS = 5000
BASELINE_BPM = 75.0
BPM_SIGMA = 3.0
RAMP_S = 10
MOTION_NOISE_G = 0.02
FREEFALL_LEVEL_G = 0.1
ROUTE_START = (56.1612, 15.5869)  # coastal start point for the fixed route

EPISODE_KINDS = ("tachy", "brady", "crash", "nominal")


class TraceError(ValueError):
    """Trace or episode parameters are invalid."""


@dataclass(frozen=True)
class TraceRecord:
    t_ms: int
    kind: str  # hr | motion | nmea
    bpm: int | None = None
    ax: float | None = None
    ay: float | None = None
    az: float | None = None
    sentence: str | None = None

    def to_dict(self) -> dict:
        if self.kind == "hr":
            return {"t_ms": self.t_ms, "kind": "hr", "bpm": self.bpm}
        if self.kind == "motion":
            return {"t_ms": self.t_ms, "kind": "motion", "ax": self.ax, "ay": self.ay, "az": self.az}
        if self.kind == "nmea":
            return {"t_ms": self.t_ms, "kind": "nmea", "sentence": self.sentence}
        raise TraceError(f"unknown record kind {self.kind!r}")

    @staticmethod
    def from_dict(d: dict) -> "TraceRecord":
        kind = d.get("kind")
        if kind == "hr":
            return TraceRecord(int(d["t_ms"]), "hr", bpm=int(d["bpm"]))
        if kind == "motion":
            return TraceRecord(
                int(d["t_ms"]), "motion", ax=float(d["ax"]), ay=float(d["ay"]), az=float(d["az"])
            )
        if kind == "nmea":
            return TraceRecord(int(d["t_ms"]), "nmea", sentence=str(d["sentence"]))
        raise TraceError(f"unknown record kind {kind!r}")


@dataclass(frozen=True)
class EpisodeSpec:
    kind: str = "nominal"
    onset_s: int = 20
    duration_s: int = 30
    peak_bpm: int = 125
    freefall_s: float = 0.3
    spike_g: float = 4.0

    def __post_init__(self) -> None:
        if self.kind not in EPISODE_KINDS:
            raise TraceError(f"unknown episode kind {self.kind!r}")
        if not 0 <= self.peak_bpm <= 255:
            raise TraceError(f"peak_bpm {self.peak_bpm} outside 0-255")
        if self.onset_s < 0 or self.duration_s < 0:
            raise TraceError("onset_s and duration_s must be non-negative")


def _baseline_bpm(rng: Generator) -> int:
    # Redraw outliers: keeps baseline strictly inside the 5-sigma band
    # (60, 90), so a nominal trace can never classify as abnormal.
    while True:
        bpm = int(round(rng.normal(BASELINE_BPM, BPM_SIGMA)))
        if 60 < bpm < 90:
            return bpm


def generate_trace(spec: EpisodeSpec, seed: int, duration_s: int) -> list[TraceRecord]:
    """Pure function of (spec, seed, duration): same inputs, same records."""
    if duration_s <= 0:
        raise TraceError("duration_s must be positive")
    if spec.kind != "nominal" and spec.onset_s + spec.duration_s > duration_s:
        raise TraceError("episode extends past the end of the trace")

    rng = Generator(PCG64(seed))
    records: list[tuple[int, int, TraceRecord]] = []  # (t_ms, stream priority, record)

    # GPS: fixed route, one sentence every 5 s, independent of the seed.
    for i, t_ms in enumerate(range(0, duration_s * 1000, NMEA_PERIOD_MS)):
        lat = ROUTE_START[0] + 0.0002 * i
        lon = ROUTE_START[1] + 0.0005 * i
        total_s = t_ms // 1000
        utc = time(total_s // 3600 % 24, total_s // 60 % 60, total_s % 60)
        sentence = render_gga(lat, lon, utc, fix_quality=1, satellites=8)
        records.append((t_ms, 0, TraceRecord(t_ms, "nmea", sentence=sentence)))

    # Heart rate at 1 Hz.
    in_hr_episode = spec.kind in ("tachy", "brady")
    for t_ms in range(0, duration_s * 1000, HR_PERIOD_MS):
        t_s = t_ms // 1000
        if in_hr_episode and spec.onset_s <= t_s < spec.onset_s + spec.duration_s:
            ramp = min(1.0, (t_s - spec.onset_s) / RAMP_S)
            level = BASELINE_BPM + (spec.peak_bpm - BASELINE_BPM) * ramp
            bpm = int(round(level + rng.normal(0.0, BPM_SIGMA)))
            bpm = max(40, min(200, bpm))
        else:
            bpm = _baseline_bpm(rng)
        records.append((t_ms, 1, TraceRecord(t_ms, "hr", bpm=bpm)))

    # Motion at 50 Hz: rest gravity plus noise, with the crash profile
    # spliced in: freefall_s of ~0.1 g followed by a single spike.
    ff_start = spec.onset_s * 1000
    ff_end = ff_start + int(round(spec.freefall_s * 1000))
    # Spike lands on the first sample at or after the freefall window end.
    spike_t = math.ceil(ff_end / MOTION_PERIOD_MS) * MOTION_PERIOD_MS
    for t_ms in range(0, duration_s * 1000, MOTION_PERIOD_MS):
        if spec.kind == "crash" and ff_start <= t_ms < min(ff_end, spike_t):
            ax = round(rng.normal(0.0, 0.01), 5)
            ay = round(rng.normal(0.0, 0.01), 5)
            az = round(FREEFALL_LEVEL_G + rng.normal(0.0, 0.01), 5)
        elif spec.kind == "crash" and t_ms == spike_t:
            ax, ay, az = 0.0, 0.0, spec.spike_g
        else:
            ax = round(rng.normal(0.0, MOTION_NOISE_G), 5)
            ay = round(rng.normal(0.0, MOTION_NOISE_G), 5)
            az = round(1.0 + rng.normal(0.0, MOTION_NOISE_G), 5)
        records.append((t_ms, 2, TraceRecord(t_ms, "motion", ax=ax, ay=ay, az=az)))

    records.sort(key=lambda r: (r[0], r[1]))
    return [r for _, _, r in records]


def dump_trace(records: list[TraceRecord]) -> str:
    return "".join(json.dumps(r.to_dict(), separators=(", ", ": ")) + "\n" for r in records)


def write_trace(records: list[TraceRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_trace(records))


def load_trace(path: str) -> list[TraceRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(TraceRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise TraceError(f"{path}:{lineno}: bad trace record: {exc}") from exc
    return records


@dataclass
class ReplayReport:
    hr: int = 0
    motion: int = 0
    nmea: int = 0

    @property
    def total(self) -> int:
        return self.hr + self.motion + self.nmea

    def to_dict(self) -> dict:
        return {"hr": self.hr, "motion": self.motion, "nmea": self.nmea, "total": self.total}


def replay(
    records: list[TraceRecord],
    speed_factor: float,
    sink,
    *,
    sleep_fn=_time.sleep,
    monotonic_fn=_time.monotonic,
) -> ReplayReport:
    """Deliver records to ``sink`` paced at t_ms/speed_factor.

    speed_factor=math.inf delivers as fast as the sink consumes. The
    trace must already be sorted; an unsorted trace is rejected before
    anything is delivered.
    """
    if not speed_factor > 0:
        raise TraceError("speed_factor must be positive")
    for prev, cur in zip(records, records[1:]):
        if cur.t_ms < prev.t_ms:
            raise TraceError(f"trace not sorted: {cur.t_ms} ms after {prev.t_ms} ms")

    report = ReplayReport()
    start = monotonic_fn()
    for rec in records:
        if math.isfinite(speed_factor):
            target = start + (rec.t_ms / 1000.0) / speed_factor
            delay = target - monotonic_fn()
            if delay > 0:
                sleep_fn(delay)
        sink(rec)
        setattr(report, rec.kind, getattr(report, rec.kind) + 1)
    return report
