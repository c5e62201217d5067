"""GPS sentence parsing and offline place resolution.

Position fixes arrive as NMEA 0183 GGA sentences (one per line in
traces). Coordinates resolve to a city and country through a nearest-
neighbour scan over a shipped city table; the table is a UTF-8 CSV with
header ``city,country,lat,lon`` in decimal degrees.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from datetime import time
from importlib import resources

EARTH_RADIUS_M = 6_371_000.0

_DDMM_RE = re.compile(r"^\d{4,5}\.\d{3,}$")
_TIME_RE = re.compile(r"^(\d{2})(\d{2})(\d{2})(?:\.(\d+))?$")


class ParseError(ValueError):
    """Sentence or field is malformed."""


class ChecksumError(ParseError):
    """Sentence failed its integrity check."""


class NoFixError(ValueError):
    """Sentence carries fix quality 0: position is not usable."""


class ConfigError(ValueError):
    """City table missing or invalid."""


@dataclass(frozen=True)
class GeoFix:
    latitude_deg: float
    longitude_deg: float
    utc_time: time
    fix_quality: int
    satellites: int


@dataclass(frozen=True)
class Place:
    city: str
    country: str


@dataclass(frozen=True)
class CityEntry:
    city: str
    country: str
    latitude_deg: float
    longitude_deg: float


class CityTable:
    """Immutable after load; freely shareable across threads."""

    def __init__(self, entries: list[CityEntry]):
        if not entries:
            raise ConfigError("city table is empty")
        seen: set[tuple[str, str]] = set()
        for e in entries:
            if not -90.0 <= e.latitude_deg <= 90.0 or not -180.0 <= e.longitude_deg <= 180.0:
                raise ConfigError(f"city {e.city!r} has out-of-range coordinates")
            key = (e.city, e.country)
            if key in seen:
                raise ConfigError(f"duplicate city entry {key}")
            seen.add(key)
        self.entries = tuple(entries)

    def __len__(self) -> int:
        return len(self.entries)


def load_city_table(path: str) -> CityTable:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["city", "country", "lat", "lon"]:
            raise ConfigError(f"{path}: expected header city,country,lat,lon")
        entries = [
            CityEntry(row["city"], row["country"], float(row["lat"]), float(row["lon"]))
            for row in reader
        ]
    return CityTable(entries)


def default_city_table() -> CityTable:
    """The ~200-city world table shipped with the package."""
    ref = resources.files("vigil.data").joinpath("cities.csv")
    with resources.as_file(ref) as path:
        return load_city_table(str(path))


def nmea_checksum(body: str) -> int:
    """XOR of all character codes strictly between '$' and '*'."""
    acc = 0
    for ch in body:
        acc ^= ord(ch)
    return acc


def ddmm_to_degrees(field: str, hemisphere: str) -> float:
    """Convert NMEA ddmm.mmmm / dddmm.mmmm to signed decimal degrees."""
    if not _DDMM_RE.match(field):
        raise ParseError(f"bad coordinate field {field!r}")
    if hemisphere not in ("N", "S", "E", "W"):
        raise ParseError(f"bad hemisphere {hemisphere!r}")
    head, frac = field.split(".")
    degrees = int(head[:-2])
    minutes = float(f"{head[-2:]}.{frac}")
    if minutes >= 60.0:
        raise ParseError(f"minutes out of range in {field!r}")
    value = degrees + minutes / 60.0
    if hemisphere in ("S", "W"):
        value = -value
    return value


def _parse_utc(field: str) -> time:
    m = _TIME_RE.match(field)
    if not m:
        raise ParseError(f"bad UTC time field {field!r}")
    hh, mm, ss, frac = m.groups()
    micro = int(round(float(f"0.{frac}") * 1_000_000)) if frac else 0
    try:
        return time(int(hh), int(mm), int(ss), micro)
    except ValueError as exc:
        raise ParseError(f"bad UTC time field {field!r}") from exc


def parse_gga(line: str) -> GeoFix:
    """Parse a GGA sentence into a GeoFix.

    Raises ChecksumError on integrity failure, NoFixError on fix
    quality 0, ParseError on anything malformed.
    """
    line = line.strip()
    if not line.startswith("$"):
        raise ParseError("sentence must begin with '$'")
    star = line.rfind("*")
    if star < 0 or len(line) < star + 3:
        raise ParseError("sentence missing '*hh' checksum")
    body = line[1:star]
    try:
        wire_sum = int(line[star + 1 : star + 3], 16)
    except ValueError as exc:
        raise ParseError("checksum digits are not hex") from exc
    if nmea_checksum(body) != wire_sum:
        raise ChecksumError(
            f"checksum mismatch: computed {nmea_checksum(body):02X}, sentence says {wire_sum:02X}"
        )

    fields = body.split(",")
    if not fields[0].endswith("GGA"):
        raise ParseError(f"not a GGA sentence: {fields[0]!r}")
    if len(fields) < 8:
        raise ParseError("too few fields for GGA")

    try:
        fix_quality = int(fields[6])
        satellites = int(fields[7])
    except ValueError as exc:
        raise ParseError("fix quality / satellite count not numeric") from exc
    if not 0 <= fix_quality <= 8:
        raise ParseError(f"fix quality {fix_quality} outside 0-8")
    if satellites < 0:
        raise ParseError("satellite count negative")
    if fix_quality == 0:
        raise NoFixError("fix quality 0: no position fix")

    utc = _parse_utc(fields[1])
    lat = ddmm_to_degrees(fields[2], fields[3])
    lon = ddmm_to_degrees(fields[4], fields[5])
    if not -90.0 <= lat <= 90.0:
        raise ParseError(f"latitude {lat} out of range")
    if not -180.0 <= lon <= 180.0:
        raise ParseError(f"longitude {lon} out of range")
    return GeoFix(lat, lon, utc, fix_quality, satellites)


def render_gga(
    lat: float,
    lon: float,
    utc: time,
    fix_quality: int = 1,
    satellites: int = 8,
) -> str:
    """Render a checksum-valid GGA sentence (companion to parse_gga)."""

    def ddmm(value: float, width: int) -> str:
        mag = abs(value)
        deg = int(mag)
        minutes = (mag - deg) * 60.0
        if minutes >= 59.99995:  # carry after rounding to 4 decimals
            deg += 1
            minutes = 0.0
        return f"{deg:0{width}d}{minutes:07.4f}"

    body = (
        f"GPGGA,{utc.hour:02d}{utc.minute:02d}{utc.second:02d},"
        f"{ddmm(lat, 2)},{'N' if lat >= 0 else 'S'},"
        f"{ddmm(lon, 3)},{'E' if lon >= 0 else 'W'},"
        f"{fix_quality},{satellites:02d},0.9,0.0,M,0.0,M,,"
    )
    return f"${body}*{nmea_checksum(body):02X}"


def haversine_m(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle distance in meters between (lat, lon) pairs."""
    lat1, lon1 = map(math.radians, a)
    lat2, lon2 = map(math.radians, b)
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def reverse_geocode(fix: GeoFix, table: CityTable) -> Place:
    """Nearest table entry by great-circle distance; ties go to the earlier row."""
    if fix.fix_quality == 0:
        raise NoFixError("cannot geocode a no-fix position")
    best: CityEntry | None = None
    best_d = math.inf
    for entry in table.entries:
        d = haversine_m(
            (fix.latitude_deg, fix.longitude_deg),
            (entry.latitude_deg, entry.longitude_deg),
        )
        if d < best_d:
            best, best_d = entry, d
    assert best is not None
    return Place(best.city, best.country)
