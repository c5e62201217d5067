"""Wearable telemetry framing and stream reassembly.

Frame layout (12 bytes total):

    [STX 0x02][msg_id][DLC 0x07][payload 7 bytes][CRC-8][ETX 0x03]

General Packet payload (7 bytes):

    [battery_pct][heart_rate_bpm][heartbeat_count]
    [speed_q8 lo][speed_q8 hi][distance_q4 lo][distance_q4 hi]

Multi-byte fields are little-endian. speed_q8 is in units of 1/256 m/s,
distance_q4 in units of 1/16 m. The CRC is CRC-8 with reflected
polynomial 0x8C, initial value 0x00, computed over the payload only.

The link itself is an abstract byte channel: the deframer tolerates
arbitrary chunking and resynchronizes past corruption rather than
raising (a lossy radio link is the modeled medium).
"""

from __future__ import annotations

import io
import socket
import threading
from dataclasses import dataclass, field

STX = 0x02
ETX = 0x03
GENERAL_PACKET_MSG_ID = 0x26
PAYLOAD_LEN = 7
FRAME_LEN = 12
MAX_FRAME_LEN = 32
# Deframer buffer hard cap: two maximum-size frames.
MAX_BUFFER = 2 * MAX_FRAME_LEN


class InvalidFieldError(ValueError):
    """A packet field is outside its allowed range."""


@dataclass(frozen=True)
class ChannelParams:
    """Serial link parameters. Informational metadata: no timing is simulated."""

    baud: int = 115200
    data_bits: int = 8
    stop_bits: int = 1
    parity: str = "none"


@dataclass(frozen=True)
class GeneralPacket:
    """One periodic telemetry frame from the chest strap."""

    heart_rate_bpm: int
    battery_pct: int = 100
    heartbeat_count: int = 0
    speed_q8: int = 0
    distance_q4: int = 0
    msg_id: int = GENERAL_PACKET_MSG_ID

    def validate(self) -> None:
        if not 0 <= self.battery_pct <= 100:
            raise InvalidFieldError(f"battery_pct {self.battery_pct} outside 0-100")
        if not 0 <= self.heart_rate_bpm <= 255:
            raise InvalidFieldError(f"heart_rate_bpm {self.heart_rate_bpm} outside 0-255")
        if not 0 <= self.heartbeat_count <= 255:
            raise InvalidFieldError(f"heartbeat_count {self.heartbeat_count} outside 0-255")
        if not 0 <= self.speed_q8 <= 0xFFFF:
            raise InvalidFieldError(f"speed_q8 {self.speed_q8} outside 0-65535")
        if not 0 <= self.distance_q4 <= 0xFFFF:
            raise InvalidFieldError(f"distance_q4 {self.distance_q4} outside 0-65535")
        if not 0 <= self.msg_id <= 0xFF:
            raise InvalidFieldError(f"msg_id {self.msg_id} outside 0-255")

    @property
    def speed_ms(self) -> float:
        return self.speed_q8 / 256.0

    @property
    def distance_m(self) -> float:
        return self.distance_q4 / 16.0


def crc8(data: bytes) -> int:
    """CRC-8, reflected polynomial 0x8C, init 0x00, bytes processed LSB-first."""
    crc = 0x00
    for byte in data:
        crc ^= byte
        for _ in range(8):
            if crc & 1:
                crc = (crc >> 1) ^ 0x8C
            else:
                crc >>= 1
    return crc


def encode_packet(p: GeneralPacket) -> bytes:
    """Frame a packet for the wire. Raises InvalidFieldError on bad fields."""
    p.validate()
    payload = bytes(
        [
            p.battery_pct,
            p.heart_rate_bpm,
            p.heartbeat_count,
            p.speed_q8 & 0xFF,
            (p.speed_q8 >> 8) & 0xFF,
            p.distance_q4 & 0xFF,
            (p.distance_q4 >> 8) & 0xFF,
        ]
    )
    return bytes([STX, p.msg_id, PAYLOAD_LEN]) + payload + bytes([crc8(payload), ETX])


def _decode_payload(msg_id: int, payload: bytes) -> GeneralPacket:
    return GeneralPacket(
        battery_pct=payload[0],
        heart_rate_bpm=payload[1],
        heartbeat_count=payload[2],
        speed_q8=payload[3] | (payload[4] << 8),
        distance_q4=payload[5] | (payload[6] << 8),
        msg_id=msg_id,
    )


@dataclass
class DeframerStats:
    packets_ok: int = 0
    crc_failures: int = 0
    resyncs: int = 0


class Deframer:
    """Stateful frame extractor for a chunked, possibly corrupted byte stream.

    Single-owner mutable state: one logical reader per channel. Corruption
    is counted in ``stats``, never raised.
    """

    def __init__(self) -> None:
        self._buffer = bytearray()
        self.stats = DeframerStats()

    def feed(self, chunk: bytes) -> list[GeneralPacket]:
        """Consume a chunk, return every complete CRC-valid packet in stream order."""
        self._buffer.extend(chunk)
        packets: list[GeneralPacket] = []

        while self._buffer:
            start = self._buffer.find(STX)
            if start < 0:
                # Pure garbage; drop it all.
                self._buffer.clear()
                self.stats.resyncs += 1
                break
            if start > 0:
                del self._buffer[:start]
                self.stats.resyncs += 1

            if len(self._buffer) < 3:
                break
            if self._buffer[1] != GENERAL_PACKET_MSG_ID or self._buffer[2] != PAYLOAD_LEN:
                # Not a frame start we recognize; step past this STX.
                del self._buffer[:1]
                self.stats.resyncs += 1
                continue

            if len(self._buffer) < FRAME_LEN:
                break

            payload = bytes(self._buffer[3 : 3 + PAYLOAD_LEN])
            wire_crc = self._buffer[3 + PAYLOAD_LEN]
            etx = self._buffer[4 + PAYLOAD_LEN]
            if crc8(payload) != wire_crc:
                self.stats.crc_failures += 1
                self.stats.resyncs += 1
                del self._buffer[:1]
                continue
            if etx != ETX:
                self.stats.resyncs += 1
                del self._buffer[:1]
                continue

            packets.append(_decode_payload(self._buffer[1], payload))
            self.stats.packets_ok += 1
            del self._buffer[:FRAME_LEN]

        if len(self._buffer) > MAX_BUFFER:
            del self._buffer[: len(self._buffer) - MAX_BUFFER]
            self.stats.resyncs += 1
        return packets

    @property
    def buffered(self) -> int:
        return len(self._buffer)


class PipeChannel:
    """In-memory byte channel. Thread-safe single-producer/single-consumer."""

    def __init__(self) -> None:
        self._buf = bytearray()
        self._lock = threading.Lock()
        self._data = threading.Condition(self._lock)
        self._closed = False

    def write(self, data: bytes) -> int:
        with self._data:
            if self._closed:
                raise BrokenPipeError("channel closed")
            self._buf.extend(data)
            self._data.notify_all()
        return len(data)

    def read(self, max_bytes: int = 4096, timeout: float | None = 0.0) -> bytes:
        """Read up to max_bytes; empty result means no data (or closed)."""
        with self._data:
            if not self._buf and timeout and not self._closed:
                self._data.wait(timeout)
            n = min(max_bytes, len(self._buf))
            out = bytes(self._buf[:n])
            del self._buf[:n]
            return out

    def close(self) -> None:
        with self._data:
            self._closed = True
            self._data.notify_all()


class FileReplayChannel:
    """Read-only channel over a captured byte stream (file or bytes)."""

    def __init__(self, source: str | bytes) -> None:
        if isinstance(source, bytes):
            self._fh = io.BytesIO(source)
        else:
            self._fh = open(source, "rb")

    def read(self, max_bytes: int = 4096) -> bytes:
        return self._fh.read(max_bytes)

    def close(self) -> None:
        self._fh.close()


class TcpChannel:
    """Byte channel over a connected TCP socket."""

    def __init__(self, host: str, port: int, timeout: float = 2.0) -> None:
        self._sock = socket.create_connection((host, port), timeout=timeout)

    def write(self, data: bytes) -> int:
        self._sock.sendall(data)
        return len(data)

    def read(self, max_bytes: int = 4096) -> bytes:
        try:
            return self._sock.recv(max_bytes)
        except socket.timeout:
            return b""

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()
