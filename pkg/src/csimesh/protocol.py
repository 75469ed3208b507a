"""Binary CSI packet codec, TDMA schedule math, ring buffer, and UDP collector.

Wire layout (all multi-byte fields little-endian):

    magic (1, 0xC5) | node_id (2) | timestamp_us (4) | K x (I, Q) int8 | crc32 (4)

Packet length is 11 + 2K bytes for K subcarriers, K in [1, 52]; K is
inferred from the buffer length because UDP preserves message boundaries.
The CRC is the reflected IEEE CRC-32 (zlib) over all preceding bytes.
On-disk captures are a concatenation of packets, each prefixed with a
16-bit little-endian length.
"""

from __future__ import annotations

import select
import socket
import struct
import threading
import zlib
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator

import numpy as np

MAGIC = 0xC5
HEADER_LEN = 7  # magic + node_id + timestamp_us
CRC_LEN = 4
MIN_SUBCARRIERS = 1
MAX_SUBCARRIERS = 52
MIN_PACKET_LEN = HEADER_LEN + 2 * MIN_SUBCARRIERS + CRC_LEN
MAX_PACKET_LEN = HEADER_LEN + 2 * MAX_SUBCARRIERS + CRC_LEN

DEFAULT_SERVER_PORT = 5000
DEFAULT_BURST_PORT = 5555

_HEADER = struct.Struct("<BHI")
_CRC = struct.Struct("<I")
_PREFIX = struct.Struct("<H")

TIMESTAMP_MODULUS = 1 << 32


class DecodeError(ValueError):
    """A datagram could not be decoded into a valid packet."""


class BadMagic(DecodeError):
    pass


class BadLength(DecodeError):
    pass


class CrcMismatch(DecodeError):
    pass


def packet_length(subcarriers: int) -> int:
    """Encoded size in bytes for a packet with the given subcarrier count."""
    return HEADER_LEN + 2 * subcarriers + CRC_LEN


@dataclass
class CsiPacket:
    """One CSI measurement: reporter node, wire timestamp, and I/Q samples.

    ``iq`` is a (K, 2) int8 array of signed I/Q pairs.  ``node_id`` is the
    receiving node; the transmitter is recovered downstream from the TDMA
    slot the timestamp falls in.
    """

    node_id: int
    timestamp_us: int
    iq: np.ndarray

    def __post_init__(self) -> None:
        if not 0 <= self.node_id <= 0xFFFF:
            raise ValueError(f"node_id {self.node_id} out of 16-bit range")
        if not 0 <= self.timestamp_us < TIMESTAMP_MODULUS:
            raise ValueError(f"timestamp_us {self.timestamp_us} out of 32-bit range")
        iq = np.asarray(self.iq, dtype=np.int8)
        if iq.ndim != 2 or iq.shape[1] != 2:
            raise ValueError(f"iq must have shape (K, 2), got {iq.shape}")
        if not MIN_SUBCARRIERS <= iq.shape[0] <= MAX_SUBCARRIERS:
            raise ValueError(f"subcarrier count {iq.shape[0]} out of range")
        self.iq = iq

    @property
    def subcarrier_count(self) -> int:
        return int(self.iq.shape[0])

    def amplitudes(self) -> np.ndarray:
        """Per-subcarrier amplitude sqrt(I^2 + Q^2); phase is discarded."""
        i = self.iq[:, 0].astype(np.float64)
        q = self.iq[:, 1].astype(np.float64)
        return np.hypot(i, q)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CsiPacket):
            return NotImplemented
        return (
            self.node_id == other.node_id
            and self.timestamp_us == other.timestamp_us
            and self.iq.shape == other.iq.shape
            and bool(np.array_equal(self.iq, other.iq))
        )


def encode_packet(packet: CsiPacket) -> bytes:
    """Serialize a packet; the CRC is computed here."""
    body = _HEADER.pack(MAGIC, packet.node_id, packet.timestamp_us)
    body += packet.iq.astype("<i1").tobytes()
    return body + _CRC.pack(zlib.crc32(body))


def decode_packet(buf: bytes) -> CsiPacket:
    """Parse and validate one packet buffer.

    Raises BadLength, BadMagic, or CrcMismatch; the three are distinguishable
    so callers can keep per-cause counters.
    """
    n = len(buf)
    if n < MIN_PACKET_LEN or n > MAX_PACKET_LEN or (n - HEADER_LEN - CRC_LEN) % 2:
        raise BadLength(f"packet length {n} invalid")
    if buf[0] != MAGIC:
        raise BadMagic(f"magic byte 0x{buf[0]:02X} != 0x{MAGIC:02X}")
    expected = _CRC.unpack_from(buf, n - CRC_LEN)[0]
    actual = zlib.crc32(buf[: n - CRC_LEN])
    if expected != actual:
        raise CrcMismatch(f"crc 0x{actual:08X} != stored 0x{expected:08X}")
    _, node_id, timestamp_us = _HEADER.unpack_from(buf, 0)
    k = (n - HEADER_LEN - CRC_LEN) // 2
    iq = np.frombuffer(buf, dtype=np.int8, count=2 * k, offset=HEADER_LEN)
    return CsiPacket(node_id=node_id, timestamp_us=timestamp_us, iq=iq.reshape(k, 2).copy())


# --- TDMA schedule -----------------------------------------------------------


@dataclass(frozen=True)
class TdmaSchedule:
    """Backend-orchestrated TDMA parameters.

    One node transmits per slot; a full cycle visits every node, so the
    per-link (mesh) sampling rate is 1000 / (node_count * slot_ms) Hz.
    """

    node_count: int
    slot_ms: float = 80.0
    burst_count: int = 100
    burst_interval_us: int = 200

    def __post_init__(self) -> None:
        if self.node_count < 1:
            raise ValueError("node_count must be >= 1")
        if self.slot_ms <= 0:
            raise ValueError("slot_ms must be > 0")
        if self.burst_count < 1 or self.burst_interval_us <= 0:
            raise ValueError("burst parameters must be positive")

    @property
    def cycle_ms(self) -> float:
        return self.node_count * self.slot_ms

    @property
    def mesh_rate_hz(self) -> float:
        return 1000.0 / self.cycle_ms


def tdma_rate(schedule: TdmaSchedule) -> tuple[float, float]:
    """Return (cycle_ms, mesh_rate_hz) for a schedule."""
    return schedule.cycle_ms, schedule.mesh_rate_hz


# --- Ring buffer -------------------------------------------------------------


class RingBuffer:
    """Bounded FIFO of byte entries with an overwrite-oldest drop policy.

    Mirrors the firmware buffer: the producer never blocks; when full, the
    oldest entry is discarded and counted.  Safe for one producer thread and
    one consumer thread.
    """

    def __init__(self, capacity: int = 384, entry_size: int = 16):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        if entry_size < 1:
            raise ValueError("entry_size must be >= 1")
        self.capacity = capacity
        self.entry_size = entry_size
        self._q: deque[bytes] = deque()
        self._lock = threading.Lock()
        self.pushed = 0
        self.popped = 0
        self.dropped = 0

    def push(self, entry: bytes) -> bool:
        """Append an entry, evicting the oldest when full.

        Returns True when nothing was evicted.
        """
        if len(entry) > self.entry_size:
            raise ValueError(f"entry of {len(entry)} bytes exceeds entry_size {self.entry_size}")
        with self._lock:
            evicted = False
            if len(self._q) >= self.capacity:
                self._q.popleft()
                self.dropped += 1
                evicted = True
            self._q.append(bytes(entry))
            self.pushed += 1
            return not evicted

    def pop(self) -> bytes | None:
        with self._lock:
            if not self._q:
                return None
            self.popped += 1
            return self._q.popleft()

    def __len__(self) -> int:
        with self._lock:
            return len(self._q)

    @property
    def occupancy(self) -> int:
        return len(self)


# --- Capture files -----------------------------------------------------------


def write_capture(dest: str | Path | BinaryIO, encoded_packets: Iterable[bytes]) -> int:
    """Write length-prefixed encoded packets; returns the packet count."""
    own = isinstance(dest, (str, Path))
    fp: BinaryIO = open(dest, "wb") if own else dest  # type: ignore[arg-type]
    count = 0
    try:
        for buf in encoded_packets:
            if len(buf) > 0xFFFF:
                raise ValueError("packet too large for 16-bit length prefix")
            fp.write(_PREFIX.pack(len(buf)))
            fp.write(buf)
            count += 1
    finally:
        if own:
            fp.close()
    return count


def iter_capture(source: str | Path | BinaryIO) -> Iterator[bytes]:
    """Yield raw packet buffers from a capture file in stored order."""
    own = isinstance(source, (str, Path))
    fp: BinaryIO = open(source, "rb") if own else source  # type: ignore[arg-type]
    try:
        while True:
            head = fp.read(2)
            if not head:
                return
            if len(head) < 2:
                raise BadLength("truncated length prefix")
            (n,) = _PREFIX.unpack(head)
            buf = fp.read(n)
            if len(buf) < n:
                raise BadLength("truncated packet body")
            yield buf
    finally:
        if own:
            fp.close()


def read_capture(source: str | Path | BinaryIO) -> list[CsiPacket]:
    """Decode every packet in a capture file; raises on the first bad record."""
    return [decode_packet(buf) for buf in iter_capture(source)]


class TimestampUnwrapper:
    """Reconstructs monotone 64-bit microsecond times from 32-bit wire stamps.

    The wire field wraps every ~71.6 minutes; a drop of more than half the
    range between consecutive stamps of one stream is treated as a rollover.
    """

    def __init__(self) -> None:
        self._epoch = 0
        self._last: int | None = None

    def unwrap(self, timestamp_us: int) -> int:
        if self._last is not None and timestamp_us < self._last:
            if self._last - timestamp_us > TIMESTAMP_MODULUS // 2:
                self._epoch += TIMESTAMP_MODULUS
        self._last = timestamp_us
        return self._epoch + timestamp_us


# --- UDP collector -----------------------------------------------------------


@dataclass
class CollectorStats:
    received: int = 0
    decoded: int = 0
    invalid: int = 0
    bad_magic: int = 0
    bad_length: int = 0
    crc_mismatch: int = 0


class CsiCollector:
    """UDP endpoint feeding validated packets through a drop-oldest ring.

    A single reader thread services all bound sockets (select loop) and is
    the only ring producer; the caller draining ``poll``/``packets`` is the
    single consumer.  A stalled consumer only grows the drop counter, it
    never blocks or kills the reader.
    """

    def __init__(
        self,
        host: str = "0.0.0.0",
        ports: Iterable[int] = (DEFAULT_SERVER_PORT, DEFAULT_BURST_PORT),
        capacity: int = 384,
    ):
        self.host = host
        self.requested_ports = tuple(ports)
        self.ring = RingBuffer(capacity=capacity, entry_size=MAX_PACKET_LEN)
        self.stats = CollectorStats()
        self._socks: list[socket.socket] = []
        self._thread: threading.Thread | None = None
        self._stop = threading.Event()
        self.ports: tuple[int, ...] = ()

    def start(self) -> "CsiCollector":
        bound = []
        try:
            for port in self.requested_ports:
                sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
                sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
                sock.bind((self.host, port))
                sock.setblocking(False)
                bound.append(sock)
        except OSError:
            for sock in bound:
                sock.close()
            raise
        self._socks = bound
        self.ports = tuple(s.getsockname()[1] for s in bound)
        self._stop.clear()
        self._thread = threading.Thread(target=self._reader, daemon=True)
        self._thread.start()
        return self

    def _reader(self) -> None:
        while not self._stop.is_set():
            ready, _, _ = select.select(self._socks, [], [], 0.05)
            for sock in ready:
                try:
                    data, _ = sock.recvfrom(65535)
                except OSError:
                    continue
                self.stats.received += 1
                try:
                    decode_packet(data)
                except BadMagic:
                    self.stats.invalid += 1
                    self.stats.bad_magic += 1
                except BadLength:
                    self.stats.invalid += 1
                    self.stats.bad_length += 1
                except CrcMismatch:
                    self.stats.invalid += 1
                    self.stats.crc_mismatch += 1
                else:
                    self.stats.decoded += 1
                    self.ring.push(data)

    def poll(self) -> CsiPacket | None:
        """Pop and decode one validated packet, or None when the ring is empty."""
        buf = self.ring.pop()
        if buf is None:
            return None
        return decode_packet(buf)

    def packets(self, count: int, timeout_s: float = 5.0) -> list[CsiPacket]:
        """Drain up to ``count`` packets, waiting at most ``timeout_s``."""
        import time

        out: list[CsiPacket] = []
        deadline = time.monotonic() + timeout_s
        while len(out) < count and time.monotonic() < deadline:
            pkt = self.poll()
            if pkt is None:
                time.sleep(0.002)
                continue
            out.append(pkt)
        return out

    @property
    def dropped(self) -> int:
        return self.ring.dropped

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2.0)
            self._thread = None
        for sock in self._socks:
            sock.close()
        self._socks = []

    def __enter__(self) -> "CsiCollector":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
