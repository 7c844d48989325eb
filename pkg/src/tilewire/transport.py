"""Byte transports between roles.

Two interchangeable flavors: real stream sockets, and in-process channels
whose delivery can be throttled by a bandwidth/latency model. Throttled
channels may share one LineScheduler, which serializes them the way a
saturated shared network segment would; delivery of n bytes then completes
no earlier than latency + 8n/bandwidth after the line becomes free.

Channels are FIFO and single-sender by contract. recv_bytes returns None at
end of stream and raises TimeoutError when a timeout is given and expires.
"""

from __future__ import annotations

import queue
import socket
import threading
import time
from dataclasses import dataclass

_EOF = object()


class ChannelClosed(Exception):
    pass


@dataclass(frozen=True)
class ThrottleSpec:
    bandwidth_bps: float
    latency_s: float = 0.0

    def __post_init__(self):
        if self.bandwidth_bps <= 0:
            raise ValueError("bandwidth must be positive")
        if self.latency_s < 0:
            raise ValueError("latency must be non-negative")


class LineScheduler:
    """Virtual clock of one serialized transmission medium."""

    def __init__(self):
        self._lock = threading.Lock()
        self._free_at = 0.0

    def reserve(self, n_bytes: float, bandwidth_bps: float) -> float:
        with self._lock:
            now = time.monotonic()
            start = max(now, self._free_at)
            self._free_at = start + 8.0 * n_bytes / bandwidth_bps
            return self._free_at


class LocalChannel:
    """In-process FIFO byte channel with optional throttling."""

    def __init__(self, throttle: ThrottleSpec | None = None, line: LineScheduler | None = None):
        self._q = queue.SimpleQueue()
        self.throttle = throttle
        self._line = line or (LineScheduler() if throttle else None)
        self.bytes_sent = 0
        self._closed = False

    def send_bytes(self, data) -> float:
        """Queue data; returns the modeled delivery completion time."""
        if self._closed:
            raise ChannelClosed("send on closed channel")
        data = bytes(data)
        if self.throttle:
            deadline = self._line.reserve(len(data), self.throttle.bandwidth_bps)
            deadline += self.throttle.latency_s
        else:
            deadline = 0.0
        self.bytes_sent += len(data)
        self._q.put((deadline, data))
        return deadline

    def recv_bytes(self, timeout: float | None = None):
        try:
            item = self._q.get(timeout=timeout) if timeout is not None else self._q.get()
        except queue.Empty:
            raise TimeoutError("channel receive timed out") from None
        if item is _EOF:
            self._q.put(_EOF)  # keep EOF observable for any later reader
            return None
        deadline, data = item
        delay = deadline - time.monotonic()
        if delay > 0:
            time.sleep(delay)
        return data

    def close(self):
        self._closed = True
        self._q.put(_EOF)


def throttled_send(chan: LocalChannel, data) -> float:
    """Send on a throttled channel; returns the modeled completion time."""
    return chan.send_bytes(data)


class SocketChannel:
    """Stream socket with the channel interface."""

    def __init__(self, sock: socket.socket):
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock = sock
        self.bytes_sent = 0
        self._send_lock = threading.Lock()

    def send_bytes(self, data) -> float:
        try:
            with self._send_lock:
                self._sock.sendall(data)
        except OSError as exc:
            raise ChannelClosed(str(exc)) from exc
        self.bytes_sent += len(data)
        return 0.0

    def recv_bytes(self, timeout: float | None = None):
        self._sock.settimeout(timeout)
        try:
            data = self._sock.recv(1 << 16)
        except socket.timeout:
            raise TimeoutError("socket receive timed out") from None
        except OSError:
            return None
        return data if data else None

    def close(self):
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


def listen(host: str, port: int, backlog: int = 16) -> socket.socket:
    srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    srv.bind((host, port))
    srv.listen(backlog)
    return srv


def connect(host: str, port: int, retries: int = 50, delay: float = 0.1) -> socket.socket:
    last = None
    for _ in range(retries):
        try:
            return socket.create_connection((host, port), timeout=5.0)
        except OSError as exc:
            last = exc
            time.sleep(delay)
    raise ConnectionError(f"could not connect to {host}:{port}: {last}")
