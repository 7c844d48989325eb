"""Viewer channel: hello/frame/stats push protocol and transports.

UI -> master carries ordinary event frames (see interact). master -> UI
messages reuse the "PM" magic and version but carry bulk payloads, so their
header widens the length field to u32: magic "PM", version u8, kind u8,
seq u32, payload_length u32. Kinds:

    0x20 hello  mural_w u16, mural_h u16, mode u8 (0 tiled / 1 composited), caching u8
    0x21 frame  frame_no u32, w u16, h u16, then per-row RLE:
                runs of (count u16, r, g, b, a) covering each row exactly
    0x22 stats  fps f32, links u16, bytes_per_link u64 x links

Browsers connect through a vanilla RFC6455 WebSocket carrying the same bytes
as binary messages; plain TCP clients (tests, tools) speak the raw stream.
The listener sniffs the first bytes to tell the two apart.
"""

from __future__ import annotations

import base64
import hashlib
import struct
import threading

import numpy as np

UI_MAGIC = b"PM"
UI_VERSION = 1
UI_HEADER_LEN = 12

MSG_HELLO = 0x20
MSG_FRAME = 0x21
MSG_STATS = 0x22

_WS_GUID = b"258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


def encode_push(kind: int, seq: int, payload: bytes) -> bytes:
    return UI_MAGIC + struct.pack("<BBII", UI_VERSION, kind, seq, len(payload)) + payload


def decode_push(buf, offset: int = 0):
    if len(buf) - offset < UI_HEADER_LEN:
        return None
    if bytes(buf[offset : offset + 2]) != UI_MAGIC:
        raise ValueError("bad push magic")
    version, kind, seq, plen = struct.unpack_from("<BBII", buf, offset + 2)
    if version != UI_VERSION:
        raise ValueError(f"bad push version {version}")
    if len(buf) - offset < UI_HEADER_LEN + plen:
        return None
    body = bytes(buf[offset + UI_HEADER_LEN : offset + UI_HEADER_LEN + plen])
    return kind, seq, body, UI_HEADER_LEN + plen


def hello_payload(mural_w, mural_h, mode: str, caching: bool) -> bytes:
    return struct.pack("<HHBB", mural_w, mural_h, 1 if mode == "composited" else 0, 1 if caching else 0)


def stats_payload(fps: float, bytes_per_link: list) -> bytes:
    return struct.pack("<fH", fps, len(bytes_per_link)) + b"".join(
        struct.pack("<Q", int(b)) for b in bytes_per_link
    )


def rle_encode_rgba(color: np.ndarray) -> bytes:
    """Per-row run-length encoding of an (h, w, 4) uint8 image."""
    h, w, _ = color.shape
    if w > 0xFFFF:
        raise ValueError("row too wide for u16 run counts")
    out = bytearray()
    for y in range(h):
        row = color[y]
        change = np.flatnonzero((row[1:] != row[:-1]).any(axis=1)) + 1
        starts = np.concatenate(([0], change))
        ends = np.concatenate((change, [w]))
        for s, e in zip(starts, ends):
            out += struct.pack("<H", int(e - s)) + row[s].tobytes()
    return bytes(out)


def rle_decode_rgba(data: bytes, w: int, h: int) -> np.ndarray:
    out = np.zeros((h, w, 4), dtype=np.uint8)
    pos = 0
    for y in range(h):
        x = 0
        while x < w:
            count = struct.unpack_from("<H", data, pos)[0]
            px = np.frombuffer(data, dtype=np.uint8, count=4, offset=pos + 2)
            out[y, x : x + count] = px
            x += count
            pos += 6
        if x != w:
            raise ValueError(f"row {y} RLE does not cover the row")
    if pos != len(data):
        raise ValueError("trailing bytes after RLE image")
    return out


def frame_payload(frame_no: int, color: np.ndarray) -> bytes:
    h, w, _ = color.shape
    return struct.pack("<IHH", frame_no, w, h) + rle_encode_rgba(color)


def parse_frame_payload(body: bytes):
    frame_no, w, h = struct.unpack_from("<IHH", body)
    return frame_no, rle_decode_rgba(body[8:], w, h)


def parse_stats_payload(body: bytes):
    fps, links = struct.unpack_from("<fH", body)
    vals = [struct.unpack_from("<Q", body, 6 + 8 * i)[0] for i in range(links)]
    return fps, vals


def parse_hello_payload(body: bytes):
    w, h, mode, caching = struct.unpack("<HHBB", body)
    return w, h, ("composited" if mode == 1 else "tiled"), bool(caching)


# ---------------------------------------------------------------------------
# Client connection wrappers: raw TCP or server-side WebSocket
# ---------------------------------------------------------------------------


class UiClient:
    """One connected viewer; hides the raw-vs-websocket difference.

    Callers peek the first bytes (without consuming) to classify the client:
    an HTTP upgrade request means WebSocket, anything else (or silence) means
    the raw stream protocol, where the server speaks first.
    """

    def __init__(self, sock, peeked: bytes):
        self._sock = sock
        self._lock = threading.Lock()
        self._recv_buf = bytearray()
        self.websocket = peeked.startswith(b"GET ")
        if self.websocket:
            self._handshake()

    def _handshake(self):
        data = bytearray()
        while b"\r\n\r\n" not in data:
            chunk = self._sock.recv(4096)
            if not chunk:
                raise ConnectionError("client left during websocket handshake")
            data.extend(chunk)
        head, _, rest = bytes(data).partition(b"\r\n\r\n")
        key = None
        for line in head.split(b"\r\n"):
            if line.lower().startswith(b"sec-websocket-key:"):
                key = line.split(b":", 1)[1].strip()
        if key is None:
            raise ConnectionError("not a websocket upgrade request")
        accept = base64.b64encode(hashlib.sha1(key + _WS_GUID).digest())
        self._sock.sendall(
            b"HTTP/1.1 101 Switching Protocols\r\n"
            b"Upgrade: websocket\r\nConnection: Upgrade\r\n"
            b"Sec-WebSocket-Accept: " + accept + b"\r\n\r\n"
        )
        self._recv_buf.extend(rest)

    # -- websocket framing ----------------------------------------------------

    def _ws_send(self, payload: bytes):
        n = len(payload)
        if n < 126:
            head = struct.pack("!BB", 0x82, n)
        elif n < 1 << 16:
            head = struct.pack("!BBH", 0x82, 126, n)
        else:
            head = struct.pack("!BBQ", 0x82, 127, n)
        self._sock.sendall(head + payload)

    def _fill(self, need: int) -> bool:
        while len(self._recv_buf) < need:
            chunk = self._sock.recv(1 << 16)
            if not chunk:
                return False
            self._recv_buf.extend(chunk)
        return True

    def _ws_recv(self):
        while True:
            if not self._fill(2):
                return None
            b0, b1 = self._recv_buf[0], self._recv_buf[1]
            opcode = b0 & 0x0F
            masked = bool(b1 & 0x80)
            length = b1 & 0x7F
            pos = 2
            if length == 126:
                if not self._fill(4):
                    return None
                length = struct.unpack_from("!H", self._recv_buf, 2)[0]
                pos = 4
            elif length == 127:
                if not self._fill(10):
                    return None
                length = struct.unpack_from("!Q", self._recv_buf, 2)[0]
                pos = 10
            mask = b""
            if masked:
                if not self._fill(pos + 4):
                    return None
                mask = bytes(self._recv_buf[pos : pos + 4])
                pos += 4
            if not self._fill(pos + length):
                return None
            payload = bytes(self._recv_buf[pos : pos + length])
            del self._recv_buf[: pos + length]
            if masked:
                payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
            if opcode == 0x8:  # close
                return None
            if opcode == 0x9:  # ping -> pong
                with self._lock:
                    self._sock.sendall(struct.pack("!BB", 0x8A, len(payload)) + payload)
                continue
            if opcode in (0x1, 0x2):
                return payload
            # continuation/pong: skip

    # -- public api -------------------------------------------------------------

    def send(self, data: bytes):
        with self._lock:
            if self.websocket:
                self._ws_send(data)
            else:
                self._sock.sendall(data)

    def recv(self):
        """Next chunk of event bytes from the viewer, None on close."""
        if self.websocket:
            return self._ws_recv()
        if self._recv_buf:
            out = bytes(self._recv_buf)
            self._recv_buf.clear()
            return out
        chunk = self._sock.recv(1 << 16)
        return chunk if chunk else None

    def close(self):
        try:
            self._sock.close()
        except OSError:
            pass
