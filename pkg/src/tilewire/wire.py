"""Graphics command wire protocol: codec, bucketing, state tracking, lists.

Frame layout (all little-endian): header = magic "CW", version u8 = 1,
opcode u8, payload_length u32. Payloads:

    0x10 BEGIN_FRAME    frame_no u32, sender_rank u16
    0x11 CLEAR          rgba u8 x4, depth f32
    0x12 SET_CAMERA     matrix f32 x16, column-major
    0x13 DRAW_TRIANGLES count u32, count x (3 x (pos f32 x3, rgb u8 x3, pad u8))
    0x14 DEFINE_LIST    id u32, inner_length u32, inner command frames
    0x15 CALL_LIST      id u32
    0x16 BARRIER        barrier_id u32
    0x17 SWAP           suppress u8
    0x18 BLIT_IMAGE     x u16, y u16, w u16, h u16, rgba8 pixels
    0x19 END_FRAME      frame_no u32

decode() distinguishes an incomplete buffer (TruncatedFrame: wait for more
bytes) from a malformed one (MalformedFrame: the frame is aborted; this is a
closed system, no resynchronization is attempted).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .scene import TRIANGLE_WIRE_BYTES, VERTEX_DTYPE

MAGIC = b"CW"
VERSION = 1
HEADER_LEN = 8

OP_BEGIN_FRAME = 0x10
OP_CLEAR = 0x11
OP_SET_CAMERA = 0x12
OP_DRAW_TRIANGLES = 0x13
OP_DEFINE_LIST = 0x14
OP_CALL_LIST = 0x15
OP_BARRIER = 0x16
OP_SWAP = 0x17
OP_BLIT_IMAGE = 0x18
OP_END_FRAME = 0x19


class ProtocolError(Exception):
    """Protocol contract violation; the current frame is aborted."""


class MalformedFrame(ProtocolError):
    """Bytes that can never become a valid frame (bad magic/opcode/length)."""


class TruncatedFrame(Exception):
    """Buffer ends before the frame does; feed more bytes and retry."""


class Command:
    opcode: int = 0

    def payload(self) -> bytes:
        raise NotImplementedError

    def __eq__(self, other):
        return type(self) is type(other) and self.payload() == other.payload()

    def __hash__(self):
        return hash((type(self), self.payload()))


@dataclass(eq=False)
class BeginFrame(Command):
    opcode = OP_BEGIN_FRAME
    frame_no: int
    sender_rank: int

    def payload(self):
        return struct.pack("<IH", self.frame_no, self.sender_rank)


@dataclass(eq=False)
class Clear(Command):
    opcode = OP_CLEAR
    rgba: tuple = (0, 0, 0, 255)
    depth: float = 1.0

    def payload(self):
        return struct.pack("<4Bf", *self.rgba, self.depth)


@dataclass(eq=False)
class SetCamera(Command):
    opcode = OP_SET_CAMERA
    matrix: np.ndarray  # (4,4) float32, world-to-clip

    def payload(self):
        m = np.ascontiguousarray(self.matrix, dtype="<f4")
        return m.T.tobytes()  # column-major on the wire


@dataclass(eq=False)
class DrawTriangles(Command):
    opcode = OP_DRAW_TRIANGLES
    tris: np.ndarray  # (n, 3) VERTEX_DTYPE

    def payload(self):
        t = np.ascontiguousarray(self.tris, dtype=VERTEX_DTYPE)
        return struct.pack("<I", len(t)) + t.tobytes()


@dataclass(eq=False)
class DefineList(Command):
    opcode = OP_DEFINE_LIST
    list_id: int
    commands: tuple = ()  # draw commands only

    def __post_init__(self):
        for c in self.commands:
            if not isinstance(c, (DrawTriangles, BlitImage)):
                raise ProtocolError("display lists may contain draw commands only")

    def payload(self):
        inner = b"".join(encode(c) for c in self.commands)
        return struct.pack("<II", self.list_id, len(inner)) + inner


@dataclass(eq=False)
class CallList(Command):
    opcode = OP_CALL_LIST
    list_id: int

    def payload(self):
        return struct.pack("<I", self.list_id)


@dataclass(eq=False)
class Barrier(Command):
    opcode = OP_BARRIER
    barrier_id: int

    def payload(self):
        return struct.pack("<I", self.barrier_id)


@dataclass(eq=False)
class Swap(Command):
    opcode = OP_SWAP
    suppress: bool = False

    def payload(self):
        return struct.pack("<B", 1 if self.suppress else 0)


@dataclass(eq=False)
class BlitImage(Command):
    opcode = OP_BLIT_IMAGE
    x: int
    y: int
    pixels: np.ndarray  # (h, w, 4) uint8

    def payload(self):
        p = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        h, w = p.shape[:2]
        return struct.pack("<4H", self.x, self.y, w, h) + p.tobytes()


@dataclass(eq=False)
class EndFrame(Command):
    opcode = OP_END_FRAME
    frame_no: int

    def payload(self):
        return struct.pack("<I", self.frame_no)


def encode(cmd: Command) -> bytes:
    body = cmd.payload()
    return MAGIC + struct.pack("<BBI", VERSION, cmd.opcode, len(body)) + body


def _need(buf, offset, n):
    if len(buf) - offset < n:
        raise TruncatedFrame(f"need {n} bytes, have {len(buf) - offset}")


def decode(buf, offset: int = 0):
    """Parse one frame at offset. Returns (command, consumed bytes)."""
    _need(buf, offset, HEADER_LEN)
    if bytes(buf[offset : offset + 2]) != MAGIC:
        raise MalformedFrame("bad magic")
    version, opcode, plen = struct.unpack_from("<BBI", buf, offset + 2)
    if version != VERSION:
        raise MalformedFrame(f"unsupported version {version}")
    _need(buf, offset, HEADER_LEN + plen)
    body = bytes(buf[offset + HEADER_LEN : offset + HEADER_LEN + plen])
    try:
        cmd = _decode_body(opcode, body)
    except (struct.error, ValueError) as exc:
        raise MalformedFrame(str(exc)) from exc
    return cmd, HEADER_LEN + plen


def _decode_body(opcode, body):
    if opcode == OP_BEGIN_FRAME:
        _expect_len(body, 6)
        frame_no, rank = struct.unpack("<IH", body)
        return BeginFrame(frame_no, rank)
    if opcode == OP_CLEAR:
        _expect_len(body, 8)
        r, g, b, a, depth = struct.unpack("<4Bf", body)
        return Clear((r, g, b, a), depth)
    if opcode == OP_SET_CAMERA:
        _expect_len(body, 64)
        m = np.frombuffer(body, dtype="<f4").reshape(4, 4).T.copy()
        return SetCamera(m)
    if opcode == OP_DRAW_TRIANGLES:
        if len(body) < 4:
            raise MalformedFrame("draw payload shorter than its count")
        (count,) = struct.unpack_from("<I", body)
        _expect_len(body, 4 + count * TRIANGLE_WIRE_BYTES)
        tris = np.frombuffer(body, dtype=VERTEX_DTYPE, offset=4).reshape(count, 3)
        return DrawTriangles(tris)
    if opcode == OP_DEFINE_LIST:
        if len(body) < 8:
            raise MalformedFrame("define_list payload too short")
        list_id, inner_len = struct.unpack_from("<II", body)
        _expect_len(body, 8 + inner_len)
        inner = []
        pos = 8
        end = 8 + inner_len
        while pos < end:
            try:
                cmd, used = decode(body, pos)
            except TruncatedFrame as exc:
                raise MalformedFrame("inner stream truncated") from exc
            inner.append(cmd)
            pos += used
        return DefineList(list_id, tuple(inner))
    if opcode == OP_CALL_LIST:
        _expect_len(body, 4)
        return CallList(struct.unpack("<I", body)[0])
    if opcode == OP_BARRIER:
        _expect_len(body, 4)
        return Barrier(struct.unpack("<I", body)[0])
    if opcode == OP_SWAP:
        _expect_len(body, 1)
        return Swap(bool(body[0]))
    if opcode == OP_BLIT_IMAGE:
        if len(body) < 8:
            raise MalformedFrame("blit payload too short")
        x, y, w, h = struct.unpack_from("<4H", body)
        _expect_len(body, 8 + w * h * 4)
        px = np.frombuffer(body, dtype=np.uint8, offset=8).reshape(h, w, 4)
        return BlitImage(x, y, px)
    if opcode == OP_END_FRAME:
        _expect_len(body, 4)
        return EndFrame(struct.unpack("<I", body)[0])
    raise MalformedFrame(f"unknown opcode 0x{opcode:02x}")


def _expect_len(body, n):
    if len(body) != n:
        raise MalformedFrame(f"payload length {len(body)}, expected {n}")


class StreamDecoder:
    """Reassembles commands from an arbitrary chunking of the byte stream."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, chunk: bytes):
        self._buf.extend(chunk)
        out = []
        pos = 0
        while True:
            try:
                cmd, used = decode(self._buf, pos)
            except TruncatedFrame:
                break
            out.append(cmd)
            pos += used
        del self._buf[:pos]
        return out

    @property
    def pending_bytes(self) -> int:
        return len(self._buf)


# ---------------------------------------------------------------------------
# Screen-space bucketing
# ---------------------------------------------------------------------------


def bucket(tri_bounds, tiles) -> set:
    """Tile ids whose rectangle can contain covered pixels of the AABB.

    tri_bounds is (x0, y0, x1, y1) in snapped 1/256-pixel units, or None for
    geometry culled before rasterization (behind the near plane etc.), which
    buckets to the empty set. The result is a superset of the tiles the
    rasterizer can touch: a covered pixel center lies inside the vertex AABB.
    """
    if tri_bounds is None:
        return set()
    x0, y0, x1, y1 = tri_bounds
    pxmin = (x0 - 128 + 255) >> 8
    pxmax = (x1 - 128) >> 8
    pymin = (y0 - 128 + 255) >> 8
    pymax = (y1 - 128) >> 8
    out = set()
    for t in tiles:
        if t.x <= pxmax and t.x + t.w - 1 >= pxmin and t.y <= pymax and t.y + t.h - 1 >= pymin:
            out.add(t.id)
    return out


def snapped_bounds(xi, yi, ok):
    """AABB of a projected vertex group, or None if any vertex was culled."""
    if not np.all(ok):
        return None
    return (int(xi.min()), int(yi.min()), int(xi.max()), int(yi.max()))


# ---------------------------------------------------------------------------
# State tracking (sender-side mirror of one server's known state)
# ---------------------------------------------------------------------------


@dataclass
class ServerStateMirror:
    """What one connection has already told its server.

    Camera and clear are compared by encoded payload, so "identical" means
    bit-identical on the wire. CLEAR here is state, not an action: servers
    re-apply the remembered clear parameters at every frame start, which is
    what makes suppressing a repeated CLEAR safe.
    """

    last_camera: bytes | None = None
    last_clear: bytes | None = None
    defined_lists: set = field(default_factory=set)

    def copy(self):
        return ServerStateMirror(self.last_camera, self.last_clear, set(self.defined_lists))


def track(cmd: Command, mirror: ServerStateMirror) -> bool:
    """Decide send (True) or suppress (False); updates the mirror on send."""
    if isinstance(cmd, SetCamera):
        p = cmd.payload()
        if p == mirror.last_camera:
            return False
        mirror.last_camera = p
        return True
    if isinstance(cmd, Clear):
        p = cmd.payload()
        if p == mirror.last_clear:
            return False
        mirror.last_clear = p
        return True
    if isinstance(cmd, DefineList):
        if cmd.list_id in mirror.defined_lists:
            return False
        mirror.defined_lists.add(cmd.list_id)
        return True
    return True


def mirror_replay(commands) -> ServerStateMirror:
    """Final mirror state after replaying a command sequence on a fresh server."""
    m = ServerStateMirror()
    for cmd in commands:
        if isinstance(cmd, SetCamera):
            m.last_camera = cmd.payload()
        elif isinstance(cmd, Clear):
            m.last_clear = cmd.payload()
        elif isinstance(cmd, DefineList):
            m.defined_lists.add(cmd.list_id)
    return m


# ---------------------------------------------------------------------------
# Display lists (server-side store)
# ---------------------------------------------------------------------------


@dataclass
class DisplayList:
    id: int
    commands: tuple  # draw commands only


class ListStore:
    """Per-server immutable display list registry."""

    def __init__(self):
        self._lists = {}

    def define(self, dl: DefineList):
        self._lists[dl.list_id] = dl.commands

    def call(self, list_id: int):
        try:
            return self._lists[list_id]
        except KeyError:
            raise ProtocolError(
                f"CALL_LIST for unknown list {list_id}; frame aborted"
            ) from None

    def defined_ids(self) -> set:
        return set(self._lists)


def list_define(store: ListStore, dl: DefineList) -> None:
    store.define(dl)


def list_call(store: ListStore, list_id: int):
    return store.call(list_id)
