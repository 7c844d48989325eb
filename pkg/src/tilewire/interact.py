"""Master/slave interaction: input events, broadcast, shared camera replay.

Event frames travel UI -> master and master -> slave in one layout (all
little-endian): magic "PM", version u8 = 1, kind u8, seq u32,
payload_length u16, payload. Kinds:

    0x01 POINTER_DOWN  button u8, x f32, y f32      (normalized [-1,1]^2, y up)
    0x02 POINTER_MOVE  button u8, x f32, y f32
    0x03 POINTER_UP    button u8
    0x04 WHEEL         delta f32
    0x05 KEY           code u32, down u8
    0x06 SET_MODE      mode u8 (0 tiled, 1 composited)
    0x07 QUIT          (empty)
    0x08 TOGGLE_CACHE  (empty)

Camera state is never transmitted. Every node folds the identical event
stream into its camera with fixed-order float32 arithmetic, so replicas stay
bit-identical; the tests replay thousands of random events on independent
sessions and compare the resulting cameras exactly.
"""

from __future__ import annotations

import math
import struct
import threading
from dataclasses import dataclass, field, replace

import numpy as np

from .raster import CameraState
from .transport import ChannelClosed

EV_MAGIC = b"PM"
EV_VERSION = 1
EV_HEADER_LEN = 10

POINTER_DOWN = 0x01
POINTER_MOVE = 0x02
POINTER_UP = 0x03
WHEEL = 0x04
KEY = 0x05
SET_MODE = 0x06
QUIT = 0x07
TOGGLE_CACHE = 0x08

BTN_ROTATE = 0
BTN_PAN = 1
BTN_ZOOM = 2

TRACKBALL_RADIUS = 0.8  # fraction of the viewport half-extent
WHEEL_ZOOM_RATE = -0.1

_f32 = np.float32


class EventError(Exception):
    pass


class MalformedEvent(EventError):
    pass


class TruncatedEvent(Exception):
    pass


@dataclass
class EventMsg:
    kind: int
    seq: int
    button: int = 0
    x: float = 0.0
    y: float = 0.0
    delta: float = 0.0
    code: int = 0
    down: bool = False
    mode: int = 0

    def __post_init__(self):
        self.x = float(_f32(self.x))
        self.y = float(_f32(self.y))
        self.delta = float(_f32(self.delta))
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.delta)):
            raise ValueError("event coordinates must be finite")


def encode_event(e: EventMsg) -> bytes:
    if e.kind in (POINTER_DOWN, POINTER_MOVE):
        body = struct.pack("<Bff", e.button, e.x, e.y)
    elif e.kind == POINTER_UP:
        body = struct.pack("<B", e.button)
    elif e.kind == WHEEL:
        body = struct.pack("<f", e.delta)
    elif e.kind == KEY:
        body = struct.pack("<IB", e.code, 1 if e.down else 0)
    elif e.kind == SET_MODE:
        body = struct.pack("<B", e.mode)
    elif e.kind in (QUIT, TOGGLE_CACHE):
        body = b""
    else:
        raise MalformedEvent(f"unknown event kind 0x{e.kind:02x}")
    return EV_MAGIC + struct.pack("<BBIH", EV_VERSION, e.kind, e.seq, len(body)) + body


def decode_event(buf, offset: int = 0):
    """Parse one event frame; returns (EventMsg, consumed)."""
    if len(buf) - offset < EV_HEADER_LEN:
        raise TruncatedEvent("incomplete header")
    if bytes(buf[offset : offset + 2]) != EV_MAGIC:
        raise MalformedEvent("bad magic")
    version, kind, seq, plen = struct.unpack_from("<BBIH", buf, offset + 2)
    if version != EV_VERSION:
        raise MalformedEvent(f"unsupported version {version}")
    if len(buf) - offset < EV_HEADER_LEN + plen:
        raise TruncatedEvent("incomplete payload")
    body = bytes(buf[offset + EV_HEADER_LEN : offset + EV_HEADER_LEN + plen])
    used = EV_HEADER_LEN + plen
    try:
        if kind in (POINTER_DOWN, POINTER_MOVE):
            btn, x, y = struct.unpack("<Bff", body)
            return EventMsg(kind, seq, button=btn, x=x, y=y), used
        if kind == POINTER_UP:
            return EventMsg(kind, seq, button=struct.unpack("<B", body)[0]), used
        if kind == WHEEL:
            return EventMsg(kind, seq, delta=struct.unpack("<f", body)[0]), used
        if kind == KEY:
            code, down = struct.unpack("<IB", body)
            return EventMsg(kind, seq, code=code, down=bool(down)), used
        if kind == SET_MODE:
            return EventMsg(kind, seq, mode=struct.unpack("<B", body)[0]), used
        if kind in (QUIT, TOGGLE_CACHE):
            if body:
                raise MalformedEvent("unexpected payload")
            return EventMsg(kind, seq), used
    except struct.error as exc:
        raise MalformedEvent(str(exc)) from exc
    raise MalformedEvent(f"unknown event kind 0x{kind:02x}")


class EventDecoder:
    def __init__(self):
        self._buf = bytearray()

    def feed(self, chunk: bytes):
        self._buf.extend(chunk)
        out = []
        pos = 0
        while True:
            try:
                ev, used = decode_event(self._buf, pos)
            except TruncatedEvent:
                break
            out.append(ev)
            pos += used
        del self._buf[:pos]
        return out


# ---------------------------------------------------------------------------
# Trackball camera math (fixed-order float32)
# ---------------------------------------------------------------------------


def _lift(px, py, radius):
    x = _f32(px)
    y = _f32(py)
    r2 = _f32(radius) * _f32(radius)
    d2 = x * x + y * y
    if d2 <= r2 * _f32(0.5):
        z = np.sqrt(r2 - d2)
    else:
        z = (r2 * _f32(0.5)) / np.sqrt(d2)
    return x, y, z


def _quat_mul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


def _quat_normalize(q):
    w, x, y, z = q
    n = np.sqrt(w * w + x * x + y * y + z * z)
    return (w / n, x / n, y / n, z / n)


def trackball(p0, p1, sphere_radius: float):
    """Virtual-sphere rotation from two viewport points in [-1,1]^2.

    Points lift onto a sphere of the given radius (hyperbolic sheet outside
    r/sqrt(2)); the rotation takes lift(p0) to lift(p1): axis is their cross
    product, angle the angle between them. Equal points give the identity.
    Returns a unit quaternion (w, x, y, z) computed in float32.
    """
    if sphere_radius <= 0:
        raise ValueError("sphere_radius must be positive")
    a = _lift(p0[0], p0[1], sphere_radius)
    b = _lift(p1[0], p1[1], sphere_radius)
    cx = a[1] * b[2] - a[2] * b[1]
    cy = a[2] * b[0] - a[0] * b[2]
    cz = a[0] * b[1] - a[1] * b[0]
    cn = np.sqrt(cx * cx + cy * cy + cz * cz)
    if cn == 0.0:
        return (1.0, 0.0, 0.0, 0.0)
    dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
    na = np.sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2])
    nb = np.sqrt(b[0] * b[0] + b[1] * b[1] + b[2] * b[2])
    cosang = dot / (na * nb)
    cosang = min(max(cosang, _f32(-1.0)), _f32(1.0))
    angle = np.arccos(cosang)
    half = angle * _f32(0.5)
    s = np.sin(half) / cn
    q = (np.cos(half), cx * s, cy * s, cz * s)
    return tuple(float(v) for v in _quat_normalize(q))


# ---------------------------------------------------------------------------
# Interaction session
# ---------------------------------------------------------------------------


@dataclass
class InteractionSession:
    """One node's deterministic replica of the interaction state."""

    camera: CameraState = field(default_factory=CameraState)
    mode: str = "tiled"
    caching: bool = False
    quit: bool = False
    drag_anchor: dict = field(default_factory=dict)  # button -> (x, y)
    last_seq: int = 0
    event_log: list = field(default_factory=list)


def apply_event(session: InteractionSession, e: EventMsg) -> InteractionSession:
    """Fold one event into the session; events must arrive in seq order."""
    if e.seq <= session.last_seq:
        raise EventError(f"event seq {e.seq} not after {session.last_seq}")
    session.last_seq = e.seq
    session.event_log.append(e)

    if e.kind == POINTER_DOWN:
        session.drag_anchor[e.button] = (e.x, e.y)
    elif e.kind == POINTER_UP:
        session.drag_anchor.pop(e.button, None)
    elif e.kind == POINTER_MOVE:
        anchor = session.drag_anchor.get(e.button)
        if anchor is not None:
            _drag(session, e.button, anchor, (e.x, e.y))
            session.drag_anchor[e.button] = (e.x, e.y)
    elif e.kind == WHEEL:
        cam = session.camera
        factor = np.exp(_f32(WHEEL_ZOOM_RATE) * _f32(e.delta))
        session.camera = replace(
            cam, focal_distance=float(_f32(cam.focal_distance) * factor)
        )
    elif e.kind == SET_MODE:
        session.mode = "composited" if e.mode == 1 else "tiled"
    elif e.kind == TOGGLE_CACHE:
        session.caching = not session.caching
    elif e.kind == QUIT:
        session.quit = True
    # KEY events are logged but have no camera action bound
    return session


def _drag(session, button, anchor, pos):
    cam = session.camera
    if button == BTN_ROTATE:
        q = trackball(anchor, pos, TRACKBALL_RADIUS)
        qc = tuple(_f32(v) for v in (q[0], -q[1], -q[2], -q[3]))
        merged = _quat_normalize(_quat_mul(tuple(_f32(v) for v in cam.orientation), qc))
        session.camera = replace(cam, orientation=tuple(float(v) for v in merged))
    elif button == BTN_PAN:
        dx = _f32(pos[0]) - _f32(anchor[0])
        dy = _f32(pos[1]) - _f32(anchor[1])
        scale = _f32(cam.focal_distance) * _f32(0.5)
        rot = cam.rotation()  # float64 world-from-camera
        right = rot[:, 0]
        up = rot[:, 1]
        c = np.asarray(cam.center, dtype=np.float64)
        moved = c - (right * float(dx * scale) + up * float(dy * scale))
        session.camera = replace(cam, center=tuple(float(_f32(v)) for v in moved))
    elif button == BTN_ZOOM:
        dy = _f32(pos[1]) - _f32(anchor[1])
        factor = np.exp(_f32(1.5) * dy)
        session.camera = replace(cam, focal_distance=float(_f32(cam.focal_distance) * factor))


def camera_fingerprint(cam: CameraState) -> bytes:
    """Exact bytes of the replicated camera, for bit-identity checks."""
    vals = (*cam.orientation, cam.focal_distance, *cam.center, cam.fov_y, cam.near, cam.far)
    return np.array(vals, dtype="<f4").tobytes()


# ---------------------------------------------------------------------------
# Broadcast
# ---------------------------------------------------------------------------


def coalesce_events(pending: list) -> list:
    """Collapse runs of consecutive POINTER_MOVE on one button, keeping the
    last of each run. Only the master may do this, before broadcasting."""
    out = []
    for e in pending:
        if (
            out
            and e.kind == POINTER_MOVE
            and out[-1].kind == POINTER_MOVE
            and out[-1].button == e.button
        ):
            out[-1] = e
        else:
            out.append(e)
    return out


def master_fanout(event_bytes: bytes, channels: list) -> list:
    """Deliver identical bytes to every slave channel, in order.

    Returns the indices of channels that failed (already closed); healthy
    slaves still receive.
    """
    failed = []
    for i, chan in enumerate(channels):
        try:
            chan.send_bytes(event_bytes)
        except ChannelClosed:
            failed.append(i)
    return failed


class MasterCore:
    """Owner of the live sequence counter.

    Input bursts are coalesced, re-stamped, applied to the master's own
    replica from the exact broadcast bytes, and fanned out, so every node
    (master included) folds one identical stream.
    """

    def __init__(self, mode: str, caching: bool, channels, camera: CameraState | None = None):
        self.session = InteractionSession(
            camera=camera or CameraState(), mode=mode, caching=caching
        )
        self.channels = list(channels)
        self._seq = 0
        self._lock = threading.Lock()

    def submit(self, events):
        if isinstance(events, EventMsg):
            events = [events]
        out = []
        with self._lock:
            for e in coalesce_events(list(events)):
                self._seq += 1
                stamped = EventMsg(
                    kind=e.kind,
                    seq=self._seq,
                    button=e.button,
                    x=e.x,
                    y=e.y,
                    delta=e.delta,
                    code=e.code,
                    down=e.down,
                    mode=e.mode,
                )
                data = encode_event(stamped)
                apply_event(self.session, decode_event(data)[0])
                master_fanout(data, self.channels)
                out.append(stamped)
        return out


# slave -> master per-frame byte report (internal upstream leg, same header)
REPORT_KIND = 0x09


def encode_report(frame_no: int, per_server_bytes) -> bytes:
    body = struct.pack("<IH", frame_no, len(per_server_bytes)) + b"".join(
        struct.pack("<Q", int(b)) for b in per_server_bytes
    )
    return EV_MAGIC + struct.pack("<BBIH", EV_VERSION, REPORT_KIND, 0, len(body)) + body


def decode_report(body: bytes):
    frame_no, count = struct.unpack_from("<IH", body)
    return frame_no, [struct.unpack_from("<Q", body, 6 + 8 * i)[0] for i in range(count)]


def slave_loop(session: InteractionSession, channel, on_frame=None, timeout=None):
    """Blocking receive -> apply -> redraw loop; returns on QUIT or EOF.

    on_frame(session) runs after every event that changed the camera or the
    mode/caching flags. Returns the number of frames triggered.
    """
    decoder = EventDecoder()
    frames = 0
    while not session.quit:
        try:
            chunk = channel.recv_bytes(timeout=timeout)
        except TimeoutError:
            continue
        if chunk is None:
            break  # channel lost: clean shutdown
        for ev in decoder.feed(chunk):
            before = (camera_fingerprint(session.camera), session.mode, session.caching)
            apply_event(session, ev)
            if session.quit:
                return frames
            after = (camera_fingerprint(session.camera), session.mode, session.caching)
            if after != before:
                frames += 1
                if on_frame is not None:
                    on_frame(session)
    return frames
