"""Process roles and frame protocol: app nodes, tile servers, composition.

Each frame an app node emits BEGIN, optional CLEAR, pre-BARRIER, camera and
draws (or list calls), post-BARRIER, SWAP, END. Tile servers run one decode
context per app connection; each connection renders into its own per-rank
framebuffer (single writer), and at presentation the per-rank buffers merge
by minimal depth with lowest-rank tie-break. That merge makes the presented
image independent of how the per-node streams interleave, and exactly equal
to the rank-ordered sequential render, in both tiled and composited modes.

CLEAR is remembered server state, not an action: at every pre-barrier
release each connection re-clears its own buffer with the newest parameters,
so a sender may suppress repeats of an identical CLEAR without breaking
frame semantics.
"""

from __future__ import annotations

import logging
import queue
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import wire
from .raster import Framebuffer, TileRect, camera_matrix, draw_mesh_arrays, make_tile_grid, project_vertices
from .scene import ScenePartition
from .transport import ChannelClosed, ThrottleSpec

log = logging.getLogger("tilewire.cluster")

DEFAULT_WATCHDOG_S = 30.0


class FrameAbort(Exception):
    """A frame could not complete; .server names the failed peer if known."""

    def __init__(self, msg, server=None):
        super().__init__(msg)
        self.server = server


class WatchdogTimeout(Exception):
    pass


@dataclass(frozen=True)
class FrameFlags:
    clear: bool
    swap_authoritative: bool


def frame_flags(mode: str, rank: int) -> FrameFlags:
    """Per-rank clear/swap authority for a frame.

    composited: every rank clears, rank 0 owns the swap;
    tiled: only rank 0 clears and owns the swap.
    """
    if mode == "composited":
        return FrameFlags(clear=True, swap_authoritative=rank == 0)
    if mode == "tiled":
        return FrameFlags(clear=rank == 0, swap_authoritative=rank == 0)
    raise ValueError(f"unknown mode {mode!r}")


class BarrierEpoch:
    """One barrier id: releases when all participants arrive, at most once each."""

    def __init__(self, barrier_id: int, size: int):
        self.barrier_id = barrier_id
        self.size = size
        self.arrivals = set()
        self.arrival_log = []  # (rank, monotonic time), for instrumentation
        self.released_at = None


class BarrierMonitor:
    """Tracks barrier epochs for one tile server."""

    def __init__(self, size: int):
        self.size = size
        self._lock = threading.Lock()
        self._cond = threading.Condition(self._lock)
        self._epochs: dict[int, BarrierEpoch] = {}

    def arrive(self, rank: int, barrier_id: int, timeout: float):
        with self._cond:
            ep = self._epochs.setdefault(barrier_id, BarrierEpoch(barrier_id, self.size))
            if rank in ep.arrivals:
                raise wire.ProtocolError(f"rank {rank} arrived twice at barrier {barrier_id}")
            if not 0 <= rank < self.size:
                raise wire.ProtocolError(f"rank {rank} outside barrier size {self.size}")
            ep.arrivals.add(rank)
            ep.arrival_log.append((rank, time.monotonic()))
            if len(ep.arrivals) == self.size:
                ep.released_at = time.monotonic()
                self._cond.notify_all()
                return ep
            deadline = time.monotonic() + timeout
            while ep.released_at is None:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise WatchdogTimeout(
                        f"barrier {barrier_id}: only {sorted(ep.arrivals)} of "
                        f"{self.size} ranks arrived within {timeout:.1f}s"
                    )
                self._cond.wait(remaining)
            return ep

    def epoch(self, barrier_id: int):
        with self._lock:
            return self._epochs.get(barrier_id)


@dataclass
class JobConfig:
    """Cluster job shape; External interface is the JSON document in cli."""

    mode: str = "tiled"
    n_app_nodes: int = 4
    tile_rows: int = 2
    tile_cols: int = 2
    tile_w: int = 256
    tile_h: int = 256
    throttle: ThrottleSpec | None = None
    caching: bool = False
    bucket_block: int = 64  # consecutive triangles per bucketing block
    watchdog_s: float = DEFAULT_WATCHDOG_S
    render_cost_s: float = 0.0  # injected per-frame render cost (bench knob)
    scene: dict = field(default_factory=lambda: {"kind": "synthetic", "bytes": 1 << 20, "seed": 1})
    partition_strategy: str = "contiguous"
    master_addr: str = "127.0.0.1:7600"
    server_addrs: list = field(default_factory=list)
    ui_addr: str = ""

    def __post_init__(self):
        if self.mode not in ("tiled", "composited"):
            raise ValueError(f"mode must be tiled or composited, not {self.mode!r}")
        if self.n_app_nodes < 1:
            raise ValueError("need at least one app node")
        if min(self.tile_rows, self.tile_cols, self.tile_w, self.tile_h) < 1:
            raise ValueError("tile grid dimensions must be positive")
        if self.bucket_block < 0:
            raise ValueError("bucket_block must be >= 0 (0 = one bound per frame)")
        if not self.server_addrs:
            base_host, base_port = self.master_addr.rsplit(":", 1)
            self.server_addrs = [
                f"{base_host}:{int(base_port) + 1 + i}"
                for i in range(self.tile_rows * self.tile_cols)
            ]

    @property
    def mural_w(self) -> int:
        return self.tile_cols * self.tile_w

    @property
    def mural_h(self) -> int:
        return self.tile_rows * self.tile_h

    def tiles(self) -> list[TileRect]:
        return make_tile_grid(self.tile_rows, self.tile_cols, self.tile_w, self.tile_h)


# ---------------------------------------------------------------------------
# Image composition
# ---------------------------------------------------------------------------


def composite_depth(frames) -> Framebuffer:
    """Merge same-size framebuffers by minimal depth; ties go to lowest rank.

    frames: iterable of (rank, Framebuffer). Background (depth 1.0) wins a
    pixel only when every input is background there, because a strict-less
    depth test never wrote a visible fragment at depth exactly 1.0.
    """
    frames = sorted(frames, key=lambda rf: rf[0])
    if not frames:
        raise ValueError("composite_depth needs at least one frame")
    w, h = frames[0][1].width, frames[0][1].height
    for _, fb in frames:
        if fb.width != w or fb.height != h:
            raise ValueError("composite_depth inputs must share dimensions")
    depths = np.stack([fb.depth for _, fb in frames])
    colors = np.stack([fb.color for _, fb in frames])
    pick = np.argmin(depths, axis=0)  # first occurrence = lowest rank on ties
    out = Framebuffer(w, h)
    out.depth[:] = np.take_along_axis(depths, pick[None], axis=0)[0]
    out.color[:] = np.take_along_axis(colors, pick[None, :, :, None], axis=0)[0]
    return out


def assemble_tiles(tiles) -> Framebuffer:
    """Place (TileRect, Framebuffer) pairs into the mural they cover."""
    items = list(tiles)
    if not items:
        raise ValueError("no tiles to assemble")
    mural_w = max(t.x + t.w for t, _ in items)
    mural_h = max(t.y + t.h for t, _ in items)
    seen = np.zeros((mural_h, mural_w), dtype=bool)
    out = Framebuffer(mural_w, mural_h)
    for t, fb in items:
        if (fb.width, fb.height) != (t.w, t.h):
            raise ValueError(f"tile {t.id} framebuffer is {fb.width}x{fb.height}, rect wants {t.w}x{t.h}")
        out.color[t.y : t.y + t.h, t.x : t.x + t.w] = fb.color
        out.depth[t.y : t.y + t.h, t.x : t.x + t.w] = fb.depth
        seen[t.y : t.y + t.h, t.x : t.x + t.w] = True
    if not seen.all():
        raise ValueError("tiles do not cover the mural")
    return out


# ---------------------------------------------------------------------------
# App node
# ---------------------------------------------------------------------------


class AppNode:
    """Owns one scene partition and emits its command stream every frame."""

    def __init__(self, rank: int, partition: ScenePartition, config: JobConfig, connections):
        self.rank = rank
        self.partition = partition
        self.config = config
        self.conns = list(connections)  # one channel per tile server
        self.tiles = config.tiles()
        self.mirrors = [wire.ServerStateMirror() for _ in self.conns]
        self.frame_no = 0
        self.list_id = rank + 1

    def _send(self, idx, data: bytes):
        try:
            self.conns[idx].send_bytes(data)
        except ChannelClosed as exc:
            raise FrameAbort(f"tile server {idx} connection lost: {exc}", server=idx) from exc

    def _send_all(self, cmd: wire.Command):
        data = wire.encode(cmd)
        for i in range(len(self.conns)):
            self._send(i, data)

    def _send_tracked(self, cmd: wire.Command):
        for i, mirror in enumerate(self.mirrors):
            if wire.track(cmd, mirror):
                self._send(i, wire.encode(cmd))

    def render_frame(self, cam, mode=None, caching=None):
        """Emit one frame; returns bytes sent per tile server."""
        mode = mode or self.config.mode
        caching = self.config.caching if caching is None else caching
        flags = frame_flags(mode, self.rank)
        self.frame_no += 1
        before = [c.bytes_sent for c in self.conns]

        self._send_all(wire.BeginFrame(self.frame_no, self.rank))
        if flags.clear:
            self._send_tracked(wire.Clear((0, 0, 0, 255), 1.0))
        self._send_all(wire.Barrier(2 * self.frame_no))

        matrix = camera_matrix(cam, self.config.mural_w, self.config.mural_h)
        self._send_tracked(wire.SetCamera(matrix))
        if caching and self.partition.cacheable:
            self._send_tracked(
                wire.DefineList(self.list_id, (wire.DrawTriangles(self.partition.mesh.tris),))
            )
            self._send_all(wire.CallList(self.list_id))
        else:
            self._emit_draws(matrix, bucketed=(mode == "tiled"))

        self._send_all(wire.Barrier(2 * self.frame_no + 1))
        self._send_all(wire.Swap(suppress=not flags.swap_authoritative))
        self._send_all(wire.EndFrame(self.frame_no))
        return {i: c.bytes_sent - before[i] for i, c in enumerate(self.conns)}

    def _emit_draws(self, matrix, bucketed: bool):
        tris = self.partition.mesh.tris
        if len(tris) == 0:
            return
        if not bucketed:
            data = wire.encode(wire.DrawTriangles(tris))
            for i in range(len(self.conns)):
                self._send(i, data)
            return
        xi, yi, z01, ok = project_vertices(
            matrix, tris["pos"], self.config.mural_w, self.config.mural_h
        )
        tri_ok = ok.all(axis=1)
        # granularity of the screen-space bounds: a block of consecutive
        # triangles shares one AABB; 0 means one bound for the whole frame
        block = self.config.bucket_block or len(tris)
        per_server: list[list] = [[] for _ in self.conns]
        tile_index = {t.id: i for i, t in enumerate(self.tiles)}
        for start in range(0, len(tris), block):
            stop = min(start + block, len(tris))
            valid = tri_ok[start:stop]
            if not valid.any():
                continue
            vx = xi[start:stop][valid]
            vy = yi[start:stop][valid]
            bounds = (int(vx.min()), int(vy.min()), int(vx.max()), int(vy.max()))
            for tid in wire.bucket(bounds, self.tiles):
                per_server[tile_index[tid]].append(tris[start:stop])
        for i, chunks in enumerate(per_server):
            if not chunks:
                continue
            batch = np.concatenate(chunks) if len(chunks) > 1 else chunks[0]
            self._send(i, wire.encode(wire.DrawTriangles(batch)))


# ---------------------------------------------------------------------------
# Tile server
# ---------------------------------------------------------------------------


class _ConnState:
    def __init__(self):
        self.rank = None
        self.matrix = None
        self.frame_no = 0
        self.barriers_in_frame = 0
        self.in_frame = False


class TileServer:
    """Renders one tile (or the full mural) from all app nodes' streams."""

    def __init__(self, tile: TileRect, config: JobConfig, present_sink=None, name=""):
        self.tile = tile
        self.config = config
        self.name = name or f"server{tile.id}"
        self.n = config.n_app_nodes
        self.fbs = [Framebuffer(tile.w, tile.h) for _ in range(self.n)]
        self.barriers = BarrierMonitor(self.n)
        self.lists = wire.ListStore()
        self.present_sink = present_sink
        self.presented = 0
        self.diagnostics: list[str] = []
        self._lock = threading.Lock()
        self._clear_params = None  # remembered (rgba, depth) server state
        self._swaps: dict[int, dict] = {}
        self._present_cond = threading.Condition(self._lock)

    # -- decode context ------------------------------------------------------

    def serve_connection(self, channel):
        """Decode loop for one app-node connection (runs in its own thread)."""
        st = _ConnState()
        decoder = wire.StreamDecoder()
        try:
            while True:
                try:
                    chunk = channel.recv_bytes(timeout=self.config.watchdog_s)
                except TimeoutError:
                    if st.in_frame:
                        raise WatchdogTimeout(
                            f"rank {st.rank} went silent mid-frame {st.frame_no}"
                        ) from None
                    continue  # idle between frames is fine
                if chunk is None:
                    return
                for cmd in decoder.feed(chunk):
                    self._execute(st, cmd)
        except WatchdogTimeout as exc:
            self._diagnose(f"watchdog: {exc}")
        except wire.ProtocolError as exc:
            self._diagnose(f"frame aborted: {exc}")
        except ChannelClosed as exc:
            self._diagnose(f"connection lost: {exc}")

    def _diagnose(self, msg):
        log.warning("%s: %s", self.name, msg)
        with self._lock:
            self.diagnostics.append(msg)

    # -- command execution ----------------------------------------------------

    def _execute(self, st: _ConnState, cmd):
        if isinstance(cmd, wire.BeginFrame):
            st.rank = cmd.sender_rank
            st.frame_no = cmd.frame_no
            st.barriers_in_frame = 0
            st.in_frame = True
        elif isinstance(cmd, wire.Clear):
            with self._lock:
                self._clear_params = (cmd.rgba, cmd.depth)
        elif isinstance(cmd, wire.Barrier):
            self._require_rank(st)
            self.barriers.arrive(st.rank, cmd.barrier_id, self.config.watchdog_s)
            st.barriers_in_frame += 1
            if st.barriers_in_frame == 1:
                self._clear_own(st)
        elif isinstance(cmd, wire.SetCamera):
            st.matrix = cmd.matrix
        elif isinstance(cmd, wire.DrawTriangles):
            self._require_rank(st)
            self._draw(st, cmd.tris)
        elif isinstance(cmd, wire.DefineList):
            self.lists.define(cmd)
        elif isinstance(cmd, wire.CallList):
            self._require_rank(st)
            for inner in self.lists.call(cmd.list_id):
                if isinstance(inner, wire.DrawTriangles):
                    self._draw(st, inner.tris)
                elif isinstance(inner, wire.BlitImage):
                    self._blit(st, inner)
        elif isinstance(cmd, wire.BlitImage):
            self._require_rank(st)
            self._blit(st, cmd)
        elif isinstance(cmd, wire.Swap):
            self._require_rank(st)
            self._swap(st, cmd.suppress)
        elif isinstance(cmd, wire.EndFrame):
            st.in_frame = False
        else:
            raise wire.ProtocolError(f"unexpected command {type(cmd).__name__}")

    def _require_rank(self, st):
        if st.rank is None:
            raise wire.ProtocolError("command before BEGIN_FRAME")

    def _clear_own(self, st):
        with self._lock:
            params = self._clear_params
        if params is not None:
            self.fbs[st.rank].clear(params[0], params[1])

    def _draw(self, st, tris):
        if st.matrix is None:
            raise wire.ProtocolError("DRAW before SET_CAMERA")
        t = self.tile
        draw_mesh_arrays(
            self.fbs[st.rank],
            st.matrix,
            tris["pos"],
            tris["rgb"],
            self.config.mural_w,
            self.config.mural_h,
            scissor=(t.x, t.y, t.x + t.w, t.y + t.h),
            fb_origin=(t.x, t.y),
        )

    def _blit(self, st, cmd: wire.BlitImage):
        t = self.tile
        px = cmd.pixels
        bh, bw = px.shape[:2]
        x0 = max(cmd.x, t.x)
        y0 = max(cmd.y, t.y)
        x1 = min(cmd.x + bw, t.x + t.w)
        y1 = min(cmd.y + bh, t.y + t.h)
        if x0 >= x1 or y0 >= y1:
            return
        fb = self.fbs[st.rank]
        fb.color[y0 - t.y : y1 - t.y, x0 - t.x : x1 - t.x] = px[
            y0 - cmd.y : y1 - cmd.y, x0 - cmd.x : x1 - cmd.x
        ]
        # blitted pixels sit in front so they survive the depth merge
        fb.depth[y0 - t.y : y1 - t.y, x0 - t.x : x1 - t.x] = 0.0

    def _swap(self, st, suppress):
        with self._present_cond:
            rec = self._swaps.setdefault(st.frame_no, {"ranks": set(), "authoritative": 0})
            if st.rank in rec["ranks"]:
                raise wire.ProtocolError(f"rank {st.rank} swapped twice in frame {st.frame_no}")
            rec["ranks"].add(st.rank)
            if not suppress:
                rec["authoritative"] += 1
            if len(rec["ranks"]) < self.n:
                return
            if rec["authoritative"] != 1:
                raise wire.ProtocolError(
                    f"frame {st.frame_no}: {rec['authoritative']} non-suppressed swaps"
                )
            del self._swaps[st.frame_no]
            merged = composite_depth(list(enumerate(self.fbs)))
            self.presented += 1
            self._present_cond.notify_all()
        if self.present_sink is not None:
            self.present_sink(st.frame_no, self.tile, merged)

    def wait_presented(self, count: int, timeout: float):
        deadline = time.monotonic() + timeout
        with self._present_cond:
            while self.presented < count:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return False
                self._present_cond.wait(remaining)
        return True


# ---------------------------------------------------------------------------
# Mural compositor
# ---------------------------------------------------------------------------


class Compositor:
    """Collects presented tiles and assembles whole murals per frame."""

    def __init__(self, n_tiles: int):
        self.n_tiles = n_tiles
        self._lock = threading.Lock()
        self._partial: dict[int, list] = {}
        self.murals: "queue.SimpleQueue" = queue.SimpleQueue()

    def sink(self, frame_no, tile, fb):
        with self._lock:
            parts = self._partial.setdefault(frame_no, [])
            parts.append((tile, fb))
            if len(parts) < self.n_tiles:
                return
            del self._partial[frame_no]
        self.murals.put((frame_no, assemble_tiles(parts)))

    def next_mural(self, timeout: float):
        try:
            return self.murals.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError("no mural presented in time") from None
