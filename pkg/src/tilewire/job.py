"""Job wiring: whole clusters in one process, and socket role runners.

LocalJob builds master + app nodes + tile servers over in-process channels
(optionally throttled through one shared line, which behaves like the
saturated network segment of the modeled cluster). The same AppNode /
TileServer / slave_loop code runs unchanged over sockets in multi-process
mode; only the channel construction differs.
"""

from __future__ import annotations

import logging
import threading
import time

import numpy as np

from . import interact, scene, wire
from .cluster import AppNode, Compositor, JobConfig, TileServer
from .interact import EventMsg, InteractionSession
from .raster import CameraState
from .transport import LineScheduler, LocalChannel, SocketChannel, connect, listen
from .volray import VolrayNode

log = logging.getLogger("tilewire.job")


def build_scene(config: JobConfig):
    """Deterministically build the global scene named by config.scene."""
    spec = getattr(config, "scene", None) or {"kind": "synthetic", "bytes": 1 << 20, "seed": 1}
    kind = spec.get("kind", "synthetic")
    if kind == "synthetic":
        return scene.gen_synthetic_scene(int(spec.get("bytes", 1 << 20)), int(spec.get("seed", 1)))
    if kind == "spiked_sphere":
        return scene.gen_spiked_sphere(
            int(spec.get("meridians", 70)),
            int(spec.get("parallels", 42)),
            int(spec.get("spikes", 1450)),
            float(spec.get("radius", 1.0)),
        )
    if kind == "volume":
        dims = tuple(spec.get("dims", (32, 32, 32)))
        return scene.gen_random_volume(dims, int(spec.get("seed", 1)))
    raise ValueError(f"unknown scene kind {kind!r}")


def build_partitions(config: JobConfig, mesh=None):
    mesh = mesh if mesh is not None else build_scene(config)
    strategy = getattr(config, "partition_strategy", "contiguous")
    return scene.partition_scene(mesh, config.n_app_nodes, strategy)


def make_node(rank: int, config: JobConfig, conns, global_scene=None):
    """App node of the right flavor for the configured scene."""
    obj = global_scene if global_scene is not None else build_scene(config)
    if isinstance(obj, scene.VolumeGrid):
        return VolrayNode(rank, obj, config, conns)
    strategy = getattr(config, "partition_strategy", "contiguous")
    parts = scene.partition_scene(obj, config.n_app_nodes, strategy)
    return AppNode(rank, parts[rank], config, conns)


class LocalJob:
    """Master, n app nodes, and the tile-server grid in one process."""

    def __init__(self, config: JobConfig, partitions=None, volume=None, initial_camera=None):
        self.config = config
        self.initial_camera = initial_camera
        tiles = config.tiles()
        self._line = LineScheduler() if config.throttle else None
        self.compositor = Compositor(len(tiles))
        self.servers = [
            TileServer(t, config, present_sink=self.compositor.sink, name=f"srv{t.id}")
            for t in tiles
        ]
        self._threads: list[threading.Thread] = []

        self.cmd_channels: dict[tuple, LocalChannel] = {}
        for si, srv in enumerate(self.servers):
            for rank in range(config.n_app_nodes):
                ch = LocalChannel(config.throttle, self._line)
                self.cmd_channels[(rank, si)] = ch
                th = threading.Thread(
                    target=srv.serve_connection, args=(ch,), daemon=True, name=f"{srv.name}-r{rank}"
                )
                th.start()
                self._threads.append(th)

        if volume is None and partitions is None:
            built = build_scene(config)
            if isinstance(built, scene.VolumeGrid):
                volume = built
            else:
                partitions = build_partitions(config, built)
        if volume is not None:
            self.nodes = [
                VolrayNode(r, volume, config, self._node_conns(r))
                for r in range(config.n_app_nodes)
            ]
        else:
            self.nodes = [
                AppNode(r, partitions[r], config, self._node_conns(r))
                for r in range(config.n_app_nodes)
            ]

        self.event_channels = [LocalChannel() for _ in range(config.n_app_nodes)]
        self.core = interact.MasterCore(
            config.mode, config.caching, self.event_channels, camera=initial_camera
        )
        self.sessions = [
            InteractionSession(
                camera=initial_camera or CameraState(),
                mode=config.mode,
                caching=config.caching,
            )
            for _ in range(config.n_app_nodes)
        ]
        self._frame_bytes: dict[int, dict] = {}
        self._bytes_lock = threading.Lock()
        for rank in range(config.n_app_nodes):
            th = threading.Thread(
                target=self._slave_main, args=(rank,), daemon=True, name=f"slave{rank}"
            )
            th.start()
            self._threads.append(th)

    def _node_conns(self, rank):
        return [self.cmd_channels[(rank, si)] for si in range(len(self.servers))]

    def _slave_main(self, rank):
        node = self.nodes[rank]
        session = self.sessions[rank]

        def on_frame(s):
            if self.config.render_cost_s > 0:
                time.sleep(self.config.render_cost_s)
            sent = node.render_frame(s.camera, s.mode, s.caching)
            with self._bytes_lock:
                self._frame_bytes.setdefault(node.frame_no, {})[rank] = sent

        interact.slave_loop(session, self.event_channels[rank], on_frame=on_frame)
        for ch in self._node_conns(rank):
            ch.close()

    # -- event intake ----------------------------------------------------------

    @property
    def master(self) -> InteractionSession:
        return self.core.session

    @staticmethod
    def event(kind, **payload) -> EventMsg:
        """Raw (unstamped) event; the master core assigns the live seq."""
        return EventMsg(kind=kind, seq=0, **payload)

    def post(self, events):
        """Coalesce, re-stamp, broadcast, and apply a burst at the master."""
        self.core.submit(events)

    def drive_frame(self, event: EventMsg, timeout: float = 30.0):
        """Post one camera-changing event, wait for its mural; returns
        (frame_no, mural fb, per-link byte map, elapsed seconds)."""
        t0 = time.monotonic()
        self.post(event)
        frame_no, mural = self.compositor.next_mural(timeout)
        elapsed = time.monotonic() - t0
        with self._bytes_lock:
            per_link = dict(self._frame_bytes.get(frame_no, {}))
        return frame_no, mural, per_link, elapsed

    def frame_bytes(self, frame_no) -> dict:
        with self._bytes_lock:
            return dict(self._frame_bytes.get(frame_no, {}))

    def close(self, timeout: float = 10.0):
        try:
            self.post(self.event(interact.QUIT))
        except Exception:
            pass
        for ch in self.event_channels:
            ch.close()
        deadline = time.monotonic() + timeout
        for th in self._threads:
            th.join(max(0.0, deadline - time.monotonic()))

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# ---------------------------------------------------------------------------
# Socket roles (multi-process mode)
# ---------------------------------------------------------------------------

ROLE_APP = b"A"
ROLE_TILE = b"T"


def _split_addr(addr: str):
    host, port = addr.rsplit(":", 1)
    return host, int(port)


def run_tileserver(config: JobConfig, row: int, col: int, frames_dir=None):
    """Serve one tile over TCP; presents push back to the master."""
    tiles = config.tiles()
    index = {t.id: i for i, t in enumerate(tiles)}
    if (row, col) not in index:
        raise ValueError(f"tile ({row},{col}) outside the {config.tile_rows}x{config.tile_cols} grid")
    tile = tiles[index[(row, col)]]
    host, port = _split_addr(config.server_addrs[index[(row, col)]])
    srv_sock = listen(host, port)

    back = SocketChannel(connect(*_split_addr(config.master_addr)))
    back.send_bytes(ROLE_TILE + np.array([index[(row, col)]], dtype="<u2").tobytes())
    back_lock = threading.Lock()

    def present(frame_no, tile_rect, fb):
        msgs = (
            wire.encode(wire.BeginFrame(frame_no, index[(row, col)]))
            + wire.encode(wire.BlitImage(tile_rect.x, tile_rect.y, fb.color))
            + wire.encode(wire.EndFrame(frame_no))
        )
        with back_lock:
            back.send_bytes(msgs)
        if frames_dir:
            path = f"{frames_dir}/tile_{row}_{col}_frame{frame_no:05d}.ppm"
            with open(path, "wb") as fh:
                fh.write(fb.to_ppm())

    server = TileServer(tile, config, present_sink=present, name=f"srv({row},{col})")
    threads = []
    for _ in range(config.n_app_nodes):
        conn, _addr = srv_sock.accept()
        th = threading.Thread(
            target=server.serve_connection, args=(SocketChannel(conn),), daemon=True
        )
        th.start()
        threads.append(th)
    for th in threads:
        th.join()
    back.close()
    srv_sock.close()
    return server


def run_appnode(config: JobConfig, rank: int):
    """One slave: event socket from the master, command sockets to servers."""
    if not 0 <= rank < config.n_app_nodes:
        raise ValueError(f"rank {rank} out of range for {config.n_app_nodes} app nodes")
    conns = [SocketChannel(connect(*_split_addr(a))) for a in config.server_addrs]
    node = make_node(rank, config, conns)
    ev = SocketChannel(connect(*_split_addr(config.master_addr)))
    ev.send_bytes(ROLE_APP + np.array([rank], dtype="<u2").tobytes())
    session = InteractionSession(mode=config.mode, caching=config.caching)

    def on_frame(s):
        if config.render_cost_s > 0:
            time.sleep(config.render_cost_s)
        sent = node.render_frame(s.camera, s.mode, s.caching)
        report = interact.encode_report(node.frame_no, [sent[i] for i in range(len(conns))])
        try:
            ev.send_bytes(report)
        except Exception:
            pass  # master may already be shutting down

    interact.slave_loop(session, ev, on_frame=on_frame)
    for c in conns:
        c.close()
    ev.close()
    return session
