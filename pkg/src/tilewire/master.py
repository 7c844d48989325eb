"""Master role runners: the `local` and `master` subcommands.

Both wire the same pieces: a MasterCore broadcasting re-stamped events, a
Compositor turning presented tiles into murals, an optional viewer service
(raw TCP or WebSocket) fed frames and per-link traffic stats, and an
optional scripted gesture driver used for headless runs and tests.
"""

from __future__ import annotations

import logging
import math
import statistics
import struct
import threading
import time

import numpy as np

from . import interact, uiserve, wire
from .cluster import Compositor, JobConfig
from .interact import EventMsg, MasterCore
from .job import ROLE_APP, ROLE_TILE, LocalJob, _split_addr
from .raster import Framebuffer
from .transport import SocketChannel, listen

log = logging.getLogger("tilewire.master")


class UiService:
    """Accepts viewer connections (raw TCP or WebSocket) on ui_addr."""

    def __init__(self, config: JobConfig, submit, hello_args):
        host, port = _split_addr(config.ui_addr)
        self._srv = listen(host, port)
        self.port = self._srv.getsockname()[1]
        self._submit = submit
        self._hello = uiserve.encode_push(
            uiserve.MSG_HELLO, 0, uiserve.hello_payload(*hello_args)
        )
        self._clients: list[uiserve.UiClient] = []
        self._lock = threading.Lock()
        self._closing = False
        threading.Thread(target=self._accept_loop, daemon=True, name="ui-accept").start()

    def _accept_loop(self):
        import socket as socketmod

        while not self._closing:
            try:
                sock, _ = self._srv.accept()
            except OSError:
                return
            try:
                # classify without consuming: browsers talk first (HTTP
                # upgrade), raw viewers wait for our hello
                sock.settimeout(0.35)
                try:
                    peeked = sock.recv(1 << 12, socketmod.MSG_PEEK)
                except socketmod.timeout:
                    peeked = b""
                sock.settimeout(None)
                client = uiserve.UiClient(sock, peeked)
                client.send(self._hello)
            except (OSError, ConnectionError) as exc:
                log.warning("viewer handshake failed: %s", exc)
                continue
            with self._lock:
                self._clients.append(client)
            threading.Thread(
                target=self._reader, args=(client,), daemon=True, name="ui-reader"
            ).start()

    def _reader(self, client):
        decoder = interact.EventDecoder()
        last_seq = 0
        while True:
            data = client.recv()
            if data is None:
                break
            try:
                events = decoder.feed(data)
            except interact.MalformedEvent as exc:
                log.warning("viewer sent malformed event: %s", exc)
                break
            fresh = []
            for e in events:
                if e.seq <= last_seq:
                    log.warning("viewer seq went backwards (%d after %d)", e.seq, last_seq)
                    continue
                last_seq = e.seq
                fresh.append(e)
            if fresh:
                self._submit(fresh)
        with self._lock:
            if client in self._clients:
                self._clients.remove(client)
        client.close()

    def _broadcast(self, data):
        with self._lock:
            clients = list(self._clients)
        for c in clients:
            try:
                c.send(data)
            except OSError:
                with self._lock:
                    if c in self._clients:
                        self._clients.remove(c)

    def push_frame(self, frame_no: int, color):
        self._broadcast(
            uiserve.encode_push(
                uiserve.MSG_FRAME, frame_no, uiserve.frame_payload(frame_no, color)
            )
        )

    def push_stats(self, frame_no: int, fps: float, bytes_per_link):
        self._broadcast(
            uiserve.encode_push(
                uiserve.MSG_STATS, frame_no, uiserve.stats_payload(fps, bytes_per_link)
            )
        )

    def close(self):
        self._closing = True
        try:
            self._srv.close()
        except OSError:
            pass
        with self._lock:
            for c in self._clients:
                c.close()
            self._clients.clear()


def script_events(script: str):
    """Parse "rotate:N" / "zoom:N" into a raw gesture list (unstamped)."""
    kind, _, count = script.partition(":")
    n = int(count or 8)
    evs = []
    if kind == "rotate":
        evs.append(EventMsg(interact.POINTER_DOWN, 0, button=0, x=0.3, y=0.0))
        for k in range(1, n + 1):
            ang = 0.12 * k
            evs.append(
                EventMsg(
                    interact.POINTER_MOVE,
                    0,
                    button=0,
                    x=0.3 * math.cos(ang),
                    y=0.3 * math.sin(ang),
                )
            )
    elif kind == "zoom":
        for k in range(n):
            evs.append(EventMsg(interact.WHEEL, 0, delta=0.2 if k % 2 == 0 else -0.2))
    else:
        raise ValueError(f"unknown script {script!r} (want rotate:N or zoom:N)")
    return evs


_FRAME_TRIGGERS = (interact.POINTER_MOVE, interact.WHEEL, interact.SET_MODE, interact.TOGGLE_CACHE)


class _MuralPump:
    """Drains murals from a compositor into files, viewers, and a counter."""

    def __init__(self, compositor, ui=None, frames_dir=None, link_stats=None, n_links=0):
        self.compositor = compositor
        self.ui = ui
        self.frames_dir = frames_dir
        self.link_stats = link_stats  # callable frame_no -> flat per-link list
        self.n_links = n_links
        self.count = 0
        self._cond = threading.Condition()
        self._times = []
        self._stop = threading.Event()
        self.thread = threading.Thread(target=self._run, daemon=True, name="mural-pump")
        self.thread.start()

    def _fps(self):
        if len(self._times) < 2:
            return 0.0
        deltas = [b - a for a, b in zip(self._times, self._times[1:])]
        return 1.0 / statistics.median(deltas)

    def _run(self):
        while not self._stop.is_set():
            try:
                frame_no, mural = self.compositor.next_mural(0.25)
            except TimeoutError:
                continue
            self._times.append(time.monotonic())
            self._times = self._times[-12:]
            if self.frames_dir:
                with open(f"{self.frames_dir}/mural_{frame_no:05d}.ppm", "wb") as fh:
                    fh.write(mural.to_ppm())
            if self.ui:
                flat = self.link_stats(frame_no) if self.link_stats else []
                self.ui.push_frame(frame_no, mural.color)
                self.ui.push_stats(frame_no, self._fps(), flat)
            with self._cond:
                self.count += 1
                self._cond.notify_all()

    def wait_count(self, n: int, timeout: float) -> bool:
        deadline = time.monotonic() + timeout
        with self._cond:
            while self.count < n:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return False
                self._cond.wait(remaining)
        return True

    def stop(self):
        self._stop.set()
        self.thread.join(timeout=5)


def _drive_script(submit, script: str, pump: _MuralPump, timeout=30.0):
    expected = 0
    for ev in script_events(script):
        submit([ev])
        if ev.kind in _FRAME_TRIGGERS:
            expected += 1
            if not pump.wait_count(expected, timeout):
                raise TimeoutError(f"mural {expected} never presented")


def run_local(config: JobConfig, script=None, frames_dir=None, ready_event=None):
    """Everything in one process: the `local` subcommand."""
    job = LocalJob(config)
    n_srv = len(config.tiles())

    def link_stats(frame_no):
        links = job.frame_bytes(frame_no)
        return [
            links.get(r, {}).get(s, 0) for r in range(config.n_app_nodes) for s in range(n_srv)
        ]

    ui = None
    if config.ui_addr:
        ui = UiService(
            config,
            submit=job.post,
            hello_args=(config.mural_w, config.mural_h, config.mode, config.caching),
        )
    pump = _MuralPump(job.compositor, ui, frames_dir, link_stats, config.n_app_nodes * n_srv)
    if ready_event:
        ready_event.set()
    try:
        if script:
            _drive_script(job.post, script, pump)
        else:
            while not job.master.quit:
                time.sleep(0.1)
            time.sleep(0.3)  # trailing murals
    finally:
        job.close()
        pump.stop()
        if ui:
            ui.close()


def run_master(config: JobConfig, script=None, frames_dir=None):
    """Socket master for multi-process jobs: the `master` subcommand."""
    host, port = _split_addr(config.master_addr)
    srv = listen(host, port)
    tiles = config.tiles()
    n_tiles = len(tiles)
    slave_chans: dict[int, SocketChannel] = {}
    tile_socks: dict[int, SocketChannel] = {}
    while len(slave_chans) < config.n_app_nodes or len(tile_socks) < n_tiles:
        sock, _ = srv.accept()
        chan = SocketChannel(sock)
        head = b""
        while len(head) < 3:
            chunk = chan.recv_bytes()
            if chunk is None:
                break
            head += chunk
        if len(head) < 3:
            chan.close()
            continue
        role, idx = head[:1], int(np.frombuffer(head[1:3], dtype="<u2")[0])
        if role == ROLE_APP and idx < config.n_app_nodes:
            slave_chans[idx] = chan
        elif role == ROLE_TILE and idx < n_tiles:
            tile_socks[idx] = chan
        else:
            chan.close()

    core = MasterCore(config.mode, config.caching, [slave_chans[r] for r in sorted(slave_chans)])
    compositor = Compositor(n_tiles)
    link_bytes: dict[int, dict] = {}
    bytes_lock = threading.Lock()

    def present_intake(server_idx, chan):
        dec = wire.StreamDecoder()
        frame_no = None
        while True:
            data = chan.recv_bytes()
            if data is None:
                return
            for cmd in dec.feed(data):
                if isinstance(cmd, wire.BeginFrame):
                    frame_no = cmd.frame_no
                elif isinstance(cmd, wire.BlitImage) and frame_no is not None:
                    fb = Framebuffer(cmd.pixels.shape[1], cmd.pixels.shape[0])
                    fb.color[:] = cmd.pixels
                    compositor.sink(frame_no, tiles[server_idx], fb)

    def report_intake(rank, chan):
        buf = bytearray()
        while True:
            data = chan.recv_bytes()
            if data is None:
                return
            buf.extend(data)
            while len(buf) >= interact.EV_HEADER_LEN:
                _ver, kind, _seq, plen = struct.unpack_from("<BBIH", buf, 2)
                if len(buf) < interact.EV_HEADER_LEN + plen:
                    break
                body = bytes(buf[interact.EV_HEADER_LEN : interact.EV_HEADER_LEN + plen])
                del buf[: interact.EV_HEADER_LEN + plen]
                if kind == interact.REPORT_KIND:
                    frame_no, vals = interact.decode_report(body)
                    with bytes_lock:
                        link_bytes.setdefault(frame_no, {})[rank] = vals

    for idx, chan in tile_socks.items():
        threading.Thread(target=present_intake, args=(idx, chan), daemon=True).start()
    for rank, chan in slave_chans.items():
        threading.Thread(target=report_intake, args=(rank, chan), daemon=True).start()

    def link_stats(frame_no):
        with bytes_lock:
            by_rank = link_bytes.get(frame_no, {})
        return [
            by_rank.get(r, [0] * n_tiles)[s]
            for r in range(config.n_app_nodes)
            for s in range(n_tiles)
        ]

    ui = None
    if config.ui_addr:
        ui = UiService(
            config,
            submit=core.submit,
            hello_args=(config.mural_w, config.mural_h, config.mode, config.caching),
        )
    pump = _MuralPump(compositor, ui, frames_dir, link_stats, config.n_app_nodes * n_tiles)
    try:
        if script:
            _drive_script(core.submit, script, pump)
            core.submit([EventMsg(interact.QUIT, 0)])
        else:
            while not core.session.quit:
                time.sleep(0.1)
            time.sleep(0.5)
    finally:
        for chan in slave_chans.values():
            chan.close()
        for chan in tile_socks.values():
            chan.close()
        pump.stop()
        if ui:
            ui.close()
        srv.close()
