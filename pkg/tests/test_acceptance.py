"""Acceptance suite: one test per criterion, one PASS/FAIL line each.

Pixel-exact oracles, protocol invariants, and throttled-transport
proportionality; run with `pytest tests/test_acceptance.py -v -s`.
"""

import math
import statistics
import threading
import time

import numpy as np
import pytest

from oracles import mip_reference
from tilewire import bench, interact, raster, scene, transport, volray, wire
from tilewire.cluster import BarrierMonitor, JobConfig, TileServer
from tilewire.interact import EventMsg, InteractionSession, MasterCore, camera_fingerprint
from tilewire.job import LocalJob
from tilewire.raster import CameraState, render_sequential
from tilewire.transport import LocalChannel, SocketChannel, ThrottleSpec


def report(name, ok, detail=""):
    print(f"{'PASS' if ok else 'FAIL'} - {name}" + (f": {detail}" if detail else ""))
    assert ok, f"{name}: {detail}"


def random_camera(rng) -> CameraState:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    q32 = q.astype(np.float32)
    q32 /= np.float32(np.sqrt(np.sum(q32 * q32, dtype=np.float32)))
    return CameraState(
        orientation=tuple(float(v) for v in q32),
        focal_distance=float(rng.uniform(2.8, 5.0)),
        center=tuple(float(v) for v in rng.uniform(-0.2, 0.2, 3)),
        fov_y=float(rng.uniform(0.5, 1.1)),
        near=float(rng.uniform(0.05, 0.3)),
        far=float(rng.uniform(20.0, 80.0)),
    )


def random_mesh(rng, n_tris) -> scene.Mesh:
    t = np.zeros((n_tris, 3), dtype=scene.VERTEX_DTYPE)
    base = rng.uniform(-0.9, 0.9, size=(n_tris, 1, 3))
    t["pos"] = (base + rng.uniform(-0.3, 0.3, size=(n_tris, 3, 3))).astype(np.float32)
    t["rgb"] = rng.integers(0, 256, size=(n_tris, 3, 3), dtype=np.uint8)
    return scene.Mesh(t)


def run_distributed(partitions, cam, mode, tile_px=64):
    cfg = JobConfig(mode=mode, tile_w=tile_px, tile_h=tile_px, n_app_nodes=len(partitions))
    with LocalJob(cfg, partitions=partitions, initial_camera=cam) as job:
        _, mural, _, _ = job.drive_frame(job.event(interact.WHEEL, delta=0.1))
        return mural, job.master.camera


def corpus(rng, count):
    sizes = [int(rng.integers(20, 3001)) for _ in range(count - 5)] + [5000] * 5
    rng.shuffle(sizes)
    for i, n in enumerate(sizes):
        yield random_mesh(rng, n), random_camera(rng), ("contiguous", "interleaved")[i % 2]


class TestAcceptance:
    def test_01_tiled_transparency(self):
        rng = np.random.default_rng(1001)
        t0 = time.monotonic()
        worst = 0
        for mesh, cam, strategy in corpus(rng, 100):
            parts = scene.partition_scene(mesh, 4, strategy)
            mural, final_cam = run_distributed(parts, cam, "tiled")
            seq = render_sequential(parts, final_cam, 128, 128)
            worst = max(worst, mural.diff_count(seq))
        elapsed = time.monotonic() - t0
        report(
            "tiled transparency",
            worst == 0 and elapsed < 60,
            f"100 scenes x random cameras, worst diff {worst} px, {elapsed:.1f}s",
        )

    def test_02_composited_transparency(self):
        rng = np.random.default_rng(2002)
        t0 = time.monotonic()
        worst = 0
        for mesh, cam, strategy in corpus(rng, 100):
            parts = scene.partition_scene(mesh, 4, strategy)
            # engineered ties: copy some of rank 0's triangles into rank 2
            # with different colors; equal depth must resolve to rank 0
            k = min(20, parts[0].mesh.n_triangles)
            dup = parts[0].mesh.tris[:k].copy()
            dup["rgb"] = 255 - dup["rgb"]
            parts[2] = scene.ScenePartition(
                2, scene.Mesh(np.concatenate([parts[2].mesh.tris, dup]))
            )
            mural, final_cam = run_distributed(parts, cam, "composited")
            seq = render_sequential(parts, final_cam, 128, 128)
            worst = max(worst, mural.diff_count(seq))
        elapsed = time.monotonic() - t0
        report(
            "composited transparency",
            worst == 0 and elapsed < 60,
            f"100 scenes incl. equal-depth ties, worst diff {worst} px, {elapsed:.1f}s",
        )

    def test_03_table1_proportionality(self):
        t0 = time.monotonic()
        sizes = [2**20, 2 * 2**20, int(2.5 * 2**20), 5 * 2**20]
        ms = [
            bench.run_scenario(s)
            for s in bench.size_sweep(sizes, 100, n_frames=6, warmup_frames=2)
        ]
        fit = bench.fit_model(ms)
        cell_errs = [rel for _, _, _, rel in fit.residuals]
        ratio_12 = ms[0].fps / ms[1].fps  # 1 MiB vs 2 MiB
        oracle = [
            bench.predict_frame_time(fit.c_render, m.median_frame_bytes, fit.effective_bandwidth_bps)
            for m in ms
        ]
        ratio_errs = []
        for i in (1, 2, 3):
            measured_ratio = ms[i].median_frame_time / ms[0].median_frame_time
            oracle_ratio = oracle[i] / oracle[0]
            ratio_errs.append(abs(measured_ratio / oracle_ratio - 1))
        elapsed = time.monotonic() - t0
        ok = (
            max(cell_errs) < 0.20
            and all(e < 0.20 for e in ratio_errs)
            and 1.6 <= ratio_12 <= 2.4
            and elapsed < 120
        )
        report(
            "table-1 proportionality (scaled)",
            ok,
            f"per-cell err max {max(cell_errs):.1%}, fps(1MiB)/fps(2MiB)={ratio_12:.2f}, "
            f"B_eff={fit.effective_bandwidth_bps / 1e6:.1f} Mbit/s, {elapsed:.1f}s",
        )

    def test_04_bandwidth_scaling(self):
        # (a) no injected render cost: fitted effective bandwidth tracks a
        # 10x throttle change in transfer-dominated regimes
        sizes = [2**17, 2**18, 2**19]
        fits = {}
        for mbit in (5, 50):
            runs = [
                bench.run_scenario(s)
                for s in bench.size_sweep(sizes, mbit, n_frames=5, warmup_frames=1)
            ]
            fits[mbit] = bench.fit_model(runs)
        ratio0 = fits[50].effective_bandwidth_bps / fits[5].effective_bandwidth_bps
        # (b) render cost calibrated to the reported 0.42 s intercept, and
        # effective bandwidths calibrated to the measured 16 MiB frame times
        # (1.75 s and 0.729 s transfer): the "approximately doubles" row
        fps = {}
        for beff_mbit in (76.7, 184.0):
            cfg = JobConfig(
                mode="composited",
                tile_rows=1,
                tile_cols=1,
                tile_w=256,
                tile_h=256,
                throttle=ThrottleSpec(bandwidth_bps=beff_mbit * 1e6),
                render_cost_s=0.42,
                scene={"kind": "synthetic", "bytes": 16 * 2**20, "seed": 42},
            )
            m = bench.run_scenario(
                bench.Scenario(name=f"16MiB@{beff_mbit}", config=cfg, n_frames=4, warmup_frames=1),
                timeout=120,
            )
            fps[beff_mbit] = m.fps
        improvement = fps[184.0] / fps[76.7]
        ok = 8.0 <= ratio0 <= 12.0 and 1.6 <= improvement <= 2.6
        report(
            "bandwidth scaling",
            ok,
            f"c=0 fitted B ratio {ratio0:.2f} (want ~10); calibrated row "
            f"{fps[76.7]:.2f} -> {fps[184.0]:.2f} fps, improvement {improvement:.2f} "
            f"(reported row: 0.46 -> 0.87)",
        )

    def test_05_display_list_collapse(self):
        sphere = {"kind": "spiked_sphere", "meridians": 70, "parallels": 42, "spikes": 1450, "radius": 1.0}
        thr = bench.throttle_mbps(10)
        base = dict(tile_w=128, tile_h=128, throttle=thr, scene=sphere)
        uncached = bench.run_scenario(
            bench.Scenario("uncached", JobConfig(**base), n_frames=5, warmup_frames=1)
        )
        cached = bench.run_scenario(
            bench.Scenario("cached", JobConfig(caching=True, **base), n_frames=6, warmup_frames=2)
        )
        # exact control-only frame cost: geometry bytes are zero iff the
        # steady cached frame equals pure control traffic
        cam = CameraState()
        control = sum(
            len(wire.encode(c))
            for c in (
                wire.BeginFrame(3, 0),
                wire.Barrier(6),
                wire.SetCamera(raster.camera_matrix(cam, 256, 256)),
                wire.CallList(1),
                wire.Barrier(7),
                wire.Swap(True),
                wire.EndFrame(3),
            )
        ) * 16  # 4 ranks x 4 servers
        geometry_zero = cached.median_frame_bytes == control
        control_share = cached.median_frame_bytes / uncached.median_frame_bytes
        speedup = cached.fps / uncached.fps
        ok = geometry_zero and control_share < 0.01 and speedup >= 10
        report(
            "display-list collapse",
            ok,
            f"steady cached frame {cached.median_frame_bytes:.0f} B == control {control} B, "
            f"{control_share:.2%} of uncached; fps {uncached.fps:.2f} -> {cached.fps:.1f} "
            f"({speedup:.0f}x, reported: 3 -> 90)",
        )

    def test_06_event_throughput(self):
        srv = transport.listen("127.0.0.1", 0)
        port = srv.getsockname()[1]
        n_events, n_slaves = 5000, 3
        counts = [0] * n_slaves
        done = threading.Event()

        def slave(i, sock):
            dec = interact.EventDecoder()
            chan = SocketChannel(sock)
            while counts[i] < n_events:
                data = chan.recv_bytes(timeout=5.0)
                if data is None:
                    return
                counts[i] += len(dec.feed(data))
            if all(c >= n_events for c in counts):
                done.set()

        client_socks = []
        threads = []
        for i in range(n_slaves):
            c = transport.connect("127.0.0.1", port)
            s, _ = srv.accept()
            th = threading.Thread(target=slave, args=(i, s), daemon=True)
            th.start()
            threads.append(th)
            client_socks.append(SocketChannel(c))

        events = [
            interact.encode_event(
                EventMsg(interact.POINTER_MOVE, seq=k + 1, button=0, x=0.1, y=-0.1)
            )
            for k in range(n_events)
        ]
        assert all(len(e) <= 100 for e in events)
        t0 = time.monotonic()
        for data in events:
            interact.master_fanout(data, client_socks)
        finished = done.wait(timeout=5.0)
        elapsed = time.monotonic() - t0
        for ch in client_socks:
            ch.close()
        srv.close()
        ok = finished and elapsed <= 1.0 and all(c == n_events for c in counts)
        report(
            "event throughput",
            ok,
            f"{n_events} events (<=100 B) to {n_slaves} loopback slaves in {elapsed * 1000:.0f} ms",
        )

    def test_07_replica_determinism(self):
        rng = np.random.default_rng(7007)
        n_slaves = 4
        channels = [LocalChannel() for _ in range(n_slaves)]
        core = MasterCore("tiled", False, channels)
        sessions = [InteractionSession() for _ in range(n_slaves)]
        threads = [
            threading.Thread(target=interact.slave_loop, args=(s, ch), daemon=True)
            for s, ch in zip(sessions, channels)
        ]
        for th in threads:
            th.start()
        kinds = [
            interact.POINTER_DOWN,
            interact.POINTER_MOVE,
            interact.POINTER_UP,
            interact.WHEEL,
            interact.KEY,
        ]
        probs = [0.15, 0.5, 0.1, 0.2, 0.05]
        for _ in range(10_000):
            kind = int(rng.choice(kinds, p=probs))
            core.submit(
                EventMsg(
                    kind,
                    0,
                    button=int(rng.integers(0, 3)),
                    x=float(rng.uniform(-1, 1)),
                    y=float(rng.uniform(-1, 1)),
                    delta=float(rng.uniform(-2, 2)),
                    code=int(rng.integers(0, 200)),
                )
            )
        core.submit(EventMsg(interact.QUIT, 0))
        for th in threads:
            th.join(timeout=10)
        master_fp = camera_fingerprint(core.session.camera)
        same = [camera_fingerprint(s.camera) == master_fp for s in sessions]
        report(
            "replica determinism",
            all(same),
            f"10,000 events: {sum(same)}/{n_slaves} replicas bit-identical to master",
        )

    def test_08_protocol_invariants(self):
        rng = np.random.default_rng(8008)
        # codec round-trip fuzz (commands and events)
        for _ in range(300):
            cmd = _random_command(rng)
            back, used = wire.decode(wire.encode(cmd))
            assert back == cmd and used == len(wire.encode(cmd))
        for _ in range(300):
            ev = _random_event(rng)
            back, _ = interact.decode_event(interact.encode_event(ev))
            assert interact.encode_event(back) == interact.encode_event(ev)
        # totality: random bytes classify as valid, truncated, or malformed
        for _ in range(300):
            blob = rng.bytes(int(rng.integers(0, 60)))
            try:
                wire.decode(blob)
            except (wire.TruncatedFrame, wire.MalformedFrame):
                pass
        # exactly-one-swap + barrier-release invariants over random schedules
        presentations = 0
        n_schedules = 1000
        for trial in range(n_schedules):
            n_ranks = int(rng.integers(2, 5))
            cfg = JobConfig(
                tile_rows=1, tile_cols=1, tile_w=8, tile_h=8, n_app_nodes=n_ranks, watchdog_s=5.0
            )
            tile = cfg.tiles()[0]
            server = TileServer(tile, cfg, present_sink=lambda *a: None)
            owner = int(rng.integers(0, n_ranks))
            streams = []
            for r in range(n_ranks):
                cmds = [wire.BeginFrame(1, r)]
                if r == 0:
                    cmds.append(wire.Clear((0, 0, 0, 255), 1.0))
                cmds += [
                    wire.Barrier(2),
                    wire.Barrier(3),
                    wire.Swap(suppress=(r != owner)),
                    wire.EndFrame(1),
                ]
                streams.append(b"".join(wire.encode(c) for c in cmds))
            chans = [LocalChannel() for _ in range(n_ranks)]
            threads = [
                threading.Thread(target=server.serve_connection, args=(ch,), daemon=True)
                for ch in chans
            ]
            for th in threads:
                th.start()
            order = rng.permutation(n_ranks)
            for r in order:
                blob = streams[r]
                cut = int(rng.integers(1, len(blob)))
                chans[r].send_bytes(blob[:cut])
                chans[r].send_bytes(blob[cut:])
            for ch in chans:
                ch.close()
            for th in threads:
                th.join(timeout=10)
            assert server.presented == 1, f"schedule {trial}: {server.presented} presentations"
            presentations += server.presented
            for bid in (2, 3):
                ep = server.barriers.epoch(bid)
                assert ep.arrivals == set(range(n_ranks))
                assert ep.released_at >= max(t for _, t in ep.arrival_log)
        report(
            "protocol invariants",
            presentations == n_schedules,
            f"codec fuzz ok; {presentations}/{n_schedules} schedules presented exactly once; "
            f"no early barrier release",
        )

    def test_09_bucketing_pathology(self):
        means = {}
        for strategy in ("contiguous", "interleaved"):
            cfg = JobConfig(
                tile_w=128,
                tile_h=128,
                partition_strategy=strategy,
                bucket_block=1024,
                scene={"kind": "synthetic", "bytes": 2**20, "seed": 99},
            )
            m = bench.run_scenario(
                bench.Scenario(name=strategy, config=cfg, n_frames=5, warmup_frames=1)
            )
            means[strategy] = statistics.mean(m.steady_link_means().values())
        ratio = means["interleaved"] / means["contiguous"]
        report(
            "bucketing pathology",
            ratio >= 1.5,
            f"interleaved sends {ratio:.2f}x the mean per-link bytes of contiguous",
        )

    def test_10_mip_oracle(self):
        vol = scene.gen_random_volume((32, 32, 32), 1234)
        cam = CameraState(focal_distance=2.2)
        step = volray.default_step(vol)
        region = (32, 32, 64, 64)
        got = volray.raycast_mip(vol, cam, region, step, 128, 128)
        want = mip_reference(
            vol.data,
            vol.dims,
            [float(v) for v in cam.eye()],
            cam.rotation().tolist(),
            math.tan(float(cam.fov_y) / 2.0),
            1.0,
            step,
            region,
            128,
            128,
        )
        exact = np.array_equal(got, want)

        totals = {}
        for dims in ((32, 32, 32), (128, 128, 128)):
            v = scene.gen_random_volume(dims, 3)
            cfg = JobConfig(tile_w=64, tile_h=64, n_app_nodes=4)
            with LocalJob(cfg, volume=v) as job:
                _, _, links, _ = job.drive_frame(job.event(interact.WHEEL, delta=0.2))
                totals[dims] = sum(sum(x.values()) for x in links.values())
        invariant = totals[(32, 32, 32)] == totals[(128, 128, 128)]
        report(
            "MIP oracle",
            exact and invariant,
            f"64x64 region exact vs brute force: {exact}; frame bytes 32^3 vs 128^3: "
            f"{totals[(32, 32, 32)]} == {totals[(128, 128, 128)]}",
        )


def _random_command(rng):
    kind = rng.integers(0, 9)
    if kind == 0:
        return wire.BeginFrame(int(rng.integers(0, 2**32)), int(rng.integers(0, 2**16)))
    if kind == 1:
        return wire.Clear(tuple(int(v) for v in rng.integers(0, 256, 4)), float(rng.uniform(0, 1)))
    if kind == 2:
        return wire.SetCamera(rng.uniform(-10, 10, (4, 4)).astype(np.float32))
    if kind == 3:
        t = np.zeros((int(rng.integers(0, 6)), 3), dtype=scene.VERTEX_DTYPE)
        t["pos"] = rng.uniform(-1, 1, (len(t), 3, 3)).astype(np.float32)
        t["rgb"] = rng.integers(0, 256, (len(t), 3, 3))
        return wire.DrawTriangles(t)
    if kind == 4:
        t = np.zeros((2, 3), dtype=scene.VERTEX_DTYPE)
        t["pos"] = rng.uniform(-1, 1, (2, 3, 3)).astype(np.float32)
        return wire.DefineList(int(rng.integers(0, 2**32)), (wire.DrawTriangles(t),))
    if kind == 5:
        return wire.CallList(int(rng.integers(0, 2**32)))
    if kind == 6:
        return wire.Barrier(int(rng.integers(0, 2**32)))
    if kind == 7:
        return wire.Swap(bool(rng.integers(0, 2)))
    return wire.EndFrame(int(rng.integers(0, 2**32)))


def _random_event(rng):
    kind = int(
        rng.choice(
            [
                interact.POINTER_DOWN,
                interact.POINTER_MOVE,
                interact.POINTER_UP,
                interact.WHEEL,
                interact.KEY,
                interact.SET_MODE,
                interact.QUIT,
                interact.TOGGLE_CACHE,
            ]
        )
    )
    return EventMsg(
        kind,
        seq=int(rng.integers(0, 2**32)),
        button=int(rng.integers(0, 256)),
        x=float(rng.uniform(-1, 1)),
        y=float(rng.uniform(-1, 1)),
        delta=float(rng.uniform(-50, 50)),
        code=int(rng.integers(0, 2**32)),
        down=bool(rng.integers(0, 2)),
        mode=int(rng.integers(0, 2)),
    )
