"""Launcher and configuration.

One binary, role subcommands: `local` runs a whole job in-process;
`master` / `appnode` / `tileserver` run single roles for multi-process jobs;
`bench` executes scenario files; `backend-bench` compares the compiled and
numpy kernels. The JSON job config (all keys optional):

    mode             "tiled" | "composited"        (default tiled)
    app_nodes        int                            (4)
    tile_rows        int                            (2)
    tile_cols        int                            (2)
    tile_width       int pixels                     (256)
    tile_height      int pixels                     (256)
    bandwidth_mbps   float, 0/absent = no throttle  (off)
    latency_ms       float                          (0)
    caching          bool                           (false)
    master_addr      "host:port"                    (127.0.0.1:7600)
    server_addrs     ["host:port", ...]             (master port + 1 + i)
    ui_addr          "host:port", "" = no viewer    ("")
    bucket_block     int, 0 = one bound per frame   (64)
    watchdog_s       float seconds                  (30)
    render_cost_ms   float, injected render cost    (0)
    partition_strategy "contiguous" | "interleaved" (contiguous)
    scene            {"kind": "synthetic", "bytes": N, "seed": S}
                     | {"kind": "spiked_sphere", "meridians", "parallels", "spikes", "radius"}
                     | {"kind": "volume", "dims": [x,y,z], "seed": S}

Environment variables TW_<KEY> (e.g. TW_BANDWIDTH_MBPS=100) override file
values key by key.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

from .cluster import JobConfig
from .transport import ThrottleSpec


class ConfigError(Exception):
    pass


_KEYS = {
    "mode": str,
    "app_nodes": int,
    "tile_rows": int,
    "tile_cols": int,
    "tile_width": int,
    "tile_height": int,
    "bandwidth_mbps": float,
    "latency_ms": float,
    "caching": bool,
    "master_addr": str,
    "server_addrs": list,
    "ui_addr": str,
    "bucket_block": int,
    "watchdog_s": float,
    "render_cost_ms": float,
    "partition_strategy": str,
    "scene": dict,
}


def _coerce(key, value, problems):
    want = _KEYS[key]
    if want is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0"):
            return value.lower() in ("true", "1")
        problems.append(f"{key}: expected a boolean, got {value!r}")
        return None
    if want in (int, float):
        try:
            out = want(value)
        except (TypeError, ValueError):
            problems.append(f"{key}: expected a {want.__name__}, got {value!r}")
            return None
        if out < 0:
            problems.append(f"{key}: must be non-negative, got {value!r}")
            return None
        return out
    if not isinstance(value, want):
        problems.append(f"{key}: expected {want.__name__}, got {value!r}")
        return None
    return value


def parse_config(path=None, env=None) -> JobConfig:
    """Load, default, env-override, and validate a job config.

    Every problem is reported in one ConfigError, not just the first.
    """
    env = os.environ if env is None else env
    problems = []
    raw = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must hold a JSON object")

    for key in sorted(raw):
        if key not in _KEYS:
            problems.append(f"unknown key {key!r} (known: {', '.join(sorted(_KEYS))})")

    values = {}
    for key in _KEYS:
        if key in raw:
            got = _coerce(key, raw[key], problems)
            if got is not None:
                values[key] = got
        env_name = "TW_" + key.upper()
        if env_name in env:
            text = env[env_name]
            try:
                parsed = json.loads(text)
            except json.JSONDecodeError:
                parsed = text
            got = _coerce(key, parsed, problems)
            if got is not None:
                values[key] = got

    mode = values.get("mode", "tiled")
    if mode not in ("tiled", "composited"):
        problems.append(f"mode: must be tiled or composited, got {mode!r}")
    strategy = values.get("partition_strategy", "contiguous")
    if strategy not in ("contiguous", "interleaved"):
        problems.append(f"partition_strategy: must be contiguous or interleaved, got {strategy!r}")

    throttle = None
    if values.get("bandwidth_mbps"):
        throttle = ThrottleSpec(
            bandwidth_bps=values["bandwidth_mbps"] * 1e6,
            latency_s=values.get("latency_ms", 0.0) / 1000.0,
        )

    if problems:
        raise ConfigError("invalid config:\n  " + "\n  ".join(problems))

    kwargs = dict(
        mode=mode,
        n_app_nodes=values.get("app_nodes", 4),
        tile_rows=values.get("tile_rows", 2),
        tile_cols=values.get("tile_cols", 2),
        tile_w=values.get("tile_width", 256),
        tile_h=values.get("tile_height", 256),
        throttle=throttle,
        caching=values.get("caching", False),
        partition_strategy=strategy,
        master_addr=values.get("master_addr", "127.0.0.1:7600"),
        ui_addr=values.get("ui_addr", ""),
    )
    if "server_addrs" in values:
        kwargs["server_addrs"] = values["server_addrs"]
    if "bucket_block" in values:
        kwargs["bucket_block"] = values["bucket_block"]
    if "watchdog_s" in values:
        kwargs["watchdog_s"] = values["watchdog_s"]
    if "render_cost_ms" in values:
        kwargs["render_cost_s"] = values["render_cost_ms"] / 1000.0
    if "scene" in values:
        kwargs["scene"] = values["scene"]
    try:
        return JobConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_local(args):
    from .master import run_local

    config = parse_config(args.config)
    run_local(config, script=args.script, frames_dir=args.frames_dir)
    return 0


def _cmd_master(args):
    from .master import run_master

    config = parse_config(args.config)
    run_master(config, script=args.script, frames_dir=args.frames_dir)
    return 0


def _cmd_appnode(args):
    from .job import run_appnode

    config = parse_config(args.config)
    run_appnode(config, args.rank)
    return 0


def _cmd_tileserver(args):
    from .job import run_tileserver

    config = parse_config(args.config)
    run_tileserver(config, args.row, args.col, frames_dir=args.frames_dir)
    return 0


def _cmd_bench(args):
    from . import bench

    with open(args.scenario) as fh:
        doc = json.load(fh)
    scenarios = doc["scenarios"] if isinstance(doc, dict) else doc
    results = []
    failures = []
    for entry in scenarios:
        cfg_raw = dict(entry.get("config", {}))
        tmp = dict(cfg_raw)
        config = _config_from_dict(tmp)
        s = bench.Scenario(
            name=entry["name"],
            config=config,
            n_frames=entry.get("n_frames", 8),
            warmup_frames=entry.get("warmup_frames", 2),
            script=entry.get("script", "rotate"),
        )
        m = bench.run_scenario(s)
        results.append(m)
        line = f"{m.scenario}: {m.fps:.3f} fps, {m.median_frame_bytes:.0f} bytes/frame"
        expect = entry.get("expect", {})
        ok = True
        if "fps_min" in expect and m.fps < expect["fps_min"]:
            ok = False
        if "fps_max" in expect and m.fps > expect["fps_max"]:
            ok = False
        if not ok:
            failures.append(m.scenario)
            line += f"  FAIL (expected fps in [{expect.get('fps_min', '-')}, {expect.get('fps_max', '-')}])"
        print(line)
    if args.out:
        bench.emit_results(results, args.out)
        print(f"wrote {args.out} and {args.out}.summary.csv")
    if failures:
        print(f"{len(failures)} scenario(s) out of tolerance: {', '.join(failures)}")
        return 1
    return 0


def _config_from_dict(d: dict) -> JobConfig:
    import tempfile

    with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as fh:
        json.dump(d, fh)
        path = fh.name
    try:
        return parse_config(path, env={})
    finally:
        os.unlink(path)


def _cmd_backend_bench(args):
    import numpy as np

    from . import _backend, raster, scene

    names = []
    try:
        _backend.get_impl("native")
        names.append("native")
    except ImportError:
        print("compiled kernels not available; timing the numpy fallback only")
    names.append("python")

    mesh = scene.gen_synthetic_scene(48 * args.triangles, 7)
    cam = raster.CameraState()
    matrix = raster.camera_matrix(cam, 512, 512)
    xi, yi, z01, ok = raster.project_vertices(matrix, mesh.positions(), 512, 512)
    keep = ok.all(axis=1)
    xi, yi, z01 = xi[keep], yi[keep], z01[keep]
    rgb = mesh.colors().astype(np.float64)[keep]
    vol = scene.gen_random_volume((64, 64, 64), 3)

    outputs = {}
    print(f"{args.triangles} triangles into 512x512, {args.repeat} repetitions; 128x128 MIP of 64^3")
    for name in names:
        impl = _backend.get_impl(name)
        color = np.zeros((512, 512, 4), dtype=np.uint8)
        depth = np.ones((512, 512), dtype=np.float32)
        t0 = time.perf_counter()
        for _ in range(args.repeat):
            color[:] = 0
            depth[:] = 1.0
            impl.fill_triangles(color, depth, 0, 0, 0, 0, 512, 512, xi, yi, z01, rgb)
        dt = (time.perf_counter() - t0) / args.repeat
        mip = np.zeros((128, 128), dtype=np.uint8)
        rot = np.ascontiguousarray(cam.rotation())
        eye = np.ascontiguousarray(cam.eye())
        t1 = time.perf_counter()
        impl.mip_region(mip, vol.data, 64, 64, 64, 0, 0, 128, 128, 128, 128, eye, rot, 0.4142, 1.0, 1 / 128)
        mt = time.perf_counter() - t1
        outputs[name] = (color.copy(), depth.copy(), mip.copy())
        print(
            f"  {name:>7}: fill {len(xi) / dt / 1e6:8.2f} Mtri/s ({dt * 1e3:7.2f} ms/frame)   "
            f"mip {128 * 128 / mt / 1e6:6.2f} Mray/s"
        )
    if len(outputs) == 2:
        a, b = outputs["native"], outputs["python"]
        same = all(np.array_equal(x, y) for x, y in zip(a, b))
        print(f"  outputs bit-identical: {same}")
        if not same:
            return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tilewire", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="cmd", required=True)

    def add(name, fn, **extra):
        sp = sub.add_parser(name, help=fn.__doc__)
        sp.add_argument("--config", default=None, help="job config JSON path")
        sp.set_defaults(fn=fn)
        return sp

    sp = add("local", _cmd_local)
    sp.add_argument("--script", default=None, help="rotate:N or zoom:N instead of a viewer")
    sp.add_argument("--frames-dir", default=None, help="write presented murals as PPM here")

    sp = add("master", _cmd_master)
    sp.add_argument("--script", default=None)
    sp.add_argument("--frames-dir", default=None)

    sp = add("appnode", _cmd_appnode)
    sp.add_argument("--rank", type=int, required=True)

    sp = add("tileserver", _cmd_tileserver)
    sp.add_argument("--row", type=int, required=True)
    sp.add_argument("--col", type=int, required=True)
    sp.add_argument("--frames-dir", default=None)

    sp = sub.add_parser("bench", help="run a scenario file")
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--out", default=None, help="per-frame CSV output path")
    sp.set_defaults(fn=_cmd_bench)

    sp = sub.add_parser("backend-bench", help="time compiled vs numpy kernels")
    sp.add_argument("--triangles", type=int, default=20000)
    sp.add_argument("--repeat", type=int, default=5)
    sp.set_defaults(fn=_cmd_backend_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
