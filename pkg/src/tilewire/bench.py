"""Benchmark scenarios and the frame-time model.

A scenario runs a whole in-process cluster job (throttled channels by
default), drives a fixed camera-rotation script through the interaction
layer, and records per-frame wall time and per-link bytes. The model fitted
over scene sizes is frame_time = c_render + 8 * bytes / effective_bandwidth,
the same line the reported cluster saturates: halving the data roughly
doubles the frame rate until the render term takes over.
"""

from __future__ import annotations

import csv
import math
import statistics
from dataclasses import dataclass, field, replace

import numpy as np

from . import interact
from .cluster import JobConfig
from .job import LocalJob, build_partitions, build_scene
from .scene import VolumeGrid
from .transport import ThrottleSpec


@dataclass
class Scenario:
    """One benchmark configuration: a job shape plus a frame budget."""

    name: str
    config: JobConfig = field(default_factory=JobConfig)
    n_frames: int = 8
    warmup_frames: int = 2
    script: str = "rotate"  # rotate | zoom

    def __post_init__(self):
        if self.n_frames < self.warmup_frames + 3:
            raise ValueError("need n_frames >= warmup_frames + 3")
        if self.script not in ("rotate", "zoom"):
            raise ValueError("script must be rotate or zoom")


@dataclass
class Measurement:
    scenario: str
    frame_seconds: list
    frame_bytes: list  # total bytes per frame
    per_link: list  # per frame: {(rank, server): bytes}
    warmup_frames: int
    event_bytes: list = field(default_factory=list)

    def __post_init__(self):
        if any(t < 0 for t in self.frame_seconds) or any(b < 0 for b in self.frame_bytes):
            raise ValueError("times and bytes must be non-negative")

    def _steady(self, values):
        return values[self.warmup_frames :]

    @property
    def median_frame_time(self) -> float:
        return statistics.median(self._steady(self.frame_seconds))

    @property
    def fps(self) -> float:
        return 1.0 / self.median_frame_time

    @property
    def median_frame_bytes(self) -> float:
        return statistics.median(self._steady(self.frame_bytes))

    def steady_link_means(self) -> dict:
        """Mean bytes per link over post-warmup frames."""
        out: dict = {}
        frames = self._steady(self.per_link)
        for links in frames:
            for key, val in links.items():
                out[key] = out.get(key, 0) + val
        return {k: v / len(frames) for k, v in out.items()}


def rotation_script(job: LocalJob, n_frames: int):
    """Camera-drag event stream: one frame-triggering MOVE per step."""
    yield job.event(interact.POINTER_DOWN, button=0, x=0.3, y=0.0)
    for k in range(1, n_frames + 1):
        ang = 0.12 * k
        yield job.event(
            interact.POINTER_MOVE, button=0, x=0.3 * math.cos(ang), y=0.3 * math.sin(ang)
        )


def zoom_script(job: LocalJob, n_frames: int):
    """Wheel-zoom event stream: keeps the orientation fixed."""
    yield job.event(interact.POINTER_DOWN, button=0, x=0.0, y=0.0)
    for k in range(n_frames):
        yield job.event(interact.WHEEL, delta=0.2 if k % 2 == 0 else -0.2)


def run_scenario(s: Scenario, timeout: float = 60.0) -> Measurement:
    """Launch the job, drive the script, and collect a Measurement."""
    cfg = s.config
    mesh_or_vol = build_scene(cfg)
    if isinstance(mesh_or_vol, VolumeGrid):
        job = LocalJob(cfg, volume=mesh_or_vol)
    else:
        job = LocalJob(cfg, partitions=build_partitions(cfg, mesh_or_vol))
    seconds, totals, links, ev_bytes = [], [], [], []
    try:
        script = zoom_script if s.script == "zoom" else rotation_script
        events = script(job, s.n_frames)
        down = next(events)
        job.post(down)  # anchors the drag; does not trigger a frame
        for ev in events:
            data_len = len(interact.encode_event(ev))
            _, _, per_link, elapsed = job.drive_frame(ev, timeout=timeout)
            seconds.append(elapsed)
            flat = {
                (rank, srv): n
                for rank, by_srv in per_link.items()
                for srv, n in by_srv.items()
            }
            links.append(flat)
            totals.append(sum(flat.values()))
            ev_bytes.append(data_len * cfg.n_app_nodes)
    finally:
        job.close()
    return Measurement(
        scenario=s.name,
        frame_seconds=seconds,
        frame_bytes=totals,
        per_link=links,
        warmup_frames=s.warmup_frames,
        event_bytes=ev_bytes,
    )


# ---------------------------------------------------------------------------
# Frame-time model
# ---------------------------------------------------------------------------


def predict_frame_time(c_render: float, n_bytes: float, bandwidth_bps: float) -> float:
    return c_render + 8.0 * n_bytes / bandwidth_bps


@dataclass
class ModelFit:
    c_render: float
    effective_bandwidth_bps: float
    residuals: list  # (scenario, measured_s, predicted_s, relative error)


def fit_model(measurements) -> ModelFit:
    """Least-squares frame_time vs bytes over scenarios of distinct sizes."""
    pts = [(m.median_frame_bytes, m.median_frame_time, m.scenario) for m in measurements]
    sizes = {round(b) for b, _, _ in pts}
    if len(sizes) < 3:
        raise ValueError("fit needs measurements at >= 3 distinct sizes")
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    slope, intercept = np.polyfit(xs, ys, 1)
    bandwidth = 8.0 / slope
    residuals = []
    for b, t, name in pts:
        pred = intercept + slope * b
        residuals.append((name, t, pred, abs(t - pred) / t))
    return ModelFit(float(intercept), float(bandwidth), residuals)


# ---------------------------------------------------------------------------
# Results output
# ---------------------------------------------------------------------------


def emit_results(measurements, path) -> list:
    """Per-frame CSV plus a Table-1-shaped summary; returns the summary rows."""
    measurements = list(measurements)
    link_keys = sorted({k for m in measurements for links in m.per_link for k in links})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["scenario", "frame", "seconds", "bytes_total"]
            + [f"bytes_r{r}_s{s}" for r, s in link_keys]
        )
        for m in measurements:
            for i, (t, b, links) in enumerate(
                zip(m.frame_seconds, m.frame_bytes, m.per_link)
            ):
                w.writerow(
                    [m.scenario, i, repr(t), b] + [links.get(k, 0) for k in link_keys]
                )
    summary = [
        {
            "scenario": m.scenario,
            "fps": m.fps,
            "bytes_per_frame": m.median_frame_bytes,
        }
        for m in measurements
    ]
    with open(str(path) + ".summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "fps", "bytes_per_frame"])
        for row in summary:
            w.writerow([row["scenario"], repr(row["fps"]), row["bytes_per_frame"]])
    return summary


def parse_results(path):
    """Read back a per-frame CSV as {scenario: [(frame, seconds, bytes)]}"""
    out: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["scenario"], []).append(
                (int(row["frame"]), float(row["seconds"]), int(row["bytes_total"]))
            )
    return out


# ---------------------------------------------------------------------------
# Canned scenario builders
# ---------------------------------------------------------------------------


def throttle_mbps(mbps: float, latency_ms: float = 0.0) -> ThrottleSpec:
    return ThrottleSpec(bandwidth_bps=mbps * 1e6, latency_s=latency_ms / 1000.0)


def size_sweep(sizes_bytes, bandwidth_mbps, base: JobConfig | None = None, **kw) -> list:
    """Scenarios over scene sizes at one throttle setting."""
    base = base or JobConfig(tile_w=128, tile_h=128)
    out = []
    for n in sizes_bytes:
        cfg = replace(
            base,
            throttle=throttle_mbps(bandwidth_mbps),
            scene={"kind": "synthetic", "bytes": int(n), "seed": 99},
        )
        label = f"{n / 2**20:g}MiB@{bandwidth_mbps:g}Mbit"
        out.append(Scenario(name=label, config=cfg, **kw))
    return out
