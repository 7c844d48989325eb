"""CPU-bound rendering mode: maximum-intensity-projection ray casting.

App nodes march camera rays through a volume placed in the unit cube
[-0.5, 0.5]^3 and ship only the resulting pixels as BLIT_IMAGE commands, so
wire traffic depends on the mural size alone while compute grows with the
volume. The sampling contract (slab clip, n = floor((t_exit-t_enter)/step)+1
samples from t_enter, nearest-neighbor with clamping) is what the test
oracle re-implements independently.
"""

from __future__ import annotations

import math

import numpy as np

from . import wire, _backend
from .cluster import FrameAbort, frame_flags
from .raster import CameraState
from .scene import VolumeGrid
from .transport import ChannelClosed


def raycast_mip(
    vol: VolumeGrid,
    cam: CameraState,
    region,
    step: float,
    mural_w: int,
    mural_h: int,
) -> np.ndarray:
    """MIP of the volume over a pixel rect of the mural; (h, w) uint8."""
    x0, y0, w, h = region
    if w <= 0 or h <= 0:
        raise ValueError("region must have positive extent")
    if step <= 0:
        raise ValueError("step must be positive")
    dx, dy, dz = vol.dims
    out = np.zeros((h, w), dtype=np.uint8)
    eye = cam.eye()
    rot = cam.rotation()
    tanhalf = math.tan(float(cam.fov_y) / 2.0)
    aspect = mural_w / mural_h
    _backend.mip_region(
        out,
        vol.data,
        dx,
        dy,
        dz,
        int(x0),
        int(y0),
        int(w),
        int(h),
        int(mural_w),
        int(mural_h),
        np.ascontiguousarray(eye, dtype=np.float64),
        np.ascontiguousarray(rot, dtype=np.float64),
        float(tanhalf),
        float(aspect),
        float(step),
    )
    return out


def default_step(vol: VolumeGrid) -> float:
    """Half the smallest voxel edge of the unit-cube placement."""
    return 0.5 / max(vol.dims)


def band_region(rank: int, n: int, mural_w: int, mural_h: int):
    """Horizontal band of the mural owned by one rank."""
    y0 = rank * mural_h // n
    y1 = (rank + 1) * mural_h // n
    return (0, y0, mural_w, y1 - y0)


class VolrayNode:
    """App node flavor whose only drawable is one blit per touched tile."""

    def __init__(self, rank: int, vol: VolumeGrid, config, connections):
        self.rank = rank
        self.vol = vol
        self.config = config
        self.conns = list(connections)
        self.tiles = config.tiles()
        self.mirrors = [wire.ServerStateMirror() for _ in self.conns]
        self.frame_no = 0
        self.step = default_step(vol)

    def _send(self, idx, data):
        try:
            self.conns[idx].send_bytes(data)
        except ChannelClosed as exc:
            raise FrameAbort(f"tile server {idx} connection lost: {exc}", server=idx) from exc

    def _send_all(self, cmd):
        data = wire.encode(cmd)
        for i in range(len(self.conns)):
            self._send(i, data)

    def render_frame(self, cam, mode=None, caching=None):
        mode = mode or self.config.mode
        flags = frame_flags(mode, self.rank)
        self.frame_no += 1
        before = [c.bytes_sent for c in self.conns]

        self._send_all(wire.BeginFrame(self.frame_no, self.rank))
        if flags.clear:
            for i, mirror in enumerate(self.mirrors):
                cmd = wire.Clear((0, 0, 0, 255), 1.0)
                if wire.track(cmd, mirror):
                    self._send(i, wire.encode(cmd))
        self._send_all(wire.Barrier(2 * self.frame_no))

        band = band_region(self.rank, self.config.n_app_nodes, self.config.mural_w, self.config.mural_h)
        gray = raycast_mip(self.vol, cam, band, self.step, self.config.mural_w, self.config.mural_h)
        rgba = np.empty((band[3], band[2], 4), dtype=np.uint8)
        rgba[:, :, 0] = gray
        rgba[:, :, 1] = gray
        rgba[:, :, 2] = gray
        rgba[:, :, 3] = 255

        if mode == "composited":
            self._send_all(wire.BlitImage(band[0], band[1], rgba))
        else:
            bx0, by0, bw, bh = band
            for i, t in enumerate(self.tiles):
                x0 = max(bx0, t.x)
                y0 = max(by0, t.y)
                x1 = min(bx0 + bw, t.x + t.w)
                y1 = min(by0 + bh, t.y + t.h)
                if x0 >= x1 or y0 >= y1:
                    continue
                piece = rgba[y0 - by0 : y1 - by0, x0 - bx0 : x1 - bx0]
                self._send(i, wire.encode(wire.BlitImage(x0, y0, piece)))

        self._send_all(wire.Barrier(2 * self.frame_no + 1))
        self._send_all(wire.Swap(suppress=not flags.swap_authoritative))
        self._send_all(wire.EndFrame(self.frame_no))
        return {i: c.bytes_sent - before[i] for i, c in enumerate(self.conns)}
