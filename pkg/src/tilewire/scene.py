"""Triangle scene generation, measurement, and partitioning.

Meshes are stored in the exact per-vertex wire layout (16 bytes: 12 position
float32 + 3 color uint8 + 1 pad), so serialization is a memory copy and byte
accounting is a multiplication. A triangle is 48 bytes on the wire.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

VERTEX_DTYPE = np.dtype([("pos", "<f4", (3,)), ("rgb", "u1", (3,)), ("pad", "u1")])
TRIANGLE_WIRE_BYTES = 3 * VERTEX_DTYPE.itemsize  # 48

# Synthetic scenes place this many consecutive triangles per spatial cluster.
CLUSTER_TRIANGLES = 512

_SPIKE_SEED = 0x5B1CE


class Mesh:
    """Immutable triangle soup in wire layout plus an axis-aligned bound."""

    def __init__(self, tris: np.ndarray):
        tris = np.ascontiguousarray(tris, dtype=VERTEX_DTYPE)
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise ValueError("mesh triangles must have shape (n, 3)")
        pos = tris["pos"]
        if not np.isfinite(pos).all():
            raise ValueError("vertex positions must be finite")
        tris.setflags(write=False)
        self.tris = tris
        if len(tris):
            self.bounds = (
                pos.reshape(-1, 3).min(axis=0).astype(np.float32),
                pos.reshape(-1, 3).max(axis=0).astype(np.float32),
            )
        else:
            zero = np.zeros(3, dtype=np.float32)
            self.bounds = (zero, zero.copy())

    @property
    def n_triangles(self) -> int:
        return len(self.tris)

    def positions(self) -> np.ndarray:
        """All vertex positions, shape (n, 3, 3) float32 (read-only view)."""
        return self.tris["pos"]

    def colors(self) -> np.ndarray:
        return self.tris["rgb"]

    def to_wire(self) -> bytes:
        return self.tris.tobytes()

    @classmethod
    def from_wire(cls, data: bytes) -> "Mesh":
        if len(data) % TRIANGLE_WIRE_BYTES:
            raise ValueError("wire data is not a whole number of triangles")
        tris = np.frombuffer(data, dtype=VERTEX_DTYPE).reshape(-1, 3)
        return cls(tris.copy())

    def subset(self, indices: np.ndarray) -> "Mesh":
        return Mesh(self.tris[indices])

    def __eq__(self, other):
        return isinstance(other, Mesh) and self.to_wire() == other.to_wire()

    def __repr__(self):
        return f"Mesh({self.n_triangles} triangles)"


@dataclass
class ScenePartition:
    """One app node's share of the global scene."""

    rank: int
    mesh: Mesh
    cacheable: bool = True

    def __post_init__(self):
        if self.rank < 0:
            raise ValueError("rank must be non-negative")


@dataclass
class VolumeGrid:
    """Dense scalar grid, uint8 intensities, x-fastest memory order."""

    dims: tuple[int, int, int]
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        dx, dy, dz = self.dims
        if min(self.dims) <= 0:
            raise ValueError("volume dims must be positive")
        self.data = np.ascontiguousarray(self.data, dtype=np.uint8).reshape(-1)
        if len(self.data) != dx * dy * dz:
            raise ValueError("volume data length must equal dx*dy*dz")


def wire_size(mesh: Mesh) -> int:
    """Bytes this mesh occupies as DRAW_TRIANGLES geometry payload."""
    return mesh.n_triangles * TRIANGLE_WIRE_BYTES


def _sphere_point(theta, phi, radius, ring_scale=1.0):
    st = np.sin(phi) * ring_scale
    return np.array(
        [radius * st * np.cos(theta), radius * np.cos(phi), radius * st * np.sin(theta)]
    )


def _color_from_dir(v) -> np.ndarray:
    n = v / max(np.linalg.norm(v), 1e-12)
    return np.clip(np.floor((n + 1.0) * 0.5 * 255.0 + 0.5), 0, 255).astype(np.uint8)


def gen_spiked_sphere(meridians: int, parallels: int, spikes: int, radius: float) -> Mesh:
    """UV sphere with tetrahedral surface spikes.

    Triangle count is exactly 2*meridians*(parallels-1) + 4*spikes: the two
    polar fans contribute one triangle per meridian each, every interior band
    two, and each spike is a small tetrahedron (base + 3 sides) sitting on a
    deterministic pseudo-random surface point.
    """
    if meridians < 3 or parallels < 3:
        raise ValueError("need meridians >= 3 and parallels >= 3")
    if spikes < 0:
        raise ValueError("spikes must be non-negative")
    if radius <= 0:
        raise ValueError("radius must be positive")

    # ring j at latitude angle pi*j/parallels, j = 0..parallels (poles included);
    # odd parallel counts have no equator ring, so interior rings are inflated
    # just enough that the mesh's box still encloses the nominal sphere
    ring_scale = 1.0 / np.sin(np.pi * (parallels // 2) / parallels)
    rings = []
    for j in range(parallels + 1):
        phi = np.pi * j / parallels
        ring = [
            _sphere_point(2 * np.pi * i / meridians, phi, radius, ring_scale)
            for i in range(meridians)
        ]
        rings.append(ring)

    tris = []

    def emit(a, b, c):
        row = np.zeros(3, dtype=VERTEX_DTYPE)
        for k, p in enumerate((a, b, c)):
            row[k]["pos"] = p.astype(np.float32)
            row[k]["rgb"] = _color_from_dir(p)
        tris.append(row)

    for i in range(meridians):
        i2 = (i + 1) % meridians
        emit(rings[0][0], rings[1][i], rings[1][i2])  # top fan
        for j in range(1, parallels - 1):
            emit(rings[j][i], rings[j + 1][i], rings[j + 1][i2])
            emit(rings[j][i], rings[j + 1][i2], rings[j][i2])
        emit(rings[parallels][0], rings[parallels - 1][i2], rings[parallels - 1][i])

    rng = np.random.default_rng(_SPIKE_SEED)
    for _ in range(spikes):
        theta = rng.uniform(0.0, 2 * np.pi)
        phi = np.arccos(rng.uniform(-1.0, 1.0))
        n = _sphere_point(theta, phi, 1.0)
        # tangent frame at the spike point
        up = np.array([0.0, 1.0, 0.0]) if abs(n[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
        t1 = np.cross(n, up)
        t1 /= np.linalg.norm(t1)
        t2 = np.cross(n, t1)
        base_r = 0.06 * radius
        base = [
            n * radius + base_r * (np.cos(a) * t1 + np.sin(a) * t2)
            for a in (0.0, 2 * np.pi / 3, 4 * np.pi / 3)
        ]
        apex = n * (1.15 * radius)
        emit(base[0], base[1], base[2])
        emit(base[0], apex, base[1])
        emit(base[1], apex, base[2])
        emit(base[2], apex, base[0])

    return Mesh(np.stack(tris) if tris else np.zeros((0, 3), dtype=VERTEX_DTYPE))


def _morton3(centers: np.ndarray) -> np.ndarray:
    """Morton (z-order) code of points in [-1,1]^3, 10 bits per axis.

    x and y outrank depth at every level, so contiguous ranges of the sorted
    order stay compact on screen, not just in space.
    """
    q = np.clip(((centers + 1.0) * 0.5 * 1023.0).astype(np.uint64), 0, 1023)
    code = np.zeros(len(centers), dtype=np.uint64)
    for bit in range(10):
        for axis in range(3):
            code |= ((q[:, axis] >> np.uint64(bit)) & np.uint64(1)) << np.uint64(
                3 * bit + (2 - axis)
            )
    return code


def gen_synthetic_scene(target_wire_bytes: int, seed: int) -> Mesh:
    """Clustered random scene calibrated to a wire-byte budget.

    Emits floor(target/48) triangles grouped in runs of CLUSTER_TRIANGLES
    consecutive triangles, each run confined to a small blob inside the
    [-1,1]^3 box. Cluster runs are laid out in Morton order of their
    centers, so any contiguous index range is spatially compact: consecutive
    triangles are localized at every scale and screen-space bucketing has
    something to exploit.
    """
    n = target_wire_bytes // TRIANGLE_WIRE_BYTES
    if n < 1:
        raise ValueError(
            f"target of {target_wire_bytes} bytes is below one triangle ({TRIANGLE_WIRE_BYTES})"
        )
    rng = np.random.default_rng(seed)
    n_clusters = (n + CLUSTER_TRIANGLES - 1) // CLUSTER_TRIANGLES
    centers = rng.uniform(-0.85, 0.85, size=(n_clusters, 3))
    centers = centers[np.argsort(_morton3(centers), kind="stable")]
    tris = np.zeros((n, 3), dtype=VERTEX_DTYPE)
    cluster_of = np.arange(n) // CLUSTER_TRIANGLES
    anchors = centers[cluster_of] + rng.normal(0.0, 0.02, size=(n, 3))
    jitter = rng.normal(0.0, 0.012, size=(n, 3, 3))
    pos = (anchors[:, None, :] + jitter).astype(np.float32)
    np.clip(pos, -1.0, 1.0, out=pos)
    tris["pos"] = pos
    tris["rgb"] = rng.integers(0, 256, size=(n, 3, 3), dtype=np.uint8)
    return Mesh(tris)


def partition_scene(mesh: Mesh, n: int, strategy: str = "contiguous") -> list[ScenePartition]:
    """Split a mesh into n rank-owned partitions covering it exactly once.

    contiguous: consecutive index ranges (sizes differ by at most one).
    interleaved: round-robin by triangle index, rank r gets r, r+n, r+2n, ...
    """
    if n < 1:
        raise ValueError("need at least one partition")
    idx = np.arange(mesh.n_triangles)
    if strategy == "contiguous":
        chunks = np.array_split(idx, n)
    elif strategy == "interleaved":
        chunks = [idx[r::n] for r in range(n)]
    else:
        raise ValueError(f"unknown partition strategy {strategy!r}")
    return [ScenePartition(rank=r, mesh=mesh.subset(c)) for r, c in enumerate(chunks)]


def import_stl(data: bytes) -> Mesh:
    """Binary STL (80-byte header, u32 count, 50-byte records) to Mesh."""
    if len(data) < 84:
        raise ValueError("not a binary STL: shorter than header")
    count = int(np.frombuffer(data[80:84], dtype="<u4")[0])
    need = 84 + 50 * count
    if len(data) < need:
        raise ValueError(f"truncated STL: {count} triangles declared, data ends early")
    rec = np.dtype(
        [("normal", "<f4", (3,)), ("verts", "<f4", (3, 3)), ("attr", "<u2")]
    )
    body = np.frombuffer(data[84:need], dtype=rec)
    tris = np.zeros((count, 3), dtype=VERTEX_DTYPE)
    tris["pos"] = body["verts"]
    tris["rgb"] = 200
    return Mesh(tris)


def gen_random_volume(dims: tuple[int, int, int], seed: int) -> VolumeGrid:
    rng = np.random.default_rng(seed)
    dx, dy, dz = dims
    return VolumeGrid(dims=dims, data=rng.integers(0, 256, size=dx * dy * dz, dtype=np.uint8))


def load_raw_volume(data: bytes) -> VolumeGrid:
    """Raw volume: 12-byte header (3 x u32 LE dims), voxels x-fastest."""
    if len(data) < 12:
        raise ValueError("raw volume shorter than its 12-byte header")
    dx, dy, dz = (int(v) for v in np.frombuffer(data[:12], dtype="<u4"))
    vox = np.frombuffer(data[12:], dtype=np.uint8)
    if len(vox) != dx * dy * dz:
        raise ValueError("raw volume voxel count does not match header dims")
    return VolumeGrid(dims=(dx, dy, dz), data=vox.copy())


def dump_raw_volume(vol: VolumeGrid) -> bytes:
    head = np.array(vol.dims, dtype="<u4").tobytes()
    return head + vol.data.tobytes()
