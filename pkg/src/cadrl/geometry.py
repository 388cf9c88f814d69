"""Voxel solids: CSG booleans, resampling, IoU, surface sampling, Chamfer, OBJ export."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.spatial import cKDTree

IOU_RESOLUTION = 64


class GeometryError(Exception):
    pass


class GridMismatch(GeometryError):
    pass


class BothEmpty(GeometryError):
    pass


class EmptySolid(GeometryError):
    pass


class EmptyCloud(GeometryError):
    pass


class BoolOp(Enum):
    UNION = "UNION"
    CUT = "CUT"
    INTERSECT = "INTERSECT"


class Accel(Enum):
    BRUTE = "BRUTE"
    TREE = "TREE"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Solid:
    """Occupancy grid of ``resolution**3`` cells spanning the box ``[lo, hi]``."""

    occupancy: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        occ = np.asarray(self.occupancy, dtype=bool)
        if occ.ndim != 3 or len(set(occ.shape)) != 1 or occ.shape[0] < 1:
            raise ValueError(f"occupancy must be a cube grid, got shape {occ.shape}")
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != (3,) or hi.shape != (3,) or not np.all(lo < hi):
            raise ValueError("bbox needs lo < hi componentwise")
        object.__setattr__(self, "occupancy", _frozen(occ))
        object.__setattr__(self, "lo", _frozen(lo))
        object.__setattr__(self, "hi", _frozen(hi))

    @property
    def resolution(self) -> int:
        return self.occupancy.shape[0]

    @property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return self.lo, self.hi

    @property
    def pitch(self) -> np.ndarray:
        return (self.hi - self.lo) / self.resolution

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.pitch))

    @property
    def volume(self) -> float:
        return int(self.occupancy.sum()) * self.cell_volume

    def is_empty(self) -> bool:
        return not self.occupancy.any()

    def centers(self) -> list[np.ndarray]:
        """Per-axis cell-center coordinates."""
        r = self.resolution
        return [self.lo[a] + (np.arange(r) + 0.5) * self.pitch[a] for a in range(3)]


def box_solid(lo, hi, resolution: int) -> Solid:
    """Fully occupied grid whose bbox is exactly the box."""
    return Solid(np.ones((resolution,) * 3, dtype=bool), lo, hi)


def empty_like(s: Solid) -> Solid:
    return Solid(np.zeros_like(s.occupancy), s.lo, s.hi)


def boolean(a: Solid, b: Solid, op: BoolOp | str) -> Solid:
    op = BoolOp(op)
    if a.resolution != b.resolution or not (np.array_equal(a.lo, b.lo) and np.array_equal(a.hi, b.hi)):
        raise GridMismatch("boolean operands must share resolution and bbox; resample first")
    if op is BoolOp.UNION:
        occ = a.occupancy | b.occupancy
    elif op is BoolOp.CUT:
        occ = a.occupancy & ~b.occupancy
    else:
        occ = a.occupancy & b.occupancy
    return Solid(occ, a.lo, a.hi)


def resample_into(s: Solid, lo, hi, resolution: int) -> Solid:
    """Nearest-cell-center resampling onto a new grid.

    A target cell is occupied iff its center lies inside an occupied source
    cell; centers outside the source bbox are empty.
    """
    target = Solid(np.zeros((resolution,) * 3, dtype=bool), lo, hi)
    index, inside = [], []
    for axis, c in enumerate(target.centers()):
        idx = np.floor((c - s.lo[axis]) / s.pitch[axis]).astype(np.int64)
        ok = (idx >= 0) & (idx < s.resolution)
        index.append(np.clip(idx, 0, s.resolution - 1))
        inside.append(ok)
    occ = s.occupancy[np.ix_(*index)]
    occ &= inside[0][:, None, None] & inside[1][None, :, None] & inside[2][None, None, :]
    return Solid(occ, target.lo, target.hi)


def iou(gen: Solid, gt: Solid, resolution: int = IOU_RESOLUTION) -> float:
    """Volumetric IoU on a shared grid over the union of both bboxes."""
    if gen.is_empty() and gt.is_empty():
        raise BothEmpty("IoU of two empty solids is undefined")
    lo = np.minimum(gen.lo, gt.lo)
    hi = np.maximum(gen.hi, gt.hi)
    a = resample_into(gen, lo, hi, resolution).occupancy
    b = resample_into(gt, lo, hi, resolution).occupancy
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 0.0
    return int(np.count_nonzero(a & b)) / union


def surface_mask(s: Solid) -> np.ndarray:
    """Occupied cells with an empty 6-neighbour or touching the grid boundary."""
    padded = np.pad(s.occupancy, 1, constant_values=False)
    interior = padded[1:-1, 1:-1, 1:-1].copy()
    for axis in range(3):
        for step in (-1, 1):
            interior &= np.roll(padded, step, axis=axis)[1:-1, 1:-1, 1:-1]
    return s.occupancy & ~interior


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    seed: int | None = None

    def __len__(self) -> int:
        return len(self.points)


def surface_points(s: Solid, n: int, seed: int) -> PointCloud:
    """Seeded uniform sample of jittered surface-cell centers."""
    if n == 0:
        return PointCloud(np.zeros((0, 3)), seed)
    if s.is_empty():
        raise EmptySolid("cannot sample points from an empty solid")
    cells = np.argwhere(surface_mask(s))
    rng = np.random.default_rng(seed)
    pick = cells[rng.integers(0, len(cells), size=n)]
    jitter = rng.uniform(-0.5, 0.5, size=(n, 3))
    pts = s.lo + (pick + 0.5 + jitter) * s.pitch
    return PointCloud(pts, seed)


def _nn_brute(src: np.ndarray, dst: np.ndarray, chunk: int = 1024) -> np.ndarray:
    out = np.empty(len(src))
    for start in range(0, len(src), chunk):
        diff = src[start:start + chunk, None, :] - dst[None, :, :]
        out[start:start + chunk] = np.sqrt((diff * diff).sum(axis=-1)).min(axis=1)
    return out


def _nn_tree(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    dist, _ = cKDTree(dst).query(src, k=1)
    return dist


def chamfer(a: PointCloud | np.ndarray, b: PointCloud | np.ndarray, accel: Accel | str = Accel.TREE) -> float:
    """Symmetric Chamfer distance: mean of the two directed mean NN distances (unsquared)."""
    pa = np.asarray(a.points if isinstance(a, PointCloud) else a, dtype=float)
    pb = np.asarray(b.points if isinstance(b, PointCloud) else b, dtype=float)
    if len(pa) == 0 or len(pb) == 0:
        raise EmptyCloud("chamfer needs two non-empty clouds")
    nn = _nn_brute if Accel(accel) is Accel.BRUTE else _nn_tree
    return 0.5 * (float(nn(pa, pb).mean()) + float(nn(pb, pa).mean()))


# Unit-cube corner offsets and the outward-facing quad (counter-clockwise) for each face.
_FACES = {
    (-1, 0, 0): ((0, 0, 0), (0, 0, 1), (0, 1, 1), (0, 1, 0)),
    (1, 0, 0): ((1, 0, 0), (1, 1, 0), (1, 1, 1), (1, 0, 1)),
    (0, -1, 0): ((0, 0, 0), (1, 0, 0), (1, 0, 1), (0, 0, 1)),
    (0, 1, 0): ((0, 1, 0), (0, 1, 1), (1, 1, 1), (1, 1, 0)),
    (0, 0, -1): ((0, 0, 0), (0, 1, 0), (1, 1, 0), (1, 0, 0)),
    (0, 0, 1): ((0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)),
}


def exposed_faces(s: Solid) -> list[tuple[tuple[int, int, int], tuple[int, int, int]]]:
    """(cell index, outward normal) for every voxel face not shared with an occupied cell."""
    padded = np.pad(s.occupancy, 1, constant_values=False)
    faces = []
    for normal in _FACES:
        neighbour = np.roll(padded, shift=[-d for d in normal], axis=(0, 1, 2))[1:-1, 1:-1, 1:-1]
        for cell in np.argwhere(s.occupancy & ~neighbour):
            faces.append((tuple(int(c) for c in cell), normal))
    faces.sort()
    return faces


def export_mesh(s: Solid) -> str:
    """ASCII OBJ of the voxel surface, two triangles per exposed face.

    Vertices are lattice corners ordered lexicographically by index; faces
    are ordered by (cell, normal).
    """
    if s.is_empty():
        raise EmptySolid("cannot export an empty solid")
    quads = []
    for cell, normal in exposed_faces(s):
        quads.append([tuple(c + o for c, o in zip(cell, corner)) for corner in _FACES[normal]])
    corners = sorted({c for quad in quads for c in quad})
    vid = {c: i + 1 for i, c in enumerate(corners)}
    lines = []
    for c in corners:
        x, y, z = s.lo + np.asarray(c) * s.pitch
        lines.append(f"v {x:.6f} {y:.6f} {z:.6f}")
    for q in quads:
        a, b, c, d = (vid[v] for v in q)
        lines.append(f"f {a} {b} {c}")
        lines.append(f"f {a} {c} {d}")
    return "\n".join(lines) + "\n"


def parse_obj(text: str) -> tuple[np.ndarray, np.ndarray]:
    """Read back the ``v``/``f`` subset written by :func:`export_mesh`."""
    verts, faces = [], []
    for line in text.splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(p) for p in parts[1:4]])
        elif parts[0] == "f":
            faces.append([int(p) for p in parts[1:4]])
    return np.asarray(verts).reshape(-1, 3), np.asarray(faces, dtype=np.int64).reshape(-1, 3)
