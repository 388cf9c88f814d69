"""Rasterizing interpreter: MiniQuery Program -> voxel Solid."""

from __future__ import annotations

import numpy as np

from ..geometry import Solid
from .parser import Circle, Feature, Mode, Move, Plane, Program, Rect

WORLD_LO = -8.0
WORLD_HI = 8.0

# Sketch (u, v) axes and extrusion axis w, as world axis indices.
_PLANE_AXES = {
    Plane.XY: (0, 1, 2),
    Plane.XZ: (0, 2, 1),
    Plane.YZ: (1, 2, 0),
}


class ExecutionError(Exception):
    pass


class EmptyResult(ExecutionError):
    pass


class OutOfWorld(ExecutionError):
    pass


def _placed(feat: Feature) -> list[tuple[float, float, Rect | Circle]]:
    """Closed primitives with their pen position after accumulated MOVEs."""
    pen_u = pen_v = 0.0
    out = []
    for prim in feat.primitives:
        if isinstance(prim, Move):
            pen_u += prim.dx
            pen_v += prim.dy
        else:
            out.append((pen_u, pen_v, prim))
    return out


def feature_bounds(feat: Feature) -> tuple[np.ndarray, np.ndarray]:
    u_lo = v_lo = np.inf
    u_hi = v_hi = -np.inf
    for pu, pv, prim in _placed(feat):
        if isinstance(prim, Rect):
            hu, hv = prim.width / 2, prim.height / 2
        else:
            hu = hv = prim.radius
        u_lo, u_hi = min(u_lo, pu - hu), max(u_hi, pu + hu)
        v_lo, v_hi = min(v_lo, pv - hv), max(v_hi, pv + hv)
    iu, iv, iw = _PLANE_AXES[feat.plane]
    lo, hi = np.empty(3), np.empty(3)
    lo[iu], hi[iu] = u_lo, u_hi
    lo[iv], hi[iv] = v_lo, v_hi
    lo[iw], hi[iw] = 0.0, feat.depth
    return lo, hi


def _feature_mask(feat: Feature, centers: list[np.ndarray]) -> np.ndarray:
    iu, iv, iw = _PLANE_AXES[feat.plane]

    def along(axis: int) -> np.ndarray:
        shape = [1, 1, 1]
        shape[axis] = -1
        return centers[axis].reshape(shape)

    u, v, w = along(iu), along(iv), along(iw)
    sketch = np.zeros(np.broadcast_shapes(u.shape, v.shape), dtype=bool)
    for pu, pv, prim in _placed(feat):
        if isinstance(prim, Rect):
            sketch |= (np.abs(u - pu) <= prim.width / 2) & (np.abs(v - pv) <= prim.height / 2)
        else:
            sketch |= (u - pu) ** 2 + (v - pv) ** 2 <= prim.radius ** 2
    return sketch & (w >= 0.0) & (w <= feat.depth)


def execute(program: Program, resolution: int = 64) -> Solid:
    """Rasterize features on a grid spanning the bbox of the UNION features.

    Features fold left to right: UNION ors the feature in, CUT removes it.
    """
    if resolution < 1:
        raise ValueError("resolution must be positive")
    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    for feat in program.features:
        flo, fhi = feature_bounds(feat)
        if np.any(flo < WORLD_LO) or np.any(fhi > WORLD_HI):
            raise OutOfWorld(f"feature on {feat.plane.value} leaves the [-8, 8]^3 world box")
        if feat.mode is Mode.UNION:
            lo, hi = np.minimum(lo, flo), np.maximum(hi, fhi)
    grid = Solid(np.zeros((resolution,) * 3, dtype=bool), lo, hi)
    centers = grid.centers()
    occ = np.zeros((resolution,) * 3, dtype=bool)
    for feat in program.features:
        mask = _feature_mask(feat, centers)
        if feat.mode is Mode.UNION:
            occ |= mask
        else:
            occ &= ~mask
    if not occ.any():
        raise EmptyResult("program produced an empty solid")
    return Solid(occ, lo, hi)
