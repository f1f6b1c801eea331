"""Mono/stereo depth fusion and lift-splat into a bird's-eye-view grid.

The BEV grid is centered on the ego at frame T; axis 0 is ego x (forward),
axis 1 is ego y (left).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .geometry import DepthBins, Intrinsics, unproject

FUSION_MODES = ("prob", "logit")
SPLAT_MODES = ("nearest", "bilinear")
LOG_FLOOR = 1e-12


class BevError(ValueError):
    pass


@dataclass
class FusedDepth:
    probs: np.ndarray  # (B, M), columns sum to 1

    @property
    def shape(self):
        return self.probs.shape


def fuse(mono_probs, stereo_probs, stereo_columns, mode: str = "prob") -> FusedDepth:
    """Combine mono ``(B, M)`` with stereo ``(B, N)`` placed at ``stereo_columns``.

    ``prob`` sums the two distributions and renormalizes.  ``logit`` adds log
    probabilities (with a small floor so disjoint supports stay defined).
    Columns without stereo pass the mono distribution through unchanged.
    """
    if mode not in FUSION_MODES:
        raise BevError(f"unknown fusion mode {mode!r}")
    mono = np.asarray(mono_probs, dtype=np.float64)
    stereo = np.asarray(stereo_probs, dtype=np.float64)
    cols = np.asarray(stereo_columns, dtype=np.int64).ravel()
    if mono.ndim != 2 or stereo.ndim != 2:
        raise BevError("distributions must be (bins, pixels) matrices")
    if stereo.shape[0] != mono.shape[0] or stereo.shape[1] != cols.size:
        raise BevError(
            f"stereo shape {stereo.shape} does not match {mono.shape[0]} bins x {cols.size} pixels"
        )
    if cols.size and (cols.min() < 0 or cols.max() >= mono.shape[1]):
        raise BevError("stereo column index out of range")
    out = mono.copy()
    if cols.size:
        m = mono[:, cols]
        if mode == "prob":
            s = m + stereo
            out[:, cols] = s / s.sum(axis=0, keepdims=True)
        else:
            z = np.log(np.maximum(m, LOG_FLOOR)) + np.log(np.maximum(stereo, LOG_FLOOR))
            z -= z.max(axis=0, keepdims=True)
            e = np.exp(z)
            out[:, cols] = e / e.sum(axis=0, keepdims=True)
    return FusedDepth(out)


@dataclass
class BevGrid:
    extent: float
    cell: float
    features: np.ndarray  # (nx, ny, C)
    weight: np.ndarray  # (nx, ny)
    dropped: float = 0.0

    @property
    def size(self) -> int:
        return self.weight.shape[0]

    @property
    def total(self) -> float:
        return float(self.weight.sum())

    def cell_of(self, x, y):
        """Cell indices of ego-frame ``(x, y)``; ``-1`` outside the grid."""
        n = self.size
        ix = np.floor((np.asarray(x) + self.extent / 2) / self.cell).astype(np.int64)
        iy = np.floor((np.asarray(y) + self.extent / 2) / self.cell).astype(np.int64)
        bad = (ix < 0) | (ix >= n) | (iy < 0) | (iy >= n)
        return np.where(bad, -1, ix), np.where(bad, -1, iy)

    def cell_center(self, ix, iy):
        return (
            (np.asarray(ix) + 0.5) * self.cell - self.extent / 2,
            (np.asarray(iy) + 0.5) * self.cell - self.extent / 2,
        )

    def argmax(self, region: np.ndarray | None = None) -> tuple:
        w = self.weight if region is None else np.where(region, self.weight, -np.inf)
        ix, iy = np.unravel_index(int(np.argmax(w)), w.shape)
        return int(ix), int(iy)

    def __add__(self, other: "BevGrid") -> "BevGrid":
        if (self.extent, self.cell) != (other.extent, other.cell):
            raise BevError("cannot merge grids with different geometry")
        return BevGrid(
            self.extent,
            self.cell,
            self.features + other.features,
            self.weight + other.weight,
            self.dropped + other.dropped,
        )


def grid_size(extent: float, cell: float) -> int:
    n = extent / cell
    if not (extent > 0 and cell > 0) or abs(n - round(n)) > 1e-9 * n:
        raise BevError(f"extent {extent} is not a whole number of {cell} m cells")
    return int(round(n))


def empty_grid(extent: float, cell: float, channels: int) -> BevGrid:
    n = grid_size(extent, cell)
    return BevGrid(extent, cell, np.zeros((n, n, channels)), np.zeros((n, n)))


def frustum_points(pixels, bins: DepthBins, k: Intrinsics, cam_to_ego) -> np.ndarray:
    """Ego-frame points ``(P, B, 3)`` of each pixel at each bin center."""
    rays = unproject(np.asarray(pixels, dtype=np.float64), 1.0, k)
    pts = rays[:, None, :] * bins.centers[None, :, None]
    return cam_to_ego.apply(pts)


def lift_splat(probs, pixels, feats, rig, bins: DepthBins, extent: float = 102.4,
               cell: float = 0.8, mode: str = "nearest") -> BevGrid:
    """Splat ``feats[p]`` weighted by ``probs[:, p]`` at every bin-center depth.

    ``probs`` is ``(B, P)`` over the ``P`` pixels listed in ``pixels``.
    Mass landing outside the grid is dropped and tallied in ``dropped``.
    """
    if mode not in SPLAT_MODES:
        raise BevError(f"unknown splat mode {mode!r}")
    probs = np.asarray(probs, dtype=np.float64)
    feats = np.asarray(feats, dtype=np.float64)
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    p = pixels.shape[0]
    if probs.shape != (bins.count, p):
        raise BevError(f"probs shape {probs.shape} does not match ({bins.count}, {p})")
    if feats.ndim != 2 or feats.shape[0] != p:
        raise BevError("feats must be (pixels, channels)")
    grid = empty_grid(extent, cell, feats.shape[1])
    if p == 0:
        return grid
    n = grid.size
    pts = frustum_points(pixels, bins, rig.intrinsics, rig.pose_T.inverse())
    w = np.ascontiguousarray(probs.T)  # (P, B)
    if mode == "nearest":
        taps = [(np.floor((pts[..., 0] + extent / 2) / cell),
                 np.floor((pts[..., 1] + extent / 2) / cell), w)]
    else:
        gx = (pts[..., 0] + extent / 2) / cell - 0.5
        gy = (pts[..., 1] + extent / 2) / cell - 0.5
        x0, y0 = np.floor(gx), np.floor(gy)
        ax, ay = gx - x0, gy - y0
        taps = [
            (x0, y0, w * (1 - ax) * (1 - ay)),
            (x0 + 1, y0, w * ax * (1 - ay)),
            (x0, y0 + 1, w * (1 - ax) * ay),
            (x0 + 1, y0 + 1, w * ax * ay),
        ]
    for fx, fy, tw in taps:
        bad = (fx < 0) | (fx >= n) | (fy < 0) | (fy >= n)
        ix = np.where(bad, -1, fx).astype(np.int64)
        iy = np.where(bad, -1, fy).astype(np.int64)
        f, wt = kernels.splat(ix, iy, tw, feats, n, n)
        grid.features += f
        grid.weight += wt
        grid.dropped += float(tw[bad].sum())
    return grid


def footprint_cells(grid: BevGrid, footprint: np.ndarray) -> np.ndarray:
    """Boolean mask of cells whose square overlaps a convex ego-frame polygon."""
    n = grid.size
    cx, cy = grid.cell_center(*np.meshgrid(np.arange(n), np.arange(n), indexing="ij"))
    poly = np.asarray(footprint, dtype=np.float64)
    h = grid.cell / 2
    # separating axes: the grid axes, then every polygon edge normal
    hit = (cx + h >= poly[:, 0].min()) & (cx - h <= poly[:, 0].max())
    hit &= (cy + h >= poly[:, 1].min()) & (cy - h <= poly[:, 1].max())
    for a, b in zip(poly, np.roll(poly, -1, axis=0)):
        nx, ny = b[1] - a[1], a[0] - b[0]
        proj = poly @ np.array([nx, ny])
        c = cx * nx + cy * ny
        r = h * (abs(nx) + abs(ny))
        hit &= (c + r >= proj.min()) & (c - r <= proj.max())
    return hit
