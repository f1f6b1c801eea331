"""Pinhole camera math, depth bins and the two-frame homography warp.

Pixel coordinates follow the convention that integer ``(u, v)`` is the
*center* of column ``u`` / row ``v``.  Camera frame is x right, y down,
z forward.  All arithmetic is float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ORTHO_TOL = 1e-9


class GeometryError(ValueError):
    """Raised on a violated geometric precondition."""


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeometryError("principal point outside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def scaled(self, sx: float, sy: float | None = None) -> "Intrinsics":
        sy = sx if sy is None else sy
        return Intrinsics(
            self.fx * sx,
            self.fy * sy,
            self.cx * sx,
            self.cy * sy,
            int(round(self.width * sx)),
            int(round(self.height * sy)),
        )


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """``x_out = rotation @ x_in + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if np.abs(r.T @ r - np.eye(3)).max() > ORTHO_TOL:
            raise GeometryError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ORTHO_TOL:
            raise GeometryError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_translation(cls, t) -> "RigidTransform":
        return cls(np.eye(3), np.asarray(t, dtype=np.float64))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform ``(..., 3)`` points."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first."""
        r = self.rotation @ other.rotation
        # re-orthonormalize so long chains stay within the invariant tolerance
        u, _, vt = np.linalg.svd(r)
        r = u @ vt
        return RigidTransform(r, self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)


def rotation_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class DepthBins:
    d_min: float
    d_max: float
    count: int

    def __post_init__(self):
        if not (0 < self.d_min < self.d_max):
            raise GeometryError(f"invalid depth range [{self.d_min}, {self.d_max}]")
        if self.count < 1:
            raise GeometryError("bin count must be >= 1")

    @property
    def width(self) -> float:
        return (self.d_max - self.d_min) / self.count

    @property
    def centers(self) -> np.ndarray:
        k = np.arange(self.count, dtype=np.float64)
        return self.d_min + (k + 0.5) * (self.d_max - self.d_min) / self.count

    def __str__(self):
        return f"{self.d_min:g}:{self.d_max:g}:{self.count}"

    @classmethod
    def parse(cls, text: str) -> "DepthBins":
        """Parse ``"d_min:d_max:count"``."""
        try:
            lo, hi, n = text.split(":")
            return make_bins(float(lo), float(hi), int(n))
        except ValueError as exc:
            raise GeometryError(f"bad bins spec {text!r}: expected d_min:d_max:count") from exc


def make_bins(d_min: float, d_max: float, count: int) -> DepthBins:
    return DepthBins(float(d_min), float(d_max), int(count))


def bin_index(depth, bins: DepthBins):
    """Bin containing ``depth``; ``-1`` marks out-of-range (outside ``[d_min, d_max)``).

    Accepts scalars or arrays; a scalar in returns a Python int (or ``None``
    when out of range).
    """
    d = np.asarray(depth, dtype=np.float64)
    idx = np.floor((d - bins.d_min) / bins.width)
    idx = np.clip(np.nan_to_num(idx, nan=-1, posinf=-1, neginf=-1), -1, bins.count).astype(np.int64)
    # the floor can round across an edge for values within an ulp of it
    idx = np.minimum(idx, bins.count - 1)
    ok = (d >= bins.d_min) & (d < bins.d_max)
    idx = np.where(ok, idx, -1)
    if idx.ndim == 0:
        i = int(idx)
        return None if i < 0 else i
    return idx


def unproject(uv, depth, k: Intrinsics) -> np.ndarray:
    """Lift pixel(s) ``(..., 2)`` at z-depth ``depth`` into camera-frame points."""
    uv = np.asarray(uv, dtype=np.float64)
    d = np.asarray(depth, dtype=np.float64)
    if np.any(~(d > 0)):
        raise GeometryError("depth must be positive")
    x = (uv[..., 0] - k.cx) / k.fx * d
    y = (uv[..., 1] - k.cy) / k.fy * d
    return np.stack(np.broadcast_arrays(x, y, d), axis=-1)


def project(points, k: Intrinsics):
    """Project camera-frame point(s); returns ``(uv, depth)``."""
    p = np.asarray(points, dtype=np.float64)
    z = p[..., 2]
    if np.any(~(z > 0)):
        raise GeometryError("point behind camera")
    u = k.fx * p[..., 0] / z + k.cx
    v = k.fy * p[..., 1] / z + k.cy
    return np.stack([u, v], axis=-1), z


def warp_points(uv, depth, k: Intrinsics, m: RigidTransform):
    """Vectorized warp without validity checks.

    Returns ``(u, v, z)`` arrays of the transformed projection.  The operation
    order here is mirrored exactly by the compiled kernel so that the two
    paths agree bit for bit.
    """
    uv = np.asarray(uv, dtype=np.float64)
    d = np.asarray(depth, dtype=np.float64)
    u = uv[..., 0]
    v = uv[..., 1]
    x = (u - k.cx) / k.fx * d
    y = (v - k.cy) / k.fy * d
    r, t = m.rotation, m.translation
    x2 = r[0, 0] * x + r[0, 1] * y + r[0, 2] * d + t[0]
    y2 = r[1, 0] * x + r[1, 1] * y + r[1, 2] * d + t[1]
    z2 = r[2, 0] * x + r[2, 1] * y + r[2, 2] * d + t[2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u2 = k.fx * x2 / z2 + k.cx
        v2 = k.fy * y2 / z2 + k.cy
    return u2, v2, z2


def homo_warp(uv, d_hyp, k: Intrinsics, m: RigidTransform):
    """Warp pixel ``uv`` at hypothesised depth from frame T into frame T-1.

    Returns the warped ``(u, v)`` tuple, or ``None`` if the point lands behind
    the camera or outside ``[0, width) x [0, height)``.
    """
    if not d_hyp > 0:
        raise GeometryError("hypothesis depth must be positive")
    u2, v2, z2 = warp_points(uv, d_hyp, k, m)
    u2, v2, z2 = float(u2), float(v2), float(z2)
    if not z2 > 0:
        return None
    if not (0 <= u2 < k.width and 0 <= v2 < k.height):
        return None
    return (u2, v2)


def pixel_grid(k: Intrinsics) -> np.ndarray:
    """All integer pixel centers as an ``(H*W, 2)`` array in row-major order."""
    vv, uu = np.mgrid[0 : k.height, 0 : k.width]
    return np.stack([uu.ravel(), vv.ravel()], axis=-1).astype(np.float64)
