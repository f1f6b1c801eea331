"""Pure-numpy reference kernels.

Each function here has a compiled twin in ``_kernels.pyx`` that performs the
same floating-point operations in the same order; ``tests/test_kernels.py``
checks that the two agree bit for bit.
"""

import numpy as np

BACKEND = "python"


def warp_sample(uv, depths, fx, fy, cx, cy, rot, trans, feat):
    """Warp ``(N, 2)`` pixels at ``(N, L)`` depths and bilinearly sample ``feat``.

    Returns ``(sampled (N, L, C), valid (N, L) bool, warped (N, L, 2))``.
    An entry is invalid when the warped point is behind the camera or any of
    its four bilinear neighbours falls outside the frame.
    """
    uv = np.ascontiguousarray(uv, dtype=np.float64)
    depths = np.ascontiguousarray(depths, dtype=np.float64)
    feat = np.ascontiguousarray(feat, dtype=np.float64)
    h, w, c = feat.shape
    n, l = depths.shape
    u = uv[:, 0:1]
    v = uv[:, 1:2]
    d = depths
    x = (u - cx) / fx * d
    y = (v - cy) / fy * d
    r, t = rot, trans
    x2 = r[0, 0] * x + r[0, 1] * y + r[0, 2] * d + t[0]
    y2 = r[1, 0] * x + r[1, 1] * y + r[1, 2] * d + t[1]
    z2 = r[2, 0] * x + r[2, 1] * y + r[2, 2] * d + t[2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u2 = fx * x2 / z2 + cx
        v2 = fy * y2 / z2 + cy
    warped = np.stack([u2, v2], axis=-1)
    valid = z2 > 0
    with np.errstate(invalid="ignore"):
        x0f = np.floor(u2)
        y0f = np.floor(v2)
        valid &= (x0f >= 0) & (x0f + 1 <= w - 1) & (y0f >= 0) & (y0f + 1 <= h - 1)
    sampled = np.zeros((n, l, c), dtype=np.float64)
    if not valid.any():
        return sampled, valid, warped
    ui, vi = u2[valid], v2[valid]
    x0 = np.floor(ui).astype(np.int64)
    y0 = np.floor(vi).astype(np.int64)
    ax = (ui - x0)[:, None]
    ay = (vi - y0)[:, None]
    f00 = feat[y0, x0]
    f10 = feat[y0, x0 + 1]
    f01 = feat[y0 + 1, x0]
    f11 = feat[y0 + 1, x0 + 1]
    w00 = (1.0 - ax) * (1.0 - ay)
    w10 = ax * (1.0 - ay)
    w01 = (1.0 - ax) * ay
    w11 = ax * ay
    sampled[valid] = w00 * f00 + w10 * f10 + w01 * f01 + w11 * f11
    return sampled, valid, warped


def ray_box_depth(rx, ry, origins, axes, half):
    """Nearest positive z-depth of rays ``(rx, ry, 1)`` against oriented boxes.

    ``origins[i]`` is the camera origin in box ``i``'s frame, ``axes[i]`` the
    box->camera rotation and ``half`` the half extents.  Returns
    ``(depth, owner)``; misses carry ``inf`` and ``-1``.  Ties keep the lower
    box index.
    """
    rx = np.ascontiguousarray(rx, dtype=np.float64)
    ry = np.ascontiguousarray(ry, dtype=np.float64)
    depth = np.full(rx.shape, np.inf)
    owner = np.full(rx.shape, -1, dtype=np.int64)
    for i in range(len(origins)):
        rot = axes[i]
        tnear = np.full(rx.shape, -np.inf)
        tfar = np.full(rx.shape, np.inf)
        miss = np.zeros(rx.shape, dtype=bool)
        for a in range(3):
            dcomp = rot[0, a] * rx + rot[1, a] * ry + rot[2, a]
            o = origins[i, a]
            hh = half[i, a]
            zero = dcomp == 0.0
            if abs(o) > hh:
                miss |= zero
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (-hh - o) / dcomp
                t2 = (hh - o) / dcomp
            tn = np.where(zero, -np.inf, np.minimum(t1, t2))
            tf = np.where(zero, np.inf, np.maximum(t1, t2))
            tnear = np.maximum(tnear, tn)
            tfar = np.minimum(tfar, tf)
        hit = ~miss & (tnear <= tfar) & (tnear > 0) & (tnear < depth)
        depth = np.where(hit, tnear, depth)
        owner = np.where(hit, i, owner)
    return depth, owner


def splat(ix, iy, probs, feats, nx, ny):
    """Accumulate ``probs[p, b]`` and ``probs[p, b] * feats[p]`` into cells.

    ``ix``/``iy`` are ``(P, B)`` integer cell indices; ``-1`` drops the entry.
    Accumulation is sequential in row-major ``(p, b)`` order.
    """
    ix = np.ascontiguousarray(ix, dtype=np.int64).ravel()
    iy = np.ascontiguousarray(iy, dtype=np.int64).ravel()
    probs = np.ascontiguousarray(probs, dtype=np.float64)
    feats = np.ascontiguousarray(feats, dtype=np.float64)
    p, b = probs.shape
    c = feats.shape[1]
    keep = (ix >= 0) & (iy >= 0)
    flat = (ix * ny + iy)[keep]
    pw = probs.ravel()[keep]
    weight = np.bincount(flat, weights=pw, minlength=nx * ny)
    grid = np.zeros((nx * ny, c))
    for ch in range(c):
        fw = (probs * feats[:, ch : ch + 1]).ravel()[keep]
        grid[:, ch] = np.bincount(flat, weights=fw, minlength=nx * ny)
    return grid.reshape(nx, ny, c), weight.reshape(nx, ny)
