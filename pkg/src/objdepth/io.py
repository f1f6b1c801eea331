"""File output helpers: binary PGM images and CSV records."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

DEPTH_SCALE = 256.0


def write_pgm(path, image: np.ndarray, maxval: int) -> None:
    """Binary (P5) graymap; 16-bit samples are big-endian."""
    img = np.asarray(image)
    h, w = img.shape
    dtype = ">u2" if maxval > 255 else "u1"
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode())
        fh.write(np.clip(img, 0, maxval).astype(dtype).tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end : end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    pos += 1
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary graymap")
    w, h, maxval = (int(x) for x in fields[1:])
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).reshape(h, w).astype(np.int64)


def write_depth_pgm(path, depth: np.ndarray) -> None:
    """Depth in meters scaled by 256; background (inf) and overflow write 0."""
    d = np.asarray(depth, dtype=np.float64)
    q = np.where(np.isfinite(d), np.round(d * DEPTH_SCALE), 0)
    q = np.where(q > 65535, 0, q)
    write_pgm(path, q, 65535)


def write_mask_pgm(path, owner: np.ndarray) -> None:
    """Indexed mask: 0 is background, instance ``i`` is ``i + 1``."""
    idx = np.asarray(owner) + 1
    write_pgm(path, idx, 65535 if idx.max(initial=0) > 255 else 255)


def write_weight_pgm(path, weight: np.ndarray) -> None:
    """BEV weights normalized to the full 16-bit range."""
    w = np.asarray(weight, dtype=np.float64)
    top = w.max(initial=0.0)
    q = np.zeros_like(w) if top <= 0 else np.round(w / top * 65535)
    write_pgm(path, q, 65535)


def write_csv(path, rows: list, fields: list | None = None) -> None:
    fields = fields or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        wr.writeheader()
        for row in rows:
            wr.writerow({k: _fmt(row.get(k)) for k in fields})


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v
