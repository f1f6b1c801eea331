"""Monocular stage: semantic groups, the scale-to-depth prior, depth-bin
expectation, ground-truth voting and the instance-level depth losses.

Distributions are stored as ``(B, M)`` logit matrices (bins x pixels).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import CATEGORIES, DEFAULT_SIZES
from .geometry import DepthBins, bin_index


class MonoError(ValueError):
    pass


class NoValidDepth(MonoError):
    """No ground-truth sample falls inside the bin range."""


GROUP_MEMBERS = (
    ("car",),
    ("truck", "construction_vehicle"),
    ("bus", "trailer"),
    ("barrier",),
    ("motorcycle", "bicycle"),
    ("pedestrian", "traffic_cone"),
)
NUM_GROUPS = len(GROUP_MEMBERS)
DEFAULT_SPREADS = (1.0, 1.0, 1.0, 0.5, 0.75, 0.5)

_GROUP_OF = {c: g for g, members in enumerate(GROUP_MEMBERS) for c in members}
assert sorted(_GROUP_OF) == sorted(CATEGORIES)


@dataclass(frozen=True)
class SemanticGroup:
    gid: int
    members: tuple

    def height(self, sizes: dict | None = None) -> float:
        """Representative physical height: mean over member categories."""
        table = {**DEFAULT_SIZES, **(sizes or {})}
        return float(np.mean([table[c][2] for c in self.members]))


def groups() -> list:
    return [SemanticGroup(g, m) for g, m in enumerate(GROUP_MEMBERS)]


def group_of(category: str) -> SemanticGroup:
    # accept the spaced spelling too ("traffic cone")
    key = category.replace(" ", "_")
    if key not in _GROUP_OF:
        raise MonoError(f"unknown category {category!r}")
    g = _GROUP_OF[key]
    return SemanticGroup(g, GROUP_MEMBERS[g])


def prior_depth(height_px: float, fy: float, height_m: float, bins: DepthBins) -> float:
    """Similar-triangles depth of an object ``height_m`` tall spanning ``height_px`` rows."""
    if not height_px > 0:
        raise MonoError(f"degenerate box height {height_px}")
    d = fy * height_m / height_px
    return float(min(max(d, bins.d_min), bins.d_max))


def instance_prior(mask, fy: float, bins: DepthBins, sizes: dict | None = None) -> float:
    return prior_depth(mask.height_px, fy, group_of(mask.category).height(sizes), bins)


@dataclass
class DepthDistribution:
    logits: np.ndarray  # (B, M)

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.logits.ndim != 2:
            raise MonoError("logits must be a (bins, pixels) matrix")

    @property
    def shape(self):
        return self.logits.shape

    @property
    def probs(self) -> np.ndarray:
        return softmax(self.logits)


def softmax(logits: np.ndarray, axis: int = 0) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise MonoError("non-finite logits")
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def mono_logits(n_pixels: int, prior: float, bins: DepthBins, spread: float) -> DepthDistribution:
    """Gaussian bump in depth centered on ``prior``, shared by all pixels."""
    if not spread > 0:
        raise MonoError("spread must be positive")
    col = -0.5 * ((bins.centers - prior) / spread) ** 2
    return DepthDistribution(np.repeat(col[:, None], n_pixels, axis=1))


def expected_depth(dist, bins_or_centers) -> np.ndarray:
    """Probability-weighted mean of the bin centers, per pixel."""
    logits = dist.logits if isinstance(dist, DepthDistribution) else np.asarray(dist)
    centers = (
        bins_or_centers.centers
        if isinstance(bins_or_centers, DepthBins)
        else np.asarray(bins_or_centers, dtype=np.float64)
    )
    p = softmax(logits)
    return np.clip(centers @ p, centers[0], centers[-1])


def expected_from_probs(probs: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return np.asarray(centers) @ np.asarray(probs)


def vote_gt_depth(samples, bins: DepthBins) -> float:
    """Mean of the samples in the most-voted bin; ties go to the nearer bin."""
    d = np.asarray(samples, dtype=np.float64).ravel()
    idx = bin_index(d, bins) if d.size else np.empty(0, dtype=np.int64)
    keep = idx >= 0
    if not keep.any():
        raise NoValidDepth("all ground-truth samples fall outside the bin range")
    votes = np.bincount(idx[keep], minlength=bins.count)
    best = int(np.argmax(votes))  # first maximum, i.e. the lowest depth
    return float(d[keep][idx[keep] == best].mean())


@dataclass
class SupervisedInstance:
    """Predicted depths and gt samples at the same ``M'`` pixels."""

    instance_id: int
    group: int
    pred: np.ndarray  # D-hat at the sampled pixels
    gt: np.ndarray  # per-pixel gt depths
    voted: float

    def __post_init__(self):
        self.pred = np.asarray(self.pred, dtype=np.float64)
        self.gt = np.asarray(self.gt, dtype=np.float64)
        if self.pred.shape != self.gt.shape or self.pred.ndim != 1:
            raise MonoError("pred and gt must be aligned 1-D arrays")
        if self.gt.size < 1:
            raise MonoError("instance has no gt samples")


def _check(instances):
    if not instances:
        raise MonoError("loss undefined for an empty instance list")


def abs_depth_loss(instances: list) -> tuple:
    """Instance-mean of per-pixel squared error against the voted depth."""
    _check(instances)
    n = len(instances)
    means = np.empty(n)
    grads = []
    for i, inst in enumerate(instances):
        r = inst.voted - inst.pred
        means[i] = np.mean(r * r)
        grads.append(2.0 / (n * inst.pred.size) * (inst.pred - inst.voted))
    return float(np.sum(means) / n), grads


def rel_depth_loss(instances: list) -> tuple:
    """Squared difference of prediction and gt offsets from the voted depth.

    Evaluated as written, although the voted depth cancels algebraically.
    """
    _check(instances)
    n = len(instances)
    means = np.empty(n)
    grads = []
    for i, inst in enumerate(instances):
        r = (inst.voted - inst.pred) - (inst.voted - inst.gt)
        means[i] = np.mean(r * r)
        grads.append(-2.0 / (n * inst.pred.size) * r)
    return float(np.sum(means) / n), grads


def ce_depth_loss(logits, gt_depths, bins: DepthBins) -> tuple:
    """Mean pixel cross-entropy; returns ``(loss, dL/dlogits)``.

    Pixels whose gt lies outside the bins are skipped (zero gradient).
    """
    z = np.asarray(logits.logits if isinstance(logits, DepthDistribution) else logits)
    idx = bin_index(np.asarray(gt_depths, dtype=np.float64), bins)
    idx = np.atleast_1d(idx)
    if z.shape != (bins.count, idx.size):
        raise MonoError(f"logits shape {z.shape} does not match ({bins.count}, {idx.size})")
    ok = np.flatnonzero(idx >= 0)
    if ok.size == 0:
        raise NoValidDepth("no supervised pixel maps to a valid bin")
    p = softmax(z[:, ok])
    zs = z[:, ok] - z[:, ok].max(axis=0)
    logp = zs[idx[ok], np.arange(ok.size)] - np.log(np.exp(zs).sum(axis=0))
    loss = -float(np.sum(logp) / ok.size)
    grad = np.zeros_like(z, dtype=np.float64)
    p[idx[ok], np.arange(ok.size)] -= 1.0
    grad[:, ok] = p / ok.size
    return loss, grad


@dataclass(frozen=True)
class LossWeights:
    det: float = 1.0
    ce: float = 3.0
    abs: float = 0.5
    rel: float = 2.0

    def __post_init__(self):
        if min(self.det, self.ce, self.abs, self.rel) < 0:
            raise MonoError("loss weights must be non-negative")

    @classmethod
    def from_list(cls, w) -> "LossWeights":
        return cls(*[float(x) for x in w])


def total_loss(l_det, l_ce, l_abs, l_rel, w: LossWeights = LossWeights()) -> float:
    parts = (l_det, l_ce, l_abs, l_rel)
    if not all(np.isfinite(parts)):
        raise MonoError("loss components must be finite")
    return float(w.det * l_det + w.ce * l_ce + w.abs * l_abs + w.rel * l_rel)


def loss_rows(instances: list, ce_per_instance: dict | None = None) -> list:
    """Per-instance loss breakdown records."""
    rows = []
    for inst in instances:
        r_abs = inst.voted - inst.pred
        r_rel = (inst.voted - inst.pred) - (inst.voted - inst.gt)
        rows.append(
            {
                "instance": inst.instance_id,
                "group": inst.group,
                "d_gt": inst.voted,
                "samples": inst.gt.size,
                "abs": float(np.mean(r_abs * r_abs)),
                "rel": float(np.mean(r_rel * r_rel)),
                "ce": (ce_per_instance or {}).get(inst.instance_id, float("nan")),
            }
        )
    return rows
