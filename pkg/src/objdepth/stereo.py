"""Self-boosting sparse temporal stereo.

Foreground pixels of frame T are matched against frame T-1 over a handful of
depth hypotheses.  Pixels whose score distribution is already sharp
(``sigma < sigma_t``) settle; the rest are re-sampled more densely inside
``[mu - 3 sigma, mu + 3 sigma]`` in the next round.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .geometry import DepthBins, GeometryError, bin_index, pixel_grid

log = logging.getLogger(__name__)

DEFAULT_SCHEDULE = (12, 20)
DEFAULT_SIGMA_T = 1.0
DEFAULT_TEMPERATURE = 1.0


class StereoError(ValueError):
    pass


@dataclass
class HypothesisSet:
    depths: np.ndarray  # (N, L), strictly increasing per row
    iteration: int = 0

    @property
    def count(self) -> int:
        return self.depths.shape[1]


@dataclass
class SparseCostVolume:
    pixels: np.ndarray  # (N, 2)
    hypotheses: np.ndarray  # (N, L)
    ref: np.ndarray  # (N, C) frame-T features
    src: np.ndarray  # (N, L, C) sampled frame-(T-1) features, zero where invalid
    valid: np.ndarray  # (N, L)
    warped: np.ndarray  # (N, L, 2)

    @property
    def shape(self) -> tuple:
        return self.src.shape

    @property
    def allocated(self) -> int:
        return int(self.valid.size)

    @property
    def entries(self) -> int:
        return int(self.valid.sum())


@dataclass
class MatchStats:
    mu: np.ndarray
    sigma: np.ndarray
    scores: np.ndarray


@dataclass
class IterationCounter:
    iteration: int
    pixels: int
    hypotheses: int
    allocated: int
    entries: int
    settled: int
    dropped: int

    FIELDS = ("iteration", "pixels", "hypotheses", "allocated", "entries", "settled", "dropped",
              "settled_fraction")

    @property
    def settled_fraction(self) -> float:
        return self.settled / self.pixels if self.pixels else 0.0

    def as_row(self) -> dict:
        return {
            "iteration": self.iteration,
            "pixels": self.pixels,
            "hypotheses": self.hypotheses,
            "allocated": self.allocated,
            "entries": self.entries,
            "settled": self.settled,
            "dropped": self.dropped,
            "settled_fraction": f"{self.settled_fraction:.6f}",
        }


@dataclass
class SBLResult:
    pixels: np.ndarray  # (N, 2) input pixels
    has_stereo: np.ndarray  # (N,) False for pixels dropped in their first round
    distribution: np.ndarray  # (N, B) bin distribution, zero rows where no stereo
    expected: np.ndarray  # (N,) expectation over bin centers, nan where no stereo
    mu: np.ndarray
    sigma: np.ndarray
    last_iteration: np.ndarray  # (N,) round that defined each pixel's result, -1 if none
    counters: list = field(default_factory=list)


def propose_initial(n_pixels: int, bins: DepthBins, count: int) -> HypothesisSet:
    """``count`` midpoints of equal sub-ranges of ``[d_min, d_max]``, same for all pixels."""
    if count < 2:
        raise StereoError("need at least two initial hypotheses")
    h = uniform_hypotheses(np.full(n_pixels, bins.d_min), np.full(n_pixels, bins.d_max), count)
    return HypothesisSet(h, 0)


def uniform_hypotheses(lower, upper, count: int) -> np.ndarray:
    lower = np.asarray(lower, dtype=np.float64)[:, None]
    upper = np.asarray(upper, dtype=np.float64)[:, None]
    j = np.arange(count, dtype=np.float64)[None, :]
    return lower + (j + 0.5) * (upper - lower) / count


def build_cost_volume(pixels, hyps: HypothesisSet, feat_T, feat_Tm1, rig) -> SparseCostVolume:
    """Warp every (pixel, hypothesis) into T-1 and sample its feature there."""
    feat_T = np.asarray(feat_T, dtype=np.float64)
    feat_Tm1 = np.asarray(feat_Tm1, dtype=np.float64)
    if feat_T.shape[-1] != feat_Tm1.shape[-1]:
        raise StereoError(
            f"feature dimension mismatch: {feat_T.shape[-1]} vs {feat_Tm1.shape[-1]}"
        )
    pixels = np.asarray(pixels)
    k = rig.intrinsics
    m = rig.ego_motion
    src, valid, warped = kernels.warp_sample(
        pixels.astype(np.float64), hyps.depths, k.fx, k.fy, k.cx, k.cy,
        m.rotation, m.translation, feat_Tm1,
    )
    pi = pixels.astype(np.int64)
    ref = feat_T[pi[:, 1], pi[:, 0]]
    return SparseCostVolume(pixels, hyps.depths, ref, src, valid, warped)


def dense_cost_volume(hypotheses, feat_T, feat_Tm1, rig) -> SparseCostVolume:
    """Brute-force plane sweep over every pixel for a shared hypothesis list.

    Plain numpy, independent of the kernel backend; used as the oracle the
    sparse construction is checked against.
    """
    k = rig.intrinsics
    m = rig.ego_motion
    feat_Tm1 = np.asarray(feat_Tm1, dtype=np.float64)
    h, w, c = feat_Tm1.shape
    uv = pixel_grid(k)
    hyp = np.asarray(hypotheses, dtype=np.float64)
    src = np.zeros((len(uv), len(hyp), c))
    valid = np.zeros((len(uv), len(hyp)), dtype=bool)
    warped = np.zeros((len(uv), len(hyp), 2))
    r, t = m.rotation, m.translation
    u, v = uv[:, 0], uv[:, 1]
    for j, d in enumerate(hyp):
        x = (u - k.cx) / k.fx * d
        y = (v - k.cy) / k.fy * d
        x2 = r[0, 0] * x + r[0, 1] * y + r[0, 2] * d + t[0]
        y2 = r[1, 0] * x + r[1, 1] * y + r[1, 2] * d + t[1]
        z2 = r[2, 0] * x + r[2, 1] * y + r[2, 2] * d + t[2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u2 = k.fx * x2 / z2 + k.cx
            v2 = k.fy * y2 / z2 + k.cy
        warped[:, j, 0] = u2
        warped[:, j, 1] = v2
        with np.errstate(invalid="ignore"):
            x0, y0 = np.floor(u2), np.floor(v2)
            ok = (z2 > 0) & (x0 >= 0) & (x0 + 1 <= w - 1) & (y0 >= 0) & (y0 + 1 <= h - 1)
        xi, yi = x0[ok].astype(np.int64), y0[ok].astype(np.int64)
        ax = (u2[ok] - xi)[:, None]
        ay = (v2[ok] - yi)[:, None]
        valid[:, j] = ok
        src[ok, j] = (
            (1.0 - ax) * (1.0 - ay) * feat_Tm1[yi, xi]
            + ax * (1.0 - ay) * feat_Tm1[yi, xi + 1]
            + (1.0 - ax) * ay * feat_Tm1[yi + 1, xi]
            + ax * ay * feat_Tm1[yi + 1, xi + 1]
        )
    ref = np.asarray(feat_T, dtype=np.float64).reshape(-1, c)
    hyps = np.broadcast_to(hyp, (len(uv), len(hyp))).copy()
    return SparseCostVolume(uv.astype(np.int64), hyps, ref, src, valid, warped)


def match_scores(vol: SparseCostVolume, temperature: float = DEFAULT_TEMPERATURE):
    """Masked softmax of ``-||f_T - f_T-1||^2 / (temperature * C)`` over hypotheses.

    Returns ``(scores (N, L), ok (N,))``; rows without any valid entry are
    all-zero and flagged ``ok=False``.
    """
    c = vol.ref.shape[-1]
    diff = vol.ref[:, None, :] - vol.src
    sim = -np.einsum("nlc,nlc->nl", diff, diff) / (temperature * c)
    sim = np.where(vol.valid, sim, -np.inf)
    ok = vol.valid.any(axis=1)
    top = np.where(ok, sim.max(axis=1, initial=-np.inf), 0.0)
    e = np.exp(sim - top[:, None])
    e[~vol.valid] = 0.0
    z = e.sum(axis=1)
    scores = np.divide(e, z[:, None], out=np.zeros_like(e), where=ok[:, None])
    return scores, ok


def stats(scores, hypotheses) -> MatchStats:
    """Score-weighted mean and standard deviation along the hypothesis axis."""
    s = np.asarray(scores, dtype=np.float64)
    h = np.asarray(hypotheses, dtype=np.float64)
    mu = (h * s).sum(axis=-1)
    var = (((h - mu[..., None]) ** 2) * s).sum(axis=-1)
    return MatchStats(mu, np.sqrt(np.maximum(var, 0.0)), s)


def partition(sigma, sigma_t: float) -> np.ndarray:
    """Boolean mask of settled pixels (``sigma < sigma_t``)."""
    if not sigma_t > 0:
        raise StereoError("sigma_t must be positive")
    return np.asarray(sigma) < sigma_t


def refine_range(mu, sigma, bins: DepthBins):
    """Next-round sampling interval ``[mu - 3 sigma, mu + 3 sigma]`` clipped to the bins.

    A zero ``sigma`` widens to one bin width around ``mu``.  Returns
    ``(lower, upper, empty)`` where ``empty`` flags a degenerate interval.
    """
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    half = np.where(sigma > 0, 3.0 * sigma, 0.5 * bins.width)
    lower = np.maximum(mu - half, bins.d_min)
    upper = np.minimum(mu + half, bins.d_max)
    return lower, upper, ~(upper > lower)


def fill_bins(scores, hypotheses, bins: DepthBins) -> np.ndarray:
    """Resample hypothesis scores onto the bin centers and renormalize.

    The scores define a piecewise-linear density over the hypothesis
    positions, held constant out to the center of the end hypotheses' bins
    and zero beyond.  Rows whose hypotheses straddle no bin
    center fall back to a histogram of the scores over containing bins.
    """
    s = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    h = np.atleast_2d(np.asarray(hypotheses, dtype=np.float64))
    centers = bins.centers
    n, l = h.shape
    out = np.zeros((n, bins.count))
    if l >= 2:
        # j = index of the last hypothesis <= center, per row and center
        j = (h[:, :, None] <= centers[None, None, :]).sum(axis=1) - 1
        inside = (j >= 0) & (j < l - 1)
        jc = np.clip(j, 0, l - 2)
        h0 = np.take_along_axis(h, jc, axis=1)
        h1 = np.take_along_axis(h, jc + 1, axis=1)
        s0 = np.take_along_axis(s, jc, axis=1)
        s1 = np.take_along_axis(s, jc + 1, axis=1)
        frac = (centers[None, :] - h0) / (h1 - h0)
        interp = s0 + frac * (s1 - s0)
        # the end hypotheses also cover the centers of their own bins
        k = np.floor((centers - bins.d_min) / bins.width)[None, :]
        k_lo = np.floor((h[:, :1] - bins.d_min) / bins.width)
        k_hi = np.floor((h[:, -1:] - bins.d_min) / bins.width)
        below = (centers[None, :] < h[:, :1]) & (k == k_lo)
        above = (centers[None, :] >= h[:, -1:]) & (k == k_hi)
        out = np.where(inside, interp, np.where(below, s[:, :1], np.where(above, s[:, -1:], 0.0)))
    total = out.sum(axis=1)
    empty = ~(total > 0)
    if empty.any():
        for i in np.nonzero(empty)[0]:
            idx = bin_index(h[i], bins)
            keep = idx >= 0
            row = np.bincount(idx[keep], weights=s[i][keep], minlength=bins.count)
            if not row.sum() > 0:
                # every hypothesis outside the bins: nearest edge bin
                row = np.zeros(bins.count)
                row[0 if h[i].mean() < bins.d_min else bins.count - 1] = 1.0
            out[i] = row
        total = out.sum(axis=1)
    return out / total[:, None]


def run_sbl(pixels, feat_T, feat_Tm1, rig, bins: DepthBins, schedule=DEFAULT_SCHEDULE,
            sigma_t: float = DEFAULT_SIGMA_T, temperature: float = DEFAULT_TEMPERATURE) -> SBLResult:
    """Run the self-boosting rounds over ``pixels`` (``(N, 2)`` integer u, v)."""
    schedule = [int(x) for x in schedule]
    if not schedule:
        raise StereoError("schedule must be non-empty")
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise StereoError("schedule must be strictly increasing")
    pixels = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
    n = len(pixels)
    scores_out = [None] * n
    hyps_out = [None] * n
    mu_out = np.full(n, np.nan)
    sigma_out = np.full(n, np.nan)
    last = np.full(n, -1, dtype=np.int64)
    counters = []

    active = np.arange(n)
    hyps = propose_initial(n, bins, schedule[0]).depths
    for it, count in enumerate(schedule):
        if len(active) == 0:
            counters.append(IterationCounter(it, 0, count, 0, 0, 0, 0))
            continue
        hs = HypothesisSet(hyps, it)
        vol = build_cost_volume(pixels[active], hs, feat_T, feat_Tm1, rig)
        s, ok = match_scores(vol, temperature)
        ms = stats(s, hyps)
        dropped = int((~ok).sum())
        if dropped:
            log.debug("round %d: %d pixels without a valid warp", it, dropped)
        for local in np.nonzero(ok)[0]:
            g = active[local]
            scores_out[g] = s[local]
            hyps_out[g] = hyps[local]
        mu_out[active[ok]] = ms.mu[ok]
        sigma_out[active[ok]] = ms.sigma[ok]
        last[active[ok]] = it

        settled = partition(ms.sigma, sigma_t) & ok
        lower, upper, empty = refine_range(ms.mu, ms.sigma, bins)
        boosted = ok & ~settled & ~empty
        counters.append(
            IterationCounter(it, len(active), count, vol.allocated, vol.entries,
                             int(settled.sum()), dropped)
        )
        if it + 1 < len(schedule):
            nxt = schedule[it + 1]
            hyps = uniform_hypotheses(lower[boosted], upper[boosted], nxt)
            active = active[boosted]

    has = last >= 0
    dist = np.zeros((n, bins.count))
    expected = np.full(n, np.nan)
    if has.any():
        # group by hypothesis count so each fill is a dense batch
        idx = np.nonzero(has)[0]
        by_len: dict = {}
        for g in idx:
            by_len.setdefault(len(hyps_out[g]), []).append(g)
        for _, members in sorted(by_len.items()):
            members = np.asarray(members)
            dist[members] = fill_bins(
                np.stack([scores_out[g] for g in members]),
                np.stack([hyps_out[g] for g in members]),
                bins,
            )
        expected[has] = dist[has] @ bins.centers
    return SBLResult(pixels, has, dist, expected, mu_out, sigma_out, last, counters)
