import math

import numpy as np
import pytest

from objdepth import scene as S
from objdepth import stereo as ST
from objdepth.config import ExperimentConfig
from objdepth.geometry import Intrinsics, RigidTransform, bin_index, make_bins, warp_points

BINS = make_bins(2.0, 58.0, 112)


def _scene_inputs(cfg, seed, ci=0, noise=0.0):
    sc = S.generate_scene(cfg, seed)
    rig = sc.rigs[ci]
    rt, rm = S.render(sc, rig, S.FRAME_T), S.render(sc, rig, S.FRAME_TM1)
    ft = S.synth_features(sc, rig, S.FRAME_T, noise, rendered=rt)
    fm = S.synth_features(sc, rig, S.FRAME_TM1, noise, rendered=rm)
    vv, uu = np.nonzero(rt.foreground)
    return np.stack([uu, vv], -1), ft, fm, rig, rt


def test_propose_initial():
    h = ST.propose_initial(3, BINS, 12)
    assert h.depths.shape == (3, 12) and h.count == 12
    assert np.allclose(np.diff(h.depths[0]), 56 / 12)
    assert ST.propose_initial(1, BINS, 2).depths[0].tolist() == [16.0, 44.0]
    with pytest.raises(ST.StereoError):
        ST.propose_initial(1, BINS, 1)


def _rig(motion, k=None):
    k = k or Intrinsics(64.0, 64.0, 31.5, 31.5, 64, 64)
    return S.CameraRig("c", k, RigidTransform.identity(), motion)


def test_cost_volume_identity_motion():
    rng = np.random.default_rng(0)
    f = rng.normal(size=(64, 64, 8))
    rig = _rig(RigidTransform.identity())
    pix = np.array([[3, 4], [40, 22]])
    vol = ST.build_cost_volume(pix, ST.propose_initial(2, BINS, 12), f, f, rig)
    assert vol.valid.all() and vol.entries == 24 and vol.allocated == 24
    for i, (u, v) in enumerate(pix):
        assert np.array_equal(vol.ref[i], f[v, u])
        # the warp recomputes u, v through a division, so equality is to round-off
        assert np.allclose(vol.src[i], np.broadcast_to(f[v, u], (12, 8)), atol=1e-9)


def test_cost_volume_behind_camera_invalid():
    f = np.ones((64, 64, 4))
    rig = _rig(RigidTransform.from_translation([0, 0, -10.0]))
    vol = ST.build_cost_volume(np.array([[31, 31]]), ST.propose_initial(1, BINS, 12), f, f, rig)
    h = vol.hypotheses[0]
    assert (vol.valid[0] == (h > 10.0)).all()
    assert (vol.src[0][~vol.valid[0]] == 0).all()
    s, ok = ST.match_scores(vol)
    assert ok[0] and (s[0][~vol.valid[0]] == 0).all() and s[0].sum() == pytest.approx(1.0)


def test_cost_volume_dimension_mismatch():
    rig = _rig(RigidTransform.identity())
    with pytest.raises(ST.StereoError):
        ST.build_cost_volume(np.array([[1, 1]]), ST.propose_initial(1, BINS, 2),
                             np.zeros((64, 64, 3)), np.zeros((64, 64, 4)), rig)


def test_match_scores_examples():
    n, l, c = 2, 5, 3
    vol = ST.SparseCostVolume(np.zeros((n, 2)), np.tile(np.arange(1.0, 6.0), (n, 1)),
                              np.zeros((n, c)), np.ones((n, l, c)), np.ones((n, l), bool),
                              np.zeros((n, l, 2)))
    s, ok = ST.match_scores(vol)
    assert ok.all() and np.allclose(s, 1 / l)
    vol.valid[1, 2] = False
    s, _ = ST.match_scores(vol)
    assert s[1, 2] == 0 and (s[1][vol.valid[1]] > 0).all() and s[1].sum() == pytest.approx(1.0)
    vol.valid[0] = False
    s, ok = ST.match_scores(vol)
    assert not ok[0] and (s[0] == 0).all()


def _visible_in_tm1(pix, truth, rig, r_m):
    """Pixels whose surface point is imaged (same depth) in frame T-1."""
    k = rig.intrinsics
    u2, v2, z2 = warp_points(pix.astype(float), truth, k, rig.ego_motion)
    ui, vi = np.round(u2).astype(int), np.round(v2).astype(int)
    inside = (ui >= 0) & (ui < k.width) & (vi >= 0) & (vi < k.height) & (z2 > 0)
    vis = np.zeros(len(pix), bool)
    vis[inside] = np.abs(r_m.depth[vi[inside], ui[inside]] - z2[inside]) < 1e-3
    return vis


def test_true_depth_hypothesis_scores_highest():
    cfg = ExperimentConfig()
    pix, ft, fm, rig, rt = _scene_inputs(cfg, 0, ci=1)
    sc = S.generate_scene(cfg, 0)
    rm = S.render(sc, sc.rigs[1], S.FRAME_TM1)
    truth = rt.depth[pix[:, 1], pix[:, 0]]
    hyp = ST.propose_initial(len(pix), BINS, 12).depths
    nearest = np.argmin(np.abs(hyp - truth[:, None]), axis=1)
    rows = np.arange(len(pix))
    hyp[rows, nearest] = truth
    hyp.sort(axis=1)
    j = np.argmin(np.abs(hyp - truth[:, None]), axis=1)
    vol = ST.build_cost_volume(pix, ST.HypothesisSet(hyp), ft, fm, rig)
    s, ok = ST.match_scores(vol)
    vis = _visible_in_tm1(pix, truth, rig, rm) & vol.valid[rows, j]
    assert vis.sum() > 500
    assert (s[rows, j][vis] >= s[vis].max(axis=1) - 1e-12).all()


def test_stats_examples():
    m = ST.stats([0, 1, 0], [4, 8, 12])
    assert m.mu == 8 and m.sigma == 0
    m = ST.stats([0.5, 0, 0.5], [4, 8, 12])
    assert abs(m.mu - 8) <= 1e-12 and abs(m.sigma - 4) <= 1e-12
    m = ST.stats([1 / 3] * 3, [4, 8, 12])
    assert abs(m.mu - 8) <= 1e-12 and abs(m.sigma - math.sqrt(32 / 3)) <= 1e-12


def test_partition():
    assert ST.partition(np.array([0.0, 5.0, 1.0, 0.999]), 1.0).tolist() == [True, False, False, True]
    with pytest.raises(ST.StereoError):
        ST.partition(np.array([0.0]), 0.0)


def test_refine_range_examples():
    lo, hi, e = ST.refine_range(np.array([10.0, 4.0, 10.0]), np.array([1.0, 1.0, 0.0]), BINS)
    assert lo.tolist() == [7.0, 2.0, 9.75] and hi.tolist() == [13.0, 7.0, 10.25]
    assert not e.any()
    lo, hi, e = ST.refine_range(np.array([70.0]), np.array([1.0]), BINS)
    assert e[0]


def test_fill_bins_examples():
    h = BINS.centers[[10, 20, 30]][None, :]
    out = ST.fill_bins(np.array([[0.2, 0.5, 0.3]]), h, BINS)
    assert out[0, [10, 20, 30]] / out[0, 20] == pytest.approx([0.4, 1.0, 0.6])
    assert out.sum() == pytest.approx(1.0, abs=1e-9)
    # one-hot on a hypothesis: peak in that hypothesis' bin
    h = ST.propose_initial(1, BINS, 12).depths
    for j in range(12):
        s = np.zeros((1, 12))
        s[0, j] = 1.0
        d = ST.fill_bins(s, h, BINS)[0]
        # on a bin edge the two adjacent centers tie
        assert d[bin_index(h[0, j], BINS)] >= d.max() - 1e-12
        assert abs(d.sum() - 1) <= 1e-9
    # uniform scores: near-uniform over the covered bins
    d = ST.fill_bins(np.full((1, 12), 1 / 12), h, BINS)[0]
    k = np.arange(BINS.count)
    covered = (k >= bin_index(h[0, 0], BINS)) & (k <= bin_index(h[0, -1], BINS))
    assert np.allclose(d[covered], 1 / covered.sum()) and d[~covered].sum() == 0


def test_fill_bins_narrow_fallback():
    h = np.array([[10.01, 10.1, 10.2]])
    d = ST.fill_bins(np.array([[0.2, 0.3, 0.5]]), h, BINS)
    assert d[0, bin_index(10.1, BINS)] == pytest.approx(1.0)


def test_run_sbl_monotone_and_normalized():
    cfg = ExperimentConfig()
    pix, ft, fm, rig, rt = _scene_inputs(cfg, 1)
    res = ST.run_sbl(pix, ft, fm, rig, BINS)
    c = res.counters
    assert [x.hypotheses for x in c] == [12, 20]
    assert c[1].pixels <= c[0].pixels
    assert c[1].pixels <= c[0].pixels - c[0].settled - c[0].dropped
    assert c[0].allocated == c[0].pixels * 12 and c[1].allocated == c[1].pixels * 20
    rows = res.distribution[res.has_stereo].sum(axis=1)
    assert np.abs(rows - 1).max() <= 1e-9
    assert (res.distribution[~res.has_stereo] == 0).all()
    assert np.isnan(res.expected[~res.has_stereo]).all()
    # settled pixels in round 0 never reappear in round 1
    settled0 = res.last_iteration == 0
    assert set(np.nonzero(res.last_iteration == 1)[0]).isdisjoint(np.nonzero(settled0)[0])


def test_single_round_equals_first_iteration():
    cfg = ExperimentConfig()
    pix, ft, fm, rig, _ = _scene_inputs(cfg, 2)
    one = ST.run_sbl(pix, ft, fm, rig, BINS, schedule=[12])
    vol = ST.build_cost_volume(pix, ST.propose_initial(len(pix), BINS, 12), ft, fm, rig)
    s, ok = ST.match_scores(vol)
    ms = ST.stats(s, vol.hypotheses)
    assert np.array_equal(one.has_stereo, ok)
    assert np.array_equal(one.mu[ok], ms.mu[ok]) and np.array_equal(one.sigma[ok], ms.sigma[ok])
    assert np.array_equal(one.distribution[ok], ST.fill_bins(s[ok], vol.hypotheses[ok], BINS))
    assert len(one.counters) == 1


def test_error_contraction():
    """Boosted pixels must not end round 1 more than a bin width worse than round 0."""
    cfg = ExperimentConfig()
    worse, total = 0, 0
    for seed in (0, 1, 2):
        for ci in (0, 1):
            pix, ft, fm, rig, rt = _scene_inputs(cfg, seed, ci)
            if len(pix) == 0:
                continue
            first = ST.run_sbl(pix, ft, fm, rig, BINS, schedule=[12])
            both = ST.run_sbl(pix, ft, fm, rig, BINS)
            boosted = both.last_iteration == 1
            truth = rt.depth[pix[:, 1], pix[:, 0]]
            e0 = np.abs(first.expected - truth)[boosted]
            e1 = np.abs(both.expected - truth)[boosted]
            worse += int(np.sum(e1 > e0 + BINS.width))
            total += int(boosted.sum())
    assert worse == 0, f"{worse} of {total} boosted pixels ({worse / total:.1%}) got worse by more than a bin"


def test_schedule_validation():
    rig = _rig(RigidTransform.identity())
    f = np.zeros((64, 64, 2))
    with pytest.raises(ST.StereoError):
        ST.run_sbl(np.zeros((1, 2)), f, f, rig, BINS, schedule=[])
    with pytest.raises(ST.StereoError):
        ST.run_sbl(np.zeros((1, 2)), f, f, rig, BINS, schedule=[20, 12])


def test_empty_pixel_set():
    rig = _rig(RigidTransform.identity())
    f = np.zeros((64, 64, 2))
    res = ST.run_sbl(np.zeros((0, 2)), f, f, rig, BINS)
    assert res.distribution.shape == (0, 112) and all(c.pixels == 0 for c in res.counters)


def test_counter_row():
    c = ST.IterationCounter(0, 10, 12, 120, 110, 4, 1)
    row = c.as_row()
    assert list(row) == list(ST.IterationCounter.FIELDS) and row["settled_fraction"] == "0.400000"
