import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from objdepth import mono
from objdepth.config import DEFAULT_SIZES
from objdepth.geometry import make_bins

BINS = make_bins(2.0, 58.0, 112)


def inst(pred, gt, voted, iid=0):
    return mono.SupervisedInstance(iid, 0, np.asarray(pred, float), np.asarray(gt, float), voted)


def test_groups():
    assert mono.NUM_GROUPS == 6
    assert mono.group_of("car").gid == 0
    assert mono.group_of("traffic cone").gid == 5
    assert "pedestrian" in mono.group_of("traffic_cone").members
    with pytest.raises(mono.MonoError):
        mono.group_of("boat")
    g = mono.group_of("bus")
    assert g.height() == pytest.approx((3.3 + 3.9) / 2)
    assert g.height({"bus": (1, 1, 1.0)}) == pytest.approx((1.0 + 3.9) / 2)
    assert sum(len(g.members) for g in mono.groups()) == len(DEFAULT_SIZES)


def test_prior_depth():
    assert mono.prior_depth(100, 1000, 1.5, BINS) == pytest.approx(15.0)
    assert mono.prior_depth(1000, 1000, 1.5, BINS) == 2.0
    assert mono.prior_depth(1, 1000, 1.5, BINS) == 58.0
    with pytest.raises(mono.MonoError):
        mono.prior_depth(0, 1000, 1.5, BINS)


def test_mono_logits_examples():
    k = 40
    d = mono.mono_logits(3, BINS.centers[k], BINS, 0.01)
    assert (np.argmax(d.probs, axis=0) == k).all()
    wide = mono.mono_logits(2, 30.0, BINS, 1e9)
    assert mono.expected_depth(wide, BINS) == pytest.approx([BINS.centers.mean()] * 2)
    p = mono.mono_logits(1, 15.0, BINS, 1.0).probs[:, 0]
    near = np.abs(BINS.centers - 15.0) <= 3.0
    assert p[near].sum() >= 0.997
    with pytest.raises(mono.MonoError):
        mono.mono_logits(1, 15.0, BINS, 0.0)


def test_expected_depth_examples():
    c = np.array([1.0, 2.0, 3.0])
    assert mono.expected_depth(np.zeros((3, 1)), c)[0] == pytest.approx(2.0)
    one_hot = np.full((3, 1), -1e3)
    one_hot[2] = 0
    assert mono.expected_depth(one_hot, c)[0] == pytest.approx(3.0)
    assert mono.expected_from_probs(np.array([[0.5], [0.0], [0.5]]), c)[0] == pytest.approx(2.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=112, max_size=112))
def test_softmax_normalized_and_expectation_bounded(z):
    logits = np.array(z)[:, None]
    p = mono.softmax(logits)
    assert abs(p.sum() - 1.0) <= 1e-9
    e = mono.expected_depth(logits, BINS)[0]
    assert BINS.centers[0] <= e <= BINS.centers[-1]


def test_softmax_rejects_nonfinite():
    with pytest.raises(mono.MonoError):
        mono.softmax(np.array([[np.nan], [0.0]]))


def test_vote_examples():
    assert mono.vote_gt_depth([10.1, 10.2, 50.0], BINS) == pytest.approx(10.15)
    assert mono.vote_gt_depth([7.3], BINS) == pytest.approx(7.3)
    # tie: one vote each in [10, 10.5) and [20, 20.5) -> lower bin
    assert mono.vote_gt_depth([20.2, 10.3], BINS) == pytest.approx(10.3)
    assert mono.vote_gt_depth([1.0, 10.3, 70.0], BINS) == pytest.approx(10.3)
    with pytest.raises(mono.NoValidDepth):
        mono.vote_gt_depth([1.0, 60.0], BINS)
    with pytest.raises(mono.NoValidDepth):
        mono.vote_gt_depth([], BINS)


@settings(max_examples=200, deadline=None)
@given(
    k=st.integers(0, 100),
    n_in=st.integers(3, 30),
    frac=st.floats(0, 0.4),
    seed=st.integers(0, 2**31),
)
def test_vote_robust_to_outliers(k, n_in, frac, seed):
    rng = np.random.default_rng(seed)
    w = BINS.width
    lo = BINS.d_min + k * w
    inliers = rng.uniform(lo, lo + w, n_in)
    # at most 40% of all samples are outliers, each >= 5 bin widths away
    n_out = int(frac * n_in / (1 - frac))
    n_out = min(n_out, n_in - 1)
    sign = rng.choice([-1, 1], n_out)
    out = inliers.mean() + sign * rng.uniform(5 * w + w, 20 * w, n_out)
    got = mono.vote_gt_depth(np.concatenate([inliers, out]), BINS)
    assert abs(got - np.median(inliers)) <= w


def test_abs_loss_examples():
    assert mono.abs_depth_loss([inst([10, 10], [10, 10], 10.0)])[0] == 0.0
    assert mono.abs_depth_loss([inst([9, 11], [0, 0], 10.0)])[0] == pytest.approx(1.0)
    a = inst([9, 11], [0, 0], 10.0)
    b = inst([10 + math.sqrt(3)], [0], 10.0, 1)
    assert mono.abs_depth_loss([a, b])[0] == pytest.approx(2.0)
    with pytest.raises(mono.MonoError):
        mono.abs_depth_loss([])


def test_rel_loss_examples():
    assert mono.rel_depth_loss([inst([3, 4], [3, 4], 9.0)])[0] == 0.0
    for voted in (0.0, 10.0, 123.0):
        assert mono.rel_depth_loss([inst([10.5, 9.5], [9.5, 10.5], voted)])[0] == pytest.approx(1.0)
    with pytest.raises(mono.MonoError):
        mono.rel_depth_loss([])


def _random_instances(rng, n=None):
    return [
        inst(rng.uniform(2, 60, m), rng.uniform(2, 60, m), rng.uniform(2, 60), i)
        for i, m in enumerate(rng.integers(1, 9, n or rng.integers(1, 6)))
    ]


def test_rel_equals_pixel_mse():
    rng = np.random.default_rng(0)
    for _ in range(100):
        ins = _random_instances(rng)
        mse = np.mean([np.mean((i.pred - i.gt) ** 2) for i in ins])
        assert abs(mono.rel_depth_loss(ins)[0] - mse) <= 1e-12 * max(1.0, mse)


def test_shift_equivariance():
    rng = np.random.default_rng(1)
    for _ in range(20):
        ins = _random_instances(rng)
        c = rng.uniform(-5, 5)
        moved = [inst(i.pred + c, i.gt + c, i.voted + c, i.instance_id) for i in ins]
        for fn in (mono.abs_depth_loss, mono.rel_depth_loss):
            assert fn(moved)[0] == pytest.approx(fn(ins)[0], rel=1e-9, abs=1e-9)


def test_ce_examples():
    b3 = make_bins(1.0, 4.0, 3)
    z = np.array([[0.0], [-1e4], [-1e4]])
    assert mono.ce_depth_loss(z, [1.2], b3)[0] == pytest.approx(0.0, abs=1e-12)
    assert mono.ce_depth_loss(np.zeros((112, 4)), [5, 10, 20, 40], BINS)[0] == pytest.approx(math.log(112))
    b2 = make_bins(0.0 + 1e-9, 2.0, 2)
    z = np.log(np.array([[0.75], [0.25]]))
    assert mono.ce_depth_loss(z, [0.5], b2)[0] == pytest.approx(-math.log(0.75))


def test_ce_skips_out_of_range():
    z = np.random.default_rng(0).normal(size=(112, 3))
    full, g = mono.ce_depth_loss(z, [10.0, 100.0, 20.0], BINS)
    part, _ = mono.ce_depth_loss(z[:, [0, 2]], [10.0, 20.0], BINS)
    assert full == pytest.approx(part)
    assert (g[:, 1] == 0).all()
    with pytest.raises(mono.NoValidDepth):
        mono.ce_depth_loss(z, [100.0, 0.5, 60.0], BINS)


def test_total_loss():
    w = mono.LossWeights()
    assert (w.det, w.ce, w.abs, w.rel) == (1.0, 3.0, 0.5, 2.0)
    assert mono.total_loss(1, 1, 1, 1, w) == pytest.approx(6.5)
    assert mono.total_loss(0, 0, 0, 0, w) == 0.0
    assert mono.total_loss(0, 2, 0, 0, mono.LossWeights.from_list([1, 3, 0.5, 2])) == pytest.approx(6.0)
    with pytest.raises(mono.MonoError):
        mono.total_loss(float("nan"), 0, 0, 0, w)
    with pytest.raises(mono.MonoError):
        mono.LossWeights(-1.0)


def test_loss_rows():
    rows = mono.loss_rows([inst([9, 11], [10, 10], 10.0, 3)], {3: 0.5})
    assert rows[0]["instance"] == 3 and rows[0]["abs"] == pytest.approx(1.0) and rows[0]["ce"] == 0.5


def test_supervised_instance_validation():
    with pytest.raises(mono.MonoError):
        inst([1, 2], [1], 1.0)
    with pytest.raises(mono.MonoError):
        inst([], [], 1.0)
