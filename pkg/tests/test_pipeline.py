import numpy as np
import pytest
import yaml

from objdepth import pipeline
from objdepth.config import ExperimentConfig, load_config


@pytest.fixture(scope="module")
def default_run():
    cfg, raw = load_config(None)
    return cfg, raw, pipeline.run_experiment(cfg, raw, 0)


def test_report_structure(default_run):
    cfg, raw, res = default_run
    rep = res.report
    assert rep["schedule"] == [12, 20] and rep["bins"] == "2:58:112"
    assert set(rep["metrics"]) == {"fused", "mono", "stereo"}
    assert len(rep["metric_formulas"]) == 5
    assert set(rep["counters"]) == {"left", "right"}
    assert rep["losses"]["det"] == 0.0 and rep["losses"]["total"] > 0
    assert rep["bev"]["cells"] == 128
    yaml.safe_dump(rep)  # plain types only


def test_eval_mask_and_bev_mass(default_run):
    cfg, raw, res = default_run
    for cam in res.cameras:
        d = cam.render_T.depth
        assert np.array_equal(cam.eval_mask, cam.render_T.foreground & (d >= 2) & (d < 58))
        assert np.allclose(cam.fused_probs.sum(axis=0), 1.0)
    fg = sum(len(c.pixels) for c in res.cameras)
    assert abs(res.grid.total + res.grid.dropped - fg) <= 1e-9


def test_deterministic(default_run):
    cfg, raw, res = default_run
    again = pipeline.run_experiment(cfg, raw, 0)
    assert again.report == res.report
    assert np.array_equal(again.grid.weight, res.grid.weight)


def test_stereo_ablation():
    cfg, raw = load_config(None)
    cfg.sbl.enabled = False
    res = pipeline.run_experiment(cfg, raw, 0)
    assert "counters" not in res.report and "stereo" not in res.report["metrics"]
    assert res.report["metrics"]["fused"] == res.report["metrics"]["mono"]
    for cam in res.cameras:
        assert np.array_equal(cam.fused_probs, cam.mono_probs)


def test_logit_fusion_runs():
    cfg, raw = load_config(None)
    cfg.fusion = "logit"
    res = pipeline.run_experiment(cfg, raw, 1)
    assert res.report["fusion"] == "logit" and res.report["metrics"]["fused"]["rmse"] > 0


def test_schedule_for_rounds():
    assert pipeline.schedule_for_rounds([12, 20], 0) == []
    assert pipeline.schedule_for_rounds([12, 20], 1) == [12]
    assert pipeline.schedule_for_rounds([12, 20], 3) == [12, 20, 28]
    assert pipeline.schedule_for_rounds([], 2) == [12, 20]


def test_sweep_counts():
    cfg, raw = load_config(None)
    rows = pipeline.sweep(cfg, raw, 0, range(4))
    entries = [r["entries"] for r in rows]
    assert all(b > a for a, b in zip(entries, entries[1:]))
    per_round = [int(x) for x in rows[-1]["pixels_per_round"].split(";")]
    assert all(b <= a for a, b in zip(per_round, per_round[1:]))


def test_stage_error_tags_stage():
    cfg = ExperimentConfig()
    cfg.scene.counts = {"bus": 40}
    cfg.scene.max_retries = 3
    with pytest.raises(pipeline.StageError) as exc:
        pipeline.run_experiment(cfg, b"", 0)
    assert exc.value.stage == "scene" and "SceneError" in str(exc.value)


def test_write_outputs(tmp_path, default_run):
    cfg, raw, res = default_run
    pipeline.write_outputs(res, tmp_path, cfg)
    names = {p.name for p in tmp_path.iterdir()}
    assert {"report.yaml", "timing.yaml", "metrics.csv", "counters.csv", "losses.csv", "bev.pgm",
            "depth_gt_left.pgm", "depth_pred_right.pgm", "mask_left.pgm", "pred.npy"} <= names
    assert np.load(tmp_path / "pred.npy").shape == (2, 128, 192)
