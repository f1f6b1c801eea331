"""End-to-end experiment: scene -> renders -> mono -> stereo -> fusion -> BEV -> metrics.

Everything except the timing file is a pure function of (config bytes, seed).
"""

from __future__ import annotations

import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import bev, io, metrics, mono
from . import scene as S
from . import stereo
from .config import ExperimentConfig, digest
from .geometry import DepthBins, bin_index

log = logging.getLogger(__name__)

SWEEP_STEP = 8  # hypotheses added per extra round when extending the schedule


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@contextmanager
def stage(name: str, timings: dict):
    t0 = time.perf_counter()
    try:
        yield
    except StageError:
        raise
    except Exception as exc:  # tag and re-raise with the failing stage
        raise StageError(name, f"{type(exc).__name__}: {exc}") from exc
    finally:
        timings[name] = timings.get(name, 0.0) + 1000.0 * (time.perf_counter() - t0)


@dataclass
class CameraResult:
    name: str
    render_T: S.Render
    pixels: np.ndarray  # (M, 2) foreground pixels in row-major order
    mono_probs: np.ndarray  # (B, H*W)
    fused_probs: np.ndarray  # (B, H*W)
    pred: np.ndarray  # (H, W) fused expected depth
    mono_pred: np.ndarray  # (H, W)
    stereo_pred: np.ndarray  # (H, W), nan where no stereo
    eval_mask: np.ndarray  # (H, W)
    feats: np.ndarray  # (H, W, C) frame-T features
    counters: list = field(default_factory=list)
    instances: list = field(default_factory=list)
    ce: tuple = (0.0, 0)  # (sum of per-pixel CE, pixel count)
    ce_by_instance: dict = field(default_factory=dict)


@dataclass
class RunResult:
    report: dict
    timings: dict
    cameras: list
    grid: bev.BevGrid
    scene: S.Scene


def schedule_for_rounds(base, rounds: int) -> list:
    """First ``rounds`` entries of ``base``, extended by ``SWEEP_STEP`` if needed."""
    sched = list(base)[:rounds]
    while len(sched) < rounds:
        sched.append((sched[-1] if sched else 4) + SWEEP_STEP)
    return sched


def mono_stage(rend: S.Render, rig, bins: DepthBins, cfg: ExperimentConfig):
    """Mono logits for every pixel: prior bumps on instances, flat on background."""
    k = rig.intrinsics
    logits = np.zeros((bins.count, k.height * k.width))
    priors = {}
    for m in rend.masks:
        grp = mono.group_of(m.category)
        prior = mono.prior_depth(m.height_px, k.fy, grp.height(cfg.scene.sizes), bins)
        priors[m.instance_id] = prior
        cols = m.pixels[:, 1] * k.width + m.pixels[:, 0]
        logits[:, cols] = mono.mono_logits(len(cols), prior, bins, cfg.mono.spreads[grp.gid]).logits
    return logits, priors


def supervise(rend, rig, gt: S.SparseGroundTruth, logits, bins: DepthBins):
    """Voted depths, supervised instances and CE terms for one camera."""
    k = rig.intrinsics
    instances = []
    ce_sum, ce_n = 0.0, 0
    ce_by = {}
    for m in rend.masks:
        if m.instance_id not in gt.samples:
            continue
        pix, depths = gt.samples[m.instance_id]
        try:
            voted = mono.vote_gt_depth(depths, bins)
        except mono.NoValidDepth:
            log.info("instance %d has no in-range gt; excluded", m.instance_id)
            continue
        cols = pix[:, 1] * k.width + pix[:, 0]
        z = logits[:, cols]
        pred = mono.expected_depth(z, bins)
        grp = mono.group_of(m.category).gid
        instances.append(mono.SupervisedInstance(m.instance_id, grp, pred, depths, voted))
        try:
            loss, _ = mono.ce_depth_loss(z, depths, bins)
            n_ok = int(np.sum(bin_index(depths, bins) >= 0))
            ce_sum += loss * n_ok
            ce_n += n_ok
            ce_by[m.instance_id] = loss
        except mono.NoValidDepth:
            pass
    return instances, (ce_sum, ce_n), ce_by


def run_camera(sc: S.Scene, ci: int, cfg: ExperimentConfig, bins: DepthBins, seed: int,
               timings: dict, sbl_schedule) -> CameraResult:
    rig = sc.rigs[ci]
    k = rig.intrinsics
    fc = cfg.features
    with stage("render", timings):
        r_t = S.render(sc, rig, S.FRAME_T)
        r_m = S.render(sc, rig, S.FRAME_TM1)
    with stage("features", timings):
        emb = S.Embedding(fc.channels, fc.scale, fc.energy)
        f_t = S.synth_features(sc, rig, S.FRAME_T, fc.noise_sigma, rendered=r_t, embedding=emb)
        f_m = S.synth_features(sc, rig, S.FRAME_TM1, fc.noise_sigma, rendered=r_m, embedding=emb)
    with stage("mono", timings):
        logits, _ = mono_stage(r_t, rig, bins, cfg)
        mono_probs = mono.softmax(logits)
        mono_pred = (bins.centers @ mono_probs).reshape(k.height, k.width)
    with stage("lidar", timings):
        lc = cfg.lidar
        gt = S.sample_lidar(sc, rig, lc.density, lc.outlier_rate, lc.outlier_shift,
                            seed * 1000 + ci, rendered=r_t)
    with stage("losses", timings):
        instances, ce, ce_by = supervise(r_t, rig, gt, logits, bins)

    vv, uu = np.nonzero(r_t.foreground)
    pixels = np.stack([uu, vv], axis=-1).astype(np.int64)
    cols = vv * k.width + uu
    stereo_pred = np.full((k.height, k.width), np.nan)
    counters = []
    fused = mono_probs
    if sbl_schedule:
        with stage("stereo", timings):
            res = stereo.run_sbl(pixels, f_t, f_m, rig, bins, sbl_schedule,
                                 cfg.sbl.sigma_t, cfg.sbl.temperature)
            counters = res.counters
            has = res.has_stereo
            stereo_pred[vv[has], uu[has]] = res.expected[has]
        with stage("fusion", timings):
            fused = bev.fuse(mono_probs, res.distribution[has].T, cols[has], cfg.fusion).probs
    pred = (bins.centers @ fused).reshape(k.height, k.width)
    depth = r_t.depth
    eval_mask = r_t.foreground & (depth >= bins.d_min) & (depth < bins.d_max)
    return CameraResult(rig.name, r_t, pixels, mono_probs, fused, pred, mono_pred, stereo_pred,
                        eval_mask, f_t, counters, instances, ce, ce_by)


def splat_cameras(sc, cams: list, cfg: ExperimentConfig, bins: DepthBins, timings: dict) -> bev.BevGrid:
    fc = cfg.features
    grid = bev.empty_grid(cfg.bev.extent, cfg.bev.cell, fc.channels)
    with stage("bev", timings):
        for ci, cam in enumerate(cams):
            rig = sc.rigs[ci]
            k = rig.intrinsics
            if cfg.bev.splat_background:
                vv, uu = np.mgrid[0 : k.height, 0 : k.width]
                vv, uu = vv.ravel(), uu.ravel()
            else:
                uu, vv = cam.pixels[:, 0], cam.pixels[:, 1]
            cols = vv * k.width + uu
            grid = grid + bev.lift_splat(cam.fused_probs[:, cols], np.stack([uu, vv], -1),
                                         cam.feats[vv, uu], rig, bins, cfg.bev.extent, cfg.bev.cell)
    return grid


def _metrics_or_none(pred, gt, mask):
    m = mask & np.isfinite(pred)
    if not m.any():
        return None
    return metrics.depth_metrics(pred, gt, m).as_dict()


def run_experiment(cfg: ExperimentConfig, raw: bytes, seed: int, rounds: int | None = None) -> RunResult:
    """Run the full pipeline.  ``rounds`` overrides the stereo schedule length
    (``0`` disables stereo); ``None`` uses the config."""
    timings: dict = {}
    with stage("config", timings):
        bins = DepthBins.parse(cfg.bins)
        if rounds is None:
            sched = list(cfg.sbl.schedule) if cfg.sbl.enabled else []
        else:
            sched = schedule_for_rounds(cfg.sbl.schedule, rounds)
    with stage("scene", timings):
        sc = S.generate_scene(cfg, seed)
    cams = [run_camera(sc, ci, cfg, bins, seed, timings, sched) for ci in range(len(sc.rigs))]
    grid = splat_cameras(sc, cams, cfg, bins, timings)

    with stage("metrics", timings):
        report = build_report(cfg, raw, seed, sched, bins, sc, cams, grid)
    return RunResult(report, timings, cams, grid, sc)


def _stack(cams, attr):
    return np.concatenate([getattr(c, attr).ravel() for c in cams])


def build_report(cfg, raw, seed, sched, bins, sc, cams, grid) -> dict:
    gt = _stack([c.render_T for c in cams], "depth") if cams else np.empty(0)
    mask = _stack(cams, "eval_mask")
    report = {
        "version": 1,
        "config_digest": digest(raw),
        "seed": seed,
        "bins": str(bins),
        "schedule": list(sched),
        "fusion": cfg.fusion,
        "metric_formulas": list(metrics.FORMULAS),
        "objects": [
            {"category": o.category, "center": [round(float(x), 6) for x in o.center],
             "yaw_deg": round(float(np.degrees(o.yaw)), 6)}
            for o in sc.objects
        ],
        "metrics": {
            "fused": _metrics_or_none(_stack(cams, "pred"), gt, mask),
            "mono": _metrics_or_none(_stack(cams, "mono_pred"), gt, mask),
        },
    }
    if sched:
        report["metrics"]["stereo"] = _metrics_or_none(_stack(cams, "stereo_pred"), gt, mask)
        report["counters"] = {c.name: [ct.as_row() for ct in c.counters] for c in cams}

    instances = [i for c in cams for i in c.instances]
    ce_sum = sum(c.ce[0] for c in cams)
    ce_n = sum(c.ce[1] for c in cams)
    losses = {"det": float(cfg.l_det)}
    if instances:
        losses["abs"] = mono.abs_depth_loss(instances)[0]
        losses["rel"] = mono.rel_depth_loss(instances)[0]
        losses["ce"] = ce_sum / ce_n if ce_n else None
        if losses["ce"] is not None:
            losses["total"] = mono.total_loss(losses["det"], losses["ce"], losses["abs"], losses["rel"],
                                              mono.LossWeights.from_list(cfg.loss_weights))
    report["losses"] = losses
    ax, ay = grid.argmax()
    report["bev"] = {
        "cells": grid.size,
        "cell_size": grid.cell,
        "total_weight": grid.total,
        "dropped": grid.dropped,
        "argmax_cell": [ax, ay],
    }
    return _plain(report)


def _plain(x):
    """Convert numpy scalars to Python types for a stable YAML dump."""
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def write_outputs(result: RunResult, out: Path, cfg: ExperimentConfig) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rep = result.report
    (out / "report.yaml").write_text(yaml.safe_dump(rep, sort_keys=False))
    (out / "timing.yaml").write_text(
        yaml.safe_dump({k: round(v, 3) for k, v in result.timings.items()}, sort_keys=False)
    )
    rows = [{"stage": k, **v} for k, v in rep["metrics"].items() if v is not None]
    io.write_csv(out / "metrics.csv", rows, ["stage", *metrics.FIELDS])
    crow = [
        {"camera": cam, **row} for cam, rows_ in rep.get("counters", {}).items() for row in rows_
    ]
    io.write_csv(out / "counters.csv", crow, ["camera", *stereo.IterationCounter.FIELDS])
    lrows = []
    for cam in result.cameras:
        for row in mono.loss_rows(cam.instances, cam.ce_by_instance):
            lrows.append({"camera": cam.name, **row})
    io.write_csv(out / "losses.csv", lrows,
                 ["camera", "instance", "group", "d_gt", "samples", "abs", "rel", "ce"])
    for cam in result.cameras:
        io.write_depth_pgm(out / f"depth_gt_{cam.name}.pgm", cam.render_T.depth)
        io.write_depth_pgm(out / f"depth_pred_{cam.name}.pgm", np.where(cam.eval_mask, cam.pred, np.inf))
        io.write_mask_pgm(out / f"mask_{cam.name}.pgm", cam.render_T.owner)
    io.write_weight_pgm(out / "bev.pgm", result.grid.weight)
    np.save(out / "pred.npy", np.stack([c.pred for c in result.cameras]))
    np.save(out / "gt.npy", np.stack([c.render_T.depth for c in result.cameras]))
    np.save(out / "mask.npy", np.stack([c.eval_mask for c in result.cameras]))


def sweep(cfg: ExperimentConfig, raw: bytes, seed: int, rounds=range(4)) -> list:
    """Run the same scene with 0..n stereo rounds; one summary row per setting."""
    rows = []
    for r in rounds:
        res = run_experiment(cfg, raw, seed, rounds=r)
        ctr = [ct for cam in res.cameras for ct in cam.counters]
        per_round = [sum(ct.pixels for ct in ctr if ct.iteration == i) for i in range(r)]
        fused = res.report["metrics"]["fused"] or {}
        rows.append(
            {
                "rounds": r,
                "schedule": ";".join(str(x) for x in res.report["schedule"]),
                "pixels_per_round": ";".join(str(p) for p in per_round),
                "allocated": sum(ct.allocated for ct in ctr),
                "entries": sum(ct.entries for ct in ctr),
                "rmse": fused.get("rmse"),
                "abs_rel": fused.get("abs_rel"),
            }
        )
    return rows
