"""Command-line entry point: ``objdepth {generate,run,sweep,losses,metrics}``.

Exit codes: 0 success, 1 a check failed, 2 bad usage or config,
3 a pipeline stage failed, 4 no data to evaluate.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import io, metrics, mono, pipeline
from . import scene as S
from .config import ConfigError, load_config, validate
from .geometry import DepthBins, GeometryError

EXIT_CHECK = 1
EXIT_USAGE = 2
EXIT_STAGE = 3
EXIT_NODATA = 4

log = logging.getLogger("objdepth")


def _fail(code: int, stage: str, msg: str) -> int:
    print(f"objdepth: error [{stage}]: {msg}", file=sys.stderr)
    return code


def _parse_schedule(text: str) -> list:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"--schedule: expected comma-separated integers, got {text!r}") from exc


def _parse_iterations(text: str) -> list:
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(x) for x in text.split(",")]


def _load(args):
    cfg, raw = load_config(args.config)
    overrides = {}
    if getattr(args, "sigma_t", None) is not None:
        cfg.sbl.sigma_t = args.sigma_t
        overrides["sigma_t"] = args.sigma_t
    if getattr(args, "schedule", None):
        cfg.sbl.schedule = _parse_schedule(args.schedule)
        overrides["schedule"] = cfg.sbl.schedule
    if getattr(args, "bins", None):
        cfg.bins = args.bins
        overrides["bins"] = args.bins
    if getattr(args, "fusion", None):
        cfg.fusion = args.fusion
        overrides["fusion"] = args.fusion
    if getattr(args, "no_stereo", False):
        cfg.sbl.enabled = False
        overrides["stereo"] = False
    return validate(cfg), raw, overrides


def cmd_generate(args) -> int:
    cfg, _, _ = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict = {}
    with pipeline.stage("scene", timings):
        sc = S.generate_scene(cfg, args.seed)
    desc = {
        "seed": args.seed,
        "objects": [
            {"category": o.category, "center": [float(x) for x in o.center],
             "size": [float(x) for x in o.size], "yaw_deg": float(np.degrees(o.yaw))}
            for o in sc.objects
        ],
        "cameras": [r.name for r in sc.rigs],
    }
    (out / "scene.yaml").write_text(yaml.safe_dump(desc, sort_keys=False))
    for rig in sc.rigs:
        for frame, tag in ((S.FRAME_T, "t"), (S.FRAME_TM1, "tm1")):
            with pipeline.stage("render", timings):
                r = S.render(sc, rig, frame)
            io.write_depth_pgm(out / f"depth_{rig.name}_{tag}.pgm", r.depth)
            io.write_mask_pgm(out / f"mask_{rig.name}_{tag}.pgm", r.owner)
    print(f"wrote {len(sc.objects)} objects and {2 * len(sc.rigs)} renders to {out}")
    return 0


def cmd_run(args) -> int:
    cfg, raw, overrides = _load(args)
    res = pipeline.run_experiment(cfg, raw, args.seed)
    if overrides:
        res.report["overrides"] = overrides
    pipeline.write_outputs(res, Path(args.out), cfg)
    fused = res.report["metrics"]["fused"]
    if fused:
        print("  ".join(f"{k}={v:.4f}" for k, v in fused.items()))
    print(f"wrote results to {args.out}")
    return 0


def cmd_sweep(args) -> int:
    cfg, raw, _ = _load(args)
    rounds = _parse_iterations(args.iterations)
    rows = pipeline.sweep(cfg, raw, args.seed, rounds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_csv(out / "sweep.csv", rows)
    for r in rows:
        print(f"rounds={r['rounds']} pixels/round=[{r['pixels_per_round']}] entries={r['entries']}")
    return 0


def gradient_check(seed: int = 0, trials: int = 20, step: float = 1e-5) -> list:
    """Analytic vs central-difference gradients; one record per loss and trial.

    ``max_rel_err`` is the norm-relative error of the full gradient.
    """
    rng = np.random.default_rng(seed)
    bins = DepthBins.parse("2:58:112")
    rows = []
    for t in range(trials):
        insts = []
        for i in range(int(rng.integers(1, 5))):
            m = int(rng.integers(1, 8))
            base = rng.uniform(5, 50)
            insts.append(mono.SupervisedInstance(i, 0, base + rng.normal(0, 2, m),
                                                 base + rng.normal(0, 1, m), base))
        for name, fn in (("abs", mono.abs_depth_loss), ("rel", mono.rel_depth_loss)):
            _, grads = fn(insts)
            fd = []
            for inst in insts:
                for j in range(inst.pred.size):
                    keep = inst.pred[j]
                    inst.pred[j] = keep + step
                    up = fn(insts)[0]
                    inst.pred[j] = keep - step
                    dn = fn(insts)[0]
                    inst.pred[j] = keep
                    fd.append((up - dn) / (2 * step))
            rows.append({"loss": name, "trial": t,
                         "max_rel_err": _rel_err(np.concatenate(grads), np.array(fd))})
        m = int(rng.integers(1, 6))
        z = rng.normal(0, 2, (bins.count, m))
        gt = rng.uniform(bins.d_min, bins.d_max, m)
        _, g = mono.ce_depth_loss(z, gt, bins)
        fd = np.zeros_like(g)
        for b in range(bins.count):
            for p in range(m):
                keep = z[b, p]
                z[b, p] = keep + step
                up = mono.ce_depth_loss(z, gt, bins)[0]
                z[b, p] = keep - step
                dn = mono.ce_depth_loss(z, gt, bins)[0]
                z[b, p] = keep
                fd[b, p] = (up - dn) / (2 * step)
        rows.append({"loss": "ce", "trial": t, "max_rel_err": _rel_err(g, fd)})
    return rows


def _rel_err(a, b) -> float:
    """Relative error of whole gradient vectors, ``|a-b| / max(|a|, |b|)``."""
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return float(np.linalg.norm(a - b) / scale) if scale > 0 else 0.0


def cmd_losses(args) -> int:
    rows = gradient_check(args.seed, args.trials)
    worst = {}
    for r in rows:
        worst[r["loss"]] = max(worst.get(r["loss"], 0.0), r["max_rel_err"])
    ok = all(v < 1e-4 for v in worst.values())
    for name, v in worst.items():
        print(f"{name:4s} max relative error {v:.3e}  {'ok' if v < 1e-4 else 'FAIL'}")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        io.write_csv(Path(args.out) / "gradcheck.csv", rows)
    return 0 if ok else EXIT_CHECK


def cmd_metrics(args) -> int:
    pred = np.load(args.pred)
    gt = np.load(args.gt)
    mask = np.load(args.mask) if args.mask else np.isfinite(gt) & (gt > 0)
    m = metrics.depth_metrics(pred, gt, mask)
    for k, v in m.as_dict().items():
        print(f"{k}: {v:.6f}")
    if args.out:
        io.write_csv(args.out, [m.as_dict()], list(metrics.FIELDS))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="objdepth", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, out_default="runs/out"):
        sp.add_argument("--config", type=Path, default=None, help="YAML config (default: built-in)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default=out_default)
        sp.add_argument("--sigma-t", type=float, default=None)
        sp.add_argument("--schedule", default=None, help="hypotheses per round, e.g. 12,20")
        sp.add_argument("--bins", default=None, help="d_min:d_max:count, e.g. 2:58:112")
        sp.add_argument("--fusion", choices=("prob", "logit"), default=None)

    common(sub.add_parser("generate", help="emit scene description and renders"))
    sp = sub.add_parser("run", help="run the full pipeline")
    common(sp)
    sp.add_argument("--no-stereo", action="store_true", help="mono-only ablation")
    sp = sub.add_parser("sweep", help="vary the number of stereo rounds")
    common(sp)
    sp.add_argument("--iterations", default="0..3")
    sp = sub.add_parser("losses", help="finite-difference gradient checks")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--trials", type=int, default=20)
    sp.add_argument("--out", default=None)
    sp = sub.add_parser("metrics", help="evaluate a dumped prediction")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--mask", default=None)
    sp.add_argument("--out", default=None, help="optional CSV output")
    return p


COMMANDS = {
    "generate": cmd_generate,
    "run": cmd_run,
    "sweep": cmd_sweep,
    "losses": cmd_losses,
    "metrics": cmd_metrics,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return COMMANDS[args.verb](args)
    except ConfigError as exc:
        return _fail(EXIT_USAGE, "config", str(exc))
    except GeometryError as exc:
        return _fail(EXIT_USAGE, "config", str(exc))
    except pipeline.StageError as exc:
        return _fail(EXIT_STAGE, exc.stage, str(exc).split("] ", 1)[-1])
    except metrics.NoData as exc:
        return _fail(EXIT_NODATA, "metrics", str(exc))
    except (OSError, ValueError) as exc:
        return _fail(EXIT_USAGE if args.verb != "metrics" else EXIT_NODATA, args.verb, str(exc))


if __name__ == "__main__":
    sys.exit(main())
