"""Command-line surface: dataset generation, training, prediction,
evaluation, point-cloud projection, densification, gradient checks and the
experiment/benchmark harness.

Exit codes: 0 success, 1 validation error, 2 runtime failure. Errors go to
stderr as one JSON object per failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import data as D
from . import experiments as E
from . import geometry as G
from . import metrics as M
from .densify import DensifyConfig, Solver, densify
from .gradcheck import run_suite
from .losses import LossWeights, PixelLossKind
from .model import FusionMode, ModelConfig, load_checkpoint
from .trainer import TrainConfig, train

# fixed, documented colormap for depth visualizations (non-metric): near =
# warm, far = cold, linear in normalized depth
_VIS_STOPS = np.array([[1.0, 0.2, 0.1], [1.0, 0.9, 0.2],
                       [0.2, 0.9, 0.4], [0.15, 0.3, 1.0]])


class ValidationError(ValueError):
    pass


def _fail(stream_code, message):
    sys.stderr.write(json.dumps({"error": message, "code": stream_code}) + "\n")
    return stream_code


def depth_colormap(depth, d_min, d_max):
    t = np.clip((depth - d_min) / max(d_max - d_min, 1e-9), 0.0, 1.0)
    x = t * (len(_VIS_STOPS) - 1)
    i = np.clip(x.astype(int), 0, len(_VIS_STOPS) - 2)
    f = (x - i)[..., None]
    return _VIS_STOPS[i] * (1 - f) + _VIS_STOPS[i + 1] * f


def _parse_weather_mix(text):
    mix = {}
    for part in text.split(","):
        if ":" not in part:
            raise ValidationError(f"bad weather mix entry {part!r}; "
                                  "expected name:fraction")
        name, frac = part.split(":", 1)
        mix[name.strip()] = float(frac)
    return mix


def _load_config_file(path):
    kv = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected key=value")
            k, v = line.split("=", 1)
            kv[k.strip()] = v.strip()
    return kv


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args):
    mix = _parse_weather_mix(args.weather_mix)
    spec = D.SceneSpec(width=args.width, height=args.height,
                       radar_returns=args.radar_returns)
    ids = D.generate_dataset(args.out, args.count, mix, args.seed, spec=spec)
    print(f"wrote {len(ids)} samples to {args.out}")
    return 0


def _train_configs(args):
    cfg_file = _load_config_file(args.config) if args.config else {}

    def pick(key, flag_value, cast, default):
        if flag_value is not None:
            return flag_value
        if key in cfg_file:
            return cast(cfg_file[key])
        return default

    tcfg = TrainConfig(
        epochs=pick("epochs", args.epochs, int, 20),
        batch_size=pick("batch_size", args.batch_size, int, 2),
        lr0=pick("lr0", args.lr0, float, 1e-4),
        lr_decay_factor=pick("lr_decay_factor", None, float, 0.2),
        lr_decay_every=pick("lr_decay_every", None, int, 7),
        loss_kind=PixelLossKind(pick("loss_kind", args.loss, str, "l1")),
        loss_weights=LossWeights(
            w_ssim=pick("w_ssim", None, float, 1.0),
            w_edge=pick("w_edge", None, float, 1.0),
            w_pixel=pick("w_pixel", None, float, 1.0)),
        augment=pick("augment", None, lambda v: v.lower() == "true", True),
        shuffle_seed=pick("shuffle_seed", args.seed, int, 0),
        augment_seed=pick("augment_seed", None, int, 1))
    mcfg = ModelConfig(
        input_height=pick("input_height", args.height, int, 96),
        input_width=pick("input_width", args.width, int, 160),
        base_channels=pick("base_channels", None, int, 16),
        encoder_stages=pick("encoder_stages", None, int, 4),
        fusion_mode=FusionMode(pick("fusion_mode", args.fusion, str, "rgb")),
        leaky_alpha=pick("leaky_alpha", None, float, 0.2),
        h_reciprocal=pick("h_reciprocal", None, float, 10.0),
        d_min=pick("d_min", None, float, 0.5),
        d_max=pick("d_max", None, float, 80.0),
        seed=pick("model_seed", args.seed, int, 0))
    return tcfg, mcfg


def cmd_train(args):
    tcfg, mcfg = _train_configs(args)
    model, log = train(tcfg, mcfg, args.train_dir, val_dir=args.val_dir,
                       out_dir=args.out, resume=args.resume,
                       log_fn=lambda rec: print(json.dumps(rec, sort_keys=True)))
    print(f"finished {len(log)} epochs; checkpoints in {args.out}")
    return 0


def cmd_predict(args):
    model, _, _ = load_checkpoint(args.checkpoint)
    rgb = D.load_ppm(args.rgb)
    sparse = D.load_depth_pgm(args.sparse) if args.sparse else None
    mode = model.config.fusion_mode
    if mode is FusionMode.RGB_ONLY and sparse is not None:
        sys.stderr.write(json.dumps(
            {"warning": "checkpoint is RGB-only; sparse input ignored"}) + "\n")
        sparse = None
    if mode is not FusionMode.RGB_ONLY and sparse is None:
        raise ValidationError(
            f"checkpoint fusion mode {mode.value!r} requires --sparse")
    depth = model.predict_depth(rgb, sparse)
    D.save_depth_pgm(depth, args.out)
    if args.vis:
        D.save_ppm(depth_colormap(depth, model.config.d_min,
                                  model.config.d_max), args.vis)
    print(f"wrote {args.out}")
    return 0


def cmd_eval(args):
    model, _, _ = load_checkpoint(args.checkpoint)
    divisor = (M.Divisor.GROUNDTRUTH if args.ard_divisor == "gt"
               else M.Divisor.PREDICTION)
    ids = D.list_sample_ids(args.split_dir)
    if not ids:
        raise ValidationError(f"split directory {args.split_dir} is empty")
    reports = {}
    skipped = 0
    for sample_id in ids:
        paths = D.sample_paths(args.split_dir, sample_id)
        if not os.path.exists(paths["gt"]):
            sys.stderr.write(json.dumps(
                {"warning": f"sample {sample_id} has no groundtruth; skipped"})
                + "\n")
            skipped += 1
            continue
        s = D.load_sample(args.split_dir, sample_id)
        sparse = (None if model.config.fusion_mode is FusionMode.RGB_ONLY
                  else s.sparse)
        depth = model.predict_depth(s.rgb, sparse)
        gt = np.clip(s.gt, model.config.d_min, model.config.d_max)
        reports[sample_id] = M.compute_metrics(depth, gt, divisor=divisor)
    if not reports:
        raise ValidationError("no evaluable samples in split")
    agg = M.mean_report(list(reports.values()))
    os.makedirs(args.out, exist_ok=True)
    M.write_reports(reports, os.path.join(args.out, "per_sample.jsonl"),
                    os.path.join(args.out, "summary.csv"))
    summary = agg.as_dict()
    summary["skipped_samples"] = skipped
    with open(os.path.join(args.out, "aggregate.json"), "w",
              encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_project(args):
    cloud = G.load_cloud_csv(args.cloud)
    intr, pose = G.load_calibration(args.calibration)
    sparse = G.project_points(cloud, pose, intr)
    D.save_depth_pgm(sparse, args.out)
    print(f"projected {len(cloud)} points -> {int((sparse > 0).sum())} pixels")
    return 0


def cmd_densify(args):
    sparse = D.load_depth_pgm(args.sparse)
    guide = D.load_ppm(args.guide)
    cfg = DensifyConfig(
        solver=Solver(args.solver),
        tolerance=args.tolerance, max_iterations=args.max_iterations)
    result = densify(sparse, guide, cfg)
    D.save_depth_pgm(result.depth, args.out)
    status = "converged" if result.converged else "NOT converged"
    print(f"{status} after {result.iterations} iterations "
          f"(residual {result.residual:.2e})")
    return 0 if result.converged else 2


def cmd_gradcheck(args):
    records = run_suite(n_seeds=args.seeds)
    failed = [r for r in records if not r["passed"]]
    for r in records:
        print(f"{'PASS' if r['passed'] else 'FAIL'} {r['op']:24s} "
              f"max_rel_err={r['max_relative_error']:.3e}")
    print(f"{len(records) - len(failed)}/{len(records)} ops passed")
    return 0 if not failed else 2


def cmd_repro(args):
    report = E.run_experiment(args.name, args.out, seed=args.seed)
    ok = all(a["passed"] for a in report["assertions"])
    print(open(os.path.join(args.out, "report.txt"), encoding="utf-8").read(),
          end="")
    return 0 if ok else 2


def cmd_bench(args):
    report = E.bench_forward(n_frames=args.frames)
    print(json.dumps(report, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="depthfusion",
                                description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--weather-mix", default="day:1.0")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--width", type=int, default=160)
    g.add_argument("--height", type=int, default=96)
    g.add_argument("--radar-returns", type=int, default=40)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--train-dir", required=True)
    t.add_argument("--val-dir")
    t.add_argument("--out", default="runs/run")
    t.add_argument("--config", help="key=value config file; flags override")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr0", type=float)
    t.add_argument("--loss", choices=[k.value for k in PixelLossKind])
    t.add_argument("--fusion", choices=[m.value for m in FusionMode])
    t.add_argument("--width", type=int)
    t.add_argument("--height", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(fn=cmd_train)

    pr = sub.add_parser("predict", help="predict depth for one image")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--rgb", required=True)
    pr.add_argument("--sparse")
    pr.add_argument("--out", required=True)
    pr.add_argument("--vis", help="optional color-mapped PPM (non-metric)")
    pr.set_defaults(fn=cmd_predict)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--split-dir", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--ard-divisor", choices=["gt", "pred"], default="gt")
    ev.set_defaults(fn=cmd_eval)

    pj = sub.add_parser("project", help="rasterize a point cloud to sparse depth")
    pj.add_argument("--cloud", required=True)
    pj.add_argument("--calibration", required=True)
    pj.add_argument("--out", required=True)
    pj.set_defaults(fn=cmd_project)

    dn = sub.add_parser("densify", help="fill a sparse raster guided by RGB")
    dn.add_argument("--sparse", required=True)
    dn.add_argument("--guide", required=True)
    dn.add_argument("--out", required=True)
    dn.add_argument("--solver", choices=[s.value for s in Solver],
                    default="gauss-seidel")
    dn.add_argument("--tolerance", type=float, default=1e-6)
    dn.add_argument("--max-iterations", type=int, default=5000)
    dn.set_defaults(fn=cmd_densify)

    gc = sub.add_parser("gradcheck", help="finite-difference check of all ops")
    gc.add_argument("--seeds", type=int, default=10)
    gc.set_defaults(fn=cmd_gradcheck)

    rp = sub.add_parser("repro", help="run a registered experiment")
    rp.add_argument("name", choices=sorted(E.EXPERIMENTS))
    rp.add_argument("--out", required=True)
    rp.add_argument("--seed", type=int, default=0)
    rp.set_defaults(fn=cmd_repro)

    be = sub.add_parser("bench", help="time forward passes")
    be.add_argument("--frames", type=int, default=20)
    be.set_defaults(fn=cmd_bench)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValidationError, ValueError) as exc:
        return _fail(1, str(exc))
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        return _fail(2, f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
