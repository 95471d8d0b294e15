"""Command line entry point.

Subcommands: gen-scene, train, eval, estimate-mf, sweep.  Exit code 1 for
configuration problems (with file:line diagnostics), 2 for runtime
failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import config as cfgmod
from . import rasters
from .field import load_checkpoint
from .geometry import DomainError, decompose_zyx
from .metrics import MetricsReport
from .mf import find_manhattan_frame
from .scenegen import build_scene, generate_trajectory, load_scene_dir, render_gt_view, write_scene_dir
from .trainer import evaluate, train

_MODE_ALIASES = {"baseline": "baseline", "ours": "ours", "ours-mf-known": "ours_mf_known", "ours_mf_known": "ours_mf_known"}


def _build_parser():
    p = argparse.ArgumentParser(prog="mfnerf", description="Manhattan-prior voxel radiance fields")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-scene", help="generate a synthetic room with GT views")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train a field on a generated scene")
    t.add_argument("--config", required=True)
    t.add_argument("--scene", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--mode", choices=sorted(_MODE_ALIASES), default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--threads", type=int, default=None)
    t.add_argument("--no-ort", action="store_true", help="ablation: drop the orthogonality loss")
    t.add_argument("--no-ctr", action="store_true", help="ablation: drop the cluster-tightness loss")
    t.add_argument("--no-delay", action="store_true", help="ablation: no warmup delay")
    t.add_argument("--no-ramp", action="store_true", help="ablation: switch weights on instantly")
    t.add_argument("--progress", type=int, default=0, help="print a line every N steps")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a scene's test split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--scene", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--config", default=None)

    m = sub.add_parser("estimate-mf", help="recover the Manhattan frame from normals")
    m.add_argument("--normals", required=True, help="RASTF32 normal raster or 'x y z' text file")
    m.add_argument("--k", type=int, default=30)
    m.add_argument("--t", type=float, default=0.05)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", default=None, help="write the JSON report here as well")

    s = sub.add_parser("sweep", help="run gen-scene+train+eval over a list of config values")
    s.add_argument("--config", required=True)
    s.add_argument("--param", required=True, help="dotted key, e.g. scene.mf_offset_yaw")
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--out", required=True)
    s.add_argument("--progress", type=int, default=0)
    return p


def _gen_scene(cfg, out_dir):
    spec = cfgmod.scene_spec_from(cfg)
    scene = build_scene(spec)
    s = cfg["scene"]
    cams = generate_trajectory(
        scene,
        s["n_views"],
        seed=np.random.SeedSequence([s["seed"], 1]),
        width=s["image_width"],
        height=s["image_height"],
        fov_deg=s["fov_deg"],
        margin=s["camera_margin"],
    )
    views = [render_gt_view(scene, cam) for cam in cams]
    os.makedirs(out_dir, exist_ok=True)
    write_scene_dir(out_dir, scene, cams, views)
    cfgmod.write_config(cfg, os.path.join(out_dir, "scene.ini"))
    return scene


def _apply_train_flags(cfg, args):
    if args.mode is not None:
        cfg["train"]["mode"] = _MODE_ALIASES[args.mode]
    if args.seed is not None:
        cfg["train"]["seed"] = args.seed
    threads = args.threads
    if threads is None and os.environ.get("MF_THREADS"):
        threads = int(os.environ["MF_THREADS"])
    if threads is not None:
        cfg["train"]["threads"] = threads
    if args.no_ort:
        cfg["losses"]["lambda_ort"] = 0.0
    if args.no_ctr:
        cfg["losses"]["lambda_ctr"] = 0.0
    if args.no_delay:
        cfg["losses"]["delay_steps"] = 0
    if args.no_ramp:
        cfg["losses"]["ramp_steps"] = 0
    return cfg


def _load_normals_file(path):
    with open(path, "rb") as f:
        magic = f.read(len(rasters.RAST_MAGIC))
    if magic == rasters.RAST_MAGIC:
        arr = rasters.read_rast(path)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise DomainError(f"{path}: expected a 3-channel normal raster")
        flat = arr.reshape(-1, 3)
    else:
        flat = np.loadtxt(path, dtype=np.float64).reshape(-1, 3)
    norms = np.linalg.norm(flat, axis=1)
    keep = norms > 0.5
    if not keep.any():
        raise DomainError(f"{path}: no valid normals")
    return flat[keep] / norms[keep][:, None]


def _estimate_mf(args):
    normals = _load_normals_file(args.normals)
    triplet, R = find_manhattan_frame(normals, args.k, args.t, seed=args.seed)
    yaw, pitch, roll = decompose_zyx(R.T)
    report = {
        "rotation": R.tolist(),
        "yaw_deg": float(np.degrees(yaw)),
        "pitch_deg": float(np.degrees(pitch)),
        "roll_deg": float(np.degrees(roll)),
        "cluster_sizes": list(triplet.sizes()),
        "n_normals": int(len(normals)),
    }
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
    return 0


def _eval(args):
    cfg = cfgmod.load_config(args.config) if args.config else cfgmod.default_config()
    tc = cfgmod.train_config_from(cfg)
    vfield = load_checkpoint(args.checkpoint)
    scene = load_scene_dir(args.scene)
    os.makedirs(args.out, exist_ok=True)
    dump = os.path.join(args.out, "renders") if cfg["eval"]["save_views"] else None
    report = evaluate(vfield, scene, tc, out_dir=dump)
    with open(os.path.join(args.out, "metrics.json"), "w") as f:
        f.write(report.to_json())
    print(report.to_json(), end="")
    return 0


_SWEEP_FIELDS = [
    "psnr",
    "ssim",
    "normal_median_err",
    "depth_mae",
    "depth_rmse",
    "mf_yaw_err",
    "mf_pitch_err",
    "mf_roll_err",
    "mf_rot_err",
]
_MEDIAN_FIELDS = {"mf_yaw_err", "mf_pitch_err", "mf_roll_err"}


def _sweep(args):
    base = cfgmod.load_config(args.config)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise cfgmod.ConfigError("--values is empty")
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for i, value in enumerate(values):
        cfg = json.loads(json.dumps(base))  # deep copy; tuples degrade to lists
        for sec in cfg:
            for k, v in cfg[sec].items():
                if isinstance(v, list):
                    cfg[sec][k] = tuple(v)
        cfgmod.set_key(cfg, args.param, value)
        tag = f"{i:02d}_{value.replace('.', 'p').replace('-', 'm')}"
        scene_dir = os.path.join(args.out, f"{tag}_scene")
        run_dir = os.path.join(args.out, f"{tag}_run")
        _gen_scene(cfg, scene_dir)
        _, report, _ = train(cfgmod.train_config_from(cfg), scene_dir, run_dir, progress_every=args.progress)
        rows.append((value, report))
        print(f"{args.param}={value}: psnr={report.psnr:.3f} rot_err={report.mf_rot_err:.3f}", flush=True)

    csv_path = os.path.join(args.out, "sweep.csv")
    with open(csv_path, "w") as f:
        f.write("value," + ",".join(_SWEEP_FIELDS) + "\n")
        for value, rep in rows:
            f.write(value + "," + ",".join(f"{getattr(rep, k):.12g}" for k in _SWEEP_FIELDS) + "\n")
        agg = []
        for k in _SWEEP_FIELDS:
            vals = np.array([getattr(rep, k) for _, rep in rows])
            agg.append(float(np.median(vals)) if k in _MEDIAN_FIELDS else float(np.mean(vals)))
        f.write("aggregate," + ",".join(f"{a:.12g}" for a in agg) + "\n")
    print(f"wrote {csv_path}")
    return 0


def run(argv):
    args = _build_parser().parse_args(argv)
    if args.command == "gen-scene":
        cfg = cfgmod.load_config(args.config)
        _gen_scene(cfg, args.out)
        print(f"scene written to {args.out}")
        return 0
    if args.command == "train":
        cfg = _apply_train_flags(cfgmod.load_config(args.config), args)
        _, report, csv_path = train(cfgmod.train_config_from(cfg), args.scene, args.out, progress_every=args.progress)
        print(report.to_json(), end="")
        return 0
    if args.command == "eval":
        return _eval(args)
    if args.command == "estimate-mf":
        return _estimate_mf(args)
    if args.command == "sweep":
        return _sweep(args)
    raise AssertionError("unreachable")


def main(argv=None):
    try:
        return run(sys.argv[1:] if argv is None else argv)
    except cfgmod.ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1
    except MemoryError:
        raise
    except Exception as err:  # runtime failures map to exit 2
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
