"""Training loop: photometric + Manhattan self-supervision on a voxel field.

Per step: sample pixel triplets, render, derive explicit normals from the
rendered depths, cluster them (detached), select/merge the orthogonal
triplet, evaluate the weighted losses, and backpropagate hand-derived
adjoints into the grid.  Single-threaded by design so runs are
byte-reproducible; evaluation rendering may fan out across views.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import losses as L
from . import rasters
from .clustering import kmeans_spherical
from .field import VoxelField, render_backward, render_rays, save_checkpoint, stratified_t_vals
from .geometry import DomainError, normals_backward, normals_from_triplets, rays_for_pixels
from .losses import LossWeights
from .metrics import (
    MetricsReport,
    depth_errors,
    mf_angle_errors,
    mf_rotation_error,
    normal_median_angular_error,
    psnr,
    ssim,
)
from .mf import find_manhattan_frame, merge_with_opposites, select_orthogonal_triplet
from .sampling import sample_triplet_batch, triplet_pixel_arrays
from .scenegen import load_scene_dir

MODES = ("baseline", "ours", "ours_mf_known")


@dataclass
class TrainConfig:
    steps: int = 3000
    batch_size: int = 768
    lr: float = 1e-2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-15
    grad_clip_norm: float = 0.05  # <= 0 disables
    opacity_reg: float = 1e-3
    cosine_anneal: bool = True
    weights: LossWeights = dc_field(default_factory=LossWeights)
    k_train: int = 20
    k_eval: int = 30
    merge_t: float = 0.05
    gap: int = 0
    n_samples_per_ray: int = 64
    grid_resolution: int = 48
    t_near: float = 0.05
    t_far: float = 0.0  # <= 0: auto from the room diagonal
    seed: int = 0
    mode: str = "ours"
    mf_known_axes: np.ndarray | None = None  # default: scene mf_offset columns
    precision: str = "f64"
    background: tuple = (0.0, 0.0, 0.0)
    kmeans_iters_train: int = 50
    kmeans_iters_eval: int = 200
    density_bias: float = -2.0
    save_every: int = 0  # 0: final checkpoint only
    threads: int = 1

    def __post_init__(self):
        if self.steps < 1:
            raise DomainError("steps must be >= 1")
        if self.batch_size < 3 or self.batch_size % 3 != 0:
            raise DomainError("batch_size must be a positive multiple of 3")
        if self.lr <= 0:
            raise DomainError("lr must be positive")
        if self.mode not in MODES:
            raise DomainError(f"mode must be one of {MODES}")
        if self.precision not in ("f32", "f64"):
            raise DomainError("precision must be f32 or f64")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def like(cls, params):
        return cls(m=np.zeros_like(params, dtype=np.float64), v=np.zeros_like(params, dtype=np.float64))


def adam_step(params, grads, state: AdamState, lr_t, cfg: TrainConfig):
    """Bias-corrected Adam; eps sits inside the denominator after sqrt.

    Raises NonFiniteLossError on non-finite gradients so the caller can
    skip the step without corrupting the moment accumulators.
    """
    if params.shape != grads.shape:
        raise DomainError("parameter/gradient shape mismatch")
    if not np.all(np.isfinite(grads)):
        raise L.NonFiniteLossError("non-finite gradient")
    state.t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    state.m = b1 * state.m + (1.0 - b1) * grads
    state.v = b2 * state.v + (1.0 - b2) * grads * grads
    m_hat = state.m / (1.0 - b1**state.t)
    v_hat = state.v / (1.0 - b2**state.t)
    params -= (lr_t * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)).astype(params.dtype)
    return params, state


def cosine_lr(step, total_steps, lr0):
    return lr0 * 0.5 * (1.0 + np.cos(np.pi * step / max(total_steps, 1)))


def clip_grad_norm(grads, max_norm):
    if max_norm is None or max_norm <= 0:
        return grads
    n = float(np.linalg.norm(grads))
    if n > max_norm:
        grads *= max_norm / n
    return grads


def field_bbox_for_room(room_half_extents, margin=0.25):
    """Cube covering the room under any rotation offset, so the grid
    resolution does not change across offset sweeps."""
    r = float(np.linalg.norm(np.asarray(room_half_extents, dtype=np.float64))) + margin
    return np.array([-r, -r, -r]), np.array([r, r, r])


def _precompute_rays(cameras):
    """(V,3) origins and (V,H,W,3) directions for a camera list."""
    dirs = []
    for cam in cameras:
        us, vs = np.meshgrid(np.arange(cam.width), np.arange(cam.height))
        _, d = rays_for_pixels(cam, us.ravel(), vs.ravel())
        dirs.append(d.reshape(cam.height, cam.width, 3))
    origins = np.stack([cam.center for cam in cameras])
    return origins, np.stack(dirs)


class _TripletStep:
    """Manhattan-loss evaluation for one batch; keeps what backward needs."""

    def __init__(self, cfg, rng_cluster, mf_axes):
        self.cfg = cfg
        self.rng_cluster = rng_cluster
        self.mf_axes = mf_axes

    def __call__(self, anchor_origins, dirs, depths):
        cfg = self.cfg
        pts = anchor_origins + depths[:, None] * dirs
        x1, x2, x3 = pts[0::3], pts[1::3], pts[2::3]
        normals, valid, ncache = normals_from_triplets(anchor_origins[0::3], x1, x2, x3)
        n_valid = int(valid.sum())
        if n_valid < max(cfg.k_train, 3):
            return None
        nvec = normals[valid]
        clusters = kmeans_spherical(
            nvec, cfg.k_train, max_iters=cfg.kmeans_iters_train, seed=self.rng_cluster
        )
        merged = merge_with_opposites(clusters, select_orthogonal_triplet(clusters), cfg.merge_t)
        members = [s[:, None] * nvec[i] for s, i in zip(merged.signs, merged.indices)]

        l_ctr, g_ctr = L.centroid_loss_with_grad(members)
        l_ort, g_ort = L.orthogonality_loss_with_grad(members)
        l_man, g_man = (None, None)
        if cfg.mode == "ours_mf_known":
            l_man, g_man = L.mf_known_loss_with_grad(members, self.mf_axes)
        self._cache = (merged, nvec, valid, ncache, g_ctr, g_ort, g_man, dirs)
        return l_ctr, l_ort, l_man

    def backward(self, lam_ctr, lam_ort, lam_man):
        """Depth gradients (one per ray) for the weighted Manhattan losses."""
        merged, nvec, valid, ncache, g_ctr, g_ort, g_man, dirs = self._cache
        gn = np.zeros_like(nvec)
        for i in range(3):
            g = lam_ctr * g_ctr[i] + lam_ort * g_ort[i]
            if g_man is not None:
                g = g + lam_man * g_man[i]
            np.add.at(gn, merged.indices[i], merged.signs[i][:, None] * g)
        full = np.zeros((valid.size, 3))
        full[valid] = gn
        gx1, gx2, gx3 = normals_backward(ncache, full)
        gd = np.empty(valid.size * 3)
        gd[0::3] = np.einsum("ij,ij->i", dirs[0::3], gx1)
        gd[1::3] = np.einsum("ij,ij->i", dirs[1::3], gx2)
        gd[2::3] = np.einsum("ij,ij->i", dirs[2::3], gx3)
        return gd


def train(cfg: TrainConfig, scene_dir, out_dir, progress_every=0):
    """Run the full pipeline; writes checkpoint.vxfld, loss.csv and
    metrics.json under out_dir and returns (field, MetricsReport, csv)."""
    scene = load_scene_dir(scene_dir)
    os.makedirs(out_dir, exist_ok=True)
    train_ids = scene.train_ids
    cams = [scene.cameras[i] for i in train_ids]
    tgt_rgb = scene.rgb[train_ids]

    room_half = np.asarray(scene.meta["room_half_extents"])
    bbox_min, bbox_max = field_bbox_for_room(room_half)
    t_far = cfg.t_far if cfg.t_far > 0 else 2.0 * float(np.linalg.norm(room_half)) + 0.3
    dtype = np.float64 if cfg.precision == "f64" else np.float32

    ss = np.random.SeedSequence(cfg.seed)
    rng_init, rng_sample, rng_cluster = (np.random.default_rng(s) for s in ss.spawn(3))
    res = (cfg.grid_resolution,) * 3
    vfield = VoxelField.initialized(res, bbox_min, bbox_max, rng_init, density_bias=cfg.density_bias, dtype=dtype)
    state = AdamState.like(vfield.params)

    mf_axes = cfg.mf_known_axes
    if mf_axes is None:
        mf_axes = np.asarray(scene.meta["mf_offset"]).T  # rows: frame axes in world
    origins_all, dirs_all = _precompute_rays(cams)
    manhattan = _TripletStep(cfg, rng_cluster, mf_axes)

    csv_path = os.path.join(out_dir, "loss.csv")
    csv_rows = ["step,l_img,l_ctr,l_ort,total"]
    skip_streak = 0
    for step in range(cfg.steps):
        triplets = sample_triplet_batch(rng_sample, cams, cfg.batch_size, cfg.gap)
        cam_ids, us, vs = triplet_pixel_arrays(triplets)
        b_cam = np.repeat(cam_ids, 3)
        b_us = us.reshape(-1)
        b_vs = vs.reshape(-1)
        origins = origins_all[b_cam]
        dirs = dirs_all[b_cam, b_vs, b_us]
        targets = tgt_rgb[b_cam, b_vs, b_us]

        t_vals = stratified_t_vals(cfg.batch_size, cfg.n_samples_per_ray, cfg.t_near, t_far, rng=rng_sample)
        colors, depths, opac, cache = render_rays(
            vfield, origins, dirs, t_vals, background=cfg.background, t_far=t_far, want_cache=True
        )

        l_img, g_color = L.photometric_loss_with_grad(colors, targets)
        l_op, g_opac = L.opacity_regularizer_with_grad(opac)
        g_opac = cfg.opacity_reg * g_opac

        lam_ctr, lam_ort = L.ramp_weights(step, cfg.weights)
        lam_man = cfg.weights.lambda_man * L.ramp_factor(step, cfg.weights.delay_steps, cfg.weights.ramp_steps)
        active = cfg.mode != "baseline" and L.ramp_factor(step, cfg.weights.delay_steps, cfg.weights.ramp_steps) > 0

        l_ctr = l_ort = 0.0
        l_man = None
        g_depth = None
        if active:
            out = manhattan(origins, dirs, depths)
            if out is not None:
                l_ctr, l_ort, l_man = out
                g_depth = manhattan.backward(lam_ctr, lam_ort, lam_man)

        try:
            report = L.total_loss(
                l_img, l_ctr, l_ort, (lam_ctr, lam_ort), l_man=l_man, lambda_man_eff=lam_man
            )
            objective = report.total + cfg.opacity_reg * l_op
            if not np.isfinite(objective):
                raise L.NonFiniteLossError(f"objective={objective}")
            grads = render_backward(vfield, cache, g_color, g_depth, g_opac)
            grads = clip_grad_norm(grads, cfg.grad_clip_norm)
            lr_t = cosine_lr(step, cfg.steps, cfg.lr) if cfg.cosine_anneal else cfg.lr
            adam_step(vfield.params, grads.astype(vfield.params.dtype, copy=False), state, lr_t, cfg)
        except L.NonFiniteLossError as err:
            skip_streak += 1
            if skip_streak > 10:
                raise DomainError(f"aborting: {skip_streak} consecutive non-finite steps ({err})")
            csv_rows.append(f"{step},nan,nan,nan,nan")
            continue
        skip_streak = 0

        csv_rows.append(
            f"{step},{l_img:.12g},{l_ctr:.12g},{l_ort:.12g},{objective:.12g}"
        )
        if progress_every and (step + 1) % progress_every == 0:
            print(f"step {step + 1}/{cfg.steps} l_img={l_img:.5f} total={objective:.5f}", flush=True)
        if cfg.save_every and (step + 1) % cfg.save_every == 0:
            save_checkpoint(vfield, os.path.join(out_dir, f"checkpoint_{step + 1:06d}.vxfld"))

    with open(csv_path, "w") as f:
        f.write("\n".join(csv_rows) + "\n")
    ckpt_path = os.path.join(out_dir, "checkpoint.vxfld")
    save_checkpoint(vfield, ckpt_path)

    report = evaluate(vfield, scene, cfg, out_dir=None)
    with open(os.path.join(out_dir, "metrics.json"), "w") as f:
        f.write(report.to_json())
    return vfield, report, csv_path


def render_view(vfield: VoxelField, camera, cfg: TrainConfig, t_far=None, chunk=8192):
    """Full-image render with deterministic midpoint sampling."""
    if t_far is None:
        t_far = cfg.t_far if cfg.t_far > 0 else float(np.linalg.norm(vfield.bbox_max - vfield.bbox_min))
    us, vs = np.meshgrid(np.arange(camera.width), np.arange(camera.height))
    origins, dirs = rays_for_pixels(camera, us.ravel(), vs.ravel())
    n = origins.shape[0]
    colors = np.empty((n, 3))
    depths = np.empty(n)
    opacs = np.empty(n)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        t_vals = stratified_t_vals(hi - lo, cfg.n_samples_per_ray, cfg.t_near, t_far, jitter=0.5)
        c, d, o = render_rays(vfield, origins[lo:hi], dirs[lo:hi], t_vals, background=cfg.background, t_far=t_far)
        colors[lo:hi] = c
        depths[lo:hi] = d
        opacs[lo:hi] = o
    h, w = camera.height, camera.width
    return colors.reshape(h, w, 3), depths.reshape(h, w), opacs.reshape(h, w)


def normals_from_depth(camera, depth, gap=0):
    """Per-pixel explicit normals from a rendered depth raster.

    Anchors need a left and an upper neighbor, so the first 1+gap rows and
    columns are invalid.  Returns (normals (H,W,3), valid (H,W)).
    """
    h, w = depth.shape
    g = gap + 1
    au, av = np.meshgrid(np.arange(g, w), np.arange(g, h))
    au = au.ravel()
    av = av.ravel()

    def points(us, vs):
        o, d = rays_for_pixels(camera, us, vs)
        return o + depth[vs, us][:, None] * d

    x1 = points(au, av)
    x2 = points(au - g, av)
    x3 = points(au, av - g)
    origins = np.broadcast_to(camera.center, x1.shape)
    normals, valid, _ = normals_from_triplets(origins, x1, x2, x3)
    out = np.zeros((h, w, 3))
    mask = np.zeros((h, w), dtype=bool)
    out[av, au] = normals
    mask[av, au] = valid
    return out, mask


def evaluate(vfield: VoxelField, scene, cfg: TrainConfig, out_dir=None):
    """Test-split metrics; optionally dump renders under out_dir."""
    test_ids = scene.test_ids
    t_far = cfg.t_far if cfg.t_far > 0 else 2.0 * float(np.linalg.norm(scene.meta["room_half_extents"])) + 0.3

    def one_view(i):
        cam = scene.cameras[i]
        rgb, depth, opac = render_view(vfield, cam, cfg, t_far=t_far)
        normals, valid = normals_from_depth(cam, depth, gap=0)
        return rgb, depth, opac, normals, valid

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(one_view, test_ids))
    else:
        results = [one_view(i) for i in test_ids]

    psnrs, ssims = [], []
    pred_n, gt_n = [], []
    pred_d, gt_d = [], []
    for (rgb, depth, opac, normals, valid), vid in zip(results, test_ids):
        cam_gt_rgb = scene.rgb[vid]
        psnrs.append(psnr(rgb, cam_gt_rgb))
        ssims.append(ssim(rgb, cam_gt_rgb))
        pred_d.append(depth.ravel())
        gt_d.append(scene.depth[vid].ravel())
        pred_n.append(normals[valid])
        gt_n.append(scene.normal[vid][valid])
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            base = os.path.join(out_dir, f"test_{vid:03d}")
            rasters.write_ppm(base + ".ppm", rgb)
            rasters.write_rast(base + "_depth.rast", depth)
            rasters.write_rast(base + "_normal.rast", normals)

    pred_n = np.concatenate(pred_n)
    gt_n = np.concatenate(gt_n)
    med_err = normal_median_angular_error(pred_n, gt_n, valid=np.ones(len(pred_n), dtype=bool))
    mae, rmse = depth_errors(np.concatenate(pred_d), np.concatenate(gt_d))

    _, R = find_manhattan_frame(pred_n, cfg.k_eval, cfg.merge_t, seed=0, max_iters=cfg.kmeans_iters_eval)
    Q = np.asarray(scene.meta["mf_offset"])
    yaw_e, pitch_e, roll_e = mf_angle_errors(R.T, Q)
    rot_e = mf_rotation_error(R.T, Q)

    return MetricsReport(
        psnr=float(np.mean(psnrs)),
        ssim=float(np.mean(ssims)),
        normal_median_err=med_err,
        depth_mae=mae,
        depth_rmse=rmse,
        mf_yaw_err=yaw_e,
        mf_pitch_err=pitch_e,
        mf_roll_err=roll_e,
        mf_rot_err=rot_e,
    )
