"""Evaluation metrics: image quality, geometry errors, frame-angle errors.

The recovered Manhattan frame is only identifiable modulo the 24 cube
rotations, so angle errors are reported after aligning the prediction to
the reference over that group.  Rotations passed to mf_angle_errors use
the frame-to-world convention (columns are the frame axes in world
coordinates).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .geometry import DomainError, cube_rotations, decompose_zyx, geodesic_deg

PSNR_CAP_DB = 99.0
_GRAY = np.array([0.299, 0.587, 0.114])


@dataclass
class MetricsReport:
    psnr: float
    ssim: float
    normal_median_err: float
    depth_mae: float
    depth_rmse: float
    mf_yaw_err: float
    mf_pitch_err: float
    mf_roll_err: float
    mf_rot_err: float  # geodesic distance mod cube symmetry, degrees

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


def psnr(a, b):
    """10 log10(1/MSE) for rasters in [0,1]; identical rasters cap at 99 dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DomainError("raster shapes differ")
    mse = float(np.mean((a - b) ** 2))
    if mse <= 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, float(10.0 * np.log10(1.0 / mse)))


def _gaussian_window(size=11, sigma=1.5):
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _window_means(img, window):
    """Valid-mode correlation of img with the window."""
    k = window.shape[0]
    view = np.lib.stride_tricks.sliding_window_view(img, (k, k))
    return np.einsum("ijkl,kl->ij", view, window)


def ssim(a, b, window_size=11, sigma=1.5, k1=0.01, k2=0.03, dynamic_range=1.0):
    """Mean local SSIM on the grayscale images, Gaussian 11x11 window."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DomainError("raster shapes differ")
    if a.ndim == 3:
        a = a @ _GRAY
        b = b @ _GRAY
    if min(a.shape) < window_size:
        raise DomainError("raster smaller than the SSIM window")
    w = _gaussian_window(window_size, sigma)
    c1 = (k1 * dynamic_range) ** 2
    c2 = (k2 * dynamic_range) ** 2
    mu_a = _window_means(a, w)
    mu_b = _window_means(b, w)
    var_a = _window_means(a * a, w) - mu_a**2
    var_b = _window_means(b * b, w) - mu_b**2
    cov = _window_means(a * b, w) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def normal_median_angular_error(pred, gt, valid=None):
    """Median arccos angle in degrees between unit normal rasters."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
    if pred.shape != gt.shape:
        raise DomainError("raster shapes differ")
    if valid is None:
        valid = np.linalg.norm(pred, axis=1) > 0.5
    else:
        valid = np.asarray(valid).reshape(-1)
    if not valid.any():
        raise DomainError("no valid pixels")
    dots = np.clip(np.einsum("ij,ij->i", pred[valid], gt[valid]), -1.0, 1.0)
    return float(np.degrees(np.median(np.arccos(dots))))


def depth_errors(pred, gt):
    """(MAE, RMSE) between depth rasters."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DomainError("raster shapes differ")
    d = pred - gt
    return float(np.mean(np.abs(d))), float(np.sqrt(np.mean(d**2)))


def align_mod_cube(R_pred, R_gt):
    """Cube rotation S minimizing the geodesic distance of R_pred @ S to R_gt."""
    best_s, best_d = None, None
    for S in cube_rotations():
        d = geodesic_deg(np.asarray(R_pred) @ S, R_gt)
        if best_d is None or d < best_d:
            best_d, best_s = d, S
    return best_s, best_d


def mf_angle_errors(R_pred, R_gt):
    """Absolute yaw/pitch/roll errors in degrees after cube-symmetry
    alignment; the residual R_gt^T R_pred S is decomposed as ZYX."""
    S, _ = align_mod_cube(R_pred, R_gt)
    residual = np.asarray(R_gt).T @ np.asarray(R_pred) @ S
    yaw, pitch, roll = decompose_zyx(residual)
    return (
        abs(float(np.degrees(yaw))),
        abs(float(np.degrees(pitch))),
        abs(float(np.degrees(roll))),
    )


def mf_rotation_error(R_pred, R_gt):
    """Geodesic distance in degrees, minimized over the cube group."""
    _, d = align_mod_cube(R_pred, R_gt)
    return float(d)
