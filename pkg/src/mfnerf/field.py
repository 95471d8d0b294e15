"""Dense differentiable voxel radiance field.

The grid stores raw (pre-activation) parameters at its vertices:
density goes through softplus, color through sigmoid.  Rendering follows
the standard emission-absorption quadrature over stratified samples; the
hot loops live in mfnerf.kernels with a numpy fallback.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .geometry import DomainError, Ray

CHECKPOINT_MAGIC = b"VXFLD1\n"


@dataclass
class RenderResult:
    color: np.ndarray  # rgb in [0,1]
    depth: float
    opacity: float


class VoxelField:
    """Trainable grid of raw densities and colors over an axis-aligned box."""

    def __init__(self, resolution, bbox_min, bbox_max, dtype=np.float64, params=None):
        self.resolution = tuple(int(n) for n in resolution)
        if any(n < 2 for n in self.resolution):
            raise DomainError("grid needs at least 2 vertices per axis")
        self.bbox_min = np.asarray(bbox_min, dtype=np.float64)
        self.bbox_max = np.asarray(bbox_max, dtype=np.float64)
        if not np.all(self.bbox_min < self.bbox_max):
            raise DomainError("bbox_min must be componentwise below bbox_max")
        shape = self.resolution + (4,)
        if params is None:
            self.params = np.zeros(shape, dtype=dtype)
        else:
            if params.shape != shape:
                raise DomainError(f"params shape {params.shape} != {shape}")
            self.params = np.ascontiguousarray(params, dtype=dtype)
        if not np.all(np.isfinite(self.params)):
            raise DomainError("grid parameters must be finite")

    # channel 0 is raw density, channels 1:4 raw color
    @property
    def density_raw(self):
        return self.params[..., 0]

    @property
    def color_raw(self):
        return self.params[..., 1:4]

    @classmethod
    def initialized(cls, resolution, bbox_min, bbox_max, rng, density_bias=-2.0, noise=0.1, dtype=np.float64):
        field = cls(resolution, bbox_min, bbox_max, dtype=dtype)
        field.params[...] = rng.uniform(-noise, noise, size=field.params.shape)
        field.params[..., 0] += density_bias
        return field

    def kernel_name(self):
        return kernels.backend_name(self.params)


def sample_field(field: VoxelField, p):
    """(sigma, rgb) at point(s) p; zero density and black outside the bbox."""
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    pts = np.atleast_2d(p)
    from .kernels import _render_np

    idx, frac, inside = _render_np._locate(field.bbox_min, field.bbox_max, field.resolution, pts)
    raw = _render_np._interp_raw(field.params, idx, frac, inside)
    sigma = _render_np._softplus(raw[..., 0])
    rgb = _render_np._sigmoid(raw[..., 1:4])
    sigma[~inside] = 0.0
    rgb[~inside] = 0.0
    if single:
        return float(sigma[0]), rgb[0]
    return sigma, rgb


def stratified_t_vals(n_rays, n_samples, t_near, t_far, rng=None, jitter=None):
    """Sample distances, one stratum per sample, jittered within each bin.

    jitter may be an (n_rays, n_samples) array, a scalar in [0,1), or None
    to draw from rng.  jitter=0.5 gives deterministic midpoints.
    """
    if not (0 < t_near < t_far):
        raise DomainError("need 0 < t_near < t_far")
    if n_samples < 2:
        raise DomainError("need at least 2 samples per ray")
    if jitter is None:
        if rng is None:
            jitter = 0.5
        else:
            jitter = rng.random((n_rays, n_samples))
    jitter = np.broadcast_to(np.asarray(jitter, dtype=np.float64), (n_rays, n_samples))
    bins = (np.arange(n_samples, dtype=np.float64) + jitter) / n_samples
    return t_near + bins * (t_far - t_near)


def render_rays(field: VoxelField, origins, dirs, t_vals, background=(0.0, 0.0, 0.0), t_far=None, want_cache=False):
    """Batched render. t_vals (N,S) come from stratified_t_vals.

    Returns (colors, depths, opacities) plus the kernel cache when
    want_cache is set (needed for render_backward).
    """
    if t_far is None:
        t_far = float(t_vals.max())
    mod = kernels.backend_for(field.params)
    colors, depths, opac, cache = mod.forward(
        field.params, field.bbox_min, field.bbox_max, origins, dirs, t_vals, t_far, np.asarray(background, dtype=np.float64)
    )
    if want_cache:
        return colors, depths, opac, (mod, cache, t_vals, t_far, np.asarray(background, dtype=np.float64))
    return colors, depths, opac


def render_backward(field: VoxelField, cache, grad_color, grad_depth=None, grad_opac=None):
    """Accumulate dLoss/dparams from upstream gradients on render outputs."""
    mod, kcache, t_vals, t_far, background = cache
    n = t_vals.shape[0]
    if grad_depth is None:
        grad_depth = np.zeros(n)
    if grad_opac is None:
        grad_opac = np.zeros(n)
    return mod.backward(field.params, kcache, t_vals, t_far, background, grad_color, grad_depth, grad_opac)


def render_ray(field: VoxelField, ray: Ray, n_samples, t_near, t_far, rng=None, background=(0.0, 0.0, 0.0), jitter=None):
    """Render a single ray; deterministic given the rng state."""
    t_vals = stratified_t_vals(1, n_samples, t_near, t_far, rng=rng, jitter=jitter)
    colors, depths, opac = render_rays(
        field,
        np.asarray(ray.origin, dtype=np.float64)[None],
        np.asarray(ray.direction, dtype=np.float64)[None],
        t_vals,
        background=background,
        t_far=t_far,
    )
    return RenderResult(color=colors[0], depth=float(depths[0]), opacity=float(opac[0]))


def save_checkpoint(field: VoxelField, path):
    """VXFLD1 format: ASCII header, then x-fastest little-endian float64
    density values followed by the three color channels, each x-fastest."""
    nx, ny, nz = field.resolution
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(f"{nx} {ny} {nz}\n".encode())
        bbox = np.concatenate([field.bbox_min, field.bbox_max])
        f.write((" ".join(repr(float(v)) for v in bbox) + "\n").encode())
        f.write(np.asarray(field.density_raw, dtype="<f8").ravel(order="F").tobytes())
        color = np.asarray(field.color_raw, dtype="<f8")
        for c in range(3):
            f.write(color[..., c].ravel(order="F").tobytes())


def load_checkpoint(path, dtype=np.float64):
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise DomainError(f"{path}: not a VXFLD1 checkpoint")
        nx, ny, nz = (int(tok) for tok in f.readline().split())
        bbox = np.array([float(tok) for tok in f.readline().split()])
        if bbox.size != 6:
            raise DomainError(f"{path}: malformed bbox header")
        count = nx * ny * nz
        density = np.frombuffer(f.read(count * 8), dtype="<f8").reshape((nx, ny, nz), order="F")
        color = np.empty((nx, ny, nz, 3))
        for c in range(3):
            color[..., c] = np.frombuffer(f.read(count * 8), dtype="<f8").reshape((nx, ny, nz), order="F")
    params = np.concatenate([density[..., None], color], axis=-1)
    return VoxelField((nx, ny, nz), bbox[:3], bbox[3:], dtype=dtype, params=params.astype(dtype))
