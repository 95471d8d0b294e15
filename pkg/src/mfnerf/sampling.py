"""Pixel-triplet batch construction.

A triplet triangle is an anchor pixel together with its left and upper
neighbors, optionally separated by a gap of g pixels (a "size g" triangle
uses offsets of g+1).  One third of the batch are anchors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import DomainError


@dataclass(frozen=True)
class PixelTriplet:
    camera_id: int
    anchor: tuple
    gap: int = 0

    @property
    def left(self):
        return (self.anchor[0] - 1 - self.gap, self.anchor[1])

    @property
    def up(self):
        return (self.anchor[0], self.anchor[1] - 1 - self.gap)

    def pixels(self):
        return (self.anchor, self.left, self.up)


def sample_triplet_batch(rng, cameras, batch_size, gap=0):
    """batch_size/3 triplets with anchors uniform over the valid anchor
    domain of all cameras (u, v >= 1+gap so the neighbors stay in-bounds)."""
    if batch_size % 3 != 0 or batch_size < 3:
        raise DomainError("batch_size must be a positive multiple of 3")
    if gap < 0:
        raise DomainError("gap must be non-negative")
    domains = []
    for cam in cameras:
        du = cam.width - 1 - gap
        dv = cam.height - 1 - gap
        if du <= 0 or dv <= 0:
            raise DomainError("image too small for the requested gap")
        domains.append(du * dv)
    cum = np.cumsum(domains)
    n = batch_size // 3
    flat = rng.integers(0, cum[-1], size=n)
    out = []
    for f in flat:
        cam_id = int(np.searchsorted(cum, f, side="right"))
        local = int(f - (cum[cam_id - 1] if cam_id else 0))
        du = cameras[cam_id].width - 1 - gap
        u = 1 + gap + local % du
        v = 1 + gap + local // du
        out.append(PixelTriplet(camera_id=cam_id, anchor=(int(u), int(v)), gap=gap))
    return out


def sample_ray_batch(rng, cameras, batch_size):
    """Plain random rays over all pixels of all cameras (baseline mode)."""
    if batch_size < 1:
        raise DomainError("batch_size must be positive")
    counts = np.array([cam.width * cam.height for cam in cameras])
    cum = np.cumsum(counts)
    flat = rng.integers(0, cum[-1], size=batch_size)
    cam_ids = np.searchsorted(cum, flat, side="right")
    out = []
    for f, cid in zip(flat, cam_ids):
        local = int(f - (cum[cid - 1] if cid else 0))
        w = cameras[cid].width
        out.append((int(cid), int(local % w), int(local // w)))
    return out


def triplet_pixel_arrays(triplets):
    """(camera_ids (M,), us (M,3), vs (M,3)) for the anchor/left/up pixels."""
    cam_ids = np.array([t.camera_id for t in triplets], dtype=np.int64)
    us = np.array([[t.anchor[0], t.left[0], t.up[0]] for t in triplets], dtype=np.int64)
    vs = np.array([[t.anchor[1], t.left[1], t.up[1]] for t in triplets], dtype=np.int64)
    return cam_ids, us, vs
