"""On-disk raster formats.

RGB images are binary PPM (P6, 8-bit).  Float rasters (depth, normals)
use a minimal "RASTF32" container: magic line, ASCII "width height
channels" line, then little-endian float32 in row-major order with the
origin at the top-left.
"""

import numpy as np

from .geometry import DomainError

RAST_MAGIC = b"RASTF32\n"


def write_ppm(path, rgb):
    """rgb (H,W,3) floats in [0,1], rounded to 8 bits."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise DomainError("expected an (H,W,3) rgb raster")
    data = np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)
    h, w, _ = data.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(data.tobytes())


def read_ppm(path):
    """Returns the image as (H,W,3) float64 in [0,1]."""
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P6"):
        raise DomainError(f"{path}: not a binary PPM")
    # header: magic, dimensions, maxval; comments are not emitted by us
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while data[pos : pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    img = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos)
    return img.reshape(h, w, 3).astype(np.float64) / maxval


def write_rast(path, arr):
    """arr (H,W) or (H,W,C) floats; stored as float32."""
    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.ndim != 3:
        raise DomainError("expected an (H,W) or (H,W,C) raster")
    h, w, c = arr.shape
    with open(path, "wb") as f:
        f.write(RAST_MAGIC)
        f.write(f"{w} {h} {c}\n".encode())
        f.write(arr.astype("<f4").tobytes())


def read_rast(path):
    """Returns (H,W) for single-channel files, else (H,W,C), float64."""
    with open(path, "rb") as f:
        magic = f.read(len(RAST_MAGIC))
        if magic != RAST_MAGIC:
            raise DomainError(f"{path}: not a RASTF32 raster")
        w, h, c = (int(tok) for tok in f.readline().split())
        arr = np.frombuffer(f.read(w * h * c * 4), dtype="<f4").reshape(h, w, c)
    arr = arr.astype(np.float64)
    return arr[..., 0] if c == 1 else arr
