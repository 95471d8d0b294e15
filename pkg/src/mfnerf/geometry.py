"""Cameras, rays, surface points and explicit triplet normals.

Conventions used throughout the package:
  * world units are meters, vectors are float64 numpy arrays of shape (3,)
    (or (N, 3) for batches),
  * cameras are pinhole, x right / y down / z forward, `orientation` maps
    camera coordinates to world coordinates,
  * pixel (u, v) looks through the point (u + 0.5, v + 0.5) on the image
    plane (half-pixel centers),
  * depth is Euclidean distance along the unit ray direction, not z-depth.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

# Cross products of (near-)collinear triplets are dropped below this norm.
DEGENERATE_EPS = 1e-12


class DomainError(ValueError):
    """Raised when an operation is called outside its stated domain."""


def normalize(v):
    """Return v scaled to unit length. Raises DomainError on ~zero input."""
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n < 1e-15:
        raise DomainError("cannot normalize a zero vector")
    return v / n


def is_unit(v, tol=1e-9):
    return abs(np.linalg.norm(v) - 1.0) <= tol


def is_rotation(R, tol=1e-9):
    """True when R is orthogonal with determinant +1 (within tol)."""
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        return False
    err = np.linalg.norm(R.T @ R - np.eye(3))
    return err <= tol and abs(np.linalg.det(R) - 1.0) <= tol


def rot_x(angle_rad):
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=np.float64)


def rot_y(angle_rad):
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=np.float64)


def rot_z(angle_rad):
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=np.float64)


def euler_zyx(yaw_rad, pitch_rad, roll_rad):
    """R = Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    return rot_z(yaw_rad) @ rot_y(pitch_rad) @ rot_x(roll_rad)


def decompose_zyx(R):
    """Inverse of euler_zyx. Returns (yaw, pitch, roll) in radians."""
    R = np.asarray(R, dtype=np.float64)
    pitch = -np.arcsin(np.clip(R[2, 0], -1.0, 1.0))
    if abs(R[2, 0]) < 1.0 - 1e-12:
        yaw = np.arctan2(R[1, 0], R[0, 0])
        roll = np.arctan2(R[2, 1], R[2, 2])
    else:
        # gimbal lock: fold everything into yaw
        yaw = np.arctan2(-R[0, 1], R[1, 1])
        roll = 0.0
    return yaw, pitch, roll


def random_rotation(rng):
    """Uniform random rotation (quaternion method)."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ],
        dtype=np.float64,
    )


def geodesic_rad(Ra, Rb):
    """Angle of the relative rotation Ra^T Rb."""
    Q = np.asarray(Ra).T @ np.asarray(Rb)
    c = (np.trace(Q) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def geodesic_deg(Ra, Rb):
    return np.degrees(geodesic_rad(Ra, Rb))


def cube_rotations():
    """The 24 rotations mapping the axis set {±ex, ±ey, ±ez} to itself."""
    out = []
    for perm in itertools.permutations(range(3)):
        P = np.zeros((3, 3))
        P[np.arange(3), perm] = 1.0
        for signs in itertools.product((1.0, -1.0), repeat=3):
            S = P * np.array(signs)[:, None]
            if np.linalg.det(S) > 0:
                out.append(S)
    return np.array(out)


_CUBE_ROTATIONS = None


def geodesic_mod_cube_deg(Ra, Rb):
    """Geodesic distance between Ra and Rb minimized over Ra @ S, S cubic."""
    global _CUBE_ROTATIONS
    if _CUBE_ROTATIONS is None:
        _CUBE_ROTATIONS = cube_rotations()
    return min(geodesic_deg(np.asarray(Ra) @ S, Rb) for S in _CUBE_ROTATIONS)


@dataclass(frozen=True)
class Camera:
    """Pinhole camera. `orientation` is camera-to-world, `center` the eye."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    orientation: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise DomainError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise DomainError("image dimensions must be positive")
        object.__setattr__(self, "orientation", np.asarray(self.orientation, dtype=np.float64))
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        if not is_rotation(self.orientation, tol=1e-8):
            raise DomainError("orientation must be a rotation matrix")


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        object.__setattr__(self, "direction", np.asarray(self.direction, dtype=np.float64))
        if not is_unit(self.direction):
            raise DomainError("ray direction must be unit length")


def look_at(eye, target, up=(0.0, 0.0, 1.0)):
    """Camera-to-world rotation looking from eye toward target (y down)."""
    eye = np.asarray(eye, dtype=np.float64)
    z = normalize(np.asarray(target, dtype=np.float64) - eye)
    up = np.asarray(up, dtype=np.float64)
    xc = np.cross(z, up)
    if np.linalg.norm(xc) < 1e-8:
        # view (anti)parallel to up: fall back to a different up vector
        xc = np.cross(z, np.array([0.0, 1.0, 0.0]))
    x = normalize(xc)
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=1)


def ray_for_pixel(camera: Camera, u: int, v: int) -> Ray:
    """Ray through the center of pixel (u, v)."""
    if not (0 <= u < camera.width and 0 <= v < camera.height):
        raise DomainError(f"pixel ({u}, {v}) outside {camera.width}x{camera.height} image")
    d_cam = np.array(
        [
            (u + 0.5 - camera.cx) / camera.fx,
            (v + 0.5 - camera.cy) / camera.fy,
            1.0,
        ]
    )
    direction = normalize(camera.orientation @ d_cam)
    return Ray(origin=camera.center, direction=direction)


def rays_for_pixels(camera: Camera, us, vs):
    """Batched ray_for_pixel. Returns (origins (N,3), directions (N,3))."""
    us = np.asarray(us)
    vs = np.asarray(vs)
    if us.size and (us.min() < 0 or us.max() >= camera.width or vs.min() < 0 or vs.max() >= camera.height):
        raise DomainError("pixel indices out of bounds")
    d_cam = np.stack(
        [
            (us + 0.5 - camera.cx) / camera.fx,
            (vs + 0.5 - camera.cy) / camera.fy,
            np.ones_like(us, dtype=np.float64),
        ],
        axis=-1,
    )
    d_world = d_cam @ camera.orientation.T
    d_world /= np.linalg.norm(d_world, axis=-1, keepdims=True)
    origins = np.broadcast_to(camera.center, d_world.shape).copy()
    return origins, d_world


def surface_point(ray: Ray, depth: float):
    """3D point at Euclidean distance `depth` along the ray."""
    if depth <= 0:
        raise DomainError("depth must be positive")
    return ray.origin + depth * ray.direction


def normal_from_triplet(o, x1, x2, x3, sign_rule="camera"):
    """Oriented unit normal of the plane through x1, x2, x3.

    The unnormalized normal is (x1-x2) x (x1-x3); its sign is corrected so
    the camera center o lies in front of the plane.  sign_rule="origin"
    switches to the raw sign(o . v) form for comparison; it only agrees with
    "camera" when the plane passes near the world origin.

    Returns None for (near-)collinear triplets.
    """
    o = np.asarray(o, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    v = np.cross(x1 - np.asarray(x2, dtype=np.float64), x1 - np.asarray(x3, dtype=np.float64))
    nv = np.linalg.norm(v)
    if nv < DEGENERATE_EPS:
        return None
    if sign_rule == "camera":
        s = 1.0 if float(np.dot(o - x1, v)) >= 0.0 else -1.0
    elif sign_rule == "origin":
        s = 1.0 if float(np.dot(o, v)) >= 0.0 else -1.0
    else:
        raise ValueError(f"unknown sign_rule {sign_rule!r}")
    return s * v / nv


def normals_from_triplets(origins, x1, x2, x3, sign_rule="camera"):
    """Batched normal_from_triplet with a cache for the backward pass.

    Returns (normals (M,3), valid (M,), cache).  Rows of `normals` where
    valid is False are zero and carry no gradient.
    """
    origins = np.asarray(origins, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    x3 = np.asarray(x3, dtype=np.float64)
    a = x1 - x2
    b = x1 - x3
    v = np.cross(a, b)
    nv = np.linalg.norm(v, axis=1)
    valid = nv >= DEGENERATE_EPS
    nv_safe = np.where(valid, nv, 1.0)
    if sign_rule == "camera":
        dots = np.einsum("ij,ij->i", origins - x1, v)
    elif sign_rule == "origin":
        dots = np.einsum("ij,ij->i", origins, v)
    else:
        raise ValueError(f"unknown sign_rule {sign_rule!r}")
    s = np.where(dots >= 0.0, 1.0, -1.0)
    normals = (s / nv_safe)[:, None] * v
    normals[~valid] = 0.0
    cache = {"a": a, "b": b, "v": v, "nv": nv_safe, "s": s, "valid": valid}
    return normals, valid, cache


def normals_backward(cache, grad_n):
    """Backward of normals_from_triplets.

    The sign s and the validity mask are treated as constants.  Returns
    (grad_x1, grad_x2, grad_x3), each (M,3).
    """
    a, b, v = cache["a"], cache["b"], cache["v"]
    nv, s, valid = cache["nv"], cache["s"], cache["valid"]
    vhat = v / nv[:, None]
    # d(v/|v|)/dv = (I - vhat vhat^T)/|v|, scaled by the sign
    proj = grad_n - vhat * np.einsum("ij,ij->i", vhat, grad_n)[:, None]
    gv = (s / nv)[:, None] * proj
    gv[~valid] = 0.0
    ga = np.cross(b, gv)
    gb = np.cross(gv, a)
    return ga + gb, -ga, -gb
