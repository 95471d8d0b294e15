"""Procedural synthetic Manhattan rooms with exact RGB-D-normal ground truth.

A scene is a closed axis-aligned room (seen from inside) containing
axis-aligned boxes plus optional non-Manhattan contamination (spheres and
yaw-rotated boxes).  All geometry is defined in the Manhattan frame and
rotated into the world by `mf_offset`, so the ground-truth frame is known
by construction.  Surfaces are unlit two-tone checkers, which gives the
photometric loss signal without shading confounds.

Face order everywhere is (+x, -x, +y, -y, +z, -z).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import rasters
from .geometry import Camera, DomainError, euler_zyx, look_at, rays_for_pixels, rot_z

_EPS = 1e-9


@dataclass(frozen=True)
class BoxSpec:
    center: np.ndarray
    half_extents: np.ndarray
    face_albedos: np.ndarray  # (6, 2, 3) checker pair per face
    yaw_deg: float = 0.0  # non-zero makes the box non-Manhattan


@dataclass(frozen=True)
class SphereSpec:
    center: np.ndarray
    radius: float
    albedos: np.ndarray  # (2, 3)


@dataclass(frozen=True)
class SceneSpec:
    room_half_extents: np.ndarray
    boxes: tuple = ()
    spheres: tuple = ()
    mf_offset: np.ndarray = field(default_factory=lambda: np.eye(3))
    checker_period: float = 1.0
    seed: int = 0


@dataclass
class GTView:
    rgb: np.ndarray  # (H,W,3) in [0,1]
    depth: np.ndarray  # (H,W) along-ray meters
    normal: np.ndarray  # (H,W,3) world frame, camera-facing
    camera: Camera


def _checker_pair(rng):
    base = rng.uniform(0.08, 0.92, 3)
    other = np.clip(base + np.where(base < 0.5, 0.45, -0.45), 0.0, 1.0)
    return np.stack([base, other])


def _face_albedos(rng):
    return np.stack([_checker_pair(rng) for _ in range(6)])


def random_scene_spec(
    room_half_extents=(2.2, 1.8, 1.4),
    n_boxes=5,
    n_spheres=0,
    n_rot_boxes=0,
    checker_period=1.0,
    mf_offset_ypr_deg=(0.0, 0.0, 0.0),
    seed=0,
):
    """Procedural SceneSpec: random interior objects, random checker colors."""
    rng = np.random.default_rng(seed)
    room = np.asarray(room_half_extents, dtype=np.float64)
    boxes = []
    for i in range(n_boxes + n_rot_boxes):
        h = rng.uniform(0.18, 0.55, 3) * np.minimum(room / 1.8, 1.0)
        yaw = float(rng.uniform(12.0, 78.0)) if i >= n_boxes else 0.0
        reach = h if yaw == 0.0 else np.array([np.hypot(h[0], h[1]), np.hypot(h[0], h[1]), h[2]])
        margin = room - reach - 0.06
        c = rng.uniform(-margin, margin)
        boxes.append(BoxSpec(center=c, half_extents=h, face_albedos=_face_albedos(rng), yaw_deg=yaw))
    spheres = []
    for _ in range(n_spheres):
        r = float(rng.uniform(0.18, 0.45) * min(1.0, float(room.min())))
        margin = room - r - 0.05
        c = rng.uniform(-margin, margin)
        spheres.append(SphereSpec(center=c, radius=r, albedos=_checker_pair(rng)))
    yaw, pitch, roll = np.radians(mf_offset_ypr_deg)
    return SceneSpec(
        room_half_extents=room,
        boxes=tuple(boxes),
        spheres=tuple(spheres),
        mf_offset=euler_zyx(yaw, pitch, roll),
        checker_period=float(checker_period),
        seed=int(seed),
    )


class Scene:
    """Immutable intersectable scene; build via build_scene()."""

    def __init__(self, spec: SceneSpec, room_albedos):
        self.spec = spec
        self.room_half = np.asarray(spec.room_half_extents, dtype=np.float64)
        self.room_albedos = room_albedos  # (6, 2, 3)
        self.mf_offset = np.asarray(spec.mf_offset, dtype=np.float64)
        self.period = float(spec.checker_period)

    # ---- primitive intersections, all in the Manhattan frame ----

    def _checker(self, pts, axis, face_sign, albedos_per_face):
        """Two-tone checker in the face's local 2D coordinates."""
        other = [(1, 2), (0, 2), (0, 1)]
        colors = np.empty((pts.shape[0], 3))
        for ax in range(3):
            for sgn, off in ((1.0, 0), (-1.0, 1)):
                m = (axis == ax) & (face_sign == sgn)
                if not m.any():
                    continue
                a, b = other[ax]
                par = (np.floor(pts[m, a] / self.period) + np.floor(pts[m, b] / self.period)).astype(np.int64) & 1
                colors[m] = albedos_per_face[2 * ax + off][par]
        return colors

    def _hit_room(self, o, d):
        # exit face of the enclosing box, seen from inside
        with np.errstate(divide="ignore", invalid="ignore"):
            t_exit = (np.where(d > 0, self.room_half, -self.room_half) - o) / d
        t_exit = np.where(np.abs(d) < _EPS, np.inf, t_exit)
        axis = np.argmin(t_exit, axis=1)
        t = t_exit[np.arange(len(o)), axis]
        face_sign = np.sign(d[np.arange(len(o)), axis])
        pts = o + t[:, None] * d
        normals = np.zeros_like(o)
        normals[np.arange(len(o)), axis] = -face_sign
        colors = self._checker(pts, axis, face_sign, self.room_albedos)
        return t, normals, colors

    def _hit_aabb(self, o, d, center, half):
        lo, hi = center - half, center + half
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo - o) / d
            t2 = (hi - o) / d
        big = 1e30
        inside_slab = (o > lo) & (o < hi)
        t1 = np.where(np.abs(d) < _EPS, np.where(inside_slab, -big, big), t1)
        t2 = np.where(np.abs(d) < _EPS, np.where(inside_slab, big, -big), t2)
        tn = np.minimum(t1, t2)
        tf = np.maximum(t1, t2)
        axis = np.argmax(tn, axis=1)
        t_near = tn[np.arange(len(o)), axis]
        t_far = np.min(tf, axis=1)
        hit = (t_near <= t_far) & (t_near > 1e-6)
        face_sign = -np.sign(d[np.arange(len(o)), axis])
        normals = np.zeros_like(o)
        normals[np.arange(len(o)), axis] = face_sign
        return hit, t_near, axis, face_sign, normals

    def _hit_box(self, o, d, box: BoxSpec):
        if box.yaw_deg != 0.0:
            R = rot_z(np.radians(box.yaw_deg))
            ol = (o - box.center) @ R  # = R^T (o - c)
            dl = d @ R
            hit, t, axis, face_sign, n_local = self._hit_aabb(ol, dl, np.zeros(3), box.half_extents)
            pts_local = ol + t[:, None] * dl
            colors = self._checker(pts_local, axis, face_sign, box.face_albedos)
            normals = n_local @ R.T
            return hit, t, normals, colors
        hit, t, axis, face_sign, normals = self._hit_aabb(o, d, box.center, box.half_extents)
        pts = o + t[:, None] * d
        colors = self._checker(pts, axis, face_sign, box.face_albedos)
        return hit, t, normals, colors

    def _hit_sphere(self, o, d, sph: SphereSpec):
        oc = o - sph.center
        b = np.einsum("ij,ij->i", oc, d)
        disc = b * b - (np.einsum("ij,ij->i", oc, oc) - sph.radius**2)
        ok = disc > 0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t = -b - sq
        hit = ok & (t > 1e-6)
        pts = o + t[:, None] * d
        local = pts - sph.center
        normals = local / sph.radius
        u = np.arctan2(local[:, 1], local[:, 0]) * sph.radius
        v = np.arccos(np.clip(local[:, 2] / sph.radius, -1, 1)) * sph.radius
        par = (np.floor(u / self.period) + np.floor(v / self.period)).astype(np.int64) & 1
        colors = sph.albedos[par]
        return hit, t, normals, colors

    # ---- public API ----

    def intersect(self, origins, dirs):
        """Nearest hit for world-frame rays.

        Returns (t, normals, colors); normals are world-frame and
        camera-facing.  Rays from inside the closed room always hit.
        """
        Q = self.mf_offset
        o = np.asarray(origins, dtype=np.float64) @ Q
        d = np.asarray(dirs, dtype=np.float64) @ Q
        t, normals, colors = self._hit_room(o, d)
        for box in self.spec.boxes:
            hit, tb, nb, cb = self._hit_box(o, d, box)
            closer = hit & (tb < t)
            t = np.where(closer, tb, t)
            normals[closer] = nb[closer]
            colors[closer] = cb[closer]
        for sph in self.spec.spheres:
            hit, ts, ns, cs = self._hit_sphere(o, d, sph)
            closer = hit & (ts < t)
            t = np.where(closer, ts, t)
            normals[closer] = ns[closer]
            colors[closer] = cs[closer]
        return t, normals @ Q.T, colors

    def contains_point(self, p_world, margin=0.0):
        """True when the world point is inside the room and outside all
        objects, each by at least `margin`."""
        p = np.asarray(p_world, dtype=np.float64) @ self.mf_offset
        if np.any(np.abs(p) > self.room_half - margin):
            return False
        for box in self.spec.boxes:
            local = p - box.center
            if box.yaw_deg != 0.0:
                local = local @ rot_z(np.radians(box.yaw_deg))
            if np.all(np.abs(local) < box.half_extents + margin):
                return False
        for sph in self.spec.spheres:
            if np.linalg.norm(p - sph.center) < sph.radius + margin:
                return False
        return True


def build_scene(spec: SceneSpec) -> Scene:
    """Validate the spec and produce an immutable scene."""
    room = np.asarray(spec.room_half_extents, dtype=np.float64)
    if np.any(room <= 0):
        raise DomainError("room half-extents must be positive")
    for box in spec.boxes:
        h = np.asarray(box.half_extents)
        if np.any(h <= 0):
            raise DomainError("box half-extents must be positive")
        # rotated boxes are checked with their bounding radius
        if box.yaw_deg != 0.0:
            reach = np.array([np.hypot(h[0], h[1]), np.hypot(h[0], h[1]), h[2]])
        else:
            reach = h
        if np.any(np.abs(np.asarray(box.center)) + reach > room + 1e-9):
            raise DomainError("box extends outside the room")
    for sph in spec.spheres:
        if sph.radius <= 0:
            raise DomainError("sphere radius must be positive")
        if np.any(np.abs(np.asarray(sph.center)) + sph.radius > room + 1e-9):
            raise DomainError("sphere extends outside the room")
    rng = np.random.default_rng(np.random.SeedSequence([0x5CE7E, spec.seed & 0x7FFFFFFF]))
    return Scene(spec, room_albedos=_face_albedos(rng))


def render_gt_view(scene: Scene, camera: Camera) -> GTView:
    """Exact nearest-hit raycast of every pixel."""
    if not scene.contains_point(camera.center):
        raise DomainError("camera must be inside the room")
    us, vs = np.meshgrid(np.arange(camera.width), np.arange(camera.height))
    origins, dirs = rays_for_pixels(camera, us.ravel(), vs.ravel())
    t, normals, colors = scene.intersect(origins, dirs)
    h, w = camera.height, camera.width
    return GTView(
        rgb=colors.reshape(h, w, 3),
        depth=t.reshape(h, w),
        normal=normals.reshape(h, w, 3),
        camera=camera,
    )


def make_camera(center, target, width, height, fov_deg=75.0):
    f = (width / 2.0) / np.tan(np.radians(fov_deg) / 2.0)
    return Camera(
        fx=f,
        fy=f,
        cx=width / 2.0,
        cy=height / 2.0,
        width=width,
        height=height,
        orientation=look_at(center, target),
        center=np.asarray(center, dtype=np.float64),
    )


def generate_trajectory(scene: Scene, n_views, seed, width=64, height=64, fov_deg=75.0, margin=0.5):
    """Random interior cameras looking at random interior targets."""
    if n_views < 2:
        raise DomainError("need at least 2 views")
    room = scene.room_half
    if np.any(room - margin <= 0.05):
        raise DomainError("room too small for the camera margin")
    rng = np.random.default_rng(seed)
    Q = scene.mf_offset
    cams = []
    attempts = 0
    while len(cams) < n_views:
        attempts += 1
        if attempts > 20000:
            raise DomainError("could not place cameras; scene too crowded")
        pos_mf = rng.uniform(-(room - margin), room - margin)
        pos = pos_mf @ Q.T
        if not scene.contains_point(pos, margin=0.15):
            continue
        tgt_mf = rng.uniform(-(room - 0.2), room - 0.2)
        tgt = tgt_mf @ Q.T
        if np.linalg.norm(tgt - pos) < 0.6:
            continue
        cams.append(make_camera(pos, tgt, width, height, fov_deg))
    return cams


def split_train_test(n_views):
    """Alternate views: evens train, odds test."""
    idx = np.arange(n_views)
    return idx[idx % 2 == 0], idx[idx % 2 == 1]


def sample_manhattan_normals(n, rotation=None, noise_deg=0.0, outlier_frac=0.0, rng=None):
    """Unit normals drawn from the six cube faces of a rotated frame.

    Inliers get von Mises-Fisher noise with the given per-axis angular
    std; a fraction of the output is replaced by uniform-sphere outliers.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    Q = np.eye(3) if rotation is None else np.asarray(rotation, dtype=np.float64)
    n_out = int(round(n * outlier_frac))
    n_in = n - n_out
    axes = np.concatenate([np.eye(3), -np.eye(3)])
    mus = (axes @ Q.T)[rng.integers(0, 6, size=n_in)]
    if noise_deg > 0:
        kappa = 1.0 / np.radians(noise_deg) ** 2
        u = rng.random(n_in)
        w = 1.0 + np.log(u + (1.0 - u) * np.exp(-2.0 * kappa)) / kappa
        w = np.clip(w, -1.0, 1.0)
        # tangent basis per mu
        alt = np.where(np.abs(mus[:, :1]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
        t1 = np.cross(mus, alt)
        t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
        t2 = np.cross(mus, t1)
        phi = rng.uniform(0.0, 2.0 * np.pi, n_in)
        sin_theta = np.sqrt(np.maximum(0.0, 1.0 - w**2))
        samples = w[:, None] * mus + sin_theta[:, None] * (np.cos(phi)[:, None] * t1 + np.sin(phi)[:, None] * t2)
    else:
        samples = mus.copy()
    if n_out:
        g = rng.normal(size=(n_out, 3))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        samples = np.concatenate([samples, g])
    return samples[rng.permutation(len(samples))]


# ---- scene directory I/O ----


def _camera_to_dict(cam: Camera):
    return {
        "fx": cam.fx,
        "fy": cam.fy,
        "cx": cam.cx,
        "cy": cam.cy,
        "width": cam.width,
        "height": cam.height,
        "orientation": cam.orientation.tolist(),
        "center": cam.center.tolist(),
    }


def _camera_from_dict(d):
    return Camera(
        fx=d["fx"],
        fy=d["fy"],
        cx=d["cx"],
        cy=d["cy"],
        width=d["width"],
        height=d["height"],
        orientation=np.asarray(d["orientation"]),
        center=np.asarray(d["center"]),
    )


def write_scene_dir(out_dir, scene: Scene, cameras, views):
    """GT views (PPM + RASTF32), cameras.json and scene.json."""
    os.makedirs(os.path.join(out_dir, "views"), exist_ok=True)
    train, test = split_train_test(len(cameras))
    with open(os.path.join(out_dir, "cameras.json"), "w") as f:
        json.dump(
            {
                "cameras": [_camera_to_dict(c) for c in cameras],
                "train_ids": train.tolist(),
                "test_ids": test.tolist(),
            },
            f,
            indent=2,
            sort_keys=True,
        )
    with open(os.path.join(out_dir, "scene.json"), "w") as f:
        json.dump(
            {
                "room_half_extents": scene.room_half.tolist(),
                "mf_offset": scene.mf_offset.tolist(),
                "checker_period": scene.period,
                "seed": scene.spec.seed,
                "n_boxes": len(scene.spec.boxes),
                "n_spheres": len(scene.spec.spheres),
            },
            f,
            indent=2,
            sort_keys=True,
        )
    for i, view in enumerate(views):
        base = os.path.join(out_dir, "views", f"view_{i:03d}")
        rasters.write_ppm(base + ".ppm", view.rgb)
        rasters.write_rast(base + "_depth.rast", view.depth)
        rasters.write_rast(base + "_normal.rast", view.normal)


@dataclass
class SceneData:
    cameras: list
    train_ids: np.ndarray
    test_ids: np.ndarray
    rgb: np.ndarray  # (V,H,W,3)
    depth: np.ndarray  # (V,H,W)
    normal: np.ndarray  # (V,H,W,3)
    meta: dict


def load_scene_dir(scene_dir) -> SceneData:
    cam_path = os.path.join(scene_dir, "cameras.json")
    if not os.path.exists(cam_path):
        raise DomainError(f"{scene_dir}: missing cameras.json")
    with open(cam_path) as f:
        cam_data = json.load(f)
    with open(os.path.join(scene_dir, "scene.json")) as f:
        meta = json.load(f)
    cameras = [_camera_from_dict(d) for d in cam_data["cameras"]]
    rgb, depth, normal = [], [], []
    for i in range(len(cameras)):
        base = os.path.join(scene_dir, "views", f"view_{i:03d}")
        rgb.append(rasters.read_ppm(base + ".ppm"))
        depth.append(rasters.read_rast(base + "_depth.rast"))
        normal.append(rasters.read_rast(base + "_normal.rast"))
    return SceneData(
        cameras=cameras,
        train_ids=np.asarray(cam_data["train_ids"], dtype=np.int64),
        test_ids=np.asarray(cam_data["test_ids"], dtype=np.int64),
        rgb=np.stack(rgb),
        depth=np.stack(depth),
        normal=np.stack(normal),
        meta=meta,
    )
