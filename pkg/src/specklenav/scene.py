"""Synthetic scene generation for the navigation pipeline.

A torso phantom is a height field over a rectangular patch that rises
and falls with a sinusoidal breathing offset.  A hollow ring marker
rides on the surface.  ``render_cloud`` casts one ray per sensor grid
cell through the camera frustum, intersects the scene, applies the
distance-dependent noise model and returns the surviving points in the
camera frame.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .camera import CameraModel
from .geometry import Box, RigidTransform

# Height reported outside the phantom patch: far below anything a ray
# can reach, so no surface crossing is ever bracketed there.
_OUTSIDE_PATCH = -1.0e9

_BISECT_ITERS = 48
_SUBSTEPS_PER_SEGMENT = 8


class EmptyCloudError(RuntimeError):
    """No ray produced a point: scene missed the frustum entirely."""


def _surface_function(surface) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    if callable(surface):
        return surface
    kind = surface.get("kind", "flat")
    if kind == "flat":
        return lambda x, y: np.zeros_like(x)
    if kind == "slope":
        gx = float(surface.get("gx", 0.0))
        gy = float(surface.get("gy", 0.0))
        return lambda x, y: gx * x + gy * y
    if kind == "ripple":
        amp = float(surface["amplitude_mm"])
        wx = float(surface["wavelength_x_mm"])
        wy = float(surface["wavelength_y_mm"])
        return lambda x, y: amp * np.cos(2 * np.pi * x / wx) * np.cos(2 * np.pi * y / wy)
    if kind == "dome":
        h = float(surface["height_mm"])
        rx = float(surface["rx_mm"])
        ry = float(surface["ry_mm"])
        return lambda x, y: h * np.clip(1.0 - (x / rx) ** 2 - (y / ry) ** 2, 0.0, None)
    raise ValueError(f"unknown surface kind {kind!r}")


@dataclass(frozen=True)
class TorsoPhantom:
    """Breathing height-field phantom over a rectangular patch.

    ``surface`` is either a JSON-friendly descriptor dict (kinds: flat,
    slope, ripple, dome) or a vectorized callable f(x, y) -> height.
    The breathing offset displaces the whole surface along the patch
    normal (+z of the phantom frame).
    """

    surface: dict | Callable = field(default_factory=lambda: {"kind": "flat"})
    extent: tuple[float, float, float, float] = (-150.0, 150.0, -100.0, 100.0)
    breathing_amplitude_mm: float = 0.0
    breathing_period_s: float = 4.0
    breathing_phase_rad: float = 0.0

    def __post_init__(self):
        xmin, xmax, ymin, ymax = self.extent
        if not (xmin < xmax and ymin < ymax):
            raise ValueError("extent must satisfy xmin < xmax and ymin < ymax")
        if self.breathing_amplitude_mm < 0:
            raise ValueError("breathing amplitude must be non-negative")
        if self.breathing_period_s <= 0:
            raise ValueError("breathing period must be positive")
        # Resolve the descriptor once so rendering does not re-parse it.
        object.__setattr__(self, "_height_fn", _surface_function(self.surface))

    def height(self, x, y) -> np.ndarray:
        """Base surface height (mm) at patch coordinates, patch-clipped."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        xmin, xmax, ymin, ymax = self.extent
        h = self._height_fn(x, y)
        inside = (x >= xmin) & (x <= xmax) & (y >= ymin) & (y <= ymax)
        return np.where(inside, h, _OUTSIDE_PATCH)

    def to_json_dict(self) -> dict:
        if callable(self.surface):
            raise TypeError("callable surfaces are not JSON serializable")
        return {
            "surface": self.surface,
            "extent": list(self.extent),
            "breathing_amplitude_mm": self.breathing_amplitude_mm,
            "breathing_period_s": self.breathing_period_s,
            "breathing_phase_rad": self.breathing_phase_rad,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "TorsoPhantom":
        return cls(
            surface=d["surface"],
            extent=tuple(float(v) for v in d["extent"]),
            breathing_amplitude_mm=float(d["breathing_amplitude_mm"]),
            breathing_period_s=float(d["breathing_period_s"]),
            breathing_phase_rad=float(d["breathing_phase_rad"]),
        )


def breathing_offset(phantom: TorsoPhantom, t: float) -> float:
    """Surface displacement (mm) along the outward patch normal at time t.

    amplitude * sin(2*pi*t/period + phase); the time argument is folded
    modulo one period first so large times keep full precision.
    """
    frac = math.fmod(t, phantom.breathing_period_s) / phantom.breathing_period_s
    return phantom.breathing_amplitude_mm * math.sin(2.0 * math.pi * frac
                                                     + phantom.breathing_phase_rad)


@dataclass(frozen=True)
class RingMarker:
    """Hollow ring fiducial lying on the phantom surface.

    The annulus top face sits ``thickness_mm`` proud of the skin so a
    band-pass over plane residuals isolates it.  ``pose_on_surface``
    places the marker in the phantom frame; its z translation acts as
    an extra stand-off on top of the local surface height.
    """

    outer_diameter_mm: float = 24.0
    inner_diameter_mm: float = 16.0
    thickness_mm: float = 2.0
    pose_on_surface: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        if not (0 < self.inner_diameter_mm < self.outer_diameter_mm):
            raise ValueError("need 0 < inner diameter < outer diameter")
        if self.thickness_mm <= 0:
            raise ValueError("thickness must be positive")

    @property
    def mid_diameter_mm(self) -> float:
        """Diameter of the circle midway between the two ring edges."""
        return (self.outer_diameter_mm + self.inner_diameter_mm) / 2.0

    def to_json_dict(self) -> dict:
        return {
            "outer_diameter_mm": self.outer_diameter_mm,
            "inner_diameter_mm": self.inner_diameter_mm,
            "thickness_mm": self.thickness_mm,
            "pose_on_surface": self.pose_on_surface.to_json_dict(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "RingMarker":
        return cls(
            outer_diameter_mm=float(d["outer_diameter_mm"]),
            inner_diameter_mm=float(d["inner_diameter_mm"]),
            thickness_mm=float(d["thickness_mm"]),
            pose_on_surface=RigidTransform.from_json_dict(d["pose_on_surface"]),
        )


@dataclass(frozen=True)
class PointCloud:
    """Measured points (N, 3) in the camera frame, mm, float64."""

    points: np.ndarray
    timestamp_s: float
    seed: int

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float).reshape(-1, 3).copy()
        if not np.all(np.isfinite(p)):
            raise ValueError("cloud points must be finite")
        p.flags.writeable = False
        object.__setattr__(self, "points", p)

    def __len__(self) -> int:
        return len(self.points)


def marker_pose_world(phantom: TorsoPhantom, marker: RingMarker, t: float) -> RigidTransform:
    """Marker frame in the phantom frame at time t, riding the breathing surface."""
    anchor_x, anchor_y = marker.pose_on_surface.t[0], marker.pose_on_surface.t[1]
    base = float(phantom.height(anchor_x, anchor_y))
    if base <= _OUTSIDE_PATCH / 2:
        raise ValueError("marker anchor lies outside the phantom patch")
    lift = base + breathing_offset(phantom, t)
    return RigidTransform.translation(0.0, 0.0, lift).compose(marker.pose_on_surface)


def marker_top_center_world(phantom: TorsoPhantom, marker: RingMarker, t: float) -> np.ndarray:
    """Ground-truth centre of the ring's top face in the phantom frame."""
    pose = marker_pose_world(phantom, marker, t)
    return pose.apply(np.array([0.0, 0.0, marker.thickness_mm]))


def _ray_points_cam(camera: CameraModel, u: np.ndarray, v: np.ndarray, z) -> np.ndarray:
    """Camera-frame ray positions at depth z for normalized grid coords."""
    z = np.asarray(z, dtype=float)
    z_b = np.broadcast_to(z, u.shape) if z.ndim == 0 else z
    fx, fy = camera.field_of_view(z_b)
    return np.stack([u * np.asarray(fx) / 2.0,
                     v * np.asarray(fy) / 2.0,
                     z_b], axis=-1)


def render_cloud(phantom: TorsoPhantom,
                 marker: "RingMarker | Sequence[RingMarker] | None",
                 camera: CameraModel,
                 t: float = 0.0,
                 seed: int = 0,
                 *,
                 occluders: Sequence[Box] = (),
                 noise_scale: float = 1.0) -> PointCloud:
    """Render one depth frame of the scene at time t.

    One ray is cast per sensor grid cell.  The lateral position of a
    ray follows the interpolated field of view, so between table knots
    each ray is a straight segment and the frustum is filled exactly.
    The first intersection with the phantom surface, a marker top face
    or an occluder box wins.  Hits are perturbed along the line of
    sight with sigma_z(depth) and laterally with the lateral factor
    times sigma_z, both scaled by ``noise_scale`` (0 disables noise),
    then clipped back to the frustum.

    Raises EmptyCloudError when nothing survives.
    """
    if noise_scale < 0:
        raise ValueError("noise_scale must be non-negative")
    markers: tuple[RingMarker, ...]
    if marker is None:
        markers = ()
    elif isinstance(marker, RingMarker):
        markers = (marker,)
    else:
        markers = tuple(marker)

    nx, ny = camera.resolution
    u = (-1.0 + 2.0 * (np.arange(nx) + 0.5) / nx)
    v = (-1.0 + 2.0 * (np.arange(ny) + 0.5) / ny)
    uu, vv = np.meshgrid(u, v, indexing="xy")
    uu = uu.ravel()
    vv = vv.ravel()
    n_rays = uu.size

    mount = camera.mount_pose
    rot = mount.rotation_matrix

    def world_at(depth: np.ndarray, sel: np.ndarray) -> np.ndarray:
        pc = _ray_points_cam(camera, uu[sel], vv[sel], depth)
        return pc @ rot.T + mount.t

    breath = breathing_offset(phantom, t)

    def phi(depth: np.ndarray, sel: np.ndarray) -> np.ndarray:
        w = world_at(depth, sel)
        return w[:, 2] - (phantom.height(w[:, 0], w[:, 1]) + breath)

    # Marker top faces as (origin, normal, inner r, outer r, world pose inverse).
    marker_planes = []
    for m in markers:
        pose = marker_pose_world(phantom, m, t)
        top = pose.compose(RigidTransform.translation(0.0, 0.0, m.thickness_mm))
        normal = top.rotation_matrix[:, 2]
        marker_planes.append((top.t, normal, m.inner_diameter_mm / 2.0,
                              m.outer_diameter_mm / 2.0, top.invert()))

    knots = np.array([row.distance_mm for row in camera.fov_table])
    hit_depth = np.full(n_rays, np.inf)
    done = np.zeros(n_rays, dtype=bool)

    for za, zb in zip(knots[:-1], knots[1:]):
        active = ~done
        if not np.any(active):
            break
        idx = np.nonzero(active)[0]
        seg_hit = np.full(len(idx), np.inf)

        # Phantom surface: bracket a sign change over substeps, then bisect.
        zs = np.linspace(za, zb, _SUBSTEPS_PER_SEGMENT + 1)
        z_prev = float(zs[0])
        prev = phi(np.full(len(idx), z_prev), idx)
        lo = np.full(len(idx), np.nan)
        hi = np.full(len(idx), np.nan)
        have = np.zeros(len(idx), dtype=bool)
        for z_next in zs[1:]:
            z_next = float(z_next)
            cur = phi(np.full(len(idx), z_next), idx)
            # A ray exactly grazing the surface at the substep start (phi == 0)
            # is a hit too; only skip when both ends sit on the surface.
            crossing = (~have) & (prev >= 0) & (cur <= 0) & ((prev > 0) | (cur < 0))
            lo[crossing] = z_prev
            hi[crossing] = z_next
            have |= crossing
            prev = cur
            z_prev = z_next
        if np.any(have):
            bidx = idx[have]
            blo = lo[have]
            bhi = hi[have]
            for _ in range(_BISECT_ITERS):
                mid = 0.5 * (blo + bhi)
                above = phi(mid, bidx) > 0
                blo = np.where(above, mid, blo)
                bhi = np.where(above, bhi, mid)
            seg_hit[have] = 0.5 * (blo + bhi)

        # Marker top annuli: exact segment-plane intersection per linear piece.
        wa = world_at(np.full(len(idx), za), idx)
        wb = world_at(np.full(len(idx), zb), idx)
        for origin, normal, r_in, r_out, top_inv in marker_planes:
            denom = (wb - wa) @ normal
            numer = (origin - wa) @ normal
            with np.errstate(divide="ignore", invalid="ignore"):
                s = numer / denom
            valid = (np.abs(denom) > 1e-15) & (s >= 0.0) & (s <= 1.0)
            if not np.any(valid):
                continue
            pts = wa[valid] + s[valid, None] * (wb[valid] - wa[valid])
            local = top_inv.apply(pts)
            radial = np.hypot(local[:, 0], local[:, 1])
            ring = (radial >= r_in) & (radial <= r_out)
            depth = np.full(len(idx), np.inf)
            depth_valid = za + s[valid] * (zb - za)
            depth_valid[~ring] = np.inf
            depth[valid] = depth_valid
            seg_hit = np.minimum(seg_hit, depth)

        # Occluder boxes: slab test on the world-frame segment.
        for box in occluders:
            ok, frac = box.segment_intersections(wa, wb)
            depth = np.where(ok, za + frac * (zb - za), np.inf)
            seg_hit = np.minimum(seg_hit, depth)

        landed = np.isfinite(seg_hit)
        hit_depth[idx[landed]] = seg_hit[landed]
        done[idx[landed]] = True

    hits = np.isfinite(hit_depth)
    if not np.any(hits):
        raise EmptyCloudError("no ray intersected the scene inside the frustum")

    sel = np.nonzero(hits)[0]
    points_cam = _ray_points_cam(camera, uu[sel], vv[sel], hit_depth[sel])

    rng = np.random.default_rng(seed)
    draws = rng.standard_normal((len(sel), 3))
    if noise_scale > 0.0:
        sigma_axial = np.asarray(camera.sigma_z(points_cam[:, 2])) * noise_scale
        sigma_lateral = sigma_axial * camera.lateral_sigma_factor
        ray_dir = points_cam / np.linalg.norm(points_cam, axis=1, keepdims=True)
        # Perpendicular basis: seed axis switches when the ray is near +z.
        seed_axis = np.where(np.abs(ray_dir[:, 2:3]) > 0.9,
                             np.array([[1.0, 0.0, 0.0]]),
                             np.array([[0.0, 0.0, 1.0]]))
        lat1 = np.cross(ray_dir, seed_axis)
        lat1 /= np.linalg.norm(lat1, axis=1, keepdims=True)
        lat2 = np.cross(ray_dir, lat1)
        points_cam = (points_cam
                      + draws[:, 0:1] * sigma_axial[:, None] * ray_dir
                      + draws[:, 1:2] * sigma_lateral[:, None] * lat1
                      + draws[:, 2:3] * sigma_lateral[:, None] * lat2)

    keep = camera.contains(points_cam)
    points_cam = points_cam[keep]
    if len(points_cam) == 0:
        raise EmptyCloudError("all points fell outside the frustum after noise")
    return PointCloud(points=points_cam, timestamp_s=float(t), seed=int(seed))
