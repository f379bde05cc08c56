"""Structured-light depth camera model.

The camera is characterized by a working-range table measured on the
bench: for a set of standoff distances it records the field of view,
the depth repeatability (one sigma along the optical axis) and the
lateral pixel footprint.  Values between knots are linearly
interpolated; queries outside the calibrated range clamp to the
nearest knot and emit a RangeClampWarning.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .geometry import RigidTransform


class RangeClampWarning(UserWarning):
    """Raised via warnings.warn when a query leaves the calibrated range."""


@dataclass(frozen=True)
class FovRow:
    """One calibrated working-range knot."""

    distance_mm: float
    fov_x_mm: float
    fov_y_mm: float
    sigma_z_mm: float
    pixel_size_mm: float

    def __post_init__(self):
        for name in ("distance_mm", "fov_x_mm", "fov_y_mm", "sigma_z_mm", "pixel_size_mm"):
            if getattr(self, name) <= 0:
                raise ValueError(f"FovRow.{name} must be positive")


# Bench calibration of the reference camera over its 250..700 mm working range.
DEFAULT_FOV_TABLE: tuple[FovRow, ...] = (
    FovRow(250.0, 198.44, 129.20, 0.033, 0.106),
    FovRow(260.0, 202.37, 134.37, 0.036, 0.111),
    FovRow(380.0, 408.60, 270.68, 0.106, 0.223),
    FovRow(400.0, 435.37, 284.93, 0.117, 0.234),
    FovRow(500.0, 565.23, 356.16, 0.183, 0.293),
    FovRow(600.0, 658.27, 427.39, 0.264, 0.352),
    FovRow(700.0, 751.32, 498.63, 0.359, 0.410),
)

# Measured optical blur per knot (pixels).  Kept with the model for report
# completeness; no current consumer, blur is not simulated.
DEFAULT_OPTICAL_BLUR_PX: tuple[float, ...] = (1.610, 2.378, 2.377, 1.937, 0.262, 1.304, 2.051)


@dataclass(frozen=True)
class CameraModel:
    """Depth camera: working-range table, mount pose and noise behaviour.

    ``mount_pose`` maps camera coordinates into the parent frame (the
    scene frame when rendering).  The optical axis is +z, points in
    front of the camera have positive z in the camera frame.  Lateral
    noise scales off the axial sigma by ``lateral_sigma_factor``.
    """

    fov_table: tuple[FovRow, ...] = DEFAULT_FOV_TABLE
    mount_pose: RigidTransform = field(default_factory=RigidTransform.identity)
    lateral_sigma_factor: float = 1.8
    frame_rate: float = 10.0
    resolution: tuple[int, int] = (256, 192)
    optical_blur_px: tuple[float, ...] | None = DEFAULT_OPTICAL_BLUR_PX

    def __post_init__(self):
        table = tuple(self.fov_table)
        if len(table) < 2:
            raise ValueError("fov_table needs at least two knots")
        d = [row.distance_mm for row in table]
        if any(b <= a for a, b in zip(d, d[1:])):
            raise ValueError("fov_table distances must be strictly increasing")
        if not (0.1 <= self.frame_rate <= 120.0):
            raise ValueError("frame_rate must be within [0.1, 120] fps")
        if self.lateral_sigma_factor <= 0:
            raise ValueError("lateral_sigma_factor must be positive")
        nx, ny = self.resolution
        if nx < 2 or ny < 2:
            raise ValueError("resolution must be at least 2x2")
        if self.optical_blur_px is not None and len(self.optical_blur_px) != len(table):
            raise ValueError("optical_blur_px length must match fov_table")
        object.__setattr__(self, "fov_table", table)

    @property
    def near_mm(self) -> float:
        return self.fov_table[0].distance_mm

    @property
    def far_mm(self) -> float:
        return self.fov_table[-1].distance_mm

    def _knots(self) -> np.ndarray:
        return np.array([row.distance_mm for row in self.fov_table])

    def _column(self, name: str) -> np.ndarray:
        return np.array([getattr(row, name) for row in self.fov_table])

    def _interp(self, distance_mm, name: str):
        d = np.asarray(distance_mm, dtype=float)
        below = d < self.near_mm
        above = d > self.far_mm
        if np.any(below) or np.any(above):
            warnings.warn(
                f"distance outside calibrated range [{self.near_mm}, {self.far_mm}] mm, "
                "clamping to the nearest knot",
                RangeClampWarning,
                stacklevel=3,
            )
        d = np.clip(d, self.near_mm, self.far_mm)
        out = np.interp(d, self._knots(), self._column(name))
        return float(out) if out.ndim == 0 else out

    def sigma_z(self, distance_mm):
        """Axial depth repeatability (mm, one sigma) at a standoff distance."""
        return self._interp(distance_mm, "sigma_z_mm")

    def field_of_view(self, distance_mm):
        """Image footprint (fov_x, fov_y) in mm at a standoff distance."""
        return (self._interp(distance_mm, "fov_x_mm"),
                self._interp(distance_mm, "fov_y_mm"))

    def pixel_size(self, distance_mm):
        """Lateral size of one pixel (mm) at a standoff distance."""
        return self._interp(distance_mm, "pixel_size_mm")

    def contains(self, points_cam: np.ndarray,
                 near_mm: float | None = None,
                 far_mm: float | None = None) -> np.ndarray:
        """Frustum membership test for camera-frame points, vectorized.

        A point is inside when its depth lies in [near, far] and its
        lateral offsets fit inside the interpolated field of view at
        that depth.
        """
        p = np.atleast_2d(np.asarray(points_cam, dtype=float))
        near = self.near_mm if near_mm is None else near_mm
        far = self.far_mm if far_mm is None else far_mm
        z = p[:, 2]
        ok = (z >= near) & (z <= far)
        zc = np.clip(z, self.near_mm, self.far_mm)
        fx = np.interp(zc, self._knots(), self._column("fov_x_mm"))
        fy = np.interp(zc, self._knots(), self._column("fov_y_mm"))
        ok &= np.abs(p[:, 0]) <= fx / 2.0
        ok &= np.abs(p[:, 1]) <= fy / 2.0
        return ok

    def with_mount_pose(self, pose: RigidTransform) -> "CameraModel":
        return replace(self, mount_pose=pose)

    def to_json_dict(self) -> dict:
        return {
            "fov_table": [[row.distance_mm, row.fov_x_mm, row.fov_y_mm,
                           row.sigma_z_mm, row.pixel_size_mm]
                          for row in self.fov_table],
            "mount_pose": self.mount_pose.to_json_dict(),
            "lateral_sigma_factor": self.lateral_sigma_factor,
            "frame_rate": self.frame_rate,
            "resolution": list(self.resolution),
            "optical_blur_px": (None if self.optical_blur_px is None
                                else list(self.optical_blur_px)),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "CameraModel":
        rows = tuple(FovRow(*row) for row in d["fov_table"])
        blur = d.get("optical_blur_px")
        return cls(
            fov_table=rows,
            mount_pose=RigidTransform.from_json_dict(d["mount_pose"]),
            lateral_sigma_factor=float(d["lateral_sigma_factor"]),
            frame_rate=float(d["frame_rate"]),
            resolution=tuple(int(v) for v in d["resolution"]),
            optical_blur_px=None if blur is None else tuple(float(v) for v in blur),
        )
