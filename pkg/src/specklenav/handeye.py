"""Hand-eye calibration: solve AX = XB for the camera-on-flange transform.

Relative motions are formed the same way on both sides: for samples i
and j the A motion is flange_i^-1 * flange_j and the B motion is
target_i^-1 * target_j.  Under this pairing the B side of each sample
must be the pose of the camera expressed in the calibration target
frame, which is the inverse of a raw board-in-camera observation.
``sample_from_board_observation`` performs that inversion for callers
holding physical measurements.

The rotation is solved by log-map least squares over all motion pairs
(Park and Martin's formulation); the minimizing orthogonal matrix is
extracted with an SVD so two well-separated rotation axes suffice.
The translation follows from the stacked linear system
(I - R_A) t_X = t_A - R_X t_B.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .camera import CameraModel
from .geometry import Aabb, RigidTransform, pose_error


class TooFewSamplesError(ValueError):
    """Fewer samples or planned poses than the problem needs."""


class InsufficientMotionError(RuntimeError):
    """Relative rotation axes are too close to parallel to solve AX = XB."""


class InfeasibleBoxError(RuntimeError):
    """The observation box does not fit the camera frustum at any standoff."""


class LengthMismatchError(ValueError):
    """Observed and reference corner lists differ in length (or are empty)."""


@dataclass(frozen=True)
class CalibrationSample:
    """One robot stop: flange pose in base, camera pose in the target frame.

    ``target_in_camera`` stores the B side of AX = XB.  With the
    same-form motion pairing used here it must hold the camera pose in
    the target frame (invert a board-in-camera estimate before storing;
    see ``sample_from_board_observation``).
    """

    flange_in_base: RigidTransform
    target_in_camera: RigidTransform


def sample_from_board_observation(flange_in_base: RigidTransform,
                                  board_in_camera: RigidTransform) -> CalibrationSample:
    """Build a sample from a raw board-in-camera observation."""
    return CalibrationSample(flange_in_base=flange_in_base,
                             target_in_camera=board_in_camera.invert())


@dataclass(frozen=True)
class HandEyeResult:
    """Solved camera-in-flange transform plus motion-pair residuals."""

    camera_in_flange: RigidTransform
    rotation_residual_deg: float
    translation_residual_mm: float
    sample_count: int
    solver: str = "park-martin"

    def __post_init__(self):
        if self.sample_count < 3:
            raise ValueError("a valid result needs at least 3 samples")
        if self.rotation_residual_deg < 0 or self.translation_residual_mm < 0:
            raise ValueError("residuals must be non-negative")

    def to_json_dict(self) -> dict:
        return {
            "camera_in_flange": self.camera_in_flange.to_json_dict(),
            "rotation_residual_deg": self.rotation_residual_deg,
            "translation_residual_mm": self.translation_residual_mm,
            "sample_count": self.sample_count,
            "solver": self.solver,
        }


@dataclass(frozen=True)
class ReprojectionStats:
    """Per-corner Euclidean offsets between observed and predicted corners."""

    mean_px: float
    std_px: float
    max_px: float
    per_corner_px: tuple[float, ...] = field(repr=False, default=())

    def passes_gate(self, threshold_px: float = 0.5) -> bool:
        """Static verification gate: the mean offset must stay below threshold."""
        return self.mean_px < threshold_px

    def to_json_dict(self) -> dict:
        return {"mean_px": self.mean_px, "std_px": self.std_px,
                "max_px": self.max_px, "corner_count": len(self.per_corner_px)}


def _relative_motions(samples: Sequence[CalibrationSample]):
    for i, j in itertools.combinations(range(len(samples)), 2):
        a = samples[i].flange_in_base.invert().compose(samples[j].flange_in_base)
        b = samples[i].target_in_camera.invert().compose(samples[j].target_in_camera)
        yield a, b


def _log_vector(transform: RigidTransform) -> np.ndarray:
    """Rotation log map: axis times angle in radians."""
    angle = math.radians(transform.rotation_angle_deg())
    return transform.rotation_axis() * angle


def _check_axis_spread(a_motions, min_separation_deg: float):
    axes = [m.rotation_axis() for m in a_motions
            if m.rotation_angle_deg() > 0.1]
    if len(axes) < 2:
        raise InsufficientMotionError("need at least two rotating relative motions")
    best = 0.0
    for u, w in itertools.combinations(axes, 2):
        # Axes act as lines: a rotation about -u mirrors one about u.
        cosang = min(abs(float(u @ w)), 1.0)
        best = max(best, math.degrees(math.acos(cosang)))
    if best < min_separation_deg:
        raise InsufficientMotionError(
            f"rotation axes span only {best:.2f} deg, "
            f"need {min_separation_deg} deg for a stable solution")


def solve_ax_xb(samples: Sequence[CalibrationSample],
                min_axis_separation_deg: float = 5.0) -> HandEyeResult:
    """Solve AX = XB over all sample pairs.

    Raises TooFewSamplesError below 3 samples and
    InsufficientMotionError when the relative rotation axes are within
    ``min_axis_separation_deg`` of a single line.
    """
    samples = list(samples)
    if len(samples) < 3:
        raise TooFewSamplesError(f"hand-eye needs at least 3 samples, got {len(samples)}")
    motions = list(_relative_motions(samples))
    _check_axis_spread([a for a, _ in motions], min_axis_separation_deg)

    scatter = np.zeros((3, 3))
    for a, b in motions:
        alpha = _log_vector(a)
        beta = _log_vector(b)
        scatter += np.outer(beta, alpha)
    u_mat, _, vt = np.linalg.svd(scatter)
    d = np.sign(np.linalg.det(vt.T @ u_mat.T))
    if d == 0:
        raise InsufficientMotionError("degenerate motion scatter")
    rot_x = vt.T @ np.diag([1.0, 1.0, d]) @ u_mat.T

    rows = []
    rhs = []
    for a, b in motions:
        rows.append(np.eye(3) - a.rotation_matrix)
        rhs.append(a.t - rot_x @ b.t)
    lhs = np.vstack(rows)
    rhs = np.concatenate(rhs)
    t_x, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)

    x_hat = RigidTransform.from_matrix(rot_x, t_x)
    rot_sq = 0.0
    tr_sq = 0.0
    for a, b in motions:
        err = pose_error(a.compose(x_hat), x_hat.compose(b))
        rot_sq += err.rotation_error_deg ** 2
        tr_sq += err.translation_error_mm ** 2
    n = len(motions)
    return HandEyeResult(
        camera_in_flange=x_hat,
        rotation_residual_deg=math.sqrt(rot_sq / n),
        translation_residual_mm=math.sqrt(tr_sq / n),
        sample_count=len(samples),
    )


def reprojection_error(observed, reference) -> ReprojectionStats:
    """Corner offset statistics in pixels.

    ``observed`` and ``reference`` are (N, 2) pixel coordinates in
    matching order.  Raises LengthMismatchError when the lists differ
    in length or are empty.
    """
    obs = np.asarray(observed, dtype=float).reshape(-1, 2)
    ref = np.asarray(reference, dtype=float).reshape(-1, 2)
    if len(obs) == 0 or len(obs) != len(ref):
        raise LengthMismatchError(
            f"corner count mismatch: observed {len(obs)}, reference {len(ref)}")
    delta = obs - ref
    offsets = np.hypot(delta[:, 0], delta[:, 1])
    return ReprojectionStats(
        mean_px=float(np.mean(offsets)),
        std_px=float(np.std(offsets)),
        max_px=float(np.max(offsets)),
        per_corner_px=tuple(float(v) for v in offsets),
    )


def _feasible_standoffs(box: Aabb, camera: CameraModel) -> tuple[float, float]:
    """Standoff interval at which a head-on view keeps the box in frustum."""
    ex, ey, ez = box.extents
    d_min = camera.near_mm + ez / 2.0
    d_max = camera.far_mm - ez / 2.0
    if d_min > d_max:
        raise InfeasibleBoxError("box is deeper than the camera working range")
    grid = np.linspace(d_min, d_max, 1025)
    near_face = grid - ez / 2.0
    fx, fy = camera.field_of_view(near_face)
    ok = (np.asarray(fx) >= ex) & (np.asarray(fy) >= ey)
    if not np.any(ok):
        raise InfeasibleBoxError(
            f"box extent {ex:.1f} x {ey:.1f} mm exceeds the field of view "
            "at every reachable standoff")
    feasible = grid[ok]
    return float(feasible[0]), float(feasible[-1])


def _look_pose(target: np.ndarray, distance: float, tilt_rad: float,
               azimuth_rad: float, roll_rad: float) -> RigidTransform:
    """Camera pose looking at ``target`` from above with the given tilt."""
    view = np.array([math.sin(tilt_rad) * math.cos(azimuth_rad),
                     math.sin(tilt_rad) * math.sin(azimuth_rad),
                     -math.cos(tilt_rad)])
    position = target - distance * view
    z_axis = view
    up = np.array([0.0, 1.0, 0.0]) if abs(z_axis[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    x_axis = np.cross(up, z_axis)
    x_axis /= np.linalg.norm(x_axis)
    y_axis = np.cross(z_axis, x_axis)
    x_roll = math.cos(roll_rad) * x_axis + math.sin(roll_rad) * y_axis
    y_roll = np.cross(z_axis, x_roll)
    rot = np.column_stack([x_roll, y_roll, z_axis])
    return RigidTransform.from_matrix(rot, position)


def plan_poses(observation_box: Aabb, count: int, tilt_range_deg: float,
               camera: CameraModel | None = None,
               nominal_camera_in_flange: RigidTransform | None = None
               ) -> list[RigidTransform]:
    """Deterministic calibration poses that keep the box in view.

    Standoffs span the feasible slice of the camera working range;
    tilt magnitude, azimuth and roll vary per pose so the relative
    rotation axes stay well separated (at least 10 degrees pairwise for
    count <= 12).  Returned poses are flange poses assuming the camera
    sits at ``nominal_camera_in_flange`` (identity by default, in which
    case they are camera poses outright).

    Raises TooFewSamplesError for count < 3, ValueError for a tilt
    range outside (0, 60] and InfeasibleBoxError when no standoff fits.
    """
    if count < 3:
        raise TooFewSamplesError(f"pose plan needs count >= 3, got {count}")
    if not (0.0 < tilt_range_deg <= 60.0):
        raise ValueError("tilt_range_deg must lie in (0, 60]")
    camera = camera if camera is not None else CameraModel()
    x_nom = (nominal_camera_in_flange if nominal_camera_in_flange is not None
             else RigidTransform.identity())

    d_lo, d_hi = _feasible_standoffs(observation_box, camera)
    center = observation_box.center
    corners = observation_box.corners()
    golden = math.pi * (3.0 - math.sqrt(5.0))

    # Fixed candidate grid of viewing orientations.  Poses are chosen
    # greedily so that each consecutive relative rotation introduces an
    # axis far from every axis already used; ties resolve by grid order,
    # which keeps the plan fully deterministic.
    candidates = []
    for i_t in range(1, 5):
        tilt = math.radians(tilt_range_deg) * i_t / 4.0
        for i_a in range(10):
            azimuth = (i_a * golden) % (2.0 * math.pi)
            for roll_deg in (-25.0, -10.0, 0.0, 10.0, 25.0):
                candidates.append((tilt, azimuth, math.radians(roll_deg)))

    def line_angle_deg(u: np.ndarray, w: np.ndarray) -> float:
        return math.degrees(math.acos(min(abs(float(u @ w)), 1.0)))

    cam_poses: list[RigidTransform] = []
    used_axes: list[np.ndarray] = []
    for k in range(count):
        distance = d_lo + (d_hi - d_lo) * (k + 0.5) / count
        best_pose = None
        best_axis = None
        # Near the short end of the standoff range a steep tilt can push a
        # box corner out of view; retry the whole grid at gentler angles.
        for shrink in range(12):
            scale = 0.7 ** shrink
            best_score = -1.0
            for tilt, azimuth, roll in candidates:
                pose = _look_pose(center, distance, tilt * scale,
                                  azimuth, roll * scale)
                if not bool(np.all(camera.contains(pose.invert().apply(corners)))):
                    continue
                if not cam_poses:
                    best_pose = pose
                    break
                motion = cam_poses[-1].invert().compose(pose)
                if motion.rotation_angle_deg() < 2.0 * scale:
                    continue
                axis = motion.rotation_axis()
                score = min((line_angle_deg(axis, a) for a in used_axes),
                            default=90.0)
                if score > best_score:
                    best_score = score
                    best_pose = pose
                    best_axis = axis
            if best_pose is not None:
                break
        if best_pose is None:
            raise InfeasibleBoxError(
                "no candidate orientation keeps the box inside the frustum")
        cam_poses.append(best_pose)
        if best_axis is not None:
            used_axes.append(best_axis)
    return [p.compose(x_nom.invert()) for p in cam_poses]
