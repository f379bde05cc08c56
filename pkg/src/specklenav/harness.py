"""End-to-end scenario runner: calibrate, gate, detect, fuse, correct, breathe.

A Scenario bundles the synthetic world (camera, phantom, marker, true
hand-eye transform, robot poses) with every stage's knobs and a single
master seed.  ``run_scenario`` walks the stages in a fixed order, feeding
each stage only what earlier stages produced, and collects the metrics
into a RunReport whose JSON serialization is byte-identical across reruns
of the same config.

Seeding rule: each stage (and each randomized item within a stage) hashes
``"{master_seed}:{label}"`` with SHA-256 and uses the first eight bytes as
its own RNG seed, so any stage can be reproduced in isolation.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import detect as detect_mod
from . import fusion as fusion_mod
from . import respiration as resp_mod
from .camera import CameraModel
from .detect import DetectParams, MarkerPose, detect_ring, track
from .fusion import ExecutionRecord, apply_correction, fit_tcp_correction, marker_in_base
from .geometry import Aabb, Point3, RigidTransform, pose_error
from .handeye import (
    plan_poses,
    reprojection_error,
    sample_from_board_observation,
    solve_ax_xb,
)
from .ply import write_cloud
from .respiration import detect_breath_hold, estimate_period, extract_signal, motion_alarm
from .scene import RingMarker, TorsoPhantom, marker_top_center_world, render_cloud

VERSION = "0.1.0"

GATE_THRESHOLD_PX = 0.5


class ConfigError(ValueError):
    """Raised when a scenario document is malformed."""


class StageError(RuntimeError):
    """Wraps an exception raised inside a pipeline stage."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


class MissingSectionError(KeyError):
    """Raised when emit_table asks for a section the report does not have."""


def stage_seed(master_seed: int, label: str) -> int:
    """Deterministic per-stage seed: first 8 bytes of SHA-256 of 'master:label'."""
    digest = hashlib.sha256(f"{master_seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


# ---------------------------------------------------------------------------
# Scenario configuration


def _transform_from(d: dict) -> RigidTransform:
    return RigidTransform.from_json_dict(d)


@dataclass(frozen=True)
class CalibrationConfig:
    count: int = 10
    tilt_range_deg: float = 22.0
    # Board-pose observation noise, the level a sub-pixel corner fit on a
    # close-range board delivers.  Rotation noise dominates the solve error
    # through the camera-to-board lever arm, so it is kept tight.
    board_noise_rot_deg: float = 0.01
    board_noise_mm: float = 0.03
    board_half_extents_mm: tuple[float, float] = (40.0, 30.0)
    resolution: tuple[int, int] = (256, 192)

    def to_json_dict(self) -> dict:
        return {
            "count": self.count,
            "tilt_range_deg": self.tilt_range_deg,
            "board_noise_rot_deg": self.board_noise_rot_deg,
            "board_noise_mm": self.board_noise_mm,
            "board_half_extents_mm": list(self.board_half_extents_mm),
            "resolution": list(self.resolution),
        }


@dataclass(frozen=True)
class ExecutionConfig:
    probe_count: int = 12
    fit_count: int = 8
    lateral_span_mm: float = 60.0
    lift_span_mm: float = 30.0

    def to_json_dict(self) -> dict:
        return {
            "probe_count": self.probe_count,
            "fit_count": self.fit_count,
            "lateral_span_mm": self.lateral_span_mm,
            "lift_span_mm": self.lift_span_mm,
        }


@dataclass(frozen=True)
class BreathingConfig:
    duration_s: float = 16.0
    frame_rate_hz: float = 8.0
    amplitude_mm: float = 3.0
    period_s: float = 4.0
    resolution: tuple[int, int] = (160, 120)
    amplitude_tol_mm: float = 0.8
    min_hold_s: float = 2.0
    alarm_threshold_mm: float = 2.0

    def to_json_dict(self) -> dict:
        return {
            "duration_s": self.duration_s,
            "frame_rate_hz": self.frame_rate_hz,
            "amplitude_mm": self.amplitude_mm,
            "period_s": self.period_s,
            "resolution": list(self.resolution),
            "amplitude_tol_mm": self.amplitude_tol_mm,
            "min_hold_s": self.min_hold_s,
            "alarm_threshold_mm": self.alarm_threshold_mm,
        }


@dataclass(frozen=True)
class SweepConfig:
    enabled: bool = True
    resolution: tuple[int, int] = (240, 180)
    patch_fraction: float = 0.25

    def to_json_dict(self) -> dict:
        return {
            "enabled": self.enabled,
            "resolution": list(self.resolution),
            "patch_fraction": self.patch_fraction,
        }


@dataclass(frozen=True)
class Scenario:
    """Complete, self-describing configuration of one synthetic run.

    ``hand_eye_true`` and ``phantom_in_base`` belong to the synthesizer side
    of the world; the estimation pipeline never reads them except to render
    clouds and to score results against ground truth.  ``include_marker``
    controls the surgical-scene stages only; the calibration stage always
    has its target in view.
    """

    master_seed: int
    out_dir: str = "runs/default"
    noise_scale: float = 1.0
    include_marker: bool = True
    scene_frames: int = 4
    camera: CameraModel = field(default_factory=CameraModel)
    phantom: TorsoPhantom = field(default_factory=TorsoPhantom)
    marker: RingMarker = field(default_factory=RingMarker)
    phantom_in_base: RigidTransform = field(
        default_factory=lambda: RigidTransform.translation(-450.0, -340.0, -70.0))
    hand_eye_true: RigidTransform = field(
        default_factory=lambda: RigidTransform.from_axis_angle(
            (0.2, -0.3, 0.9), 8.0, translation=(42.0, -18.5, 96.0)))
    robot_script: tuple[RigidTransform, ...] = ()
    observation_box: Aabb | None = None
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    execution: ExecutionConfig = field(default_factory=ExecutionConfig)
    breathing: BreathingConfig = field(default_factory=BreathingConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def __post_init__(self):
        if self.scene_frames < 1:
            raise ConfigError("scene_frames must be >= 1")
        if self.noise_scale < 0:
            raise ConfigError("noise_scale must be non-negative")
        if self.execution.probe_count < 2:
            raise ConfigError("execution.probe_count must be >= 2")
        if not (1 <= self.execution.fit_count < self.execution.probe_count):
            raise ConfigError("execution.fit_count must leave validation probes")
        script = tuple(self.robot_script) or (self._default_scene_flange(),)
        object.__setattr__(self, "robot_script", script)
        if self.observation_box is None:
            top = self.marker_top_in_base(0.0)
            object.__setattr__(self, "observation_box", Aabb.from_center_extents(
                top.as_array(), (90.0, 90.0, 24.0)))

    # -- synthesizer-side helpers ------------------------------------------

    def marker_top_in_base(self, t: float) -> Point3:
        top_phantom = marker_top_center_world(self.phantom, self.marker, t)
        return Point3.from_array(self.phantom_in_base.apply(top_phantom))

    def _default_scene_flange(self) -> RigidTransform:
        """Camera parked 400 mm straight above the marker, looking down."""
        top = self.marker_top_in_base(0.0)
        cam_in_base = RigidTransform.from_axis_angle(
            (1.0, 0.0, 0.0), 180.0,
            translation=(top.x, top.y, top.z + 400.0))
        return cam_in_base.compose(self.hand_eye_true.invert())

    def camera_in_phantom(self, flange_in_base: RigidTransform) -> RigidTransform:
        cam_in_base = flange_in_base.compose(self.hand_eye_true)
        return self.phantom_in_base.invert().compose(cam_in_base)

    # -- serialization ------------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "master_seed": self.master_seed,
            "out_dir": self.out_dir,
            "noise_scale": self.noise_scale,
            "include_marker": self.include_marker,
            "scene_frames": self.scene_frames,
            "camera": self.camera.to_json_dict(),
            "phantom": self.phantom.to_json_dict(),
            "marker": self.marker.to_json_dict(),
            "phantom_in_base": self.phantom_in_base.to_json_dict(),
            "hand_eye_true": self.hand_eye_true.to_json_dict(),
            "robot_script": [p.to_json_dict() for p in self.robot_script],
            "observation_box": {
                "center": [float(v) for v in self.observation_box.center],
                "extents": [float(v) for v in self.observation_box.extents],
            },
            "calibration": self.calibration.to_json_dict(),
            "execution": self.execution.to_json_dict(),
            "breathing": self.breathing.to_json_dict(),
            "sweep": self.sweep.to_json_dict(),
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "Scenario":
        if not isinstance(doc, dict):
            raise ConfigError("scenario document must be a JSON object")
        if "master_seed" not in doc:
            raise ConfigError("scenario must state master_seed explicitly")
        known = {
            "master_seed", "out_dir", "noise_scale", "include_marker",
            "scene_frames", "camera", "phantom", "marker", "phantom_in_base",
            "hand_eye_true", "robot_script", "observation_box", "calibration",
            "execution", "breathing", "sweep",
        }
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        try:
            kwargs: dict = {"master_seed": int(doc["master_seed"])}
            if "out_dir" in doc:
                kwargs["out_dir"] = str(doc["out_dir"])
            for key in ("noise_scale",):
                if key in doc:
                    kwargs[key] = float(doc[key])
            if "include_marker" in doc:
                kwargs["include_marker"] = bool(doc["include_marker"])
            if "scene_frames" in doc:
                kwargs["scene_frames"] = int(doc["scene_frames"])
            if "camera" in doc:
                kwargs["camera"] = CameraModel.from_json_dict(doc["camera"])
            if "phantom" in doc:
                kwargs["phantom"] = TorsoPhantom.from_json_dict(doc["phantom"])
            if "marker" in doc:
                kwargs["marker"] = RingMarker.from_json_dict(doc["marker"])
            if "phantom_in_base" in doc:
                kwargs["phantom_in_base"] = _transform_from(doc["phantom_in_base"])
            if "hand_eye_true" in doc:
                kwargs["hand_eye_true"] = _transform_from(doc["hand_eye_true"])
            if "robot_script" in doc:
                kwargs["robot_script"] = tuple(
                    _transform_from(p) for p in doc["robot_script"])
            if "observation_box" in doc:
                box = doc["observation_box"]
                kwargs["observation_box"] = Aabb.from_center_extents(
                    box["center"], box["extents"])
            if "calibration" in doc:
                c = doc["calibration"]
                kwargs["calibration"] = CalibrationConfig(
                    count=int(c.get("count", 10)),
                    tilt_range_deg=float(c.get("tilt_range_deg", 22.0)),
                    board_noise_rot_deg=float(c.get("board_noise_rot_deg", 0.01)),
                    board_noise_mm=float(c.get("board_noise_mm", 0.03)),
                    board_half_extents_mm=tuple(
                        float(v) for v in c.get("board_half_extents_mm", (40.0, 30.0))),
                    resolution=tuple(int(v) for v in c.get("resolution", (256, 192))),
                )
            if "execution" in doc:
                e = doc["execution"]
                kwargs["execution"] = ExecutionConfig(
                    probe_count=int(e.get("probe_count", 12)),
                    fit_count=int(e.get("fit_count", 8)),
                    lateral_span_mm=float(e.get("lateral_span_mm", 60.0)),
                    lift_span_mm=float(e.get("lift_span_mm", 30.0)),
                )
            if "breathing" in doc:
                b = doc["breathing"]
                kwargs["breathing"] = BreathingConfig(
                    duration_s=float(b.get("duration_s", 16.0)),
                    frame_rate_hz=float(b.get("frame_rate_hz", 8.0)),
                    amplitude_mm=float(b.get("amplitude_mm", 3.0)),
                    period_s=float(b.get("period_s", 4.0)),
                    resolution=tuple(int(v) for v in b.get("resolution", (160, 120))),
                    amplitude_tol_mm=float(b.get("amplitude_tol_mm", 0.8)),
                    min_hold_s=float(b.get("min_hold_s", 2.0)),
                    alarm_threshold_mm=float(b.get("alarm_threshold_mm", 2.0)),
                )
            if "sweep" in doc:
                s = doc["sweep"]
                kwargs["sweep"] = SweepConfig(
                    enabled=bool(s.get("enabled", True)),
                    resolution=tuple(int(v) for v in s.get("resolution", (240, 180))),
                    patch_fraction=float(s.get("patch_fraction", 0.25)),
                )
            return cls(**kwargs)
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad scenario document: {exc}") from exc


def default_scenario(out_dir: str = "runs/default",
                     master_seed: int = 20260817) -> Scenario:
    """The bundled demonstration scenario: marker on a flat torso phantom."""
    return Scenario(
        master_seed=master_seed,
        out_dir=out_dir,
        marker=RingMarker(pose_on_surface=RigidTransform.translation(3.4, 3.4, 0.0)),
    )


def load_scenario(path) -> Scenario:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scenario file is not valid JSON: {exc}") from exc
    return Scenario.from_json_dict(doc)


# ---------------------------------------------------------------------------
# Report


@dataclass
class RunReport:
    """Everything one scenario run produced.

    ``timings`` is wall-clock and therefore excluded from the JSON form;
    it is written to a separate timing.csv so report.json stays bit-exact
    under re-runs of the same config.
    """

    version: str
    config: dict
    stages: dict
    verdict: str
    error: dict | None = None
    timings: list[tuple[str, float]] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "version": self.version,
            "verdict": self.verdict,
            "error": self.error,
            "config": self.config,
            "stages": self.stages,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n"

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report_path = out / "report.json"
        report_path.write_text(self.to_json())
        if self.timings:
            with open(out / "timing.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["stage", "seconds"])
                for name, seconds in self.timings:
                    writer.writerow([name, f"{seconds:.6f}"])
        return report_path


# ---------------------------------------------------------------------------
# Stage implementations


def _small_random_transform(rng: np.random.Generator, rot_sigma_deg: float,
                            trans_sigma_mm: float) -> RigidTransform:
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    angle = float(rng.normal(0.0, rot_sigma_deg))
    shift = rng.normal(0.0, trans_sigma_mm, 3)
    return RigidTransform.from_axis_angle(axis, angle, translation=shift)


def _mean_transform(transforms: Sequence[RigidTransform]) -> RigidTransform:
    """Average of nearby poses: sign-aligned quaternion mean plus mean translation."""
    q0 = transforms[0].q
    qs = []
    for tr in transforms:
        q = tr.q
        qs.append(-q if float(q @ q0) < 0.0 else q)
    q_mean = np.mean(qs, axis=0)
    q_mean /= np.linalg.norm(q_mean)
    t_mean = np.mean([tr.t for tr in transforms], axis=0)
    return RigidTransform(q=q_mean, t=t_mean)


def _project_px(camera: CameraModel, points_cam: np.ndarray) -> np.ndarray:
    """Pixel coordinates of camera-frame points via the pixel-size column."""
    pts = np.atleast_2d(points_cam)
    px = np.asarray(camera.pixel_size(pts[:, 2]))
    nx, ny = camera.resolution
    u = pts[:, 0] / px + nx / 2.0
    v = pts[:, 1] / px + ny / 2.0
    return np.column_stack([u, v])


def _line_angle_deg(u: np.ndarray, w: np.ndarray) -> float:
    return math.degrees(math.acos(min(abs(float(u @ w)), 1.0)))


def _stage_plan(sc: Scenario) -> dict:
    poses = plan_poses(sc.observation_box, sc.calibration.count,
                       sc.calibration.tilt_range_deg, camera=sc.camera,
                       nominal_camera_in_flange=sc.hand_eye_true)
    center = sc.observation_box.center
    standoffs = []
    for p in poses:
        cam = p.compose(sc.hand_eye_true)
        standoffs.append(float(np.linalg.norm(cam.invert().apply(center))))
    axes = []
    for a, b in zip(poses, poses[1:]):
        motion = a.invert().compose(b)
        axes.append(motion.rotation_axis())
    min_sep = min(
        (_line_angle_deg(axes[i], axes[j])
         for i in range(len(axes)) for j in range(i + 1, len(axes))),
        default=90.0)
    return {
        "poses": poses,
        "summary": {
            "pose_count": len(poses),
            "standoff_min_mm": min(standoffs),
            "standoff_max_mm": max(standoffs),
            "min_consecutive_axis_separation_deg": min_sep,
        },
    }


def _stage_calibration(sc: Scenario, flange_poses: list[RigidTransform],
                       out: Path) -> dict:
    rng = np.random.default_rng(stage_seed(sc.master_seed, "calibration"))
    cam_base = replace(sc.camera, resolution=sc.calibration.resolution)
    board_in_base = RigidTransform.translation(*sc.marker_top_in_base(0.0))

    samples = []
    boards_obs = []
    center_errors = []
    for i, flange in enumerate(flange_poses):
        cam_in_phantom = sc.camera_in_phantom(flange)
        cam = cam_base.with_mount_pose(cam_in_phantom)
        seed = stage_seed(sc.master_seed, f"calibration:render:{i}")
        cloud = render_cloud(sc.phantom, sc.marker, cam, t=0.0, seed=seed,
                             noise_scale=sc.noise_scale)
        if i == 0:
            write_cloud(out / "cloud_calib_0000.ply", cloud)
        found = detect_ring(cloud)
        truth_cam = cam_in_phantom.invert().apply(
            marker_top_center_world(sc.phantom, sc.marker, 0.0))
        center_errors.append(float(np.linalg.norm(
            found.center.as_array() - truth_cam)))

        cam_in_base = flange.compose(sc.hand_eye_true)
        board_in_cam_true = cam_in_base.invert().compose(board_in_base)
        wobble = _small_random_transform(rng, sc.calibration.board_noise_rot_deg,
                                         sc.calibration.board_noise_mm)
        board_in_cam_obs = board_in_cam_true.compose(wobble)
        boards_obs.append(board_in_cam_obs)
        samples.append(sample_from_board_observation(flange, board_in_cam_obs))

    return {
        "samples": samples,
        "boards_obs": boards_obs,
        "summary": {
            "sample_count": len(samples),
            "ring_visible_in_all_views": True,
            "ring_center_error_median_mm": float(np.median(center_errors)),
            "ring_center_error_max_mm": float(np.max(center_errors)),
        },
    }


def _stage_solve(sc: Scenario, samples) -> dict:
    result = solve_ax_xb(samples)
    vs_truth = pose_error(result.camera_in_flange, sc.hand_eye_true)
    summary = result.to_json_dict()
    summary["rotation_error_vs_truth_deg"] = vs_truth.rotation_error_deg
    summary["translation_error_vs_truth_mm"] = vs_truth.translation_error_mm
    return {"result": result, "summary": summary}


def _stage_gate(sc: Scenario, flange_poses, boards_obs, hand_eye_hat) -> dict:
    w, h = sc.calibration.board_half_extents_mm
    corners_local = np.array([[-w, -h, 0.0], [w, -h, 0.0],
                              [w, h, 0.0], [-w, h, 0.0]])
    cam_px = replace(sc.camera, resolution=sc.calibration.resolution)

    board_in_base_each = [
        flange.compose(hand_eye_hat).compose(obs)
        for flange, obs in zip(flange_poses, boards_obs)
    ]
    consensus = _mean_transform(board_in_base_each)

    observed = []
    predicted = []
    for flange, obs in zip(flange_poses, boards_obs):
        cam_pose_hat = flange.compose(hand_eye_hat)
        observed.append(_project_px(cam_px, obs.apply(corners_local)))
        predicted.append(_project_px(
            cam_px, cam_pose_hat.invert().apply(consensus.apply(corners_local))))
    stats = reprojection_error(np.vstack(observed), np.vstack(predicted))
    passed = stats.passes_gate(GATE_THRESHOLD_PX)
    return {
        "passed": passed,
        "summary": {
            "mean_px": stats.mean_px,
            "std_px": stats.std_px,
            "max_px": stats.max_px,
            "threshold_px": GATE_THRESHOLD_PX,
            "passed": passed,
        },
    }


def _detect_scene_frame(sc: Scenario, flange: RigidTransform, label: str,
                        t: float, previous: MarkerPose | None,
                        out: Path | None = None,
                        cloud_name: str | None = None):
    cam_in_phantom = sc.camera_in_phantom(flange)
    cam = sc.camera.with_mount_pose(cam_in_phantom)
    seed = stage_seed(sc.master_seed, label)
    marker = sc.marker if sc.include_marker else None
    cloud = render_cloud(sc.phantom, marker, cam, t=t, seed=seed,
                         noise_scale=sc.noise_scale)
    if out is not None and cloud_name is not None:
        write_cloud(out / cloud_name, cloud)
    if previous is None:
        pose = detect_ring(cloud)
    else:
        pose = track(previous, cloud)
    truth_cam = cam_in_phantom.invert().apply(
        marker_top_center_world(sc.phantom, sc.marker, t))
    return pose, cloud, truth_cam


def _script_pose(sc: Scenario, j: int) -> RigidTransform:
    """Frame j's flange pose: walk the script, park at its last entry."""
    return sc.robot_script[min(j, len(sc.robot_script) - 1)]


def _stage_scene(sc: Scenario, out: Path) -> dict:
    frame_rate = sc.camera.frame_rate
    poses = []
    center_errors = []
    normal_errors = []
    previous = None
    for j in range(sc.scene_frames):
        t = j / frame_rate
        flange = _script_pose(sc, j)
        pose, cloud, truth_cam = _detect_scene_frame(
            sc, flange, f"scene:frame:{j}", t, previous,
            out=out if j == 0 else None,
            cloud_name="cloud_scene_0000.ply" if j == 0 else None)
        poses.append(pose)
        center_errors.append(float(np.linalg.norm(pose.center.as_array() - truth_cam)))
        # Ground-truth surface normal points up in the phantom frame; compare
        # as lines because the fitted normal is oriented toward the camera.
        up_cam = sc.camera_in_phantom(flange).invert().rotate(
            np.array([0.0, 0.0, 1.0]))
        normal_errors.append(_line_angle_deg(pose.normal, up_cam))
        previous = pose
    return {
        "poses": poses,
        "summary": {
            "frame_count": len(poses),
            "center_error_median_mm": float(np.median(center_errors)),
            "center_error_max_mm": float(np.max(center_errors)),
            "normal_error_median_deg": float(np.median(normal_errors)),
        },
    }


def _probe_offsets(cfg: ExecutionConfig) -> list[np.ndarray]:
    golden = math.pi * (3.0 - math.sqrt(5.0))
    offsets = []
    for k in range(cfg.probe_count):
        radius = cfg.lateral_span_mm * ((k % 3) + 1) / 3.0
        angle = k * golden
        lift = cfg.lift_span_mm * (k % 4) / 3.0
        offsets.append(np.array([radius * math.cos(angle),
                                 radius * math.sin(angle), lift]))
    return offsets


def _stage_fusion(sc: Scenario, hand_eye_hat: RigidTransform, out: Path) -> dict:
    truth_base = sc.marker_top_in_base(0.0).as_array()
    offsets = _probe_offsets(sc.execution)
    frame_rate = sc.camera.frame_rate

    records = []
    for k, offset in enumerate(offsets):
        flange_k = RigidTransform.translation(*offset).compose(sc.robot_script[0])
        t = (sc.scene_frames + k) / frame_rate
        pose_k, _, _ = _detect_scene_frame(sc, flange_k, f"fusion:probe:{k}",
                                           t, previous=None)
        fused, _ = marker_in_base(hand_eye_hat, flange_k, pose_k)
        observed_cmd = fused.as_array() + offset
        executed = truth_base + offset
        records.append(ExecutionRecord(
            camera_observed=Point3.from_array(observed_cmd),
            robot_executed=Point3.from_array(executed)))

    fit_records = records[:sc.execution.fit_count]
    val_records = records[sc.execution.fit_count:]
    correction = fit_tcp_correction(fit_records)

    def per_axis_abs(recs, corrected: bool):
        errs = []
        for rec in recs:
            pt = (apply_correction(correction, rec.camera_observed)
                  if corrected else rec.camera_observed)
            errs.append(rec.robot_executed.as_array() - pt.as_array())
        return [float(v) for v in np.mean(np.abs(np.array(errs)), axis=0)]

    fusion_mod.write_records(out / "execution.csv", records)
    return {
        "summary": {
            "probe_count": len(records),
            "fit_count": len(fit_records),
            "validation_count": len(val_records),
            "correction": correction.to_json_dict(),
            "pre_correction_mean_abs_mm": per_axis_abs(val_records, corrected=False),
            "post_correction_mean_abs_mm": per_axis_abs(val_records, corrected=True),
            "records": [
                {"obs": [r.camera_observed.x, r.camera_observed.y,
                         r.camera_observed.z],
                 "exec": [r.robot_executed.x, r.robot_executed.y,
                          r.robot_executed.z]}
                for r in records
            ],
        },
    }


def _stage_breathing(sc: Scenario, out: Path) -> dict:
    cfg = sc.breathing
    phantom = replace(sc.phantom,
                      breathing_amplitude_mm=cfg.amplitude_mm,
                      breathing_period_s=cfg.period_s)
    cam_in_phantom = sc.camera_in_phantom(sc.robot_script[0])
    cam = replace(sc.camera, resolution=cfg.resolution,
                  mount_pose=cam_in_phantom)
    frame_count = int(round(cfg.duration_s * cfg.frame_rate_hz))

    poses = []
    previous = None
    for j in range(frame_count):
        t = j / cfg.frame_rate_hz
        seed = stage_seed(sc.master_seed, f"breathing:frame:{j}")
        marker = sc.marker if sc.include_marker else None
        cloud = render_cloud(phantom, marker, cam, t=t, seed=seed,
                             noise_scale=sc.noise_scale)
        pose = detect_ring(cloud) if previous is None else track(previous, cloud)
        poses.append(pose)
        previous = pose

    signal = extract_signal(poses, poses[0].normal)
    resp_mod.write_signal_csv(out / "signal.csv", signal)
    period = estimate_period(signal)
    gates = detect_breath_hold(signal, cfg.amplitude_tol_mm, cfg.min_hold_s)
    alarms = motion_alarm(signal, cfg.alarm_threshold_mm)
    _, values = signal.arrays()
    return {
        "summary": {
            "frame_count": frame_count,
            "period_estimate_s": float(period),
            "period_true_s": cfg.period_s,
            "period_error_s": float(period - cfg.period_s),
            "peak_to_peak_mm": float(values.max() - values.min()),
            "gate_count": len(gates),
            "gates": [g.to_json_dict() for g in gates],
            "alarm_count": len(alarms),
            "alarms": [a.to_json_dict() for a in alarms],
        },
    }


def _stage_sweep(sc: Scenario) -> dict:
    cfg = sc.sweep
    rows = []
    frac = cfg.patch_fraction
    for row in sc.camera.fov_table:
        d = row.distance_mm
        d_meas = min(max(d, sc.camera.near_mm + 1.0), sc.camera.far_mm - 2.0)
        fx, fy = sc.camera.field_of_view(d_meas)
        patch = TorsoPhantom(extent=(-fx * frac / 2.0, fx * frac / 2.0,
                                     -fy * frac / 2.0, fy * frac / 2.0))
        mount = RigidTransform.from_axis_angle((1.0, 0.0, 0.0), 180.0,
                                               translation=(0.0, 0.0, d_meas))
        cam = replace(sc.camera, resolution=cfg.resolution, mount_pose=mount)
        seed = stage_seed(sc.master_seed, f"sweep:{d}")
        cloud = render_cloud(patch, None, cam, seed=seed,
                             noise_scale=sc.noise_scale)
        z = cloud.points[:, 2]
        rows.append({
            "distance_mm": d,
            "measured_at_mm": d_meas,
            "fov_x_mm": row.fov_x_mm,
            "fov_y_mm": row.fov_y_mm,
            "pixel_size_mm": row.pixel_size_mm,
            "sigma_z_table_mm": row.sigma_z_mm,
            "sigma_z_measured_mm": float(np.std(z - np.mean(z))),
            "point_count": int(len(cloud)),
        })
    return {"summary": {"rows": rows}}


# ---------------------------------------------------------------------------
# Runner

STAGE_ORDER = ("plan", "calibration", "solve", "gate", "scene", "fusion",
               "breathing", "sweep")


def run_scenario(scenario: Scenario, *,
                 last_stage: str | None = None) -> RunReport:
    """Execute the stages in order and assemble the report.

    Stage exceptions are captured (verdict FAILED-STAGE:<name>); a failed
    reprojection gate stops the pipeline with verdict FAILED-GATE.  The
    report is always written under the scenario's out_dir.  ``last_stage``
    truncates the pipeline after the named stage (e.g. "gate" runs just
    the calibration half).
    """
    if last_stage is not None and last_stage not in STAGE_ORDER:
        raise ConfigError(f"unknown stage {last_stage!r}")
    cutoff = (len(STAGE_ORDER) - 1 if last_stage is None
              else STAGE_ORDER.index(last_stage))

    def wanted(name: str) -> bool:
        return STAGE_ORDER.index(name) <= cutoff

    out = Path(scenario.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    stages: dict = {}
    timings: list[tuple[str, float]] = []
    verdict = "PASSED"
    error = None

    def run_stage(name: str, fn: Callable[[], dict]) -> dict:
        start = time.perf_counter()
        try:
            result = fn()
        except Exception as exc:
            timings.append((name, time.perf_counter() - start))
            raise StageError(name, exc) from exc
        timings.append((name, time.perf_counter() - start))
        stages[name] = result["summary"]
        return result

    try:
        plan = run_stage("plan", lambda: _stage_plan(scenario))
        if wanted("calibration"):
            calib = run_stage("calibration", lambda: _stage_calibration(
                scenario, plan["poses"], out))
        if wanted("solve"):
            solved = run_stage("solve", lambda: _stage_solve(
                scenario, calib["samples"]))
            hand_eye_hat = solved["result"].camera_in_flange
        if wanted("gate"):
            gate = run_stage("gate", lambda: _stage_gate(
                scenario, plan["poses"], calib["boards_obs"], hand_eye_hat))
            if not gate["passed"]:
                verdict = "FAILED-GATE"
        if verdict == "PASSED":
            if wanted("scene"):
                run_stage("scene", lambda: _stage_scene(scenario, out))
            if wanted("fusion"):
                run_stage("fusion", lambda: _stage_fusion(
                    scenario, hand_eye_hat, out))
            if wanted("breathing"):
                run_stage("breathing", lambda: _stage_breathing(scenario, out))
            if wanted("sweep") and scenario.sweep.enabled:
                run_stage("sweep", lambda: _stage_sweep(scenario))
    except StageError as exc:
        verdict = f"FAILED-STAGE:{exc.stage}"
        error = {
            "stage": exc.stage,
            "type": type(exc.cause).__name__,
            "message": str(exc.cause),
        }

    report = RunReport(
        version=VERSION,
        config=scenario.to_json_dict(),
        stages=stages,
        verdict=verdict,
        error=error,
        timings=timings,
    )
    report.write(out)
    return report


def simulate_clouds(scenario: Scenario, out_dir=None) -> list[Path]:
    """Render the scripted scene frames and write one PLY file per frame.

    Frame j reuses the scene stage's seed label, so frame 0 matches the
    cloud a full run writes as cloud_scene_0000.ply.
    """
    out = Path(out_dir if out_dir is not None else scenario.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    marker = scenario.marker if scenario.include_marker else None
    paths = []
    for j in range(scenario.scene_frames):
        flange = _script_pose(scenario, j)
        cam = scenario.camera.with_mount_pose(scenario.camera_in_phantom(flange))
        cloud = render_cloud(scenario.phantom, marker, cam,
                             t=j / scenario.camera.frame_rate,
                             seed=stage_seed(scenario.master_seed, f"scene:frame:{j}"),
                             noise_scale=scenario.noise_scale)
        paths.append(write_cloud(out / f"cloud_scene_{j:04d}.ply", cloud))
    return paths


def breathing_summary(scenario: Scenario, out_dir=None) -> dict:
    """Run only the breathing stage; writes signal.csv, returns the summary."""
    out = Path(out_dir if out_dir is not None else scenario.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return _stage_breathing(scenario, out)["summary"]


def load_report(path) -> RunReport:
    """Read a report.json back (plus timing.csv when present beside it)."""
    p = Path(path)
    try:
        doc = json.loads(p.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read report: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"report is not valid JSON: {exc}") from exc
    try:
        report = RunReport(
            version=doc["version"],
            config=doc["config"],
            stages=doc["stages"],
            verdict=doc["verdict"],
            error=doc.get("error"),
        )
    except KeyError as exc:
        raise ConfigError(f"report is missing key {exc}") from exc
    timing_path = p.parent / "timing.csv"
    if timing_path.exists():
        with open(timing_path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader, None)
            report.timings = [(row[0], float(row[1])) for row in reader if row]
    return report


# ---------------------------------------------------------------------------
# Tables


def emit_table(report: RunReport, table_id: str) -> str:
    """Render one report section as CSV text."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")  # terminal-friendly output
    if table_id == "accuracy-vs-distance":
        sweep = report.stages.get("sweep")
        if not sweep or "rows" not in sweep:
            raise MissingSectionError("report has no sweep section")
        writer.writerow(["distance_mm", "fov_x_mm", "fov_y_mm", "pixel_size_mm",
                         "sigma_z_table_mm", "sigma_z_measured_mm",
                         "measured_at_mm", "point_count"])
        for row in sweep["rows"]:
            writer.writerow([
                row["distance_mm"], row["fov_x_mm"], row["fov_y_mm"],
                row["pixel_size_mm"], row["sigma_z_table_mm"],
                f"{row['sigma_z_measured_mm']:.6f}", row["measured_at_mm"],
                row["point_count"],
            ])
    elif table_id == "execution-error":
        fusion = report.stages.get("fusion")
        if not fusion or "records" not in fusion:
            raise MissingSectionError("report has no execution records")
        writer.writerow(["obs_x", "obs_y", "obs_z", "exec_x", "exec_y", "exec_z",
                         "diff_x", "diff_y", "diff_z"])
        for rec in fusion["records"]:
            obs = rec["obs"]
            exe = rec["exec"]
            diff = [e - o for o, e in zip(obs, exe)]
            writer.writerow([f"{v:.6f}" for v in (*obs, *exe, *diff)])
    elif table_id == "timing":
        if not report.timings:
            raise MissingSectionError("report has no timing data")
        writer.writerow(["stage", "seconds"])
        for name, seconds in report.timings:
            writer.writerow([name, f"{seconds:.6f}"])
    else:
        raise ValueError(f"unknown table id: {table_id!r}")
    return buf.getvalue()
