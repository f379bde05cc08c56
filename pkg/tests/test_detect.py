import numpy as np
import pytest

from specklenav.camera import CameraModel
from specklenav.detect import (
    AmbiguousMarkerError,
    DegenerateGeometryError,
    DetectParams,
    MarkerPose,
    NoMarkerFoundError,
    TooFewPointsError,
    detect_ring,
    fit_circle_3d,
    track,
)
from specklenav.geometry import Point3, RigidTransform, random_transform
from specklenav.scene import PointCloud, RingMarker, TorsoPhantom, render_cloud

TOP_TRUTH = np.array([0.0, 0.0, 398.0])  # ring top face, camera frame
DOWN_NORMAL = np.array([0.0, 0.0, -1.0])

_DEFAULT_MARKER = RingMarker()


def scene_cloud(seed: int, distance: float = 400.0, resolution=(256, 192),
                marker=_DEFAULT_MARKER, noise_scale: float = 1.0) -> PointCloud:
    mount = RigidTransform.from_axis_angle((1.0, 0.0, 0.0), 180.0,
                                           translation=(0.0, 0.0, distance))
    cam = CameraModel(mount_pose=mount, resolution=resolution)
    return render_cloud(TorsoPhantom(), marker, cam, seed=seed,
                        noise_scale=noise_scale)


def normal_angle_deg(n: np.ndarray, ref: np.ndarray) -> float:
    return float(np.degrees(np.arccos(np.clip(abs(float(n @ ref)), 0.0, 1.0))))


def test_detects_ring_center_and_normal():
    pose = detect_ring(scene_cloud(0))
    assert np.linalg.norm(pose.center.as_array() - TOP_TRUTH) < 0.3
    assert normal_angle_deg(pose.normal, DOWN_NORMAL) < 0.5
    assert pose.radius_mm == pytest.approx(10.0, abs=0.5)
    assert pose.inlier_count >= 15
    # the fit spans the full annulus, so the radial rms is about its
    # quarter-width, far below the diameter tolerance
    assert 0.5 < pose.rms_residual_mm < 2.0
    assert pose.timestamp_s == 0.0


def test_normal_points_toward_the_camera():
    pose = detect_ring(scene_cloud(1))
    assert float(pose.normal @ pose.center.as_array()) < 0.0


def test_detection_statistics_over_seeds():
    center_errs = []
    normal_errs = []
    for seed in range(30):
        pose = detect_ring(scene_cloud(seed))
        center_errs.append(np.linalg.norm(pose.center.as_array() - TOP_TRUTH))
        normal_errs.append(normal_angle_deg(pose.normal, DOWN_NORMAL))
    assert np.median(center_errs) <= 0.3
    assert np.median(normal_errs) <= 0.5
    assert max(center_errs) < 1.0


def test_detection_is_deterministic():
    cloud = scene_cloud(5)
    a = detect_ring(cloud)
    b = detect_ring(cloud)
    assert a.center == b.center
    assert np.array_equal(a.normal, b.normal)
    assert a.inlier_count == b.inlier_count


def test_no_marker_raises():
    with pytest.raises(NoMarkerFoundError):
        detect_ring(scene_cloud(2, marker=None, resolution=(128, 96)))


def test_tiny_cloud_raises():
    cloud = PointCloud(points=np.zeros((5, 3)) + [0.0, 0.0, 400.0],
                       timestamp_s=0.0, seed=0)
    with pytest.raises(NoMarkerFoundError):
        detect_ring(cloud)


def test_wrong_expected_diameter_finds_nothing():
    params = DetectParams(expected_outer_diameter_mm=60.0,
                          expected_inner_diameter_mm=52.0)
    with pytest.raises(NoMarkerFoundError):
        detect_ring(scene_cloud(3), params)


def test_rigid_invariance_of_detection():
    """Moving the whole cloud moves the detection with it, to rounding."""
    cloud = scene_cloud(4)
    base = detect_ring(cloud)
    rng = np.random.default_rng(17)
    for _ in range(5):
        g = random_transform(rng, max_rotation_deg=40.0, max_translation_mm=100.0)
        moved = PointCloud(points=g.apply(cloud.points),
                           timestamp_s=cloud.timestamp_s, seed=cloud.seed)
        got = detect_ring(moved)
        assert np.linalg.norm(
            got.center.as_array() - g.apply(base.center.as_array())) < 1e-9
        assert normal_angle_deg(got.normal, g.rotate(base.normal)) < 1e-5


def test_two_identical_rings_are_ambiguous():
    markers = [RingMarker(pose_on_surface=RigidTransform.translation(-60.0, 0.0, 0.0)),
               RingMarker(pose_on_surface=RigidTransform.translation(60.0, 0.0, 0.0))]
    cloud = scene_cloud(6, marker=markers, noise_scale=0.0)
    with pytest.raises(AmbiguousMarkerError):
        detect_ring(cloud)


def test_track_follows_a_laterally_shifted_marker():
    first = detect_ring(scene_cloud(7))
    marker = RingMarker(pose_on_surface=RigidTransform.translation(6.0, -4.0, 0.0))
    nxt = track(first, scene_cloud(8, marker=marker))
    expect = TOP_TRUTH + np.array([6.0, 4.0, 0.0])  # camera y axis is flipped
    assert np.linalg.norm(nxt.center.as_array() - expect) < 0.3


def test_track_falls_back_to_full_search():
    stale = detect_ring(scene_cloud(9))
    # marker now sits 106 mm away laterally, outside the tracking crop
    far_marker = RingMarker(pose_on_surface=RigidTransform.translation(-90.0, 55.0, 0.0))
    got = track(stale, scene_cloud(10, marker=far_marker))
    expect = TOP_TRUTH + np.array([-90.0, -55.0, 0.0])
    assert np.linalg.norm(got.center.as_array() - expect) < 0.3


def test_detect_params_validation():
    with pytest.raises(ValueError):
        DetectParams(expected_inner_diameter_mm=30.0)
    with pytest.raises(ValueError):
        DetectParams(min_inliers=3)
    with pytest.raises(ValueError):
        DetectParams(band_low_mm=5.0, band_high_mm=4.0)
    with pytest.raises(ValueError):
        DetectParams(ransac_iterations=0)


def test_expected_mid_diameter():
    assert DetectParams().expected_mid_diameter_mm == 20.0


def test_circle_fit_on_synthetic_circle():
    rng = np.random.default_rng(21)
    theta = rng.uniform(0, 2 * np.pi, 200)
    center = np.array([5.0, -3.0, 120.0])
    e1 = np.array([1.0, 0.0, 0.0])
    e2 = np.array([0.0, np.cos(0.3), np.sin(0.3)])
    pts = center + 10.0 * (np.outer(np.cos(theta), e1) + np.outer(np.sin(theta), e2))
    fit = fit_circle_3d(pts)
    assert np.linalg.norm(fit.center - center) < 1e-9
    assert fit.radius_mm == pytest.approx(10.0, abs=1e-9)
    assert fit.rms_mm < 1e-9


def test_circle_fit_error_paths():
    with pytest.raises(TooFewPointsError):
        fit_circle_3d(np.zeros((5, 3)))
    line = np.outer(np.linspace(0.0, 1.0, 30), [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateGeometryError):
        fit_circle_3d(line)


def test_marker_pose_validation():
    with pytest.raises(ValueError):
        MarkerPose(center=Point3(0.0, 0.0, 400.0),
                   normal=np.array([0.0, 0.0, 1.0]),  # points away from camera
                   radius_mm=10.0, rms_residual_mm=0.1,
                   inlier_count=20, timestamp_s=0.0)
    with pytest.raises(ValueError):
        MarkerPose(center=Point3(0.0, 0.0, 400.0),
                   normal=np.array([0.0, 0.0, -2.0]),  # not unit length
                   radius_mm=10.0, rms_residual_mm=0.1,
                   inlier_count=20, timestamp_s=0.0)


def test_marker_pose_json_schema():
    pose = detect_ring(scene_cloud(11))
    doc = pose.to_json_dict()
    assert set(doc) == {"center", "normal", "radius_mm", "rms_mm", "inliers", "t"}
    assert len(doc["center"]) == 3 and len(doc["normal"]) == 3
