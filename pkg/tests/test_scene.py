import numpy as np
import pytest

from specklenav.camera import CameraModel
from specklenav.geometry import Box, RigidTransform
from specklenav.scene import (
    EmptyCloudError,
    PointCloud,
    RingMarker,
    TorsoPhantom,
    breathing_offset,
    marker_pose_world,
    marker_top_center_world,
    render_cloud,
)


def down_camera(distance_mm: float, **kwargs) -> CameraModel:
    """Camera on the phantom z axis looking straight down at the patch."""
    mount = RigidTransform.from_axis_angle((1.0, 0.0, 0.0), 180.0,
                                           translation=(0.0, 0.0, distance_mm))
    return CameraModel(mount_pose=mount, **kwargs)


# ---------------------------------------------------------------------------
# surfaces and breathing


def test_flat_surface_height_zero():
    phantom = TorsoPhantom()
    assert np.all(phantom.height([0.0, 10.0], [0.0, -20.0]) == 0.0)


def test_slope_and_ripple_and_dome_surfaces():
    slope = TorsoPhantom(surface={"kind": "slope", "gx": 0.1, "gy": -0.2})
    assert slope.height(10.0, 10.0) == pytest.approx(-1.0)
    ripple = TorsoPhantom(surface={"kind": "ripple", "amplitude_mm": 2.0,
                                   "wavelength_x_mm": 80.0,
                                   "wavelength_y_mm": 60.0})
    assert ripple.height(0.0, 0.0) == pytest.approx(2.0)
    dome = TorsoPhantom(surface={"kind": "dome", "height_mm": 30.0,
                                 "rx_mm": 100.0, "ry_mm": 80.0})
    assert dome.height(0.0, 0.0) == pytest.approx(30.0)
    assert dome.height(100.0, 0.0) == pytest.approx(0.0)


def test_unknown_surface_kind_rejected():
    with pytest.raises(ValueError):
        TorsoPhantom(surface={"kind": "waves"})


def test_height_outside_patch_is_sentinel():
    phantom = TorsoPhantom(extent=(-50.0, 50.0, -40.0, 40.0))
    inside = float(phantom.height(0.0, 0.0))
    outside = float(phantom.height(60.0, 0.0))
    assert inside == 0.0
    assert outside < -1e6


def test_extent_and_breathing_validation():
    with pytest.raises(ValueError):
        TorsoPhantom(extent=(50.0, -50.0, -40.0, 40.0))
    with pytest.raises(ValueError):
        TorsoPhantom(breathing_amplitude_mm=-1.0)
    with pytest.raises(ValueError):
        TorsoPhantom(breathing_period_s=0.0)


def test_breathing_offset_sinusoid():
    phantom = TorsoPhantom(breathing_amplitude_mm=3.0, breathing_period_s=4.0)
    assert breathing_offset(phantom, 0.0) == pytest.approx(0.0, abs=1e-12)
    assert breathing_offset(phantom, 1.0) == pytest.approx(3.0, abs=1e-9)
    assert breathing_offset(phantom, 3.0) == pytest.approx(-3.0, abs=1e-9)
    # periodicity holds far from t=0 as well
    assert breathing_offset(phantom, 401.0) == pytest.approx(3.0, abs=1e-9)


def test_still_phantom_has_zero_offset():
    assert breathing_offset(TorsoPhantom(), 12.34) == 0.0


def test_phantom_json_roundtrip():
    phantom = TorsoPhantom(surface={"kind": "dome", "height_mm": 25.0,
                                    "rx_mm": 120.0, "ry_mm": 90.0},
                           breathing_amplitude_mm=2.0)
    back = TorsoPhantom.from_json_dict(phantom.to_json_dict())
    assert back.surface == phantom.surface
    assert back.extent == phantom.extent
    assert back.breathing_amplitude_mm == 2.0


def test_callable_surface_not_serializable():
    phantom = TorsoPhantom(surface=lambda x, y: np.zeros_like(x))
    with pytest.raises(TypeError):
        phantom.to_json_dict()


# ---------------------------------------------------------------------------
# marker placement


def test_marker_rides_the_breathing_surface():
    phantom = TorsoPhantom(breathing_amplitude_mm=3.0, breathing_period_s=4.0)
    marker = RingMarker()
    still = marker_pose_world(phantom, marker, 0.0)
    lifted = marker_pose_world(phantom, marker, 1.0)
    assert lifted.t[2] - still.t[2] == pytest.approx(3.0, abs=1e-9)


def test_marker_top_center_adds_thickness():
    phantom = TorsoPhantom()
    marker = RingMarker()
    top = marker_top_center_world(phantom, marker, 0.0)
    assert np.allclose(top, [0.0, 0.0, marker.thickness_mm], atol=1e-12)


def test_marker_anchor_must_be_on_patch():
    phantom = TorsoPhantom(extent=(-50.0, 50.0, -40.0, 40.0))
    marker = RingMarker(pose_on_surface=RigidTransform.translation(80.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        marker_pose_world(phantom, marker, 0.0)


def test_ring_marker_defaults_and_validation():
    marker = RingMarker()
    assert marker.outer_diameter_mm == 24.0
    assert marker.inner_diameter_mm == 16.0
    assert marker.mid_diameter_mm == 20.0
    with pytest.raises(ValueError):
        RingMarker(outer_diameter_mm=10.0, inner_diameter_mm=16.0)


def test_ring_marker_json_roundtrip():
    marker = RingMarker(pose_on_surface=RigidTransform.translation(3.4, 3.4, 0.0))
    back = RingMarker.from_json_dict(marker.to_json_dict())
    assert back.outer_diameter_mm == marker.outer_diameter_mm
    assert np.array_equal(back.pose_on_surface.t, marker.pose_on_surface.t)


# ---------------------------------------------------------------------------
# rendering


def test_render_is_deterministic_per_seed():
    cam = down_camera(400.0, resolution=(96, 72))
    phantom = TorsoPhantom()
    a = render_cloud(phantom, RingMarker(), cam, seed=11)
    b = render_cloud(phantom, RingMarker(), cam, seed=11)
    c = render_cloud(phantom, RingMarker(), cam, seed=12)
    assert np.array_equal(a.points, b.points)
    assert not np.array_equal(a.points, c.points)
    assert a.seed == 11 and a.timestamp_s == 0.0


def test_every_rendered_point_is_inside_the_frustum():
    phantom = TorsoPhantom(surface={"kind": "dome", "height_mm": 40.0,
                                    "rx_mm": 160.0, "ry_mm": 120.0})
    for distance, seed in ((300.0, 0), (450.0, 1), (650.0, 2)):
        cam = down_camera(distance, resolution=(80, 60))
        cloud = render_cloud(phantom, RingMarker(), cam, seed=seed)
        assert bool(cam.contains(cloud.points).all())


def test_noise_free_flat_scene_is_exact():
    cam = down_camera(400.0, resolution=(64, 48))
    cloud = render_cloud(TorsoPhantom(), None, cam, noise_scale=0.0)
    assert np.max(np.abs(cloud.points[:, 2] - 400.0)) < 1e-9


def test_noise_magnitude_tracks_the_table():
    """Axial spread of a flat wall matches sigma_z at the wall distance."""
    cam = down_camera(500.0, resolution=(128, 96))
    cloud = render_cloud(TorsoPhantom(extent=(-120.0, 120.0, -80.0, 80.0)),
                         None, cam, seed=3)
    measured = float(np.std(cloud.points[:, 2]))
    assert measured == pytest.approx(0.183, rel=0.10)


def test_negative_noise_scale_rejected():
    cam = down_camera(400.0, resolution=(32, 24))
    with pytest.raises(ValueError):
        render_cloud(TorsoPhantom(), None, cam, noise_scale=-1.0)


def test_marker_top_face_sits_proud_of_the_skin():
    cam = down_camera(400.0, resolution=(256, 192))
    cloud = render_cloud(TorsoPhantom(), RingMarker(), cam, noise_scale=0.0)
    z = cloud.points[:, 2]
    ring = cloud.points[np.abs(z - 398.0) < 0.25]
    skin = cloud.points[np.abs(z - 400.0) < 0.25]
    assert len(ring) >= 50
    assert len(skin) > 10 * len(ring)
    radii = np.hypot(ring[:, 0], ring[:, 1])
    assert radii.min() > 7.0 and radii.max() < 13.0


def test_render_without_marker_has_no_proud_points():
    cam = down_camera(400.0, resolution=(128, 96))
    cloud = render_cloud(TorsoPhantom(), None, cam, noise_scale=0.0)
    assert np.all(cloud.points[:, 2] > 399.0)


def test_breathing_moves_the_rendered_surface():
    phantom = TorsoPhantom(breathing_amplitude_mm=3.0, breathing_period_s=4.0)
    cam = down_camera(400.0, resolution=(48, 36))
    exhale = render_cloud(phantom, None, cam, t=0.0, noise_scale=0.0)
    inhale = render_cloud(phantom, None, cam, t=1.0, noise_scale=0.0)
    dz = np.median(exhale.points[:, 2]) - np.median(inhale.points[:, 2])
    assert dz == pytest.approx(3.0, abs=1e-6)


def test_occluder_box_wins_the_ray_race():
    cam = down_camera(400.0, resolution=(64, 48))
    # box top face sits at phantom z = 105, i.e. camera depth 295
    lid = Box(pose=RigidTransform.translation(0.0, 0.0, 100.0),
              half_extents=(40.0, 40.0, 5.0))
    cloud = render_cloud(TorsoPhantom(), None, cam, noise_scale=0.0,
                         occluders=(lid,))
    z = cloud.points[:, 2]
    on_box = cloud.points[np.abs(z - 295.0) < 0.5]
    assert len(on_box) > 20
    lateral = np.hypot(on_box[:, 0], on_box[:, 1])
    assert lateral.max() < 60.0
    # directly under the box no ray reaches the skin plane
    under = (np.hypot(cloud.points[:, 0], cloud.points[:, 1]) < 30.0) \
        & (np.abs(z - 400.0) < 0.5)
    assert not under.any()


def test_camera_looking_away_yields_empty_cloud_error():
    mount = RigidTransform.translation(0.0, 0.0, 400.0)  # stares at +z, away
    cam = CameraModel(mount_pose=mount, resolution=(32, 24))
    with pytest.raises(EmptyCloudError):
        render_cloud(TorsoPhantom(), None, cam)


def test_surface_exactly_at_near_knot_still_renders():
    """A wall exactly on the 250 mm knot grazes phi = 0 and must count as hit."""
    cam = down_camera(250.0, resolution=(48, 36))
    cloud = render_cloud(TorsoPhantom(), None, cam, noise_scale=0.0)
    assert len(cloud) > 100
    assert np.max(np.abs(cloud.points[:, 2] - 250.0)) < 1e-9


def test_point_cloud_validation_and_immutability():
    with pytest.raises(ValueError):
        PointCloud(points=np.array([[np.inf, 0.0, 0.0]]), timestamp_s=0.0, seed=0)
    cloud = PointCloud(points=np.zeros((4, 3)), timestamp_s=0.0, seed=0)
    assert len(cloud) == 4
    with pytest.raises(ValueError):
        cloud.points[0, 0] = 1.0
