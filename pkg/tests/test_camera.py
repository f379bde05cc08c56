import warnings

import numpy as np
import pytest

from specklenav.camera import CameraModel, FovRow, RangeClampWarning
from specklenav.geometry import RigidTransform

# Bench-calibration rows of the reference camera: distance, fov_x, fov_y,
# sigma_z, pixel size (mm).
KNOTS = [
    (250.0, 198.44, 129.20, 0.033, 0.106),
    (260.0, 202.37, 134.37, 0.036, 0.111),
    (380.0, 408.60, 270.68, 0.106, 0.223),
    (400.0, 435.37, 284.93, 0.117, 0.234),
    (500.0, 565.23, 356.16, 0.183, 0.293),
    (600.0, 658.27, 427.39, 0.264, 0.352),
    (700.0, 751.32, 498.63, 0.359, 0.410),
]


@pytest.fixture
def camera():
    return CameraModel()


def test_default_table_matches_bench_rows(camera):
    assert len(camera.fov_table) == 7
    for row, (d, fx, fy, sz, px) in zip(camera.fov_table, KNOTS):
        assert (row.distance_mm, row.fov_x_mm, row.fov_y_mm,
                row.sigma_z_mm, row.pixel_size_mm) == (d, fx, fy, sz, px)


def test_columns_exact_at_every_knot(camera):
    for d, fx, fy, sz, px in KNOTS:
        assert camera.sigma_z(d) == sz
        assert camera.field_of_view(d) == (fx, fy)
        assert camera.pixel_size(d) == px


def test_interpolation_between_knots(camera):
    # midpoint of the 260..380 segment, frozen by hand from the two rows
    assert camera.field_of_view(300.0) == pytest.approx(
        (271.11333333333334, 179.80666666666667), abs=1e-12)
    got = camera.sigma_z(300.0)
    assert got == pytest.approx(0.036 + (0.106 - 0.036) / 3.0, abs=1e-12)


def test_working_range_endpoints(camera):
    assert camera.near_mm == 250.0
    assert camera.far_mm == 700.0


def test_out_of_range_clamps_with_warning(camera):
    with pytest.warns(RangeClampWarning):
        assert camera.sigma_z(100.0) == 0.033
    with pytest.warns(RangeClampWarning):
        assert camera.field_of_view(900.0) == (751.32, 498.63)


def test_in_range_does_not_warn(camera):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        camera.sigma_z(400.0)
        camera.field_of_view(250.0)
        camera.pixel_size(700.0)


def test_vectorized_queries_keep_shape(camera):
    d = np.array([250.0, 400.0, 700.0])
    sz = camera.sigma_z(d)
    assert np.array_equal(sz, [0.033, 0.117, 0.359])
    px = camera.pixel_size(d)
    assert px.shape == (3,)


def test_contains_checks_depth_and_lateral_extent(camera):
    inside = np.array([[0.0, 0.0, 400.0]])
    assert camera.contains(inside).all()
    too_near = np.array([[0.0, 0.0, 200.0]])
    too_far = np.array([[0.0, 0.0, 800.0]])
    assert not camera.contains(too_near).any()
    assert not camera.contains(too_far).any()
    # fov_x at 400 mm is 435.37, so half-width is 217.685
    lateral_in = np.array([[217.0, 0.0, 400.0]])
    lateral_out = np.array([[218.0, 0.0, 400.0]])
    assert camera.contains(lateral_in).all()
    assert not camera.contains(lateral_out).any()


def test_contains_accepts_override_planes(camera):
    p = np.array([[0.0, 0.0, 300.0]])
    assert camera.contains(p).all()
    assert not camera.contains(p, near_mm=350.0).any()
    assert not camera.contains(np.array([[0.0, 0.0, 600.0]]), far_mm=500.0).any()


def test_with_mount_pose_returns_new_camera(camera):
    pose = RigidTransform.translation(1.0, 2.0, 3.0)
    other = camera.with_mount_pose(pose)
    assert other.mount_pose.is_close(pose)
    assert camera.mount_pose.is_close(RigidTransform.identity())
    assert other.fov_table == camera.fov_table


def test_json_roundtrip_is_exact(camera):
    back = CameraModel.from_json_dict(camera.to_json_dict())
    assert back.fov_table == camera.fov_table
    assert back.frame_rate == camera.frame_rate
    assert back.resolution == camera.resolution
    assert back.lateral_sigma_factor == camera.lateral_sigma_factor
    assert np.array_equal(back.mount_pose.q, camera.mount_pose.q)
    assert np.array_equal(back.mount_pose.t, camera.mount_pose.t)


def test_table_validation():
    with pytest.raises(ValueError):
        CameraModel(fov_table=(FovRow(250.0, 198.44, 129.2, 0.033, 0.106),))
    rows = (FovRow(400.0, 435.37, 284.93, 0.117, 0.234),
            FovRow(250.0, 198.44, 129.2, 0.033, 0.106))
    with pytest.raises(ValueError):
        CameraModel(fov_table=rows)


def test_fov_row_rejects_non_positive_entries():
    with pytest.raises(ValueError):
        FovRow(0.0, 198.44, 129.2, 0.033, 0.106)
    with pytest.raises(ValueError):
        FovRow(250.0, 198.44, 129.2, -0.033, 0.106)


def test_frame_rate_and_resolution_bounds():
    with pytest.raises(ValueError):
        CameraModel(frame_rate=0.0)
    with pytest.raises(ValueError):
        CameraModel(frame_rate=500.0)
    with pytest.raises(ValueError):
        CameraModel(resolution=(1, 192))


def test_optical_blur_length_must_match_table():
    with pytest.raises(ValueError):
        CameraModel(optical_blur_px=(1.0, 2.0))
    CameraModel(optical_blur_px=None)
