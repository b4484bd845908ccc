from __future__ import annotations

import numpy as np
import pytest

from apps.spin.camera import Camera, CameraConfig, Intrinsics, Keypoints2D, init_translation, project, project_jacobian
from apps.spin.errors import BehindCameraError, UnderConstrainedError


@pytest.fixture
def camera() -> Camera:
    return Camera(focal=1000.0, principal_point=np.array([128.0, 128.0]), translation=np.array([0.0, 0.0, 5.0]))


def test_projection_of_the_optical_axis(camera):
    np.testing.assert_allclose(project(camera, np.zeros((1, 3))), [[128.0, 128.0]])


def test_projection_is_a_pinhole(camera):
    X = np.array([[0.5, -0.25, 0.0], [1.0, 1.0, 5.0]])
    expected = np.array([[128.0 + 1000.0 * 0.5 / 5.0, 128.0 - 1000.0 * 0.25 / 5.0], [128.0 + 100.0, 128.0 + 100.0]])
    np.testing.assert_allclose(project(camera, X), expected)


def test_translation_argument_overrides_the_camera(camera):
    X = np.array([[0.1, 0.2, 0.3]])
    np.testing.assert_allclose(project(camera.intrinsics, X, [0.0, 0.0, 5.0]), project(camera, X))


@pytest.mark.parametrize("z", [-5.0, -4.9999999])
def test_points_behind_the_camera(camera, z):
    with pytest.raises(BehindCameraError):
        project(camera, np.array([[0.0, 0.0, z]]))


def test_camera_requires_positive_depth():
    with pytest.raises(ValueError):
        Camera(focal=1.0, principal_point=np.zeros(2), translation=np.array([0.0, 0.0, 0.0]))


def test_projection_jacobian_matches_finite_differences(camera, rng, central_difference):
    X = rng.normal(0.0, 0.5, size=(6, 3))
    d_x, d_t = project_jacobian(camera, X)
    numeric = central_difference(lambda v: project(camera, v), X)
    for k in range(len(X)):
        np.testing.assert_allclose(d_x[k], numeric[k, :, k, :], rtol=1e-6, atol=1e-6)
    np.testing.assert_array_equal(d_x, d_t)
    numeric_t = central_difference(lambda t: project(camera.intrinsics, X, t), camera.translation)
    np.testing.assert_allclose(d_t, numeric_t, rtol=1e-6, atol=1e-6)


def test_similar_triangles_recover_a_fronto_parallel_translation():
    intrinsics = Intrinsics(focal=5000.0, principal_point=np.array([128.0, 128.0]))
    rest = np.zeros((4, 3))
    rest[:, :2] = [[0.18, -0.46], [-0.18, -0.46], [0.09, 0.08], [-0.09, 0.08]]
    rest[:, 2] = 0.1
    t = np.array([0.2, -0.1, 12.0])
    kp = Keypoints2D(j=project(intrinsics, rest, t), conf=np.ones(4))
    found = init_translation(kp, rest, intrinsics.focal, [(0, 1), (2, 3)], intrinsics.principal_point)
    np.testing.assert_allclose(found, t, rtol=1e-12, atol=1e-12)


def test_translation_needs_an_observed_torso_pair():
    kp = Keypoints2D(j=np.zeros((4, 2)), conf=np.array([1.0, 0.0, 0.0, 1.0]))
    with pytest.raises(UnderConstrainedError):
        init_translation(kp, np.zeros((4, 3)), 5000.0, [(0, 1), (2, 3)])


def test_keypoint_confidences_are_validated():
    with pytest.raises(ValueError):
        Keypoints2D(j=np.zeros((3, 2)), conf=np.array([0.5, 1.5, 0.0]))
    with pytest.raises(ValueError):
        Keypoints2D(j=np.zeros((3, 2)), conf=np.ones(2))
    assert Keypoints2D(j=np.zeros((3, 2)), conf=np.array([0.0, 0.3, 1.0])).n_visible == 2


def test_default_camera_config(model):
    cfg = CameraConfig()
    np.testing.assert_array_equal(cfg.intrinsics().principal_point, [128.0, 128.0])
    pairs = cfg.pair_indices(model)
    assert pairs == [(model.index("left_shoulder"), model.index("right_shoulder")), (model.index("left_hip"), model.index("right_hip"))]
