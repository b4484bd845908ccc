from __future__ import annotations

import numpy as np
import pytest

from hypothesis import given, strategies as st

from apps.spin.body_model import ModelParams, forward, joints_of
from apps.spin.camera import Keypoints2D, project
from apps.spin.dictionary import DictionaryEntry
from apps.spin.errors import DimensionError
from apps.spin.regressor import decode, identity_encoding, init_regressor
from apps.spin.rotations import aa_to_matrix
from apps.spin.supervision import accept_fit, loss_2d, loss_3d, loss_mesh, shape_supervision_mode


@pytest.fixture
def head(model, intrinsics, dataset):
    gt = dataset.ground_truth()[0]
    return init_regressor(model, intrinsics, 256.0, gt.translation, hidden=[4], variant="mlp")


@pytest.fixture
def out(head, rng):
    base = identity_encoding(head.n_joints, head.n_betas)
    return base + rng.normal(0.0, 0.1, size=base.shape)


def entry(error: float) -> DictionaryEntry:
    return DictionaryEntry(
        example_id=0,
        params=ModelParams(theta=np.zeros((2, 3)), beta=np.zeros(1)),
        translation=np.array([0.0, 0.0, 1.0]),
        reproj_error=error,
        epoch_found=0,
    )


def test_reprojection_loss_gradient(head, out, model, intrinsics, dataset, central_difference):
    kp = dataset.observations[0].keypoints
    loss = loss_2d(head, out, model, intrinsics, kp)
    numeric = central_difference(lambda v: loss_2d(head, v, model, intrinsics, kp).value, out)
    np.testing.assert_allclose(loss.grad, numeric, rtol=1e-5, atol=1e-8)


def test_reprojection_loss_value(head, model, intrinsics):
    out = identity_encoding(head.n_joints, head.n_betas)
    decoded = decode(head, out)
    exact = project(intrinsics, joints_of(model, np.zeros((model.n_joints, 3)), np.zeros(model.n_betas)), decoded.translation)
    shifted = exact.copy()
    shifted[0] += [0.5 * head.crop, 0.0]
    conf = np.zeros(model.n_regressed)
    conf[0] = 0.5
    assert loss_2d(head, out, model, intrinsics, Keypoints2D(j=exact, conf=np.ones(model.n_regressed))).value == pytest.approx(0.0, abs=1e-20)
    value = loss_2d(head, out, model, intrinsics, Keypoints2D(j=shifted, conf=conf)).value
    assert value == pytest.approx(0.5 / model.n_regressed)


def test_parameter_loss_gradient(head, out, model, rng, central_difference):
    rotmats = aa_to_matrix(rng.normal(0.0, 0.3, size=(model.n_joints, 3)))
    beta = rng.normal(size=model.n_betas)
    t = decode(head, out).translation + np.array([0.1, -0.2, 3.0])
    for w_cam in (0.0, 2.0):
        loss = loss_3d(head, out, rotmats, beta, t, w_cam)
        numeric = central_difference(lambda v: loss_3d(head, v, rotmats, beta, t, w_cam).value, out)
        np.testing.assert_allclose(loss.grad, numeric, rtol=1e-5, atol=1e-8)
        if not w_cam:
            assert np.all(loss.grad[-3:] == 0.0)


def test_parameter_loss_vanishes_on_its_own_decoding(head, out):
    decoded = decode(head, out)
    loss = loss_3d(head, out, decoded.rotmats, decoded.beta, decoded.translation, 1.0)
    assert loss.value == pytest.approx(0.0, abs=1e-24)
    np.testing.assert_allclose(loss.grad, 0.0, atol=1e-12)


def test_parameter_loss_checks_sizes(head, out, model):
    with pytest.raises(DimensionError):
        loss_3d(head, out, np.tile(np.eye(3), (model.n_joints - 1, 1, 1)), np.zeros(model.n_betas))


def test_mesh_loss_gradient(head, out, model, rng, central_difference):
    target = ModelParams(theta=rng.normal(0.0, 0.3, size=(model.n_joints, 3)), beta=rng.normal(size=model.n_betas))
    mesh, _ = forward(model, target)
    loss = loss_mesh(head, out, model, mesh.vertices)
    numeric = central_difference(lambda v: loss_mesh(head, v, model, mesh.vertices).value, out)
    np.testing.assert_allclose(loss.grad, numeric, rtol=1e-5, atol=1e-8)
    with pytest.raises(DimensionError):
        loss_mesh(head, out, model, mesh.vertices[:-1])


@pytest.mark.parametrize(("error", "accepted"), [(9.999, True), (10.0, True), (10.001, False)])
def test_acceptance_threshold_is_inclusive(error, accepted):
    assert accept_fit(entry(error), 10.0) is accepted


@pytest.mark.parametrize(
    ("beta", "mode"),
    [
        ([2.999, 0.0], "use_beta_opt"),
        ([3.0, -3.0], "use_beta_opt"),
        ([3.001, 0.0], "regularize_to_mean"),
        ([0.0, -3.5], "regularize_to_mean"),
    ],
)
def test_shape_bound_is_strict(beta, mode):
    assert shape_supervision_mode(np.array(beta), 3.0) == mode


@given(st.lists(st.floats(-6.0, 6.0), min_size=1, max_size=10), st.floats(0.5, 5.0))
def test_shape_mode_follows_the_largest_coefficient(beta, bound):
    expected = "regularize_to_mean" if max(abs(b) for b in beta) > bound else "use_beta_opt"
    assert shape_supervision_mode(np.array(beta), bound) == expected


@given(st.floats(0.0, 100.0), st.floats(0.01, 100.0))
def test_acceptance_matches_the_threshold(error, tau):
    assert accept_fit(entry(error), tau) is (error <= tau)
