from __future__ import annotations

import numpy as np
import pytest

from apps.spin.camera import Keypoints2D
from apps.spin.errors import DimensionError
from apps.spin.regressor import (
    Regressor,
    decode,
    encode_keypoints,
    identity_encoding,
    init_regressor,
    mlp_backward,
    mlp_forward,
    regress,
    sgd_step,
)

T_BIAS = np.array([0.0, 0.0, 40.0])


@pytest.fixture
def small(model, intrinsics) -> Regressor:
    return init_regressor(model, intrinsics, 256.0, T_BIAS, hidden=[7, 5], seed=2, head_gain=1.0)


def test_layer_shapes(small, model):
    assert small.n_inputs == 3 * model.n_regressed
    assert small.n_outputs == 6 * model.n_joints + model.n_betas + 3
    assert [w.shape for w in small.weights] == [(7, small.n_inputs), (5, 7), (small.n_outputs, 5)]


def test_backward_matches_finite_differences(small, rng, central_difference):
    x = rng.normal(size=(3, small.n_inputs))
    upstream = rng.normal(size=(3, small.n_outputs))
    out, cache = mlp_forward(small, x)
    grad_w, grad_b = mlp_backward(small, cache, upstream)

    for layer in range(len(small.weights)):

        def loss_w(w: np.ndarray) -> float:
            weights = list(small.weights)
            weights[layer] = w
            return float(np.sum(upstream * mlp_forward(small.with_layers(weights, small.biases), x)[0]))

        def loss_b(b: np.ndarray) -> float:
            biases = list(small.biases)
            biases[layer] = b
            return float(np.sum(upstream * mlp_forward(small.with_layers(small.weights, biases), x)[0]))

        np.testing.assert_allclose(grad_w[layer], central_difference(loss_w, small.weights[layer]), rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(grad_b[layer], central_difference(loss_b, small.biases[layer]), rtol=1e-6, atol=1e-8)


def test_zero_weights_output_the_last_bias(small, rng):
    zeros = [np.zeros_like(w) for w in small.weights]
    net = small.with_layers(zeros, small.biases)
    out, _ = mlp_forward(net, rng.normal(size=(4, small.n_inputs)))
    np.testing.assert_array_equal(out, np.tile(small.biases[-1], (4, 1)))


def test_fresh_head_decodes_to_the_mean_body(model, intrinsics, dataset):
    f = init_regressor(model, intrinsics, 256.0, T_BIAS, hidden=[8], head_gain=0.0)
    params, translation = regress(f, dataset.observations[0].keypoints, model, intrinsics)
    np.testing.assert_array_equal(params.theta, 0.0)
    np.testing.assert_array_equal(params.beta, 0.0)
    np.testing.assert_array_equal(translation, T_BIAS)


def test_mean_pose_variant(model, intrinsics, dataset):
    f = init_regressor(model, intrinsics, 256.0, T_BIAS, variant="mean_pose")
    assert not f.trainable and not f.weights
    out, _ = mlp_forward(f, np.zeros((2, f.n_inputs)))
    np.testing.assert_array_equal(out[0], identity_encoding(model.n_joints, model.n_betas))
    assert sgd_step(f, [], [], 1.0) is f
    params, translation = regress(f, dataset.observations[0].keypoints, model, intrinsics)
    np.testing.assert_array_equal(params.theta, 0.0)
    gt = dataset.ground_truth()[0]
    assert translation[2] == pytest.approx(gt.translation[2], rel=0.5)


def test_sgd_step_moves_against_the_gradient(small):
    grad_w = [np.ones_like(w) for w in small.weights]
    grad_b = [np.ones_like(b) for b in small.biases]
    stepped = sgd_step(small, grad_w, grad_b, 0.1)
    for before, after in zip(small.weights, stepped.weights):
        np.testing.assert_allclose(after, before - 0.1)
    np.testing.assert_array_equal(small.weights[0], sgd_step(small, grad_w, grad_b, 0.0).weights[0])


def test_keypoint_encoding(small, model):
    j = np.full((model.n_regressed, 2), 128.0)
    j[0] = [256.0, 0.0]
    conf = np.ones(model.n_regressed)
    conf[1] = 0.0
    j[1] = [999.0, 999.0]
    x = encode_keypoints(small, Keypoints2D(j=j, conf=conf)).reshape(-1, 3)
    np.testing.assert_allclose(x[0], [1.0, -1.0, 1.0])
    np.testing.assert_array_equal(x[1], [0.0, 0.0, 0.0])
    np.testing.assert_array_equal(x[2], [0.0, 0.0, 1.0])
    with pytest.raises(DimensionError):
        encode_keypoints(small, Keypoints2D(j=j[:-1], conf=conf[:-1]))


def test_decoded_translation_is_scaled_around_the_bias(small):
    out = identity_encoding(small.n_joints, small.n_betas)
    out[-3:] = [1.0, -1.0, 2.0]
    decoded = decode(small, out)
    np.testing.assert_allclose(decoded.translation, T_BIAS + np.array([1.0, -1.0, 2.0]) * small.t_scale)
    np.testing.assert_allclose(decoded.rotmats, np.tile(np.eye(3), (small.n_joints, 1, 1)))


def test_regressor_document_round_trip(small, tmp_path):
    loaded = Regressor.load(small.save(tmp_path / "f.json"))
    for a, b in zip(loaded.weights, small.weights):
        np.testing.assert_array_equal(a, b)
    assert loaded.activation == small.activation


def test_mismatched_layers_are_rejected(small):
    weights = list(small.weights)
    weights[1] = np.zeros((5, 6))
    with pytest.raises(ValueError):
        small.with_layers(weights, small.biases)
