from __future__ import annotations

import numpy as np
import pytest

from hypothesis import given, settings, strategies as st

from apps.spin.errors import DegenerateRotationError
from apps.spin.rotations import (
    aa_to_matrix,
    d_matrix_d_aa,
    d_matrix_d_rot6d,
    generators,
    is_rotation,
    matrix_to_aa,
    matrix_to_rot6d,
    rot6d_to_matrix,
    skew,
)

finite = st.floats(min_value=-10.0, max_value=10.0, allow_nan=False, allow_infinity=False)


def random_axis_angles(rng: np.random.Generator, n: int) -> np.ndarray:
    axes = rng.standard_normal((n, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    return axes * rng.uniform(0.0, np.pi * 0.999, size=(n, 1))


def series_exp(r: np.ndarray, terms: int = 30) -> np.ndarray:
    k = skew(r)
    out = np.eye(3)
    term = np.eye(3)
    for n in range(1, terms):
        term = term @ k / n
        out = out + term
    return out


def test_zero_vector_is_identity():
    assert np.array_equal(aa_to_matrix(np.zeros(3)), np.eye(3))


def test_half_turn_about_x():
    np.testing.assert_allclose(aa_to_matrix([np.pi, 0.0, 0.0]), np.diag([1.0, -1.0, -1.0]), atol=1e-12)


def test_rodrigues_matches_series(rng):
    for r in random_axis_angles(rng, 200):
        assert np.max(np.abs(aa_to_matrix(r) - series_exp(r))) < 1e-10


def test_identity_to_axis_angle():
    np.testing.assert_allclose(matrix_to_aa(np.eye(3)), np.zeros(3), atol=1e-15)


def test_half_turn_axis_has_positive_first_component():
    r = matrix_to_aa(np.diag([1.0, -1.0, -1.0]))
    np.testing.assert_allclose(r, [np.pi, 0.0, 0.0], atol=1e-12)


def test_axis_angle_round_trip(rng):
    rotations = aa_to_matrix(random_axis_angles(rng, 1000))
    recovered = matrix_to_aa(rotations)
    assert np.all(np.linalg.norm(recovered, axis=1) <= np.pi + 1e-12)
    assert np.max(np.abs(aa_to_matrix(recovered) - rotations)) < 1e-8


def test_near_half_turn_round_trip(rng):
    axes = rng.standard_normal((50, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    rotations = aa_to_matrix(axes * (np.pi - 1e-9))
    assert np.max(np.abs(aa_to_matrix(matrix_to_aa(rotations)) - rotations)) < 1e-8


def test_matrix_to_aa_rejects_non_rotations():
    with pytest.raises(ValueError):
        matrix_to_aa(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValueError):
        matrix_to_aa(2.0 * np.eye(3))


def test_rot6d_identity_and_scale_invariance():
    np.testing.assert_allclose(rot6d_to_matrix([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]), np.eye(3), atol=1e-15)
    np.testing.assert_allclose(rot6d_to_matrix([2.0, 0.0, 0.0, 0.0, 3.0, 0.0]), np.eye(3), atol=1e-15)


@pytest.mark.parametrize("a", [[0.0, 0.0, 0.0, 0.0, 1.0, 0.0], [1.0, 0.0, 0.0, 2.0, 0.0, 0.0], [1.0, 2.0, 3.0, 0.0, 0.0, 0.0]])
def test_rot6d_degenerate_inputs(a):
    with pytest.raises(DegenerateRotationError):
        rot6d_to_matrix(a)


def test_rot6d_round_trip_and_idempotence(rng):
    rotations = aa_to_matrix(random_axis_angles(rng, 1000))
    a = matrix_to_rot6d(rotations)
    assert np.max(np.abs(rot6d_to_matrix(a) - rotations)) < 1e-10
    b = rng.standard_normal((100, 6))
    once = rot6d_to_matrix(b)
    np.testing.assert_allclose(rot6d_to_matrix(matrix_to_rot6d(once)), once, atol=1e-12)
    np.testing.assert_array_equal(matrix_to_rot6d(np.eye(3)), [1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


@settings(max_examples=200, deadline=None)
@given(st.lists(finite, min_size=6, max_size=6))
def test_rot6d_output_is_a_rotation(values):
    a = np.array(values)
    a1, a2 = a[:3], a[3:]
    n1 = np.linalg.norm(a1)
    perp = np.linalg.norm(a2 - (a1 @ a2) / max(n1**2, 1e-300) * a1)
    if n1 < 1e-3 or perp < 1e-3 * max(1.0, np.linalg.norm(a2)):
        return
    assert is_rotation(rot6d_to_matrix(a), tol=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.lists(finite, min_size=3, max_size=3), st.lists(st.floats(-1e-3, 1e-3), min_size=3, max_size=3))
def test_rodrigues_is_continuous(r, delta):
    r, delta = np.array(r), np.array(delta)
    change = np.linalg.norm(aa_to_matrix(r + delta) - aa_to_matrix(r))
    assert change <= 2.0 * np.linalg.norm(delta) + 1e-12


def test_aa_jacobian_at_zero_is_the_generator_basis():
    jac = d_matrix_d_aa(np.zeros(3))
    basis = generators()
    for c in range(3):
        np.testing.assert_allclose(jac[:, c], basis[c].ravel(), atol=1e-15)
    assert set(np.unique(jac)) <= {-1.0, 0.0, 1.0}


def test_aa_jacobian_matches_finite_differences(rng, central_difference):
    points = np.concatenate([random_axis_angles(rng, 100), 1e-9 * rng.standard_normal((5, 3)), np.zeros((1, 3))])
    for r in points:
        analytic = d_matrix_d_aa(r)
        numeric = central_difference(lambda v: aa_to_matrix(v).ravel(), r)
        assert np.max(np.abs(analytic - numeric)) <= 1e-5 * max(1.0, np.max(np.abs(numeric)))


def test_rot6d_jacobian_matches_finite_differences(rng, central_difference):
    for a in rng.standard_normal((100, 6)):
        analytic = d_matrix_d_rot6d(a)
        numeric = central_difference(lambda v: rot6d_to_matrix(v).ravel(), a)
        assert np.max(np.abs(analytic - numeric)) <= 1e-5 * max(1.0, np.max(np.abs(numeric)))


def test_batched_shapes(rng):
    r = rng.standard_normal((4, 5, 3))
    assert aa_to_matrix(r).shape == (4, 5, 3, 3)
    assert d_matrix_d_aa(r).shape == (4, 5, 9, 3)
    assert d_matrix_d_rot6d(rng.standard_normal((2, 6))).shape == (2, 9, 6)
