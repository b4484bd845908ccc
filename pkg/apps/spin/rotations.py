"""Rotation representations: axis-angle (model-native), matrices, and the continuous 6D form.

All functions accept a leading batch shape. Flattened matrices use row-major
order, so entry (i, j) of R sits at index 3 * i + j of a 9-vector.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np

from .errors import DegenerateRotationError

if TYPE_CHECKING:
    from .typeshed import Array, AxisAngle, Rot6D, RotationMatrix

SMALL_ANGLE = 1e-7
ORTHONORMAL_TOL = 1e-8
DEGENERATE_6D = 1e-12

_EYE = np.eye(3)
# generators of so(3): _BASIS[c] = skew(e_c)
_BASIS = np.array([
    [[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]],
    [[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]],
    [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
])


def skew(v: Array) -> Array:
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def vee(m: Array) -> Array:
    """Inverse of `skew` applied to the antisymmetric part of m."""
    return 0.5 * np.stack(
        [m[..., 2, 1] - m[..., 1, 2], m[..., 0, 2] - m[..., 2, 0], m[..., 1, 0] - m[..., 0, 1]],
        axis=-1,
    )


def aa_to_matrix(r: AxisAngle) -> RotationMatrix:
    r = np.asarray(r, dtype=np.float64)
    angle = np.linalg.norm(r, axis=-1)[..., None, None]
    k = skew(r)
    k2 = k @ k
    small = angle < SMALL_ANGLE
    safe = np.where(small, 1.0, angle)
    a = np.where(small, 1.0, np.sin(safe) / safe)
    b = np.where(small, 0.5, (1.0 - np.cos(safe)) / safe**2)
    return _EYE + a * k + b * k2


def is_rotation(R: Array, tol: float = ORTHONORMAL_TOL) -> bool:
    R = np.asarray(R, dtype=np.float64)
    if R.shape[-2:] != (3, 3) or not np.all(np.isfinite(R)):
        return False
    gram = np.swapaxes(R, -1, -2) @ R
    return bool(np.all(np.abs(gram - _EYE) <= tol) and np.all(np.abs(np.linalg.det(R) - 1.0) <= tol))


def _canonical_sign(axis: Array) -> Array:
    """Flip so the first nonzero component is positive."""
    for c in axis:
        if abs(c) > 1e-12:
            return axis if c > 0 else -axis
    return axis


def _single_matrix_to_aa(R: Array) -> Array:
    w = vee(R)
    s = np.linalg.norm(w)
    c = 0.5 * (np.trace(R) - 1.0)
    angle = np.arctan2(s, c)
    if angle < SMALL_ANGLE:
        return w
    if angle < np.pi / 2:
        return w * (angle / s)

    # near a half-turn the antisymmetric part vanishes; read the axis from the symmetric part
    outer = (0.5 * (R + R.T) - c * _EYE) / (1.0 - c)
    col = int(np.argmax(np.diag(outer)))
    axis = outer[:, col] / np.sqrt(outer[col, col])
    axis /= np.linalg.norm(axis)
    side = float(axis @ w)
    if abs(side) > 1e-12:
        axis = axis if side > 0 else -axis
    else:
        angle = np.pi
        axis = _canonical_sign(axis)
    return axis * angle


def matrix_to_aa(R: RotationMatrix) -> AxisAngle:
    R = np.asarray(R, dtype=np.float64)
    if not is_rotation(R):
        raise ValueError("matrix_to_aa expects orthonormal matrices with det = +1")
    flat = R.reshape(-1, 3, 3)
    out = np.stack([_single_matrix_to_aa(m) for m in flat]) if len(flat) else np.zeros((0, 3))
    return out.reshape(R.shape[:-2] + (3,))


def rot6d_to_matrix(a: Rot6D) -> RotationMatrix:
    a = np.asarray(a, dtype=np.float64)
    a1, a2 = a[..., :3], a[..., 3:]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    if np.any(n1 <= DEGENERATE_6D):
        raise DegenerateRotationError("first 6D component vector is zero")
    b1 = a1 / n1
    u = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    nu = np.linalg.norm(u, axis=-1, keepdims=True)
    if np.any(nu <= DEGENERATE_6D * np.maximum(1.0, np.linalg.norm(a2, axis=-1, keepdims=True))):
        raise DegenerateRotationError("6D component vectors are parallel or the second is zero")
    b2 = u / nu
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def matrix_to_rot6d(R: RotationMatrix) -> Rot6D:
    R = np.asarray(R, dtype=np.float64)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def d_matrix_d_aa(r: AxisAngle) -> Array:
    """Jacobian of `aa_to_matrix`, shape (..., 9, 3)."""
    r = np.asarray(r, dtype=np.float64)
    batch = r.shape[:-1]
    flat = r.reshape(-1, 3)
    out = np.empty((len(flat), 3, 3, 3))
    for n, v in enumerate(flat):
        angle = np.linalg.norm(v)
        if angle < SMALL_ANGLE:
            k = skew(v)
            for c in range(3):
                out[n, c] = _BASIS[c] + 0.5 * (_BASIS[c] @ k + k @ _BASIS[c])
            continue
        R = aa_to_matrix(v)
        residue = _EYE - R
        for c in range(3):
            dR = (v[c] * skew(v) + skew(np.cross(v, residue[:, c]))) @ R / angle**2
            out[n, c] = dR
    # (n, c, i, j) -> (n, 3i + j, c)
    return np.moveaxis(out, 1, -1).reshape(batch + (9, 3))


def d_matrix_d_rot6d(a: Rot6D) -> Array:
    """Jacobian of `rot6d_to_matrix`, shape (..., 9, 6)."""
    a = np.asarray(a, dtype=np.float64)
    batch = a.shape[:-1]
    flat = a.reshape(-1, 6)
    out = np.empty((len(flat), 9, 6))
    for n, v in enumerate(flat):
        a1, a2 = v[:3], v[3:]
        n1 = np.linalg.norm(a1)
        b1 = a1 / n1
        db1_da1 = (_EYE - np.outer(b1, b1)) / n1
        proj = b1 @ a2
        u = a2 - proj * b1
        nu = np.linalg.norm(u)
        b2 = u / nu
        du_db1 = -proj * _EYE - np.outer(b1, a2)
        du_da2 = _EYE - np.outer(b1, b1)
        db2_du = (_EYE - np.outer(b2, b2)) / nu
        db2_da1 = db2_du @ du_db1 @ db1_da1
        db2_da2 = db2_du @ du_da2
        # d(b1 x b2) = -[b2]x db1 + [b1]x db2
        db3_da1 = -skew(b2) @ db1_da1 + skew(b1) @ db2_da1
        db3_da2 = skew(b1) @ db2_da2

        cols = np.zeros((3, 3, 6))  # (column j, row i, input)
        cols[0, :, :3] = db1_da1
        cols[1, :, :3] = db2_da1
        cols[1, :, 3:] = db2_da2
        cols[2, :, :3] = db3_da1
        cols[2, :, 3:] = db3_da2
        out[n] = np.transpose(cols, (1, 0, 2)).reshape(9, 6)
    return out.reshape(batch + (9, 6))


def generators() -> Array:
    return _BASIS.copy()
