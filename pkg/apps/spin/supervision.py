"""Training losses on the regressor output and the policy that picks which ones apply.

Every loss returns its value and its gradient with respect to the flat
regressor output vector [6D rotations, shape, raw translation].
"""

from __future__ import annotations

from typing import NamedTuple, TYPE_CHECKING

import numpy as np

from .body_model import joints_vjp, mesh_vjp, pose, posed_joints, posed_vertices
from .camera import MIN_DEPTH, pinhole
from .errors import DimensionError
from .regressor import decode
from .rotations import d_matrix_d_rot6d

if TYPE_CHECKING:
    from .body_model import BodyModel
    from .camera import Intrinsics, Keypoints2D
    from .dictionary import DictionaryEntry
    from .fitting import FitResult
    from .regressor import Regressor
    from .typeshed import Array, RotationMatrix, ShapeSupervision


class Loss(NamedTuple):
    value: float
    grad: Array


def _rot6d_grad(rot6d: Array, grad_r: Array) -> Array:
    """Chain a gradient on rotation matrices (J, 3, 3) to the 6D numbers (J, 6)."""
    jac = d_matrix_d_rot6d(rot6d)
    return np.einsum("jn,jnc->jc", grad_r.reshape(len(rot6d), 9), jac)


def _assemble(f: Regressor, grad_rot6d: Array, grad_beta: Array, grad_translation: Array) -> Array:
    return np.concatenate([grad_rot6d.ravel(), grad_beta, grad_translation * f.t_scale])


def loss_2d(
    f: Regressor,
    out: Array,
    model: BodyModel,
    intrinsics: Intrinsics,
    keypoints: Keypoints2D,
) -> Loss:
    """Confidence-weighted squared distance between projected regressed joints and 2D keypoints.

    Distances are measured in half-crop units and averaged over keypoints.
    Joints at or behind the camera plane contribute nothing.
    """
    decoded = decode(f, out)
    posed = pose(model, decoded.rotmats, decoded.beta)
    points = posed_joints(model, posed) + decoded.translation
    z = points[:, 2]
    front = z > MIN_DEPTH
    scale = 0.5 * f.crop
    k = len(points)

    diff = np.zeros_like(keypoints.j)
    if np.any(front):
        diff[front] = (pinhole(intrinsics.focal, intrinsics.principal_point, points[front]) - keypoints.j[front]) / scale
    conf = np.where(front, keypoints.conf, 0.0)
    value = float(conf @ (diff**2).sum(axis=1) / k)

    zf = np.where(front, z, 1.0)
    d_uv = 2.0 * conf[:, None] * diff / (k * scale)
    grad_points = np.zeros_like(points)
    grad_points[:, 0] = d_uv[:, 0] * intrinsics.focal / zf
    grad_points[:, 1] = d_uv[:, 1] * intrinsics.focal / zf
    grad_points[:, 2] = -intrinsics.focal * (d_uv * points[:, :2]).sum(axis=1) / zf**2
    grad_points[~front] = 0.0

    grad_r, grad_beta = joints_vjp(model, decoded.rotmats, decoded.beta, grad_points)
    return Loss(value, _assemble(f, _rot6d_grad(decoded.rot6d, grad_r), grad_beta, grad_points.sum(axis=0)))


def loss_3d(
    f: Regressor,
    out: Array,
    rotmats_opt: RotationMatrix,
    beta_target: Array,
    translation_opt: Array | None = None,
    w_cam: float = 0.0,
) -> Loss:
    """Per-joint squared Frobenius distance of rotations plus squared shape distance.

    With `w_cam` > 0 the translation is supervised too, in units of the regressor's translation scale.
    """
    decoded = decode(f, out)
    if rotmats_opt.shape != decoded.rotmats.shape or np.shape(beta_target) != decoded.beta.shape:
        raise DimensionError("regressed and target parameters differ in size")
    d_r = decoded.rotmats - rotmats_opt
    d_beta = decoded.beta - beta_target
    value = float((d_r**2).sum() + d_beta @ d_beta)
    grad_t = np.zeros(3)
    if w_cam and translation_opt is not None:
        d_t = (decoded.translation - translation_opt) / f.t_scale
        value += w_cam * float(d_t @ d_t)
        grad_t = 2.0 * w_cam * d_t / f.t_scale
    return Loss(value, _assemble(f, _rot6d_grad(decoded.rot6d, 2.0 * d_r), 2.0 * d_beta, grad_t))


def loss_mesh(f: Regressor, out: Array, model: BodyModel, vertices_opt: Array) -> Loss:
    """Mean per-vertex squared distance between the regressed and the target mesh."""
    decoded = decode(f, out)
    vertices = posed_vertices(model, pose(model, decoded.rotmats, decoded.beta))
    if vertices.shape != np.shape(vertices_opt):
        raise DimensionError(f"mesh has shape {np.shape(vertices_opt)}, model expects {vertices.shape}")
    diff = vertices - vertices_opt
    n = len(vertices)
    value = float((diff**2).sum() / n)
    grad_r, grad_beta = mesh_vjp(model, decoded.rotmats, decoded.beta, 2.0 * diff / n)
    return Loss(value, _assemble(f, _rot6d_grad(decoded.rot6d, grad_r), grad_beta, np.zeros(3)))


def accept_fit(result: FitResult | DictionaryEntry, tau_rej: float) -> bool:
    """A fit supervises in 3D when its reprojection error is at most the threshold (inclusive)."""
    return result.reproj_error <= tau_rej


def shape_supervision_mode(beta_opt: Array, bound: float = 3.0) -> ShapeSupervision:
    """Improbable shapes (any |beta_i| strictly beyond the bound) are replaced by the mean shape."""
    return "regularize_to_mean" if np.any(np.abs(beta_opt) > bound) else "use_beta_opt"
