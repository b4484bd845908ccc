from __future__ import annotations

from typing import Self, TYPE_CHECKING

import numpy as np

from pydantic import Field, model_validator

from .errors import BehindCameraError, UnderConstrainedError
from .formats import Config, FloatArray, Value

if TYPE_CHECKING:
    from .body_model import BodyModel
    from .typeshed import Array, Joints3D, Pixels

MIN_DEPTH = 1e-6
TORSO_PAIRS = (("left_shoulder", "right_shoulder"), ("left_hip", "right_hip"))


class Intrinsics(Value):
    focal: float = Field(gt=0.0)
    principal_point: FloatArray

    @model_validator(mode="after")
    def _check_principal_point(self) -> Self:
        if self.principal_point.shape != (2,):
            raise ValueError("principal_point must be a 2-vector")
        return self

    def camera(self, translation: Array) -> Camera:
        return Camera(focal=self.focal, principal_point=self.principal_point, translation=translation)


class Camera(Intrinsics):
    translation: FloatArray

    @model_validator(mode="after")
    def _check_translation(self) -> Self:
        if self.translation.shape != (3,):
            raise ValueError("translation must be a 3-vector")
        if not self.translation[2] > 0.0:
            raise ValueError("translation z must be positive (body in front of the camera)")
        return self

    @property
    def intrinsics(self) -> Intrinsics:
        return Intrinsics(focal=self.focal, principal_point=self.principal_point)


class Keypoints2D(Value):
    j: FloatArray
    conf: FloatArray

    @model_validator(mode="after")
    def _check_invariants(self) -> Self:
        if self.j.ndim != 2 or self.j.shape[1] != 2:
            raise ValueError("keypoints must be k x 2")
        if self.conf.shape != (self.j.shape[0],):
            raise ValueError("one confidence per keypoint")
        if np.any(self.conf < 0.0) or np.any(self.conf > 1.0):
            raise ValueError("confidences must lie in [0, 1]")
        return self

    @property
    def n_visible(self) -> int:
        return int(np.count_nonzero(self.conf > 0.0))


class CameraConfig(Config):
    focal: float = Field(default=5000.0, gt=0.0)
    crop: int = Field(default=256, ge=8)
    torso_pairs: list[tuple[str, str]] = Field(default_factory=lambda: [tuple(p) for p in TORSO_PAIRS])

    def intrinsics(self) -> Intrinsics:
        return Intrinsics(focal=self.focal, principal_point=np.full(2, self.crop / 2.0))

    def pair_indices(self, model: BodyModel) -> list[tuple[int, int]]:
        return [(model.index(a), model.index(b)) for a, b in self.torso_pairs]


def pinhole(focal: float, principal_point: Array, points: Array) -> Pixels:
    return focal * points[:, :2] / points[:, 2:3] + principal_point


def project(cam: Camera | Intrinsics, X: Joints3D, translation: Array | None = None) -> Pixels:
    """Pinhole projection of body-frame points placed at `translation` (default: the camera's)."""
    t = cam.translation if translation is None else np.asarray(translation, dtype=np.float64)
    points = np.asarray(X, dtype=np.float64) + t
    if np.any(points[:, 2] <= MIN_DEPTH):
        raise BehindCameraError("a projected point lies at or behind the camera plane")
    return pinhole(cam.focal, cam.principal_point, points)


def project_jacobian(cam: Camera | Intrinsics, X: Joints3D, translation: Array | None = None) -> tuple[Array, Array]:
    """d(pixels)/dX and d(pixels)/d(translation), both (k, 2, 3); equal since the point is X + t."""
    t = cam.translation if translation is None else np.asarray(translation, dtype=np.float64)
    points = np.asarray(X, dtype=np.float64) + t
    z = points[:, 2]
    if np.any(z <= MIN_DEPTH):
        raise BehindCameraError("a projected point lies at or behind the camera plane")
    jac = np.zeros((len(points), 2, 3))
    jac[:, 0, 0] = cam.focal / z
    jac[:, 1, 1] = cam.focal / z
    jac[:, :, 2] = -cam.focal * points[:, :2] / z[:, None] ** 2
    return jac, jac.copy()


def init_translation(
    j_est: Keypoints2D,
    rest_joints: Joints3D,
    focal: float,
    pairs: list[tuple[int, int]],
    principal_point: Array | None = None,
) -> Array:
    """Similar triangles on torso segments: depth from the 3D/2D length ratio, x and y from the 2D centroid."""
    principal_point = np.zeros(2) if principal_point is None else np.asarray(principal_point, dtype=np.float64)
    seen = [(a, b) for a, b in pairs if j_est.conf[a] > 0.0 and j_est.conf[b] > 0.0]
    if not seen:
        raise UnderConstrainedError("no torso pair has both keypoints observed")

    rest_joints = np.asarray(rest_joints, dtype=np.float64)
    length_3d = np.mean([np.linalg.norm(rest_joints[a] - rest_joints[b]) for a, b in seen])
    length_2d = np.mean([np.linalg.norm(j_est.j[a] - j_est.j[b]) for a, b in seen])
    if length_2d <= 0.0:
        raise UnderConstrainedError("torso keypoints coincide in the image")
    depth = focal * length_3d / length_2d

    used = sorted({i for pair in seen for i in pair})
    centroid_2d = j_est.j[used].mean(axis=0)
    centroid_3d = rest_joints[used].mean(axis=0)
    xy = (centroid_2d - principal_point) * depth / focal - centroid_3d[:2]
    return np.array([xy[0], xy[1], depth - centroid_3d[2]])
