# ruff: noqa: F401
from __future__ import annotations

from typing import TYPE_CHECKING, Literal

import numpy as np
import numpy.typing as npt

if TYPE_CHECKING:
    from argparse import ArgumentParser, _SubParsersAction

type Subparsers = _SubParsersAction[ArgumentParser]

type Array = npt.NDArray[np.float64]

type AxisAngle = Array
"""(..., 3) radians; direction is the axis, magnitude the angle."""
type RotationMatrix = Array
"""(..., 3, 3) orthonormal, det = +1."""
type Rot6D = Array
"""(..., 6) first two columns of a rotation, stacked."""
type Joints3D = Array
"""(k, 3) meters."""
type Pixels = Array
"""(k, 2) image coordinates."""

type FreeVariable = Literal["translation", "global_orient", "pose", "shape"]
type ShapeSupervision = Literal["use_beta_opt", "regularize_to_mean"]
type RegressorVariant = Literal["mean_pose", "mlp"]
type Activation = Literal["tanh", "identity"]
type TranslationSource = Literal["regressor", "triangle"]
type Schedule = Literal["staged", "single"]
type InitMode = Literal["mean", "translation-only", "file"]
