"""3D pose error metrics; joints in metres in, millimetres out."""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np

from pydantic import Field

from .errors import DimensionError
from .formats import Config, Value

if TYPE_CHECKING:
    from collections.abc import Sequence

    from .typeshed import Array, Joints3D

MM = 1000.0
COLLINEAR_TOL = 1e-12


class MetricsConfig(Config):
    root: int | None = 0
    pck_threshold_mm: float = Field(default=150.0, gt=0.0)
    auc_max_mm: float = Field(default=150.0, gt=0.0)
    auc_steps: int = Field(default=30, ge=2)


def _pair(pred: Joints3D, gt: Joints3D) -> tuple[Array, Array]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise DimensionError(f"cannot compare joints of shape {pred.shape} with {gt.shape}")
    return pred, gt


def _centred(joints: Array, root: int | None) -> Array:
    return joints if root is None else joints - joints[root]


def per_joint_errors(pred: Joints3D, gt: Joints3D, root: int | None = 0) -> Array:
    """(k,) Euclidean distances in mm after centring both sets on the root joint."""
    pred, gt = _pair(pred, gt)
    return np.linalg.norm(_centred(pred, root) - _centred(gt, root), axis=1) * MM


def mpjpe(pred: Joints3D, gt: Joints3D, root: int | None = 0) -> float:
    """Mean per-joint position error in mm; `root=None` compares without centring."""
    return float(per_joint_errors(pred, gt, root).mean())


def procrustes_align(pred: Joints3D, gt: Joints3D) -> Array:
    """`pred` under the similarity transform that best maps it onto `gt`, reflections excluded."""
    pred, gt = _pair(pred, gt)
    if len(pred) < 3:
        raise DimensionError(f"alignment needs at least 3 joints, got {len(pred)}")
    mu_p, mu_g = pred.mean(axis=0), gt.mean(axis=0)
    x_p, x_g = pred - mu_p, gt - mu_g
    var_p = float((x_p**2).sum())

    u, s, vt = np.linalg.svd(x_p.T @ x_g)
    # rank below 2 means the points lie on a line (or a point)
    if var_p < COLLINEAR_TOL or s[1] <= COLLINEAR_TOL * max(s[0], 1.0):
        raise ValueError("cannot align collinear or coincident joints")
    z = np.eye(3)
    z[2, 2] = np.sign(np.linalg.det(u @ vt)) or 1.0
    r = vt.T @ z @ u.T
    scale = float(np.trace(r @ x_p.T @ x_g)) / var_p
    return scale * x_p @ r.T + mu_g


def reconstruction_error(pred: Joints3D, gt: Joints3D, root: int | None = 0) -> float:
    """MPJPE in mm after rigid alignment.

    The least-squares similarity transform does not minimise the mean distance, so the
    root alignment MPJPE itself uses is kept as a candidate; the result never exceeds
    `mpjpe(pred, gt, root)`.
    """
    aligned = mpjpe(procrustes_align(pred, gt), gt, root=None)
    return min(aligned, mpjpe(pred, gt, root))


def pck(pred: Joints3D, gt: Joints3D, threshold_mm: float = 150.0, root: int | None = 0) -> float:
    """Fraction of joints within the threshold, boundary inclusive."""
    return float(np.mean(per_joint_errors(pred, gt, root) <= threshold_mm))


def _pck_curve(errors: Array, max_mm: float, steps: int) -> tuple[Array, Array]:
    thresholds = np.linspace(0.0, max_mm, steps)
    return thresholds, (errors[None, :] <= thresholds[:, None]).mean(axis=1)


def auc(pred: Joints3D, gt: Joints3D, max_threshold_mm: float = 150.0, steps: int = 30, root: int | None = 0) -> float:
    """Trapezoidal area under the PCK curve over [0, max], normalised to [0, 1]."""
    thresholds, curve = _pck_curve(per_joint_errors(pred, gt, root), max_threshold_mm, steps)
    return float(np.trapezoid(curve, thresholds) / max_threshold_mm)


class PoseErrorReport(Value):
    n_examples: int
    mpjpe: float
    recon_error: float
    pck: float = Field(ge=0.0, le=1.0)
    auc: float = Field(ge=0.0, le=1.0)
    per_joint: dict[str, float]
    reproj_error: float | None = None
    coverage: float | None = None

    def render(self) -> str:
        """Structured-text report, one `key value` per line."""
        lines = [
            f"examples {self.n_examples}",
            f"mpjpe_mm {self.mpjpe:.6f}",
            f"recon_error_mm {self.recon_error:.6f}",
            f"pck {self.pck:.6f}",
            f"auc {self.auc:.6f}",
        ]
        if self.reproj_error is not None:
            lines.append(f"reproj_error_px {self.reproj_error:.6f}")
        if self.coverage is not None:
            lines.append(f"coverage {self.coverage:.6f}")
        lines += [f"joint.{name} {value:.6f}" for name, value in self.per_joint.items()]
        return "\n".join(lines) + "\n"


def evaluate(
    preds: Sequence[Joints3D],
    gts: Sequence[Joints3D],
    names: Sequence[str],
    cfg: MetricsConfig | None = None,
    reproj_errors: Sequence[float] | None = None,
    coverage: float | None = None,
) -> PoseErrorReport:
    """Aggregate metrics over examples; PCK and AUC pool every joint of every example."""
    cfg = cfg or MetricsConfig()
    if len(preds) != len(gts) or not preds:
        raise ValueError(f"need matching non-empty prediction and truth lists, got {len(preds)} and {len(gts)}")
    errors = np.stack([per_joint_errors(p, g, cfg.root) for p, g in zip(preds, gts)])
    if errors.shape[1] != len(names):
        raise DimensionError(f"{errors.shape[1]} joints but {len(names)} names")
    recon = [reconstruction_error(p, g, cfg.root) for p, g in zip(preds, gts)]
    thresholds, curve = _pck_curve(errors.ravel(), cfg.auc_max_mm, cfg.auc_steps)
    return PoseErrorReport(
        n_examples=len(preds),
        mpjpe=float(errors.mean()),
        recon_error=float(np.mean(recon)),
        pck=float(np.mean(errors <= cfg.pck_threshold_mm)),
        auc=float(np.trapezoid(curve, thresholds) / cfg.auc_max_mm),
        per_joint={name: float(e) for name, e in zip(names, errors.mean(axis=0))},
        reproj_error=None if not reproj_errors else float(np.mean(reproj_errors)),
        coverage=coverage,
    )

