"""Model fitting to 2D keypoints by damped Gauss-Newton.

The objective is the robustified, confidence-weighted reprojection energy
plus weighted pose-mixture, bending and shape priors. The state vector is
laid out as [translation (3), theta (3J), beta (B)]; each stage frees a
subset of those blocks and leaves the rest bit-for-bit untouched.
"""

from __future__ import annotations

from typing import Literal, NamedTuple, Self, TYPE_CHECKING

import numpy as np

from joblib import Parallel, delayed
from pydantic import Field, model_validator
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from apps.common import console, timings

from .body_model import BETA_LIMIT, ModelParams, joints_and_jacobian, joints_of
from .camera import MIN_DEPTH, Intrinsics, Keypoints2D, pinhole
from .errors import FitDivergedError, UnderConstrainedError
from .formats import Config, FloatArray, Value, write_records
from .priors import angle_residuals, e_angle, e_beta, e_theta
from .typeshed import FreeVariable

if TYPE_CHECKING:
    from collections.abc import Mapping, Sequence
    from pathlib import Path

    from .body_model import BodyModel
    from .priors import Priors
    from .typeshed import Array

MIN_VISIBLE = 6
BEHIND_PENALTY = 1e12
BEHIND_DISTANCE = 1e6
MAX_DAMPING = 1e32
TRACE_VERSION = "fittrace/1"


# -- configuration


class Robustifier(Config):
    kind: Literal["geman_mcclure", "none"] = "geman_mcclure"
    sigma: float = Field(default=100.0, gt=0.0)

    def rho(self, sq: Array) -> tuple[Array, Array]:
        """rho(s) and d rho / ds on squared pixel distances s."""
        if self.kind == "none":
            return sq, np.ones_like(sq)
        s2 = self.sigma**2
        return sq * s2 / (sq + s2), (s2 / (sq + s2)) ** 2


class StageConfig(Config):
    free: list[FreeVariable] = Field(min_length=1)
    max_iters: int = Field(default=50, ge=1)
    lambda_theta: float | None = Field(default=None, ge=0.0)
    lambda_a: float | None = Field(default=None, ge=0.0)
    lambda_beta: float | None = Field(default=None, ge=0.0)


BODY = ["translation", "global_orient", "pose", "shape"]
STAGED_LAMBDA_THETA = (404.0, 404.0, 57.4, 4.78)
STAGED_LAMBDA_BETA = (100.0, 50.0, 10.0, 5.0)
STAGED_LAMBDA_A = 15.2


def _camera_stage() -> StageConfig:
    return StageConfig(free=["translation", "global_orient"], max_iters=10, lambda_theta=0.0, lambda_a=0.0, lambda_beta=0.0)


class FitConfig(Config):
    # warm start: a tenth of the last staged weights
    lambda_theta: float = Field(default=0.478, ge=0.0)
    lambda_a: float = Field(default=1.52, ge=0.0)
    lambda_beta: float = Field(default=0.5, ge=0.0)
    camera_stage: StageConfig | None = Field(default_factory=_camera_stage)
    stages: list[StageConfig] = Field(default_factory=lambda: [StageConfig(free=list(BODY), max_iters=50)], min_length=1)
    robustifier: Robustifier = Field(default_factory=Robustifier)
    grad_tol: float = Field(default=1e-8, gt=0.0)
    step_tol: float = Field(default=1e-10, gt=0.0)
    ftol: float = Field(default=1e-6, ge=0.0)
    init_damping: float = Field(default=1e-4, gt=0.0)
    workers: int = -1

    @classmethod
    def single_stage(cls, iters: int = 50, **kwds) -> Self:
        """Warm-start schedule: one stage over every variable."""
        return cls(stages=[StageConfig(free=list(BODY), max_iters=iters)], **kwds)

    @classmethod
    def staged(cls, iters_per_stage: int = 25, **kwds) -> Self:
        """Mean-pose schedule: four stages with descending prior weights."""
        stages = [
            StageConfig(
                free=list(BODY), max_iters=iters_per_stage, lambda_theta=lt, lambda_a=STAGED_LAMBDA_A, lambda_beta=lb
            )
            for lt, lb in zip(STAGED_LAMBDA_THETA, STAGED_LAMBDA_BETA)
        ]
        return cls(stages=stages, **kwds)

    def weights(self, stage: StageConfig | None = None) -> tuple[float, float, float]:
        pick = lambda override, default: default if override is None else override  # noqa: E731
        if stage is None:
            return self.lambda_theta, self.lambda_a, self.lambda_beta
        return (
            pick(stage.lambda_theta, self.lambda_theta),
            pick(stage.lambda_a, self.lambda_a),
            pick(stage.lambda_beta, self.lambda_beta),
        )


class FusionConfig(Config):
    tau_det: float = Field(default=0.3, ge=0.0, le=1.0)
    r_agree: float = Field(default=10.0, ge=0.0)
    c_gt_default: float = Field(default=0.8, gt=0.0, le=1.0)
    c_disagree: float = Field(default=0.3, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _check_order(self) -> Self:
        if not self.c_disagree < self.c_gt_default:
            raise ValueError("c_disagree must be below c_gt_default")
        return self


# -- problem and result


class FitProblem(Value):
    keypoints: Keypoints2D
    intrinsics: Intrinsics
    init: ModelParams
    translation: FloatArray

    @model_validator(mode="after")
    def _check_invariants(self) -> Self:
        if self.keypoints.n_visible < MIN_VISIBLE:
            raise UnderConstrainedError(
                f"{self.keypoints.n_visible} confident keypoints, at least {MIN_VISIBLE} are needed"
            )
        if self.translation.shape != (3,):
            raise ValueError("translation must be a 3-vector")
        return self


class TraceRecord(NamedTuple):
    stage: int
    iteration: int
    energy: float
    trial_energy: float
    step_norm: float
    damping: float
    accepted: bool


class FitResult(Value):
    params_opt: ModelParams
    translation_opt: FloatArray
    reproj_error: float = Field(ge=0.0)
    energy_breakdown: dict[str, float]
    iterations_used: int
    accepted_iterations: int
    converged: bool
    trace: list[TraceRecord] = Field(default_factory=list)


class StageResult(NamedTuple):
    theta: Array
    beta: Array
    translation: Array
    iterations: int
    accepted: int
    converged: bool
    trace: list[TraceRecord]


class JointsEnergy(NamedTuple):
    value: float
    residuals: Array
    jacobian: Array


# -- state layout


class _Layout:
    def __init__(self, model: BodyModel) -> None:
        self.n_joints = model.n_joints
        self.n_betas = model.n_betas
        self.size = 3 + 3 * model.n_joints + model.n_betas
        self.blocks: dict[str, slice] = {
            "translation": slice(0, 3),
            "global_orient": slice(3, 6),
            "pose": slice(6, 3 + 3 * model.n_joints),
            "shape": slice(3 + 3 * model.n_joints, self.size),
        }

    def pack(self, theta: Array, beta: Array, translation: Array) -> Array:
        return np.concatenate([np.asarray(translation, dtype=np.float64), np.ravel(theta), beta])

    def unpack(self, x: Array) -> tuple[Array, Array, Array]:
        theta = x[3 : 3 + 3 * self.n_joints].reshape(self.n_joints, 3)
        return theta, x[self.blocks["shape"]], x[:3]

    def free(self, variables: Sequence[str]) -> Array:
        return np.concatenate([np.arange(self.size)[self.blocks[v]] for v in BODY if v in variables])


# -- energy terms


def _joint_terms(
    model: BodyModel,
    theta: Array,
    beta: Array,
    translation: Array,
    intrinsics: Intrinsics,
    keypoints: Keypoints2D,
    robustifier: Robustifier,
    derivs: bool,
) -> tuple[float, Array, Array | None, Array, Array]:
    """Energy, residuals (k, 2), full jacobian (k, 2, n) or None, IRLS weights (k,) and front mask (k,)."""
    if derivs:
        joints, d_theta, d_beta = joints_and_jacobian(model, theta, beta)
    else:
        joints = joints_of(model, theta, beta)
    points = joints + translation
    z = points[:, 2]
    front = z > MIN_DEPTH
    conf = keypoints.conf

    residuals = np.zeros_like(keypoints.j)
    if np.any(front):
        residuals[front] = pinhole(intrinsics.focal, intrinsics.principal_point, points[front]) - keypoints.j[front]
    sq = np.where(front, (residuals**2).sum(axis=1), 0.0)
    rho, drho = robustifier.rho(sq)
    # behind the camera: flat penalty, outside the robustifier
    value = float(conf[front] @ rho[front]) + BEHIND_PENALTY * float(conf[~front].sum())
    weights = np.where(front, conf * drho, 0.0)

    if not derivs:
        return value, residuals, None, weights, front

    k = len(joints)
    d_points = np.zeros((k, 3, 3 + 3 * model.n_joints + model.n_betas))
    d_points[:, :, :3] = np.eye(3)
    d_points[:, :, 3 : 3 + 3 * model.n_joints] = d_theta.reshape(k, 3, -1)
    d_points[:, :, 3 + 3 * model.n_joints :] = d_beta
    proj = np.zeros((k, 2, 3))
    zf = np.where(front, z, 1.0)
    proj[:, 0, 0] = intrinsics.focal / zf
    proj[:, 1, 1] = intrinsics.focal / zf
    proj[:, :, 2] = -intrinsics.focal * points[:, :2] / zf[:, None] ** 2
    proj[~front] = 0.0
    return value, residuals, proj @ d_points, weights, front


def e_joints(
    model: BodyModel,
    params: ModelParams,
    translation: Array,
    intrinsics: Intrinsics,
    keypoints: Keypoints2D,
    robustifier: Robustifier | None = None,
) -> JointsEnergy:
    """Robustified reprojection energy, residuals and their jacobian over [translation, theta, beta].

    Joints at or behind the camera plane contribute conf * BEHIND_PENALTY, unrobustified, with a zero row.
    """
    robustifier = robustifier or Robustifier()
    value, residuals, jac, _, _ = _joint_terms(
        model, params.theta, params.beta, np.asarray(translation, dtype=np.float64), intrinsics, keypoints, robustifier, True
    )
    return JointsEnergy(value, residuals, jac)


def reprojection_error(residuals: Array, conf: Array, front: Array | None = None) -> float:
    """Mean confidence-weighted pixel distance."""
    total = float(conf.sum())
    if total <= 0.0:
        return 0.0
    dist = np.linalg.norm(residuals, axis=1)
    if front is not None:
        dist = np.where(front, dist, BEHIND_DISTANCE)
    return float(conf @ dist / total)


def measure_reprojection(
    model: BodyModel, params: ModelParams, translation: Array, intrinsics: Intrinsics, keypoints: Keypoints2D
) -> float:
    """Reprojection error of parameters against keypoints, as a fit reports it."""
    t = np.asarray(translation, dtype=np.float64)
    _, residuals, _, _, front = _joint_terms(
        model, params.theta, params.beta, t, intrinsics, keypoints, Robustifier(kind="none"), False
    )
    return reprojection_error(residuals, keypoints.conf, front)


class _Objective:
    """Weighted energy of one stage, with a Gauss-Newton model of every term."""

    def __init__(
        self,
        model: BodyModel,
        problem: FitProblem,
        priors: Priors,
        robustifier: Robustifier,
        weights: tuple[float, float, float],
    ) -> None:
        self.model = model
        self.problem = problem
        self.priors = priors
        self.robustifier = robustifier
        self.lambda_theta, self.lambda_a, self.lambda_beta = weights
        self.layout = _Layout(model)

    def breakdown(self, x: Array) -> dict[str, float]:
        theta, beta, t = self.layout.unpack(x)
        kp = self.problem.keypoints
        joints, *_ = _joint_terms(self.model, theta, beta, t, self.problem.intrinsics, kp, self.robustifier, False)
        return self._weighted(joints, theta, beta)

    def _weighted(self, joints: float, theta: Array, beta: Array) -> dict[str, float]:
        pose = self.lambda_theta * e_theta(self.priors.pose, theta).value if self.lambda_theta else 0.0
        angle = self.lambda_a * e_angle(theta, self.priors.angle).value if self.lambda_a else 0.0
        shape = self.lambda_beta * e_beta(beta).value if self.lambda_beta else 0.0
        return {"joints": joints, "pose": pose, "angle": angle, "shape": shape, "total": joints + pose + angle + shape}

    def linearize(self, x: Array) -> tuple[dict[str, float], Array, Array]:
        """Breakdown, gradient and Gauss-Newton hessian of the stage energy at x."""
        theta, beta, t = self.layout.unpack(x)
        kp = self.problem.keypoints
        joints, residuals, jac, weights, _ = _joint_terms(
            self.model, theta, beta, t, self.problem.intrinsics, kp, self.robustifier, True
        )
        wjac = weights[:, None, None] * jac
        grad = 2.0 * np.einsum("kan,ka->n", wjac, residuals)
        hess = 2.0 * np.einsum("kan,kam->nm", wjac, jac)

        pose_block = self.layout.blocks["pose"]
        shape_block = self.layout.blocks["shape"]
        if self.lambda_theta:
            energy = e_theta(self.priors.pose, theta)
            grad[3:pose_block.stop] += self.lambda_theta * energy.grad.ravel()
            hess[pose_block, pose_block] += self.lambda_theta * self.priors.pose.gauss_newton_hessian(theta)
        if self.lambda_a and self.priors.angle.joint_axis_list:
            energy = e_angle(theta, self.priors.angle)
            grad[3:pose_block.stop] += self.lambda_a * energy.grad.ravel()
            _, slopes = angle_residuals(theta, self.priors.angle)
            for term, slope in zip(self.priors.angle.joint_axis_list, slopes):
                i = 3 + 3 * term.joint + term.component
                hess[i, i] += 2.0 * self.lambda_a * slope**2
        if self.lambda_beta:
            grad[shape_block] += self.lambda_beta * e_beta(beta).grad
            hess[shape_block, shape_block] += 2.0 * self.lambda_beta * np.eye(self.model.n_betas)
        return self._weighted(joints, theta, beta), grad, hess


def total_energy(
    model: BodyModel,
    params: ModelParams,
    translation: Array,
    cfg: FitConfig,
    problem: FitProblem,
    priors: Priors,
    stage: StageConfig | None = None,
) -> dict[str, float]:
    """Per-term weighted energies (joints, pose, angle, shape) and their total."""
    objective = _Objective(model, problem, priors, cfg.robustifier, cfg.weights(stage))
    return objective.breakdown(objective.layout.pack(params.theta, params.beta, translation))


# -- optimizer


def _state(layout: _Layout, x: Array) -> dict[str, list]:
    theta, beta, t = layout.unpack(x)
    return {"theta": theta.tolist(), "beta": beta.tolist(), "translation": t.tolist()}


def _run_stage(
    objective: _Objective,
    x: Array,
    stage: StageConfig,
    cfg: FitConfig,
    index: int,
) -> tuple[Array, int, int, bool, list[TraceRecord]]:
    layout = objective.layout
    free = layout.free(stage.free)
    shape = layout.blocks["shape"]
    x = x.copy()
    trace: list[TraceRecord] = []

    breakdown, grad, hess = objective.linearize(x)
    energy = breakdown["total"]
    if not np.isfinite(energy):
        raise FitDivergedError(f"stage {index}: energy is not finite at the starting point", _state(layout, x))

    diag = np.diag(hess)[free]
    damping = cfg.init_damping * max(float(diag.max()), 1.0)
    iterations = accepted = 0
    converged = False

    while iterations < stage.max_iters:
        g = grad[free]
        if not np.all(np.isfinite(g)):
            raise FitDivergedError(f"stage {index}: gradient is not finite", _state(layout, x))
        if np.max(np.abs(g)) <= cfg.grad_tol:
            converged = True
            break
        if not np.isfinite(damping) or damping > MAX_DAMPING:
            break

        iterations += 1
        system = hess[np.ix_(free, free)] + damping * np.eye(len(free))
        try:
            step = cho_solve(cho_factor(system), -g)
        except LinAlgError:
            damping *= 2.0
            trace.append(TraceRecord(index, iterations, energy, float("nan"), 0.0, damping, False))
            continue

        step_norm = float(np.linalg.norm(step))
        trial = x.copy()
        trial[free] += step
        trial[shape] = np.clip(trial[shape], -BETA_LIMIT, BETA_LIMIT)
        trial_energy = objective.breakdown(trial)["total"]

        if np.isfinite(trial_energy) and trial_energy < energy:
            decrease = energy - trial_energy
            x = trial
            breakdown, grad, hess = objective.linearize(x)
            energy = breakdown["total"]
            damping /= 3.0
            accepted += 1
            trace.append(TraceRecord(index, iterations, energy, trial_energy, step_norm, damping, True))
            if decrease <= cfg.ftol * max(energy, 1.0):
                converged = True
                break
        else:
            damping *= 2.0
            trace.append(TraceRecord(index, iterations, energy, float(trial_energy), step_norm, damping, False))

        if step_norm <= cfg.step_tol * (float(np.linalg.norm(x[free])) + cfg.step_tol):
            converged = True
            break

    return x, iterations, accepted, converged, trace


def fit_camera_stage(model: BodyModel, problem: FitProblem, priors: Priors, cfg: FitConfig | None = None) -> StageResult:
    """Optimise translation and global orientation on the reprojection energy alone."""
    cfg = cfg or FitConfig()
    stage = cfg.camera_stage or _camera_stage()
    objective = _Objective(model, problem, priors, cfg.robustifier, (0.0, 0.0, 0.0))
    x0 = objective.layout.pack(problem.init.theta, problem.init.beta, problem.translation)
    x, iterations, accepted, converged, trace = _run_stage(objective, x0, stage, cfg, 0)
    theta, beta, t = objective.layout.unpack(x)
    return StageResult(theta, beta, t, iterations, accepted, converged, trace)


def fit(model: BodyModel, problem: FitProblem, priors: Priors, cfg: FitConfig | None = None) -> FitResult:
    """Camera stage, then every configured stage in order.

    Returns the best-seen iterate: the start and every stage endpoint are scored under the
    final stage's weights and the lowest total wins.
    """
    cfg = cfg or FitConfig()
    layout = _Layout(model)
    x = layout.pack(problem.init.theta, problem.init.beta, problem.translation)
    stages = [(0, cfg.camera_stage, (0.0, 0.0, 0.0))] if cfg.camera_stage else []
    stages += [(n, stage, cfg.weights(stage)) for n, stage in enumerate(cfg.stages, start=1)]
    final = _Objective(model, problem, priors, cfg.robustifier, cfg.weights(cfg.stages[-1]))

    best, best_breakdown = x, final.breakdown(x)
    iterations = accepted = 0
    converged = False
    trace: list[TraceRecord] = []
    for index, stage, weights in stages:
        objective = _Objective(model, problem, priors, cfg.robustifier, weights)
        x, used, took, converged, records = _run_stage(objective, x, stage, cfg, index)
        iterations += used
        accepted += took
        trace += records
        breakdown = final.breakdown(x)
        if breakdown["total"] < best_breakdown["total"]:
            best, best_breakdown = x, breakdown

    theta, beta, t = layout.unpack(best)
    kp = problem.keypoints
    _, residuals, _, _, front = _joint_terms(model, theta, beta, t, problem.intrinsics, kp, cfg.robustifier, False)
    return FitResult(
        params_opt=ModelParams(theta=theta, beta=beta),
        translation_opt=t,
        reproj_error=reprojection_error(residuals, kp.conf, front),
        energy_breakdown=best_breakdown,
        iterations_used=iterations,
        accepted_iterations=accepted,
        converged=converged,
        trace=trace,
    )


def _fit_slot(model: BodyModel, problem: FitProblem, priors: Priors, cfg: FitConfig) -> FitResult | Exception:
    try:
        return fit(model, problem, priors, cfg)
    except (FitDivergedError, ValueError, ArithmeticError) as e:
        return e


@timings()
def fit_batch(
    model: BodyModel,
    problems: Sequence[FitProblem],
    priors: Priors,
    cfg: FitConfig | None = None,
    workers: int | None = None,
) -> list[FitResult | Exception]:
    """Fit every problem on a thread pool; a failing problem leaves its exception in its slot."""
    if not problems:
        raise ValueError("fit_batch needs at least one problem")
    cfg = cfg or FitConfig()
    workers = cfg.workers if workers is None else workers
    results = Parallel(n_jobs=workers, prefer="threads")(delayed(_fit_slot)(model, p, priors, cfg) for p in problems)
    failures = sum(isinstance(r, Exception) for r in results)
    console.log(f"[fit] batch of {len(problems)} problems, {failures} failed")
    return list(results)


def fuse_keypoints(gt: Keypoints2D, det: Keypoints2D, cfg: FusionConfig | None = None) -> Keypoints2D:
    """Annotated positions with confidences set by agreement with the detector; unannotated joints stay missing."""
    cfg = cfg or FusionConfig()
    if gt.j.shape != det.j.shape:
        raise ValueError("annotations and detections must cover the same joints")
    distance = np.linalg.norm(det.j - gt.j, axis=1)
    confident = det.conf >= cfg.tau_det
    conf = np.where(
        confident & (distance <= cfg.r_agree),
        det.conf,
        np.where(confident, cfg.c_disagree, cfg.c_gt_default),
    )
    conf = np.where(gt.conf > 0.0, conf, 0.0)
    return Keypoints2D(j=gt.j, conf=conf)


def write_trace(path: str | Path, traces: Mapping[int, Sequence[TraceRecord]], **header: object) -> Path:
    """One line per iteration of every stage, tagged with its example id."""
    records = ({"id": i, **r._asdict()} for i, trace in sorted(traces.items()) for r in trace)
    return write_records(path, {"version": TRACE_VERSION, **header}, records)
