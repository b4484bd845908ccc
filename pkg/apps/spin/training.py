"""Self-improving training: the regressor initialises in-loop fits, the best fits supervise the regressor.

Training only ever sees observations. Fits enter a per-example dictionary
when they lower its reprojection error; the dictionary entry is then the
supervision target. Targets within the rejection threshold supervise the
parameters and the mesh directly, the rest fall back to the 2D loss.
"""

from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from pydantic import Field

from apps.common import console, timings, track

from .body_model import pose, posed_vertices
from .camera import TORSO_PAIRS, init_translation
from .dictionary import Dictionary
from .errors import SpinError
from .fitting import FitProblem, FitResult, fit_batch
from .formats import Config, Value, append_record, write_records
from .regressor import (
    encode_keypoints,
    init_regressor,
    initialization,
    mlp_backward,
    mlp_forward,
    rest_joints,
    sgd_step,
)
from .rotations import aa_to_matrix
from .supervision import accept_fit, loss_2d, loss_3d, loss_mesh, shape_supervision_mode
from .typeshed import Activation, RegressorVariant, TranslationSource

if TYPE_CHECKING:
    from collections.abc import Sequence

    from .body_model import BodyModel
    from .camera import Intrinsics, Keypoints2D
    from .dataset import Observation
    from .dictionary import DictionaryEntry
    from .fitting import FitConfig, FusionConfig
    from .priors import Priors
    from .regressor import Regressor
    from .typeshed import Array

METRICS_VERSION = "spinmetrics/1"


class TrainConfig(Config):
    epochs: int = Field(default=5, ge=0)
    batch_size: int = Field(default=32, ge=1)
    lr: float = Field(default=1e-2, gt=0.0)
    w_3d: float = Field(default=1.0, ge=0.0)
    w_mesh: float = Field(default=1.0, ge=0.0)
    w_2d: float = Field(default=1.0, ge=0.0)
    w_cam: float = Field(default=1.0, ge=0.0)
    supervise_2d_on_accepted: bool = False
    tau_rej: float = Field(default=10.0, gt=0.0)
    shape_bound: float = Field(default=3.0, gt=0.0)
    seed: int = 0
    variant: RegressorVariant = "mlp"
    hidden: list[int] = Field(default_factory=lambda: [256, 256])
    activation: Activation = "tanh"
    translation_source: TranslationSource = "regressor"
    # False: supervise from the initial dictionary only, without fitting in the loop
    in_loop: bool = True


class EpochStats(Value):
    epoch: int
    examples: int
    loss_3d: float
    loss_mesh: float
    loss_2d: float
    acceptance_rate: float
    fit_failures: int
    dictionary_updates: int
    mean_fit_error: float
    mean_dictionary_error: float


def _pairs(model: BodyModel) -> list[tuple[int, int]]:
    return [(model.index(a), model.index(b)) for a, b in TORSO_PAIRS]


def reference_translation(
    observations: Sequence[Observation], model: BodyModel, intrinsics: Intrinsics, fusion: FusionConfig | None = None
) -> Array:
    """Median similar-triangles translation over the observations, from 2D evidence only."""
    estimates = []
    for o in observations:
        try:
            kp = o.target(fusion)
            estimates.append(init_translation(kp, rest_joints(model), intrinsics.focal, _pairs(model), intrinsics.principal_point))
        except SpinError:
            continue
    if not estimates:
        raise ValueError("no observation shows a torso pair; cannot pick a reference translation")
    return np.median(np.array(estimates), axis=0)


def _problems(
    f: Regressor,
    outputs: Array,
    targets: Sequence[Keypoints2D],
    ids: Sequence[int],
    model: BodyModel,
    intrinsics: Intrinsics,
    source: TranslationSource,
) -> tuple[list[FitProblem], list[int]]:
    problems, slots = [], []
    for example_id, kp, out in zip(ids, targets, outputs):
        try:
            params, translation = initialization(f, out, kp, model, intrinsics, _pairs(model), source)
            problems.append(FitProblem(keypoints=kp, intrinsics=intrinsics, init=params, translation=translation))
            slots.append(example_id)
        except (SpinError, ValueError) as e:
            console.log(f"[fit] example {example_id} skipped: {e}")
    return problems, slots


@timings()
def dictionary_init(
    model: BodyModel,
    observations: Sequence[Observation],
    priors: Priors,
    fit_cfg: FitConfig,
    intrinsics: Intrinsics,
    regressor: Regressor | None = None,
    fusion: FusionConfig | None = None,
    source: TranslationSource = "regressor",
) -> Dictionary:
    """Offline fit of every example; failures leave their slot empty.

    Without a regressor every fit starts from the mean pose and a similar-triangles translation.
    """
    dictionary = Dictionary()
    if not observations:
        return dictionary
    targets = [o.target(fusion) for o in observations]
    ids = [o.id for o in observations]
    if regressor is None:
        anchor = reference_translation(observations, model, intrinsics, fusion)
        regressor = init_regressor(model, intrinsics, 2.0 * float(intrinsics.principal_point[0]), anchor, variant="mean_pose")
    outputs, _ = mlp_forward(regressor, np.stack([encode_keypoints(regressor, kp) for kp in targets]))
    problems, slots = _problems(regressor, outputs, targets, ids, model, intrinsics, source)
    if problems:
        for example_id, result in zip(slots, fit_batch(model, problems, priors, fit_cfg)):
            if isinstance(result, FitResult):
                dictionary.update_fit(example_id, result, 0)
    console.log(f"[dictionary] initialised {len(dictionary)}/{len(observations)} entries")
    return dictionary


def _accepted_gradient(
    f: Regressor,
    out: Array,
    entry: DictionaryEntry,
    kp: Keypoints2D,
    model: BodyModel,
    intrinsics: Intrinsics,
    cfg: TrainConfig,
    totals: dict[str, float],
) -> Array:
    rotmats = aa_to_matrix(entry.params.theta)
    beta = entry.params.beta
    if shape_supervision_mode(beta, cfg.shape_bound) == "regularize_to_mean":
        beta = np.zeros_like(beta)

    grad = np.zeros_like(out)
    if cfg.w_3d:
        # w_cam weighs the translation term relative to the parameter term
        loss = loss_3d(f, out, rotmats, beta, entry.translation, cfg.w_cam)
        grad += cfg.w_3d * loss.grad
        totals["loss_3d"] += loss.value
    if cfg.w_mesh:
        target = posed_vertices(model, pose(model, rotmats, beta))
        loss = loss_mesh(f, out, model, target)
        grad += cfg.w_mesh * loss.grad
        totals["loss_mesh"] += loss.value
    if cfg.supervise_2d_on_accepted and cfg.w_2d:
        loss = loss_2d(f, out, model, intrinsics, kp)
        grad += cfg.w_2d * loss.grad
        totals["loss_2d"] += loss.value
    return grad


@timings()
def train_epoch(
    f: Regressor,
    observations: Sequence[Observation],
    dictionary: Dictionary,
    model: BodyModel,
    priors: Priors,
    fit_cfg: FitConfig,
    train_cfg: TrainConfig,
    intrinsics: Intrinsics,
    epoch: int = 1,
    fusion: FusionConfig | None = None,
) -> tuple[Regressor, Dictionary, EpochStats]:
    """One pass: regress, fit in batch from the regression, update the dictionary, step the regressor.

    A failed fit counts as a rejected fit for its example, whatever the dictionary holds.
    With `in_loop` off no fits run and the dictionary is passed through unchanged.
    """
    dictionary = Dictionary(dictionary)
    order = np.random.default_rng([train_cfg.seed, epoch]).permutation(len(observations))
    totals = {"loss_3d": 0.0, "loss_mesh": 0.0, "loss_2d": 0.0}
    accepted = failures = updates = 0
    fit_errors: list[float] = []

    batches = [order[s : s + train_cfg.batch_size] for s in range(0, len(order), train_cfg.batch_size)]
    for batch in track(batches, desc=f"Epoch {epoch} batches"):
        chosen = [observations[i] for i in batch]
        targets = [o.target(fusion) for o in chosen]
        ids = [o.id for o in chosen]
        outputs, cache = mlp_forward(f, np.stack([encode_keypoints(f, kp) for kp in targets]))

        fits: dict[int, FitResult | Exception] = {}
        if train_cfg.in_loop:
            problems, slots = _problems(f, outputs, targets, ids, model, intrinsics, train_cfg.translation_source)
            if problems:
                fits = dict(zip(slots, fit_batch(model, problems, priors, fit_cfg)))

        upstream = np.zeros_like(outputs)
        for n, (example_id, kp) in enumerate(zip(ids, targets)):
            fitted = not train_cfg.in_loop
            result = fits.get(example_id)
            if isinstance(result, FitResult):
                fitted = True
                fit_errors.append(result.reproj_error)
                updates += dictionary.update_fit(example_id, result, epoch)
            elif train_cfg.in_loop:
                failures += 1

            entry = dictionary.get(example_id)
            if fitted and entry is not None and accept_fit(entry, train_cfg.tau_rej):
                accepted += 1
                upstream[n] = _accepted_gradient(f, outputs[n], entry, kp, model, intrinsics, train_cfg, totals)
            elif train_cfg.w_2d:
                loss = loss_2d(f, outputs[n], model, intrinsics, kp)
                upstream[n] = train_cfg.w_2d * loss.grad
                totals["loss_2d"] += loss.value

        if f.trainable and np.any(upstream):
            grad_w, grad_b = mlp_backward(f, cache, upstream / len(batch))
            f = sgd_step(f, grad_w, grad_b, train_cfg.lr)

    examples = len(observations)
    stats = EpochStats(
        epoch=epoch,
        examples=examples,
        loss_3d=totals["loss_3d"] / max(accepted, 1),
        loss_mesh=totals["loss_mesh"] / max(accepted, 1),
        loss_2d=totals["loss_2d"] / max(examples, 1),
        acceptance_rate=accepted / max(examples, 1),
        fit_failures=failures,
        dictionary_updates=updates,
        mean_fit_error=float(np.mean(fit_errors)) if fit_errors else 0.0,
        mean_dictionary_error=dictionary.mean_error(),
    )
    console.json("epoch", stats.model_dump())
    return f, dictionary, stats


def append_metrics(path: str | Path, stats: EpochStats) -> None:
    path = Path(path)
    if not path.exists():
        write_records(path, {"version": METRICS_VERSION}, [])
    append_record(path, stats.model_dump())


def train(
    f: Regressor,
    observations: Sequence[Observation],
    dictionary: Dictionary,
    model: BodyModel,
    priors: Priors,
    fit_cfg: FitConfig,
    train_cfg: TrainConfig,
    intrinsics: Intrinsics,
    fusion: FusionConfig | None = None,
    start_epoch: int = 1,
    metrics_log: str | Path | None = None,
) -> tuple[Regressor, Dictionary, list[EpochStats]]:
    history: list[EpochStats] = []
    epochs = range(start_epoch, start_epoch + train_cfg.epochs)
    for epoch in track(epochs, desc="Training epochs"):
        f, dictionary, stats = train_epoch(
            f, observations, dictionary, model, priors, fit_cfg, train_cfg, intrinsics, epoch, fusion
        )
        history.append(stats)
        if metrics_log is not None:
            append_metrics(metrics_log, stats)
        console.log(
            f"epoch {epoch}: dictionary error {stats.mean_dictionary_error:.3f} px, "
            f"acceptance {stats.acceptance_rate:.2f}, 3d loss {stats.loss_3d:.4f}"
        )
    return f, dictionary, history
