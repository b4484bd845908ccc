from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from apps.common import console, timings

from .body_model import ModelParams
from .camera import init_translation
from .dictionary import Dictionary
from .errors import SpinError
from .fitting import FitProblem, FitResult, fit_batch, write_trace
from .regressor import Regressor, regress, rest_joints
from .resources import Resources

if TYPE_CHECKING:
    from .camera import Intrinsics, Keypoints2D
    from .dataset import Observation
    from .typeshed import Array, InitMode, Schedule, Subparsers


class Fitter(Resources):
    schedule: Schedule = "staged"
    init: InitMode = "mean"
    init_file: Path | None = None
    trace: Path | None = None

    def _mean_start(self, kp: Keypoints2D, intrinsics: Intrinsics) -> tuple[ModelParams, Array]:
        model = self.body_model
        pairs = self.settings.camera.pair_indices(model)
        t = init_translation(kp, rest_joints(model), intrinsics.focal, pairs, intrinsics.principal_point)
        return ModelParams.zeros(model), t

    def _starts(self, observations: list[Observation], intrinsics: Intrinsics) -> dict[int, tuple[ModelParams, Array]]:
        """Initial parameters per example id; examples that cannot be initialised are left out."""
        fusion = self.settings.fusion
        model = self.body_model
        dictionary: Dictionary | None = None
        regressor: Regressor | None = None
        if self.init == "file":
            if self.init_file is None:
                raise ValueError("--init file needs --init-file")
            if self.expect_version(self.init_file, Dictionary.VERSION, Regressor.VERSION) == Dictionary.VERSION:
                dictionary = Dictionary.load(self.init_file)
            else:
                regressor = Regressor.load(self.init_file)

        starts: dict[int, tuple[ModelParams, Array]] = {}
        for o in observations:
            kp = o.target(fusion)
            try:
                if dictionary is not None and o.id in dictionary:
                    entry = dictionary[o.id]
                    starts[o.id] = (entry.params, entry.translation)
                elif regressor is not None:
                    pairs = self.settings.camera.pair_indices(model)
                    starts[o.id] = regress(regressor, kp, model, intrinsics, pairs, self.settings.train.translation_source)
                else:
                    starts[o.id] = self._mean_start(kp, intrinsics)
            except SpinError as e:
                console.log(f"[fit] example {o.id} not initialised: {e}")
        return starts

    @timings()
    def fit(self) -> None:
        data = self.dataset()
        intrinsics = data.intrinsics()
        cfg = self.settings.schedule(self.schedule)
        if self.init == "translation-only":
            cfg = cfg.model_copy(update={"camera_stage": None})

        starts = self._starts(data.observations, intrinsics)
        problems: list[FitProblem] = []
        ids: list[int] = []
        for o in data.observations:
            if o.id not in starts:
                continue
            params, t = starts[o.id]
            try:
                problems.append(
                    FitProblem(keypoints=o.target(self.settings.fusion), intrinsics=intrinsics, init=params, translation=t)
                )
                ids.append(o.id)
            except ValueError as e:
                console.log(f"[fit] example {o.id} rejected: {e}")

        dictionary = Dictionary()
        traces = {}
        if problems:
            for example_id, result in zip(ids, fit_batch(self.body_model, problems, self.priors, cfg)):
                if isinstance(result, FitResult):
                    dictionary.update_fit(example_id, result, 0)
                    traces[example_id] = result.trace
                else:
                    console.error(f"[fit] example {example_id} failed", exception=result)
        dictionary.save(self.out)
        if self.trace is not None:
            write_trace(self.trace, traces, schedule=self.schedule, init=self.init)

        errors = list(dictionary.errors().values())
        console.json(
            "summary",
            fitted=len(dictionary),
            examples=len(data),
            mean_reproj_error=float(np.mean(errors)) if errors else None,
            schedule=self.schedule,
            init=self.init,
        )

    @staticmethod
    def init_fit_args(subparsers: Subparsers) -> None:
        subparser = subparsers.add_parser(
            "fit",
            description="Fit the body model to every example and write the best fits as a dictionary.",
            prog="spin fit",
        )
        options = subparser.add_argument_group("Options")
        Resources.add_input(options, "--model", "model_file", "Body model document.")
        Resources.add_input(options, "--prior", "prior_file", "Pose prior document.")
        Resources.add_input(options, "--data", "data_file", "Dataset file; only observations are read.")
        Resources.add_output(options, "Destination of the fit dictionary.")
        Resources.add_input(options, "--trace", "trace", "Per-iteration trace output.", required=False)

        config = subparser.add_argument_group("Schedule")
        config.add_argument(
            "--schedule",
            choices=["staged", "single"],
            default="staged",
            help="Four stages with descending prior weights, or one warm-start stage.",
        )
        config.add_argument(
            "--init",
            choices=["mean", "translation-only", "file"],
            default="mean",
            help="Mean pose with a camera pre-stage, mean pose without it, or starts read from --init-file.",
        )
        Resources.add_input(config, "--init-file", "init_file", "Dictionary or regressor to start from.", required=False)
        Resources.add_common(subparser)
