from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING

from apps.common import argtype, console, timings

from .dictionary import Dictionary
from .errors import UnpairedViolationError
from .regressor import Regressor, init_regressor
from .resources import Resources
from .training import dictionary_init, reference_translation, train

if TYPE_CHECKING:
    from .typeshed import Subparsers


class Learner(Resources):
    epochs: int | None = None
    start_epoch: int = 1
    truth: bool = False
    static_fits: bool = False

    dict_in: Path | None = None
    dict_out: Path
    regressor_in: Path | None = None
    regressor_out: Path | None = None
    metrics_log: Path | None = None

    @timings()
    def train(self) -> None:
        if self.truth:
            raise UnpairedViolationError("training reads observations only; the ground-truth section is for eval")
        settings = self.settings
        data = self.dataset(with_truth=False)
        model = self.body_model
        intrinsics = data.intrinsics()
        fusion = settings.fusion
        train_cfg = settings.train
        if self.epochs is not None:
            train_cfg = train_cfg.model_copy(update={"epochs": self.epochs})
        if self.static_fits:
            train_cfg = train_cfg.model_copy(update={"in_loop": False})

        if self.regressor_in is not None:
            f = Regressor.load(self.regressor_in)
        else:
            anchor = reference_translation(data.observations, model, intrinsics, fusion)
            f = init_regressor(
                model,
                intrinsics,
                data.header.crop,
                anchor,
                variant=train_cfg.variant,
                hidden=train_cfg.hidden,
                activation=train_cfg.activation,
                seed=train_cfg.seed,
            )

        if self.dict_in is not None:
            dictionary = Dictionary.load(self.dict_in)
        else:
            warm = f if self.regressor_in is not None else None
            staged = settings.schedule("staged")
            dictionary = dictionary_init(
                model, data.observations, self.priors, staged, intrinsics, warm, fusion, train_cfg.translation_source
            )
        console.json("summary", stage="dictionary", entries=len(dictionary), mean_reproj_error=dictionary.mean_error())

        f, dictionary, history = train(
            f,
            data.observations,
            dictionary,
            model,
            self.priors,
            settings.schedule("single"),
            train_cfg,
            intrinsics,
            fusion,
            self.start_epoch,
            self.metrics_log,
        )
        dictionary.save(self.dict_out)
        if self.regressor_out is not None:
            f.save(self.regressor_out)
        console.json(
            "summary",
            stage="training",
            epochs=len(history),
            entries=len(dictionary),
            mean_reproj_error=dictionary.mean_error(),
        )

    @staticmethod
    def init_train_args(subparsers: Subparsers) -> None:
        subparser = subparsers.add_parser(
            "train",
            description="Train the keypoint regressor with fits in the loop.",
            prog="spin train",
        )
        options = subparser.add_argument_group("Options")
        Resources.add_input(options, "--model", "model_file", "Body model document.")
        Resources.add_input(options, "--prior", "prior_file", "Pose prior document.")
        Resources.add_input(options, "--data", "data_file", "Dataset file; only observations are read.")
        options.add_argument("--epochs", metavar="N", help="Overrides the configured epoch count.", type=argtype.count)
        options.add_argument(
            "--truth",
            action="store_true",
            help="Rejected: training never reads the ground-truth section.",
        )
        options.add_argument(
            "--static-fits",
            dest="static_fits",
            action="store_true",
            help="Supervise from the initial dictionary only; no fitting in the loop.",
        )

        state = subparser.add_argument_group("State")
        Resources.add_input(state, "--dict-in", "dict_in", "Resume from this dictionary.", required=False)
        Resources.add_input(state, "--dict-out", "dict_out", "Destination of the final dictionary.")
        Resources.add_input(state, "--regressor-in", "regressor_in", "Resume from this regressor.", required=False)
        Resources.add_input(state, "--regressor-out", "regressor_out", "Destination of the trained regressor.", required=False)
        Resources.add_input(state, "--metrics-log", "metrics_log", "Append per-epoch statistics here.", required=False)
        state.add_argument(
            "--start-epoch",
            dest="start_epoch",
            metavar="N",
            default=1,
            help="Number of the first epoch, for resumed runs.",
            type=argtype.positive,
        )
        Resources.add_common(subparser)
