from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING

from apps.common import argtype, console, timings

from .body_model import ModelParams, forward, joints_of
from .camera import init_translation
from .dataset import VERSION as DATASET_VERSION, SyntheticDataset
from .dictionary import Dictionary
from .errors import FormatError, SpinError
from .fitting import FitProblem, FitResult, fit_batch, measure_reprojection
from .formats import export_obj
from .metrics import evaluate
from .regressor import Regressor, regress, rest_joints
from .resources import Resources

if TYPE_CHECKING:
    from .typeshed import Array, Subparsers

TRUTH = "truth"
ORACLE = "oracle"


class Evaluator(Resources):
    params: str
    report: Path | None = None
    id: int

    def _oracle(self, data: SyntheticDataset) -> tuple[dict[int, tuple[ModelParams, Array]], list[float]]:
        """Staged mean-pose fits to the evaluation keypoints themselves, an upper reference for any regressor."""
        if self.prior_file is None:
            raise ValueError(f"--params {ORACLE} needs --prior")
        model = self.body_model
        intrinsics = data.intrinsics()
        pairs = self.settings.camera.pair_indices(model)
        problems: list[FitProblem] = []
        ids: list[int] = []
        for o in data.observations:
            kp = o.target(self.settings.fusion)
            try:
                t = init_translation(kp, rest_joints(model), intrinsics.focal, pairs, intrinsics.principal_point)
                problems.append(FitProblem(keypoints=kp, intrinsics=intrinsics, init=ModelParams.zeros(model), translation=t))
            except (SpinError, ValueError) as e:
                console.log(f"[eval] example {o.id} not fitted: {e}")
                continue
            ids.append(o.id)

        preds: dict[int, tuple[ModelParams, Array]] = {}
        errors: list[float] = []
        results = fit_batch(model, problems, self.priors, self.settings.schedule("staged")) if problems else []
        for example_id, result in zip(ids, results):
            if isinstance(result, FitResult):
                preds[example_id] = (result.params_opt, result.translation_opt)
                errors.append(result.reproj_error)
            else:
                console.error(f"[eval] example {example_id} failed", exception=result)
        return preds, errors

    def _predictions(self, data: SyntheticDataset) -> tuple[dict[int, tuple[ModelParams, Array]], list[float]]:
        """Predicted parameters and translation per example id, with reprojection errors where known."""
        if self.params == TRUTH:
            truth = data.ground_truth()
            return {i: (ModelParams(theta=gt.theta, beta=gt.beta), gt.translation) for i, gt in truth.items()}, []
        if self.params == ORACLE:
            return self._oracle(data)

        path = Path(self.params)
        if self.expect_version(path, Dictionary.VERSION, Regressor.VERSION) == Dictionary.VERSION:
            dictionary = Dictionary.load(path)
            preds = {i: (e.params, e.translation) for i, e in dictionary.items()}
            return preds, [e.reproj_error for e in dictionary.values()]

        f = Regressor.load(path)
        model = self.body_model
        intrinsics = data.intrinsics()
        pairs = self.settings.camera.pair_indices(model)
        source = self.settings.train.translation_source
        preds: dict[int, tuple[ModelParams, Array]] = {}
        errors: list[float] = []
        for o in data.observations:
            kp = o.target(self.settings.fusion)
            try:
                params, t = regress(f, kp, model, intrinsics, pairs, source)
            except SpinError as e:
                console.log(f"[eval] example {o.id} not regressed: {e}")
                continue
            preds[o.id] = (params, t)
            errors.append(measure_reprojection(model, params, t, intrinsics, kp))
        return preds, errors

    @timings()
    def eval(self) -> None:
        data = self.dataset(with_truth=True)
        model = self.body_model
        truth = data.ground_truth()
        preds, errors = self._predictions(data)

        ids = sorted(i for i in preds if i in truth)
        if not ids:
            raise ValueError(f"{self.params}: no predictions for any example of {self.data_file}")
        report = evaluate(
            [joints_of(model, preds[i][0].theta, preds[i][0].beta) for i in ids],
            [joints_of(model, truth[i].theta, truth[i].beta) for i in ids],
            model.names,
            self.settings.metrics,
            reproj_errors=errors,
            coverage=len(ids) / len(data),
        )
        if self.report is not None:
            self.report.write_text(report.render(), encoding="utf-8")
        console.json("summary", report.model_dump(exclude={"per_joint"}))

    @timings()
    def export(self) -> None:
        model = self.body_model
        if self.params != TRUTH and self.expect_version(Path(self.params), Dictionary.VERSION, DATASET_VERSION) == Dictionary.VERSION:
            dictionary = Dictionary.load(self.params)
            if self.id not in dictionary:
                raise FormatError(f"{self.params}: no entry for example {self.id}")
            entry = dictionary[self.id]
            params, translation = entry.params, entry.translation
        else:
            source = self.data_file if self.params == TRUTH else Path(self.params)
            if source is None:
                raise ValueError("--params truth needs --data")
            gt = SyntheticDataset.load(source, with_truth=True).ground_truth()
            if self.id not in gt:
                raise FormatError(f"{source}: no ground truth for example {self.id}")
            params, translation = ModelParams(theta=gt[self.id].theta, beta=gt[self.id].beta), gt[self.id].translation

        mesh, _ = forward(model, params)
        mesh = mesh._replace(vertices=mesh.vertices + translation)
        self.out.write_text(export_obj(mesh), encoding="utf-8")
        console.json("summary", mesh=str(self.out), vertices=len(mesh.vertices), faces=len(mesh.faces))

    @staticmethod
    def init_evaluate_args(subparsers: Subparsers) -> None:
        subparser = subparsers.add_parser(
            "eval",
            description="Score fits, a regressor or the ground truth itself against the dataset's ground truth.",
            prog="spin eval",
        )
        options = subparser.add_argument_group("Options")
        Resources.add_input(options, "--model", "model_file", "Body model document.")
        Resources.add_input(options, "--data", "data_file", "Dataset file with its ground-truth section.")
        options.add_argument(
            "--params",
            metavar="PATH",
            required=True,
            help=(
                f"Dictionary or regressor file, '{TRUTH}' to score the ground truth, "
                f"or '{ORACLE}' to fit the evaluation keypoints themselves and score those fits."
            ),
        )
        Resources.add_input(options, "--prior", "prior_file", "Pose prior document for --params oracle.", required=False)
        Resources.add_input(options, "--report", "report", "Destination of the text report.", required=False)
        Resources.add_common(subparser)

        subparser = subparsers.add_parser(
            "export",
            description="Write the posed mesh of one example as a Wavefront OBJ file.",
            prog="spin export",
        )
        options = subparser.add_argument_group("Options")
        Resources.add_input(options, "--model", "model_file", "Body model document.")
        options.add_argument(
            "--params",
            metavar="PATH",
            required=True,
            help=f"Dictionary file, a dataset file with ground truth, or '{TRUTH}' together with --data.",
        )
        Resources.add_input(options, "--data", "data_file", "Dataset file for --params truth.", required=False)
        options.add_argument("--id", metavar="ID", required=True, help="Example id.", type=argtype.count)
        Resources.add_output(options, "Destination of the OBJ file.")
        Resources.add_common(subparser)
