from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING

from apps.common import argtype, console, timings

from .body_model import ToySpec, make_toy_model
from .dataset import generate_synthetic_dataset
from .priors import fit_gmm_em, sample_pose_corpus
from .resources import Resources

if TYPE_CHECKING:
    from .typeshed import Subparsers


class Generator(Resources):
    spec_file: Path | None = None
    seed: int | None = None

    samples: int | None = None
    components: int | None = None

    n: int | None = None
    noise_px: float | None = None
    occlusion: float | None = None
    omit_truth: bool = False

    @timings()
    def gen_model(self) -> None:
        spec = self.settings.toy
        if self.spec_file is not None:
            spec = ToySpec.model_validate_json(self.spec_file.read_text(encoding="utf-8"))
        if self.seed is not None:
            spec = spec.model_copy(update={"seed": self.seed})
        model = make_toy_model(spec)
        model.save(self.out)
        console.json(
            "summary",
            model=str(self.out),
            vertices=model.n_vertices,
            joints=model.n_joints,
            keypoints=model.n_regressed,
            betas=model.n_betas,
        )

    @timings()
    def gen_prior(self) -> None:
        cfg = self.settings.prior
        samples = self.samples or cfg.samples
        components = self.components or cfg.components
        seed = cfg.seed if self.seed is None else self.seed

        corpus = sample_pose_corpus(self.body_model, samples, seed, cfg.jitter)
        history: list[float] = []
        prior = fit_gmm_em(corpus, components, seed, cfg.max_iters, reg=cfg.reg, history=history)
        prior.save(self.out)
        console.json(
            "summary",
            prior=str(self.out),
            components=prior.n_components,
            dim=prior.dim,
            iterations=len(history),
            log_likelihood=history[-1] if history else None,
        )

    @timings()
    def gen_data(self) -> None:
        camera = self.settings.camera
        cfg = self.settings.data
        overrides = {"n": self.n, "noise_px": self.noise_px, "occlusion_rate": self.occlusion, "seed": self.seed}
        cfg = cfg.model_copy(update={k: v for k, v in overrides.items() if v is not None})

        data = generate_synthetic_dataset(
            self.body_model,
            self.priors,
            cfg.n,
            cfg.noise_px,
            cfg.occlusion_rate,
            cfg.seed,
            crop=float(camera.crop),
            focal=camera.focal,
            cfg=cfg,
        )
        data.save(self.out, include_truth=not self.omit_truth)
        console.json("summary", data=str(self.out), examples=len(data), truth=not self.omit_truth)

    @staticmethod
    def init_generate_args(subparsers: Subparsers) -> None:
        model = subparsers.add_parser(
            "gen-model",
            description="Build a toy articulated body model and write it to disk.",
            prog="spin gen-model",
        )
        options = model.add_argument_group("Options")
        Resources.add_input(options, "--spec", "spec_file", "JSON model spec (segments, vertices, betas).", required=False)
        options.add_argument("--seed", metavar="INT", help="Overrides the toy-model seed.", type=int)
        Resources.add_output(options, "Destination of the model document.")
        Resources.add_common(model)

        prior = subparsers.add_parser(
            "gen-prior",
            description="Fit the pose mixture prior to a sampled pose corpus.",
            prog="spin gen-prior",
        )
        options = prior.add_argument_group("Options")
        Resources.add_input(options, "--model", "model_file", "Body model document.")
        options.add_argument("--samples", metavar="N", help="Corpus size.", type=argtype.positive)
        options.add_argument("--components", metavar="C", help="Mixture components.", type=argtype.positive)
        options.add_argument("--seed", metavar="INT", help="Corpus and EM seed.", type=int)
        Resources.add_output(options, "Destination of the prior document.")
        Resources.add_common(prior)

        data = subparsers.add_parser(
            "gen-data",
            description="Sample bodies from the prior and project them to 2D keypoints.",
            prog="spin gen-data",
        )
        options = data.add_argument_group("Options")
        Resources.add_input(options, "--model", "model_file", "Body model document.")
        Resources.add_input(options, "--prior", "prior_file", "Pose prior document.")
        options.add_argument("--n", metavar="N", help="Number of examples.", type=argtype.count)
        options.add_argument("--noise-px", dest="noise_px", metavar="PX", help="Keypoint noise sigma.", type=argtype.nonnegative)
        options.add_argument("--occlusion", metavar="P", help="Per-joint occlusion probability.", type=argtype.probability)
        options.add_argument("--seed", metavar="INT", help="Sampling seed.", type=int)
        options.add_argument(
            "--omit-truth",
            dest="omit_truth",
            action="store_true",
            help="Write the observations only, without the ground-truth section.",
        )
        Resources.add_output(options, "Destination of the dataset file.")
        Resources.add_common(data)
