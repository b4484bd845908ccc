from __future__ import annotations

from functools import cached_property
from pathlib import Path
from typing import TYPE_CHECKING

from apps.common import argtype

from .body_model import BodyModel
from .config import Settings
from .dataset import SyntheticDataset
from .errors import FormatError
from .formats import peek_version
from .priors import AnglePriorConfig, GmmPosePrior, Priors

if TYPE_CHECKING:
    from argparse import ArgumentParser, _ArgumentGroup


class Resources:
    """Files every command reads, loaded once per invocation."""

    debug: bool = False
    config: Path | None = None

    model_file: Path
    prior_file: Path
    data_file: Path
    out: Path

    @cached_property
    def settings(self) -> Settings:
        return Settings.load(self.config)

    @cached_property
    def body_model(self) -> BodyModel:
        return BodyModel.load(self.model_file)

    @cached_property
    def priors(self) -> Priors:
        angle = AnglePriorConfig.for_model(self.body_model)
        return Priors(pose=GmmPosePrior.load(self.prior_file), angle=angle)

    def dataset(self, with_truth: bool = False) -> SyntheticDataset:
        data = SyntheticDataset.load(self.data_file, with_truth=with_truth)
        if data.header.n_keypoints != self.body_model.n_regressed:
            raise FormatError(
                f"{self.data_file}: {data.header.n_keypoints} keypoints per example, "
                f"the model regresses {self.body_model.n_regressed}"
            )
        return data

    @staticmethod
    def expect_version(path: Path, *versions: str) -> str:
        found = peek_version(path)
        if found not in versions:
            raise FormatError(f"{path}: expected one of {', '.join(versions)}, found '{found}'")
        return found

    @staticmethod
    def add_input(group: _ArgumentGroup, flag: str, dest: str, help: str, required: bool = True) -> None:
        group.add_argument(flag, dest=dest, metavar="PATH", help=help, required=required, type=Path)

    @staticmethod
    def add_output(group: _ArgumentGroup, help: str) -> None:
        group.add_argument("--out", dest="out", metavar="PATH", help=help, required=True, type=Path)

    @staticmethod
    def add_common(subparser: ArgumentParser) -> None:
        config = subparser.add_argument_group("Configuration")
        config.add_argument(
            "--config",
            metavar="PATH",
            help="JSON settings file; keys not given keep their defaults.",
            type=Path,
        )
        dev = subparser.add_argument_group("Developer")
        dev.add_argument(
            "--debug",
            metavar="BOOL",
            choices=[True, False],
            default=False,
            help="If set to True, will print the program configuration and exit without execution.",
            type=argtype.boolstring,
        )
