from __future__ import annotations

import sys

from apps import Spin
from apps.cli import make_parser, program
from typing import TYPE_CHECKING, final

if TYPE_CHECKING:
    from collections.abc import Sequence

description = final("Fit a body model to 2D keypoints and train a keypoint regressor with the fits in the loop.")


@program("spin")
def main(argv: Sequence[str] | None = None) -> None:
    program = Spin()
    parser = make_parser("spin", description)

    cmdparser = parser.add_subparsers(dest="command", required=True)
    program.init_generate_args(cmdparser)
    program.init_fit_args(cmdparser)
    program.init_train_args(cmdparser)
    program.init_evaluate_args(cmdparser)

    parser.parse_args(argv, namespace=program).invoke()


if __name__ == "__main__":
    sys.exit(main())
