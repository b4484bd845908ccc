from __future__ import annotations

from argparse import Namespace

from apps.common import console

from .evaluate import Evaluator
from .generate import Generator
from .learn import Learner
from .optimize import Fitter


class Spin(Namespace, Generator, Fitter, Learner, Evaluator):
    command: str

    def invoke(self) -> None:
        console.FILE.write_text("")
        func = self._debug if self.debug else getattr(self, self.command.replace("-", "_"), None)
        if not callable(func):
            raise TypeError("Invalid command.")
        func.__call__()

    def _debug(self) -> None:
        console.debug(**{key: val for key, val in self.__dict__.items() if not callable(val)})
