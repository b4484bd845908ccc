from __future__ import annotations

import sys

from argparse import ArgumentParser
from functools import wraps
from typing import TYPE_CHECKING

from apps.common import console
from apps.spin.errors import SpinError

if TYPE_CHECKING:
    from collections.abc import Callable

EXIT_FAILURE = 1


def program[**P](name: str) -> Callable[[Callable[P, object]], Callable[P, int]]:
    """Wrap a CLI entry point so domain errors end in a one-line diagnostic and a nonzero status."""

    def decorator(func: Callable[P, object]) -> Callable[P, int]:
        @wraps(func)
        def wrapper(*args: P.args, **kwargs: P.kwargs) -> int:
            try:
                func(*args, **kwargs)
            except (SpinError, ValueError, OSError) as e:
                console.error(f"{name} failed", exception=e)
                message = str(e).strip().splitlines()[0] if str(e).strip() else type(e).__name__
                print(f"{name}: error: {message}", file=sys.stderr)
                return EXIT_FAILURE
            return 0

        return wrapper

    return decorator


def make_parser(prog: str, desc: str) -> ArgumentParser:
    return ArgumentParser(prog=prog, description=desc)
