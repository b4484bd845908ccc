from __future__ import annotations

import json
import sys
import typing

from ramda_py.decor import timings
from ramda_py.util import rootpath
from tqdm import tqdm
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from collections.abc import Generator, Iterable, Iterator

__all__ = ["argtype", "console", "timings", "track"]


class argtype:
    @staticmethod
    def boolstring(value) -> bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value in ("True", "False"):
            return value == "True"
        raise TypeError("Must be either 'True' or 'False'.")

    @staticmethod
    def positive(value) -> int:
        try:
            n = int(value)
        except Exception:
            raise TypeError("Must be an integer.")
        if n < 1:
            raise TypeError("Must be a positive integer.")
        return n

    @staticmethod
    def count(value) -> int:
        try:
            n = int(value)
        except Exception:
            raise TypeError("Must be an integer.")
        if n < 0:
            raise TypeError("Must be a non-negative integer.")
        return n

    @staticmethod
    def probability(value) -> float:
        try:
            p = float(value)
        except Exception:
            raise TypeError("Must be a number.")
        if not 0.0 <= p <= 1.0:
            raise TypeError("Must lie in [0, 1].")
        return p

    @staticmethod
    def nonnegative(value) -> float:
        try:
            x = float(value)
        except Exception:
            raise TypeError("Must be a number.")
        if not x >= 0.0:
            raise TypeError("Must be a non-negative number.")
        return x


class console:
    NEWLINE = typing.final(chr(13) + chr(10) if sys.platform == "win32" else chr(10))
    FILE = typing.final(rootpath(__file__, "logs", mkdir=True) / "latest-execution.log")
    WHITELIST = typing.final(["progress", "epoch", "summary"])
    BLACKLIST = typing.final(["[debug]", "trace"])

    @classmethod
    def debug(cls, **kwds: object) -> None:
        for k, v in kwds.items():
            cls.log(f"[debug] {k}", f"\tvalue: {v}", f"\ttype: {type(v)}")

    @classmethod
    def json(
        cls,
        key: str | None = None,
        obj: dict[str, object] | None = None,
        *,
        indent: int | None = None,
        **kwds: object,
    ) -> None:
        obj = {**(obj or {}), **kwds}
        data = obj if not key else {key: obj}
        cls.log(json.dumps(obj=data, indent=indent, default=str))

    @classmethod
    def log(cls, *lines: object) -> None:
        text = " ".join(str(line).lower() for line in lines)
        if all(item not in text for item in cls.WHITELIST) or any(item in text for item in cls.BLACKLIST):
            with cls.FILE.open("a+t", encoding="utf-8") as f:
                print(*lines, sep=cls.NEWLINE, file=f)
        else:
            print(*lines, sep=cls.NEWLINE, file=sys.stdout, flush=True)

    @staticmethod
    def error(
        *lines: object,
        exception: BaseException | type[BaseException] | None = None,
        fatal: bool = False,
    ) -> None:
        exception and console.log(repr(exception))
        lines and console.log(*lines)
        fatal and sys.exit(1)


class track[I]:
    QUIET: typing.ClassVar[bool] = not sys.stderr.isatty()

    iterator: Iterator[I]
    description: str
    total: int | None
    current: int = 0

    @property
    def progress(self) -> str:
        return f"progress: {self.current}/{self.total if self.total is not None else '?'}"

    def __init__(self, iterable: Iterable[I], desc: str, total: int | None = None) -> None:
        self.total = len(iterable) if isinstance(iterable, typing.Sized) else total
        self.description = desc
        self.iterator = iter(iterable)

    def __iter__(self) -> Generator[I]:
        console.log(self.description)
        bar = tqdm(self.iterator, desc=self.description, total=self.total, leave=False, disable=self.QUIET)
        for item in bar:
            yield item
            self.current += 1
        if self.current:
            console.log(f"{self.description} {self.progress}")
