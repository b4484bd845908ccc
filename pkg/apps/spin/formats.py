"""Structured-text containers shared by every artifact the package writes.

Documents are single JSON objects tagged with a version string. Record files
are JSON lines whose first line is a header carrying the version. Floats are
written with the shortest representation that parses back to the same
double, so every save/load round-trip is bit-exact.
"""

from __future__ import annotations

import json

from pathlib import Path
from typing import Annotated, Any, ClassVar, Self, TYPE_CHECKING

import numpy as np

from pydantic import BaseModel, BeforeValidator, ConfigDict, PlainSerializer

from .errors import FormatError

if TYPE_CHECKING:
    from collections.abc import Iterable, Iterator
    from .body_model import Mesh


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def _float_array(value: Any) -> np.ndarray:
    a = np.array(value, dtype=np.float64, copy=True)
    if not np.all(np.isfinite(a)):
        raise ValueError("array entries must be finite")
    return _frozen(a)


def _index_array(value: Any) -> np.ndarray:
    a = np.array(value, copy=True)
    if a.size and not np.issubdtype(a.dtype, np.integer):
        if not np.all(np.equal(np.mod(a, 1), 0)):
            raise ValueError("index arrays must hold integers")
    return _frozen(a.astype(np.int64))


def _tolist(a: np.ndarray) -> list:
    return a.tolist()


FloatArray = Annotated[
    np.ndarray,
    BeforeValidator(_float_array),
    PlainSerializer(_tolist, when_used="json"),
]
IntArray = Annotated[
    np.ndarray,
    BeforeValidator(_index_array),
    PlainSerializer(_tolist, when_used="json"),
]


class Config(BaseModel):
    """Tunable settings; unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid")


class Value(BaseModel):
    """Immutable validated value type holding numpy arrays."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True, extra="forbid")


class Document(Value):
    VERSION: ClassVar[str]

    def dumps(self) -> str:
        return json.dumps({"version": self.VERSION, **self.model_dump(mode="json")})

    @classmethod
    def loads(cls, text: str) -> Self:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise FormatError(f"not a {cls.VERSION} document: {e}") from e
        check_version(data, cls.VERSION)
        return cls.model_validate(data)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.dumps() + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> Self:
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def check_version(data: Any, expected: str) -> None:
    if not isinstance(data, dict):
        raise FormatError(f"expected a {expected} object")
    found = data.pop("version", None)
    if found != expected:
        raise FormatError(f"version mismatch: expected '{expected}', found '{found}'")


def peek_version(path: str | Path) -> str | None:
    """Version tag of a document or of a record file's header line."""
    with Path(path).open(encoding="utf-8") as f:
        first = f.readline()
    try:
        data = json.loads(first)
    except json.JSONDecodeError:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            return None
    return data.get("version") if isinstance(data, dict) else None


def write_records(path: str | Path, header: dict[str, Any], records: Iterable[dict[str, Any]]) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(header) + "\n")
        for record in records:
            f.write(json.dumps(record) + "\n")
    return path


def append_record(path: str | Path, record: dict[str, Any]) -> None:
    with Path(path).open("a", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(record) + "\n")


def read_records(path: str | Path, version: str) -> tuple[dict[str, Any], Iterator[dict[str, Any]]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FormatError(f"{path}: empty file, expected a {version} header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: unreadable header: {e}") from e
    check_version(header, version)

    def records() -> Iterator[dict[str, Any]]:
        for n, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(f"{path}:{n}: unreadable record: {e}") from e

    return header, records()


def export_obj(mesh: Mesh) -> str:
    """Wavefront OBJ text: one `v` line per vertex (6 decimals), one `f` line per face (1-based)."""
    lines = [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in mesh.vertices]
    lines += ["f " + " ".join(str(int(i) + 1) for i in face) for face in mesh.faces]
    return "\n".join(lines) + "\n"
