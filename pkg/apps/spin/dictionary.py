from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from pydantic import Field

from apps.common import console

from .body_model import ModelParams
from .formats import FloatArray, Value, read_records, write_records

if TYPE_CHECKING:
    from collections.abc import Iterable
    from .fitting import FitResult


class DictionaryEntry(Value):
    example_id: int
    params: ModelParams
    translation: FloatArray
    reproj_error: float = Field(ge=0.0)
    epoch_found: int = Field(ge=0)

    def to_record(self) -> dict[str, object]:
        return {
            "id": self.example_id,
            "theta": self.params.theta.tolist(),
            "beta": self.params.beta.tolist(),
            "translation": self.translation.tolist(),
            "reproj_error": self.reproj_error,
            "epoch_found": self.epoch_found,
        }

    @classmethod
    def from_record(cls, record: dict) -> DictionaryEntry:
        return cls(
            example_id=record["id"],
            params=ModelParams(theta=record["theta"], beta=record["beta"]),
            translation=record["translation"],
            reproj_error=record["reproj_error"],
            epoch_found=record["epoch_found"],
        )


class Dictionary(dict[int, DictionaryEntry]):
    """Best fit seen so far for every example, keyed by example id."""

    VERSION = "spindict/1"

    def update_fit(self, example_id: int, candidate: FitResult, epoch: int) -> bool:
        """Store `candidate` when the slot is empty or it strictly lowers the reprojection error."""
        current = self.get(example_id)
        if current is not None and not candidate.reproj_error < current.reproj_error:
            return False
        self[example_id] = DictionaryEntry(
            example_id=example_id,
            params=candidate.params_opt,
            translation=candidate.translation_opt,
            reproj_error=candidate.reproj_error,
            epoch_found=epoch,
        )
        return True

    def errors(self) -> dict[int, float]:
        return {i: e.reproj_error for i, e in sorted(self.items())}

    def mean_error(self) -> float:
        return float(np.mean([e.reproj_error for e in self.values()])) if self else 0.0

    def save(self, path: str | Path) -> Path:
        records = (self[i].to_record() for i in sorted(self))
        path = write_records(path, {"version": self.VERSION, "entries": len(self)}, records)
        console.log(f"Saved {len(self)} dictionary entries to {path}")
        return path

    @classmethod
    def load(cls, path: str | Path) -> Dictionary:
        _, records = read_records(path, cls.VERSION)
        return cls.from_entries(DictionaryEntry.from_record(r) for r in records)

    @classmethod
    def from_entries(cls, entries: Iterable[DictionaryEntry]) -> Dictionary:
        return cls((e.example_id, e) for e in entries)


def dictionary_update(dictionary: Dictionary, example_id: int, candidate: FitResult, epoch: int = 0) -> bool:
    return dictionary.update_fit(example_id, candidate, epoch)
