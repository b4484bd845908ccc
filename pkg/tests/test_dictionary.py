from __future__ import annotations

import numpy as np
import pytest

from apps.spin.body_model import ModelParams
from apps.spin.dictionary import Dictionary, DictionaryEntry, dictionary_update
from apps.spin.errors import FormatError
from apps.spin.fitting import FitResult


def result(model, error: float, seed: int = 0) -> FitResult:
    rng = np.random.default_rng(seed)
    return FitResult(
        params_opt=ModelParams(theta=rng.normal(0.0, 0.3, size=(model.n_joints, 3)), beta=rng.normal(size=model.n_betas)),
        translation_opt=np.array([0.1, -0.2, 30.0]) + rng.normal(size=3),
        reproj_error=error,
        energy_breakdown={"total": 1.0},
        iterations_used=3,
        accepted_iterations=2,
        converged=True,
    )


def test_empty_slot_takes_any_fit(model):
    d = Dictionary()
    assert d.update_fit(4, result(model, 50.0), epoch=2)
    assert d[4].epoch_found == 2 and d[4].reproj_error == 50.0


def test_only_strictly_better_fits_replace_an_entry(model):
    d = Dictionary()
    dictionary_update(d, 0, result(model, 5.0, seed=1))
    assert not dictionary_update(d, 0, result(model, 5.0, seed=2), epoch=1)
    assert not dictionary_update(d, 0, result(model, 6.0, seed=3), epoch=1)
    assert d[0].epoch_found == 0
    assert dictionary_update(d, 0, result(model, 4.5, seed=4), epoch=3)
    assert d[0].epoch_found == 3
    np.testing.assert_array_equal(d[0].params.theta, result(model, 4.5, seed=4).params_opt.theta)


def test_errors_never_increase_under_updates(model, rng):
    d = Dictionary()
    history = []
    for epoch, error in enumerate(rng.uniform(0.0, 20.0, size=30)):
        d.update_fit(7, result(model, float(error)), epoch)
        history.append(d[7].reproj_error)
    assert all(b <= a for a, b in zip(history, history[1:]))
    assert history[-1] == pytest.approx(min(history))


def test_round_trip_is_bit_exact(model, tmp_path):
    d = Dictionary()
    for i in (3, 1, 2):
        d.update_fit(i, result(model, 1.0 / (i + 3), seed=i), epoch=i)
    loaded = Dictionary.load(d.save(tmp_path / "dict.jsonl"))
    assert sorted(loaded) == [1, 2, 3]
    for i in d:
        np.testing.assert_array_equal(loaded[i].params.theta, d[i].params.theta)
        np.testing.assert_array_equal(loaded[i].params.beta, d[i].params.beta)
        np.testing.assert_array_equal(loaded[i].translation, d[i].translation)
        assert loaded[i].reproj_error == d[i].reproj_error
    assert (tmp_path / "dict.jsonl").read_text() == loaded.save(tmp_path / "again.jsonl").read_text()


def test_wrong_version_is_rejected(tmp_path):
    path = tmp_path / "other.jsonl"
    path.write_text('{"version": "spindata/1"}\n')
    with pytest.raises(FormatError):
        Dictionary.load(path)


def test_summary_helpers(model):
    assert Dictionary().mean_error() == 0.0
    d = Dictionary.from_entries(
        DictionaryEntry(
            example_id=i,
            params=ModelParams.zeros(model),
            translation=np.array([0.0, 0.0, 1.0]),
            reproj_error=float(i),
            epoch_found=0,
        )
        for i in (2, 4)
    )
    assert d.errors() == {2: 2.0, 4: 4.0}
    assert d.mean_error() == 3.0
