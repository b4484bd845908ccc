from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np
import pytest

from apps.spin.body_model import ToySpec, make_toy_model
from apps.spin.camera import CameraConfig
from apps.spin.dataset import generate_synthetic_dataset
from apps.spin.priors import AnglePriorConfig, Priors, fit_gmm_em, sample_pose_corpus

if TYPE_CHECKING:
    from collections.abc import Callable

    from apps.spin.body_model import BodyModel
    from apps.spin.camera import Intrinsics
    from apps.spin.dataset import SyntheticDataset
    from apps.spin.typeshed import Array

# small enough for finite differences over every parameter, still the full 24-joint tree
SMALL_MODEL = ToySpec(verts_per_segment=8, n_betas=4, seed=0)


@pytest.fixture(scope="session")
def model() -> BodyModel:
    return make_toy_model(SMALL_MODEL)


@pytest.fixture(scope="session")
def priors(model: BodyModel) -> Priors:
    corpus = sample_pose_corpus(model, 600, seed=0)
    prior = fit_gmm_em(corpus, n_components=3, seed=0, max_iters=40)
    return Priors(pose=prior, angle=AnglePriorConfig.for_model(model))


@pytest.fixture(scope="session")
def intrinsics() -> Intrinsics:
    return CameraConfig().intrinsics()


@pytest.fixture(scope="session")
def dataset(model: BodyModel, priors: Priors) -> SyntheticDataset:
    return generate_synthetic_dataset(model, priors, 16, seed=3)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def central_difference() -> Callable[..., Array]:
    """Jacobian of f at x by central differences, shaped f(x).shape + x.shape."""

    def jacobian(f: Callable[[Array], Array], x: Array, step: float = 1e-6) -> Array:
        x = np.asarray(x, dtype=np.float64)
        base = np.asarray(f(x), dtype=np.float64)
        out = np.empty(base.shape + (x.size,))
        flat = x.ravel()
        for n in range(x.size):
            plus, minus = flat.copy(), flat.copy()
            plus[n] += step
            minus[n] -= step
            out[..., n] = (np.asarray(f(plus.reshape(x.shape))) - np.asarray(f(minus.reshape(x.shape)))) / (2.0 * step)
        return out.reshape(base.shape + x.shape)

    return jacobian
