"""Keypoint-to-parameter regressor: a small dense network with a continuous rotation head.

The network reads flattened (u, v, conf) triples, with pixel coordinates
normalised to [-1, 1] over the crop, and emits 6 * J rotation numbers,
B shape coefficients and 3 translation numbers. The translation output is
scaled around a reference translation so it starts near a plausible depth.
"""

from __future__ import annotations

from typing import NamedTuple, Self, TYPE_CHECKING

import numpy as np

from pydantic import Field, model_validator

from .body_model import BETA_LIMIT, ModelParams
from .camera import MIN_DEPTH, TORSO_PAIRS, init_translation
from .errors import DimensionError, UnderConstrainedError
from .formats import Document, FloatArray
from .rotations import matrix_to_aa, rot6d_to_matrix
from .typeshed import Activation, RegressorVariant

if TYPE_CHECKING:
    from collections.abc import Sequence

    from .body_model import BodyModel
    from .camera import Intrinsics, Keypoints2D
    from .typeshed import Array, TranslationSource

IDENTITY_6D = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


class Regressor(Document):
    VERSION = "regressor/1"

    variant: RegressorVariant
    n_keypoints: int = Field(ge=2)
    n_joints: int = Field(ge=2)
    n_betas: int = Field(ge=1)
    crop: float = Field(gt=0.0)
    principal_point: FloatArray
    t_bias: FloatArray
    t_scale: FloatArray
    activation: Activation = "tanh"
    weights: list[FloatArray] = Field(default_factory=list)
    biases: list[FloatArray] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_invariants(self) -> Self:
        if self.principal_point.shape != (2,) or self.t_bias.shape != (3,) or self.t_scale.shape != (3,):
            raise ValueError("principal_point, t_bias and t_scale must be 2-, 3- and 3-vectors")
        if self.variant == "mean_pose":
            if self.weights or self.biases:
                raise ValueError("the mean_pose regressor has no trainable state")
            return self
        if not self.weights or len(self.weights) != len(self.biases):
            raise ValueError("an mlp needs one bias per weight matrix")
        width = self.n_inputs
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or w.shape[1] != width or b.shape != (w.shape[0],):
                raise ValueError(f"layer shapes {w.shape} / {b.shape} do not chain from width {width}")
            width = w.shape[0]
        if width != self.n_outputs:
            raise ValueError(f"output width {width} != 6 * J + B + 3 = {self.n_outputs}")
        return self

    @property
    def n_inputs(self) -> int:
        return 3 * self.n_keypoints

    @property
    def n_outputs(self) -> int:
        return 6 * self.n_joints + self.n_betas + 3

    @property
    def trainable(self) -> bool:
        return self.variant == "mlp"

    def with_layers(self, weights: Sequence[Array], biases: Sequence[Array]) -> Self:
        data = {name: getattr(self, name) for name in type(self).model_fields}
        return type(self)(**{**data, "weights": list(weights), "biases": list(biases)})


def _glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> Array:
    return rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=(fan_out, fan_in))


def identity_encoding(n_joints: int, n_betas: int) -> Array:
    """Output vector decoding to the zero pose, mean shape and the reference translation."""
    return np.concatenate([np.tile(IDENTITY_6D, n_joints), np.zeros(n_betas + 3)])


def init_regressor(
    model: BodyModel,
    intrinsics: Intrinsics,
    crop: float,
    t_bias: Array,
    t_scale: Array | None = None,
    variant: RegressorVariant = "mlp",
    hidden: Sequence[int] = (256, 256),
    activation: Activation = "tanh",
    seed: int = 0,
    head_gain: float = 1e-2,
) -> Regressor:
    t_bias = np.asarray(t_bias, dtype=np.float64)
    t_scale = np.array([1.0, 1.0, 0.25 * abs(t_bias[2])]) if t_scale is None else np.asarray(t_scale)
    shared = dict(
        variant=variant,
        n_keypoints=model.n_regressed,
        n_joints=model.n_joints,
        n_betas=model.n_betas,
        crop=crop,
        principal_point=intrinsics.principal_point,
        t_bias=t_bias,
        t_scale=t_scale,
        activation=activation,
    )
    if variant == "mean_pose":
        return Regressor(**shared)

    rng = np.random.default_rng(seed)
    widths = [3 * model.n_regressed, *hidden, 6 * model.n_joints + model.n_betas + 3]
    weights = [_glorot(rng, fan_out, fan_in) for fan_in, fan_out in zip(widths, widths[1:])]
    biases = [np.zeros(w) for w in widths[1:]]
    weights[-1] *= head_gain
    biases[-1] = identity_encoding(model.n_joints, model.n_betas)
    return Regressor(**shared, weights=weights, biases=biases)


def encode_keypoints(f: Regressor, keypoints: Keypoints2D) -> Array:
    """(3k,) network input; unobserved joints read as zeros."""
    if keypoints.j.shape[0] != f.n_keypoints:
        raise DimensionError(f"regressor expects {f.n_keypoints} keypoints, got {keypoints.j.shape[0]}")
    uv = (keypoints.j - f.principal_point) / (0.5 * f.crop)
    seen = keypoints.conf > 0.0
    triples = np.concatenate([np.where(seen[:, None], uv, 0.0), keypoints.conf[:, None]], axis=1)
    return triples.ravel()


# -- dense network


class Cache(NamedTuple):
    inputs: list[Array]
    pre: list[Array]


def _activate(f: Regressor, a: Array) -> Array:
    return np.tanh(a) if f.activation == "tanh" else a


def _activate_grad(f: Regressor, a: Array, h: Array) -> Array:
    return 1.0 - h * h if f.activation == "tanh" else np.ones_like(a)


def mlp_forward(f: Regressor, x: Array) -> tuple[Array, Cache]:
    """Outputs (n, 6J + B + 3) for inputs (n, 3k); hidden layers activated, output layer linear."""
    h = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if h.shape[1] != f.n_inputs:
        raise DimensionError(f"regressor expects {f.n_inputs} inputs, got {h.shape[1]}")
    if not f.trainable:
        return np.tile(identity_encoding(f.n_joints, f.n_betas), (len(h), 1)), Cache([], [])
    inputs, pre = [], []
    last = len(f.weights) - 1
    for n, (w, b) in enumerate(zip(f.weights, f.biases)):
        inputs.append(h)
        a = h @ w.T + b
        pre.append(a)
        h = a if n == last else _activate(f, a)
    return h, Cache(inputs, pre)


def mlp_backward(f: Regressor, cache: Cache, upstream: Array) -> tuple[list[Array], list[Array]]:
    """Weight and bias gradients for a loss whose gradient on the outputs is `upstream` (n, out)."""
    grad_w: list[Array] = []
    grad_b: list[Array] = []
    delta = np.atleast_2d(upstream)
    last = len(f.weights) - 1
    for n in range(last, -1, -1):
        grad_w.append(delta.T @ cache.inputs[n])
        grad_b.append(delta.sum(axis=0))
        if n:
            h = cache.inputs[n]
            delta = (delta @ f.weights[n]) * _activate_grad(f, cache.pre[n - 1], h)
    return grad_w[::-1], grad_b[::-1]


def mlp_forward_backward(f: Regressor, x: Array, upstream: Array) -> tuple[Array, list[Array], list[Array]]:
    out, cache = mlp_forward(f, x)
    grad_w, grad_b = mlp_backward(f, cache, upstream)
    return out, grad_w, grad_b


def sgd_step(f: Regressor, grad_w: Sequence[Array], grad_b: Sequence[Array], lr: float) -> Regressor:
    if not f.trainable:
        return f
    weights = [w - lr * g for w, g in zip(f.weights, grad_w)]
    biases = [b - lr * g for b, g in zip(f.biases, grad_b)]
    return f.with_layers(weights, biases)


# -- decoding


class Decoded(NamedTuple):
    rot6d: Array
    rotmats: Array
    beta: Array
    translation: Array


def split_output(f: Regressor, out: Array) -> tuple[Array, Array, Array]:
    """(J, 6) rotation numbers, (B,) shape, (3,) raw translation numbers."""
    j6 = 6 * f.n_joints
    return out[:j6].reshape(f.n_joints, 6), out[j6 : j6 + f.n_betas], out[j6 + f.n_betas :]


def decode(f: Regressor, out: Array) -> Decoded:
    rot6d, beta, raw = split_output(f, np.asarray(out, dtype=np.float64))
    return Decoded(rot6d, rot6d_to_matrix(rot6d), beta, f.t_bias + raw * f.t_scale)


def initialization(
    f: Regressor,
    out: Array,
    keypoints: Keypoints2D,
    model: BodyModel,
    intrinsics: Intrinsics,
    pairs: Sequence[tuple[int, int]] | None = None,
    source: TranslationSource = "regressor",
) -> tuple[ModelParams, Array]:
    """Decode one network output into fitting-ready parameters and a translation.

    The mean-pose variant, a "triangle" source and any predicted translation
    behind the camera take the torso similar-triangles estimate instead.
    """
    pairs = [(model.index(a), model.index(b)) for a, b in TORSO_PAIRS] if pairs is None else list(pairs)
    decoded = decode(f, out)
    theta = matrix_to_aa(decoded.rotmats) if f.trainable else np.zeros((f.n_joints, 3))
    params = ModelParams(theta=theta, beta=np.clip(decoded.beta, -BETA_LIMIT, BETA_LIMIT))

    translation = decoded.translation
    if not f.trainable or source == "triangle" or translation[2] <= MIN_DEPTH:
        try:
            translation = init_translation(keypoints, rest_joints(model), intrinsics.focal, pairs, intrinsics.principal_point)
        except UnderConstrainedError:
            if translation[2] <= MIN_DEPTH:
                raise
    return params, translation


def regress(
    f: Regressor,
    keypoints: Keypoints2D,
    model: BodyModel,
    intrinsics: Intrinsics,
    pairs: Sequence[tuple[int, int]] | None = None,
    source: TranslationSource = "regressor",
) -> tuple[ModelParams, Array]:
    """Model parameters and camera translation predicted from 2D keypoints."""
    out, _ = mlp_forward(f, encode_keypoints(f, keypoints))
    return initialization(f, out[0], keypoints, model, intrinsics, pairs, source)


def rest_joints(model: BodyModel) -> Array:
    return model.joint_regressor @ model.template_vertices
