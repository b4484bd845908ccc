"""Pose and shape priors: Gaussian mixture over body pose, elbow/knee bending, quadratic shape.

The mixture covers every joint except the global orientation, so its
dimension is 3 * (J - 1). Energies return their value together with the
gradient over the full (J, 3) pose array.
"""

from __future__ import annotations

from typing import NamedTuple, Self, TYPE_CHECKING

import numpy as np

from pydantic import Field, model_validator
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.special import logsumexp

from apps.common import console

from .errors import DegenerateSamplesError
from .formats import Config, Document, FloatArray

if TYPE_CHECKING:
    from .body_model import BodyModel
    from .typeshed import Array

LOG_2PI = np.log(2.0 * np.pi)
WEIGHT_TOL = 1e-12


class Energy(NamedTuple):
    value: float
    grad: Array


class GmmPosePrior(Document):
    VERSION = "gmmprior/1"

    weights: FloatArray
    means: FloatArray
    precisions: FloatArray
    log_norm_constants: FloatArray

    @model_validator(mode="after")
    def _check_invariants(self) -> Self:
        c, d = self.means.shape if self.means.ndim == 2 else (0, 0)
        if c < 1 or d < 1:
            raise ValueError("means must be C x D")
        if self.weights.shape != (c,) or self.log_norm_constants.shape != (c,):
            raise ValueError("weights and log_norm_constants need one entry per component")
        if self.precisions.shape != (c, d, d):
            raise ValueError("precisions must be C x D x D")
        if np.any(self.weights < 0.0) or abs(self.weights.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError("weights must lie on the simplex")
        if not np.allclose(self.precisions, np.swapaxes(self.precisions, -1, -2), rtol=0.0, atol=1e-9):
            raise ValueError("precisions must be symmetric")
        try:
            np.linalg.cholesky(self.precisions)
        except np.linalg.LinAlgError:
            raise ValueError("precisions must be positive definite") from None
        return self

    @classmethod
    def from_moments(cls, weights: Array, means: Array, precisions: Array) -> Self:
        precisions = 0.5 * (precisions + np.swapaxes(precisions, -1, -2))
        _, logdet = np.linalg.slogdet(precisions)
        d = means.shape[1]
        return cls(
            weights=weights / weights.sum(),
            means=means,
            precisions=precisions,
            log_norm_constants=0.5 * logdet - 0.5 * d * LOG_2PI,
        )

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def _log_terms(self, x: Array) -> tuple[Array, Array]:
        diff = x[None] - self.means
        whitened = np.einsum("cab,cb->ca", self.precisions, diff)
        quad = np.einsum("ca,ca->c", diff, whitened)
        return np.log(self.weights) + self.log_norm_constants - 0.5 * quad, whitened

    def responsibilities(self, theta: Array) -> Array:
        log_terms, _ = self._log_terms(_body_pose(theta, self.dim))
        return np.exp(log_terms - logsumexp(log_terms))

    def gauss_newton_hessian(self, theta: Array) -> Array:
        """(D, D) positive semi-definite Gauss-Newton curvature of `e_theta` at the body pose.

        Each component contributes the outer product of the jacobian of its whitened
        residual `L_c^T (x - mu_c)`, weighted by its responsibility. With `P_c = L_c L_c^T`
        that product is `L_c L_c^T`, so the sum reduces to the responsibility-weighted
        precisions and no factorisation is needed per call.
        """
        r = self.responsibilities(theta)
        return np.einsum("c,cab->ab", r, self.precisions)

    def sample(self, rng: np.random.Generator, n: int) -> Array:
        """(n, D) draws from the mixture."""
        picks = rng.choice(self.n_components, size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        # precision = L L^T, so mu + L^-T z has covariance precision^-1
        chol = np.linalg.cholesky(self.precisions)
        out = np.empty((n, self.dim))
        for i, (c, zi) in enumerate(zip(picks, z)):
            out[i] = self.means[c] + solve_triangular(chol[c].T, zi, lower=False)
        return out


def _body_pose(theta: Array, dim: int) -> Array:
    x = np.asarray(theta, dtype=np.float64)[1:].ravel()
    if x.shape != (dim,):
        raise ValueError(f"pose prior expects {dim // 3 + 1} joints, got {len(theta)}")
    return x


def e_theta(prior: GmmPosePrior, theta: Array) -> Energy:
    """Negative log mixture density of the body pose."""
    theta = np.asarray(theta, dtype=np.float64)
    log_terms, whitened = prior._log_terms(_body_pose(theta, prior.dim))
    total = logsumexp(log_terms)
    r = np.exp(log_terms - total)
    grad = np.zeros_like(theta)
    grad[1:] = (r @ whitened).reshape(-1, 3)
    return Energy(float(-total), grad)


class AngleTerm(Config):
    joint: int = Field(ge=0)
    component: int = Field(ge=0, le=2)
    sign: int

    @model_validator(mode="after")
    def _check_sign(self) -> Self:
        if self.sign not in (-1, 1):
            raise ValueError("sign must be +1 or -1")
        return self


# (joint name, axis-angle component, sign of the unnatural bending direction)
NATURAL_BENDS = (
    ("left_elbow", 1, -1),
    ("right_elbow", 1, 1),
    ("left_knee", 0, -1),
    ("right_knee", 0, -1),
)


class AnglePriorConfig(Config):
    joint_axis_list: list[AngleTerm] = Field(default_factory=list)

    @classmethod
    def for_model(cls, model: BodyModel) -> Self:
        terms = [
            AngleTerm(joint=model.index(name), component=comp, sign=sign)
            for name, comp, sign in NATURAL_BENDS
            if name in model.names and model.index(name) < model.n_joints
        ]
        return cls(joint_axis_list=terms)

    def check(self, model: BodyModel) -> None:
        for term in self.joint_axis_list:
            if term.joint >= model.n_joints:
                raise ValueError(f"angle prior joint {term.joint} outside a {model.n_joints}-joint model")


def e_angle(theta: Array, cfg: AnglePriorConfig) -> Energy:
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    value = 0.0
    for term in cfg.joint_axis_list:
        e = np.exp(2.0 * term.sign * theta[term.joint, term.component])
        value += e
        grad[term.joint, term.component] += 2.0 * term.sign * e
    return Energy(float(value), grad)


def angle_residuals(theta: Array, cfg: AnglePriorConfig) -> tuple[Array, Array]:
    """Residuals exp(s * x) and their derivatives, for the Gauss-Newton model of `e_angle`."""
    theta = np.asarray(theta, dtype=np.float64)
    values = np.array([np.exp(t.sign * theta[t.joint, t.component]) for t in cfg.joint_axis_list])
    signs = np.array([t.sign for t in cfg.joint_axis_list], dtype=np.float64)
    return values, signs * values


def e_beta(beta: Array) -> Energy:
    beta = np.asarray(beta, dtype=np.float64)
    return Energy(float(beta @ beta), 2.0 * beta)


class Priors(NamedTuple):
    pose: GmmPosePrior
    angle: AnglePriorConfig


# -- mixture fitting


def _kmeans_plus_plus(samples: Array, n_components: int, rng: np.random.Generator) -> Array:
    centers = [samples[rng.integers(len(samples))]]
    for _ in range(1, n_components):
        d2 = np.min(((samples[:, None] - np.array(centers)[None]) ** 2).sum(axis=-1), axis=1)
        total = d2.sum()
        p = d2 / total if total > 0.0 else np.full(len(samples), 1.0 / len(samples))
        centers.append(samples[rng.choice(len(samples), p=p)])
    return np.array(centers)


def _component_log_density(samples: Array, means: Array, covariances: Array) -> tuple[Array, Array]:
    """log N(x_i; mu_c, Sigma_c) as (M, C) plus the precisions (C, D, D)."""
    m, d = samples.shape
    out = np.empty((m, len(means)))
    precisions = np.empty_like(covariances)
    for c, (mu, cov) in enumerate(zip(means, covariances)):
        factor = cho_factor(cov, lower=True)
        chol = np.tril(factor[0])
        z = solve_triangular(chol, (samples - mu).T, lower=True)
        logdet = 2.0 * np.log(np.diag(chol)).sum()
        out[:, c] = -0.5 * (z * z).sum(axis=0) - 0.5 * logdet - 0.5 * d * LOG_2PI
        precisions[c] = cho_solve(factor, np.eye(d))
    return out, precisions


def fit_gmm_em(
    samples: Array,
    n_components: int = 8,
    seed: int = 0,
    max_iters: int = 100,
    tol: float = 1e-9,
    reg: float = 1e-6,
    history: list[float] | None = None,
) -> GmmPosePrior:
    """Seeded EM for a full-covariance mixture.

    Covariance updates maximise the likelihood penalised by -alpha/2 * tr(Sigma_c^-1)
    with alpha = reg * M / C, which adds reg * I to a component holding M / C samples.
    `history` receives the penalised mean log-likelihood of every iterate; it never decreases.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2:
        raise ValueError("samples must be M x D")
    m, d = samples.shape
    if n_components < 1 or m < 10 * n_components:
        raise ValueError(f"need at least {10 * n_components} samples for {n_components} components, got {m}")
    if np.all(np.ptp(samples, axis=0) == 0.0):
        raise DegenerateSamplesError("all samples are identical")

    rng = np.random.default_rng(seed)
    alpha = reg * m / n_components
    eye = np.eye(d)
    means = _kmeans_plus_plus(samples, n_components, rng)
    spread = np.cov(samples, rowvar=False).reshape(d, d) + reg * eye
    covariances = np.repeat(spread[None], n_components, axis=0)
    weights = np.full(n_components, 1.0 / n_components)
    history = [] if history is None else history

    previous = -np.inf
    for it in range(max_iters + 1):
        log_density, precisions = _component_log_density(samples, means, covariances)
        joint = log_density + np.log(weights)
        row_totals = logsumexp(joint, axis=1)
        penalty = 0.5 * alpha * np.trace(precisions, axis1=1, axis2=2).sum()
        objective = float((row_totals.sum() - penalty) / m)
        history.append(objective)
        console.log(f"[gmm] iteration {it}: penalised mean log-likelihood {objective:.9f}")
        if objective - previous <= tol * max(1.0, abs(objective)) or it == max_iters:
            break
        previous = objective

        resp = np.exp(joint - row_totals[:, None])
        counts = np.maximum(resp.sum(axis=0), np.finfo(np.float64).tiny)
        weights = counts / counts.sum()
        means = (resp.T @ samples) / counts[:, None]
        for c in range(n_components):
            diff = samples - means[c]
            scatter = (resp[:, c, None] * diff).T @ diff
            covariances[c] = (scatter + alpha * eye) / counts[c]
            covariances[c] = 0.5 * (covariances[c] + covariances[c].T)

    return GmmPosePrior.from_moments(weights, means, precisions)


# -- synthetic pose corpus

# archetype -> {joint name: (component, angle)}; camera frame: x body-left, y down, facing -z
ARCHETYPES: dict[str, dict[str, tuple[int, float]]] = {
    "stand": {},
    "walk": {
        "left_hip": (0, -0.45),
        "right_hip": (0, 0.3),
        "left_knee": (0, 0.35),
        "right_knee": (0, 0.1),
        "left_elbow": (1, 0.3),
        "right_elbow": (1, -0.3),
    },
    "sit": {
        "left_hip": (0, -1.4),
        "right_hip": (0, -1.4),
        "left_knee": (0, 1.4),
        "right_knee": (0, 1.4),
    },
    "arms_up": {
        "left_shoulder": (2, -1.2),
        "right_shoulder": (2, 1.2),
        "left_elbow": (1, 0.4),
        "right_elbow": (1, -0.4),
    },
    "arms_down": {
        "left_shoulder": (2, 1.2),
        "right_shoulder": (2, -1.2),
    },
}


def sample_pose_corpus(model: BodyModel, n: int, seed: int = 0, jitter: float = 0.15) -> Array:
    """(n, 3 * (J - 1)) body poses drawn around the archetypes with Gaussian jitter."""
    rng = np.random.default_rng(seed)
    bases = []
    for archetype in ARCHETYPES.values():
        base = np.zeros((model.n_joints, 3))
        for name, (comp, angle) in archetype.items():
            if name in model.names and model.index(name) < model.n_joints:
                base[model.index(name), comp] = angle
        bases.append(base[1:].ravel())
    bases = np.array(bases)
    picks = rng.integers(len(bases), size=n)
    return bases[picks] + rng.normal(0.0, jitter, size=(n, bases.shape[1]))
