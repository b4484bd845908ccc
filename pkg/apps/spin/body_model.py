"""Parametric body model: template + shape blendshapes, forward kinematics, linear blend skinning.

Regressed joints never require posing the whole mesh: with M = W @ S (joint
regressor times skin weights) the joints are a sum over kinematic joints of
rigidly transformed, regressor-weighted vertex moments, which are linear in
beta and precomputed per model. The full mesh is only built by `forward` and
the mesh-level losses.
"""

from __future__ import annotations

from functools import cached_property
from typing import NamedTuple, Self, TYPE_CHECKING

import numpy as np

from pydantic import Field, model_validator

from .errors import DimensionError
from .formats import Config, Document, FloatArray, IntArray, Value
from .rotations import aa_to_matrix, d_matrix_d_aa

if TYPE_CHECKING:
    from .typeshed import Array, Joints3D, RotationMatrix

BETA_LIMIT = 5.0
STOCHASTIC_TOL = 1e-9


class BodyModel(Document):
    VERSION = "bodymodel/1"

    template_vertices: FloatArray
    faces: IntArray
    shape_dirs: FloatArray
    joint_regressor: FloatArray
    rest_joint_regressor: FloatArray
    parents: IntArray
    skin_weights: FloatArray
    names: list[str]

    @model_validator(mode="after")
    def _check_invariants(self) -> Self:
        n = self.template_vertices.shape[0]
        if self.template_vertices.shape != (n, 3) or n < 4:
            raise ValueError("template_vertices must be N x 3 with N >= 4")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ValueError("faces must be F x 3")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= n):
            raise ValueError("face indices out of range")
        if self.shape_dirs.ndim != 3 or self.shape_dirs.shape[:2] != (n, 3) or self.shape_dirs.shape[2] < 1:
            raise ValueError("shape_dirs must be N x 3 x B with B >= 1")

        j = self.parents.shape[0]
        if self.parents.ndim != 1 or j < 2:
            raise ValueError("parents must list at least two joints")
        if self.parents[0] != -1:
            raise ValueError("parents[0] must be the root sentinel -1")
        for idx in range(1, j):
            if not 0 <= self.parents[idx] < idx:
                raise ValueError(f"parents[{idx}] = {self.parents[idx]} breaks the topological order")

        k = self.joint_regressor.shape[0]
        if self.joint_regressor.shape != (k, n) or k < 2:
            raise ValueError("joint_regressor must be k x N with k >= 2")
        if self.rest_joint_regressor.shape != (j, n):
            raise ValueError("rest_joint_regressor must be J_kin x N")
        if self.skin_weights.shape != (n, j):
            raise ValueError("skin_weights must be N x J_kin")
        for label, rows in (("joint_regressor", self.joint_regressor), ("skin_weights", self.skin_weights)):
            if np.any(rows < 0):
                raise ValueError(f"{label} entries must be non-negative")
            if np.any(np.abs(rows.sum(axis=1) - 1.0) > STOCHASTIC_TOL):
                raise ValueError(f"{label} rows must sum to 1")
        if len(self.names) != k:
            raise ValueError("names must label every regressed joint")
        return self

    @property
    def n_vertices(self) -> int:
        return self.template_vertices.shape[0]

    @property
    def n_joints(self) -> int:
        return self.parents.shape[0]

    @property
    def n_betas(self) -> int:
        return self.shape_dirs.shape[2]

    @property
    def n_regressed(self) -> int:
        return self.joint_regressor.shape[0]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"no joint named '{name}'") from None

    @cached_property
    def subtree(self) -> Array:
        """S[m, j] = 1 when j lies in the subtree rooted at m (m included)."""
        s = np.eye(self.n_joints)
        for j in range(self.n_joints - 1, 0, -1):
            s[self.parents[j]] += s[j]
        return np.minimum(s, 1.0)

    @cached_property
    def skin_regressor(self) -> Array:
        """(k, J): regressor mass each joint's rows draw from each bone."""
        return self.joint_regressor @ self.skin_weights

    @cached_property
    def regressed_template(self) -> Array:
        """(k, J, 3): sum_i W_ki w_ij template_i."""
        return np.einsum("ki,ij,ia->kja", self.joint_regressor, self.skin_weights, self.template_vertices, optimize=True)

    @cached_property
    def regressed_shape_dirs(self) -> Array:
        """(k, J, 3, B): sum_i W_ki w_ij shape_dirs_i."""
        return np.einsum("ki,ij,iab->kjab", self.joint_regressor, self.skin_weights, self.shape_dirs, optimize=True)

    @cached_property
    def rest_joint_dirs(self) -> Array:
        """(J, 3, B): d rest_joints / d beta."""
        return np.einsum("ji,iab->jab", self.rest_joint_regressor, self.shape_dirs)


class ModelParams(Value):
    theta: FloatArray
    beta: FloatArray

    @model_validator(mode="after")
    def _check_invariants(self) -> Self:
        if self.theta.ndim != 2 or self.theta.shape[1] != 3:
            raise ValueError("theta must be J_kin x 3 axis-angle rotations")
        if self.beta.ndim != 1:
            raise ValueError("beta must be a vector")
        if np.any(np.abs(self.beta) > BETA_LIMIT):
            raise ValueError(f"|beta_i| must not exceed {BETA_LIMIT}")
        return self

    @classmethod
    def zeros(cls, model: BodyModel) -> Self:
        return cls(theta=np.zeros((model.n_joints, 3)), beta=np.zeros(model.n_betas))


class Mesh(NamedTuple):
    vertices: Array
    faces: Array


class Posed(NamedTuple):
    rotmats: Array
    beta: Array
    vertices_rest: Array
    joints_rest: Array
    rotations: Array
    positions: Array

    def parent_rotation(self, parents: Array, m: int) -> Array:
        return self.rotations[parents[m]] if m > 0 else np.eye(3)


def _check_dims(model: BodyModel, rotmats: Array, beta: Array) -> None:
    if rotmats.shape != (model.n_joints, 3, 3):
        raise DimensionError(f"expected {model.n_joints} joint rotations, got shape {rotmats.shape[:-2]}")
    if beta.shape != (model.n_betas,):
        raise DimensionError(f"expected {model.n_betas} shape coefficients, got {beta.shape}")


def pose(model: BodyModel, rotmats: RotationMatrix, beta: Array) -> Posed:
    rotmats = np.asarray(rotmats, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    _check_dims(model, rotmats, beta)
    v_rest = model.template_vertices + model.shape_dirs @ beta
    j_rest = model.rest_joint_regressor @ v_rest

    rotations = np.empty_like(rotmats)
    positions = np.empty((model.n_joints, 3))
    rotations[0] = rotmats[0]
    positions[0] = j_rest[0]
    for j in range(1, model.n_joints):
        p = model.parents[j]
        rotations[j] = rotations[p] @ rotmats[j]
        positions[j] = rotations[p] @ (j_rest[j] - j_rest[p]) + positions[p]
    return Posed(rotmats, beta, v_rest, j_rest, rotations, positions)


def posed_vertices(model: BodyModel, posed: Posed) -> Array:
    w = model.skin_weights
    blended = np.einsum("ij,jab->iab", w, posed.rotations)
    offsets = np.einsum("jab,jb->ja", posed.rotations, posed.joints_rest) - posed.positions
    return np.einsum("iab,ib->ia", blended, posed.vertices_rest) - w @ offsets


def _joint_moments(model: BodyModel, posed: Posed) -> Array:
    """Y[k, j]: contribution of bone j to regressed joint k."""
    m = model.skin_regressor
    wv = model.regressed_template + model.regressed_shape_dirs @ posed.beta
    local = wv - m[:, :, None] * posed.joints_rest[None]
    return np.einsum("jab,kjb->kja", posed.rotations, local) + m[:, :, None] * posed.positions[None]


def posed_joints(model: BodyModel, posed: Posed) -> Joints3D:
    return _joint_moments(model, posed).sum(axis=1)


def joints_of(model: BodyModel, theta: Array, beta: Array) -> Joints3D:
    """Regressed joints without building the mesh."""
    return posed_joints(model, pose(model, aa_to_matrix(theta), beta))


def forward(model: BodyModel, params: ModelParams) -> tuple[Mesh, Joints3D]:
    posed = pose(model, aa_to_matrix(params.theta), params.beta)
    mesh = Mesh(posed_vertices(model, posed), model.faces)
    return mesh, regress_joints(model, mesh)


def forward_rotmats(model: BodyModel, rotmats: RotationMatrix, beta: Array) -> tuple[Mesh, Joints3D]:
    posed = pose(model, rotmats, beta)
    mesh = Mesh(posed_vertices(model, posed), model.faces)
    return mesh, regress_joints(model, mesh)


def regress_joints(model: BodyModel, mesh: Mesh | Array) -> Joints3D:
    vertices = mesh.vertices if isinstance(mesh, Mesh) else np.asarray(mesh, dtype=np.float64)
    if vertices.shape != (model.n_vertices, 3):
        raise DimensionError(f"mesh has shape {vertices.shape}, model expects ({model.n_vertices}, 3)")
    return model.joint_regressor @ vertices


def _subtree_moments(model: BodyModel, posed: Posed, moments: Array) -> Array:
    """Q[k, m] = sum over subtree(m) of Y[k, j] minus its regressor mass times the position of m."""
    s = model.subtree
    mass = np.einsum("mj,kj->km", s, model.skin_regressor)
    return np.einsum("mj,kja->kma", s, moments) - mass[:, :, None] * posed.positions[None]


def _position_beta_dirs(model: BodyModel, posed: Posed) -> Array:
    dj = model.rest_joint_dirs
    dt = np.empty_like(dj)
    dt[0] = dj[0]
    for j in range(1, model.n_joints):
        p = model.parents[j]
        dt[j] = posed.rotations[p] @ (dj[j] - dj[p]) + dt[p]
    return dt


def _joints_beta_jacobian(model: BodyModel, posed: Posed) -> Array:
    """(k, 3, B)."""
    m = model.skin_regressor
    dj = model.rest_joint_dirs
    dt = _position_beta_dirs(model, posed)
    local = model.regressed_shape_dirs - m[:, :, None, None] * dj[None]
    return np.einsum("jad,kjdb->kab", posed.rotations, local) + np.einsum("kj,jab->kab", m, dt)


def _spatial_generators(model: BodyModel, posed: Posed, theta: Array) -> Array:
    """Omega[m, c] = A_m (dR_m/dtheta_mc) R_m^T A_m^T with A_m the parent's global rotation."""
    d_r = d_matrix_d_aa(theta).reshape(model.n_joints, 3, 3, 3)
    d_r = np.moveaxis(d_r, -1, 1)
    local = d_r @ np.swapaxes(posed.rotmats, -1, -2)[:, None]
    parents = np.stack([posed.parent_rotation(model.parents, m) for m in range(model.n_joints)])
    return parents[:, None] @ local @ np.swapaxes(parents, -1, -2)[:, None]


def joints_and_jacobian(model: BodyModel, theta: Array, beta: Array) -> tuple[Joints3D, Array, Array]:
    """Joints (k, 3) with d/dtheta (k, 3, J, 3) and d/dbeta (k, 3, B)."""
    theta = np.asarray(theta, dtype=np.float64)
    posed = pose(model, aa_to_matrix(theta), beta)
    moments = _joint_moments(model, posed)
    q = _subtree_moments(model, posed, moments)
    omega = _spatial_generators(model, posed, theta)
    d_theta = np.einsum("mcab,kmb->kamc", omega, q)
    return moments.sum(axis=1), d_theta, _joints_beta_jacobian(model, posed)


def forward_jacobian(model: BodyModel, params: ModelParams) -> tuple[Array, Array]:
    _, d_theta, d_beta = joints_and_jacobian(model, params.theta, params.beta)
    k = model.n_regressed
    return d_theta.reshape(3 * k, 3 * model.n_joints), d_beta.reshape(3 * k, model.n_betas)


def _rotation_gradient(model: BodyModel, posed: Posed, g: Array) -> Array:
    """Map per-subtree moments G_m = sum g p^T to d/dR_m = A_m^T G_m A_m R_m."""
    out = np.empty_like(g)
    for m in range(model.n_joints):
        a = posed.parent_rotation(model.parents, m)
        out[m] = a.T @ g[m] @ a @ posed.rotmats[m]
    return out


def joints_vjp(model: BodyModel, rotmats: RotationMatrix, beta: Array, grad: Array) -> tuple[Array, Array]:
    """Pull a gradient on the regressed joints (k, 3) back to rotation matrices (J, 3, 3) and beta."""
    posed = pose(model, rotmats, beta)
    q = _subtree_moments(model, posed, _joint_moments(model, posed))
    g = np.einsum("ka,kmb->mab", grad, q)
    grad_beta = np.einsum("ka,kab->b", grad, _joints_beta_jacobian(model, posed))
    return _rotation_gradient(model, posed, g), grad_beta


def mesh_vjp(model: BodyModel, rotmats: RotationMatrix, beta: Array, grad: Array) -> tuple[Array, Array]:
    """Pull a gradient on the posed vertices (N, 3) back to rotation matrices (J, 3, 3) and beta."""
    posed = pose(model, rotmats, beta)
    w = model.skin_weights
    gw = w.T @ grad
    moment = np.einsum("ij,ia,ib->jab", w, grad, posed.vertices_rest)
    moment -= np.einsum("ja,jb->jab", gw, posed.joints_rest)
    h = moment @ np.swapaxes(posed.rotations, -1, -2) + np.einsum("ja,jb->jab", gw, posed.positions)
    s = model.subtree
    g = np.einsum("mj,jab->mab", s, h) - np.einsum("ma,mb->mab", s @ gw, posed.positions)

    dj = model.rest_joint_dirs
    dt = _position_beta_dirs(model, posed)
    shaped = np.einsum("ij,ic,idb->jcdb", w, grad, model.shape_dirs)
    grad_beta = np.einsum("jcd,jcdb->b", posed.rotations, shaped)
    grad_beta -= np.einsum("ja,jad,jdb->b", gw, posed.rotations, dj)
    grad_beta += np.einsum("ja,jab->b", gw, dt)
    return _rotation_gradient(model, posed, g), grad_beta


# -- toy model

JOINT_NAMES = (
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hand",
    "right_hand",
)
PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21)

# camera-aligned rest pose: x to the body's left, y down, the body faces -z
REST_JOINTS = np.array([
    [0.00, 0.00, 0.00],
    [0.09, 0.08, 0.00],
    [-0.09, 0.08, 0.00],
    [0.00, -0.11, 0.00],
    [0.10, 0.47, 0.00],
    [-0.10, 0.47, 0.00],
    [0.00, -0.24, 0.00],
    [0.10, 0.87, 0.02],
    [-0.10, 0.87, 0.02],
    [0.00, -0.30, 0.00],
    [0.11, 0.93, -0.10],
    [-0.11, 0.93, -0.10],
    [0.00, -0.52, 0.00],
    [0.08, -0.43, 0.00],
    [-0.08, -0.43, 0.00],
    [0.00, -0.62, -0.03],
    [0.18, -0.46, 0.00],
    [-0.18, -0.46, 0.00],
    [0.44, -0.46, 0.00],
    [-0.44, -0.46, 0.00],
    [0.69, -0.46, 0.00],
    [-0.69, -0.46, 0.00],
    [0.77, -0.46, 0.00],
    [-0.77, -0.46, 0.00],
])
SEGMENT_TIPS = {0: 3, 9: 12}
LEAF_LENGTH = 0.09
RADII = {
    "pelvis": 0.12,
    "spine": 0.11,
    "neck": 0.05,
    "head": 0.09,
    "collar": 0.05,
    "shoulder": 0.05,
    "elbow": 0.04,
    "wrist": 0.035,
    "hand": 0.03,
    "hip": 0.07,
    "knee": 0.05,
    "ankle": 0.045,
    "foot": 0.04,
}
PARENT_BLEND = 0.3


class ToySpec(Config):
    n_segments: int = Field(default=24, ge=2, le=len(JOINT_NAMES))
    verts_per_segment: int = Field(default=24, ge=4)
    n_betas: int = Field(default=10, ge=1)
    seed: int = 0


def _radius(name: str) -> float:
    return next(r for key, r in RADII.items() if key in name)


def _frame(direction: Array) -> tuple[Array, Array]:
    helper = np.array([0.0, 0.0, 1.0]) if abs(direction[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(direction, helper)
    u /= np.linalg.norm(u)
    return u, np.cross(direction, u)


def make_toy_model(spec: ToySpec | None = None) -> BodyModel:
    """Capsule-like segments on the first `n_segments` joints of a 24-joint humanoid tree."""
    spec = spec or ToySpec()
    rng = np.random.default_rng(spec.seed)
    n_joints = spec.n_segments
    parents = np.array(PARENTS[:n_joints])
    joints = REST_JOINTS[:n_joints]
    names = list(JOINT_NAMES[:n_joints])
    children = {j: [c for c in range(n_joints) if parents[c] == j] for j in range(n_joints)}

    ring_size = 4 if spec.verts_per_segment < 12 else 6
    n_rings = max(1, spec.verts_per_segment // ring_size)
    n_caps = spec.verts_per_segment - n_rings * ring_size

    tips = np.empty_like(joints)
    for j in range(n_joints):
        if children[j]:
            tip = SEGMENT_TIPS.get(j)
            tips[j] = joints[tip if tip in children[j] else children[j][0]]
        else:
            away = joints[j] - joints[parents[j]] if j > 0 else np.array([0.0, -1.0, 0.0])
            tips[j] = joints[j] + LEAF_LENGTH * away / np.linalg.norm(away)

    # relative elongation per (shape direction, segment); joint offsets scale with their parent's gain
    gains = rng.normal(0.0, 0.05, size=(spec.n_betas, n_joints))
    thickness = rng.normal(0.0, 0.15, size=(spec.n_betas, n_joints))
    joint_shift = np.zeros((spec.n_betas, n_joints, 3))
    for j in range(1, n_joints):
        p = parents[j]
        joint_shift[:, j] = joint_shift[:, p] + gains[:, p, None] * (joints[j] - joints[p])

    vertices, shape_dirs, skin, faces = [], [], [], []
    ring_rows: list[list[int]] = []
    for j in range(n_joints):
        axis = tips[j] - joints[j]
        length = np.linalg.norm(axis)
        direction = axis / length
        u, w = _frame(direction)
        radius = _radius(names[j])
        rings: list[list[int]] = []
        for r in range(n_rings):
            t = r / n_rings
            jitter = 1.0 + rng.uniform(-0.1, 0.1, size=ring_size)
            ring = []
            for q in range(ring_size):
                phi = 2.0 * np.pi * q / ring_size + r * np.pi / ring_size
                radial = np.cos(phi) * u + np.sin(phi) * w
                ring.append(len(vertices))
                vertices.append(joints[j] + t * axis + radius * jitter[q] * radial)
                shape_dirs.append(
                    joint_shift[:, j] + t * gains[:, j, None] * axis + thickness[:, j, None] * radius * radial
                )
                skin.append((j, t))
            rings.append(ring)
        for q in range(n_caps):
            phi = 2.0 * np.pi * q / max(n_caps, 1)
            radial = np.cos(phi) * u + np.sin(phi) * w
            vertices.append(tips[j] + 0.25 * radius * radial)
            shape_dirs.append(joint_shift[:, j] + gains[:, j, None] * axis + thickness[:, j, None] * 0.25 * radius * radial)
            skin.append((j, 1.0))
        for lower, upper in zip(rings, rings[1:]):
            for q in range(ring_size):
                a, b = lower[q], lower[(q + 1) % ring_size]
                c, d = upper[q], upper[(q + 1) % ring_size]
                faces += [(a, b, d), (a, d, c)]
        if n_rings == 1:
            ring = rings[0]
            faces += [(ring[0], ring[q], ring[q + 1]) for q in range(1, ring_size - 1)]
        ring_rows.append(rings[0])

    n = len(vertices)
    skin_weights = np.zeros((n, n_joints))
    for i, (j, t) in enumerate(skin):
        share = 0.0 if j == 0 else 0.5 * max(0.0, 1.0 - t / PARENT_BLEND)
        skin_weights[i, j] = 1.0 - share
        if share > 0.0:
            skin_weights[i, parents[j]] = share

    regressor = np.zeros((n_joints, n))
    for j, ring in enumerate(ring_rows):
        regressor[j, ring] = 1.0 / len(ring)

    return BodyModel(
        template_vertices=np.array(vertices),
        faces=np.array(faces, dtype=np.int64),
        shape_dirs=np.transpose(np.array(shape_dirs), (0, 2, 1)),
        joint_regressor=regressor,
        rest_joint_regressor=regressor.copy(),
        parents=parents,
        skin_weights=skin_weights,
        names=names,
    )
