"""Synthetic keypoint datasets and their line-delimited file format.

A dataset file holds a header line, one `example` line per observation and,
optionally, a separate run of `truth` lines. Training code only ever receives
observations; reading the truth section is an explicit, separate request.
"""

from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from pydantic import Field

from apps.common import console, track

from .body_model import joints_of
from .camera import Keypoints2D, Intrinsics, project
from .errors import FormatError, UnpairedViolationError
from .fitting import FusionConfig, fuse_keypoints
from .formats import Config, FloatArray, Value, read_records, write_records

if TYPE_CHECKING:
    from .body_model import BodyModel
    from .priors import Priors
    from .typeshed import Array

VERSION = "spindata/1"


class Observation(Value):
    id: int
    keypoints: Keypoints2D
    detections: Keypoints2D | None = None

    def target(self, fusion: FusionConfig | None = None) -> Keypoints2D:
        """Keypoints a fit should explain: annotations fused with detections when both exist."""
        if self.detections is None:
            return self.keypoints
        return fuse_keypoints(self.keypoints, self.detections, fusion)


class GroundTruth(Value):
    theta: FloatArray
    beta: FloatArray
    translation: FloatArray


class DatasetHeader(Value):
    n_keypoints: int = Field(ge=2)
    crop: float = Field(gt=0.0)
    focal: float = Field(gt=0.0)
    principal_point: FloatArray
    names: list[str]

    def intrinsics(self) -> Intrinsics:
        return Intrinsics(focal=self.focal, principal_point=self.principal_point)


class SyntheticDataset(Value):
    header: DatasetHeader
    observations: list[Observation]
    truth: dict[int, GroundTruth] | None = None

    def __len__(self) -> int:
        return len(self.observations)

    def intrinsics(self) -> Intrinsics:
        return self.header.intrinsics()

    def withhold_truth(self) -> SyntheticDataset:
        return SyntheticDataset(header=self.header, observations=self.observations)

    def ground_truth(self) -> dict[int, GroundTruth]:
        if self.truth is None:
            raise UnpairedViolationError("this dataset was loaded without its ground-truth section")
        return self.truth

    def save(self, path: str | Path, include_truth: bool = True) -> Path:
        h = self.header
        header = {
            "version": VERSION,
            "k": h.n_keypoints,
            "crop": h.crop,
            "focal": h.focal,
            "principal_point": h.principal_point.tolist(),
            "names": h.names,
            "has_truth": include_truth and self.truth is not None,
        }
        records: list[dict] = [_example_record(o) for o in self.observations]
        if include_truth and self.truth is not None:
            records += [
                {
                    "kind": "truth",
                    "id": i,
                    "theta": gt.theta.tolist(),
                    "beta": gt.beta.tolist(),
                    "translation": gt.translation.tolist(),
                }
                for i, gt in sorted(self.truth.items())
            ]
        return write_records(path, header, records)

    @classmethod
    def load(cls, path: str | Path, with_truth: bool = False) -> SyntheticDataset:
        """Observations only, unless `with_truth`; truth lines are then required to be present."""
        header_data, records = read_records(path, VERSION)
        try:
            header = DatasetHeader(
                n_keypoints=header_data["k"],
                crop=header_data["crop"],
                focal=header_data["focal"],
                principal_point=header_data["principal_point"],
                names=header_data["names"],
            )
        except KeyError as e:
            raise FormatError(f"{path}: dataset header lacks {e}") from None

        observations: list[Observation] = []
        truth: dict[int, GroundTruth] = {}
        for record in records:
            kind = record.get("kind")
            if kind == "example":
                observations.append(_parse_example(record, header.n_keypoints, path))
            elif kind == "truth":
                if with_truth:
                    truth[record["id"]] = GroundTruth(
                        theta=record["theta"], beta=record["beta"], translation=record["translation"]
                    )
            else:
                raise FormatError(f"{path}: unknown record kind {kind!r}")

        if with_truth and not header_data.get("has_truth"):
            raise FormatError(f"{path}: no ground-truth section")
        return cls(header=header, observations=observations, truth=truth if with_truth else None)


def _triples(kp: Keypoints2D) -> list[list[float]]:
    return np.concatenate([kp.j, kp.conf[:, None]], axis=1).tolist()


def _keypoints(triples: list, k: int, path: str | Path) -> Keypoints2D:
    a = np.asarray(triples, dtype=np.float64)
    if a.shape != (k, 3):
        raise FormatError(f"{path}: expected {k} keypoint triples, got shape {a.shape}")
    return Keypoints2D(j=a[:, :2], conf=a[:, 2])


def _example_record(o: Observation) -> dict:
    record: dict = {"kind": "example", "id": o.id, "keypoints": _triples(o.keypoints)}
    if o.detections is not None:
        record["detections"] = _triples(o.detections)
    return record


def _parse_example(record: dict, k: int, path: str | Path) -> Observation:
    detections = record.get("detections")
    return Observation(
        id=record["id"],
        keypoints=_keypoints(record["keypoints"], k, path),
        detections=None if detections is None else _keypoints(detections, k, path),
    )


class DataConfig(Config):
    n: int = Field(default=200, ge=0)
    noise_px: float = Field(default=0.0, ge=0.0)
    occlusion_rate: float = Field(default=0.0, ge=0.0, le=1.0)
    detector_noise_px: float = Field(default=0.0, ge=0.0)
    outlier_rate: float = Field(default=0.0, ge=0.0, le=1.0)
    yaw_range: float = Field(default=np.pi / 4, ge=0.0)
    beta_clip: float = Field(default=2.0, gt=0.0)
    fill: float = Field(default=0.75, gt=0.0, le=1.0)
    seed: int = 0

    @property
    def simulates_detector(self) -> bool:
        return self.detector_noise_px > 0.0 or self.outlier_rate > 0.0


def _place(
    model: BodyModel, theta: Array, beta: Array, focal: float, crop: float, fill: float, rng: np.random.Generator
) -> Array:
    """Translation putting the body's joint centroid near the image centre, sized to `fill` of the crop."""
    joints = joints_of(model, theta, beta)
    extent = max(float(np.ptp(joints[:, 1])), float(np.ptp(joints[:, 0])), 0.1)
    depth = focal * extent / (fill * crop) * rng.uniform(0.9, 1.1)
    centre = joints.mean(axis=0)
    shift = rng.normal(0.0, 0.03 * crop, size=2) * depth / focal
    return np.array([shift[0] - centre[0], shift[1] - centre[1], depth - centre[2]])


def generate_synthetic_dataset(
    model: BodyModel,
    priors: Priors,
    n: int,
    noise_px: float = 0.0,
    occlusion_rate: float = 0.0,
    seed: int = 0,
    crop: float = 256.0,
    focal: float = 5000.0,
    cfg: DataConfig | None = None,
) -> SyntheticDataset:
    """Bodies drawn from the pose mixture, projected through a pinhole camera.

    `cfg` supplies the remaining knobs (detector simulation, yaw range, shape clip);
    its n, noise, occlusion and seed are overridden by the explicit arguments.
    """
    cfg = (cfg or DataConfig()).model_copy(
        update={"n": n, "noise_px": noise_px, "occlusion_rate": occlusion_rate, "seed": seed}
    )
    rng = np.random.default_rng(cfg.seed)
    intrinsics = Intrinsics(focal=focal, principal_point=np.full(2, crop / 2.0))
    k = model.n_regressed

    observations: list[Observation] = []
    truth: dict[int, GroundTruth] = {}
    body = priors.pose.sample(rng, n) if n else np.zeros((0, 3 * (model.n_joints - 1)))
    for i in track(range(n), desc="Generating synthetic examples"):
        theta = np.zeros((model.n_joints, 3))
        theta[0, 1] = rng.uniform(-cfg.yaw_range, cfg.yaw_range)
        theta[1:] = body[i].reshape(-1, 3)
        beta = np.clip(rng.standard_normal(model.n_betas), -cfg.beta_clip, cfg.beta_clip)
        translation = _place(model, theta, beta, focal, crop, cfg.fill, rng)

        clean = project(intrinsics, joints_of(model, theta, beta), translation)
        uv = clean + rng.normal(0.0, 1.0, size=clean.shape) * cfg.noise_px if cfg.noise_px else clean
        visible = rng.random(k) >= cfg.occlusion_rate
        keypoints = Keypoints2D(j=np.where(visible[:, None], uv, 0.0), conf=visible.astype(np.float64))

        detections = None
        if cfg.simulates_detector:
            det = clean + rng.normal(0.0, 1.0, size=clean.shape) * cfg.detector_noise_px
            outlier = rng.random(k) < cfg.outlier_rate
            det[outlier] += rng.uniform(-0.25 * crop, 0.25 * crop, size=(int(outlier.sum()), 2))
            conf = np.where(outlier, rng.uniform(0.1, 0.6, size=k), rng.uniform(0.5, 1.0, size=k))
            detections = Keypoints2D(j=np.where(visible[:, None], det, 0.0), conf=np.where(visible, conf, 0.0))

        observations.append(Observation(id=i, keypoints=keypoints, detections=detections))
        truth[i] = GroundTruth(theta=theta, beta=beta, translation=translation)

    header = DatasetHeader(
        n_keypoints=k, crop=crop, focal=focal, principal_point=intrinsics.principal_point, names=list(model.names)
    )
    console.log(f"Generated {n} synthetic examples (noise {cfg.noise_px} px, occlusion {cfg.occlusion_rate})")
    return SyntheticDataset(header=header, observations=observations, truth=truth)
