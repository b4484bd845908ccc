from __future__ import annotations

import numpy as np
import pytest

from apps.spin import fitting
from apps.spin.body_model import ModelParams, joints_of
from apps.spin.camera import Keypoints2D, project
from apps.spin.fitting import (
    BEHIND_DISTANCE,
    BEHIND_PENALTY,
    TRACE_VERSION,
    FitConfig,
    FitProblem,
    FitResult,
    FusionConfig,
    Robustifier,
    StageConfig,
    e_joints,
    fit,
    fit_batch,
    fit_camera_stage,
    fuse_keypoints,
    measure_reprojection,
    reprojection_error,
    total_energy,
    write_trace,
)
from apps.spin.formats import read_records


def problem_for(dataset, index: int, theta=None, beta=None, translation=None) -> FitProblem:
    o = dataset.observations[index]
    gt = dataset.ground_truth()[o.id]
    return FitProblem(
        keypoints=o.keypoints,
        intrinsics=dataset.intrinsics(),
        init=ModelParams(theta=gt.theta if theta is None else theta, beta=gt.beta if beta is None else beta),
        translation=gt.translation if translation is None else translation,
    )


def test_ground_truth_reprojects_exactly(model, dataset):
    for o in dataset.observations[:4]:
        gt = dataset.ground_truth()[o.id]
        error = measure_reprojection(model, ModelParams(theta=gt.theta, beta=gt.beta), gt.translation, dataset.intrinsics(), o.keypoints)
        assert error < 1e-9


def test_robustifier_values():
    gm = Robustifier(sigma=10.0)
    rho, drho = gm.rho(np.array([0.0, 100.0, 1e12]))
    np.testing.assert_allclose(rho, [0.0, 50.0, 100.0], rtol=1e-9)
    np.testing.assert_allclose(drho[:2], [1.0, 0.25])
    rho, drho = Robustifier(kind="none").rho(np.array([3.0]))
    assert rho[0] == 3.0 and drho[0] == 1.0


def test_reprojection_error_weights_by_confidence():
    residuals = np.array([[3.0, 4.0], [0.0, 1.0], [10.0, 0.0]])
    assert reprojection_error(residuals, np.array([1.0, 1.0, 0.0])) == pytest.approx(3.0)
    assert reprojection_error(residuals, np.zeros(3)) == 0.0
    front = np.array([True, False, True])
    assert reprojection_error(residuals, np.array([0.0, 1.0, 0.0]), front) == BEHIND_DISTANCE


def test_joint_energy_jacobian(model, dataset, rng, central_difference):
    problem = problem_for(dataset, 0)
    theta = problem.init.theta + rng.normal(0.0, 0.05, size=problem.init.theta.shape)
    params = ModelParams(theta=theta, beta=problem.init.beta)
    energy = e_joints(model, params, problem.translation, problem.intrinsics, problem.keypoints)
    x = np.concatenate([problem.translation, theta.ravel(), params.beta])

    def residuals(v: np.ndarray) -> np.ndarray:
        th = v[3 : 3 + theta.size].reshape(theta.shape)
        kp = project(problem.intrinsics, joints_of(model, th, v[3 + theta.size :]), v[:3])
        return kp - problem.keypoints.j

    numeric = central_difference(residuals, x)
    np.testing.assert_allclose(energy.jacobian, numeric, rtol=1e-4, atol=1e-5)
    np.testing.assert_allclose(energy.residuals, residuals(x), atol=1e-9)


def test_joints_behind_the_camera_bypass_the_robustifier(model, dataset):
    problem = problem_for(dataset, 0)
    behind = problem.translation * np.array([1.0, 1.0, -1.0])
    energy = e_joints(model, problem.init, behind, problem.intrinsics, problem.keypoints, Robustifier(sigma=10.0))
    assert energy.value == pytest.approx(BEHIND_PENALTY * problem.keypoints.conf.sum())
    assert energy.value > 100.0 * problem.keypoints.conf.sum()
    np.testing.assert_array_equal(energy.jacobian, 0.0)


def test_fit_problem_needs_six_visible_keypoints(model, dataset):
    o = dataset.observations[0]
    conf = np.zeros_like(o.keypoints.conf)
    conf[:5] = 1.0
    kp = Keypoints2D(j=o.keypoints.j, conf=conf)
    with pytest.raises(ValueError):
        FitProblem(keypoints=kp, intrinsics=dataset.intrinsics(), init=ModelParams.zeros(model), translation=np.array([0.0, 0.0, 10.0]))


def test_fit_recovers_a_perturbed_pose(model, dataset, priors, rng):
    gt = dataset.ground_truth()[0]
    start = gt.theta + rng.normal(0.0, 0.1, size=gt.theta.shape)
    problem = problem_for(dataset, 0, theta=start, beta=np.zeros(model.n_betas))
    before = measure_reprojection(model, problem.init, problem.translation, problem.intrinsics, problem.keypoints)
    cfg = FitConfig.single_stage(100, lambda_theta=0.0, lambda_a=0.0, lambda_beta=0.0, camera_stage=None)
    result = fit(model, problem, priors, cfg)
    assert result.reproj_error < min(0.5, before)
    assert result.accepted_iterations > 0


def test_fit_energy_never_increases_within_a_stage(model, dataset, priors):
    problem = problem_for(dataset, 1, theta=np.zeros((model.n_joints, 3)), beta=np.zeros(model.n_betas))
    problem = problem.model_copy(
        update={"translation": dataset.ground_truth()[1].translation + np.array([0.05, -0.05, 1.0])}
    )
    result = fit(model, problem, priors, FitConfig.staged(8))
    by_stage: dict[int, list[float]] = {}
    for record in result.trace:
        by_stage.setdefault(record.stage, []).append(record.energy)
    for energies in by_stage.values():
        assert all(b <= a for a, b in zip(energies, energies[1:]))
    assert set(by_stage) <= {0, 1, 2, 3, 4}


def test_fit_returns_the_best_seen_iterate(model, dataset, priors, monkeypatch):
    problem = problem_for(dataset, 6)

    def drifting_stage(objective, x, stage, cfg, index):
        x = x.copy()
        x[:3] += [0.3, -0.2, 0.5]
        return x, 1, 1, False, []

    monkeypatch.setattr(fitting, "_run_stage", drifting_stage)
    cfg = FitConfig.single_stage(5, camera_stage=None)
    result = fit(model, problem, priors, cfg)
    np.testing.assert_array_equal(result.translation_opt, problem.translation)
    np.testing.assert_array_equal(result.params_opt.theta, problem.init.theta)
    assert result.reproj_error < 1e-9
    assert result.accepted_iterations == 1
    start = total_energy(model, problem.init, problem.translation, cfg, problem, priors, cfg.stages[-1])
    assert result.energy_breakdown["total"] == pytest.approx(start["total"])


def test_fit_reports_its_energy_breakdown(model, dataset, priors):
    problem = problem_for(dataset, 2)
    cfg = FitConfig.single_stage(5)
    result = fit(model, problem, priors, cfg)
    parts = result.energy_breakdown
    assert parts["total"] == pytest.approx(parts["joints"] + parts["pose"] + parts["angle"] + parts["shape"])
    again = total_energy(model, result.params_opt, result.translation_opt, cfg, problem, priors, cfg.stages[-1])
    assert again["total"] == pytest.approx(parts["total"], rel=1e-12)


def test_frozen_variables_do_not_move(model, dataset, priors):
    problem = problem_for(dataset, 3, theta=np.zeros((model.n_joints, 3)))
    cfg = FitConfig(camera_stage=None, stages=[StageConfig(free=["translation"], max_iters=20)])
    result = fit(model, problem, priors, cfg)
    np.testing.assert_array_equal(result.params_opt.theta, problem.init.theta)
    np.testing.assert_array_equal(result.params_opt.beta, problem.init.beta)


def test_camera_stage_moves_only_translation_and_orientation(model, dataset, priors):
    gt = dataset.ground_truth()[4]
    problem = problem_for(dataset, 4, theta=np.zeros((model.n_joints, 3)), translation=gt.translation * 1.2)
    stage = fit_camera_stage(model, problem, priors)
    np.testing.assert_array_equal(stage.theta[1:], 0.0)
    np.testing.assert_array_equal(stage.beta, problem.init.beta)
    assert stage.iterations <= 10


def test_batch_matches_sequential_fits(model, dataset, priors):
    cfg = FitConfig.single_stage(6)
    problems = [problem_for(dataset, i, theta=np.zeros((model.n_joints, 3))) for i in range(4)]
    batch = fit_batch(model, problems, priors, cfg, workers=2)
    for problem, result in zip(problems, batch):
        assert isinstance(result, FitResult)
        alone = fit(model, problem, priors, cfg)
        np.testing.assert_array_equal(result.params_opt.theta, alone.params_opt.theta)
        np.testing.assert_array_equal(result.translation_opt, alone.translation_opt)
        assert result.reproj_error == alone.reproj_error


def test_batch_needs_problems(model, priors):
    with pytest.raises(ValueError):
        fit_batch(model, [], priors)


def test_fusion_rules():
    gt = Keypoints2D(j=np.zeros((4, 2)), conf=np.array([1.0, 1.0, 1.0, 0.0]))
    det = Keypoints2D(j=np.array([[3.0, 4.0], [30.0, 0.0], [0.0, 0.0], [0.0, 0.0]]), conf=np.array([0.9, 0.9, 0.1, 0.9]))
    fused = fuse_keypoints(gt, det, FusionConfig())
    np.testing.assert_allclose(fused.conf, [0.9, 0.3, 0.8, 0.0])
    np.testing.assert_array_equal(fused.j, gt.j)


def test_fusion_config_order():
    with pytest.raises(ValueError):
        FusionConfig(c_gt_default=0.3, c_disagree=0.5)


def test_trace_file(model, dataset, priors, tmp_path):
    result = fit(model, problem_for(dataset, 5), priors, FitConfig.single_stage(3))
    path = write_trace(tmp_path / "trace.jsonl", {5: result.trace}, schedule="single")
    header, records = read_records(path, TRACE_VERSION)
    rows = list(records)
    assert header["schedule"] == "single"
    assert len(rows) == len(result.trace)
    assert all(row["id"] == 5 for row in rows)
    assert rows
    assert {"stage", "iteration", "energy", "damping", "accepted"} <= set(rows[0])
