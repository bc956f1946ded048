import json

import numpy as np
import pytest

from brickwall.errors import Diverged, EmptyAfterPreprocess
from brickwall.geom import GROUND_LABEL, PointCloud, Pose3, rotvec_to_matrix
from brickwall.geom.pose import wrap_angle
from brickwall.register import (
    AlignmentResult,
    BrickModel,
    CorrespondenceParams,
    MultiBrickProblem,
    SolverConfig,
    build_multi_problem,
    contact_pairs,
    damped_step,
    jacobian_check,
    objective,
    preprocess_scan,
    rough_align,
    solve_multi_brick,
)
from brickwall.register.multi import _Evaluator
from brickwall.scenarios import registration_scenario, wall_scenario
from brickwall.synth import SensorModel, look_at, raycast_scan, render_model_cloud
from brickwall.world import PileEntry, Scene, assemble_scene


@pytest.fixture(scope="module")
def reg_scene():
    sc = registration_scenario(0)
    prob = build_multi_problem(sc.nominal, sc.scans, sc.viewpoints, sc.center, 5.0)
    return sc, prob


@pytest.fixture(scope="module")
def wall():
    sc = wall_scenario(0, sigma=0.0, dropout=0.0)
    scan = raycast_scan(sc.scene, sc.sensor, rng_seed=0)
    T = sc.truth
    center = T @ Pose3.from_xyz_yaw(sc.blueprint.wall_length / 2, 0, 0, 0, "wall", "wall")
    pre = preprocess_scan(scan, center, 3.0, viewpoint=sc.sensor.pose.t)
    local_eye = T.inverse().with_frames(None, None) @ sc.sensor.pose.with_frames(None, None)
    model = render_model_cloud(sc.scene.bricks, local_eye)
    model = model.select(model.points[:, 2] > 0.05)
    return sc, pre, model


def _random_problem(rng, n_bricks, with_scan=True, pairs_p=0.7):
    bricks = []
    for j in range(n_bricks):
        P = rng.normal(size=(30, 3)) * 0.3 + rng.normal(size=3)
        N = rng.normal(size=(30, 3))
        N /= np.linalg.norm(N, axis=1)[:, None]
        pose = Pose3.from_rt(rotvec_to_matrix(rng.normal(size=3)), rng.normal(size=3))
        bricks.append(BrickModel(j, PointCloud(P, N), pose))
    if with_scan:
        P = np.vstack([b.cloud.points for b in bricks])
        N = np.vstack([b.cloud.normals for b in bricks])
        scan = PointCloud(P + rng.normal(size=P.shape) * 0.02, N)
    else:
        scan = PointCloud.empty(with_normals=True)
    contacts = [(i, j) for i in range(n_bricks) for j in range(i + 1, n_bricks) if rng.random() < pairs_p]
    return MultiBrickProblem(bricks, scan, contacts, rng.uniform(0.5, 2), rng.uniform(0.5, 2), up=rng.normal(size=3))


# preprocessing ---------------------------------------------------------------


def test_preprocess_removes_ground(reg_scene):
    sc, _ = reg_scene
    out = preprocess_scan(sc.scans[0], sc.center, 5.0, viewpoint=sc.viewpoints[0].t)
    assert len(out) > 1000
    assert not np.any(out.labels == GROUND_LABEL)


def test_preprocess_cube_bound(reg_scene):
    sc, _ = reg_scene
    out = preprocess_scan(sc.scans[0], sc.center, 2.0, viewpoint=sc.viewpoints[0].t)
    assert np.max(np.linalg.norm(out.points - sc.center.t, axis=1)) <= 2 * np.sqrt(3) + 1e-9


def test_preprocess_voxel_density(reg_scene):
    sc, _ = reg_scene
    out = preprocess_scan(sc.scans[0], sc.center, 5.0, d=0.02, viewpoint=sc.viewpoints[0].t)
    keys = np.floor((out.points - 0.01) / 0.02).astype(int)
    assert len(np.unique(keys, axis=0)) == len(out)


def test_preprocess_normals_face_viewpoint(reg_scene):
    sc, _ = reg_scene
    vp = sc.viewpoints[0].t
    out = preprocess_scan(sc.scans[0], sc.center, 5.0, viewpoint=vp)
    assert np.all(np.einsum("ij,ij->i", out.normals, vp - out.points) >= 0)


def test_preprocess_empty_crop():
    scan = PointCloud(np.random.default_rng(0).normal(size=(100, 3)))
    with pytest.raises(EmptyAfterPreprocess):
        preprocess_scan(scan, Pose3.from_xyz_yaw(50, 50, 0, 0), 1.0)
    with pytest.raises(EmptyAfterPreprocess):
        preprocess_scan(PointCloud.empty(), Pose3.identity(), 1.0)


# rough alignment ---------------------------------------------------------------


def test_rough_fixed_point():
    # model identical to the scan, so the truth is an exact zero-cost optimum
    sc = wall_scenario(1, sigma=0.0, dropout=0.0)
    scan = raycast_scan(sc.scene, sc.sensor, rng_seed=1)
    T = sc.truth
    center = T @ Pose3.from_xyz_yaw(sc.blueprint.wall_length / 2, 0, 0, 0, "wall", "wall")
    pre = preprocess_scan(scan, center, 3.0, viewpoint=sc.sensor.pose.t)
    model = pre.transformed(T.inverse())
    out = rough_align(model, pre, T)
    assert np.linalg.norm(out.t - T.t) < 5e-8
    assert np.abs(out.R - T.R).max() < 5e-8


def test_rough_recovers_offset(wall):
    sc, pre, model = wall
    T = sc.truth
    init = Pose3.from_xyz_yaw(T.t[0] + 0.3, T.t[1] - 0.3, 0.0, T.yaw() + np.deg2rad(10), "wall", "world")
    out = rough_align(model, pre, init)
    assert np.linalg.norm(out.t - T.t) < 0.01
    assert np.degrees(abs(wrap_angle(out.yaw() - T.yaw()))) < 0.5
    assert out.from_frame == "wall" and out.to_frame == "world"


@pytest.mark.parametrize("sign", [-1, 1])
def test_rough_marker_direction(wall, sign):
    sc, pre, model = wall
    T = sc.truth
    init = Pose3.from_xyz_yaw(*T.t, T.yaw() + sign * np.deg2rad(15))
    out = rough_align(model, pre, init, marker_dir=T.R[:2, 0])
    ang = np.degrees(np.arccos(np.clip(out.R[:, 0] @ T.R[:, 0], -1, 1)))
    assert ang < 2.0


def test_rough_history_descends(wall):
    sc, pre, model = wall
    T = sc.truth
    hist = []
    rough_align(model, pre, Pose3.from_xyz_yaw(T.t[0] + 0.1, T.t[1], 0, T.yaw() + 0.05), history=hist)
    assert hist and all(new < old for old, new in hist)


def test_rough_diverges_without_overlap(wall):
    sc, pre, model = wall
    with pytest.raises(Diverged):
        rough_align(model, pre, Pose3.from_xyz_yaw(*(sc.truth.t + [30.0, 0, 0]), 0.0))


def test_rough_requires_scan_normals(wall):
    _, pre, model = wall
    with pytest.raises(ValueError):
        rough_align(model, PointCloud(pre.points), Pose3.identity())


# multi-brick refinement ----------------------------------------------------------


def test_correspondence_params_validation():
    with pytest.raises(ValueError):
        CorrespondenceParams(max_dist=0.0)
    with pytest.raises(ValueError):
        CorrespondenceParams(min_normal_dot=1.5)


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(pose_change_tol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(max_iterations=0)


def test_problem_rejects_bad_contacts():
    rng = np.random.default_rng(0)
    p = _random_problem(rng, 2, pairs_p=0.0)
    with pytest.raises(ValueError):
        MultiBrickProblem(p.bricks, p.scan, [(0, 1), (1, 0)])
    with pytest.raises(ValueError):
        MultiBrickProblem(p.bricks, p.scan, [(1, 1)])
    with pytest.raises(ValueError):
        MultiBrickProblem([BrickModel(0, PointCloud.empty(with_normals=True), Pose3.identity())], p.scan)


def test_zero_perturbation_exact_model():
    sc = registration_scenario(2, sigma=0.0)
    truth_scans = [raycast_scan(Scene(sc.nominal), SensorModel(v, np.pi / 2, np.pi / 2, (400, 400), 0.0, 0.0))
                   for v in sc.viewpoints]
    pre = PointCloud.concatenate([preprocess_scan(s, sc.center, 5.0, viewpoint=v.t)
                                  for s, v in zip(truth_scans, sc.viewpoints)])
    bricks = [BrickModel(b.id, pre.select(pre.labels == b.id), b.pose) for b in sc.nominal
              if np.any(pre.labels == b.id)]
    res = solve_multi_brick(MultiBrickProblem(bricks, pre))
    assert np.abs(res.yaw).max() < 1e-4
    assert np.linalg.norm(res.translation, axis=1).max() < 1e-4


def test_zero_perturbation_rendered_model():
    sc = registration_scenario(2, sigma=0.0)
    truth_scans = [raycast_scan(Scene(sc.nominal), SensorModel(v, np.pi / 2, np.pi / 2, (400, 400), 0.0, 0.0))
                   for v in sc.viewpoints]
    prob = build_multi_problem(sc.nominal, truth_scans, sc.viewpoints, sc.center, 5.0)
    res = solve_multi_brick(prob)
    # model and scan rays differ, so only sampling-level drift is allowed
    assert np.abs(res.yaw).max() < np.deg2rad(0.1)
    assert np.linalg.norm(res.translation, axis=1).max() < 2e-3


def test_perturbed_recovery(reg_scene):
    sc, prob = reg_scene
    res = solve_multi_brick(prob)
    truth = {b.id: b.pose for b in sc.truth}
    ok = 0
    for bid, pose, c in zip(res.ids, res.poses, res.confidence):
        if c < 0.5:
            continue
        et = np.linalg.norm(pose.t - truth[bid].t)
        ey = np.degrees(abs(wrap_angle(pose.yaw() - truth[bid].yaw())))
        ok += et < 0.02 and ey < 1.0
    assert ok >= 0.95 * np.sum(res.confidence >= 0.5)


def test_confidence_invariants(reg_scene):
    _, prob = reg_scene
    res = solve_multi_brick(prob)
    assert np.all((res.confidence >= 0) & (res.confidence <= 1))
    assert np.array_equal(res.confidence == 0, res.correspondences == 0)
    sizes = np.array([len(b.cloud) for b in prob.bricks])
    np.testing.assert_allclose(res.confidence, np.minimum(1, res.correspondences / sizes))


def test_cost_monotone(reg_scene):
    _, prob = reg_scene
    res = solve_multi_brick(prob)
    assert res.step_costs
    assert all(new < old for old, new in res.step_costs)
    assert res.iterations <= 20


def test_unseen_brick_flagged():
    rng = np.random.default_rng(3)
    p = _random_problem(rng, 3, pairs_p=1.0)
    far = BrickModel(9, PointCloud(p.bricks[0].cloud.points + 100, p.bricks[0].cloud.normals),
                     Pose3.from_xyz_yaw(100, 100, 100, 0))
    prob = MultiBrickProblem(p.bricks + [far], p.scan, [(0, 3)], up=p.up)
    res = solve_multi_brick(prob)
    assert res.flagged == [9]
    assert res.confidence[3] == 0 and res.correspondences[3] == 0
    assert np.all(res.confidence[:3] > 0)


def _two_touching(shift=(0.03, 0.02), yaw=np.deg2rad(3.0)):
    nominal = assemble_scene([PileEntry("blue", 0.0, 0.0), PileEntry("green", 0.9, 0.0)])
    moved_a = nominal.bricks[0].moved(Pose3.from_xyz_yaw(shift[0], shift[1], 0.1, yaw, "brick", "pile"))
    views = [look_at([3.0, -3.0, 2.5], [0.3, 0, 0]), look_at([-3.0, -2.5, 2.5], [0.3, 0, 0])]
    sensors = [SensorModel(v, np.pi / 2, np.pi / 2, (300, 300), 0.0, 0.0) for v in views]
    scans = [raycast_scan(Scene([moved_a]), s, rng_seed=k) for k, s in enumerate(sensors)]
    return nominal, moved_a, views, scans


def test_contact_pairs():
    nominal, _, _, _ = _two_touching()
    assert contact_pairs(nominal.bricks) == [(0, 1)]
    apart = assemble_scene([PileEntry("blue", 0.0, 0.0), PileEntry("green", 0.95, 0.0)])
    assert contact_pairs(apart.bricks) == []


def test_touching_pair_moves_together():
    nominal, _, views, scans = _two_touching()
    prob = build_multi_problem(nominal.bricks, scans, views, Pose3.identity(), 3.0)
    assert prob.contacts == [(0, 1)]
    res = solve_multi_brick(prob, SolverConfig(max_iterations=20))
    rel0 = nominal.bricks[0].pose.inverse() @ nominal.bricks[1].pose
    rel1 = res.poses[0].inverse() @ res.poses[1]
    assert abs(np.degrees(wrap_angle(rel1.yaw() - rel0.yaw()))) < 1.0
    assert np.linalg.norm(rel1.t - rel0.t) < 0.01
    # the observed brick itself did move toward its scan
    assert np.linalg.norm(res.translation[0]) > 0.01


def test_touching_pair_without_rigidity_drifts():
    nominal, _, views, scans = _two_touching()
    prob = build_multi_problem(nominal.bricks, scans, views, Pose3.identity(), 3.0, lambda_r=0.0, lambda_t=0.0)
    res = solve_multi_brick(prob)
    rel0 = nominal.bricks[0].pose.inverse() @ nominal.bricks[1].pose
    rel1 = res.poses[0].inverse() @ res.poses[1]
    assert np.linalg.norm(rel1.t - rel0.t) > 0.01


@pytest.mark.parametrize("seed", range(25))
def test_jacobian_random(seed):
    rng = np.random.default_rng(seed)
    p = _random_problem(rng, int(rng.integers(1, 5)))
    assert jacobian_check(p, rng.normal(size=p.n_params) * 0.05) < 1e-5


@pytest.mark.parametrize("seed", range(5))
def test_jacobian_pairwise_only(seed):
    rng = np.random.default_rng(100 + seed)
    p = _random_problem(rng, 4, with_scan=False, pairs_p=1.0)
    assert jacobian_check(p, rng.normal(size=p.n_params) * 0.2) < 1e-5


def test_pairwise_residual_zero_at_identity():
    rng = np.random.default_rng(7)
    p = _random_problem(rng, 3, with_scan=False, pairs_p=1.0)
    r = _Evaluator(p).residuals(np.zeros(p.n_params), (np.zeros(0, int), np.zeros(0, int)))
    assert len(r) == 12 * 3
    assert np.all(r == 0.0)


def test_pairwise_positive_when_relative_pose_changes():
    rng = np.random.default_rng(8)
    p = _random_problem(rng, 2, with_scan=False, pairs_p=1.0)
    ev = _Evaluator(p)
    empty = (np.zeros(0, int), np.zeros(0, int))
    x = np.zeros(8)
    x[4] = 0.1
    assert np.sum(ev.residuals(x, empty) ** 2) > 0
    # a common motion of both bricks about a shared center keeps it zero
    x = np.zeros(8)
    x[1:4] = x[5:8] = [0.3, -0.2, 0.1]
    assert np.sum(ev.residuals(x, empty) ** 2) < 1e-24


def test_rigid_invariance(reg_scene):
    _, prob = reg_scene
    base = solve_multi_brick(prob)
    rng = np.random.default_rng(5)
    for _ in range(2):
        G = Pose3.from_rt(rotvec_to_matrix(rng.normal(size=3)), rng.normal(size=3) * 10)
        res = solve_multi_brick(prob.transformed(G))
        assert abs(res.objective - base.objective) < 1e-6
        for a, b in zip(base.poses, res.poses):
            np.testing.assert_allclose((G.with_frames(a.to_frame, a.to_frame) @ a).matrix(), b.matrix(), atol=1e-8)


def test_objective_matches_result(reg_scene):
    _, prob = reg_scene
    res = solve_multi_brick(prob, SolverConfig(max_iterations=3))
    x = np.column_stack([res.yaw, res.translation]).ravel()
    assert objective(prob, x) == pytest.approx(res.objective, rel=1e-12)


def test_problem_and_result_json_roundtrip(tmp_path):
    rng = np.random.default_rng(11)
    p = _random_problem(rng, 3)
    again = MultiBrickProblem.from_dict(json.loads(json.dumps(p.to_dict())))
    x = rng.normal(size=p.n_params) * 0.01
    assert objective(again, x) == pytest.approx(objective(p, x), rel=1e-12)
    res = solve_multi_brick(p)
    d = json.loads(json.dumps(res.to_dict()))
    assert [b["id"] for b in d["bricks"]] == res.ids
    assert d["objective"] == res.objective
    assert isinstance(res, AlignmentResult)


def test_damped_step_solves_system():
    rng = np.random.default_rng(0)
    J = rng.normal(size=(20, 4))
    A, g = J.T @ J, rng.normal(size=4)
    d = damped_step(A, g, 0.0)
    np.testing.assert_allclose(A @ d, -g, atol=1e-10)
    d_big = damped_step(A, g, 1e6)
    assert np.linalg.norm(d_big) < 1e-5 * np.linalg.norm(d) + 1e-9
