import numpy as np
import pytest

from brickwall.errors import NotFound
from brickwall.geom import PointCloud, Pose3
from brickwall.pile import Geofence, detect_pile, footprint_moments
from brickwall.scenarios import pile_scenario
from brickwall.synth import raycast_scan
from brickwall.world import Scene, assemble_scene, default_pile_layout


def _errors(det, truth):
    e = np.linalg.norm(det.pose.t[:2] - truth.t[:2])
    a = abs((det.pose.yaw() - truth.yaw() + np.pi / 2) % np.pi - np.pi / 2)
    return e, np.degrees(a)


@pytest.mark.parametrize("seed", range(5))
def test_noiseless_pile(seed):
    sc = pile_scenario(seed, sigma=0.0, perturb=False, dropout=0.0)
    det = detect_pile(raycast_scan(sc.scene, sc.sensor, seed), sc.fence, sc.robot_pose)
    e, a = _errors(det, sc.truth)
    assert e < 0.02 and a < 1.0
    np.testing.assert_allclose(det.pose.R[:, 2], [0, 0, 1], atol=1e-12)
    assert abs(det.pose.t[2]) < 0.01


def test_axis_points_away_from_robot():
    sc = pile_scenario(3, perturb=False)
    det = detect_pile(raycast_scan(sc.scene, sc.sensor, 3), sc.fence, sc.robot_pose)
    assert det.pose.R[:2, 0] @ (det.pose.t[:2] - sc.robot_pose.t[:2]) >= 0


def test_pile_outside_fence():
    sc = pile_scenario(1, perturb=False)
    c = sc.truth.t[:2]
    far = Geofence(c[0] + 10, c[1] + 10, c[0] + 14, c[1] + 14)
    with pytest.raises(NotFound) as e:
        detect_pile(raycast_scan(sc.scene, sc.sensor, 1), far, sc.robot_pose)
    assert "in_fence" in e.value.diagnostics


def test_two_piles_size_window():
    """A single brick nearby is a cluster of the wrong size; the real pile wins."""
    sc = pile_scenario(4, perturb=False)
    layout = default_pile_layout()
    stray = assemble_scene(layout[1:2], Pose3.from_xyz_yaw(0, 0, 0, 0)).bricks[0]
    offset = sc.truth.R[:, 1] * 1.8
    stray_pose = Pose3.from_xyz_yaw(*(sc.truth.t + offset)[:2], 0.1, 0.3)
    bricks = sc.scene.world_bricks() + [stray.moved(stray_pose)]
    bricks[-1].id = 99
    scene = Scene(bricks)
    scan = raycast_scan(scene, sc.sensor, 4)
    det = detect_pile(scan, sc.fence, sc.robot_pose)
    e, a = _errors(det, sc.truth)
    assert e < 0.1 and a < 5
    assert det.diagnostics["clusters"] >= 2
    # only the stray brick in view: rejected by the size window
    alone = Scene([bricks[-1]])
    with pytest.raises(NotFound) as err:
        detect_pile(raycast_scan(alone, sc.sensor, 4), sc.fence, sc.robot_pose)
    assert err.value.diagnostics["in_size_window"] == 0


def test_joint_world_transform_invariance():
    sc = pile_scenario(6, perturb=False, sigma=0.0, dropout=0.0)
    scan = raycast_scan(sc.scene, sc.sensor, 6)
    det = detect_pile(scan, sc.fence, sc.robot_pose)
    G = Pose3.from_xyz_yaw(2.0, -3.0, 0.0, 1.1)
    scan2 = PointCloud(G.apply(scan.points))
    # rotate the fence corners; use the bounding rectangle (still contains the pile)
    fc = np.column_stack([sc.fence.corners(), np.zeros(4)])
    g = G.apply(fc)[:, :2]
    fence2 = Geofence(*g.min(0), *g.max(0))
    det2 = detect_pile(scan2, fence2, G @ sc.robot_pose)
    expect = G @ det.pose
    assert np.linalg.norm(det2.pose.t - expect.t) < 0.02
    assert abs((det2.pose.yaw() - expect.yaw() + np.pi) % (2 * np.pi) - np.pi) < np.radians(1)


def test_shrinking_fence_monotone():
    sc = pile_scenario(2, perturb=False)
    scan = raycast_scan(sc.scene, sc.sensor, 2)
    counts = []
    for half in (6.0, 3.0, 1.5, 0.5):
        c = sc.truth.t[:2]
        f = Geofence(c[0] - half, c[1] - half, c[0] + half, c[1] + half)
        counts.append(int(f.contains(scan.points[:, :2]).sum()))
    assert counts == sorted(counts, reverse=True)


def test_geofence_validation():
    with pytest.raises(ValueError):
        Geofence(0, 0, 0, 1)


def test_footprint_moments_exact_rectangles():
    g = np.arange(0, 1.0001, 0.01)
    a = np.array([(x, y) for x in g for y in g[:21]])  # 1.0 x 0.2 at origin
    b = a + [0, 0.5]
    area, mean, cov, rects = footprint_moments(np.vstack([a, b]), 0.05)
    assert area == pytest.approx(0.4, rel=1e-9)
    np.testing.assert_allclose(mean, [0.5, 0.35], atol=1e-9)
    # var_x of a 1 m segment = 1/12; var_y = within 0.2**2/12 + between 0.25**2
    np.testing.assert_allclose(cov, [[1 / 12, 0], [0, 0.04 / 12 + 0.0625]], atol=1e-9)
