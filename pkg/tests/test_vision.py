import cv2
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brickwall.errors import DegenerateQuad
from brickwall.geom import Pose3, rotvec_to_matrix
from brickwall.scenarios import vision_frame, vision_sequence
from brickwall.synth import CameraIntrinsics, patch_corners, project_points
from brickwall.vision import (
    Detection,
    MHTParams,
    PatchDetection,
    SegmentationParams,
    TrackSet,
    box_sums,
    classify_hue,
    detect_patches,
    extract_quads,
    mht_update,
    planar_pnp,
    read_jsonl,
    segment_hsv,
    segment_patches,
    to_hsv,
    to_world,
    write_jsonl,
)
from brickwall.vision.quads import reduce_polygon, simplify_contour
from brickwall.world import brick_spec

RED = (200, 20, 20)
GRAY = (110, 110, 110)
WHITE = (255, 255, 255)


def _canvas(color, shape=(720, 1280)):
    img = np.empty(shape + (3,), np.uint8)
    img[:] = color
    return img


def _white_rect(bg, x0=500, y0=300, w=300, h=80):
    img = _canvas(bg)
    img[y0:y0 + h, x0:x0 + w] = WHITE
    return img


def _down_pose(height=2.0, yaw=0.0, xy=(0.0, 0.0)):
    R = rotvec_to_matrix([0, 0, yaw]) @ np.diag([1.0, -1.0, -1.0])
    return Pose3.from_rt(R, [xy[0], xy[1], height], "camera", "world")


def _project_patch(length, width, cam_pose, cam=CameraIntrinsics(), patch_pose=None):
    obj = np.array([[-length / 2, -width / 2, 0], [length / 2, -width / 2, 0],
                    [length / 2, width / 2, 0], [-length / 2, width / 2, 0]])
    if patch_pose is not None:
        obj = patch_pose.apply(obj)
    uv = project_points(cam, cam_pose, obj)
    # counter-clockwise in (u, v)
    area = 0.5 * (uv[:, 0] @ np.roll(uv[:, 1], -1) - uv[:, 1] @ np.roll(uv[:, 0], -1))
    return uv if area > 0 else uv[::-1]


# ---------------------------------------------------------------- segmentation


def test_params_validation():
    with pytest.raises(ValueError):
        SegmentationParams(box_kernel=0)
    with pytest.raises(ValueError):
        SegmentationParams(lambda_s=-1)
    with pytest.raises(ValueError):
        SegmentationParams(corner_probe_dist=0)
    assert 2 * SegmentationParams().half_window + 1 == 291


def test_hsv_ranges():
    hue, sat, val = to_hsv(np.array([[RED, GRAY, WHITE, (20, 40, 200)]], np.uint8))
    assert classify_hue(hue[0, 0]) == "red"
    assert classify_hue(hue[0, 3]) == "blue"
    assert sat[0, 1] == 0 and sat[0, 2] == 0
    assert val[0, 2] == 255


@pytest.mark.parametrize("hue,name", [(0, "red"), (350, "red"), (30, "orange"), (120, "green"), (240, "blue"),
                                      (60, None), (180, None), (300, None), (15, "orange"), (345, "red")])
def test_classify_hue(hue, name):
    assert classify_hue(hue) == name


def test_box_sums_match_brute_force():
    rng = np.random.default_rng(0)
    a = rng.integers(0, 256, (17, 23))
    s, n = box_sums(a, 3)
    for r, c in [(0, 0), (5, 7), (16, 22), (8, 0)]:
        win = a[max(r - 3, 0):r + 4, max(c - 3, 0):c + 4]
        assert s[r, c] == win.sum() and n[r, c] == win.size


def test_white_patch_on_red():
    mask = segment_patches(_white_rect(RED))
    assert mask.shape == (360, 640)
    assert mask[170, 325] == 1
    assert mask[10, 10] == 0 and mask.sum() == 150 * 40


def test_uniform_gray_is_empty():
    assert segment_patches(_canvas(GRAY)).sum() == 0


def test_exclusion_mask_removes_patch():
    img = _white_rect(RED)
    ex = np.zeros(img.shape[:2], bool)
    ex[280:400, 480:820] = True
    assert segment_patches(img, exclusion_mask=ex).sum() == 0
    half = np.zeros((360, 640), bool)
    half[140:200, 240:410] = True
    assert segment_patches(img, exclusion_mask=half).sum() == 0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 40))
def test_value_shift_invariance(seed, shift):
    rng = np.random.default_rng(seed)
    sat = rng.integers(0, 256, (40, 60))
    val = rng.integers(0, 256 - shift, (40, 60))
    p = SegmentationParams(box_kernel=15)
    np.testing.assert_array_equal(segment_hsv(sat, val, p), segment_hsv(sat, val + shift, p))


# ---------------------------------------------------------------- quads


def test_rectangle_on_red_detected():
    img = _white_rect(RED)
    dets = extract_quads(segment_patches(img), img)
    assert len(dets) == 1
    d = dets[0]
    assert d.type == "red" and d.probes == ["red"] * 4
    expected = np.array([[500, 380], [800, 380], [800, 300], [500, 300]], float)
    for c in expected:
        assert np.min(np.linalg.norm(d.quad - c, axis=1)) < 1.5


def test_quad_is_convex_ccw():
    img = _white_rect(RED)
    q = extract_quads(segment_patches(img), img)[0].quad
    assert cv2.isContourConvex(q.astype(np.float32).reshape(-1, 1, 2))
    area = 0.5 * (q[:, 0] @ np.roll(q[:, 1], -1) - q[:, 1] @ np.roll(q[:, 0], -1))
    assert area > 0


def test_triangle_rejected():
    img = _canvas(RED)
    cv2.fillPoly(img, [np.array([[500, 400], [800, 400], [650, 250]], np.int32)], WHITE)
    mask = segment_patches(img)
    assert mask.sum() > 0
    assert extract_quads(mask, img) == []


def test_patch_on_gray_rejected():
    img = _canvas(GRAY)
    img[200:520, 300:1000] = RED
    img[320:400, 500:800] = WHITE
    mask = segment_patches(img)
    assert mask.sum() > 0
    assert len(extract_quads(mask, img)) == 1
    # same patch with gray immediately around it: outside probes are unsaturated
    img[300:420, 480:820] = GRAY
    img[320:400, 500:800] = WHITE
    assert extract_quads(segment_patches(img), img) == []


def test_mixed_probe_colors_rejected():
    img = _canvas(RED)
    img[:, 650:] = (20, 40, 200)
    img[300:380, 500:800] = WHITE
    assert extract_quads(segment_patches(img), img) == []


def test_simplify_stops_at_eight_vertices():
    t = np.linspace(0, 2 * np.pi, 400, endpoint=False)
    circle = np.column_stack([100 + 50 * np.cos(t), 100 + 50 * np.sin(t)]).astype(np.int32).reshape(-1, 1, 2)
    assert len(simplify_contour(circle)) <= 8


def test_reduce_polygon_drops_small_corners():
    poly = np.array([[0, 0], [10, 0], [10.5, 0.5], [11, 1], [11, 5], [0, 5]], float)
    out = reduce_polygon(poly)
    assert len(out) == 4
    assert [0, 0] in out.tolist() and [0, 5] in out.tolist()


@pytest.mark.parametrize("seed", range(4))
def test_rendered_frame_detections(seed):
    fr = vision_frame(seed)
    dets = detect_patches(fr.image, fr.camera)
    wd = to_world(dets, fr.cam_pose)
    for d in dets:
        assert len(set(d.probes)) == 1 and d.probes[0] == d.type
    for b in fr.visible:
        c = patch_corners(b).mean(axis=0)
        e = [np.linalg.norm(w.position - c) for w in wd]
        k = int(np.argmin(e))
        assert e[k] < 0.03
        assert wd[k].type == b.spec.type.value


# ---------------------------------------------------------------- planar pnp


def test_fronto_parallel_pnp():
    quad = _project_patch(0.5, 0.1, _down_pose(2.0))
    res = planar_pnp(quad, "green")
    assert abs(res.pose.t[2] - 2.0) < 0.01
    assert np.linalg.norm(res.pose.t[:2]) < 0.01
    assert res.rmse < 1e-6 and not res.ambiguous
    # patch normal points back at the camera
    assert res.pose.R[:, 2] @ res.pose.t < 0


@pytest.mark.parametrize("seed", range(10))
def test_pnp_green_two_meters(seed):
    rng = np.random.default_rng(seed)
    cam_pose = _down_pose(2.0, yaw=rng.uniform(-np.pi, np.pi), xy=rng.uniform(-0.4, 0.4, 2))
    yaw = rng.uniform(-np.pi, np.pi)
    patch = Pose3.from_rt(rotvec_to_matrix([0, 0, yaw]), [*rng.uniform(-0.3, 0.3, 2), 0.2], "patch", "world")
    quad = _project_patch(0.5, 0.1, cam_pose, patch_pose=patch)
    quad = quad + rng.normal(0, 0.3, quad.shape)
    res = planar_pnp(quad, "green")
    w = cam_pose @ res.pose
    assert np.linalg.norm(w.t - patch.t) < 0.03
    dyaw = (w.yaw() - yaw + np.pi / 2) % np.pi - np.pi / 2
    assert abs(np.degrees(dyaw)) < 2.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_refined_rmse_not_worse(seed):
    rng = np.random.default_rng(seed)
    t = brick_spec("blue").patch_size
    patch = Pose3.from_rt(rotvec_to_matrix(rng.normal(0, 0.2, 3)), [*rng.uniform(-0.3, 0.3, 2), 0.0], "patch", "world")
    quad = _project_patch(*t, _down_pose(2.0), patch_pose=patch) + rng.normal(0, 1.0, (4, 2))
    res = planar_pnp(quad, "blue")
    assert res.rmse <= res.rmse_initial


def test_square_patch_flagged_ambiguous():
    quad = _project_patch(0.1, 0.1, _down_pose(2.0))
    assert planar_pnp(quad, "red", patch_size=(0.1, 0.1)).ambiguous
    quad = _project_patch(0.2, 0.1, _down_pose(2.0))
    assert not planar_pnp(quad, "red").ambiguous


def test_long_side_assignment_independent_of_start_corner():
    quad = _project_patch(0.5, 0.1, _down_pose(2.0, yaw=0.3))
    a = planar_pnp(quad, "green").pose
    b = planar_pnp(np.roll(quad, 1, axis=0), "green").pose
    np.testing.assert_allclose(a.t, b.t, atol=1e-6)
    assert abs((a.yaw() - b.yaw() + np.pi / 2) % np.pi - np.pi / 2) < 1e-6


def test_degenerate_quads():
    with pytest.raises(DegenerateQuad):
        planar_pnp([[0, 0], [10, 0], [20, 0], [5, 0]], "red")
    with pytest.raises(DegenerateQuad):
        planar_pnp([[0, 0], [0.5, 0], [0.5, 0.5], [0, 0.5]], "red")
    with pytest.raises(DegenerateQuad):
        planar_pnp([[0, 0], [100, 0], [200, 0.01], [0, 50]], "red")


# ---------------------------------------------------------------- tracking


def _det(x, y, t="red", yaw=0.0):
    return Detection([x, y, 0.2], yaw, t)


def test_repeated_detection_contracts_covariance():
    tr = mht_update(TrackSet(), [_det(1, 1)], 0.1)
    traces = [np.trace(tr.hypotheses[0].cov)]
    for _ in range(5):
        tr = mht_update(tr, [_det(1, 1)], 0.1)
        assert len(tr) == 1
        traces.append(np.trace(tr.hypotheses[0].cov))
    assert all(b < a for a, b in zip(traces, traces[1:]))


def test_far_detection_spawns_hypothesis():
    tr = mht_update(TrackSet(), [_det(0, 0)], 0.1)
    tr = mht_update(tr, [_det(2, 0)], 0.1)
    assert len(tr) == 2


def test_type_mismatch_spawns_hypothesis():
    tr = mht_update(TrackSet(), [_det(0, 0, "red")], 0.1)
    tr = mht_update(tr, [_det(0.05, 0, "green")], 0.1)
    assert sorted(h.type for h in tr.hypotheses) == ["green", "red"]


def test_zero_innovation_keeps_mean():
    tr = mht_update(TrackSet(), [_det(1, 2, yaw=0.4)], 0.1)
    before = tr.hypotheses[0].state.copy()
    tr = mht_update(tr, [_det(1, 2, yaw=0.4)], 0.3)
    np.testing.assert_allclose(tr.hypotheses[0].state, before, atol=1e-15)


def test_yaw_wraps_half_turn():
    tr = mht_update(TrackSet(), [_det(0, 0, yaw=np.pi / 2 - 0.01)], 0.1)
    tr = mht_update(tr, [_det(0, 0, yaw=-np.pi / 2 + 0.01)], 0.1)
    y = tr.hypotheses[0].state[3]
    assert abs(abs(y) - np.pi / 2) < 0.02


def test_pruned_after_misses():
    p = MHTParams(max_misses=3)
    tr = mht_update(TrackSet(), [_det(0, 0)], 0.1, p)
    for k in range(3):
        assert len(tr) == 1
        tr = mht_update(tr, [], 0.1, p)
    assert len(tr) == 0


def test_input_trackset_untouched():
    tr = mht_update(TrackSet(), [_det(0, 0)], 0.1)
    snap = tr.to_dict()
    mht_update(tr, [_det(0.1, 0)], 0.1)
    assert tr.to_dict() == snap


def test_mht_param_validation():
    with pytest.raises(ValueError):
        MHTParams(gate=0)
    with pytest.raises(ValueError):
        mht_update(TrackSet(), [], -1.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_no_same_type_pair_within_gate(seed):
    rng = np.random.default_rng(seed)
    tr = TrackSet()
    types = ["red", "green", "blue", "orange"]
    for _ in range(6):
        n = rng.integers(0, 8)
        dets = [Detection([*rng.uniform(-1, 1, 2), 0.2], rng.uniform(-np.pi, np.pi), types[rng.integers(4)])
                for _ in range(n)]
        tr = mht_update(tr, dets, 0.2)
        for i, a in enumerate(tr.hypotheses):
            assert np.all(np.linalg.eigvalsh(a.cov) > 0)
            for b in tr.hypotheses[i + 1:]:
                if a.type == b.type:
                    assert np.linalg.norm(a.position - b.position) >= 0.5


@pytest.mark.parametrize("seed", range(3))
def test_one_hypothesis_per_brick(seed):
    frames = vision_sequence(seed, 5)
    bricks = frames[0].scene.world_bricks()
    centers = np.array([patch_corners(b).mean(axis=0) for b in bricks])
    tr = TrackSet()
    seen = set()
    for fr in frames:
        wd = to_world(detect_patches(fr.image, fr.camera), fr.cam_pose)
        seen |= {int(np.argmin(np.linalg.norm(centers - d.position, axis=1))) for d in wd}
        tr = mht_update(tr, wd, 0.2)
    owners = []
    for h in tr.hypotheses:
        dist = np.linalg.norm(centers - h.position, axis=1)
        k = int(np.argmin(dist))
        assert dist[k] < 0.05 and bricks[k].spec.type.value == h.type
        owners.append(k)
    assert sorted(owners) == sorted(seen)


# ---------------------------------------------------------------- serialization


def test_jsonl_roundtrip(tmp_path):
    tr = mht_update(TrackSet(), [_det(0, 0), _det(3, 1, "blue", 0.3)], 0.1)
    img = _white_rect(RED)
    det = detect_patches(img)[0]
    path = tmp_path / "out.jsonl"
    write_jsonl(path, [tr.to_dict(), det.to_dict(), _det(1, 2).to_dict()])
    a, b, c = read_jsonl(path)
    assert TrackSet.from_dict(a).to_dict() == tr.to_dict()
    back = PatchDetection.from_dict(b)
    np.testing.assert_allclose(back.quad, det.quad)
    np.testing.assert_allclose(back.pose.matrix(), det.pose.matrix())
    assert Detection.from_dict(c).to_dict() == _det(1, 2).to_dict()
