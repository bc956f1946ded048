"""Command-line harness: scene synthesis, single-stage runs and batch studies.

Exit codes: 0 on success, 2 when a detector cleanly finds nothing
(``NotFound`` and ``Invalid``), 1 for malformed input and every other error.
Every subcommand takes ``--seed``, ``--config`` (a JSON file of overrides) and
``--out`` (output directory).  Scalar config keys override argument defaults,
while dict-valued keys feed parameter objects (``pile``, ``marker``,
``planner``, ``solver``, ``segmentation``, ``mht``, ``wall``, ``cone``,
``scenario``, ``descent``, ``rough``).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, is_dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from .errors import BrickwallError, Diverged, EmptyAfterPreprocess, Infeasible, NotFound
from .geom import Line2, PointCloud, Pose3
from .geom.io import read_ply, write_ply

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_FOUND = 2

STAGES = ("synth", "pile", "marker", "align", "bricks", "vision", "wall", "cone")
SCENE_KINDS = ("pile", "registration", "vision", "uav-wall", "marker")


class UsageError(Exception):
    """Malformed command line or config."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which would read as "not found"
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- I/O helpers


def _jsonable(o):
    if hasattr(o, "to_dict"):
        return o.to_dict()
    if isinstance(o, Line2):
        return line_to_dict(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if is_dataclass(o):
        return asdict(o)
    return repr(o)


def to_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable)


def write_json(path, obj) -> None:
    Path(path).write_text(to_json(obj) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def line_to_dict(ln: Line2) -> dict:
    return {"direction": ln.direction.tolist(), "point": ln.point.tolist(), "extent": list(ln.extent),
            "length": ln.length, "inlier_count": int(ln.inlier_count)}


def _section(cfg: dict, key: str) -> dict:
    sec = cfg.get(key, {})
    if not isinstance(sec, dict):
        raise UsageError(f"config section {key!r} must be an object")
    return sec


def _pose_error(est: Pose3, truth: Pose3) -> dict:
    """Translation and yaw error of ``est`` expressed in the ``truth`` frame."""
    d = truth.with_frames(None, None).inverse() @ est.with_frames(None, None)
    return {"x": float(d.t[0]), "y": float(d.t[1]), "z": float(d.t[2]), "yaw_deg": float(np.degrees(d.yaw()))}


# ---------------------------------------------------------------- synth-scene


def synth_scene(kind: str, seed: int, out: Path, cfg: dict, distractor: bool = False,
                single_segment: bool = False) -> dict:
    """Write a seeded scene and its simulated sensor data to ``out``."""
    from .scenarios import pile_scenario, registration_scenario, vision_frame, w_wall_scenario
    from .synth import raycast_boxes, raycast_scan, write_ppm
    from .world import Scene

    kw = _section(cfg, "scenario")
    files = []
    if kind == "pile":
        sc = pile_scenario(seed, **kw)
        write_ply(out / "scan.ply", raycast_scan(sc.scene, sc.sensor, seed))
        write_json(out / "scene.json", sc.scene.to_dict())
        f = sc.fence
        write_json(out / "meta.json", {"kind": kind, "seed": seed, "fence": [f.x_min, f.y_min, f.x_max, f.y_max],
                                       "robot_pose": sc.robot_pose, "sensor_pose": sc.sensor.pose, "truth": sc.truth})
        files = ["scan.ply", "scene.json", "meta.json"]
    elif kind == "registration":
        sc = registration_scenario(seed, **kw)
        write_json(out / "nominal.json", Scene(sc.nominal).to_dict())
        write_json(out / "truth.json", Scene(sc.truth).to_dict())
        for k, s in enumerate(sc.scans):
            write_ply(out / f"scan_{k}.ply", s)
            files.append(f"scan_{k}.ply")
        write_json(out / "meta.json", {"kind": kind, "seed": seed, "viewpoints": sc.viewpoints, "center": sc.center})
        files += ["nominal.json", "truth.json", "meta.json"]
    elif kind == "vision":
        fr = vision_frame(seed, **kw)
        write_ppm(out / "frame.ppm", fr.image)
        write_json(out / "camera.json", {"intrinsics": fr.camera, "pose": fr.cam_pose})
        write_json(out / "scene.json", fr.scene.to_dict())
        write_json(out / "meta.json", {"kind": kind, "seed": seed, "visible": [b.id for b in fr.visible]})
        files = ["frame.ppm", "camera.json", "scene.json", "meta.json"]
    elif kind == "uav-wall":
        sc = w_wall_scenario(seed, distractor=distractor, single_segment=single_segment, **kw)
        for k, s in enumerate(sc.side_sensors):
            write_ply(out / f"side_{k}.ply", raycast_boxes(sc.boxes, s, seed + k))
            files.append(f"side_{k}.ply")
        write_ply(out / "down.ply", raycast_boxes(sc.boxes, sc.down_sensor, seed + len(sc.side_sensors)))
        write_json(out / "meta.json", {"kind": kind, "seed": seed, "truth": sc.truth, "search_pose": sc.search_pose,
                                       "uav_position": sc.uav_position})
        files += ["down.ply", "meta.json"]
    elif kind == "marker":
        corner, direction, pts = _marker_points(seed, distractor)
        from .marker import ProjectionBuffer

        ProjectionBuffer().accumulate(pts, 0.0).to_csv(out / "points.csv")
        write_json(out / "meta.json", {"kind": kind, "seed": seed, "distractor": distractor,
                                       "corner": corner, "direction": direction})
        files = ["points.csv", "meta.json"]
    else:
        raise UsageError(f"unknown scene kind {kind!r}")
    return {"kind": kind, "files": files}


def _marker_points(seed: int, square: bool = False):
    """Seeded L footprint at a random pose, or a 1.5 m square distractor."""
    from .synth import sample_l_marker

    rng = np.random.default_rng([seed, 31])
    corner = rng.uniform(-5, 5, 2)
    a = rng.uniform(-np.pi, np.pi)
    direction = np.array([np.cos(a), np.sin(a)])
    if square:
        normal = np.array([-direction[1], direction[0]])
        g = np.arange(0.015, 1.5, 0.03)
        u, v = np.meshgrid(g, g)
        pts = corner + u.reshape(-1, 1) * direction + v.reshape(-1, 1) * normal
    else:
        pts = sample_l_marker(corner, direction, rng_seed=int(rng.integers(2**31)), jitter=0.005)
    return corner, direction, pts


# ---------------------------------------------------------------- perception stages


def _pile_inputs(args, cfg):
    """Scan, fence, robot pose, viewpoint and (if known) truth from files or a seeded scene."""
    from .pile import Geofence

    if args.scan:
        if not args.meta:
            raise UsageError("--scan needs --meta with fence, robot_pose and sensor_pose")
        meta = read_json(args.meta)
        scan = read_ply(args.scan)
        fence = Geofence(*meta["fence"])
        robot = Pose3.from_dict(meta["robot_pose"])
        vp = Pose3.from_dict(meta["sensor_pose"]) if "sensor_pose" in meta else None
        truth = Pose3.from_dict(meta["truth"]) if "truth" in meta else None
        return scan, fence, robot, vp, truth
    from .scenarios import pile_scenario
    from .synth import raycast_scan

    sc = pile_scenario(args.seed, **_section(cfg, "scenario"))
    return raycast_scan(sc.scene, sc.sensor, args.seed), sc.fence, sc.robot_pose, sc.sensor.pose, sc.truth


def run_detect_pile(args, cfg, out: Path) -> dict:
    from .pile import PileParams, detect_pile

    scan, fence, robot, _, truth = _pile_inputs(args, cfg)
    det = detect_pile(scan, fence, robot, PileParams(**_section(cfg, "pile")))
    res = det.to_dict()
    if truth is not None:
        res["error"] = _pose_error(det.pose, truth)
    write_json(out / "pile.json", res)
    return res


def run_detect_marker(args, cfg, out: Path) -> dict:
    from .marker import MarkerModel, ProjectionBuffer, detect_l_marker

    truth = None
    if args.points:
        source = ProjectionBuffer.from_csv(args.points, window=args.window)
    else:
        corner, direction, pts = _marker_points(args.seed, args.distractor)
        source = pts
        truth = (corner, direction)
    model = MarkerModel(**_section(cfg, "marker"))
    det = detect_l_marker(source, model, args.t)
    res = det.to_dict()
    res["pose"] = det.pose()
    if truth is not None:
        ang = np.arccos(np.clip(det.direction @ truth[1], -1.0, 1.0))
        res["error"] = {"corner": float(np.linalg.norm(det.corner - truth[0])), "direction_deg": float(np.degrees(ang))}
    write_json(out / "marker.json", res)
    return res


def _nominal_pile(args):
    from .world import Scene, assemble_scene, default_pile_layout

    if getattr(args, "scene", None):
        return Scene.from_dict(read_json(args.scene)).bricks
    return assemble_scene(default_pile_layout()).bricks


def run_align(args, cfg, out: Path) -> dict:
    """Rough alignment of the nominal pile model, initialized from a pile detection."""
    from .pile import PileParams, detect_pile
    from .register import RoughAlignConfig, align_to_pile

    scan, fence, robot, vp, truth = _pile_inputs(args, cfg)
    if vp is None:
        raise UsageError("alignment needs the sensor pose in --meta")
    if args.detection:
        init = Pose3.from_dict(read_json(args.detection)["pose"])
    else:
        init = detect_pile(scan, fence, robot, PileParams(**_section(cfg, "pile"))).pose
    T, score = align_to_pile(scan, vp, init, _nominal_pile(args), args.crop,
                             cfg=RoughAlignConfig(**_section(cfg, "rough")))
    res = {"pose": T, "yaw": T.yaw(), "score": score}
    if truth is not None:
        res["error"] = _pose_error(T, truth)
    write_json(out / "align.json", res)
    return res


def _solve_pile(scan, vp, T, bricks, crop, cfg):
    from .register import SolverConfig, build_multi_problem, solve_multi_brick

    Tn = T.with_frames(None, None)
    moved = [b.moved(Tn @ b.pose.with_frames(None, None)) for b in bricks]
    prob = build_multi_problem(moved, [scan], [vp], T, crop)
    return solve_multi_brick(prob, SolverConfig(**_section(cfg, "solver")))


def run_bricks(args, cfg, out: Path) -> dict:
    """Joint per-brick refinement of a pile starting from a rough alignment."""
    scan, fence, robot, vp, truth = _pile_inputs(args, cfg)
    if vp is None:
        raise UsageError("refinement needs the sensor pose in --meta")
    if args.alignment:
        T = Pose3.from_dict(read_json(args.alignment)["pose"])
    else:
        T = run_align(args, cfg, out)["pose"]
    res = _solve_pile(scan, vp, T, _nominal_pile(args), args.crop, cfg)
    d = res.to_dict()
    write_json(out / "bricks.json", d)
    return d


def run_register(args, cfg, out: Path) -> dict:
    """Multi-brick refinement of a nominal layout against one or more scans."""
    from .register import SolverConfig, build_multi_problem, solve_multi_brick
    from .world import Scene

    truth = None
    if args.scans:
        if not (args.scene and args.meta):
            raise UsageError("--scans needs --scene (nominal layout) and --meta (viewpoints, center)")
        nominal = Scene.from_dict(read_json(args.scene)).bricks
        meta = read_json(args.meta)
        scans = [read_ply(p) for p in args.scans]
        views = [Pose3.from_dict(v) for v in meta["viewpoints"]]
        center = Pose3.from_dict(meta.get("center", Pose3.identity().to_dict()))
    else:
        from .scenarios import registration_scenario

        sc = registration_scenario(args.seed, **_section(cfg, "scenario"))
        nominal, scans, views, center, truth = sc.nominal, sc.scans, sc.viewpoints, sc.center, sc.truth
    prob = build_multi_problem(nominal, scans, views, center, args.crop)
    res = solve_multi_brick(prob, SolverConfig(**_section(cfg, "solver")))
    d = res.to_dict()
    if truth is not None:
        tb = {b.id: b.pose for b in truth}
        for entry, p in zip(d["bricks"], res.poses):
            entry["error"] = _pose_error(p, tb[entry["id"]])
    write_json(out / "alignment.json", d)
    return {"bricks": len(res.ids), "objective": res.objective, "iterations": res.iterations,
            "mean_confidence": float(np.mean(res.confidence)) if len(res.ids) else 0.0}


def run_vision(args, cfg, out: Path) -> dict:
    """Patch detections per frame (JSONL) and, with camera poses, MHT tracks."""
    from .synth import CameraIntrinsics, read_ppm
    from .vision import MHTParams, SegmentationParams, TrackSet, detect_patches, mht_update, to_world, write_jsonl

    if args.image:
        cams = [read_json(p) for p in (args.camera or [])]
        if len(cams) not in (0, 1, len(args.image)):
            raise UsageError("give one --camera file, or one per image")
        frames = []
        for k, path in enumerate(args.image):
            c = cams[k if len(cams) > 1 else 0] if cams else {}
            intr = CameraIntrinsics.from_dict(c["intrinsics"]) if "intrinsics" in c else CameraIntrinsics()
            pose = Pose3.from_dict(c["pose"]) if "pose" in c else None
            frames.append((read_ppm(path), intr, pose))
    else:
        from .scenarios import vision_sequence

        seq = vision_sequence(args.seed, args.frames, **_section(cfg, "scenario"))
        frames = [(f.image, f.camera, f.cam_pose) for f in seq]
    seg = SegmentationParams(**_section(cfg, "segmentation"))
    mht = MHTParams(**_section(cfg, "mht"))
    records, tracks, tracked = [], TrackSet(), False
    for k, (img, intr, pose) in enumerate(frames):
        dets = detect_patches(img, intr, seg)
        for d in dets:
            records.append({"frame": k, **d.to_dict()})
        if pose is not None:
            world = to_world(dets, pose)
            for r, w in zip(records[len(records) - len(dets):], world):
                r["world"] = w.to_dict()
            tracks = mht_update(tracks, world, args.dt, mht)
            tracked = True
    if not records:
        raise NotFound("no brick patches detected", {"frames": len(frames)})
    write_jsonl(out / "detections.jsonl", records)
    res = {"frames": len(frames), "detections": len(records)}
    if tracked:
        write_json(out / "tracks.json", tracks)
        res["tracks"] = len(tracks)
    return res


def run_wall(args, cfg, out: Path) -> dict:
    from .uavnav import WallSearchParams, detect_wall, estimate_height, project_goal

    truth = None
    if args.scans:
        if not (args.down and args.meta):
            raise UsageError("--scans needs --down and --meta (search_pose, uav_position)")
        meta = read_json(args.meta)
        clouds = [read_ply(p) for p in args.scans]
        down = read_ply(args.down)
        search = Pose3.from_dict(meta["search_pose"])
        uav = np.asarray(meta["uav_position"], float)
        truth = Pose3.from_dict(meta["truth"]) if "truth" in meta else None
    else:
        from .scenarios import w_wall_scenario
        from .synth import raycast_boxes

        sc = w_wall_scenario(args.seed, distractor=args.distractor, single_segment=args.single_segment,
                             **_section(cfg, "scenario"))
        clouds = [raycast_boxes(sc.boxes, s, args.seed + k) for k, s in enumerate(sc.side_sensors)]
        down = raycast_boxes(sc.boxes, sc.down_sensor, args.seed + len(clouds))
        search, uav, truth = sc.search_pose, sc.uav_position, sc.truth
    height = estimate_height(PointCloud(down.points - uav))
    det = detect_wall(clouds, height, search, WallSearchParams(**_section(cfg, "wall")), uav_z=float(uav[2]),
                      viewpoint=uav)
    res = {"pose": det.pose, "yaw": det.pose.yaw(), "height": height, "pair": list(det.pair),
           "segments": [line_to_dict(s) for s in det.segments]}
    if args.goal is not None:
        res["goal"] = project_goal(det.pose, args.goal, [det.segments[i] for i in det.pair])
    if truth is not None:
        lateral = float(abs((det.pose.t - truth.t)[:2] @ truth.R[:2, 1]))
        dyaw = float(np.degrees(abs((det.pose.yaw() - truth.yaw() + np.pi) % (2 * np.pi) - np.pi)))
        res["error"] = {"lateral": lateral, "yaw_deg": dyaw}
    write_json(out / "wall.json", res)
    return res


def run_cone(args, cfg, out: Path) -> dict:
    """One cone-of-descent gate decision."""
    from .uavnav import ConeParams, ConeState, cone_gate

    if args.r is None or args.h is None:
        raise UsageError("the cone stage needs --r and --h")
    allowed, state = cone_gate(ConeState(args.locked), args.r, args.h, ConeParams(**_section(cfg, "cone")))
    res = {"r": args.r, "h": args.h, "locked_before": args.locked, "allowed": allowed, "locked": state.locked}
    write_json(out / "cone.json", res)
    return res


def run_cone_sim(args, cfg, out: Path) -> dict:
    from .uavnav import ConeParams, simulate_descent, write_cone_log

    rows = simulate_descent(args.seed, params=ConeParams(**_section(cfg, "cone")), **_section(cfg, "descent"))
    write_cone_log(out / "cone.csv", rows)
    locks = sum(1 for a, b in zip([False] + [r[3] for r in rows], [r[3] for r in rows]) if b and not a)
    return {"steps": len(rows), "locks": locks, "landed": bool(rows[-1][2] == 0.0 and rows[-1][4]),
            "duration": rows[-1][0]}


# ---------------------------------------------------------------- planner


def run_plan(args, cfg, out: Path) -> dict:
    from .planner import PlannerConfig, greedy_plan, optimal_plan, place_positions
    from .world import Blueprint, random_blueprint

    bp = Blueprint.from_json(Path(args.blueprint).read_text()) if args.blueprint else random_blueprint(args.seed)
    pc = PlannerConfig(**_section(cfg, "planner"))
    opt, gr = optimal_plan(bp, pc), greedy_plan(bp, pc)
    res = {"place_positions": place_positions(bp, pc), "optimal": opt.to_dict(), "greedy": gr.to_dict()}
    if not args.blueprint:
        res["blueprint"] = bp.to_dict()
    write_json(out / "plan.json", res)
    return {"optimal": list(opt.key), "greedy": list(gr.key)}


def _bench_one(seed: int, planner: dict):
    """Optimal and greedy plans of ``random_blueprint(seed)``; None if infeasible."""
    from .planner import PlannerConfig, greedy_plan, optimal_plan
    from .world import random_blueprint

    pc = PlannerConfig(**planner)
    try:
        bp = random_blueprint(seed)
        t0 = time.perf_counter()
        opt = optimal_plan(bp, pc)
        t1 = time.perf_counter()
        gr = greedy_plan(bp, pc)
        t2 = time.perf_counter()
    except Infeasible:
        return None
    return seed, opt.key, gr.key, t1 - t0, t2 - t1


def _dominates(opt, gr) -> bool:
    return opt[0] < gr[0] or (opt[0] == gr[0] and opt[1] <= gr[1] + 1e-9)


def cmd_bench_plan(n_blueprints: int, seed: int, cfg: Optional[dict] = None, out: Path = Path("."),
                   timing: bool = True, jobs: int = 1) -> dict:
    """Optimal versus greedy plans over ``n_blueprints`` seeded random blueprints.

    Writes ``bench.csv`` with rows (seed, method, n_positions, travel,
    runtime_s) and ``summary.json`` with means and standard deviations.
    Infeasible blueprints are replaced by the next unused seed and counted.
    Without ``timing`` the runtime column is left empty, so reruns are
    byte-identical.
    """
    if n_blueprints < 1:
        raise ValueError("n_blueprints must be >= 1")
    planner = _section(cfg or {}, "planner")
    results, skipped, nxt = [], 0, seed
    pool = ProcessPoolExecutor(jobs) if jobs > 1 else None
    try:
        while len(results) < n_blueprints:
            need = n_blueprints - len(results)
            seeds = range(nxt, nxt + need)
            nxt += need
            batch = pool.map(_bench_one, seeds, [planner] * need) if pool else map(_bench_one, seeds, [planner] * need)
            for r in batch:
                if r is None:
                    skipped += 1
                else:
                    results.append(r)
    finally:
        if pool:
            pool.shutdown()
    violations = [s for s, o, g, _, _ in results if not _dominates(o, g)]
    if violations:
        raise AssertionError(f"optimal plan worse than greedy for seeds {violations}")
    with open(out / "bench.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["seed", "method", "n_positions", "travel", "runtime_s"])
        for s, o, g, to, tg in results:
            for name, key, rt in (("optimal", o, to), ("greedy", g, tg)):
                w.writerow([s, name, key[0], f"{key[1]:.9g}", f"{rt:.6f}" if timing else ""])
    arr = {m: np.array([r[k] for r in results], float) for m, k in (("optimal", 1), ("greedy", 2))}

    def stats(x):
        return {"mean": float(np.mean(x)), "std": float(np.std(x))}

    summary = {"n": len(results), "infeasible_skipped": skipped, "dominance_violations": 0}
    for m in ("optimal", "greedy"):
        summary[m] = {"n_positions": stats(arr[m][:, 0]), "travel": stats(arr[m][:, 1])}
        if timing:
            summary[m]["runtime_s"] = stats([r[3 if m == "optimal" else 4] for r in results])
    summary["reduction"] = {"n_positions": summary["greedy"]["n_positions"]["mean"]
                            - summary["optimal"]["n_positions"]["mean"],
                            "travel": summary["greedy"]["travel"]["mean"] - summary["optimal"]["travel"]["mean"]}
    write_json(out / "summary.json", summary)
    return summary


# ---------------------------------------------------------------- end to end


E2E_TYPES = ("red", "green", "blue", "orange")
# perturbed long bricks widen the footprint beyond the default 1.5x window
E2E_SIZE_WINDOW = (0.5, 2.0)


def e2e_trial(seed: int, brick_type: str, sigma: float = 0.008, dropout: float = 0.02,
              perturb_xy: float = 0.05, perturb_yaw: float = 10.0, crop: float = 2.0,
              pile_params=None) -> dict:
    """One simulated pick: perceive the pile, pick the best brick of ``brick_type``.

    The brick is placed with the estimated pose, so the placement error is
    the estimate's error in the true brick frame.
    """
    from .pile import PileParams, detect_pile
    from .register import register_pile
    from .scenarios import pile_scenario
    from .synth import raycast_scan
    from .world import assemble_scene, default_pile_layout

    sc = pile_scenario(seed, sigma=sigma, dropout=dropout, max_xy=perturb_xy, max_yaw=np.deg2rad(perturb_yaw))
    scan = raycast_scan(sc.scene, sc.sensor, seed)
    det = detect_pile(scan, sc.fence, sc.robot_pose, pile_params or PileParams(size_window=E2E_SIZE_WINDOW))
    _, res = register_pile(scan, sc.sensor.pose, det.pose, assemble_scene(default_pile_layout()).bricks, crop)
    truth = {b.id: b for b in sc.scene.world_bricks()}
    cands = [(c, i, p) for i, p, c in zip(res.ids, res.poses, res.confidence) if truth[i].spec.type.value == brick_type]
    if not cands:
        raise NotFound(f"no {brick_type} brick recovered")
    c, i, p = max(cands, key=lambda e: e[0])
    err = _pose_error(p, truth[i].pose)
    return {"brick": int(i), "confidence": float(c), "x": abs(err["x"]), "y": abs(err["y"]),
            "yaw_deg": abs(err["yaw_deg"])}


def cmd_e2e_sim(n_trials: int, perturb_xy: float = 0.05, perturb_yaw: float = 10.0, seed: int = 0,
                sigma: float = 0.008, dropout: Optional[float] = None, out: Optional[Path] = None,
                cfg: Optional[dict] = None) -> dict:
    """Pick-place precision study: ``n_trials`` per brick type, errors per type.

    ``perturb_yaw`` is in degrees.  Trials whose perception fails are
    counted as failed.  Returns per-type mean and standard deviation of the
    x and y error (m) and the yaw error (degrees).
    """
    if not 0 <= perturb_xy <= 0.05 or not 0 <= perturb_yaw <= 10.0:
        raise ValueError("perturbations must lie within 0.05 m and 10 degrees")
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    from .pile import PileParams

    dropout = (0.02 if sigma > 0 else 0.0) if dropout is None else dropout
    pile_params = PileParams(**{"size_window": E2E_SIZE_WINDOW, **_section(cfg or {}, "pile")})
    rows, table = [], {}
    for ti, bt in enumerate(E2E_TYPES):
        errs, failed = [], 0
        for k in range(n_trials):
            s = seed + ti * n_trials + k
            try:
                r = e2e_trial(s, bt, sigma, dropout, perturb_xy, perturb_yaw, pile_params=pile_params)
            except (NotFound, Diverged, EmptyAfterPreprocess) as e:
                failed += 1
                rows.append({"type": bt, "seed": s, "ok": False, "reason": str(e)})
                continue
            errs.append((r["x"], r["y"], r["yaw_deg"]))
            rows.append({"type": bt, "seed": s, "ok": True, **r})
        e = np.array(errs).reshape(-1, 3)
        entry = {"n": len(errs), "failed": failed}
        for j, name in enumerate(("x", "y", "yaw_deg")):
            entry[name] = {"mean": float(e[:, j].mean()) if len(e) else None,
                           "std": float(e[:, j].std()) if len(e) else None}
        table[bt] = entry
    if out is not None:
        write_json(out / "e2e.json", {"table": table, "trials": rows})
        with open(out / "e2e.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["type", "x_mean_cm", "x_std_cm", "y_mean_cm", "y_std_cm", "yaw_mean_deg", "yaw_std_deg",
                        "n", "failed"])
            for bt, en in table.items():
                vals = []
                for name, scale in (("x", 100), ("y", 100), ("yaw_deg", 1)):
                    for st in ("mean", "std"):
                        v = en[name][st]
                        vals.append("" if v is None else f"{v * scale:.3f}")
                w.writerow([bt, *vals, en["n"], en["failed"]])
    return table


# ---------------------------------------------------------------- stage dispatch


def cmd_stage(name: str, args, cfg: dict, out: Path) -> dict:
    """Run exactly one pipeline stage with file inputs (or a seeded scene)."""
    handlers = {
        "synth": lambda: synth_scene(args.kind, args.seed, out, cfg, args.distractor, args.single_segment),
        "pile": lambda: run_detect_pile(args, cfg, out),
        "marker": lambda: run_detect_marker(args, cfg, out),
        "align": lambda: run_align(args, cfg, out),
        "bricks": lambda: run_bricks(args, cfg, out),
        "vision": lambda: run_vision(args, cfg, out),
        "wall": lambda: run_wall(args, cfg, out),
        "cone": lambda: run_cone(args, cfg, out),
    }
    if name not in handlers:
        raise UsageError(f"unknown stage {name!r}; choose from {', '.join(STAGES)}")
    return handlers[name]()


# ---------------------------------------------------------------- argument parsing


def _inputs(p, *names):
    spec = {
        "kind": dict(choices=SCENE_KINDS, default="pile", help="scene kind to synthesize"),
        "distractor": dict(action="store_true", help="add a distractor (square marker or fence behind the wall)"),
        "single_segment": dict(action="store_true", help="build only one wall segment"),
        "scan": dict(help="PLY scan (world frame)"),
        "scans": dict(nargs="+", help="PLY scans"),
        "down": dict(help="PLY cloud of the downward sensor (world frame)"),
        "meta": dict(help="scene metadata JSON written by synth-scene"),
        "scene": dict(help="nominal scene JSON"),
        "detection": dict(help="pile detection JSON used as the alignment start"),
        "alignment": dict(help="rough alignment JSON used as the refinement start"),
        "crop": dict(type=float, default=None, help="half extent of the crop cube (m)"),
        "points": dict(help="CSV of ground points with columns t,x,y"),
        "t": dict(type=float, default=None, help="query time for the projection buffer"),
        "window": dict(type=float, default=10.0, help="projection buffer window (s)"),
        "image": dict(nargs="+", help="PPM image(s)"),
        "camera": dict(nargs="+", help="camera JSON(s) with intrinsics and optional pose"),
        "frames": dict(type=int, default=5, help="frames in a seeded sequence"),
        "dt": dict(type=float, default=0.1, help="time between frames (s)"),
        "goal": dict(type=float, nargs=3, default=None, help="wall-frame target to snap onto the wall"),
        "r": dict(type=float, default=None, help="horizontal offset (m)"),
        "h": dict(type=float, default=None, help="height above target (m)"),
        "locked": dict(action="store_true", help="gate state before the decision"),
    }
    for n in names:
        p.add_argument("--" + n.replace("_", "-"), dest=n, **spec[n])


ALL_INPUTS = ("kind", "distractor", "single_segment", "scan", "scans", "down", "meta", "scene", "detection",
              "alignment", "crop", "points", "t", "window", "image", "camera", "frames", "dt", "goal", "r", "h",
              "locked")


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed fixing all randomness")
    common.add_argument("--config", help="JSON file of parameter overrides")
    common.add_argument("--out", default=".", help="output directory")
    parser = _Parser(prog="brickwall", description="Brick-wall construction perception and planning toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    subs = {}

    def add(name, help, *inputs):
        p = sub.add_parser(name, parents=[common], help=help)
        _inputs(p, *inputs)
        subs[name] = p
        return p

    add("synth-scene", "write a seeded scene and its sensor data", "kind", "distractor", "single_segment")
    add("detect-pile", "locate the brick pile in a depth scan", "scan", "meta")
    add("detect-marker", "locate the L marker in ground points", "points", "t", "window", "distractor")
    add("register", "multi-brick refinement against scans", "scans", "scene", "meta", "crop")
    add("plan", "optimal and greedy build orders for a blueprint").add_argument("--blueprint", help="blueprint JSON")
    p = add("bench-plan", "optimal versus greedy over random blueprints")
    p.add_argument("--n", type=int, default=1000, help="number of blueprints")
    p.add_argument("--no-timing", dest="timing", action="store_false", help="leave runtimes empty")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    add("vision-detect", "patch detection and tracking in camera frames", "image", "camera", "frames", "dt")
    add("wall-localize", "locate the W wall in UAV depth data", "scans", "down", "meta", "goal", "distractor",
        "single_segment")
    add("cone-sim", "scripted descent through the cone-of-descent gate")
    p = add("e2e-sim", "simulated pick-place precision per brick type")
    p.add_argument("--trials", type=int, default=10, help="trials per brick type")
    p.add_argument("--perturb-xy", type=float, default=0.05, help="max horizontal brick perturbation (m)")
    p.add_argument("--perturb-yaw", type=float, default=10.0, help="max yaw perturbation (degrees)")
    p.add_argument("--sigma", type=float, default=0.008, help="range noise (m)")
    p.add_argument("--dropout", type=float, default=None, help="ray dropout probability")
    p = add("stage", "run one pipeline stage", *ALL_INPUTS)
    p.add_argument("name", help="one of " + ", ".join(STAGES))
    return parser, subs


def _parse(argv):
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    cfg = {}
    if args.config:
        cfg = read_json(args.config)
        if not isinstance(cfg, dict):
            raise UsageError("config must be a JSON object")
        scalars = {k: v for k, v in cfg.items() if not isinstance(v, dict)}
        known = {a.dest for a in subs[args.command]._actions}
        unknown = sorted(set(scalars) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        # config replaces defaults; explicit flags still win
        subs[args.command].set_defaults(**scalars)
        args = parser.parse_args(argv)
    if getattr(args, "crop", "absent") is None:
        args.crop = 5.0 if args.command == "register" else 2.0
    return args, cfg


def _run(args, cfg, out: Path) -> dict:
    c = args.command
    if c == "synth-scene":
        return synth_scene(args.kind, args.seed, out, cfg, args.distractor, args.single_segment)
    if c == "detect-pile":
        return run_detect_pile(args, cfg, out)
    if c == "detect-marker":
        return run_detect_marker(args, cfg, out)
    if c == "register":
        return run_register(args, cfg, out)
    if c == "plan":
        return run_plan(args, cfg, out)
    if c == "bench-plan":
        return cmd_bench_plan(args.n, args.seed, cfg, out, args.timing, args.jobs)
    if c == "vision-detect":
        return run_vision(args, cfg, out)
    if c == "wall-localize":
        return run_wall(args, cfg, out)
    if c == "cone-sim":
        return run_cone_sim(args, cfg, out)
    if c == "e2e-sim":
        return cmd_e2e_sim(args.trials, args.perturb_xy, args.perturb_yaw, args.seed, args.sigma, args.dropout, out,
                           cfg)
    return cmd_stage(args.name, args, cfg, out)


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args, cfg = _parse(argv)
    except SystemExit as e:  # --help
        return int(e.code or 0)
    except (UsageError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        res = _run(args, cfg, out)
    except NotFound as e:
        report = {"status": type(e).__name__, "message": str(e), "diagnostics": e.diagnostics}
        write_json(out / "diagnostics.json", report)
        print(to_json(report))
        return EXIT_NOT_FOUND
    except (UsageError, BrickwallError, ValueError, TypeError, KeyError, OSError, AssertionError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ERROR
    print(to_json(res))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
