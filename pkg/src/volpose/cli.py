"""Command-line front end.

Every subcommand reads its inputs from files, writes its outputs into one
directory and records a ``manifest.json`` there with the tool version, the
seed and the full argument set.  Exit codes: 0 on success, 1 on
configuration or I/O errors, 2 when a module contract is violated.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from . import __version__, estimate, io, lidar, losses, metrics, pipeline, plots, synth
from .errors import ContractError
from .geom import SkeletonPose
from .lidar import PointCloud, ScanPatternParams

log = logging.getLogger("volpose")

OUTPUT_ROOT_ENV = "VOLPOSE_OUTPUT_ROOT"
TOOL = "volpose"


class CliError(Exception):
    """Configuration or I/O problem reported with exit code 1."""


# ---------------------------------------------------------------------------
# shared plumbing


def _output_dir(args) -> Path:
    if args.out is not None:
        out = Path(args.out)
    else:
        out = Path(os.environ.get(OUTPUT_ROOT_ENV, "volpose-out")) / args.command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config_echo(args) -> dict:
    skip = {"func", "out", "verbose"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _write_manifest(out: Path, args, outputs: Sequence[str], **extra) -> None:
    manifest = {
        "tool": TOOL,
        "version": __version__,
        "command": args.command,
        "seed": getattr(args, "seed", None),
        "config": _config_echo(args),
        "outputs": sorted(outputs),
    }
    manifest.update(extra)
    io.write_json(out / "manifest.json", manifest)


def _pmap(fn: Callable, items: Sequence, jobs: int) -> list:
    """Ordered map, across processes when ``jobs > 1``."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _require(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(f"{what} not found: {p}")
    return p


class Bundle:
    """Read access to a directory written by ``synth``."""

    def __init__(self, root):
        self.root = _require(root, "bundle directory")
        self.scene = io.read_json(_require(self.root / "scene.json", "scene.json"))
        self.sensors = io.read_calibration(_require(self.root / "calibration.json",
                                                    "calibration.json"))
        self.frames = list(self.scene["frames"])

    @property
    def cameras(self):
        return [s.camera for s in self.sensors]

    def frame(self, index: int) -> dict:
        return io.read_json(io.frame_dir(self.root, index) / "poses.json")

    def poses(self, index: int) -> list[SkeletonPose]:
        return [io.pose_from_json(p) for p in self.frame(index)["persons"]]

    def heatmaps(self, index: int, person: int) -> list:
        d = io.frame_dir(self.root, index)
        return [io.read_heatmaps(d / f"heatmap_{s.id}_p{person}.f32") for s in self.sensors]

    def depth(self, index: int, sensor_id: str) -> np.ndarray:
        return io.read_depth(io.frame_dir(self.root, index) / f"depth_{sensor_id}.f32")


def _read_cloud(clouds_root: Path, index: int, sensors) -> PointCloud:
    d = io.frame_dir(clouds_root, index)
    parts = [io.read_cloud_bin(_require(d / f"cloud_{s.id}.bin", "cloud file"), s.id)
             for s in sensors]
    return PointCloud.merge(parts)


def _add_out(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", default=None,
                   help=f"output directory (default ${OUTPUT_ROOT_ENV}/<command>)")


def _add_jobs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")


def _add_weights(p: argparse.ArgumentParser) -> None:
    p.add_argument("--w2d", type=float, default=0.02, help="weight of the 2D term")
    p.add_argument("--w3d", type=float, default=1.0, help="weight of the 3D term")
    p.add_argument("--wprior", type=float, default=10.0, help="weight of the prior")
    p.add_argument("--lambda", dest="lam", type=float, default=6.0,
                   help="uncertainty threshold in nats (default 6)")
    p.add_argument("--angle-mode", choices=losses.ANGLE_MODES, default="corrected")


def _weights(args) -> losses.LossWeights:
    return losses.LossWeights(args.w2d, args.w3d, args.wprior, args.lam)


# ---------------------------------------------------------------------------
# synth


def _render_job(job):
    config, index, poses, out = job
    frame = synth.render_frame(config, index, poses)
    d = io.frame_dir(out, index)
    d.mkdir(parents=True, exist_ok=True)
    sids = [s.id for s in config.sensors]
    io.write_json(d / "poses.json", {
        "index": frame.index,
        "timestamp": frame.timestamp,
        "persons": [dict(io.pose_to_json(p), person_id=i)
                    for i, p in zip(frame.person_ids, frame.poses)],
        "joints2d": {sid: frame.joints2d[sid] for sid in sids},
        "visible": {sid: frame.visible[sid] for sid in sids},
    })
    for sid in sids:
        io.write_depth(d / f"depth_{sid}.f32", frame.depth[sid])
        for p, window in enumerate(frame.heatmaps[sid]):
            io.write_heatmaps(d / f"heatmap_{sid}_p{p}.f32", window)
    return index


def cmd_synth(args) -> int:
    out = _output_dir(args)
    overrides = {"seed": args.seed, "rate_hz": args.rate,
                 "duration_s": args.frames / args.rate, "heatmap_sigma": args.sigma,
                 "noise": synth.HeatmapNoise(args.jitter, args.dropout, args.false_peak)}
    if args.persons is not None:
        overrides["persons"] = args.persons
    config = synth.PRESETS[args.preset](**overrides)
    trajectories = synth.sample_trajectories(config)
    jobs = [(config, i, poses, out) for i, poses in enumerate(trajectories)]
    done = _pmap(_render_job, jobs, args.jobs)
    io.write_calibration(out / "calibration.json", config.sensors)
    io.write_json(out / "scene.json", {
        "preset": args.preset,
        "extent": list(config.extent),
        "persons": config.persons,
        "seed": config.seed,
        "rate_hz": config.rate_hz,
        "frames": done,
        "heatmap_sigma": config.heatmap_sigma,
        "noise": {"jitter": config.noise.jitter, "dropout": config.noise.dropout,
                  "false_peak": config.noise.false_peak},
        "visibility_threshold": config.visibility_threshold,
    })
    _write_manifest(out, args, ["scene.json", "calibration.json"]
                    + [io.frame_dir(".", i).name for i in done])
    log.info("wrote %d frames to %s", len(done), out)
    return 0


# ---------------------------------------------------------------------------
# scan


def _scan_job(job):
    bundle_root, index, sensors, out = job
    bundle = Bundle(bundle_root)
    d = io.frame_dir(out, index)
    d.mkdir(parents=True, exist_ok=True)
    clouds, ids, counts = [], [], {}
    for k, s in enumerate(sensors):
        st = lidar.ScanStats()
        cloud = lidar.scan(bundle.depth(index, s.id), s.camera, lidar.pattern(s.scan), st)
        io.write_cloud_bin(d / f"cloud_{s.id}.bin", cloud)
        clouds.append(cloud)
        ids.append(np.full(len(cloud), k))
        counts[s.id] = {"sampled": st.sampled, "out_of_bounds": st.out_of_bounds,
                        "no_hit": st.no_hit, "points": len(cloud)}
    io.write_ply(d / "cloud.ply", PointCloud.merge(clouds), np.concatenate(ids))
    return counts


def cmd_scan(args) -> int:
    bundle = Bundle(args.bundle)
    out = _output_dir(args)
    sensors = []
    for s in bundle.sensors:
        base = s.scan or ScanPatternParams(width=s.camera.width, height=s.camera.height)
        changes = {k: v for k, v in (("kind", args.kind), ("radius", args.radius),
                                     ("duration", args.duration), ("lines", args.lines),
                                     ("samples", args.samples)) if v is not None}
        if args.kind is not None and args.kind != base.kind:
            changes["centers"] = ()
        changes["seed"] = args.seed
        sensors.append(synth.Sensor(s.camera, replace(base, **changes)))
    jobs = [(str(bundle.root), i, sensors, out) for i in bundle.frames]
    stats_per_frame = _pmap(_scan_job, jobs, args.jobs)
    io.write_calibration(out / "calibration.json", sensors)
    io.write_json(out / "scan_stats.json",
                  {"frames": [{"frame": i, "sensors": c}
                              for i, c in zip(bundle.frames, stats_per_frame)]})
    _write_manifest(out, args, ["calibration.json", "scan_stats.json"]
                    + [io.frame_dir(".", i).name for i in bundle.frames])
    return 0


# ---------------------------------------------------------------------------
# estimate / triangulate


def _estimate_job(job):
    bundle_root, clouds_root, index, params, use_cloud, radius = job
    bundle = Bundle(bundle_root)
    cams = bundle.cameras
    n = len(bundle.frame(index)["persons"])
    maps = [bundle.heatmaps(index, p) for p in range(n)]
    centers = [pipeline.person_center(m, cams) for m in maps]
    if use_cloud:
        scene_cloud = _read_cloud(Path(clouds_root), index, bundle.sensors)
        clouds = pipeline.segment_cloud(scene_cloud, centers, radius)
    else:
        clouds = [None] * n
    out = []
    for p in range(n):
        center = centers[p] if centers[p] is not None else np.zeros(3)
        cloud = clouds[p] if clouds[p] is not None and len(clouds[p]) else None
        est = estimate.fuse_estimate(maps[p], cams, cloud, params, p, center)
        out.append(est.to_json())
    return index, out


def cmd_estimate(args) -> int:
    bundle = Bundle(args.bundle)
    use_cloud = args.clouds is not None
    if use_cloud:
        _require(args.clouds, "cloud directory")
    out = _output_dir(args)
    params = estimate.FuseParams(args.side, args.resolution, args.gate if use_cloud else 0.0,
                                 args.dilation, args.threshold, args.power)
    jobs = [(str(bundle.root), args.clouds, i, params, use_cloud, args.segment_radius)
            for i in bundle.frames]
    frames = _pmap(_estimate_job, jobs, args.jobs)
    io.write_estimates(out / "estimates.json", frames)
    _write_manifest(out, args, ["estimates.json"], fuse_params=params.to_json())
    return 0


def _triangulate_job(job):
    bundle_root, index, min_conf = job
    bundle = Bundle(bundle_root)
    n = len(bundle.frame(index)["persons"])
    out = []
    for p in range(n):
        peaks, conf = pipeline.peaks_from_heatmaps(bundle.heatmaps(index, p), min_conf)
        pose = estimate.dlt_triangulate(peaks, bundle.cameras)
        out.append({"person_id": p, "joints": pose.joints.tolist(),
                    "validity": [bool(v) for v in pose.validity], "uncertainty_nats": None})
    return index, out


def cmd_triangulate(args) -> int:
    bundle = Bundle(args.bundle)
    out = _output_dir(args)
    frames = _pmap(_triangulate_job, [(str(bundle.root), i, args.min_confidence)
                                      for i in bundle.frames], args.jobs)
    io.write_estimates(out / "estimates.json", frames)
    _write_manifest(out, args, ["estimates.json"])
    return 0


# ---------------------------------------------------------------------------
# filter / refine / loss


def _load_estimates(path) -> list[tuple[int, list[estimate.PersonEstimate]]]:
    frames = io.read_estimates(_require(path, "estimates file"))
    return [(i, [_estimate_from_json(e) for e in est]) for i, est in frames]


def _estimate_from_json(d: dict) -> estimate.PersonEstimate:
    d = dict(d)
    if d.get("uncertainty_nats") is None:
        d["uncertainty_nats"] = math.nan
    return estimate.PersonEstimate.from_json(d)


def cmd_filter(args) -> int:
    frames = _load_estimates(args.estimates)
    out = _output_dir(args)
    kept = [(i, estimate.filter_pseudo_labels(est, args.lam)) for i, est in frames]
    io.write_estimates(out / "estimates.json",
                       [(i, [e.to_json() for e in est]) for i, est in kept])
    total = sum(len(est) for _, est in frames)
    survivors = sum(len(est) for _, est in kept)
    io.write_json(out / "summary.json", {"lambda": args.lam, "input": total,
                                         "kept": survivors, "rule": "uncertainty < lambda"})
    _write_manifest(out, args, ["estimates.json", "summary.json"])
    return 0


def _refine_job(job):
    bundle_root, index, ests, weights, settings, min_conf = job
    bundle = Bundle(bundle_root)
    out = []
    for e in ests:
        peaks, _ = pipeline.peaks_from_heatmaps(bundle.heatmaps(index, e.person_id), min_conf)
        res = estimate.refine(e.pose, peaks, bundle.cameras, weights, settings)
        d = estimate.PersonEstimate(res.pose, e.uncertainty, e.person_id).to_json()
        d["objective"] = {"initial": res.initial_objective, "final": res.objective,
                          "iterations": res.iterations}
        out.append(d)
    return index, out


def cmd_refine(args) -> int:
    bundle = Bundle(args.bundle)
    frames = _load_estimates(args.estimates)
    out = _output_dir(args)
    settings = estimate.RefineSettings(iterations=args.iterations, max_step=args.max_step)
    jobs = [(str(bundle.root), i, est, _weights(args), settings, args.min_confidence)
            for i, est in frames]
    io.write_estimates(out / "estimates.json", _pmap(_refine_job, jobs, args.jobs))
    _write_manifest(out, args, ["estimates.json"])
    return 0


def cmd_loss(args) -> int:
    bundle = Bundle(args.bundle)
    frames = _load_estimates(args.estimates)
    pseudo = dict(_load_estimates(args.pseudo3d)) if args.pseudo3d else {}
    out = _output_dir(args)
    rows = []
    for index, ests in frames:
        labels = {e.person_id: e for e in pseudo.get(index, [])}
        for e in ests:
            peaks, _ = pipeline.peaks_from_heatmaps(bundle.heatmaps(index, e.person_id),
                                                    args.min_confidence)
            label = labels.get(e.person_id)
            ctx = losses.LossContext(peaks, bundle.cameras, None,
                                     label.pose if label is not None else None,
                                     label.uncertainty if label is not None else math.inf,
                                     _weights(args), angle_mode=args.angle_mode)
            report = losses.loss_report(e.pose, ctx)
            rows.append(dict(report.to_json(), frame=index, person_id=e.person_id))
    io.write_json(out / "losses.json", rows)
    _write_manifest(out, args, ["losses.json"])
    return 0


# ---------------------------------------------------------------------------
# evaluation


def cmd_eval_pose(args) -> int:
    bundle = Bundle(args.bundle)
    frames = _load_estimates(args.estimates)
    out = _output_dir(args)
    rows = []
    for index, ests in frames:
        gts = bundle.poses(index)
        for e in ests:
            gt = gts[e.person_id]
            pa = metrics.pa_mpjpe(e.pose, gt)
            rows.append((index, e.person_id, metrics.mpjpe(e.pose, gt),
                         metrics.mpjpe(e.pose, gt, metrics.MPJPE_CUTOFF_MM), pa))
    io.write_csv(out / "eval.csv", ("frame", "person", "mpjpe_mm", "mpjpe500_mm",
                                    "pa_mpjpe_mm"), rows)
    arr = np.array([r[2:] for r in rows], dtype=float).reshape(-1, 3)
    summary = {
        "persons": len(rows),
        "mean_mpjpe_mm": float(arr[:, 0].mean()) if len(rows) else None,
        "mean_mpjpe500_mm": float(np.nanmean(arr[:, 1])) if len(rows) else None,
        "mean_pa_mpjpe_mm": float(arr[:, 2].mean()) if len(rows) else None,
    }
    io.write_json(out / "summary.json", summary)
    plots.error_histogram(arr[:, 0], out / "mpjpe_hist.png")
    _write_manifest(out, args, ["eval.csv", "summary.json", "mpjpe_hist.png"])
    return 0


def cmd_eval_det(args) -> int:
    bundle = Bundle(args.bundle)
    out = _output_dir(args)
    size = metrics.DEFAULT_BOX_SIZE if args.box == "constant" else None
    if args.detections:
        raw = io.read_json(_require(args.detections, "detections file"))
        dets = {int(f["frame"]): [metrics.Box3D.from_json(b) for b in f["boxes"]] for f in raw}
    else:
        dets = {}
        for index, ests in _load_estimates(args.estimates):
            dets[index] = [metrics.box_from_pose(e.pose, metrics.BOX_PADDING, size,
                                                 score=_score(e.uncertainty)) for e in ests]
    pairs = []
    for index in bundle.frames:
        gts = [metrics.box_from_pose(p, metrics.BOX_PADDING, size) for p in bundle.poses(index)]
        pairs.append((dets.get(index, []), gts))
    table = {f"AP{int(round(100 * t))}": metrics.average_precision_frames(pairs, t)
             for t in args.thresholds}
    io.write_json(out / "summary.json", {"ap": table, "interpolation": "all-point",
                                         "box": args.box, "frames": len(pairs)})
    _write_manifest(out, args, ["summary.json"])
    return 0


def _score(uncertainty: float) -> float:
    return 1.0 if not math.isfinite(uncertainty) else 1.0 / (1.0 + uncertainty)


# ---------------------------------------------------------------------------
# entropy study


def _study_job(job):
    i, preset, seed, noise, corrupted, params = job
    config = synth.PRESETS[preset](seed=seed)
    rng = np.random.default_rng([seed, i])
    half = 0.5 * np.asarray(config.extent) - config.margin
    pose = synth.sample_pose(rng, root=rng.uniform(-half, half), yaw=rng.uniform(-np.pi, np.pi))
    sample = pipeline.simulate_person(pose, config.sensors, config.heatmap_sigma,
                                      noise if corrupted else synth.HeatmapNoise(), [seed, i])
    est = pipeline.estimate_person(sample.heatmaps, config.cameras, sample.cloud, params, i)
    return i, "corrupted" if corrupted else "clean", est.uncertainty, metrics.mpjpe(est.pose, pose)


def cmd_entropy_study(args) -> int:
    out = _output_dir(args)
    noise = synth.HeatmapNoise(args.jitter, args.dropout, args.false_peak)
    params = estimate.FuseParams(resolution=args.resolution, gate=args.gate)
    jobs = [(i, args.preset, args.seed, noise, i % 2 == 1, params) for i in range(args.persons)]
    rows = _pmap(_study_job, jobs, args.jobs)
    io.write_csv(out / "entropy.csv", ("person", "condition", "uncertainty_nats", "mpjpe_mm"),
                 rows)
    unc = np.array([r[2] for r in rows])
    err = np.array([r[3] for r in rows])
    cond = np.array([r[1] for r in rows])
    edges = np.linspace(0.0, math.log(args.resolution ** 3) + 0.5, args.bins + 1)
    hist = {c: np.histogram(unc[cond == c], edges)[0] for c in ("clean", "corrupted")}
    io.write_csv(out / "histogram.csv", ("bin_lo", "bin_hi", "clean", "corrupted"),
                 [(edges[b], edges[b + 1], int(hist["clean"][b]), int(hist["corrupted"][b]))
                  for b in range(args.bins)])
    means = {c: float(unc[cond == c].mean()) if (cond == c).any() else None
             for c in ("clean", "corrupted")}
    rho = float(stats.spearmanr(unc, err).statistic) if len(rows) > 2 else None
    io.write_json(out / "summary.json", {
        "persons": len(rows),
        "mean_uncertainty_nats": means,
        "mean_mpjpe_mm": {c: float(err[cond == c].mean()) if (cond == c).any() else None
                          for c in ("clean", "corrupted")},
        "spearman_uncertainty_mpjpe": rho,
        "kept_below_lambda": {c: int((unc[cond == c] < args.lam).sum())
                              for c in ("clean", "corrupted")},
        "lambda": args.lam,
    })
    plots.entropy_histogram({c: unc[cond == c] for c in ("clean", "corrupted")}, edges,
                            out / "entropy_hist.png", args.lam)
    plots.scatter(unc, err, cond, out / "entropy_vs_mpjpe.png",
                  "person uncertainty (nats)", "MPJPE (mm)")
    _write_manifest(out, args, ["entropy.csv", "histogram.csv", "summary.json",
                                "entropy_hist.png", "entropy_vs_mpjpe.png"])
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=TOOL, description="LiDAR-camera volumetric pose toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic frame bundles")
    p.add_argument("--preset", choices=sorted(synth.PRESETS), default="panoptic")
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--rate", type=float, default=10.0, help="frames per second")
    p.add_argument("--persons", type=int, default=None, help="override the preset count")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", type=float, default=3.0, help="heatmap std in pixels")
    p.add_argument("--jitter", type=float, default=0.0, help="heatmap peak jitter (px)")
    p.add_argument("--dropout", type=float, default=0.0, help="channel dropout probability")
    p.add_argument("--false-peak", type=float, default=0.0, help="spurious peak probability")
    _add_out(p)
    _add_jobs(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("scan", help="simulate LiDAR scans of a bundle's depth maps")
    p.add_argument("bundle")
    p.add_argument("--kind", choices=lidar.KINDS, default=None)
    p.add_argument("--radius", type=float, default=None, help="rose radius in pixels")
    p.add_argument("--duration", type=float, default=None, help="integration time (s)")
    p.add_argument("--lines", type=int, default=None)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--seed", type=int, default=0, help="seed of the random pattern")
    _add_out(p)
    _add_jobs(p)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("estimate", help="volumetric fusion estimates")
    p.add_argument("bundle")
    p.add_argument("--clouds", default=None, help="output directory of scan")
    p.add_argument("--gate", type=float, default=0.8, help="occupancy gate strength g")
    p.add_argument("--dilation", type=int, default=3, help="occupancy dilation (voxels)")
    p.add_argument("--threshold", type=float, default=0.6, help="sharpen threshold")
    p.add_argument("--power", type=float, default=2.0, help="sharpen exponent")
    p.add_argument("--side", type=float, default=2.0, help="grid side in meters")
    p.add_argument("--resolution", type=int, default=64, help="voxels per axis")
    p.add_argument("--segment-radius", type=float, default=pipeline.SEGMENT_RADIUS)
    _add_out(p)
    _add_jobs(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("triangulate", help="DLT baseline on heatmap peaks")
    p.add_argument("bundle")
    p.add_argument("--min-confidence", type=float, default=0.1)
    _add_out(p)
    _add_jobs(p)
    p.set_defaults(func=cmd_triangulate)

    p = sub.add_parser("filter", help="keep estimates with uncertainty below lambda")
    p.add_argument("estimates")
    p.add_argument("--lambda", dest="lam", type=float, default=6.0)
    _add_out(p)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("refine", help="refine poses against heatmap peaks")
    p.add_argument("bundle")
    p.add_argument("estimates")
    p.add_argument("--iterations", type=int, default=50)
    p.add_argument("--max-step", type=float, default=0.1, help="first trial step (m)")
    p.add_argument("--min-confidence", type=float, default=0.1)
    _add_weights(p)
    _add_out(p)
    _add_jobs(p)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("loss", help="unsupervised loss report")
    p.add_argument("bundle")
    p.add_argument("estimates")
    p.add_argument("--pseudo3d", default=None, help="estimates file used as 3D labels")
    p.add_argument("--min-confidence", type=float, default=0.1)
    _add_weights(p)
    _add_out(p)
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("eval-pose", help="MPJPE and PA-MPJPE against ground truth")
    p.add_argument("bundle")
    p.add_argument("estimates")
    _add_out(p)
    p.set_defaults(func=cmd_eval_pose)

    p = sub.add_parser("eval-det", help="3D box average precision")
    p.add_argument("bundle")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--estimates", default=None, help="derive boxes from estimates")
    src.add_argument("--detections", default=None, help="JSON list of frames with boxes")
    p.add_argument("--box", choices=("padded", "constant"), default="padded")
    p.add_argument("--thresholds", type=float, nargs="+", default=[0.5, 0.7])
    _add_out(p)
    p.set_defaults(func=cmd_eval_det)

    p = sub.add_parser("entropy-study", help="uncertainty of clean vs corrupted estimates")
    p.add_argument("--preset", choices=sorted(synth.PRESETS), default="panoptic")
    p.add_argument("--persons", type=int, default=40, help="half clean, half corrupted")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jitter", type=float, default=8.0)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--false-peak", type=float, default=0.0)
    p.add_argument("--gate", type=float, default=0.8)
    p.add_argument("--lambda", dest="lam", type=float, default=6.0)
    p.add_argument("--bins", type=int, default=26)
    p.add_argument("--resolution", type=int, default=64, help="voxels per axis")
    _add_out(p)
    _add_jobs(p)
    p.set_defaults(func=cmd_entropy_study)
    return parser


def dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ContractError as exc:
        print(f"{TOOL} {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (CliError, OSError, ValueError, KeyError) as exc:
        print(f"{TOOL} {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())
