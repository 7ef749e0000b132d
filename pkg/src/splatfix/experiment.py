"""Running experiments end to end and comparing their outputs."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import traceback
from pathlib import Path

import numpy as np

from . import metrics, plotting
from .ape import write_audit_csv
from .config import METHODS, ConfigError, ExperimentConfig, dump_config
from .posemath import shift
from .prior import make_fixer
from .renderer import render, write_ppm
from .scene import generate_scene, init_cloud, load_cloud, load_scene, save_cloud, save_scene
from .trainer import train, write_distill_csv, write_log_csv

log = logging.getLogger(__name__)

SUMMARY_HEADER = ["method", "psnr", "ssim", "tsed"]


def build_scene(cfg: ExperimentConfig):
    if cfg.scene_path:
        return load_scene(cfg.scene_path)
    return generate_scene(cfg.scene, cfg.seed)


def tsed_sequence(a, b, steps: int) -> list:
    """Cameras from ``a`` to ``b`` (inclusive) at ``steps`` equal pose increments."""
    return [a.with_pose(shift(a.pose, b.pose, k / steps)) for k in range(steps + 1)]


def tsed_per_view(cloud, scene, spec, background) -> list[float]:
    """TSED of the model on the camera path from each test view to the next one.

    Correspondences are anchored at the ground-truth Gaussian centers and
    matched on the model's renders of consecutive frames.
    """
    cams = scene.test_cams
    points = scene.ground_truth.positions
    out = []
    for i in range(len(cams)):
        seq = tsed_sequence(cams[i], cams[(i + 1) % len(cams)], spec.tsed_steps)
        frames = [render(cloud, c, background) for c in seq]
        pairs, corr = [], []
        for k in range(len(seq) - 1):
            pairs.append((seq[k], seq[k + 1]))
            corr.append(metrics.render_correspondences(frames[k], frames[k + 1], seq[k], seq[k + 1], points,
                                                       spec.tsed_patch, spec.tsed_search))
        out.append(metrics.tsed(pairs, corr, spec.tsed_threshold))
    return out


def evaluate_cloud(cloud, scene, cfg: ExperimentConfig):
    """Per-test-view ``(view_id, psnr, ssim, tsed)`` rows plus renders and targets."""
    bg = np.asarray(cfg.train.background, dtype=np.float64)
    targets = [render(scene.ground_truth, c, bg) for c in scene.test_cams]
    renders = [render(cloud, c, bg) for c in scene.test_cams]
    ts = tsed_per_view(cloud, scene, cfg.eval, bg)
    rows = [(i, metrics.psnr(r, t), metrics.ssim(r, t), ts[i]) for i, (r, t) in enumerate(zip(renders, targets))]
    return rows, renders, targets


def summarize(method: str, rows) -> tuple:
    ts = [r[3] for r in rows if not math.isnan(r[3])]
    return (method, float(np.mean([r[1] for r in rows])), float(np.mean([r[2] for r in rows])),
            float(np.mean(ts)) if ts else float("nan"))


def write_summary_csv(path, summary_rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for m, p, s, t in summary_rows:
            w.writerow([m, f"{p:.4f}", f"{s:.4f}", "nan" if math.isnan(t) else f"{t:.4f}"])


def read_summary_csv(path) -> list[tuple]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != SUMMARY_HEADER:
        raise ValueError(f"{path}: not a summary file")
    return [(r[0], float(r[1]), float(r[2]), float(r[3])) for r in rows[1:]]


def run_experiment(cfg: ExperimentConfig, out=None) -> int:
    """Train one method and write every artifact into the output directory.

    Returns the exit code: 0 on success, 1 for an invalid config, 2 when a
    stage fails (a ``FAILED`` file then explains why).
    """
    try:
        cfg.validate()
    except ConfigError as exc:
        log.error("%s", exc)
        return 1
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "FAILED").unlink(missing_ok=True)
    (out / "config.txt").write_text(dump_config(cfg))
    run = cfg.resolved()
    try:
        scene = build_scene(run)
        save_scene(out / "scene", scene)
        init = init_cloud(scene, run.init, run.seed)
        fixer = make_fixer(run.fixer.kind, scene, **run.fixer.kwargs())
        result = train(scene, init, fixer, run.train, run.ape)
        save_cloud(out / "cloud.gsc", result.cloud)
        write_log_csv(out / "train_log.csv", result.log)
        if result.distill_losses:
            write_distill_csv(out / "distill_log.csv", result)
        if run.ape.enabled:
            write_audit_csv(out / "ape_audit.csv", result.ape_audit)
        rows, renders, targets = evaluate_cloud(result.cloud, scene, run)
        metrics.write_metrics_csv(out / "metrics.csv", rows)
        summary = summarize(run.method, rows)
        write_summary_csv(out / "summary.csv", [summary])
        if run.eval.save_renders:
            (out / "renders").mkdir(exist_ok=True)
            for i, img in enumerate(renders):
                write_ppm(out / "renders" / f"test_{i:02d}.ppm", img)
        if run.eval.figures:
            plotting.training_curves(result.log, out / "training_curves.png", run.method)
            plotting.render_grid(renders, targets, out / "renders.png")
    except Exception as exc:  # noqa: BLE001 - any stage failure becomes exit code 2
        (out / "FAILED").write_text(f"{type(exc).__name__}: {exc}\n\n{traceback.format_exc()}")
        log.error("experiment failed: %s", exc)
        return 2
    log.info("%s: psnr %.4f ssim %.4f tsed %.4f", *summary)
    return 0


def run_matrix(cfg: ExperimentConfig, out=None, methods=METHODS) -> int:
    """Every method with the same settings, one subdirectory each, plus a combined summary."""
    out = Path(out or cfg.out)
    summary = []
    for m in methods:
        sub = dataclasses.replace(cfg, method=m)
        code = run_experiment(sub, out / m)
        if code:
            return code
        summary.extend(read_summary_csv(out / m / "summary.csv"))
    write_summary_csv(out / "summary.csv", summary)
    if cfg.eval.figures:
        plotting.method_bars(summary, out / "methods.png")
    return 0


def re_evaluate(run_dir) -> list[tuple]:
    """Recompute per-view metrics of a finished run from its saved scene and cloud."""
    from .config import load_config

    run_dir = Path(run_dir)
    cfg = load_config(run_dir / "config.txt").resolved()
    scene = load_scene(run_dir / "scene")
    cloud = load_cloud(run_dir / "cloud.gsc")
    rows, _, _ = evaluate_cloud(cloud, scene, cfg)
    return rows


def compare(dirs) -> str:
    """Summary of the first directory plus deltas of each other directory against it.

    Rows are aligned by position, so a single-method run can be compared with
    a run of another method.
    """
    if len(dirs) < 2:
        raise ValueError("compare needs at least two experiment directories")
    tables = []
    for d in dirs:
        path = Path(d) / "summary.csv"
        if not path.is_file():
            raise FileNotFoundError(f"no summary.csv in {d}")
        tables.append(read_summary_csv(path))
    n = min(len(t) for t in tables)
    width = max(12, *(len(Path(d).name) + 4 for d in dirs))
    head = f"{'row':<20}{'metric':<8}{Path(dirs[0]).name:>{width}}"
    head += "".join(f"{'d ' + Path(d).name:>{width}}" for d in dirs[1:])
    lines = [head]
    for i in range(n):
        label = " / ".join(dict.fromkeys(t[i][0] for t in tables))
        for j, metric in enumerate(("psnr", "ssim", "tsed"), start=1):
            ref = tables[0][i][j]
            cells = "".join(f"{t[i][j] - ref:>+{width}.4f}" for t in tables[1:])
            lines.append(f"{label:<20}{metric:<8}{ref:>{width}.4f}{cells}")
    return "\n".join(lines)
