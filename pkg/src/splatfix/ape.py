"""Adaptive progressive enhancement around unreliable extra views."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .metrics import psnr
from .posemath import pose_distance, progress, shift
from .renderer import render

log = logging.getLogger(__name__)


@dataclass
class ApeConfig:
    enabled: bool = False
    eta: float = 25.0
    m_refs: int = 3
    n_iter: int = 1000
    augment_weight: float = 1.0
    pose_alpha: float = 0.5
    pose_beta: float = 0.5

    def validate(self) -> None:
        if self.eta <= 0 or self.m_refs < 1 or self.n_iter < 1:
            raise ValueError("APE needs eta > 0, m_refs >= 1 and n_iter >= 1")
        if self.augment_weight < 0:
            raise ValueError("augment_weight must be >= 0")


@dataclass
class AugmentedView:
    camera: object
    target_image: np.ndarray
    origin: tuple  # (extra view id, reference train view id, round index)


@dataclass
class AuditRow:
    round: int
    view_id: int
    psnr_gate: float
    unreliable: bool
    augmented_count: int


def nearest_references(camera, train_cams, m: int, alpha: float = 0.5, beta: float = 0.5) -> list[int]:
    """Indices of the ``m`` train cameras closest in pose to ``camera`` (ties by index)."""
    if not train_cams:
        raise ValueError("no training cameras to choose references from")
    if m > len(train_cams):
        log.warning("asked for %d references but only %d training views exist", m, len(train_cams))
    dists = [pose_distance(c.pose, camera.pose, alpha, beta) for c in train_cams]
    order = sorted(range(len(train_cams)), key=lambda i: (dists[i], i))
    return order[:m]


def ape_round(cloud, scene, fixer, cfg: ApeConfig, round_index: int, total_rounds: int,
              train_images, background=(0.0, 0.0, 0.0), parallel: bool = False):
    """One enhancement pass over every extra view.

    Returns ``(augmented_views, audit_rows)``. A view is unreliable when the fixer
    changes its render by a lot (``psnr(fixed, render) < eta``); it then yields one
    shifted, fixed view per nearby training reference.
    """
    tau = progress(round_index, total_rounds)
    augmented, audit = [], []
    for v, cam in enumerate(scene.extra_cams):
        fixer.register(cam)
        rendered = render(cloud, cam, background, parallel=parallel)
        refs = nearest_references(cam, scene.train_cams, cfg.m_refs, cfg.pose_alpha, cfg.pose_beta)
        fixed = fixer.fix(rendered, train_images[refs[0]], camera=cam)
        gate = psnr(fixed, rendered)
        unreliable = gate < cfg.eta
        count = 0
        if unreliable:
            for r in refs:
                shifted = cam.with_pose(shift(scene.train_cams[r].pose, cam.pose, tau))
                fixer.register(shifted)
                novel = fixer.fix(render(cloud, shifted, background, parallel=parallel), train_images[r], camera=shifted)
                augmented.append(AugmentedView(shifted, novel, (v, r, round_index)))
                count += 1
        audit.append(AuditRow(round_index, v, gate, unreliable, count))
    return augmented, audit


def write_audit_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round", "view_id", "psnr_gate", "unreliable", "augmented_count"])
        for r in rows:
            w.writerow([r.round, r.view_id, f"{r.psnr_gate:.4f}", int(r.unreliable), r.augmented_count])
