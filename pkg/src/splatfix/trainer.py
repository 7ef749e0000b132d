"""Optimization loop: photometric fitting of train views plus prior distillation on extra views."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import ape as ape_mod
from .losses import LossConfig, distillation_loss, photo_loss
from .metrics import psnr, ssim
from .renderer import GradientError, render, render_backward
from .scene import GaussianCloud

log = logging.getLogger(__name__)

DISTILL_MODES = ("off", "continuous", "interval")


class TrainingError(RuntimeError):
    def __init__(self, iteration: int, view: str, message: str):
        super().__init__(f"iteration {iteration}, view {view}: {message}")
        self.iteration = iteration
        self.view = view


@dataclass
class TrainConfig:
    total_iters: int = 6000
    lr_position: float = 1.6e-4
    lr_position_final: float = 1.6e-6
    lr_rotation: float = 1e-3
    lr_log_scale: float = 5e-3
    lr_opacity: float = 5e-2
    lr_sh: float = 2.5e-3
    lr_sh_rest: float = 1.25e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    distill_mode: str = "continuous"
    distill_interval: int = 2000
    extra_views_per_iter: int = 1
    freeze_enabled: bool = True
    freeze_psnr: float = 35.0
    freeze_patience: int = 3
    freeze_check_every: int = 500
    prune_opacity: float = 0.005
    prune_every: int = 500
    eval_every: int = 100
    precision: str = "f32"
    parallel: bool = False
    background: tuple = (0.0, 0.0, 0.0)
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)

    def validate(self) -> None:
        if self.total_iters < 1:
            raise ValueError("total_iters must be positive")
        rates = (self.lr_position, self.lr_position_final, self.lr_rotation, self.lr_log_scale,
                 self.lr_opacity, self.lr_sh, self.lr_sh_rest)
        if min(rates) <= 0:
            raise ValueError("learning rates must be positive")
        if self.distill_mode not in DISTILL_MODES:
            raise ValueError(f"distill_mode must be one of {DISTILL_MODES}")
        if self.distill_interval < 1 or self.extra_views_per_iter < 0:
            raise ValueError("distill_interval must be >= 1 and extra_views_per_iter >= 0")
        if self.precision not in ("f32", "f64"):
            raise ValueError("precision must be f32 or f64")
        if self.freeze_patience < 1 or self.freeze_check_every < 1:
            raise ValueError("freeze_patience and freeze_check_every must be >= 1")
        self.loss.validate()

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64

    def learning_rates(self, it: int, spatial_scale: float = 1.0) -> dict[str, float]:
        r = min(1.0, max(0.0, it / self.total_iters))
        lr_pos = math.exp((1 - r) * math.log(self.lr_position) + r * math.log(self.lr_position_final))
        return {
            "positions": lr_pos * spatial_scale,
            "rotations": self.lr_rotation,
            "log_scales": self.lr_log_scale,
            "opacity_logits": self.lr_opacity,
            "sh": self.lr_sh,
        }


# ---------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def prune(self, keep) -> None:
        for d in (self.m, self.v):
            for k in d:
                d[k] = d[k][keep]


def adam_step(params: dict, grads: dict, state: AdamState, lrs: dict,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """Bias-corrected Adam, updating ``params`` arrays in place.

    ``lrs`` values are scalars or arrays broadcastable to the parameter.
    """
    state.step += 1
    t = state.step
    c1 = 1 - beta1 ** t
    c2 = 1 - beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        p -= (lrs[name] * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)
    return state


# ---------------------------------------------------------------------------
# prior cache and freezing

@dataclass
class PriorEntry:
    fixed: np.ndarray | None = None
    previous: np.ndarray | None = None
    previous_iter: int = -1
    streak: int = 0
    frozen: bool = False
    frozen_at: int = -1  # iteration of the freezing comparison
    history: list = field(default_factory=list)  # psnr of each freeze comparison


@dataclass
class PriorCache:
    n_views: int
    freeze_psnr: float = 35.0
    freeze_patience: int = 3
    entries: list = field(default_factory=list)

    def __post_init__(self):
        if not self.entries:
            self.entries = [PriorEntry() for _ in range(self.n_views)]

    def frozen_count(self) -> int:
        return sum(e.frozen for e in self.entries)


def freeze_check(cache: PriorCache, view: int, new_fixed: np.ndarray, iteration: int = -1) -> bool:
    """Compare a new fixed image with the view's previous one and update the freeze state.

    The view freezes once ``freeze_patience`` consecutive comparisons exceed
    ``freeze_psnr``. The first call only records the image.
    """
    e = cache.entries[view]
    if e.frozen:
        return True
    if e.previous is not None:
        change = psnr(new_fixed, e.previous)
        e.history.append(change)
        e.streak = e.streak + 1 if change > cache.freeze_psnr else 0
        if e.streak >= cache.freeze_patience:
            e.frozen = True
            e.frozen_at = iteration
    e.previous = new_fixed
    return e.frozen


# ---------------------------------------------------------------------------
# training

@dataclass
class LogRow:
    iter: int
    photo_loss: float
    distill_loss: float
    test_psnr: float
    test_ssim: float
    fixer_calls: int
    frozen_views: int


@dataclass
class TrainResult:
    cloud: GaussianCloud
    log: list
    ape_audit: list
    augmented: list
    fixer_calls: int
    photo_losses: list
    distill_losses: list  # (iteration, extra view id, loss)
    prior: PriorCache | None = None


def evaluate_views(cloud, cams, targets, background, parallel=False):
    renders = [render(cloud, c, background, parallel=parallel) for c in cams]
    ps = [psnr(r, t) for r, t in zip(renders, targets)]
    ss = [ssim(r, t) for r, t in zip(renders, targets)]
    return renders, ps, ss


def prune(cloud: GaussianCloud, state: AdamState, min_opacity: float) -> int:
    keep = cloud.opacities >= min_opacity
    removed = int((~keep).sum())
    if removed == 0 or not keep.any():
        return 0
    for name in cloud.PARAM_NAMES:
        setattr(cloud, name, getattr(cloud, name)[keep])
    state.prune(keep)
    return removed


def train(scene, init: GaussianCloud, fixer, cfg: TrainConfig, ape_cfg: ape_mod.ApeConfig | None = None,
          *, test_targets=None, progress=None) -> TrainResult:
    """Optimize ``init`` (copied) against the scene's training views.

    Each iteration fits one sampled training (or augmented) view with the
    photometric loss and, when distilling, one sampled extra view toward its fixed
    image. ``continuous`` calls the fixer on the current render every time (until
    the view's prior freezes); ``interval`` repairs every extra view at the end
    of each block of ``distill_interval`` iterations and reuses those images
    through the next block.
    """
    cfg.validate()
    ape_cfg = ape_cfg or ape_mod.ApeConfig()
    if ape_cfg.enabled:
        ape_cfg.validate()
    dtype = cfg.dtype
    bg = np.asarray(cfg.background, dtype=np.float64)
    par = cfg.parallel
    cloud = init.astype(dtype)
    cloud.normalize_rotations()

    train_cams = list(scene.train_cams)
    extra_cams = list(scene.extra_cams)
    train_targets = [render(scene.ground_truth, c, bg) for c in train_cams]
    if test_targets is None:
        test_targets = [render(scene.ground_truth, c, bg) for c in scene.test_cams]
    for c in extra_cams:
        fixer.register(c)
    ref_of_extra = [ape_mod.nearest_references(c, train_cams, 1, ape_cfg.pose_alpha, ape_cfg.pose_beta)[0]
                    for c in extra_cams]

    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    rng_train = np.random.default_rng(seeds[0])
    rng_extra = np.random.default_rng(seeds[1])

    distilling = cfg.distill_mode != "off" and extra_cams and cfg.extra_views_per_iter > 0
    cache = PriorCache(len(extra_cams), cfg.freeze_psnr, cfg.freeze_patience)
    state = AdamState()
    fixer_calls = 0
    views = [(c, t, f"train{i}") for i, (c, t) in enumerate(zip(train_cams, train_targets))]
    weights = [1.0] * len(views)
    augmented, audit = [], []
    total_rounds = cfg.total_iters // ape_cfg.n_iter
    rows, photo_hist, distill_hist = [], [], []
    win_photo, win_distill = [], []
    spatial = float(getattr(scene, "extent", 1.0))
    # the DC band learns faster than the view-dependent bands
    sh_rates = np.full((1, cloud.sh.shape[1], 1), cfg.lr_sh_rest)
    sh_rates[0, 0, 0] = cfg.lr_sh

    def call_fixer(v, image):
        nonlocal fixer_calls
        fixer_calls += 1
        try:
            out = fixer.fix(image, train_targets[ref_of_extra[v]], camera=extra_cams[v])
        except Exception as exc:  # noqa: BLE001 - surface as a training failure
            raise TrainingError(it, f"extra{v}", f"fixer failed: {exc}") from exc
        if np.shape(out) != image.shape:
            raise TrainingError(it, f"extra{v}", f"fixer returned shape {np.shape(out)}, expected {image.shape}")
        return out

    for it in range(1, cfg.total_iters + 1):
        if distilling and cfg.distill_mode == "interval" and it % cfg.distill_interval == 0:
            for v, cam in enumerate(extra_cams):
                cache.entries[v].fixed = call_fixer(v, render(cloud, cam, bg, parallel=par))

        grads = None
        # photometric term on one sampled view
        p = np.asarray(weights) / np.sum(weights)
        vi = int(rng_train.choice(len(views), p=p)) if len(views) > 1 else 0
        cam, target, vname = views[vi]
        image, ctx = render(cloud, cam, bg, parallel=par, return_context=True)
        loss, dimg = photo_loss(image, target, cfg.loss)
        if not math.isfinite(loss):
            raise TrainingError(it, vname, "non-finite photometric loss")
        try:
            grads = render_backward(cloud, cam, bg, dimg, context=ctx, parallel=par)
        except GradientError as exc:
            raise TrainingError(it, vname, str(exc)) from exc
        photo_hist.append(loss)
        win_photo.append(loss)

        if distilling:
            for _ in range(cfg.extra_views_per_iter):
                v = int(rng_extra.integers(len(extra_cams)))
                cam = extra_cams[v]
                entry = cache.entries[v]
                image, ctx = render(cloud, cam, bg, parallel=par, return_context=True)
                if cfg.distill_mode == "continuous" and not entry.frozen:
                    entry.fixed = call_fixer(v, image)
                    if cfg.freeze_enabled and (entry.previous is None
                                               or it - entry.previous_iter >= cfg.freeze_check_every):
                        freeze_check(cache, v, entry.fixed, it)
                        entry.previous_iter = it
                if entry.fixed is None:
                    continue
                dloss, dimg = distillation_loss(image, entry.fixed, cfg.loss)
                if not math.isfinite(dloss):
                    raise TrainingError(it, f"extra{v}", "non-finite distillation loss")
                try:
                    grads.add_(render_backward(cloud, cam, bg, dimg, context=ctx, parallel=par))
                except GradientError as exc:
                    raise TrainingError(it, f"extra{v}", str(exc)) from exc
                distill_hist.append((it, v, dloss))
                win_distill.append(dloss)

        lrs = cfg.learning_rates(it, spatial)
        lrs["sh"] = sh_rates
        adam_step(cloud.params(), dict(grads.items()), state, lrs, cfg.beta1, cfg.beta2, cfg.eps)
        cloud.normalize_rotations()

        if cfg.prune_every and it % cfg.prune_every == 0 and it < cfg.total_iters:
            prune(cloud, state, cfg.prune_opacity)

        if ape_cfg.enabled and it % ape_cfg.n_iter == 0:
            new, rows_ = ape_mod.ape_round(cloud, scene, fixer, ape_cfg, it // ape_cfg.n_iter, total_rounds,
                                           train_targets, bg, par)
            fixer_calls += len(rows_) + len(new)
            augmented.extend(new)
            audit.extend(rows_)
            for a in new:
                views.append((a.camera, a.target_image, f"aug{len(views)}"))
                weights.append(ape_cfg.augment_weight)

        if it % cfg.eval_every == 0 or it == cfg.total_iters:
            _, ps, ss = evaluate_views(cloud, scene.test_cams, test_targets, bg, par)
            rows.append(LogRow(it, float(np.mean(win_photo)) if win_photo else 0.0,
                               float(np.mean(win_distill)) if win_distill else 0.0,
                               float(np.mean(ps)), float(np.mean(ss)), fixer_calls, cache.frozen_count()))
            win_photo, win_distill = [], []
            if progress is not None:
                progress(rows[-1])

    return TrainResult(cloud, rows, audit, augmented, fixer_calls, photo_hist, distill_hist, cache)


def write_distill_csv(path, result: TrainResult) -> None:
    """Per-sample distillation losses; ``frozen`` marks samples taken after the view's prior froze."""
    frozen_at = [e.frozen_at for e in result.prior.entries] if result.prior else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "view_id", "distill_loss", "frozen"])
        for it, v, loss in result.distill_losses:
            w.writerow([it, v, f"{loss:.8e}", int(0 <= frozen_at[v] < it)])


def write_log_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "photo_loss", "distill_loss", "test_psnr", "test_ssim", "fixer_calls", "frozen_views"])
        for r in rows:
            w.writerow([r.iter, f"{r.photo_loss:.6f}", f"{r.distill_loss:.6f}", f"{r.test_psnr:.4f}",
                        f"{r.test_ssim:.4f}", r.fixer_calls, r.frozen_views])
