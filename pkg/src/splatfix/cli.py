"""Command line entry point: ``splatfix gen|train|eval|compare``.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import METHODS, ConfigError, ExperimentConfig, load_config, parse_config
from .experiment import build_scene, compare, re_evaluate, run_experiment, run_matrix, summarize, \
    write_summary_csv
from .metrics import write_metrics_csv
from .scene import save_scene

log = logging.getLogger("splatfix")


def _build_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.set:
        cfg = parse_config("\n".join(args.set), cfg, source="--set")
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "method", None) and args.method != "all":
        cfg.method = args.method
    if args.out:
        cfg.out = args.out
    cfg.validate()
    return cfg


def _cmd_gen(args) -> int:
    cfg = _build_config(args)
    scene = build_scene(cfg.resolved())
    save_scene(cfg.out, scene)
    print(f"scene written to {cfg.out} ({len(scene.ground_truth)} gaussians, "
          f"{len(scene.train_cams)}/{len(scene.extra_cams)}/{len(scene.test_cams)} train/extra/test views)")
    return 0


def _cmd_train(args) -> int:
    cfg = _build_config(args)
    if args.method == "all":
        code = run_matrix(cfg)
    else:
        code = run_experiment(cfg)
    if code == 0:
        print(Path(cfg.out, "summary.csv").read_text(), end="")
    return code


def _cmd_eval(args) -> int:
    rows = re_evaluate(args.run)
    write_metrics_csv(Path(args.run) / "metrics.csv", rows)
    method = load_config(Path(args.run) / "config.txt").method
    summary = summarize(method, rows)
    write_summary_csv(Path(args.run) / "summary.csv", [summary])
    for view, p, s, t in rows:
        print(f"view {view:2d}  psnr {p:8.4f}  ssim {s:.4f}  tsed {t:.4f}")
    print(f"mean     psnr {summary[1]:8.4f}  ssim {summary[2]:.4f}  tsed {summary[3]:.4f}")
    return 0


def _cmd_compare(args) -> int:
    if len(args.dirs) < 2:
        print("compare needs at least two experiment directories", file=sys.stderr)
        return 1
    print(compare(args.dirs))
    return 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="splatfix", description="Gaussian splatting with fixer-prior distillation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, method=False):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        if method:
            sp.add_argument("--method", choices=METHODS + ("all",),
                            help="training method; 'all' runs the four-method matrix")

    common(sub.add_parser("gen", help="generate a synthetic scene"))
    common(sub.add_parser("train", help="run an experiment"), method=True)
    ev = sub.add_parser("eval", help="recompute metrics of a finished run")
    ev.add_argument("run", help="experiment output directory")
    cmp_ = sub.add_parser("compare", help="PSNR/SSIM/TSED deltas between runs")
    cmp_.add_argument("dirs", nargs="+")
    return p


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handlers = {"gen": _cmd_gen, "train": _cmd_train, "eval": _cmd_eval, "compare": _cmd_compare}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
