"""Command-line entry point: ``beamprior {scene,train,eval,ablate,report}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import load_config, with_scene
from .errors import BeamPriorError


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML run config")
    p.add_argument("--out", help="output directory (overrides config and BEAMPRIOR_OUT_DIR)")
    p.add_argument("--seed", type=int, help="run seed: split, init, training, sampling")
    p.add_argument("--jobs", type=int, help="worker processes (default: logical cores)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="beamprior", description="Diffusion beam priors for top-k beam sweeping")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scene", help="generate the synthetic scene, ray file and dataset")
    _common(p)
    p.add_argument("--scene-seed", type=int)
    p.add_argument("--no-reflectors", action="store_true")
    p.add_argument("--no-blockers", action="store_true")

    p = sub.add_parser("train", help="train denoisers and learned baselines")
    _common(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--variants", nargs="+")
    p.add_argument("--dims", nargs="+", type=int)

    for name, help_ in (("eval", "evaluate every model, sampler and baseline"),
                        ("ablate", "run the conditioning/capacity/sampler ablation grid")):
        p = sub.add_parser(name, help=help_)
        _common(p)
        p.add_argument("--sampler", choices=["ddpm", "ddim"], help="evaluate only this sampler")
        p.add_argument("--steps", type=int, help="DDIM steps")
        p.add_argument("--eta", type=float, help="DDIM eta")
        p.add_argument("--n-samples", type=int, help="priors averaged per UE")
        p.add_argument("--timing", action="store_true", help="measure per-user latency")
        p.add_argument("--timing-reps", type=int)
        p.add_argument("--dims", nargs="+", type=int)
        if name == "ablate":
            p.add_argument("--seeds", nargs="+", type=int, help="run the grid once per seed")
            p.add_argument("--train-missing", action="store_true", help="train cells without checkpoints")
            p.add_argument("--epochs", type=int)

    p = sub.add_parser("report", help="seed-averaged table of ablation.csv or report.csv")
    p.add_argument("path", nargs="?", help="CSV to summarise (default: <out>/ablation.csv)")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _resolve(args):
    cfg = load_config(args.config)
    if args.out:
        cfg.out_dir = args.out
    for attr in ("seed", "jobs"):
        if getattr(args, attr, None) is not None:
            setattr(cfg, attr, getattr(args, attr))
    if getattr(args, "scene_seed", None) is not None:
        cfg.scene_seed = args.scene_seed
    if getattr(args, "no_reflectors", False):
        cfg = with_scene(cfg, n_reflectors=0)
    if getattr(args, "no_blockers", False):
        cfg = with_scene(cfg, n_blockers=0)
    if getattr(args, "epochs", None) is not None:
        cfg.train = {**cfg.train, "epochs": args.epochs}
    if getattr(args, "variants", None):
        cfg.variants = args.variants
    if getattr(args, "dims", None):
        cfg.dims = args.dims
    if getattr(args, "n_samples", None) is not None:
        cfg.n_samples = args.n_samples
    if getattr(args, "timing", False):
        cfg.timing = True
    if getattr(args, "timing_reps", None) is not None:
        cfg.timing_reps = args.timing_reps
    if getattr(args, "sampler", None):
        entry = {"kind": args.sampler}
        for s in cfg.samplers:
            if s.get("kind") == args.sampler:
                entry = dict(s)
        if args.steps is not None:
            entry["steps"] = args.steps
        if args.eta is not None:
            entry["eta"] = args.eta
        cfg.samplers = [entry]
    return cfg.validate()


def _print_reports(reports) -> None:
    print(f"{'model':<12}{'sampler':<10}{'d':>3}  {'Hit@1':>6}{'Hit@3':>7}{'Hit@5':>7}  {'SNR@1':>6}  {'ms/user':>8}")
    for r in reports:
        lat = "" if r.latency_s is None else f"{r.latency_s * 1e3:8.3f}"
        d = "" if r.d is None else r.d
        print(f"{r.model:<12}{r.sampler:<10}{d!s:>3}  {r.hit[0]:6.3f}{r.hit[2]:7.3f}{r.hit[4]:7.3f}  {r.snr[0]:6.3f}  {lat:>8}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            cfg = load_config(args.config)
            if args.out:
                cfg.out_dir = args.out
            path = Path(args.path) if args.path else Path(cfg.out_dir) / "ablation.csv"
            for row in pipeline.run_report(path):
                if row["k"] in ("1", "3", "5"):
                    lat = row["latency_ms_per_user"]
                    print(f"{row.get('cell') or row['model']:<24} k={row['k']} hit={row['hit_at_k']:.3f} "
                          f"snr={row['snr_ratio_at_k'] if row['snr_ratio_at_k'] is None else round(row['snr_ratio_at_k'], 3)} "
                          f"latency_ms={'' if lat is None else round(lat, 4)} seeds={row['n_seeds']}")
            return 0
        cfg = _resolve(args)
        if args.command == "scene":
            s = pipeline.run_scene(cfg)
            print(f"scene written to {cfg.out_dir}: {s['n_ue']} UEs, LOS {s['n_los']} "
                  f"({100 * s['n_los'] / s['n_ue']:.1f}%), NLOS {s['n_nlos']}, zero-power {s['n_zero_power']}, "
                  f"train/val {s['n_train']}/{s['n_val']}")
        elif args.command == "train":
            for name in pipeline.run_train(cfg):
                print(f"trained {name}")
        elif args.command == "eval":
            _print_reports(pipeline.run_eval(cfg))
            print(f"report: {pipeline.RunLayout(cfg.out_dir).report}")
        elif args.command == "ablate":
            rows = pipeline.run_ablate(cfg, args.seeds, args.train_missing)
            print(f"{len(rows)} rows written to {Path(cfg.out_dir) / 'ablation.csv'}")
    except BeamPriorError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
