"""End-to-end stages used by the CLI: scene, train, eval, ablate, report."""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import baselines as bl
from .codebook import dft_codebook
from .config import RunConfig
from .dataset import FEATURE_DIMS, BeamDataset, build_dataset, fit_normalizer, load_dataset, save_dataset, split_dataset
from .diffusion import load_denoiser, make_denoiser, save_denoiser, train
from .errors import DataError
from .io import atomic_write_text
from .metrics import REPORT_COLUMNS, MetricsReport, evaluate, reports_to_csv, reports_to_json
from .sampling import SamplerConfig, sample_priors
from .scene import generate_scene, scene_summary, trace_all, write_rays_csv

log = logging.getLogger(__name__)

ABLATION_COLUMNS = ["panel", "cell"] + REPORT_COLUMNS


class RunLayout:
    def __init__(self, out_dir):
        self.root = Path(out_dir)

    config = property(lambda s: s.root / "config.yaml")
    rays = property(lambda s: s.root / "rays.csv")
    dataset = property(lambda s: s.root / "dataset.json")
    scene = property(lambda s: s.root / "scene.json")
    codebook = property(lambda s: s.root / "codebook.csv")
    report = property(lambda s: s.root / "report.csv")
    summary = property(lambda s: s.root / "summary.json")
    ablation = property(lambda s: s.root / "ablation.csv")

    def checkpoint(self, name, d) -> Path:
        return self.root / "checkpoints" / f"{name}_d{d}.ckpt"

    def loss_trace(self, name, d) -> Path:
        return self.root / "loss" / f"{name}_d{d}.csv"


def write_config(cfg: RunConfig) -> None:
    atomic_write_text(RunLayout(cfg.out_dir).config, cfg.dump())


# --- scene -------------------------------------------------------------------

def run_scene(cfg: RunConfig) -> dict:
    """Generate the scene, trace it, and write rays, dataset, scene and codebook files."""
    cfg.validate()
    lay = RunLayout(cfg.out_dir)
    scene = generate_scene(cfg.scene, cfg.scene_seed)
    cb = dft_codebook(cfg.scene.n_t, cfg.scene.n_beam)
    paths = trace_all(scene, cfg.n_jobs)
    ds = build_dataset(scene, cb, FEATURE_DIMS, paths=paths)
    ds = split_dataset(ds, cfg.split_ratio, cfg.seed)
    ds.meta["config_hash"] = cfg.content_hash()
    write_config(cfg)
    write_rays_csv(lay.rays, ds.ue_id, ds.position, paths)
    save_dataset(ds, lay.dataset)
    atomic_write_text(lay.scene, json.dumps(scene_summary(scene), indent=2, sort_keys=True))
    atomic_write_text(lay.codebook, cb.to_csv())
    return {
        "n_ue": len(ds),
        "n_los": int(ds.los.sum()),
        "n_nlos": int((~ds.los).sum()),
        "n_zero_power": int(ds.zero_power.sum()),
        "n_train": int(ds.is_train.sum()),
        "n_val": int((~ds.is_train).sum()),
    }


def load_run_dataset(cfg: RunConfig) -> BeamDataset:
    path = RunLayout(cfg.out_dir).dataset
    if not path.exists():
        raise DataError(f"no dataset at {path}; run the 'scene' command first")
    return load_dataset(path)


# --- train -------------------------------------------------------------------

def _write_loss(path, trace) -> None:
    atomic_write_text(path, "epoch,mean_loss\n" + "".join(f"{i + 1},{v!r}\n" for i, v in enumerate(trace)))


def train_denoiser_cell(cfg: RunConfig, ds: BeamDataset, variant: str, d: int):
    lay = RunLayout(cfg.out_dir)
    tr = ds.train()
    norm = fit_normalizer(tr.features[d])
    tcfg = cfg.train_config()
    model = make_denoiser(variant, d, cfg.seed, ds.n_beam)
    res = train(model, norm.apply(tr.features[d]), tr.prior, tcfg)
    meta = {"seed": cfg.seed, "epochs": tcfg.epochs, "cond_dim": d, "variant": variant,
            "config_hash": cfg.content_hash(), "loss_trace": res.loss_trace}
    save_denoiser(lay.checkpoint(variant, d), model, res.schedule, norm, meta)
    _write_loss(lay.loss_trace(variant, d), res.loss_trace)
    return res


def train_baseline_cell(cfg: RunConfig, ds: BeamDataset, kind: str, d: int):
    lay = RunLayout(cfg.out_dir)
    tr = ds.train()
    norm = fit_normalizer(tr.features[d])
    tcfg = cfg.train_config(batch_size=None)
    x = norm.apply(tr.features[d])
    if kind == "classifier":
        model = bl.train_classifier(x, tr.best_beam, tcfg, ds.n_beam)
    else:
        model = bl.train_regressor(x, tr.prior, tcfg)
    bl.save_baseline(lay.checkpoint(kind, d), model, norm,
                     {"cond_dim": d, "config_hash": cfg.content_hash()})
    _write_loss(lay.loss_trace(kind, d), model.loss_trace)
    return model


def run_train(cfg: RunConfig) -> list[str]:
    """Train every (variant, d) denoiser and every (baseline, d) model in the config."""
    cfg.validate()
    ds = load_run_dataset(cfg)
    done = []
    for d in cfg.dims:
        for variant in cfg.variants:
            log.info("training %s d=%d", variant, d)
            train_denoiser_cell(cfg, ds, variant, d)
            done.append(f"{variant}_d{d}")
        for kind in cfg.baselines:
            log.info("training %s d=%d", kind, d)
            train_baseline_cell(cfg, ds, kind, d)
            done.append(f"{kind}_d{d}")
    write_config(cfg)
    return done


# --- eval --------------------------------------------------------------------

def diffusion_prior_fn(model, sched, norm, d, scfg: SamplerConfig, jobs=1):
    def fn(val):
        return sample_priors(model, norm.apply(val.features[d]), sched, scfg, val.ue_id, jobs)
    return fn


def baseline_prior_fn(model, norm, d):
    return lambda val: bl.predict_prior(model, norm.apply(val.features[d]))


def reference_prior_fns(cfg: RunConfig):
    cb = dft_codebook(cfg.scene.n_t, cfg.scene.n_beam)
    seed = cfg.seed

    def aoa(val):
        angle = val.strongest_aod if cfg.aoa_angle == "aod" else val.strongest_aoa
        return bl.aoa_prior(angle, val.n_paths > 0, cb, cfg.scene.spacing)

    def random(val):
        return np.stack([bl.random_prior(np.random.default_rng([seed, int(u), 1]), val.n_beam) for u in val.ue_id])

    return {
        "oracle": lambda val: val.prior,
        "uniform": lambda val: bl.uniform_prior(val.n_beam, len(val)),
        "random": random,
        "aoa": aoa,
    }


def evaluate_denoiser(cfg: RunConfig, val: BeamDataset, variant: str, d: int, scfg: SamplerConfig,
                      timing: bool | None = None) -> MetricsReport:
    path = RunLayout(cfg.out_dir).checkpoint(variant, d)
    if not path.exists():
        raise DataError(f"missing checkpoint for cell {variant}/d={d}/{scfg.label}: {path}")
    model, sched, norm, _ = load_denoiser(path)
    timing = cfg.timing if timing is None else timing
    jobs = 1 if timing else cfg.n_jobs
    steps = scfg.resolved_steps(sched.T)
    fn = diffusion_prior_fn(model, sched, norm, d, scfg, jobs)
    rep = evaluate(fn, val, model=variant, sampler=f"{scfg.kind}-{steps}", d=d, timing=timing, reps=cfg.timing_reps)
    rep.meta.update(param_count=model.param_count)
    return rep


def run_eval(cfg: RunConfig) -> list[MetricsReport]:
    """Evaluate references, trained baselines and every trained denoiser/sampler pair."""
    cfg.validate()
    lay = RunLayout(cfg.out_dir)
    val = load_run_dataset(cfg).val()
    reports = []
    for name, fn in reference_prior_fns(cfg).items():
        reports.append(evaluate(fn, val, model=name, timing=cfg.timing, reps=cfg.timing_reps))
    for d in cfg.dims:
        for kind in cfg.baselines:
            path = lay.checkpoint(kind, d)
            if not path.exists():
                log.warning("skipping %s d=%d: no checkpoint at %s", kind, d, path)
                continue
            model, norm, _ = bl.load_baseline(path)
            reports.append(evaluate(baseline_prior_fn(model, norm, d), val, model=kind, d=d,
                                    timing=cfg.timing, reps=cfg.timing_reps))
        for variant in cfg.variants:
            if not lay.checkpoint(variant, d).exists():
                log.warning("skipping %s d=%d: no checkpoint", variant, d)
                continue
            for scfg in cfg.sampler_configs():
                reports.append(evaluate_denoiser(cfg, val, variant, d, scfg))
    h = cfg.content_hash()
    atomic_write_text(lay.report, reports_to_csv(reports, cfg.seed, h))
    atomic_write_text(lay.summary, reports_to_json(reports, seed=cfg.seed, config_hash=h,
                                                   timing=cfg.timing))
    write_config(cfg)
    return reports


# --- ablation ----------------------------------------------------------------

def ablation_cells(dims):
    """(panel, cell, variant, d, sampler kind) for the conditioning x capacity grid and the
    sampler / architecture comparison at the richest conditioning."""
    cells = [("conditioning_capacity", f"{v}-d{d}-ddpm", v, d, "ddpm")
             for v in ("mlp_small", "mlp_large") for d in dims]
    top = max(dims)
    cells += [
        ("sampler_architecture", f"mlp_large-d{top}-ddpm", "mlp_large", top, "ddpm"),
        ("sampler_architecture", f"mlp_large-d{top}-ddim", "mlp_large", top, "ddim"),
        ("sampler_architecture", f"unet-d{top}-ddpm", "unet", top, "ddpm"),
    ]
    return cells


def _sampler_for(cfg: RunConfig, kind: str) -> SamplerConfig:
    for s in cfg.sampler_configs():
        if s.kind == kind:
            return s
    return SamplerConfig(kind, steps=None if kind == "ddpm" else 50, seed=cfg.seed, n_samples=cfg.n_samples)


def run_ablate(cfg: RunConfig, seeds=None, train_missing=False) -> list[dict]:
    """Ablation grid over one or more seeds; each seed lives in ``out_dir/seed_<s>``."""
    cfg.validate()
    seeds = [cfg.seed] if not seeds else list(seeds)
    root = Path(cfg.out_dir)
    rows = []
    for s in seeds:
        sub = replace(cfg, seed=s, out_dir=str(root / f"seed_{s}"))
        lay = RunLayout(sub.out_dir)
        if not lay.dataset.exists():
            if not train_missing:
                raise DataError(f"seed {s}: no dataset at {lay.dataset}; run scene/train or pass --train-missing")
            run_scene(sub)
        ds = load_run_dataset(sub)
        val = ds.val()
        h = sub.content_hash()
        reports = []
        for name in ("uniform", "random"):
            rep = evaluate(reference_prior_fns(sub)[name], val, model=name)
            reports.append(("reference", name, rep))
        for panel, cell, variant, d, kind in ablation_cells(sub.dims):
            ckpt = lay.checkpoint(variant, d)
            if not ckpt.exists():
                if not train_missing:
                    raise DataError(f"missing checkpoint for ablation cell {cell} (seed {s}): {ckpt}")
                log.info("seed %d: training %s for cell %s", s, variant, cell)
                train_denoiser_cell(sub, ds, variant, d)
            timing = sub.timing and panel == "sampler_architecture"
            rep = evaluate_denoiser(sub, val, variant, d, _sampler_for(sub, kind), timing=timing)
            reports.append((panel, cell, rep))
        for panel, cell, rep in reports:
            rows += [{"panel": panel, "cell": cell, **r} for r in rep.rows(s, h)]
        write_config(sub)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=ABLATION_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    atomic_write_text(root / "ablation.csv", buf.getvalue())
    return rows


def mean_over_seeds(rows, key=("panel", "cell", "model", "sampler", "d", "k")) -> list[dict]:
    """Average numeric metric columns over seeds for each (cell, k)."""
    groups: dict = {}
    for r in rows:
        groups.setdefault(tuple(str(r.get(k, "")) for k in key), []).append(r)
    out = []
    for gk, rs in groups.items():
        row = dict(zip(key, gk))
        for col in ("hit_at_k", "snr_ratio_at_k", "latency_ms_per_user"):
            vals = [float(r[col]) for r in rs if r.get(col) not in ("", None)]
            row[col] = float(np.mean(vals)) if vals else None
        row["n_seeds"] = len(rs)
        out.append(row)
    return out


def run_report(path) -> list[dict]:
    """Seed-averaged table of an ablation or report CSV, written next to it as ``*_mean.csv``."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"no results at {path}")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DataError(f"{path} has no rows")
    key = ("panel", "cell", "model", "sampler", "d", "k") if "cell" in rows[0] else ("model", "sampler", "d", "k")
    means = mean_over_seeds(rows, key)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(key) + ["hit_at_k", "snr_ratio_at_k", "latency_ms_per_user", "n_seeds"],
                       lineterminator="\n")
    w.writeheader()
    w.writerows(means)
    atomic_write_text(path.with_name(path.stem + "_mean.csv"), buf.getvalue())
    return means
