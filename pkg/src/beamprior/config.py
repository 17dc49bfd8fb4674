"""Run configuration: a versioned YAML document plus environment overrides.

Schema (version 1), all keys optional::

    version: 1
    out_dir: runs/default          # env BEAMPRIOR_OUT_DIR
    jobs: null                     # env BEAMPRIOR_JOBS; null = logical cores
    seed: 0                        # split, init, training and sampling seed
    scene_seed: 7
    scene: {n_t: 32, n_beam: 8, n_blockers: 5, n_reflectors: 4, ...}
    dims: [3, 5, 7]
    variants: [mlp_small, mlp_large, unet]
    samplers: [{kind: ddpm}, {kind: ddim, steps: 50, eta: 0.0}]
    train: {epochs: 20, lr: 0.001, T: 500, beta_start: 0.0001, beta_end: 0.02}
    baselines: [classifier, regressor]
    split_ratio: 0.9
    n_samples: 1
    timing: false
    timing_reps: 5
    aoa_angle: aod                 # angle used by the AoA heuristic: aod | aoa
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace

import yaml

from .diffusion import VARIANTS, TrainConfig
from .errors import ConfigError
from .io import stable_hash
from .sampling import SamplerConfig
from .scene import SceneConfig

CONFIG_VERSION = 1


def _default_samplers():
    return [{"kind": "ddpm"}, {"kind": "ddim", "steps": 50, "eta": 0.0}]


@dataclass
class RunConfig:
    version: int = CONFIG_VERSION
    out_dir: str = "runs/default"
    jobs: int | None = None
    seed: int = 0
    scene_seed: int = 7
    scene: SceneConfig = field(default_factory=SceneConfig)
    dims: list = field(default_factory=lambda: [3, 5, 7])
    variants: list = field(default_factory=lambda: ["mlp_small", "mlp_large", "unet"])
    samplers: list = field(default_factory=_default_samplers)
    train: dict = field(default_factory=dict)
    baselines: list = field(default_factory=lambda: ["classifier", "regressor"])
    split_ratio: float = 0.9
    n_samples: int = 1
    timing: bool = False
    timing_reps: int = 5
    aoa_angle: str = "aod"

    def validate(self) -> "RunConfig":
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"config version {self.version} is not supported (expected {CONFIG_VERSION})")
        bad = [d for d in self.dims if d not in (3, 5, 7)]
        if bad or not self.dims:
            raise ConfigError(f"dims must be a non-empty subset of [3, 5, 7], got {self.dims}")
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad:
            raise ConfigError(f"unknown variants {bad}; choose from {sorted(VARIANTS)}")
        bad = [b for b in self.baselines if b not in ("classifier", "regressor")]
        if bad:
            raise ConfigError(f"unknown baselines {bad}")
        if self.aoa_angle not in ("aod", "aoa"):
            raise ConfigError(f"aoa_angle must be 'aod' or 'aoa', got {self.aoa_angle!r}")
        if self.jobs is not None and self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.timing_reps < 1:
            raise ConfigError("timing_reps must be >= 1")
        if self.scene.n_t % self.scene.n_beam:
            raise ConfigError(f"n_beam={self.scene.n_beam} must divide n_t={self.scene.n_t}")
        self.train_config()
        self.sampler_configs()
        return self

    def train_config(self, **overrides) -> TrainConfig:
        try:
            return TrainConfig(**{"seed": self.seed, **self.train, **overrides})
        except TypeError as e:
            raise ConfigError(f"bad train section: {e}") from e

    def sampler_configs(self) -> list[SamplerConfig]:
        try:
            return [SamplerConfig(**{"seed": self.seed, "n_samples": self.n_samples, **s}) for s in self.samplers]
        except TypeError as e:
            raise ConfigError(f"bad sampler entry: {e}") from e

    @property
    def n_jobs(self) -> int:
        return self.jobs or os.cpu_count() or 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scene"] = self.scene.to_dict()
        return d

    def content_hash(self) -> str:
        """Hash of everything that determines outputs (paths and parallelism excluded)."""
        d = self.to_dict()
        for k in ("out_dir", "jobs", "timing", "timing_reps"):
            d.pop(k)
        return stable_hash(d)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)


def from_dict(d: dict | None) -> RunConfig:
    d = dict(d or {})
    known = {f.name for f in fields(RunConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "scene" in d:
        d["scene"] = SceneConfig.from_dict(d["scene"] or {})
    try:
        return RunConfig(**d)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def load_config(path=None, env=None) -> RunConfig:
    env = os.environ if env is None else env
    data = {}
    if path:
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"config {path} is not valid YAML: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must be a mapping")
    cfg = from_dict(data)
    if env.get("BEAMPRIOR_OUT_DIR"):
        cfg.out_dir = env["BEAMPRIOR_OUT_DIR"]
    if env.get("BEAMPRIOR_JOBS"):
        try:
            cfg.jobs = int(env["BEAMPRIOR_JOBS"])
        except ValueError as e:
            raise ConfigError(f"BEAMPRIOR_JOBS must be an integer: {env['BEAMPRIOR_JOBS']!r}") from e
    return cfg


def with_scene(cfg: RunConfig, **scene_overrides) -> RunConfig:
    return replace(cfg, scene=replace(cfg.scene, **scene_overrides))
