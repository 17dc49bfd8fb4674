"""DDPM / DDIM reverse processes that turn a trained denoiser into beam priors.

Noise for each UE comes from its own stream seeded by ``(seed, ue_id)``, so
batching and worker count never change the result.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffusion import NoiseSchedule, decode_prior
from .errors import ConfigError, NumericError

CHUNK = 256  # fixed batch so per-UE results do not depend on how work is split


@dataclass(frozen=True)
class SamplerConfig:
    kind: str = "ddpm"
    steps: int | None = None  # ddpm: T; ddim: 50
    eta: float = 0.0
    seed: int = 0
    n_samples: int = 1

    def __post_init__(self):
        if self.kind not in ("ddpm", "ddim"):
            raise ConfigError(f"unknown sampler {self.kind!r}")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError(f"eta must lie in [0, 1], got {self.eta}")
        if self.steps is not None and self.steps < 1:
            raise ConfigError(f"steps must be positive, got {self.steps}")
        if self.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")

    def resolved_steps(self, T: int) -> int:
        steps = self.steps if self.steps is not None else (T if self.kind == "ddpm" else 50)
        if steps > T:
            raise ConfigError(f"{self.kind} steps={steps} exceeds schedule length T={T}")
        if self.kind == "ddpm" and steps != T:
            raise ConfigError(f"ddpm uses every step of the schedule (T={T}), got steps={steps}")
        return steps

    @property
    def label(self) -> str:
        return self.kind if self.steps is None else f"{self.kind}-{self.steps}"


def ddim_ladder(T: int, steps: int) -> np.ndarray:
    """Ascending timesteps ``0, s, 2s, ...`` with stride ``s = T // steps``."""
    if not 1 <= steps <= T:
        raise ConfigError(f"DDIM steps must be in [1, {T}], got {steps}")
    return np.arange(steps) * (T // steps)


def _check_model(model, x, sched):
    trained_T = getattr(model, "trained_T", None)
    if trained_T is not None and trained_T != sched.T:
        raise ConfigError(f"model was trained with T={trained_T}, schedule has T={sched.T}")


def ddpm_sample(model, x, sched: NoiseSchedule, rng=None, noise=None):
    """Ancestral sampling over all T steps; returns ``z0_hat`` of shape ``(n, n_beam)``.

    ``noise`` (shape ``(n, T, n_beam)``) supplies ``y_T`` in slot 0 and the step
    noise for t = T-1..1 in slots 1..T-1. Otherwise it is drawn from ``rng``.
    """
    _check_model(model, x, sched)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n, nb, T = len(x), model.n_beam, sched.T
    if noise is None:
        rng = rng if rng is not None else np.random.default_rng()
        noise = rng.standard_normal((n, T, nb))
    beta, alpha, ab = sched.beta, sched.alpha, sched.alpha_bar
    sigma = np.sqrt(sched.sigma2)
    y = noise[:, 0, :].copy()
    for i, t in enumerate(range(T - 1, -1, -1)):
        eps = model.predict(y, x, np.full(n, t))
        y = (y - beta[t] / np.sqrt(1.0 - ab[t]) * eps) / np.sqrt(alpha[t])
        if t > 0:
            y += sigma[t] * noise[:, i + 1, :]
    return y


def ddim_sample(model, x, sched: NoiseSchedule, steps: int = 50, eta: float = 0.0, rng=None, noise=None):
    """DDIM on a uniform-stride ladder; deterministic given ``y_T`` when ``eta == 0``.

    ``noise`` has shape ``(n, k, n_beam)``: slot 0 is ``y_T``, further slots
    (needed only for ``eta > 0``) feed the stochastic term.
    """
    _check_model(model, x, sched)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n, nb = len(x), model.n_beam
    ladder = ddim_ladder(sched.T, steps)
    if noise is None:
        rng = rng if rng is not None else np.random.default_rng()
        noise = rng.standard_normal((n, 1 if eta == 0 else steps, nb))
    ab = sched.alpha_bar
    y = noise[:, 0, :].copy()
    for i in range(len(ladder) - 1, -1, -1):
        t = ladder[i]
        ab_next = ab[ladder[i - 1]] if i > 0 else 1.0
        eps = model.predict(y, x, np.full(n, t))
        z0 = (y - np.sqrt(1.0 - ab[t]) * eps) / np.sqrt(ab[t])
        if eta == 0 or i == 0:
            y = np.sqrt(ab_next) * z0 + np.sqrt(1.0 - ab_next) * eps
        else:
            s = eta * np.sqrt((1.0 - ab_next) / (1.0 - ab[t]) * (1.0 - ab[t] / ab_next))
            y = np.sqrt(ab_next) * z0 + np.sqrt(1.0 - ab_next - s**2) * eps + s * noise[:, len(ladder) - i, :]
    return y


def normalize_prior(z0_hat) -> np.ndarray:
    """Map diffusion output back to a distribution: invert ``2p-1``, clamp at 0, L1-normalise."""
    z = np.asarray(z0_hat, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NumericError("sampled beam vector contains non-finite values")
    p = np.maximum(decode_prior(z), 0.0)
    total = p.sum(axis=-1, keepdims=True)
    uniform = np.full_like(p, 1.0 / p.shape[-1])
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(total < 1e-9, uniform, p / total)


def ue_noise(seed: int, ue_ids, draws: int, n_beam: int = 8, sample_index: int = 0) -> np.ndarray:
    """Per-UE standard-normal blocks ``(n, draws, n_beam)`` from streams keyed on ``(seed, ue_id)``."""
    out = np.empty((len(ue_ids), draws, n_beam))
    for i, u in enumerate(ue_ids):
        key = [int(seed), int(u)] + ([int(sample_index)] if sample_index else [])
        out[i] = np.random.default_rng(key).standard_normal((draws, n_beam))
    return out


def _sample_chunk(model, x, sched, cfg: SamplerConfig, ue_ids):
    steps = cfg.resolved_steps(sched.T)
    acc = None
    for s in range(cfg.n_samples):
        if cfg.kind == "ddpm":
            z = ddpm_sample(model, x, sched, noise=ue_noise(cfg.seed, ue_ids, sched.T, model.n_beam, s))
        else:
            draws = 1 if cfg.eta == 0 else steps
            z = ddim_sample(model, x, sched, steps, cfg.eta, noise=ue_noise(cfg.seed, ue_ids, draws, model.n_beam, s))
        p = normalize_prior(z)
        acc = p if acc is None else acc + p
    return acc / cfg.n_samples


def _worker(args):
    return _sample_chunk(*args)


def sample_priors(model, x, sched: NoiseSchedule, cfg: SamplerConfig, ue_ids, jobs: int = 1) -> np.ndarray:
    """Beam priors for every row of ``x`` (already normalised conditioning)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    ue_ids = np.asarray(ue_ids)
    if len(ue_ids) != len(x):
        raise ConfigError("need one ue_id per conditioning row")
    cfg.resolved_steps(sched.T)
    bounds = [(i, min(i + CHUNK, len(x))) for i in range(0, len(x), CHUNK)]
    tasks = [(model, x[a:b], sched, cfg, ue_ids[a:b]) for a, b in bounds]
    if jobs <= 1 or len(tasks) <= 1:
        parts = [_worker(t) for t in tasks]
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_worker, tasks))
    return np.concatenate(parts) if parts else np.zeros((0, model.n_beam))
