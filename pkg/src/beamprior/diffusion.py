"""Noise schedule, forward corruption, conditional denoisers and their training loop.

Denoisers predict the injected noise from ``(y_t, x, t)``. Beam priors are
diffused in the affine target space ``z0 = 2p - 1``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DataError, NumericError, ShapeError, TrainingDivergence
from .nn import AdamWState, DenseNet, adamw_step, assign_params, load_checkpoint, save_checkpoint, sinusoidal_embedding

log = logging.getLogger(__name__)

TIME_DIM = 64
EMB_DIM = 128


# --- schedule ----------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray
    beta_start: float = 1e-4
    beta_end: float = 0.02

    @property
    def T(self) -> int:
        return len(self.beta)

    @property
    def alpha(self) -> np.ndarray:
        return 1.0 - self.beta

    @property
    def alpha_bar(self) -> np.ndarray:
        return np.cumprod(1.0 - self.beta)

    @property
    def sigma2(self) -> np.ndarray:
        """Posterior variance ``beta_t (1 - abar_{t-1}) / (1 - abar_t)``; zero at t = 0."""
        ab = self.alpha_bar
        ab_prev = np.concatenate([[1.0], ab[:-1]])
        return self.beta * (1.0 - ab_prev) / (1.0 - ab)

    def describe(self) -> dict:
        return {"T": self.T, "beta_start": self.beta_start, "beta_end": self.beta_end}


def linear_schedule(T: int = 500, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    if not 0.0 < beta_start < beta_end < 1.0:
        raise ConfigError(f"need 0 < beta_start < beta_end < 1, got ({beta_start}, {beta_end})")
    return NoiseSchedule(np.linspace(beta_start, beta_end, T), beta_start, beta_end)


def forward_noise(y0, t, eps, sched: NoiseSchedule):
    """``sqrt(abar_t) y0 + sqrt(1 - abar_t) eps``; ``t`` may be per-row."""
    t = np.asarray(t)
    if (t < 0).any() or (t >= sched.T).any():
        raise ConfigError(f"timestep out of range [0, {sched.T})")
    ab = sched.alpha_bar[t]
    if ab.ndim:
        ab = ab[:, None]
    return np.sqrt(ab) * y0 + np.sqrt(1.0 - ab) * eps


def encode_prior(p):
    return 2.0 * np.asarray(p) - 1.0


def decode_prior(z):
    return (np.asarray(z) + 1.0) / 2.0


# --- denoisers ---------------------------------------------------------------

def _rows(a):
    a = np.asarray(a, dtype=np.float64)
    return a[None, :] if a.ndim == 1 else a


class _Denoiser:
    variant: str
    cond_dim: int
    n_beam: int

    def _embed(self, x, t):
        x = _rows(x)
        if x.shape[1] != self.cond_dim:
            raise ShapeError(f"{self.variant} expects {self.cond_dim}-dim conditioning, got {x.shape[1]}")
        t = np.broadcast_to(np.asarray(t), (len(x),))
        te, tc = self.time_net.forward(sinusoidal_embedding(t, TIME_DIM))
        xe, xc = self.cond_net.forward(x)
        return xe, te, (xc, tc)

    def _embed_backward(self, caches, g_xe, g_te):
        xc, tc = caches
        gx, _ = self.cond_net.backward(xc, g_xe)
        gt, _ = self.time_net.backward(tc, g_te)
        return gt + gx

    @property
    def param_count(self) -> int:
        return sum(p.size for p in self.params())

    def predict(self, y_t, x, t):
        single = np.ndim(y_t) == 1
        out = self.forward(_rows(y_t), x, t)[0]
        return out[0] if single else out


class MLPDenoiser(_Denoiser):
    """Embeds t and x, concatenates them with y_t and runs a ReLU MLP trunk."""

    def __init__(self, cond_dim, hidden=256, depth=3, n_beam=8, rng=None, variant="mlp"):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.variant, self.cond_dim, self.n_beam = variant, cond_dim, n_beam
        self.hidden, self.depth = hidden, depth
        self.time_net = DenseNet.build([TIME_DIM, EMB_DIM], rng, output="relu")
        self.cond_net = DenseNet.build([cond_dim, EMB_DIM], rng, output="relu")
        self.trunk = DenseNet.build([n_beam + 2 * EMB_DIM] + [hidden] * depth + [n_beam], rng)

    def params(self):
        return self.time_net.params() + self.cond_net.params() + self.trunk.params()

    def forward(self, y_t, x, t):
        xe, te, emb_cache = self._embed(x, t)
        y_t = _rows(y_t)
        if y_t.shape != (len(xe), self.n_beam):
            raise ShapeError(f"y_t shape {y_t.shape} != ({len(xe)}, {self.n_beam})")
        out, trunk_cache = self.trunk.forward(np.concatenate([y_t, xe, te], axis=1))
        return out, (emb_cache, trunk_cache)

    def backward(self, cache, grad_out):
        emb_cache, trunk_cache = cache
        g_trunk, g_in = self.trunk.backward(trunk_cache, grad_out)
        nb = self.n_beam
        return self._embed_backward(emb_cache, g_in[:, nb : nb + EMB_DIM], g_in[:, nb + EMB_DIM :]) + g_trunk

    def describe(self):
        return {"kind": "mlp", "variant": self.variant, "cond_dim": self.cond_dim, "n_beam": self.n_beam,
                "hidden": self.hidden, "depth": self.depth}


class UNetDenoiser(_Denoiser):
    """Dense encoder-decoder with additive skips; the (x, t) embedding is added at every level."""

    def __init__(self, cond_dim, widths=(256, 512, 1024), n_beam=8, rng=None, variant="unet"):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.variant, self.cond_dim, self.n_beam = variant, cond_dim, n_beam
        self.widths = tuple(widths)
        w0, w1, w2 = self.widths
        lin = lambda a, b: DenseNet.build([a, b], rng)  # noqa: E731
        self.time_net = DenseNet.build([TIME_DIM, EMB_DIM], rng, output="relu")
        self.cond_net = DenseNet.build([cond_dim, EMB_DIM], rng, output="relu")
        self.enc = [lin(n_beam, w0), lin(w0, w1), lin(w1, w2)]
        self.dec = [lin(w2, w1), lin(w1, w0)]
        self.inject = [lin(2 * EMB_DIM, w) for w in (w0, w1, w2, w1, w0)]
        self.head = lin(w0, n_beam)

    def _blocks(self):
        return [self.time_net, self.cond_net, *self.enc, *self.dec, *self.inject, self.head]

    def params(self):
        return [p for b in self._blocks() for p in b.params()]

    def forward(self, y_t, x, t):
        xe, te, emb_cache = self._embed(x, t)
        c = np.concatenate([xe, te], axis=1)
        y_t = _rows(y_t)
        if y_t.shape != (len(c), self.n_beam):
            raise ShapeError(f"y_t shape {y_t.shape} != ({len(c)}, {self.n_beam})")
        caches = {}

        def level(name, net, h, inj):
            a, caches[name] = net.forward(h)
            b, caches[name + "c"] = self.inject[inj].forward(c)
            pre = a + b
            caches[name + "pre"] = pre
            return np.maximum(pre, 0.0)

        h0 = level("e0", self.enc[0], y_t, 0)
        h1 = level("e1", self.enc[1], h0, 1)
        h2 = level("e2", self.enc[2], h1, 2)
        u1 = level("d0", self.dec[0], h2, 3) + h1
        u0 = level("d1", self.dec[1], u1, 4) + h0
        out, caches["head"] = self.head.forward(u0)
        return out, (emb_cache, caches)

    def backward(self, cache, grad_out):
        emb_cache, caches = cache
        grads = {}
        g_c = 0.0

        def level_back(name, net, inj, g_act):
            nonlocal g_c
            g_pre = g_act * (caches[name + "pre"] > 0)
            grads[name], g_h = net.backward(caches[name], g_pre)
            grads[name + "c"], gc = self.inject[inj].backward(caches[name + "c"], g_pre)
            g_c = g_c + gc
            return g_h

        grads["head"], g_u0 = self.head.backward(caches["head"], grad_out)
        g_u1 = level_back("d1", self.dec[1], 4, g_u0)
        g_h0 = g_u0
        g_h2 = level_back("d0", self.dec[0], 3, g_u1)
        g_h1 = g_u1 + level_back("e2", self.enc[2], 2, g_h2)
        g_h0 = g_h0 + level_back("e1", self.enc[1], 1, g_h1)
        level_back("e0", self.enc[0], 0, g_h0)
        emb = self._embed_backward(emb_cache, g_c[:, :EMB_DIM], g_c[:, EMB_DIM:])
        order = ["e0", "e1", "e2", "d0", "d1", "e0c", "e1c", "e2c", "d0c", "d1c", "head"]
        return emb + [g for k in order for g in grads[k]]

    def describe(self):
        return {"kind": "unet", "variant": self.variant, "cond_dim": self.cond_dim, "n_beam": self.n_beam,
                "widths": list(self.widths)}


VARIANTS = {
    "mlp_small": {"kind": "mlp", "hidden": 256, "depth": 3, "batch_size": 256},
    "mlp_large": {"kind": "mlp", "hidden": 512, "depth": 5, "batch_size": 512},
    "unet": {"kind": "unet", "widths": (256, 512, 1024), "batch_size": 512},
}

PARAM_WINDOWS = {"mlp_small": (0.16e6, 0.31e6), "mlp_large": (1.0e6, 1.8e6), "unet": (1.3e6, 2.4e6)}


def make_denoiser(variant: str, cond_dim: int, seed: int = 0, n_beam: int = 8):
    if variant not in VARIANTS:
        raise ConfigError(f"unknown denoiser variant {variant!r}; expected one of {sorted(VARIANTS)}")
    spec = VARIANTS[variant]
    rng = np.random.default_rng(seed)
    if spec["kind"] == "mlp":
        return MLPDenoiser(cond_dim, spec["hidden"], spec["depth"], n_beam, rng, variant)
    return UNetDenoiser(cond_dim, spec["widths"], n_beam, rng, variant)


def denoiser_from_description(desc: dict):
    if desc.get("kind") == "mlp":
        return MLPDenoiser(desc["cond_dim"], desc["hidden"], desc["depth"], desc["n_beam"], variant=desc["variant"])
    if desc.get("kind") == "unet":
        return UNetDenoiser(desc["cond_dim"], desc["widths"], desc["n_beam"], variant=desc["variant"])
    raise DataError(f"unknown denoiser architecture {desc!r}")


def denoise_predict(model, y_t, x, t):
    """Predicted noise for a single ``(y_t, x, t)`` or a batch of them."""
    out = model.predict(y_t, x, t)
    if not np.all(np.isfinite(out)):
        raise NumericError(f"{model.variant} produced non-finite noise estimates")
    return out


# --- training ----------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 20
    lr: float = 1e-3
    batch_size: int | None = None  # None: per-variant default
    T: int = 500
    beta_start: float = 1e-4
    beta_end: float = 0.02
    weight_decay: float = 1e-2
    seed: int = 0
    t_range: tuple | None = None  # restrict timestep draws to [lo, hi)

    def __post_init__(self):
        if self.epochs < 1 or self.lr <= 0 or self.T < 1 or (self.batch_size is not None and self.batch_size < 1):
            raise ConfigError(f"invalid training config: {self}")

    def schedule(self) -> NoiseSchedule:
        return linear_schedule(self.T, self.beta_start, self.beta_end)

    def to_dict(self):
        d = asdict(self)
        d["t_range"] = None if self.t_range is None else list(self.t_range)
        return d


@dataclass
class TrainResult:
    model: object
    loss_trace: list = field(default_factory=list)
    schedule: NoiseSchedule | None = None


def _batch_size(model, cfg: TrainConfig) -> int:
    if cfg.batch_size:
        return cfg.batch_size
    return VARIANTS.get(model.variant, {}).get("batch_size", 256)


def train(model, x, prior, config: TrainConfig | None = None) -> TrainResult:
    """Minimise the noise-prediction MSE on ``(x, prior)`` pairs with AdamW.

    ``x`` are (normalised) conditioning vectors, ``prior`` the target beam
    priors. Returns the epoch-mean loss trace.
    """
    cfg = config or TrainConfig()
    sched = cfg.schedule()
    x = _rows(x)
    z0 = encode_prior(_rows(prior))
    n = len(x)
    if n == 0:
        raise DataError("training split is empty")
    if len(z0) != n:
        raise ShapeError(f"{n} conditioning rows but {len(z0)} targets")
    lo, hi = cfg.t_range if cfg.t_range else (0, sched.T)
    if not 0 <= lo < hi <= sched.T:
        raise ConfigError(f"t_range {cfg.t_range} outside [0, {sched.T})")
    sqrt_ab = np.sqrt(sched.alpha_bar)
    sqrt_1mab = np.sqrt(1.0 - sched.alpha_bar)
    bs = _batch_size(model, cfg)
    model.trained_T = sched.T
    rng = np.random.default_rng(cfg.seed)
    params = model.params()
    state = AdamWState.for_params(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    trace = []
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n)
        total = 0.0
        for step, start in enumerate(range(0, n, bs)):
            idx = perm[start : start + bs]
            b = len(idx)
            t = rng.integers(lo, hi, size=b)
            eps = rng.standard_normal((b, model.n_beam))
            y_t = sqrt_ab[t, None] * z0[idx] + sqrt_1mab[t, None] * eps
            out, cache = model.forward(y_t, x[idx], t)
            diff = out - eps
            loss = float(np.einsum("ij,ij->", diff, diff)) / b
            if not math.isfinite(loss):
                raise TrainingDivergence(epoch, step, loss)
            grads = model.backward(cache, 2.0 * diff / b)
            adamw_step(params, grads, state)
            total += loss * b
        trace.append(total / n)
        log.info("%s epoch %d/%d loss %.5f", model.variant, epoch, cfg.epochs, trace[-1])
    return TrainResult(model, trace, sched)


# --- checkpoints -------------------------------------------------------------

def save_denoiser(path, model, schedule: NoiseSchedule, normalizer=None, metadata=None) -> None:
    meta = dict(metadata or {})
    meta["schedule"] = schedule.describe()
    meta["normalizer"] = normalizer.to_dict() if normalizer is not None else None
    save_checkpoint(path, {"model": "denoiser", **model.describe()}, model.params(), meta)


def load_denoiser(path):
    """Return ``(model, schedule, normalizer, metadata)``."""
    from .dataset import FeatureNormalizer

    arch, params, meta = load_checkpoint(path)
    if arch.get("model") != "denoiser":
        raise DataError(f"{path}: checkpoint holds a {arch.get('model')!r}, not a denoiser")
    model = denoiser_from_description(arch)
    assign_params(model.params(), params)
    s = meta["schedule"]
    sched = linear_schedule(s["T"], s["beta_start"], s["beta_end"])
    model.trained_T = sched.T
    norm = FeatureNormalizer.from_dict(meta["normalizer"]) if meta.get("normalizer") else None
    return model, sched, norm, meta
