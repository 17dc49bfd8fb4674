"""Reference beam-prior generators: MLP classifier/regressor, AoA heuristic, uniform, random."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .codebook import Codebook
from .diffusion import TrainConfig
from .errors import ConfigError, DataError, ShapeError, TrainingDivergence
from .nn import AdamWState, DenseNet, adamw_step, assign_params, load_checkpoint, save_checkpoint, softmax

log = logging.getLogger(__name__)

BASELINE_HIDDEN = (256, 256)
BASELINE_BATCH = 512


@dataclass
class BaselineModel:
    kind: str  # "classifier" | "regressor"
    net: DenseNet
    loss_trace: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def cond_dim(self) -> int:
        return self.net.in_dim


def make_baseline(kind: str, cond_dim: int, n_beam: int = 8, seed: int = 0) -> BaselineModel:
    if kind not in ("classifier", "regressor"):
        raise ConfigError(f"unknown baseline kind {kind!r}")
    net = DenseNet.build([cond_dim, *BASELINE_HIDDEN, n_beam], np.random.default_rng(seed))
    return BaselineModel(kind, net)


def _cross_entropy(logits, labels):
    p = softmax(logits)
    n = len(labels)
    loss = -np.mean(np.log(np.maximum(p[np.arange(n), labels], 1e-300)))
    g = p.copy()
    g[np.arange(n), labels] -= 1.0
    return loss, g / n


def _mse(out, target):
    diff = out - target
    n = len(out)
    return float(np.einsum("ij,ij->", diff, diff)) / n, 2.0 * diff / n


def _fit(model: BaselineModel, x, target, loss_fn, cfg: TrainConfig) -> BaselineModel:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = len(x)
    if n == 0:
        raise DataError("training split is empty")
    if x.shape[1] != model.cond_dim:
        raise ShapeError(f"baseline expects {model.cond_dim}-dim inputs, got {x.shape[1]}")
    bs = cfg.batch_size or BASELINE_BATCH
    rng = np.random.default_rng(cfg.seed)
    params = model.net.params()
    state = AdamWState.for_params(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n)
        total = 0.0
        for step, start in enumerate(range(0, n, bs)):
            idx = perm[start : start + bs]
            out, cache = model.net.forward(x[idx])
            loss, g = loss_fn(out, target[idx])
            if not math.isfinite(loss):
                raise TrainingDivergence(epoch, step, loss)
            grads, _ = model.net.backward(cache, g)
            adamw_step(params, grads, state)
            total += loss * len(idx)
        model.loss_trace.append(total / n)
        log.info("%s epoch %d/%d loss %.5f", model.kind, epoch, cfg.epochs, model.loss_trace[-1])
    model.metadata.update(seed=cfg.seed, epochs=cfg.epochs, lr=cfg.lr)
    return model


def train_classifier(x, best_beam, config: TrainConfig | None = None, n_beam: int = 8) -> BaselineModel:
    """Cross-entropy on the optimal-beam labels."""
    cfg = config or TrainConfig()
    model = make_baseline("classifier", np.atleast_2d(x).shape[1], n_beam, cfg.seed)
    return _fit(model, x, np.asarray(best_beam, dtype=np.int64), _cross_entropy, cfg)


def train_regressor(x, prior, config: TrainConfig | None = None) -> BaselineModel:
    """MSE against the full ground-truth prior."""
    cfg = config or TrainConfig()
    prior = np.atleast_2d(np.asarray(prior, dtype=np.float64))
    model = make_baseline("regressor", np.atleast_2d(x).shape[1], prior.shape[1], cfg.seed)
    return _fit(model, x, prior, _mse, cfg)


def _check_dim(model: BaselineModel, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.cond_dim:
        raise ShapeError(f"{model.kind} expects {model.cond_dim}-dim conditioning, got {x.shape[-1]}")
    return x


def predict_prior_classifier(model: BaselineModel, x) -> np.ndarray:
    return softmax(model.net(_check_dim(model, x)))


def predict_prior_regressor(model: BaselineModel, x) -> np.ndarray:
    """Clamp at zero and L1-normalise (uniform if everything clamps)."""
    out = model.net(_check_dim(model, x))
    p = np.maximum(out, 0.0)
    total = p.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(total < 1e-12, 1.0 / p.shape[-1], p / total)


def predict_prior(model: BaselineModel, x) -> np.ndarray:
    if model.kind == "classifier":
        return predict_prior_classifier(model, x)
    return predict_prior_regressor(model, x)


def aoa_prior(angle, has_path, codebook: Codebook, spacing: float = 0.5) -> np.ndarray:
    """One-hot on the beam whose steering sine is nearest ``sin(angle)``; uniform without paths.

    Works on scalars or arrays of angles. Ties go to the lower beam index.
    """
    angle = np.asarray(angle, dtype=np.float64)
    has_path = np.broadcast_to(np.asarray(has_path, dtype=bool), angle.shape)
    s = codebook.steering_sines(spacing)
    best = np.argmin(np.abs(np.sin(angle)[..., None] - s), axis=-1)
    out = np.eye(codebook.n_beam)[best]
    out[~has_path] = 1.0 / codebook.n_beam
    return out


def uniform_prior(n_beam: int = 8, n: int | None = None) -> np.ndarray:
    if n is None:
        return np.full(n_beam, 1.0 / n_beam)
    return np.full((n, n_beam), 1.0 / n_beam)


def random_prior(rng: np.random.Generator, n_beam: int = 8, n: int | None = None) -> np.ndarray:
    """Softmax of i.i.d. standard normals: strictly positive and sums to one."""
    shape = (n_beam,) if n is None else (n, n_beam)
    return softmax(rng.standard_normal(shape))


def save_baseline(path, model: BaselineModel, normalizer=None, metadata=None) -> None:
    meta = dict(model.metadata, **(metadata or {}))
    meta["normalizer"] = normalizer.to_dict() if normalizer is not None else None
    meta["loss_trace"] = model.loss_trace
    arch = {"model": "baseline", "kind": model.kind, **model.net.describe()}
    save_checkpoint(path, arch, model.net.params(), meta)


def load_baseline(path):
    """Return ``(model, normalizer, metadata)``."""
    from .dataset import FeatureNormalizer

    arch, params, meta = load_checkpoint(path)
    if arch.get("model") != "baseline":
        raise DataError(f"{path}: checkpoint holds a {arch.get('model')!r}, not a baseline")
    net = DenseNet.from_description(arch)
    assign_params(net.params(), params)
    norm = FeatureNormalizer.from_dict(meta["normalizer"]) if meta.get("normalizer") else None
    model = BaselineModel(arch["kind"], net, list(meta.get("loss_trace", [])), meta)
    return model, norm, meta

