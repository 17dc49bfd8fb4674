"""Small dense network engine: forward/backward passes, AdamW, embeddings.

Everything runs in float64. Inputs may be a single vector ``(in,)`` or a
batch ``(n, in)``; outputs keep the same rank.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, ConfigError, NumericError, ShapeError
from .io import atomic_write_bytes

ACTIVATIONS = ("relu", "identity")


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "relu"

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


def glorot_layer(n_in: int, n_out: int, rng: np.random.Generator, activation="relu") -> Layer:
    limit = np.sqrt(6.0 / (n_in + n_out))
    w = rng.uniform(-limit, limit, size=(n_out, n_in))
    return Layer(w, np.zeros(n_out), activation)


class DenseNet:
    """Stack of fully connected layers.

    ``DenseNet.build([in, h1, h2, out], rng)`` gives ReLU hidden layers and an
    identity output layer.
    """

    def __init__(self, layers: list[Layer]):
        if not layers:
            raise ConfigError("DenseNet needs at least one layer")
        for k, layer in enumerate(layers):
            if layer.activation not in ACTIVATIONS:
                raise ConfigError(f"layer {k}: unknown activation {layer.activation!r}")
            if layer.bias.shape != (layer.out_dim,):
                raise ShapeError(f"layer {k}: bias shape {layer.bias.shape} != ({layer.out_dim},)")
            if k and layer.in_dim != layers[k - 1].out_dim:
                raise ShapeError(
                    f"layer {k} expects {layer.in_dim} inputs but layer {k - 1} emits {layers[k - 1].out_dim}"
                )
        self.layers = layers

    @classmethod
    def build(cls, sizes, rng, hidden="relu", output="identity") -> "DenseNet":
        n = len(sizes) - 1
        layers = [
            glorot_layer(sizes[i], sizes[i + 1], rng, hidden if i < n - 1 else output)
            for i in range(n)
        ]
        return cls(layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def param_count(self) -> int:
        return sum(l.weight.size + l.bias.size for l in self.layers)

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    def describe(self) -> dict:
        return {
            "sizes": [self.in_dim] + [l.out_dim for l in self.layers],
            "activations": [l.activation for l in self.layers],
        }

    @classmethod
    def from_description(cls, desc: dict) -> "DenseNet":
        sizes, acts = desc["sizes"], desc["activations"]
        return cls(
            [Layer(np.zeros((sizes[i + 1], sizes[i])), np.zeros(sizes[i + 1]), acts[i]) for i in range(len(acts))]
        )

    def forward(self, x):
        return net_forward(self, x)

    def backward(self, cache, grad_out):
        return net_backward(self, cache, grad_out)

    def __call__(self, x):
        return net_forward(self, x)[0]


def net_forward(net: DenseNet, x):
    """Return ``(output, cache)``; the cache holds each layer's input and pre-activation."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.ndim != 2 or h.shape[1] != net.in_dim:
        raise ShapeError(f"input shape {x.shape} does not match in-dimension {net.in_dim}")
    cache = []
    for layer in net.layers:
        z = h @ layer.weight.T + layer.bias
        cache.append((h, z))
        h = np.maximum(z, 0.0) if layer.activation == "relu" else z
    return (h[0] if single else h), (single, cache)


def net_backward(net: DenseNet, cache, grad_out):
    """Backpropagate ``grad_out`` (dLoss/dOutput).

    Returns ``(param_grads, grad_input)`` where ``param_grads`` is aligned with
    ``net.params()``.
    """
    single, layer_cache = cache
    if len(layer_cache) != len(net.layers):
        raise ShapeError("stale cache: layer count differs from network")
    g = np.asarray(grad_out, dtype=np.float64)
    g = g[None, :] if single else g
    grads = [None] * (2 * len(net.layers))
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        h, z = layer_cache[k]
        if h.shape[1] != layer.in_dim or z.shape[1] != layer.out_dim or g.shape != z.shape:
            raise ShapeError(f"stale cache: shapes at layer {k} do not match the network")
        if layer.activation == "relu":
            g = g * (z > 0)
        grads[2 * k] = g.T @ h
        grads[2 * k + 1] = g.sum(axis=0)
        g = g @ layer.weight
    return grads, (g[0] if single else g)


def relu(x):
    return np.maximum(x, 0.0)


def softmax(v, axis=-1):
    v = np.asarray(v, dtype=np.float64)
    if np.isnan(v).any():
        raise NumericError("softmax input contains NaN")
    e = np.exp(v - v.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def sinusoidal_embedding(t, dim: int = 64, base: float = 10000.0):
    """``[sin(t*f_0..f_{h-1}), cos(t*f_0..f_{h-1})]`` with ``f_i = base**(-i/h)``, h = dim/2.

    ``t`` may be a scalar (returns ``(dim,)``) or an integer array (returns ``(n, dim)``).
    """
    if dim <= 0 or dim % 2:
        raise ConfigError(f"embedding dim must be a positive even integer, got {dim}")
    t_arr = np.asarray(t, dtype=np.float64)
    if (t_arr < 0).any():
        raise ConfigError("timestep must be non-negative")
    half = dim // 2
    freqs = base ** (-np.arange(half) / half)
    angles = np.multiply.outer(t_arr, freqs)
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)


@dataclass
class AdamWState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **hyper) -> "AdamWState":
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **hyper)


def adamw_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamWState):
    """One AdamW update, applied in place to ``params``. Returns ``(params, state)``."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if not (len(params) == len(grads) == len(state.m)):
        raise ShapeError("parameter, gradient and optimizer-state lists differ in length")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if state.weight_decay:
            p *= 1.0 - state.lr * state.weight_decay
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# Checkpoint container: magic, u32 version, u64 header length, JSON header,
# then every parameter as little-endian float64 in header order.
MAGIC = b"BPCKPT\x00\x01"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, architecture: dict, params: list[np.ndarray], metadata: dict) -> None:
    header = {
        "architecture": architecture,
        "shapes": [list(p.shape) for p in params],
        "metadata": metadata,
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    blob = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in params)
    atomic_write_bytes(path, MAGIC + struct.pack("<IQ", CHECKPOINT_VERSION, len(hbytes)) + hbytes + blob)


def load_checkpoint(path):
    """Return ``(architecture, params, metadata)``."""
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    off = len(MAGIC)
    if len(data) < off + 12:
        raise DataError(f"{path}: truncated header at byte {len(data)}")
    version, hlen = struct.unpack_from("<IQ", data, off)
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    off += 12
    try:
        header = json.loads(data[off : off + hlen])
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise DataError(f"{path}: corrupt header near byte {off}: {e}") from e
    off += hlen
    params = []
    for shape in header["shapes"]:
        n = int(np.prod(shape))
        if off + 8 * n > len(data):
            raise DataError(f"{path}: truncated parameter block at byte {off}")
        params.append(np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64))
        off += 8 * n
    if off != len(data):
        raise DataError(f"{path}: {len(data) - off} trailing bytes after parameters")
    return header["architecture"], params, header["metadata"]


def assign_params(target: list[np.ndarray], values: list[np.ndarray]) -> None:
    if len(target) != len(values):
        raise DataError(f"checkpoint holds {len(values)} tensors, model expects {len(target)}")
    for t, v in zip(target, values):
        if t.shape != v.shape:
            raise DataError(f"checkpoint tensor shape {v.shape} != model shape {t.shape}")
        t[...] = v
