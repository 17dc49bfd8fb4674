"""DFT beam codebook, per-beam gains and gain-normalised beam priors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError

ZERO_POWER = 1e-20


@dataclass(frozen=True)
class Codebook:
    W: np.ndarray  # (n_t, n_beam), unit-norm columns
    indices: tuple  # DFT column index each beam was taken from

    @property
    def n_t(self) -> int:
        return self.W.shape[0]

    @property
    def n_beam(self) -> int:
        return self.W.shape[1]

    def steering_sines(self, spacing: float = 0.5) -> np.ndarray:
        """sin(theta) each beam points at for a ULA with the given spacing, in [-1, 1)."""
        f = np.array(self.indices) / self.n_t
        f = (f + 0.5) % 1.0 - 0.5  # spatial frequency in cycles per element
        return np.clip(f / spacing, -1.0, 1.0)

    def steering_angles(self, spacing: float = 0.5) -> np.ndarray:
        return np.arcsin(self.steering_sines(spacing))

    def to_csv(self) -> str:
        rows = ["beam,dft_index,element,re,im"]
        for b in range(self.n_beam):
            for m in range(self.n_t):
                w = self.W[m, b]
                rows.append(f"{b},{self.indices[b]},{m},{w.real!r},{w.imag!r}")
        return "\n".join(rows) + "\n"


def dft_codebook(n_t: int, n_beam: int = 8) -> Codebook:
    """Columns ``b*(n_t/n_beam)`` of the n_t-point DFT, scaled to unit norm.

    Column k is ``exp(j*2*pi*m*k/n_t)/sqrt(n_t)``, which matches the ULA
    response at half-wavelength spacing for ``sin(theta) = 2k/n_t`` (mod 2).
    """
    if n_beam < 1 or n_t < n_beam or n_t % n_beam:
        raise ConfigError(f"n_beam={n_beam} must divide n_t={n_t}")
    step = n_t // n_beam
    idx = tuple(b * step for b in range(n_beam))
    m = np.arange(n_t)[:, None]
    W = np.exp(2j * np.pi * m * np.array(idx)[None, :] / n_t) / np.sqrt(n_t)
    return Codebook(W, idx)


def beam_gains(h, cb: Codebook) -> np.ndarray:
    """``|h^H w_b|^2`` for every beam. ``h`` is ``(n_t,)`` or ``(n, n_t)``."""
    h = np.asarray(h)
    if h.shape[-1] != cb.n_t:
        raise ShapeError(f"channel length {h.shape[-1]} != codebook n_t {cb.n_t}")
    return np.abs(np.conj(h) @ cb.W) ** 2


def is_zero_power(g) -> np.ndarray | bool:
    return np.asarray(g).sum(axis=-1) < ZERO_POWER


def beam_prior(g) -> np.ndarray:
    """Normalise gains into a distribution; zero-power rows become uniform."""
    g = np.asarray(g, dtype=np.float64)
    if (g < 0).any():
        raise ValueError("beam gains must be non-negative")
    total = g.sum(axis=-1, keepdims=True)
    uniform = np.full_like(g, 1.0 / g.shape[-1])
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(total < ZERO_POWER, uniform, g / total)


def optimal_beam(g):
    """Index of the largest gain; ties go to the lowest index."""
    return np.argmax(np.asarray(g), axis=-1)
