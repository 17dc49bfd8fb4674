"""Conditioning features, per-UE beam records, train/val split and persistence."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .codebook import Codebook, beam_gains, beam_prior, is_zero_power, optimal_beam
from .errors import ConfigError, DataError
from .io import atomic_write_text, stable_hash
from .scene import Scene, scene_summary, synthesize_channel, trace_all

FEATURE_DIMS = (3, 5, 7)
DATASET_FORMAT = "beamprior-dataset"
DATASET_VERSION = 1


def strongest_path(paths):
    """Largest |gain|; the earliest path wins ties. None for an empty list."""
    best = None
    for p in paths:
        if best is None or abs(p.gain) > abs(best.gain):
            best = p
    return best


def build_features(ue, paths, d: int, bs_position=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Raw conditioning vector of length ``d``.

    3: (x, y, z); 5: adds BS-UE distance and a LOS flag; 7: adds the strongest
    path's AoA and AoD azimuths divided by pi.
    """
    if d not in FEATURE_DIMS:
        raise ConfigError(f"unsupported conditioning dimension {d}; expected one of {FEATURE_DIMS}")
    x = [float(v) for v in ue]
    if d >= 5:
        x.append(math.dist(ue, bs_position))
        x.append(1.0 if any(p.is_los for p in paths) else 0.0)
    if d == 7:
        sp = strongest_path(paths)
        x += [sp.aoa / math.pi, sp.aod / math.pi] if sp else [0.0, 0.0]
    return np.array(x)


@dataclass
class FeatureNormalizer:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, x):
        return (np.asarray(x) - self.mean) / self.std

    def invert(self, z):
        return np.asarray(z) * self.std + self.mean

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64))


def fit_normalizer(x_train) -> FeatureNormalizer:
    x = np.asarray(x_train, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise DataError("cannot fit a normalizer on an empty training split")
    std = x.std(axis=0)
    return FeatureNormalizer(x.mean(axis=0), np.where(std > 0, std, 1.0))


def apply_normalizer(norm: FeatureNormalizer, x):
    return norm.apply(x)


@dataclass
class BeamDataset:
    """Column-oriented per-UE records."""

    ue_id: np.ndarray  # (n,) int64
    position: np.ndarray  # (n, 3)
    features: dict  # d -> (n, d) raw features
    gains: np.ndarray  # (n, n_beam)
    prior: np.ndarray  # (n, n_beam)
    best_beam: np.ndarray  # (n,) int64
    los: np.ndarray  # (n,) bool
    zero_power: np.ndarray  # (n,) bool
    n_paths: np.ndarray  # (n,) int64
    strongest_aod: np.ndarray  # (n,) radians, 0 when no paths
    strongest_aoa: np.ndarray
    is_train: np.ndarray | None = None  # (n,) bool once split
    meta: dict = field(default_factory=dict)

    _COLUMNS = (
        "ue_id", "position", "gains", "prior", "best_beam", "los",
        "zero_power", "n_paths", "strongest_aod", "strongest_aoa",
    )

    def __len__(self):
        return len(self.ue_id)

    @property
    def n_beam(self) -> int:
        return self.gains.shape[1]

    def subset(self, mask) -> "BeamDataset":
        idx = np.flatnonzero(mask) if np.asarray(mask).dtype == bool else np.asarray(mask)
        cols = {c: getattr(self, c)[idx] for c in self._COLUMNS}
        return BeamDataset(
            features={d: f[idx] for d, f in self.features.items()},
            is_train=None if self.is_train is None else self.is_train[idx],
            meta=dict(self.meta),
            **cols,
        )

    def train(self) -> "BeamDataset":
        return self.subset(self._split_mask(True))

    def val(self) -> "BeamDataset":
        return self.subset(self._split_mask(False))

    def _split_mask(self, train: bool):
        if self.is_train is None:
            raise DataError("dataset has not been split")
        return self.is_train if train else ~self.is_train

    def equals(self, other: "BeamDataset") -> bool:
        if sorted(self.features) != sorted(other.features) or self.meta != other.meta:
            return False
        if (self.is_train is None) != (other.is_train is None):
            return False
        if self.is_train is not None and not np.array_equal(self.is_train, other.is_train):
            return False
        return all(np.array_equal(getattr(self, c), getattr(other, c)) for c in self._COLUMNS) and all(
            np.array_equal(self.features[d], other.features[d]) for d in self.features
        )


def build_dataset_from_paths(ue_ids, positions, paths_per_ue, bs_position, codebook: Codebook,
                             spacing: float = 0.5, dims=FEATURE_DIMS, meta=None) -> BeamDataset:
    n = len(ue_ids)
    positions = np.asarray(positions, dtype=np.float64).reshape(n, 3)
    bs = tuple(float(v) for v in bs_position)
    H = np.stack([synthesize_channel(p, codebook.n_t, spacing) for p in paths_per_ue]) if n else np.zeros((0, codebook.n_t), complex)
    gains = beam_gains(H, codebook)
    strongest = [strongest_path(p) for p in paths_per_ue]
    return BeamDataset(
        ue_id=np.asarray(ue_ids, dtype=np.int64),
        position=positions,
        features={d: np.array([build_features(tuple(positions[i]), paths_per_ue[i], d, bs) for i in range(n)]).reshape(n, d) for d in dims},
        gains=gains,
        prior=beam_prior(gains),
        best_beam=optimal_beam(gains).astype(np.int64),
        los=np.array([any(p.is_los for p in ps) for ps in paths_per_ue], dtype=bool),
        zero_power=np.asarray(is_zero_power(gains), dtype=bool),
        n_paths=np.array([len(p) for p in paths_per_ue], dtype=np.int64),
        strongest_aod=np.array([s.aod if s else 0.0 for s in strongest]),
        strongest_aoa=np.array([s.aoa if s else 0.0 for s in strongest]),
        meta=dict(meta or {}),
    )


def build_dataset(scene: Scene, codebook: Codebook, dims=FEATURE_DIMS, jobs: int = 1, paths=None) -> BeamDataset:
    """Trace every UE in the scene and assemble its gains, prior and features."""
    if codebook.n_t != scene.n_t:
        raise ConfigError(f"codebook n_t={codebook.n_t} differs from scene n_t={scene.n_t}")
    if paths is None:
        paths = trace_all(scene, jobs)
    meta = {"scene_seed": scene.seed, "scene_hash": stable_hash(scene_summary(scene)), "n_t": scene.n_t, "n_beam": codebook.n_beam}
    return build_dataset_from_paths(
        np.arange(len(scene.ue_grid)), scene.ue_grid, paths, scene.bs_position, codebook, scene.spacing, dims, meta
    )


def split_dataset(ds: BeamDataset, ratio: float = 0.9, seed: int = 0) -> BeamDataset:
    """Seeded UE-level split with ``round(ratio*n)`` training records."""
    n = len(ds)
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"split ratio must lie in (0, 1), got {ratio}")
    if n < 2:
        raise DataError(f"need at least 2 records to split, got {n}")
    n_train = min(max(int(math.floor(ratio * n + 0.5)), 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    is_train = np.zeros(n, dtype=bool)
    is_train[perm[:n_train]] = True
    meta = dict(ds.meta, split_seed=seed, split_ratio=ratio)
    return replace(ds, is_train=is_train, meta=meta)


# --- persistence -------------------------------------------------------------

def dataset_to_json(ds: BeamDataset) -> str:
    doc = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "meta": ds.meta,
        "n": len(ds),
        "columns": {c: getattr(ds, c).tolist() for c in ds._COLUMNS},
        "features": {str(d): f.tolist() for d, f in sorted(ds.features.items())},
        "is_train": None if ds.is_train is None else ds.is_train.tolist(),
    }
    return json.dumps(doc, sort_keys=True)


def save_dataset(ds: BeamDataset, path) -> None:
    atomic_write_text(path, dataset_to_json(ds))


_DTYPES = {"ue_id": np.int64, "best_beam": np.int64, "n_paths": np.int64, "los": bool, "zero_power": bool}


def load_dataset(path) -> BeamDataset:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise DataError(f"cannot read dataset {path}: {e}") from e
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: malformed dataset at line {e.lineno}, column {e.colno} (byte {e.pos}): {e.msg}") from e
    if not isinstance(doc, dict) or doc.get("format") != DATASET_FORMAT:
        raise DataError(f"{path}: not a {DATASET_FORMAT} file")
    if doc.get("version") != DATASET_VERSION:
        raise DataError(f"{path}: dataset version {doc.get('version')}, expected {DATASET_VERSION}")
    try:
        n = doc["n"]
        cols = {c: np.array(v, dtype=_DTYPES.get(c, np.float64)) for c, v in doc["columns"].items()}
        cols["position"] = cols["position"].reshape(n, 3)
        nb = doc["meta"].get("n_beam", 8)
        cols["gains"] = cols["gains"].reshape(n, nb)
        cols["prior"] = cols["prior"].reshape(n, nb)
        feats = {int(d): np.array(v, dtype=np.float64).reshape(n, int(d)) for d, v in doc["features"].items()}
        is_train = None if doc["is_train"] is None else np.array(doc["is_train"], dtype=bool)
        ds = BeamDataset(features=feats, is_train=is_train, meta=doc["meta"], **cols)
    except (KeyError, ValueError, TypeError) as e:
        raise DataError(f"{path}: inconsistent dataset contents: {e!r}") from e
    if any(len(getattr(ds, c)) != n for c in ds._COLUMNS):
        raise DataError(f"{path}: column lengths disagree with n={n}")
    return ds
