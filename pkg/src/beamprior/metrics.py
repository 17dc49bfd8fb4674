"""Top-k sweeps, Hit@k, SNR-ratio@k, latency and report aggregation."""
from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

GAIN_FLOOR = 1e-12

REPORT_COLUMNS = [
    "model", "sampler", "d", "k", "hit_at_k", "snr_ratio_at_k", "n_eligible", "latency_ms_per_user", "seed", "config_hash",
]


def ranking(p_hat) -> np.ndarray:
    """Beam indices by descending probability; ties broken by ascending index."""
    p = np.asarray(p_hat, dtype=np.float64)
    return np.argsort(-p, axis=-1, kind="stable")


def topk(p_hat, k: int) -> np.ndarray:
    n_beam = np.shape(p_hat)[-1]
    if not 1 <= k <= n_beam:
        raise ConfigError(f"k={k} outside [1, {n_beam}]")
    return ranking(p_hat)[..., :k]


def hit_at_k(p_hat, b_star: int, k: int) -> int:
    return int(b_star in topk(p_hat, k))


def snr_ratio_at_k(p_hat, gains, b_star: int, k: int):
    """``max_{b in S_k} g_b / g_{b*}``, or None when ``g_{b*}`` is below the floor."""
    g = np.asarray(gains, dtype=np.float64)
    if not g[b_star] > GAIN_FLOOR:
        return None
    return float(g[topk(p_hat, k)].max() / g[b_star])


@dataclass
class MetricsReport:
    model: str
    sampler: str
    d: int | None
    hit: np.ndarray  # mean Hit@k for k = 1..n_beam
    snr: np.ndarray  # mean SNR-ratio@k over eligible users
    n_users: int
    n_eligible: int
    latency_s: float | None = None
    sweeps: np.ndarray | None = None  # (n_users, n_beam) full per-user ranking
    hits: np.ndarray | None = None  # (n_users, n_beam) per-user indicators
    meta: dict = field(default_factory=dict)

    def check(self) -> None:
        """Raise if a structural metric law is violated."""
        if np.any(np.diff(self.hit) < 0):
            raise DataError(f"{self.model}: Hit@k is not non-decreasing: {self.hit}")
        if self.hit[-1] != 1.0:
            raise DataError(f"{self.model}: Hit@{len(self.hit)} = {self.hit[-1]} != 1")
        if self.n_eligible:
            if np.any(np.diff(self.snr) < -1e-15):
                raise DataError(f"{self.model}: SNR ratio is not non-decreasing: {self.snr}")
            # a swept beam with exactly zero gain yields 0, so the closed interval is checked
            if not (np.all(self.snr >= 0) and np.all(self.snr <= 1.0 + 1e-12)):
                raise DataError(f"{self.model}: SNR ratio outside [0, 1]: {self.snr}")
            if abs(self.snr[-1] - 1.0) > 1e-12:
                raise DataError(f"{self.model}: SNR@{len(self.snr)} = {self.snr[-1]} != 1")

    def rows(self, seed=None, config_hash=None) -> list[dict]:
        lat = "" if self.latency_s is None else repr(self.latency_s * 1e3)
        return [
            {
                "model": self.model,
                "sampler": self.sampler,
                "d": "" if self.d is None else self.d,
                "k": k + 1,
                "hit_at_k": repr(float(self.hit[k])),
                "snr_ratio_at_k": repr(float(self.snr[k])) if self.n_eligible else "",
                "n_eligible": self.n_eligible,
                "latency_ms_per_user": lat,
                "seed": "" if seed is None else seed,
                "config_hash": config_hash or "",
            }
            for k in range(len(self.hit))
        ]

    def summary(self) -> dict:
        return {
            "model": self.model,
            "sampler": self.sampler,
            "d": self.d,
            "hit_at_k": [float(v) for v in self.hit],
            "snr_ratio_at_k": [float(v) for v in self.snr] if self.n_eligible else None,
            "n_users": self.n_users,
            "n_eligible": self.n_eligible,
            "latency_ms_per_user": None if self.latency_s is None else self.latency_s * 1e3,
            **self.meta,
        }


def score(priors, gains, best_beam, model="model", sampler="", d=None) -> MetricsReport:
    """Aggregate Hit@k and SNR-ratio@k for every k from per-user priors."""
    priors = np.asarray(priors, dtype=np.float64)
    gains = np.asarray(gains, dtype=np.float64)
    b_star = np.asarray(best_beam)
    n, n_beam = priors.shape
    if n == 0:
        raise DataError("no users to evaluate")
    if gains.shape != priors.shape or b_star.shape != (n,):
        raise DataError(f"shape mismatch: priors {priors.shape}, gains {gains.shape}, best_beam {b_star.shape}")
    order = ranking(priors)
    hits = np.cumsum(order == b_star[:, None], axis=1)  # (n, n_beam), 0/1
    g_best = gains[np.arange(n), b_star]
    eligible = g_best > GAIN_FLOOR
    swept = np.maximum.accumulate(np.take_along_axis(gains, order, axis=1), axis=1)
    ratios = swept[eligible] / g_best[eligible, None]
    return MetricsReport(
        model=model,
        sampler=sampler,
        d=d,
        hit=hits.mean(axis=0),
        snr=ratios.mean(axis=0) if eligible.any() else np.full(n_beam, np.nan),
        n_users=n,
        n_eligible=int(eligible.sum()),
        sweeps=order,
        hits=hits,
    )


def evaluate(prior_fn, val, *, model="model", sampler="", d=None, timing=False, reps=5) -> MetricsReport:
    """Run ``prior_fn(val)`` over a validation split and score it.

    With ``timing`` the call is repeated ``reps`` times and the mean wall-clock
    time per user is recorded; metrics come from the first call.
    """
    if len(val) == 0:
        raise DataError("validation split is empty")
    runs = reps if timing else 1
    if runs < 1:
        raise ConfigError("timing repetitions must be >= 1")
    elapsed = []
    priors = None
    for _ in range(runs):
        t0 = time.perf_counter()
        out = prior_fn(val)
        elapsed.append(time.perf_counter() - t0)
        if priors is None:
            priors = np.asarray(out, dtype=np.float64)
    report = score(priors, val.gains, val.best_beam, model, sampler, d)
    if timing:
        report.latency_s = float(np.mean(elapsed)) / len(val)
    report.check()
    return report


def reports_to_csv(reports, seed=None, config_hash=None) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerows(r.rows(seed, config_hash))
    return buf.getvalue()


def reports_to_json(reports, **extra) -> str:
    return json.dumps({**extra, "reports": [r.summary() for r in reports]}, indent=2, sort_keys=True)


def read_report_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
