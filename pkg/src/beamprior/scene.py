"""Seeded synthetic propagation scene and narrowband channel synthesis.

A single BS with a horizontal ULA serves a grid of UEs. Propagation is
traced with a line-of-sight ray plus one specular bounce per vertical wall
(image method); axis-aligned boxes block rays. Geometry is azimuth-only for
the array response.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DataError, GeometryError
from .io import atomic_write_text

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class SceneConfig:
    x_range: tuple = (5.0, 75.0)
    y_range: tuple = (-35.0, 35.0)
    grid_step: float = 1.0
    ue_height: float = 1.5
    bs_position: tuple = (0.0, 0.0, 10.0)
    n_t: int = 32
    spacing: float = 0.5
    broadside: float = 0.0
    n_beam: int = 8
    carrier_hz: float = 28e9
    n_blockers: int = 5
    blocker_size: tuple = (6.0, 14.0)
    blocker_height: tuple = (15.0, 30.0)
    blocker_x: tuple = (12.0, 60.0)
    n_reflectors: int = 4
    wall_length: tuple = (25.0, 60.0)
    wall_height: float = 25.0
    reflection_loss_db: float = 6.0
    l_max: int = 5

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown scene options: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass(frozen=True)
class Wall:
    """Vertical reflecting wall standing on the ground between two 2-D endpoints."""

    p1: tuple
    p2: tuple
    height: float
    loss_db: float = 6.0


@dataclass(frozen=True)
class Box:
    lo: tuple  # (xmin, ymin, zmin)
    hi: tuple  # (xmax, ymax, zmax)

    def contains(self, p) -> bool:
        return all(self.lo[a] <= p[a] <= self.hi[a] for a in range(3))


@dataclass(frozen=True)
class Path:
    gain: complex
    aod: float
    aoa: float
    delay: float
    is_los: bool


@dataclass
class Scene:
    bs_position: np.ndarray
    n_t: int
    spacing: float
    broadside: float
    reflectors: list
    blockers: list
    ue_grid: np.ndarray  # (n_ue, 3)
    wavelength: float
    seed: int
    l_max: int = 5
    config: SceneConfig = field(default_factory=SceneConfig)


def wrap_angle(a: float) -> float:
    """Map an angle into (-pi, pi]."""
    a = math.fmod(a + math.pi, 2 * math.pi)
    if a <= 0:
        a += 2 * math.pi
    return a - math.pi


def segment_hits_box(p0, p1, box: Box) -> bool:
    t0, t1 = 0.0, 1.0
    for a in range(3):
        d = p1[a] - p0[a]
        lo, hi = box.lo[a], box.hi[a]
        if abs(d) < 1e-15:
            if p0[a] < lo or p0[a] > hi:
                return False
            continue
        ta, tb = (lo - p0[a]) / d, (hi - p0[a]) / d
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
        if t0 > t1:
            return False
    return True


def _blocked(p0, p1, blockers) -> bool:
    return any(segment_hits_box(p0, p1, b) for b in blockers)


def _ue_grid(cfg: SceneConfig, blockers, bs) -> np.ndarray:
    xs = np.arange(cfg.x_range[0], cfg.x_range[1] + 1e-9, cfg.grid_step)
    ys = np.arange(cfg.y_range[0], cfg.y_range[1] + 1e-9, cfg.grid_step)
    pts = [
        (float(x), float(y), float(cfg.ue_height))
        for x in xs
        for y in ys
        if not any(b.contains((x, y, cfg.ue_height)) for b in blockers)
        and (x, y, cfg.ue_height) != tuple(bs)
    ]
    return np.array(pts, dtype=np.float64).reshape(-1, 3)


def generate_scene(config: SceneConfig | None = None, seed: int = 0) -> Scene:
    """Deterministic scene for ``(config, seed)``."""
    cfg = config or SceneConfig()
    if cfg.n_t < cfg.n_beam or cfg.n_beam < 1:
        raise ConfigError(f"n_t={cfg.n_t} must be >= n_beam={cfg.n_beam} >= 1")
    if cfg.spacing <= 0 or cfg.grid_step <= 0:
        raise ConfigError("element spacing and grid step must be positive")
    if cfg.x_range[1] < cfg.x_range[0] or cfg.y_range[1] < cfg.y_range[0]:
        raise ConfigError("empty UE grid extent")
    rng = np.random.default_rng(seed)
    bs = tuple(float(v) for v in cfg.bs_position)

    blockers = []
    for _ in range(cfg.n_blockers):
        cx = rng.uniform(*cfg.blocker_x)
        cy = rng.uniform(cfg.y_range[0], cfg.y_range[1])
        wx, wy = rng.uniform(*cfg.blocker_size, size=2)
        h = rng.uniform(*cfg.blocker_height)
        blockers.append(Box((cx - wx / 2, cy - wy / 2, 0.0), (cx + wx / 2, cy + wy / 2, h)))

    # street-canyon facades on both sides and behind the UE area, then random walls
    x0, x1 = cfg.x_range
    y0, y1 = cfg.y_range
    frame = [
        ((x0 - 5.0, y1 + 7.0), (x1 + 15.0, y1 + 7.0)),
        ((x0 - 5.0, y0 - 7.0), (x1 + 15.0, y0 - 7.0)),
        ((x1 + 10.0, y0 - 10.0), (x1 + 10.0, y1 + 10.0)),
    ]
    walls = [Wall(a, b, cfg.wall_height, cfg.reflection_loss_db) for a, b in frame[: cfg.n_reflectors]]
    span_x = (x0 - 10.0, x1 + 15.0)
    span_y = (y0 - 15.0, y1 + 15.0)
    while len(walls) < cfg.n_reflectors:
        c = np.array([rng.uniform(*span_x), rng.uniform(*span_y)])
        phi = rng.uniform(0.0, math.pi)
        half = rng.uniform(*cfg.wall_length) / 2
        u = np.array([math.cos(phi), math.sin(phi)])
        p1, p2 = c - half * u, c + half * u
        if _point_segment_distance(np.array(bs[:2]), p1, p2) < 5.0:
            continue
        walls.append(Wall(tuple(map(float, p1)), tuple(map(float, p2)), cfg.wall_height, cfg.reflection_loss_db))

    grid = _ue_grid(cfg, blockers, bs)
    if len(grid) == 0:
        raise ConfigError("UE grid is empty")
    return Scene(
        bs_position=np.array(bs),
        n_t=cfg.n_t,
        spacing=cfg.spacing,
        broadside=cfg.broadside,
        reflectors=walls,
        blockers=blockers,
        ue_grid=grid,
        wavelength=SPEED_OF_LIGHT / cfg.carrier_hz,
        seed=seed,
        l_max=cfg.l_max,
        config=cfg,
    )


def _point_segment_distance(p, a, b) -> float:
    ab = b - a
    s = np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0)
    return float(np.linalg.norm(p - (a + s * ab)))


def _path_gain(length: float, wavelength: float, loss_db: float = 0.0) -> complex:
    amp = wavelength / (4 * math.pi * length) * 10 ** (-loss_db / 20)
    return amp * complex(math.cos(-2 * math.pi * length / wavelength), math.sin(-2 * math.pi * length / wavelength))


def _reflect(bs, ue, wall: Wall):
    """Specular bounce point on ``wall`` via the image method, or None."""
    (x1, y1), (x2, y2) = wall.p1, wall.p2
    dx, dy = x2 - x1, y2 - y1
    ll = dx * dx + dy * dy
    # mirror the BS across the wall line
    s = ((bs[0] - x1) * dx + (bs[1] - y1) * dy) / ll
    fx, fy = x1 + s * dx, y1 + s * dy
    ix, iy = 2 * fx - bs[0], 2 * fy - bs[1]
    # intersect image->UE with the wall line
    ex, ey = ue[0] - ix, ue[1] - iy
    den = ex * dy - ey * dx
    if abs(den) < 1e-12:
        return None
    u = ((x1 - ix) * dy - (y1 - iy) * dx) / den  # along image->UE
    w = ((x1 - ix) * ey - (y1 - iy) * ex) / den  # along the wall
    if not (1e-9 < u < 1 - 1e-9 and 0.0 <= w <= 1.0):
        return None
    rz = bs[2] + (ue[2] - bs[2]) * u
    if not 0.0 <= rz <= wall.height:
        return None
    length = math.sqrt(ex * ex + ey * ey + (ue[2] - bs[2]) ** 2)
    return (ix + u * ex, iy + u * ey, rz), length


def trace_paths(scene: Scene, ue_position) -> list[Path]:
    """LOS plus first-order wall reflections reaching ``ue_position``, strongest first."""
    bs = tuple(float(v) for v in scene.bs_position)
    ue = tuple(float(v) for v in ue_position)
    if math.dist(bs, ue) < 1e-9:
        raise GeometryError(f"UE at {ue} coincides with the BS")
    lam = scene.wavelength
    paths = []
    if not _blocked(bs, ue, scene.blockers):
        d = math.dist(bs, ue)
        paths.append(
            Path(
                gain=_path_gain(d, lam),
                aod=wrap_angle(math.atan2(ue[1] - bs[1], ue[0] - bs[0]) - scene.broadside),
                aoa=wrap_angle(math.atan2(bs[1] - ue[1], bs[0] - ue[0])),
                delay=d / SPEED_OF_LIGHT,
                is_los=True,
            )
        )
    for wall in scene.reflectors:
        hit = _reflect(bs, ue, wall)
        if hit is None:
            continue
        r, length = hit
        if _blocked(bs, r, scene.blockers) or _blocked(r, ue, scene.blockers):
            continue
        paths.append(
            Path(
                gain=_path_gain(length, lam, wall.loss_db),
                aod=wrap_angle(math.atan2(r[1] - bs[1], r[0] - bs[0]) - scene.broadside),
                aoa=wrap_angle(math.atan2(r[1] - ue[1], r[0] - ue[0])),
                delay=length / SPEED_OF_LIGHT,
                is_los=False,
            )
        )
    # stable sort keeps LOS ahead of equally strong reflections
    paths.sort(key=lambda p: -abs(p.gain))
    return paths[: scene.l_max]


def trace_all(scene: Scene, jobs: int = 1) -> list[list[Path]]:
    if jobs <= 1 or len(scene.ue_grid) < 2:
        return [trace_paths(scene, ue) for ue in scene.ue_grid]
    from concurrent.futures import ProcessPoolExecutor

    chunks = np.array_split(np.arange(len(scene.ue_grid)), jobs)
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        parts = pool.map(_trace_chunk, [(scene, scene.ue_grid[c]) for c in chunks])
        return [p for part in parts for p in part]


def _trace_chunk(args):
    scene, ues = args
    return [trace_paths(scene, ue) for ue in ues]


def array_response(theta, n_t: int, spacing: float = 0.5):
    """ULA response ``exp(j*2*pi*spacing*m*sin(theta))`` for m = 0..n_t-1."""
    m = np.arange(n_t)
    return np.exp(1j * 2 * np.pi * spacing * np.multiply.outer(np.sin(theta), m))


def synthesize_channel(paths, n_t: int, spacing: float = 0.5) -> np.ndarray:
    h = np.zeros(n_t, dtype=np.complex128)
    for p in paths:
        h += p.gain * array_response(p.aod, n_t, spacing)
    return h


# --- ray file ---------------------------------------------------------------

RAY_COLUMNS = ["ue_id", "x", "y", "z", "path_index", "gain_re", "gain_im", "aod_rad", "aoa_rad", "delay_s", "is_los"]


def write_rays_csv(path, ue_ids, positions, paths_per_ue) -> None:
    """One row per (UE, path). A UE without paths gets a single row with path_index -1."""
    lines = [",".join(RAY_COLUMNS)]
    for uid, pos, paths in zip(ue_ids, positions, paths_per_ue):
        head = f"{int(uid)},{float(pos[0])!r},{float(pos[1])!r},{float(pos[2])!r}"
        if not paths:
            lines.append(f"{head},-1,0.0,0.0,0.0,0.0,0.0,0")
        for i, p in enumerate(paths):
            lines.append(
                f"{head},{i},{p.gain.real!r},{p.gain.imag!r},{p.aod!r},{p.aoa!r},{p.delay!r},{int(p.is_los)}"
            )
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_rays_csv(path):
    """Return ``(ue_ids, positions, paths_per_ue)`` in file order of first appearance."""
    order, pos, paths = [], {}, {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != RAY_COLUMNS:
            raise DataError(f"{path}: line 1: expected header {RAY_COLUMNS}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(RAY_COLUMNS):
                raise DataError(f"{path}: line {lineno}: expected {len(RAY_COLUMNS)} fields, got {len(row)}")
            try:
                uid, pidx = int(row[0]), int(row[4])
                xyz = tuple(float(v) for v in row[1:4])
                gr, gi, aod, aoa, delay = (float(v) for v in row[5:10])
                los = bool(int(row[10]))
            except ValueError as e:
                raise DataError(f"{path}: line {lineno}: {e}") from e
            if uid not in pos:
                order.append(uid)
                pos[uid] = xyz
                paths[uid] = []
            if pidx >= 0:
                paths[uid].append(Path(complex(gr, gi), aod, aoa, delay, los))
    positions = np.array([pos[u] for u in order], dtype=np.float64).reshape(-1, 3)
    return np.array(order, dtype=np.int64), positions, [paths[u] for u in order]


def scene_summary(scene: Scene) -> dict:
    return {
        "seed": scene.seed,
        "n_ue": int(len(scene.ue_grid)),
        "reflectors": [asdict(w) for w in scene.reflectors],
        "blockers": [asdict(b) for b in scene.blockers],
        "config": scene.config.to_dict(),
    }
