"""Channel generators, WMMSE labeling and the gradient-descent toy data.

Sampling is split into fixed-size chunks, each with its own generator
seeded by ``(seed, chunk_index)``. Output therefore depends only on the
seed and the parameters, never on how many workers ran the chunks.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .instance import IC, IMAC, ProblemInstance, effective_channels
from .wmmse import NumericalFailure, WmmseConfig, wmmse, wmmse_batch

log = logging.getLogger(__name__)

CHUNK = 1024
D_FLOOR = 1.0
SHADOW_STD_DB = 8.0


def _check_count(name, value, minimum=1):
    if int(value) != value or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def _chunked(n, seed, fn, threads=1):
    """Apply ``fn(rng, m)`` over fixed-size chunks and concatenate in order."""
    bounds = [(s, min(s + CHUNK, n)) for s in range(0, n, CHUNK)]

    def run(i):
        start, stop = bounds[i]
        return fn(np.random.default_rng([int(seed), i]), stop - start)

    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(run, range(len(bounds))))
    else:
        parts = [run(i) for i in range(len(bounds))]
    return np.concatenate(parts, axis=0)


def _instances(kind, gains, noise_power, p_max):
    return [ProblemInstance(kind, g, noise_power, 1.0, p_max) for g in gains]


# --- Gaussian interference channel -------------------------------------------

def gaussian_ic_gains(K, n, seed, threads=1) -> np.ndarray:
    K = _check_count("K", K)
    n = _check_count("n", n)
    return _chunked(n, seed, lambda rng, m: np.abs(rng.standard_normal((m, K, K))), threads)


def generate_gaussian_ic(K, n, seed, noise_power=1.0, p_max=1.0, threads=1):
    """``n`` IC instances whose gains are magnitudes of standard normals."""
    return _instances(IC, gaussian_ic_gains(K, n, seed, threads), noise_power, p_max)


# --- Multi-cell IMAC ----------------------------------------------------------

@dataclass
class ImacGeometry:
    num_cells: int
    users_per_cell: int
    cell_radius: float
    inner_radius: float
    bs_positions: np.ndarray
    user_positions: np.ndarray

    def home_distances(self) -> np.ndarray:
        home = np.arange(len(self.user_positions)) // self.users_per_cell
        return np.linalg.norm(self.user_positions - self.bs_positions[home], axis=-1)


def hex_layout(N, R) -> np.ndarray:
    """Base-station centres on a hexagonal lattice with spacing ``2R``.

    7 cells are a centre cell plus its ring. Any other count fills rows of
    ``ceil(sqrt(N))`` cells, odd rows shifted by ``R``; for ``N = 3`` this
    is a triangle of mutually adjacent cells.
    """
    N = _check_count("N", N)
    if N == 7:
        ring = [(2 * R * np.cos(a), 2 * R * np.sin(a)) for a in np.arange(6) * np.pi / 3]
        return np.array([(0.0, 0.0)] + ring)
    width = int(np.ceil(np.sqrt(N)))
    pos = []
    for idx in range(N):
        row, col = divmod(idx, width)
        pos.append((2 * R * col + (row % 2) * R, np.sqrt(3) * R * row))
    return np.array(pos, dtype=np.float64)


_HEX_NORMALS = np.stack([np.cos(np.arange(6) * np.pi / 3), np.sin(np.arange(6) * np.pi / 3)], axis=1)


def in_hexagon(offsets, R) -> np.ndarray:
    """True where an offset from a cell centre lies inside that cell (inradius ``R``)."""
    return np.all(offsets @ _HEX_NORMALS.T <= R, axis=-1)


def sample_cell_users(rng, count, R, r) -> np.ndarray:
    """Uniform points in the hexagon minus the disk of radius ``max(r, D_FLOOR)``.

    Rejection sampling from the circumscribed disk.
    """
    d_min = max(r, D_FLOOR)
    circ = 2 * R / np.sqrt(3)
    out = np.empty((0, 2))
    while len(out) < count:
        m = 2 * (count - len(out)) + 8
        rad = circ * np.sqrt(rng.uniform(size=m))
        ang = rng.uniform(0, 2 * np.pi, size=m)
        pts = np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)
        keep = in_hexagon(pts, R) & (rad >= d_min)
        out = np.concatenate([out, pts[keep]])
    return out[:count]


def pathloss_variance(d, shadowing=1.0):
    """Large-scale power gain ``(200/d)^3 * L``."""
    return (200.0 / np.asarray(d, dtype=np.float64)) ** 3 * shadowing


def _validate_imac(N, K, R, r):
    N = _check_count("N", N)
    K = _check_count("K", K)
    if K % N:
        raise ValueError(f"K={K} is not divisible by N={N}")
    if not 0 <= r < R:
        raise ValueError(f"need 0 <= r < R, got r={r}, R={R}")
    return N, K


def sample_imac_geometry(rng, N, K, R, r) -> ImacGeometry:
    N, K = _validate_imac(N, K, R, r)
    bs = hex_layout(N, R)
    per = K // N
    users = np.concatenate([bs[c] + sample_cell_users(rng, per, R, r) for c in range(N)])
    return ImacGeometry(N, per, float(R), float(r), bs, users)


def _imac_chunk(rng, m, N, K, R, r):
    out = np.empty((m, K, N))
    for s in range(m):
        geo = sample_imac_geometry(rng, N, K, R, r)
        d = np.linalg.norm(geo.user_positions[:, None, :] - geo.bs_positions[None, :, :], axis=-1)
        shadow = 10.0 ** (rng.normal(0.0, SHADOW_STD_DB, size=(K, N)) / 10.0)
        fading = np.abs(rng.standard_normal((K, N)) + 1j * rng.standard_normal((K, N))) / np.sqrt(2)
        out[s] = np.sqrt(pathloss_variance(d, shadow)) * fading
    return out


def imac_gains(N, K, R, r, n, seed, threads=1) -> np.ndarray:
    N, K = _validate_imac(N, K, R, r)
    n = _check_count("n", n)
    return _chunked(n, seed, lambda rng, m: _imac_chunk(rng, m, N, K, R, r), threads)


def generate_imac(N, K, R, r, n, seed, noise_power=1.0, p_max=1.0, threads=1):
    """IMAC instances with ``K x N`` user-to-BS magnitudes."""
    return _instances(IMAC, imac_gains(N, K, R, r, n, seed, threads), noise_power, p_max)


# --- Statistics-matched regeneration -------------------------------------------

def channel_stats(reference) -> tuple[float, float, float, float]:
    """``(m_d, var_d, m_i, var_i)`` over direct and interfering magnitudes."""
    if not reference:
        raise ValueError("reference set is empty")
    H = np.stack([inst.channel_matrix() for inst in reference])
    if H.shape[-1] < 2:
        raise ValueError("need at least two users to separate direct and cross gains")
    eye = np.eye(H.shape[-1], dtype=bool)
    direct, cross = H[:, eye], H[:, ~eye]
    return float(direct.mean()), float(direct.var()), float(cross.mean()), float(cross.var())


def generate_from_stats(reference, n, seed, noise_power=1e-3, p_max=1.0, threads=1):
    """Fresh IC instances matching the first two moments of ``reference``."""
    n = _check_count("n", n)
    if not reference:
        raise ValueError("reference set is empty")
    K = reference[0].num_tx
    if any(inst.num_tx != K for inst in reference):
        raise ValueError("reference instances must share K")
    m_d, v_d, m_i, v_i = channel_stats(reference)
    eye = np.eye(K, dtype=bool)

    def chunk(rng, m):
        H = rng.normal(m_i, np.sqrt(v_i), size=(m, K, K))
        H[:, eye] = rng.normal(m_d, np.sqrt(v_d), size=(m, K))
        return np.maximum(H, 0.0)

    return _instances(IC, _chunked(n, seed, chunk, threads), noise_power, p_max)


# --- Labeling -----------------------------------------------------------------

def label_dataset(instances, config: WmmseConfig | None = None, generator="custom",
                  seed=None, params=None) -> Dataset:
    """Attach WMMSE powers to every instance."""
    cfg = config or WmmseConfig()
    if not instances:
        raise ValueError("no instances to label")
    first = instances[0]
    kind, p_max = first.kind, first.p_max
    gains = np.stack([inst.gains for inst in instances])
    noise = np.stack([inst.noise_power for inst in instances])
    weights = np.stack([inst.weights for inst in instances])
    H = effective_channels(kind, gains)
    try:
        res = wmmse_batch(H, noise, weights, p_max, cfg)
    except NumericalFailure:
        for i, inst in enumerate(instances):
            try:
                wmmse(inst, cfg)
            except NumericalFailure as exc:
                raise NumericalFailure(f"labeling failed at sample {i}", exc.iteration) from exc
        raise
    meta = {"generator": generator, "seed": seed, **(params or {}), **cfg.describe()}
    log.info("labeled %d samples, mean iterations %.1f", len(instances), res.iterations.mean())
    return Dataset(kind, gains, res.p, noise, weights, p_max, meta)


# --- Gradient-descent toy problem ---------------------------------------------

def gd_run(x0, z, T, alpha):
    """``T`` gradient steps on ``(x^2 - z)^2`` from ``x0``, elementwise."""
    x = np.array(x0, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(T):
            x = x - 2.0 * alpha * x * (x * x - z)
    return x


def gd_toy_dataset(n, T=3000, alpha=0.01, seed=0, x0_range=(-2.0, 2.0),
                   z_range=(-2.0, 2.0), overflow=1e6):
    """Samples ``((x0, z), x^T)``; divergent runs are redrawn.

    Returns ``(inputs, outputs)`` with shapes ``(n, 2)`` and ``(n,)``.
    """
    n = _check_count("n", n)
    T = _check_count("T", T)
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    rng = np.random.default_rng(seed)
    x0 = rng.uniform(*x0_range, size=n)
    z = rng.uniform(*z_range, size=n)
    xT = gd_run(x0, z, T, alpha)
    for _ in range(100):
        bad = ~np.isfinite(xT) | (np.abs(xT) > overflow)
        if not bad.any():
            break
        log.warning("regenerating %d divergent GD samples", bad.sum())
        x0[bad] = rng.uniform(*x0_range, size=bad.sum())
        z[bad] = rng.uniform(*z_range, size=bad.sum())
        xT[bad] = gd_run(x0[bad], z[bad], T, alpha)
    else:
        raise FloatingPointError("GD keeps diverging; reduce alpha")
    return np.stack([x0, z], axis=1), xT
