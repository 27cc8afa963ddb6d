"""Geometric multipath channel generator for an FDD ULA/OFDM link.

One *geometry* fixes path angles, delays and gains. Uplink and downlink of a
geometry share them (angular reciprocity) and differ only in carrier-scaled
array spacing and in their random path phases, which are redrawn for every
snapshot.

The spatial-frequency matrix has entries::

    H[i, m] = sum_p g_p exp(j phi_p) exp(-j pi kappa m sin(theta_p)) exp(+j 2 pi tau_p i / n_sub)

i.e. row ``i`` is the conjugate transpose of the per-subcarrier response
vector, so delays land in the *first* rows after the delay-axis DFT.
``kappa`` is 1 on the downlink and ``1 / uplink_downlink_freq_ratio`` on the
uplink (half-wavelength spacing at the downlink carrier).
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import transforms
from .covariance import estimate_covariance, extrapolate, preprocess
from .dataset import Dataset, write_dataset
from .errors import ConfigError


@dataclass(frozen=True)
class ChannelConfig:
    n_tx: int = 32
    n_sub: int = 256
    n_delay: int = 32
    n_paths: int = 6
    angle_spread_deg: float = 5.0
    delay_min: float = 4.0
    delay_max: float = 24.0
    delay_decay: float | None = None  # e-folding delay of path power; None -> (max - min) / 4
    snapshots_per_geometry: int = 64
    seed: int = 0
    uplink_downlink_freq_ratio: float = 5.3 / 5.1

    def __post_init__(self):
        if self.n_tx < 1 or self.n_sub < 1:
            raise ConfigError("antenna and subcarrier counts must be positive")
        if not 1 <= self.n_delay <= self.n_sub:
            raise ConfigError(f"n_delay={self.n_delay} must lie in [1, n_sub={self.n_sub}]")
        if self.n_paths < 1:
            raise ConfigError("need at least one path")
        if self.snapshots_per_geometry < 2:
            raise ConfigError("need at least 2 snapshots per geometry")
        if not 0 <= self.delay_min < self.delay_max < self.n_delay:
            raise ConfigError(
                f"need 0 <= delay_min < delay_max < n_delay, got {self.delay_min}, {self.delay_max}, {self.n_delay}"
            )
        if self.angle_spread_deg < 0:
            raise ConfigError("angle spread must be nonnegative")
        if self.uplink_downlink_freq_ratio < 1:
            raise ConfigError("uplink_downlink_freq_ratio must be >= 1")

    @property
    def decay(self) -> float:
        if self.delay_decay is not None:
            return float(self.delay_decay)
        return (self.delay_max - self.delay_min) / 4.0

    @classmethod
    def toy(cls, **overrides) -> ChannelConfig:
        """16 x 16 grid used for quick experiments and tests."""
        base = dict(n_tx=16, n_sub=64, n_delay=16, n_paths=4, delay_min=3.0, delay_max=11.0, snapshots_per_geometry=32)
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class PathSet:
    angles: np.ndarray
    delays: np.ndarray
    magnitudes: np.ndarray
    phases_dl: np.ndarray
    phases_ul: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.angles.size


def draw_geometry(cfg: ChannelConfig, rng: np.random.Generator) -> PathSet:
    """One cluster: uniform centre angle, Gaussian per-path offsets, exponential power-delay profile.

    Gains are normalised so that the expected squared Frobenius norm of a
    snapshot is 1.
    """
    p = cfg.n_paths
    centre = rng.uniform(-np.pi / 2, np.pi / 2)
    angles = centre + np.deg2rad(cfg.angle_spread_deg) * rng.standard_normal(p)
    delays = rng.uniform(cfg.delay_min, cfg.delay_max, p)
    power = np.exp(-(delays - cfg.delay_min) / cfg.decay)
    magnitudes = np.sqrt(power / (power.sum() * cfg.n_tx * cfg.n_sub))
    phases_dl = rng.uniform(0, 2 * np.pi, p)
    phases_ul = rng.uniform(0, 2 * np.pi, p)
    return PathSet(angles, delays, magnitudes, phases_dl, phases_ul)


def redraw_phases(paths: PathSet, rng: np.random.Generator) -> PathSet:
    p = paths.n_paths
    return replace(paths, phases_dl=rng.uniform(0, 2 * np.pi, p), phases_ul=rng.uniform(0, 2 * np.pi, p))


def _spacing(cfg: ChannelConfig, band: str) -> float:
    if band == "down":
        return 1.0
    if band == "up":
        return 1.0 / cfg.uplink_downlink_freq_ratio
    raise ConfigError(f"band must be 'up' or 'down', got {band!r}")


def _factors(paths: PathSet, cfg: ChannelConfig, band: str) -> tuple[np.ndarray, np.ndarray]:
    kappa = _spacing(cfg, band)
    i = np.arange(cfg.n_sub)[:, None]
    m = np.arange(cfg.n_tx)[:, None]
    delay = np.exp(2j * np.pi * i * paths.delays[None, :] / cfg.n_sub)  # n_sub x P
    steer = np.exp(-1j * np.pi * kappa * m * np.sin(paths.angles)[None, :])  # n_tx x P
    return delay, steer


def synthesize_channel(
    paths: PathSet, cfg: ChannelConfig, band: str = "down", rng: np.random.Generator | None = None
) -> np.ndarray:
    """Spatial-frequency channel (``n_sub x n_tx`` complex).

    With ``rng`` the path phases are drawn fresh (a new snapshot); otherwise
    the phases stored in ``paths`` for ``band`` are used.
    """
    delay, steer = _factors(paths, cfg, band)
    if rng is not None:
        phases = rng.uniform(0, 2 * np.pi, paths.n_paths)
    else:
        phases = paths.phases_dl if band == "down" else paths.phases_ul
    coeff = paths.magnitudes * np.exp(1j * phases)
    return (delay * coeff) @ steer.T


def angle_delay_snapshots(paths: PathSet, cfg: ChannelConfig, phases: np.ndarray, band: str = "down") -> np.ndarray:
    """Truncated angle-delay channels for a batch of phase draws ``(T, P)``.

    Equivalent to ``truncate(to_angle_delay(synthesize_channel(...)))`` per
    row of ``phases``, computed on the rank-P factors instead of the full
    ``n_sub x n_tx`` matrices.
    """
    delay, steer = _factors(paths, cfg, band)
    fd = transforms.dft_matrix(cfg.n_sub)[: cfg.n_delay]
    fa = transforms.dft_matrix(cfg.n_tx)
    left = fd @ delay  # n_delay x P
    right = steer.T @ fa.conj().T  # P x n_tx
    coeff = paths.magnitudes * np.exp(1j * np.asarray(phases))
    return np.einsum("ip,tp,pm->tim", left, coeff, right)


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream per (seed, sample index)."""
    return np.random.default_rng([int(seed), int(index)])


def generate_sample(cfg: ChannelConfig, index: int):
    """Held-out downlink channel, covariance set, preprocessing and truncation energy fraction."""
    rng = sample_rng(cfg.seed, index)
    paths = draw_geometry(cfg, rng)
    h_sf = synthesize_channel(paths, cfg, "down")
    h_full = transforms.to_angle_delay(h_sf)
    h = transforms.truncate(h_full, cfg.n_delay)
    total = float(np.sum(np.abs(h_full) ** 2))
    frac = float(np.sum(np.abs(h) ** 2)) / total if total > 0 else 1.0
    phases = rng.uniform(0, 2 * np.pi, (cfg.snapshots_per_geometry, cfg.n_paths))
    cov = extrapolate(estimate_covariance(angle_delay_snapshots(paths, cfg, phases)))
    return h, cov, preprocess(cov), frac


def generate_dataset(
    cfg: ChannelConfig,
    n_samples: int,
    path=None,
    start_index: int = 0,
    keep_covariances: bool = True,
) -> Dataset:
    """Generate ``n_samples`` independent geometries, optionally persisting them.

    Sample ``k`` depends only on ``(cfg.seed, start_index + k)``, so disjoint
    index ranges give disjoint train/test sets. When ``path`` is given the
    dataset is written in the binary format together with a JSON manifest
    (``<path>.json``).
    """
    if n_samples < 1:
        raise ConfigError(f"n_samples must be >= 1, got {n_samples}")
    n_a, n_t = cfg.n_delay, cfg.n_tx
    h = np.empty((n_samples, n_a, n_t), np.complex64)
    q_bar = np.empty((n_samples, n_a, n_t), np.complex64)
    c_bar = np.empty((n_samples, n_t, n_t, 2), np.complex64)
    idx = np.empty((n_samples, 2), np.int64)
    covs = np.empty((n_samples, n_a, n_t, n_t), np.complex64) if (keep_covariances or path) else None
    frac = np.empty(n_samples)
    for k in range(n_samples):
        hk, cov, pre, frac[k] = generate_sample(cfg, start_index + k)
        h[k] = hk
        q_bar[k] = pre.q_bar
        c_bar[k] = pre.c_bar
        idx[k] = pre.i_m1, pre.i_m2
        if covs is not None:
            covs[k] = cov.matrices
    ds = Dataset(
        h=h,
        q_bar=q_bar,
        c_bar=c_bar,
        indices=idx,
        covariances=covs,
        snapshots=cfg.snapshots_per_geometry,
        energy_fraction=frac,
    )
    if path is not None:
        path = Path(path)
        write_dataset(path, ds)
        manifest = {
            "config": asdict(cfg),
            "seed": cfg.seed,
            "start_index": start_index,
            "n_samples": n_samples,
            "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "file": path.name,
            "sha256": hashlib.sha256(path.read_bytes()).hexdigest(),
            "mean_truncation_energy_fraction": float(frac.mean()),
        }
        Path(str(path) + ".json").write_text(json.dumps(manifest, indent=2))
        if not keep_covariances:
            ds = replace(ds, covariances=None)
    return ds
