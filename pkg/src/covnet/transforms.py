"""Angle-delay transforms, real/imag stacking, NMSE and compression-ratio arithmetic.

All DFT matrices are unitary (1/sqrt(N) scaling), so Frobenius norms and
therefore NMSE values are the same in the spatial-frequency and angle-delay
domains. Every function accepts leading batch axes.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import ConfigError, MetricError, ShapeError

#: NMSE in dB of a perfect reconstruction. Reports write it as ``-inf``.
NEG_INF_DB = float("-inf")


@lru_cache(maxsize=32)
def _dft(n: int) -> np.ndarray:
    k = np.arange(n)
    f = np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)
    f.setflags(write=False)
    return f


def dft_matrix(n: int) -> np.ndarray:
    """Unitary DFT matrix, ``F[k, i] = exp(-2j*pi*k*i/n) / sqrt(n)``."""
    if n < 1:
        raise ConfigError(f"DFT size must be positive, got {n}")
    return _dft(int(n))


def to_angle_delay(h_sf: np.ndarray) -> np.ndarray:
    """Full angle-delay channel ``F_d @ H @ F_a^H`` of an ``n_c x n_t`` matrix."""
    h_sf = np.asarray(h_sf)
    if h_sf.ndim < 2:
        raise ShapeError(f"expected an n_c x n_t matrix, got shape {h_sf.shape}")
    n_c, n_t = h_sf.shape[-2:]
    return dft_matrix(n_c) @ h_sf @ dft_matrix(n_t).conj().T


def truncate(h_ad: np.ndarray, n_a: int) -> np.ndarray:
    """Keep the first ``n_a`` delay rows."""
    h_ad = np.asarray(h_ad)
    n_c = h_ad.shape[-2]
    if not 1 <= n_a <= n_c:
        raise ConfigError(f"cannot keep {n_a} rows of a matrix with {n_c} rows")
    return h_ad[..., :n_a, :].copy()


def from_angle_delay(h: np.ndarray, n_c: int) -> np.ndarray:
    """Zero-pad the delay rows to ``n_c`` and invert the 2-D DFT."""
    h = np.asarray(h)
    if h.ndim < 2:
        raise ShapeError(f"expected an n_a x n_t matrix, got shape {h.shape}")
    n_a, n_t = h.shape[-2:]
    if n_a > n_c:
        raise ShapeError(f"{n_a} delay rows do not fit into {n_c} subcarriers")
    # only the first n_a columns of F_d^H meet nonzero rows
    return dft_matrix(n_c).conj().T[:, :n_a] @ h @ dft_matrix(n_t)


def stack_real(h: np.ndarray) -> np.ndarray:
    """``n_a x n_t`` complex -> ``2n_a x n_t`` real (real rows first, then imaginary)."""
    h = np.asarray(h)
    return np.concatenate([h.real, h.imag], axis=-2)


def unstack_real(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    rows = x.shape[-2]
    if rows % 2:
        raise ShapeError(f"stacked matrix needs an even row count, got {rows}")
    half = rows // 2
    return x[..., :half, :] + 1j * x[..., half:, :]


def nmse_per_sample(h_true: np.ndarray, h_hat: np.ndarray) -> np.ndarray:
    """``||H - H_hat||^2 / ||H||^2`` over the last two axes."""
    h_true = np.asarray(h_true)
    h_hat = np.asarray(h_hat)
    if h_true.shape != h_hat.shape:
        raise ShapeError(f"nmse: shapes differ, {h_true.shape} vs {h_hat.shape}")
    power = np.sum(np.abs(h_true) ** 2, axis=(-2, -1))
    if np.any(power <= 0):
        raise MetricError("nmse undefined for an all-zero reference channel")
    return np.sum(np.abs(h_true - h_hat) ** 2, axis=(-2, -1)) / power


def to_db(linear: float) -> float:
    return NEG_INF_DB if linear <= 0 else float(10.0 * np.log10(linear))


def nmse(h_true: np.ndarray, h_hat: np.ndarray) -> tuple[float, float]:
    """Mean per-sample NMSE as ``(linear, dB)``; a single matrix is a batch of one."""
    linear = float(np.mean(nmse_per_sample(h_true, h_hat)))
    return linear, to_db(linear)


def cr_to_codeword_len(n_a: int, n_t: int, cr: int) -> int:
    total = 2 * n_a * n_t
    if cr < 1 or total % cr:
        raise ConfigError(f"CR={cr} does not divide 2*{n_a}*{n_t}={total}")
    return total // cr


def codeword_len_to_cr(n_a: int, n_t: int, m: int) -> int:
    total = 2 * n_a * n_t
    if m < 1 or total % m:
        raise ConfigError(f"codeword length {m} does not divide {total}")
    return total // m
