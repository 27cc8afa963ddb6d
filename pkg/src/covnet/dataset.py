"""In-memory dataset and the ``CVDS`` binary file format.

File layout, all little-endian::

    b"CVDS"  u32 version  u32 n_samples  u32 n_a  u32 n_t  u32 T
    per sample:
        H                  2*n_a*n_t f32   (real rows block, then imaginary block)
        n_a covariances    n_a x 2*n_t*n_t f32   (each: real block, then imaginary)
      version 2 only:
        q_bar              2*n_a*n_t f32   (real block, then imaginary)
        c_bar              2 x 2*n_t*n_t f32   (C_m1 real, C_m1 imag, C_m2 real, C_m2 imag)
        indices            2 u32          (i_m1, i_m2)

Version 1 records carry no preprocessing; it is recomputed on load.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeError

MAGIC = b"CVDS"
HEADER = struct.Struct("<4s5I")


def _record_dtype(n_a: int, n_t: int, version: int) -> np.dtype:
    fields = [("h", "<f4", (2, n_a, n_t)), ("cov", "<f4", (n_a, 2, n_t, n_t))]
    if version >= 2:
        fields += [("q", "<f4", (2, n_a, n_t)), ("c", "<f4", (2, 2, n_t, n_t)), ("idx", "<u4", (2,))]
    return np.dtype(fields)


@dataclass(frozen=True)
class Dataset:
    h: np.ndarray  # (n, n_a, n_t) complex
    q_bar: np.ndarray  # (n, n_a, n_t) complex
    c_bar: np.ndarray  # (n, n_t, n_t, 2) complex
    indices: np.ndarray  # (n, 2)
    covariances: np.ndarray | None  # (n, n_a, n_t, n_t) complex, or None when not retained
    snapshots: int
    energy_fraction: np.ndarray | None = None

    def __post_init__(self):
        n, n_a, n_t = self.h.shape
        if self.q_bar.shape != (n, n_a, n_t) or self.c_bar.shape != (n, n_t, n_t, 2):
            raise ShapeError("dataset arrays disagree on sample count or grid size")
        if self.covariances is not None and self.covariances.shape != (n, n_a, n_t, n_t):
            raise ShapeError(f"covariances have shape {self.covariances.shape}, expected {(n, n_a, n_t, n_t)}")

    def __len__(self) -> int:
        return self.h.shape[0]

    @property
    def n_a(self) -> int:
        return self.h.shape[1]

    @property
    def n_t(self) -> int:
        return self.h.shape[2]

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx)
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return Dataset(
            h=self.h[idx],
            q_bar=self.q_bar[idx],
            c_bar=self.c_bar[idx],
            indices=self.indices[idx],
            covariances=pick(self.covariances),
            snapshots=self.snapshots,
            energy_fraction=pick(self.energy_fraction),
        )

    def h_stacked(self, dtype=np.float32) -> np.ndarray:
        """``(n, 2n_a, n_t)`` real network targets."""
        return np.concatenate([self.h.real, self.h.imag], axis=1).astype(dtype)

    def q_stacked(self, dtype=np.float32) -> np.ndarray:
        return np.concatenate([self.q_bar.real, self.q_bar.imag], axis=1).astype(dtype)

    def c_channels(self, dtype=np.float32) -> np.ndarray:
        """``(n, 4, n_t, n_t)``: Re C1, Im C1, Re C2, Im C2."""
        c = self.c_bar
        return np.stack([c[..., 0].real, c[..., 0].imag, c[..., 1].real, c[..., 1].imag], axis=1).astype(dtype)

    def with_covariance_noise(self, snr_db: float | None, rng: np.random.Generator) -> Dataset:
        """Copy with white noise added to every covariance set and preprocessing redone.

        ``H`` is untouched. ``snr_db`` of ``None``/``inf`` returns ``self``.
        """
        from .covariance import CovarianceSet, inject_noise, preprocess

        if snr_db is None or np.isposinf(snr_db):
            return self
        if self.covariances is None:
            raise FormatError("dataset was loaded without covariance matrices; cannot inject noise")
        q = np.empty_like(self.q_bar)
        c = np.empty_like(self.c_bar)
        idx = np.empty_like(self.indices)
        covs = np.empty_like(self.covariances)
        for k in range(len(self)):
            noisy = inject_noise(CovarianceSet(self.covariances[k].astype(np.complex128)), snr_db, rng)
            pre = preprocess(noisy)
            q[k], c[k], idx[k], covs[k] = pre.q_bar, pre.c_bar, (pre.i_m1, pre.i_m2), noisy.matrices
        return replace(self, q_bar=q, c_bar=c, indices=idx, covariances=covs)


def _split(a: np.ndarray, axis: int) -> np.ndarray:
    re, im = np.split(a, 2, axis=axis)
    return (re + 1j * im).squeeze(axis).astype(np.complex64)


def encode_dataset(ds: Dataset, version: int = 2) -> bytes:
    if ds.covariances is None:
        raise FormatError("cannot write a dataset without its covariance matrices")
    if version not in (1, 2):
        raise FormatError(f"unknown dataset version {version}")
    n, n_a, n_t = ds.h.shape
    rec = np.zeros(n, dtype=_record_dtype(n_a, n_t, version))
    rec["h"] = np.stack([ds.h.real, ds.h.imag], axis=1)
    rec["cov"] = np.stack([ds.covariances.real, ds.covariances.imag], axis=2)
    if version >= 2:
        rec["q"] = np.stack([ds.q_bar.real, ds.q_bar.imag], axis=1)
        c = np.moveaxis(ds.c_bar, -1, 1)  # n, 2, n_t, n_t
        rec["c"] = np.stack([c.real, c.imag], axis=2)
        rec["idx"] = ds.indices
    return HEADER.pack(MAGIC, version, n, n_a, n_t, ds.snapshots) + rec.tobytes()


def decode_dataset(blob: bytes) -> Dataset:
    if len(blob) < HEADER.size:
        raise FormatError("file too short for a dataset header")
    magic, version, n, n_a, n_t, snapshots = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError("not a dataset file: bad magic")
    if version not in (1, 2):
        raise FormatError(f"unsupported dataset version {version}")
    dt = _record_dtype(n_a, n_t, version)
    expected = HEADER.size + n * dt.itemsize
    if len(blob) != expected:
        raise FormatError(f"dataset file has {len(blob)} bytes, header implies {expected}")
    rec = np.frombuffer(blob, dtype=dt, count=n, offset=HEADER.size)
    h = _split(rec["h"], 1)
    covs = _split(rec["cov"], 2)
    if version >= 2:
        q = _split(rec["q"], 1)
        c = np.moveaxis(_split(rec["c"], 2), 1, -1)
        idx = rec["idx"].astype(np.int64)
    else:
        from .covariance import CovarianceSet, preprocess

        q = np.empty_like(h)
        c = np.empty((n, n_t, n_t, 2), np.complex64)
        idx = np.empty((n, 2), np.int64)
        for k in range(n):
            pre = preprocess(CovarianceSet(covs[k].astype(np.complex128)))
            q[k], c[k], idx[k] = pre.q_bar, pre.c_bar, (pre.i_m1, pre.i_m2)
    return Dataset(h=h, q_bar=q, c_bar=c, indices=idx, covariances=covs, snapshots=snapshots)


def write_dataset(path, ds: Dataset, version: int = 2) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_dataset(ds, version))
    os.replace(tmp, path)
    return path


def read_dataset(path) -> Dataset:
    return decode_dataset(Path(path).read_bytes())


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def record_size(n_a: int, n_t: int, version: int = 2) -> int:
    return _record_dtype(n_a, n_t, version).itemsize
