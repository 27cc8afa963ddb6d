"""Per-delay-bin spatial covariance: estimation, top-eigenvector preprocessing, noise.

The base station holds one ``n_t x n_t`` covariance matrix per retained
delay row. Preprocessing reduces them to

* ``q_bar`` - one dominant eigenvector per row (``n_a x n_t``), and
* ``c_bar`` - the two raw matrices of the strongest rows, stacked on a new
  trailing axis (``n_t x n_t x 2``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ConvergenceError, ShapeError

HERMITIAN_TOL = 1e-9
MAX_SQUARINGS = 48  # A^(2^48) resolves relative eigengaps far below 1e-8


def _hermitian_error(c: np.ndarray) -> float:
    return float(np.max(np.abs(c - np.swapaxes(c, -1, -2).conj()), initial=0.0))


def _scale(c: np.ndarray) -> float:
    return max(1.0, float(np.max(np.abs(c), initial=0.0)))


@dataclass(frozen=True)
class CovarianceSet:
    """``n_a`` Hermitian ``n_t x n_t`` matrices, stored as one ``(n_a, n_t, n_t)`` array."""

    matrices: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrices, dtype=np.complex128)
        if m.ndim != 3 or m.shape[1] != m.shape[2]:
            raise ShapeError(f"covariance set must be (n_a, n_t, n_t), got {m.shape}")
        if _hermitian_error(m) > HERMITIAN_TOL * _scale(m):
            raise ConfigError("covariance matrices are not Hermitian")
        m.setflags(write=False)
        object.__setattr__(self, "matrices", m)

    @property
    def n_a(self) -> int:
        return self.matrices.shape[0]

    @property
    def n_t(self) -> int:
        return self.matrices.shape[1]

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrices).min())

    def is_psd(self, tol: float = 1e-9) -> bool:
        return self.min_eigenvalue() >= -tol


@dataclass(frozen=True)
class CovPre:
    q_bar: np.ndarray  # (n_a, n_t) complex, row n = conj-transposed top eigenvector of C_n
    c_bar: np.ndarray  # (n_t, n_t, 2) complex
    i_m1: int
    i_m2: int
    row_powers: np.ndarray  # (n_a,)

    def q_bar_stacked(self) -> np.ndarray:
        """Real ``2n_a x n_t`` network input (real rows, then imaginary rows)."""
        return np.concatenate([self.q_bar.real, self.q_bar.imag], axis=0)

    def c_bar_channels(self) -> np.ndarray:
        """Real ``4 x n_t x n_t`` network input: Re C1, Im C1, Re C2, Im C2."""
        c = self.c_bar
        return np.stack([c[..., 0].real, c[..., 0].imag, c[..., 1].real, c[..., 1].imag])


def hermitize(c: np.ndarray) -> np.ndarray:
    return 0.5 * (c + np.swapaxes(c, -1, -2).conj())


def estimate_covariance(snapshots: np.ndarray) -> CovarianceSet:
    """Sample covariance of each row over ``T`` snapshots of shape ``(T, n_a, n_t)``.

    ``C_n = (1/T) sum_t h_{n,t} h_{n,t}^H`` with ``h_{n,t}`` the n-th row taken
    as a column vector.
    """
    s = np.asarray(snapshots)
    if s.ndim != 3:
        raise ShapeError(f"snapshots must be (T, n_a, n_t), got {s.shape}")
    t = s.shape[0]
    if t < 2:
        raise ConfigError(f"need at least 2 snapshots to estimate a covariance, got {t}")
    c = np.einsum("tni,tnj->nij", s, s.conj()) / t
    return CovarianceSet(hermitize(c))


def extrapolate(cov_ul: CovarianceSet) -> CovarianceSet:
    """Uplink -> downlink covariance translation.

    Perfect extrapolation is assumed, so this is the identity; a band
    translation algorithm would replace it.
    """
    return cov_ul


def _fix_phase(v: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(v), axis=-1)
    lead = np.take_along_axis(v, idx[..., None], axis=-1)
    return v * (lead.conj() / np.abs(lead))


def top_eigenvectors(
    c: np.ndarray, tol: float = 1e-10, max_iter: int | None = None, seed: int = 0, max_restarts: int = 3
) -> tuple[np.ndarray, np.ndarray]:
    """Dominant (largest algebraic) eigenpair of each Hermitian matrix in ``c[..., n, n]``.

    Power iteration on a shifted, rescaled copy ``A = (C + s I) / 2s`` with
    ``s = ||C||_F``, which maps the spectrum into ``[0, 1]`` while keeping the
    order. The start vector is first pushed through ``A^(2^k)`` by repeated
    squaring, then refined by plain power steps until the Rayleigh quotient
    moves by less than ``tol``. Eigenvectors are unit norm with their
    largest-magnitude entry real and positive.
    """
    c = np.asarray(c, dtype=np.complex128)
    if c.ndim < 2 or c.shape[-1] != c.shape[-2]:
        raise ShapeError(f"expected square matrices, got {c.shape}")
    if _hermitian_error(c) > HERMITIAN_TOL * _scale(c):
        raise ConfigError("top_eigenvectors needs Hermitian input")
    c = hermitize(c)
    batch = c.shape[:-2]
    n = c.shape[-1]
    cb = c.reshape(-1, n, n)
    if max_iter is None:
        max_iter = 10 * n

    s = np.linalg.norm(cb, axis=(-2, -1))
    s = np.where(s > 0, s, 1.0)
    a = (cb + s[:, None, None] * np.eye(n)) / (2 * s[:, None, None])
    # square until the normalised power settles; small eigengaps (noisy, indefinite
    # covariances) need far more than a fixed 2^12
    p = a / np.linalg.norm(a, axis=(-2, -1), keepdims=True)
    for _ in range(MAX_SQUARINGS):
        q = p @ p
        q /= np.linalg.norm(q, axis=(-2, -1), keepdims=True)
        change = np.max(np.linalg.norm(q - p, axis=(-2, -1)))
        p = q
        if change < 1e-12:
            break

    rng = np.random.default_rng(seed)
    count = cb.shape[0]
    vecs = np.zeros((count, n), dtype=np.complex128)
    vals = np.zeros(count)
    todo = np.arange(count)
    for _attempt in range(max_restarts + 1):
        x0 = rng.standard_normal((todo.size, n)) + 1j * rng.standard_normal((todo.size, n))
        v = np.einsum("bij,bj->bi", p[todo], x0)
        norms = np.linalg.norm(v, axis=-1)
        good = norms > 1e-12
        v[good] /= norms[good, None]
        v[~good] = x0[~good] / np.linalg.norm(x0[~good], axis=-1, keepdims=True)
        ct, at = cb[todo], a[todo]
        rq = np.einsum("bi,bij,bj->b", v.conj(), ct, v).real
        for _ in range(max_iter):
            w = np.einsum("bij,bj->bi", at, v)
            v = w / np.linalg.norm(w, axis=-1, keepdims=True)
            rq_new = np.einsum("bi,bij,bj->b", v.conj(), ct, v).real
            done = np.abs(rq_new - rq) <= tol * np.maximum(1.0, np.abs(rq_new))
            rq = rq_new
            if done.all():
                break
        resid = np.linalg.norm(np.einsum("bij,bj->bi", ct, v) - rq[:, None] * v, axis=-1)
        ok = resid <= 1e-8 * np.maximum(1.0, np.abs(rq))
        vecs[todo[ok]] = v[ok]
        vals[todo[ok]] = rq[ok]
        todo = todo[~ok]
        if todo.size == 0:
            break
    else:
        raise ConvergenceError(f"power iteration did not converge for {todo.size} matrices")

    vecs = _fix_phase(vecs)
    return vecs.reshape(batch + (n,)), vals.reshape(batch)


def top_eigenvector(c: np.ndarray, **kwargs) -> tuple[np.ndarray, float]:
    c = np.asarray(c)
    if c.ndim != 2:
        raise ShapeError(f"expected one square matrix, got {c.shape}")
    v, lam = top_eigenvectors(c, **kwargs)
    return v, float(lam)


def row_powers(cov: CovarianceSet, reference=None) -> np.ndarray:
    """Per-row power used for ranking.

    ``reference=None`` uses ``trace(C_n) = E||h_n||^2``. A reference channel
    (``n_a x n_t``) gives instantaneous ``||h_n||^2``; a 1-D array is taken
    as the powers themselves.
    """
    if reference is None:
        return np.real(np.trace(cov.matrices, axis1=-2, axis2=-1)).copy()
    ref = np.asarray(reference)
    if ref.ndim == 1:
        powers = ref.astype(float)
    else:
        powers = np.sum(np.abs(ref) ** 2, axis=-1)
    if powers.shape != (cov.n_a,):
        raise ShapeError(f"reference gives {powers.shape} powers for {cov.n_a} covariance matrices")
    return powers


def preprocess(cov: CovarianceSet, reference=None, conjugate: bool = True) -> CovPre:
    """Reduce a covariance set to ``(q_bar, c_bar)``.

    ``conjugate=False`` stores plain (non-conjugated) eigenvectors in ``q_bar``.
    """
    if cov.n_a < 2:
        raise ConfigError(f"preprocessing needs at least 2 covariance matrices, got {cov.n_a}")
    vecs, _ = top_eigenvectors(cov.matrices)
    q_bar = vecs.conj() if conjugate else vecs
    powers = row_powers(cov, reference)
    order = np.argsort(-powers, kind="stable")
    i1, i2 = int(order[0]), int(order[1])
    c_bar = np.stack([cov.matrices[i1], cov.matrices[i2]], axis=-1)
    return CovPre(q_bar=q_bar, c_bar=c_bar, i_m1=i1, i_m2=i2, row_powers=powers)


def inject_noise(x, snr_db: float | None, rng: np.random.Generator, hermitian: bool | None = None):
    """Add white Gaussian noise at ``snr_db`` relative to the mean entry power of ``x``.

    Per-entry noise variance is ``||x||_F^2 / (x.size * 10^(snr_db/10))``. A
    :class:`CovarianceSet` (or ``hermitian=True``) gets Hermitian noise with
    that same per-entry variance, so the result stays Hermitian but may be
    indefinite. ``snr_db`` of ``None`` or ``+inf`` returns an unchanged copy.
    """
    is_set = isinstance(x, CovarianceSet)
    arr = x.matrices if is_set else np.asarray(x)
    if hermitian is None:
        hermitian = is_set
    if snr_db is None or np.isposinf(snr_db):
        out = arr.copy()
    else:
        var = float(np.sum(np.abs(arr) ** 2)) / (arr.size * 10.0 ** (snr_db / 10.0))
        if np.iscomplexobj(arr) or hermitian:
            g = np.sqrt(var / 2) * (rng.standard_normal(arr.shape) + 1j * rng.standard_normal(arr.shape))
            if hermitian:
                g = (g + np.swapaxes(g, -1, -2).conj()) / np.sqrt(2)
        else:
            g = np.sqrt(var) * rng.standard_normal(arr.shape)
        out = arr + g
        if hermitian:
            out = hermitize(out)
    return CovarianceSet(out) if is_set else out
