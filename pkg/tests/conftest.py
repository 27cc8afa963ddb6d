import os

# single-threaded BLAS so 32-bit results replay bit for bit
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402


def numeric_grad(f, arrays, eps=1e-5, max_entries=None, rng=None):
    """Central differences of the scalar ``f()`` w.r.t. each array, perturbed in place.

    With ``max_entries`` only a random subset of entries per array is probed;
    the others are left as NaN.
    """
    grads = []
    for a in arrays:
        g = np.full(a.shape, np.nan)
        indices = list(np.ndindex(a.shape))
        if max_entries is not None and len(indices) > max_entries:
            rng = rng or np.random.default_rng(0)
            pick = rng.choice(len(indices), size=max_entries, replace=False)
            indices = [indices[i] for i in pick]
        for idx in indices:
            old = a[idx]
            a[idx] = old + eps
            fp = f()
            a[idx] = old - eps
            fm = f()
            a[idx] = old
            g[idx] = (fp - fm) / (2 * eps)
        grads.append(g)
    return grads


def rel_error(auto, numeric):
    mask = ~np.isnan(numeric)
    a, n = auto[mask], numeric[mask]
    scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return np.linalg.norm(a - n) / scale


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    lines = []
    for key in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(key, []):
            lines += [v for k, v in getattr(rep, "user_properties", []) if k == "acceptance"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(set(lines), key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
