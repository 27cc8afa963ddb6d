"""Training loop, evaluation, and CR / covariance-noise sweeps."""

from __future__ import annotations

import csv
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dataset import Dataset
from .errors import ConfigError, DivergenceError, ShapeError
from .model import CovNet, ModelConfig, estimate_flops
from .optim import Adam
from .tensor import Tensor
from .transforms import nmse_per_sample, to_db, unstack_real

log = logging.getLogger(__name__)

METRICS_COLUMNS = [
    "run_id",
    "variant",
    "cr",
    "cov_snr_db",
    "epoch",
    "train_mse",
    "eval_nmse_db",
    "flops_total",
    "wallclock_s",
]


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    learning_rate: float = 1e-4
    batch_size: int = 200
    epochs: int = 400
    seed: int = 0
    covariance_snr_db: float | None = None
    noise_mode: str = "eval"  # "eval": clean training, noisy evaluation; "train": noisy for both
    eval_every: int = 0  # steps between evaluations; 0 -> once per epoch
    phase_augment: bool = False  # rotate each training channel by a random common phase
    train_path: str | None = None
    test_path: str | None = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.noise_mode not in ("eval", "train"):
            raise ConfigError(f"noise_mode must be 'eval' or 'train', got {self.noise_mode!r}")

    @classmethod
    def desk(cls, model: ModelConfig, **overrides) -> TrainConfig:
        """Desk-scale protocol: 40 epochs, batch 50, learning rate 1e-3, phase augmentation."""
        base = dict(model=model, learning_rate=1e-3, batch_size=50, epochs=40, phase_augment=True)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def paper_scale(cls, model: ModelConfig, **overrides) -> TrainConfig:
        """The full protocol (batch 200, 400 epochs, lr 1e-4); not practical on a CPU."""
        return cls(model=model, **overrides)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        d = dict(d)
        d["model"] = ModelConfig.from_dict(d["model"])
        return cls(**d)


@dataclass
class MetricsRow:
    run_id: str
    variant: str
    cr: int
    cov_snr_db: float
    epoch: int
    train_mse: float
    eval_nmse_db: float
    flops_total: int
    wallclock_s: float

    def as_csv(self) -> dict:
        d = asdict(self)
        for key in ("cov_snr_db", "train_mse", "eval_nmse_db", "wallclock_s"):
            d[key] = _fmt(d[key])
        return d


def _fmt(x: float) -> str:
    if x is None:
        return "inf"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(float(x))


@dataclass
class EvalResult:
    nmse_db: float
    nmse_linear: float
    per_sample: np.ndarray  # linear NMSE per sample
    percentiles_db: dict[int, float]


@dataclass
class TrainResult:
    model: CovNet
    history: list[MetricsRow]
    best_state: dict[str, np.ndarray]
    best_nmse_db: float
    steps: int
    losses: list[float]


def run_id_for(cfg: TrainConfig) -> str:
    snr = "inf" if cfg.covariance_snr_db is None else f"{cfg.covariance_snr_db:g}"
    return f"{cfg.model.variant}-cr{cfg.model.cr}-snr{snr}-s{cfg.seed}"


def rotate_phase(h: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """Multiply stacked-real channels ``(n, 2n_a, n_t)`` by ``exp(j psi)`` per sample.

    A common phase leaves every covariance matrix unchanged, so the rotated
    channel is an equally likely draw for the same ``q_bar`` / ``c_bar``.
    """
    n_a = h.shape[-2] // 2
    re, im = h[..., :n_a, :], h[..., n_a:, :]
    c = np.cos(psi).astype(h.dtype)[:, None, None]
    s = np.sin(psi).astype(h.dtype)[:, None, None]
    return np.concatenate([re * c - im * s, re * s + im * c], axis=-2)


def model_inputs(ds: Dataset, dtype) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return ds.h_stacked(dtype), ds.q_stacked(dtype), ds.c_channels(dtype)


def _check_dims(cfg: ModelConfig, ds: Dataset) -> None:
    if (ds.n_a, ds.n_t) != (cfg.n_a, cfg.n_t):
        raise ShapeError(f"model grid {cfg.n_a}x{cfg.n_t} does not match dataset grid {ds.n_a}x{ds.n_t}")


def evaluate(
    model: CovNet,
    ds: Dataset,
    covariance_snr_db: float | None = None,
    rng: np.random.Generator | int | None = 0,
    batch_size: int = 250,
) -> EvalResult:
    """NMSE of the reconstruction on ``ds``, optionally with noisy covariance inputs.

    The noise only touches the covariance matrices (and hence ``q_bar`` and
    ``c_bar``); the fed-back channel is clean.
    """
    _check_dims(model.cfg, ds)
    if covariance_snr_db is not None and not np.isposinf(covariance_snr_db):
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        ds = ds.with_covariance_noise(covariance_snr_db, rng)
    h, q, c = model_inputs(ds, model.dtype)
    out = model.predict(h, q, c, batch_size=batch_size)
    per = nmse_per_sample(ds.h.astype(np.complex128), unstack_real(out.astype(np.float64)))
    lin = float(per.mean())
    pct = {p: to_db(float(np.percentile(per, p))) for p in (5, 25, 50, 75, 95)}
    return EvalResult(nmse_db=to_db(lin), nmse_linear=lin, per_sample=per, percentiles_db=pct)


def train(
    cfg: TrainConfig,
    train_ds: Dataset,
    test_ds: Dataset | None = None,
    progress: Callable[[MetricsRow], None] | None = None,
    model: CovNet | None = None,
) -> TrainResult:
    """Minimise the batch-mean squared reconstruction error with Adam.

    Evaluation runs on ``test_ds`` (or ``train_ds`` when absent) at epoch 0
    and then every ``eval_every`` steps / every epoch. The parameters with the
    best evaluation NMSE are kept in ``best_state``; the returned model holds
    the final parameters.
    """
    mcfg = cfg.model
    _check_dims(mcfg, train_ds)
    if cfg.epochs > 0 and cfg.batch_size > len(train_ds):
        raise ConfigError(f"batch_size {cfg.batch_size} exceeds training set size {len(train_ds)}")
    eval_ds = test_ds if test_ds is not None else train_ds
    noise_rng = np.random.default_rng([cfg.seed, 2])
    if cfg.covariance_snr_db is not None and cfg.noise_mode == "train":
        train_ds = train_ds.with_covariance_noise(cfg.covariance_snr_db, noise_rng)
    if model is None:
        model = CovNet(mcfg, np.random.default_rng([cfg.seed, 0]))
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    augment_rng = np.random.default_rng([cfg.seed, 5])
    dtype = model.dtype
    h, q, c = model_inputs(train_ds, dtype)
    opt = Adam(model.parameters(), lr=cfg.learning_rate)
    flops = estimate_flops(mcfg)["total"]
    run_id = run_id_for(cfg)
    snr = math.inf if cfg.covariance_snr_db is None else float(cfg.covariance_snr_db)
    start = time.perf_counter()
    history: list[MetricsRow] = []
    losses: list[float] = []
    best = {"db": math.inf, "state": model.state_dict()}

    def record(epoch: int, train_mse: float) -> None:
        ev = evaluate(model, eval_ds, cfg.covariance_snr_db, rng=np.random.default_rng([cfg.seed, 3]))
        row = MetricsRow(run_id, mcfg.variant, mcfg.cr, snr, epoch, train_mse, ev.nmse_db, flops,
                         time.perf_counter() - start)
        history.append(row)
        if ev.nmse_db < best["db"]:
            best["db"] = ev.nmse_db
            best["state"] = model.state_dict()
        if progress is not None:
            progress(row)

    init_out = model.predict(h, q, c)
    record(0, float(np.mean(np.sum((init_out.astype(np.float64) - h) ** 2, axis=(-2, -1)))))

    n = len(train_ds)
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            target = h[idx]
            if cfg.phase_augment:
                target = rotate_phase(target, augment_rng.uniform(0, 2 * np.pi, len(idx)))
            out = model(target, q[idx], c[idx])
            diff = out - target
            loss = (diff * diff).sum(axis=(-2, -1)).mean()
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(f"non-finite loss {value} at epoch {epoch}, step {step}")
            loss.backward()
            opt.step()
            opt.zero_grad()
            step += 1
            losses.append(value)
            epoch_loss += value * len(idx)
            if cfg.eval_every and step % cfg.eval_every == 0:
                record(epoch, value)
        if not cfg.eval_every:
            record(epoch, epoch_loss / n)
    return TrainResult(model, history, best["state"], best["db"], step, losses)


def write_metrics(path, rows: Sequence[MetricsRow], append: bool = False) -> Path:
    path = Path(path)
    exists = append and path.exists()
    with open(path, "a" if append else "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_COLUMNS)
        if not exists:
            writer.writeheader()
        for row in rows:
            writer.writerow(row.as_csv())
    return path


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


@dataclass
class SweepCell:
    variant: str
    cr: int
    codeword_len: int
    nmse_db: float
    flops: dict[str, int]
    history: list[MetricsRow]
    state: dict[str, np.ndarray]
    model_cfg: ModelConfig
    seconds: float


def _run_cell(args) -> SweepCell:
    cfg, train_ds, test_ds = args
    t0 = time.perf_counter()
    result = train(cfg, train_ds, test_ds)
    final = result.history[-1].eval_nmse_db
    return SweepCell(
        variant=cfg.model.variant,
        cr=cfg.model.cr,
        codeword_len=cfg.model.codeword_len,
        nmse_db=final,
        flops=estimate_flops(cfg.model),
        history=result.history,
        state=result.model.state_dict(),
        model_cfg=cfg.model,
        seconds=time.perf_counter() - t0,
    )


def worker_count(requested: int | None = None) -> int:
    cap = int(os.environ.get("COVNET_THREADS", os.cpu_count() or 1))
    return max(1, min(requested or 1, cap))


def sweep_cr(
    base: TrainConfig,
    train_ds: Dataset,
    test_ds: Dataset,
    crs: Sequence[int] = (32, 64, 128, 256),
    variants: Sequence[str] = ("covnet", "no_covariance_baseline", "modified_covnet"),
    cells: Sequence[tuple[str, int]] | None = None,
    workers: int = 1,
    progress: Callable[[SweepCell], None] | None = None,
) -> list[SweepCell]:
    """Train every (variant, CR) cell with the shared seed and data.

    ``cells`` restricts the grid to the given pairs. Final-epoch test NMSE is
    reported per cell.
    """
    grid = list(cells) if cells is not None else [(v, cr) for v in variants for cr in crs]
    jobs = []
    for variant, cr in grid:
        mcfg = ModelConfig.for_grid(
            base.model.n_a,
            base.model.n_t,
            cr,
            **{k: v for k, v in base.model.to_dict().items() if k not in ("n_a", "n_t", "codeword_len", "variant")},
            variant=variant,
        )
        jobs.append((replace(base, model=mcfg), train_ds, test_ds))
    n_workers = worker_count(workers)
    out: list[SweepCell] = []
    if n_workers == 1:
        for job in jobs:
            cell = _run_cell(job)
            log.info("%s CR=%d: %.2f dB (%.0fs)", cell.variant, cell.cr, cell.nmse_db, cell.seconds)
            if progress:
                progress(cell)
            out.append(cell)
    else:
        with ProcessPoolExecutor(n_workers) as pool:
            for cell in pool.map(_run_cell, jobs):
                if progress:
                    progress(cell)
                out.append(cell)
    return out


def cell_table(cells: Sequence[SweepCell]) -> dict[tuple[str, int], float]:
    return {(c.variant, c.cr): c.nmse_db for c in cells}


def check_orderings(cells: Sequence[SweepCell]) -> dict[str, bool]:
    """Qualitative orderings expected of a CR sweep (only those whose cells are present)."""
    t = cell_table(cells)
    cov, base, mod = "covnet", "no_covariance_baseline", "modified_covnet"
    checks = {}
    if (cov, 256) in t and (base, 256) in t:
        checks["covnet_beats_baseline_cr256_by_1dB"] = t[(base, 256)] - t[(cov, 256)] >= 1.0
    if (cov, 64) in t and (base, 64) in t:
        checks["covnet_beats_baseline_cr64_by_0.5dB"] = t[(base, 64)] - t[(cov, 64)] >= 0.5
    if (cov, 256) in t and (mod, 256) in t:
        checks["covnet_beats_modified_cr256"] = t[(cov, 256)] < t[(mod, 256)]
    if all(k in t for k in [(cov, 32), (cov, 256), (base, 32), (base, 256)]):
        checks["covnet_degrades_less_than_baseline"] = (t[(cov, 256)] - t[(cov, 32)]) < (
            t[(base, 256)] - t[(base, 32)]
        )
    return checks


def metrics_rows(cells: Sequence[SweepCell]) -> list[MetricsRow]:
    return [row for c in cells for row in c.history]


def sweep_noise(
    model: CovNet,
    test_ds: Dataset,
    snrs_db: Sequence[float] = (0.0, 5.0, 10.0, math.inf),
    seed: int = 0,
    run_id: str | None = None,
) -> list[MetricsRow]:
    """Evaluate one trained model with noisy covariance inputs at each SNR."""
    cfg = model.cfg
    flops = estimate_flops(cfg)["total"]
    rows = []
    start = time.perf_counter()
    for snr in snrs_db:
        ev = evaluate(model, test_ds, snr, rng=np.random.default_rng([seed, 4]))
        rows.append(
            MetricsRow(
                f"{run_id or f'{cfg.variant}-cr{cfg.cr}-s{seed}'}-evalsnr{snr:g}",
                cfg.variant,
                cfg.cr,
                float(snr),
                -1,
                math.nan,
                ev.nmse_db,
                flops,
                time.perf_counter() - start,
            )
        )
    return rows


def load_model(state: dict[str, np.ndarray], model_cfg: ModelConfig) -> CovNet:
    model = CovNet(model_cfg, 0)
    model.load_state_dict(state)
    return model
