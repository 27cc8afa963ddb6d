"""Command-line entry point: ``covnet <command> [flags]``.

Commands: gen-data, train, evaluate, sweep-cr, sweep-noise, report.
Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

An optional ``--config`` INI file supplies defaults; explicit flags win.
Recognised sections and keys::

    [channel]   n_tx n_sub n_delay n_paths angle_spread_deg delay_min delay_max
                delay_decay snapshots_per_geometry uplink_downlink_freq_ratio
    [model]     any ModelConfig field (n_heads, n_encoder_blocks, ...)
    [train]     learning_rate batch_size epochs seed phase_augment
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .channel import ChannelConfig, generate_dataset
from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import HEADER, file_sha256, read_dataset, record_size
from .errors import CovNetError, DivergenceError, FormatError
from .model import VARIANTS, ModelConfig, estimate_flops
from .report import build_report
from .train import (
    TrainConfig,
    check_orderings,
    evaluate,
    load_model,
    metrics_rows,
    sweep_cr,
    sweep_noise,
    train,
    write_metrics,
)


class UsageError(Exception):
    """Bad flags or configuration; maps to exit code 2."""


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------


def _read_ini(path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    if path is not None:
        if not Path(path).is_file():
            raise UsageError(f"config file not found: {path}")
        parser.read(path)
    return parser


def _coerce(value: str, like):
    if isinstance(like, bool):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float) or like is None:
        return None if value.strip().lower() in ("", "none") else float(value)
    if isinstance(like, tuple):
        return tuple(tuple(int(x) for x in item.split(":")) for item in value.split(","))
    return value


def _section(parser: configparser.ConfigParser, name: str, cls) -> dict:
    if not parser.has_section(name):
        return {}
    defaults = {f.name: getattr(cls(), f.name) for f in fields(cls)}
    out = {}
    for key, raw in parser.items(name):
        if key not in defaults:
            raise UsageError(f"unknown key {key!r} in [{name}]")
        try:
            out[key] = _coerce(raw, defaults[key])
        except ValueError as exc:
            raise UsageError(f"[{name}] {key}: {exc}") from None
    return out


def _train_defaults(parser) -> dict:
    if not parser.has_section("train"):
        return {}
    allowed = {
        "learning_rate": float,
        "batch_size": int,
        "epochs": int,
        "seed": int,
        "phase_augment": lambda v: v.strip().lower() in ("1", "true", "yes", "on"),
    }
    out = {}
    for key, raw in parser.items("train"):
        if key not in allowed:
            raise UsageError(f"unknown key {key!r} in [train]")
        out[key] = allowed[key](raw)
    return out


def _pick(flag, fallback):
    return fallback if flag is None else flag


def _write_json_atomic(path: Path, obj) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default))
    os.replace(tmp, path)


def _json_default(x):
    if isinstance(x, float) and math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if isinstance(x, (np.integer, np.floating)):
        return x.item()
    raise TypeError(f"not serialisable: {type(x)}")


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def _manifest(command: str, config: dict, seed: int, dataset_hash: str | None, artifacts: dict) -> dict:
    return {
        "command": command,
        "argv": sys.argv[1:],
        "config": config,
        "seed": seed,
        "dataset_sha256": dataset_hash,
        "code_version": __version__,
        "started": _now(),
        "artifacts": {k: str(v) for k, v in artifacts.items()},
    }


def _guard_out(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise UsageError(f"{path} exists; pass --force to overwrite")


def _model_cfg(parser, n_a: int, n_t: int, cr: int, variant: str) -> ModelConfig:
    extra = _section(parser, "model", ModelConfig)
    for key in ("n_a", "n_t", "codeword_len", "variant"):
        extra.pop(key, None)
    return ModelConfig.for_grid(n_a, n_t, cr, variant=variant, **extra)


def _load_data(path) -> tuple:
    if path is None:
        raise UsageError("--data is required")
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"dataset not found: {path}")
    return read_dataset(path), file_sha256(path)


def _split(ds, test_path, test_fraction: float):
    """Held-out test set: a second file, or the tail of the training file."""
    if test_path is not None:
        test, _ = _load_data(test_path)
        return ds, test
    n_test = int(round(len(ds) * test_fraction))
    if n_test == 0 or n_test >= len(ds):
        return ds, ds
    return ds.subset(np.arange(len(ds) - n_test)), ds.subset(np.arange(len(ds) - n_test, len(ds)))


def _progress(row) -> None:
    print(
        f"{row.run_id} epoch {row.epoch}: train_mse {row.train_mse:.4g} "
        f"eval {row.eval_nmse_db:.2f} dB ({row.wallclock_s:.0f}s)",
        flush=True,
    )


def _snr(text: str) -> float:
    if text.strip().lower() in ("inf", "+inf", "clean"):
        return math.inf
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an SNR in dB: {text!r}") from None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    parser = _read_ini(args.config)
    chan = _section(parser, "channel", ChannelConfig)
    chan.pop("seed", None)
    cfg = ChannelConfig(**chan, seed=args.seed)
    out = Path(args.out)
    _guard_out(out, args.force)
    out.parent.mkdir(parents=True, exist_ok=True)
    ds = generate_dataset(cfg, args.samples, path=out, start_index=args.start_index, keep_covariances=False)
    size = out.stat().st_size
    frac = ds.energy_fraction
    print(f"wrote {out}: {len(ds)} samples, grid {cfg.n_delay}x{cfg.n_tx}, T={cfg.snapshots_per_geometry}")
    print(f"  file size {size} bytes (header {HEADER.size} + {len(ds)} x {record_size(cfg.n_delay, cfg.n_tx)})")
    print(f"  truncation energy fraction: mean {frac.mean():.4f}, min {frac.min():.4f}")
    print(f"  sha256 {file_sha256(out)}")
    return 0


def cmd_train(args) -> int:
    parser = _read_ini(args.config)
    tdef = _train_defaults(parser)
    ds, digest = _load_data(args.data)
    train_ds, test_ds = _split(ds, args.test, args.test_fraction)
    mcfg = _model_cfg(parser, ds.n_a, ds.n_t, args.cr, args.variant)
    cfg = TrainConfig(
        model=mcfg,
        learning_rate=_pick(args.lr, tdef.get("learning_rate", 1e-3)),
        batch_size=min(_pick(args.batch_size, tdef.get("batch_size", 50)), len(train_ds)),
        epochs=_pick(args.epochs, tdef.get("epochs", 40)),
        seed=_pick(args.seed, tdef.get("seed", 0)),
        covariance_snr_db=None if math.isinf(args.cov_snr) else args.cov_snr,
        noise_mode=args.noise_mode,
        phase_augment=_pick(args.phase_augment, tdef.get("phase_augment", True)),
        train_path=str(args.data),
        test_path=None if args.test is None else str(args.test),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"checkpoint": out / "model.cvnt", "metrics": out / "metrics.csv", "manifest": out / "manifest.json"}
    if not args.force:
        for p in paths.values():
            _guard_out(p, False)
    config = cfg.to_dict() | {"codeword_len": mcfg.codeword_len, "cr": mcfg.cr}
    manifest = _manifest("train", config, cfg.seed, digest, paths)
    manifest["codeword_len"] = mcfg.codeword_len
    manifest["flops"] = estimate_flops(mcfg)
    _write_json_atomic(paths["manifest"], manifest)
    print(f"training {mcfg.variant} CR={mcfg.cr} (M={mcfg.codeword_len}) on {len(train_ds)} samples", flush=True)
    try:
        result = train(cfg, train_ds, test_ds, progress=_progress)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 1
    state = result.best_state if args.keep == "best" else result.model.state_dict()
    save_checkpoint(paths["checkpoint"], state)
    write_metrics(paths["metrics"], result.history)
    manifest["finished"] = _now()
    manifest["final_eval_nmse_db"] = result.history[-1].eval_nmse_db
    manifest["best_eval_nmse_db"] = result.best_nmse_db
    _write_json_atomic(paths["manifest"], manifest)
    return 0


def _load_run(run) -> tuple:
    """A ``train`` output directory, or a sweep checkpoint with its sibling ``.json``."""
    run = Path(run)
    if run.suffix == ".cvnt":
        man_path, ckpt = run.with_suffix(".json"), run
    else:
        man_path, ckpt = run / "manifest.json", run / "model.cvnt"
    if not man_path.is_file():
        raise UsageError(f"no run manifest at {man_path}")
    manifest = json.loads(man_path.read_text())
    mcfg = ModelConfig.from_dict(manifest["config"]["model"])
    model = load_model(load_checkpoint(ckpt), mcfg)
    return model, manifest


def cmd_evaluate(args) -> int:
    model, manifest = _load_run(args.run)
    ds, _ = _load_data(args.data)
    snr = None if math.isinf(args.cov_snr) else args.cov_snr
    ev = evaluate(model, ds, snr, rng=np.random.default_rng([args.seed, 4]))
    print(f"NMSE {ev.nmse_db:.3f} dB over {len(ds)} samples (covariance SNR {args.cov_snr:g} dB)")
    for p, v in ev.percentiles_db.items():
        print(f"  p{p:02d} {v:.3f} dB")
    if args.json:
        _write_json_atomic(
            Path(args.json),
            {"nmse_db": ev.nmse_db, "nmse_linear": ev.nmse_linear, "percentiles_db": ev.percentiles_db},
        )
    return 0


def cmd_sweep_cr(args) -> int:
    parser = _read_ini(args.config)
    tdef = _train_defaults(parser)
    ds, digest = _load_data(args.data)
    train_ds, test_ds = _split(ds, args.test, args.test_fraction)
    base_model = _model_cfg(parser, ds.n_a, ds.n_t, args.crs[0], "covnet")
    base = TrainConfig.desk(
        base_model,
        learning_rate=_pick(args.lr, tdef.get("learning_rate", 1e-3)),
        batch_size=min(_pick(args.batch_size, tdef.get("batch_size", 50)), len(train_ds)),
        epochs=_pick(args.epochs, tdef.get("epochs", 40)),
        seed=_pick(args.seed, tdef.get("seed", 0)),
        phase_augment=_pick(args.phase_augment, tdef.get("phase_augment", True)),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics = out / "metrics.csv"
    _guard_out(metrics, args.force)
    manifest = _manifest("sweep-cr", base.to_dict() | {"crs": args.crs, "variants": args.variants}, base.seed,
                         digest, {"metrics": metrics, "checkpoints": out})
    _write_json_atomic(out / "manifest.json", manifest)

    def done(cell):
        print(f"{cell.variant} CR={cell.cr} M={cell.codeword_len}: {cell.nmse_db:.2f} dB ({cell.seconds:.0f}s)",
              flush=True)
        save_checkpoint(out / f"{cell.variant}-cr{cell.cr}.cvnt", cell.state)
        _write_json_atomic(out / f"{cell.variant}-cr{cell.cr}.json", {"config": {"model": cell.model_cfg.to_dict()}})

    try:
        cells = sweep_cr(base, train_ds, test_ds, args.crs, args.variants, workers=args.workers, progress=done)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 1
    write_metrics(metrics, metrics_rows(cells))
    for name, ok in check_orderings(cells).items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return 0


def cmd_sweep_noise(args) -> int:
    model, manifest = _load_run(args.run)
    ds, _ = _load_data(args.data)
    rows = sweep_noise(model, ds, args.snrs, seed=args.seed)
    out = Path(args.out)
    _guard_out(out, args.force)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_metrics(out, rows)
    for r in rows:
        print(f"SNR {r.cov_snr_db:g} dB: {r.eval_nmse_db:.3f} dB")
    return 0


def cmd_report(args) -> int:
    for p in args.metrics:
        if not Path(p).is_file():
            raise UsageError(f"metrics file not found: {p}")
    paths = build_report(args.metrics, args.out)
    for name, p in paths.items():
        print(f"{name}: {p}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="covnet", description="Covariance-assisted CSI feedback experiments.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset file")
    g.add_argument("--config", help="INI file with a [channel] section")
    g.add_argument("--out", required=True, help="output dataset path")
    g.add_argument("--samples", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--start-index", type=int, default=0, help="first sample index (disjoint ranges give disjoint sets)")
    g.add_argument("--force", action="store_true", help="overwrite an existing file")
    g.set_defaults(func=cmd_gen_data)

    def training_flags(p):
        p.add_argument("--config", help="INI file with [model] and [train] sections")
        p.add_argument("--data", required=True, help="training dataset")
        p.add_argument("--test", help="separate test dataset (default: hold out the tail of --data)")
        p.add_argument("--test-fraction", type=float, default=0.2)
        p.add_argument("--epochs", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--phase-augment", action=argparse.BooleanOptionalAction, default=None,
                       help="random common-phase rotation of training channels (default: on)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--force", action="store_true")

    t = sub.add_parser("train", help="train one model")
    training_flags(t)
    t.add_argument("--cr", type=int, required=True, help="compression ratio 2*n_a*n_t / M")
    t.add_argument("--variant", choices=VARIANTS, default="covnet")
    t.add_argument("--cov-snr", type=_snr, default=math.inf, help="covariance SNR in dB (default: clean)")
    t.add_argument("--noise-mode", choices=("eval", "train"), default="eval")
    t.add_argument("--keep", choices=("best", "final"), default="best", help="which weights to checkpoint")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="evaluate a trained run on a dataset")
    e.add_argument("--run", required=True, help="directory written by 'train', or a sweep-cr .cvnt file")
    e.add_argument("--data", required=True)
    e.add_argument("--cov-snr", type=_snr, default=math.inf)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--json", help="also write the result as JSON")
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep-cr", help="train every (variant, CR) cell")
    training_flags(s)
    s.add_argument("--crs", type=int, nargs="+", default=[32, 64, 128, 256])
    s.add_argument("--variants", nargs="+", choices=VARIANTS, default=list(VARIANTS))
    s.add_argument("--workers", type=int, default=1, help="parallel processes (capped by COVNET_THREADS)")
    s.set_defaults(func=cmd_sweep_cr)

    n = sub.add_parser("sweep-noise", help="evaluate a trained run under covariance noise")
    n.add_argument("--run", required=True, help="directory written by 'train', or a sweep-cr .cvnt file")
    n.add_argument("--data", required=True)
    n.add_argument("--snrs", type=_snr, nargs="+", default=[0.0, 5.0, 10.0, math.inf])
    n.add_argument("--seed", type=int, default=0)
    n.add_argument("--out", required=True, help="metrics CSV to write")
    n.add_argument("--force", action="store_true")
    n.set_defaults(func=cmd_sweep_noise)

    r = sub.add_parser("report", help="merge metrics and draw the plots")
    r.add_argument("--metrics", nargs="+", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, CovNetError) as exc:
        # config validation raises ValueError subclasses
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, ValueError) else 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
