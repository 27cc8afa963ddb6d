"""End to end on a small grid: data, training, evaluation, noise sweep, report.

Trains covnet and the no-covariance baseline at one compression ratio on the
16 x 16 toy grid, compares them, and writes the plots to ``demo_out/``.
Runs in about two minutes on one core.

    python demos/quickstart.py [out_dir]
"""

import math
import sys
from pathlib import Path

from covnet.channel import ChannelConfig, generate_dataset
from covnet.model import ModelConfig, estimate_flops
from covnet.report import build_report
from covnet.train import TrainConfig, evaluate, load_model, metrics_rows, sweep_cr, sweep_noise, write_metrics

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

cfg = ChannelConfig.toy()
train_ds = generate_dataset(cfg, 1500)
test_ds = generate_dataset(cfg, 300, start_index=50_000)
print(f"{len(train_ds)} train / {len(test_ds)} test samples on a {cfg.n_delay}x{cfg.n_tx} grid")

base = TrainConfig.desk(ModelConfig.for_grid(16, 16, 16), epochs=30, batch_size=50)
cells = sweep_cr(base, train_ds, test_ds, cells=[("covnet", 16), ("no_covariance_baseline", 16)],
                 progress=lambda c: print(f"  trained {c.variant} CR={c.cr} M={c.codeword_len}: "
                                          f"{c.nmse_db:.2f} dB in {c.seconds:.0f}s"))
for c in cells:
    print(f"{c.variant:24s} test NMSE {c.nmse_db:6.2f} dB, {estimate_flops(c.model_cfg)['total'] / 1e6:.2f} MFLOPs")

# evaluation with noisy side information only affects covnet
covnet = next(c for c in cells if c.variant == "covnet")
model = load_model(covnet.state, covnet.model_cfg)
noise = sweep_noise(model, test_ds, (0.0, 5.0, 10.0, math.inf))
for row in noise:
    print(f"  covariance SNR {row.cov_snr_db:>4g} dB -> {row.eval_nmse_db:.2f} dB")
print("percentiles (dB):", {k: round(v, 2) for k, v in evaluate(model, test_ds).percentiles_db.items()})

paths = build_report([write_metrics(out / "train.csv", metrics_rows(cells)),
                      write_metrics(out / "noise.csv", noise)], out / "report")
for name, p in paths.items():
    print(f"wrote {name}: {p}")
