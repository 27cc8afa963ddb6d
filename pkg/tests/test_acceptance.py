"""Acceptance gate: one test per criterion, each reporting a single pass/fail line.

The lines are collected in the terminal summary (see conftest.py). Criteria 6 to 9
share one desk-scale CR sweep that takes most of an hour on a single core.
"""

import math
import re
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from covnet.channel import ChannelConfig, generate_dataset
from covnet.model import ModelConfig, attention_flops, conv_flops, estimate_flops, linear_flops
from covnet.train import TrainConfig, check_orderings, cell_table, load_model, sweep_cr, sweep_noise, train

pytestmark = pytest.mark.acceptance

TESTS = Path(__file__).parent
COV, BASE, MOD = "covnet", "no_covariance_baseline", "modified_covnet"
SWEEP_CELLS = [(COV, 32), (COV, 64), (COV, 256), (BASE, 32), (BASE, 64), (BASE, 256), (MOD, 256)]


def report(record_property, n: int, ok: bool, detail: str) -> bool:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d}: {detail}"
    record_property("acceptance", line)
    print(line)
    return ok


def run_suite(*args: str) -> tuple[int, int, float]:
    """Run a pytest selection in a subprocess; returns (passed, failed, seconds)."""
    t0 = time.perf_counter()
    out = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *args],
                         capture_output=True, text=True, cwd=TESTS.parent)
    seconds = time.perf_counter() - t0
    text = out.stdout + out.stderr
    passed = sum(int(m) for m in re.findall(r"(\d+) passed", text))
    failed = sum(int(m) for m in re.findall(r"(\d+) (?:failed|error)", text))
    if out.returncode not in (0, 5):
        failed = max(failed, 1)
    return passed, failed, seconds


def suite_criterion(record_property, n, limit_s, what, *args):
    passed, failed, seconds = run_suite(*args)
    ok = passed > 0 and failed == 0 and seconds < limit_s
    report(record_property, n, ok, f"{what}: {passed} passed, {failed} failed in {seconds:.1f}s (limit {limit_s}s)")
    assert ok


def test_criterion_01_gradient_suite(record_property):
    suite_criterion(record_property, 1, 300, "gradient checks",
                    str(TESTS / "test_tensor.py"), str(TESTS / "test_model.py"), "-k", "gradient")


def test_criterion_02_transform_oracles(record_property):
    suite_criterion(record_property, 2, 60, "transform oracles", str(TESTS / "test_transforms.py"))


def test_criterion_03_covariance_suite(record_property):
    suite_criterion(record_property, 3, 120, "covariance and eigen suite", str(TESTS / "test_covariance.py"))


def test_criterion_04_shape_closure(record_property):
    suite_criterion(record_property, 4, 60, "shape closure",
                    str(TESTS / "test_model.py"), str(TESTS / "test_transforms.py"),
                    "-k", "shape_closure or cr_arithmetic or variants_are_well_formed")


def test_criterion_05_overfit(record_property):
    ds = generate_dataset(ChannelConfig.toy(), 32)
    cfg = TrainConfig(model=ModelConfig.for_grid(16, 16, 16), learning_rate=1e-3, batch_size=32,
                      epochs=2000, eval_every=250, seed=0)
    t0 = time.perf_counter()
    res = train(cfg, ds)
    seconds = time.perf_counter() - t0
    final = res.history[-1].eval_nmse_db
    ok = final < -30.0 and seconds < 600
    report(record_property, 5, ok, f"overfit 32 samples: train NMSE {final:.1f} dB after {res.steps} steps "
                                   f"in {seconds:.0f}s (need < -30 dB, < 600s)")
    assert ok


# desk-scale sweep shared by criteria 6 to 9


@pytest.fixture(scope="module")
def desk_data():
    cfg = ChannelConfig()
    return generate_dataset(cfg, 2000), generate_dataset(cfg, 500, start_index=100_000)


def desk_base() -> TrainConfig:
    return TrainConfig.desk(ModelConfig.for_grid(32, 32, 32), seed=0)


@pytest.fixture(scope="module")
def desk_sweep(desk_data):
    train_ds, test_ds = desk_data
    t0 = time.perf_counter()
    cells = sweep_cr(desk_base(), train_ds, test_ds, cells=SWEEP_CELLS,
                     progress=lambda c: print(f"  {c.variant} CR={c.cr}: {c.nmse_db:.2f} dB ({c.seconds:.0f}s)",
                                              flush=True))
    return cells, time.perf_counter() - t0


def test_criterion_06_covariance_assist_ordering(record_property, desk_sweep):
    cells, seconds = desk_sweep
    t = cell_table(cells)
    checks = check_orderings(cells)
    ok = (checks["covnet_beats_baseline_cr256_by_1dB"] and checks["covnet_beats_baseline_cr64_by_0.5dB"]
          and checks["covnet_beats_modified_cr256"] and seconds < 3600)
    report(record_property, 6, ok,
           f"gap to baseline CR256 {t[(BASE, 256)] - t[(COV, 256)]:+.2f} dB (need >= 1.0), "
           f"CR64 {t[(BASE, 64)] - t[(COV, 64)]:+.2f} dB (need >= 0.5), "
           f"gap to modified CR256 {t[(MOD, 256)] - t[(COV, 256)]:+.2f} dB (need > 0); sweep {seconds:.0f}s")
    assert ok


def test_criterion_07_high_cr_degradation(record_property, desk_sweep):
    t = cell_table(desk_sweep[0])
    cov_drop = t[(COV, 256)] - t[(COV, 32)]
    base_drop = t[(BASE, 256)] - t[(BASE, 32)]
    ok = cov_drop < base_drop
    report(record_property, 7, ok, f"CR32 to CR256 loss covnet {cov_drop:.2f} dB vs baseline {base_drop:.2f} dB")
    assert ok


def test_criterion_08_noise_robustness(record_property, desk_data, desk_sweep):
    _, test_ds = desk_data
    cells, _ = desk_sweep
    cell = next(c for c in cells if (c.variant, c.cr) == (COV, 256))
    t0 = time.perf_counter()
    rows = sweep_noise(load_model(cell.state, cell.model_cfg), test_ds, (0.0, 5.0, 10.0, math.inf))
    seconds = time.perf_counter() - t0
    values = [r.eval_nmse_db for r in rows]
    monotone = all(b <= a + 0.2 for a, b in zip(values, values[1:]))
    margin = cell_table(cells)[(BASE, 256)] - values[0]
    ok = monotone and margin >= 0.5 and seconds < 600
    curve = ", ".join(f"{r.cov_snr_db:g}:{v:.2f}" for r, v in zip(rows, values))
    report(record_property, 8, ok, f"NMSE by SNR [{curve}] monotone={monotone}, "
                                   f"SNR0 margin over clean baseline {margin:+.2f} dB (need >= 0.5)")
    assert ok


def test_criterion_09_determinism(record_property, desk_data, desk_sweep):
    train_ds, test_ds = desk_data
    first = cell_table(desk_sweep[0])[(COV, 256)]
    t0 = time.perf_counter()
    again = sweep_cr(desk_base(), train_ds, test_ds, cells=[(COV, 256)])[0]
    seconds = time.perf_counter() - t0
    ok = np.float64(again.nmse_db).tobytes() == np.float64(first).tobytes() and seconds < 900
    report(record_property, 9, ok, f"covnet CR256 rerun {again.nmse_db!r} vs {first!r} dB in {seconds:.0f}s")
    assert ok


def test_criterion_10_flops(record_property):
    hand = [
        linear_flops(1, 64, 32) == 2 * 64 * 32,
        conv_flops(2, 3, 3, 3, 3, 3) == 2 * 2 * 3 * 3 * 3 * 3 * 3,
        attention_flops(4, 4, 8) == 4 * 2 * 4 * 8 * 8 + 2 * 2 * 4 * 4 * 8,
    ]
    totals = [estimate_flops(ModelConfig.for_grid(32, 32, cr))["total"] for cr in (32, 64, 128, 256)]
    monotone = all(b <= a for a, b in zip(totals, totals[1:]))
    ok = all(hand) and monotone
    report(record_property, 10, ok, f"hand counts {sum(hand)}/3 exact, totals by CR {totals} non-increasing={monotone}")
    assert ok
