import json

import numpy as np
import pytest

from covnet import transforms as tf
from covnet.channel import (
    ChannelConfig,
    PathSet,
    angle_delay_snapshots,
    draw_geometry,
    generate_dataset,
    generate_sample,
    synthesize_channel,
)
from covnet.errors import ConfigError


def one_path(theta=0.0, tau=0.0, g=1.0, phi=0.0):
    a = np.array
    return PathSet(a([theta]), a([tau]), a([g]), a([phi]), a([phi]))


def test_single_path_at_broadside_zero_delay_is_constant():
    cfg = ChannelConfig.toy(n_paths=1)
    h = synthesize_channel(one_path(g=0.5, phi=0.3), cfg)
    np.testing.assert_allclose(h, 0.5 * np.exp(0.3j) * np.ones((cfg.n_sub, cfg.n_tx)), atol=1e-14)


def test_zero_delay_channel_is_rank_one(rng):
    cfg = ChannelConfig.toy()
    p = 3
    paths = PathSet(rng.uniform(-1, 1, p), np.zeros(p), np.ones(p), rng.uniform(0, 6, p), np.zeros(p))
    h = synthesize_channel(paths, cfg)
    assert np.linalg.matrix_rank(h, tol=1e-8 * np.linalg.norm(h)) == 1


def test_single_path_closed_form_entries():
    cfg = ChannelConfig.toy()
    theta, tau = 0.4, 5.5
    h = synthesize_channel(one_path(theta, tau), cfg)
    i, m = 7, 3
    ref = np.exp(-1j * np.pi * m * np.sin(theta)) * np.exp(2j * np.pi * tau * i / cfg.n_sub)
    assert abs(h[i, m] - ref) < 1e-12


def test_uplink_uses_scaled_spacing():
    cfg = ChannelConfig.toy()
    theta = 0.7
    up = synthesize_channel(one_path(theta), cfg, "up")
    kappa = 1 / cfg.uplink_downlink_freq_ratio
    m = np.arange(cfg.n_tx)
    np.testing.assert_allclose(up[0], np.exp(-1j * np.pi * kappa * m * np.sin(theta)), atol=1e-12)
    with pytest.raises(ConfigError):
        synthesize_channel(one_path(), cfg, "side")


def test_orthogonal_paths_add_power():
    # two on-grid angles and delays are orthogonal, so powers add exactly
    cfg = ChannelConfig.toy()
    s = 2 * 3 / cfg.n_tx  # sin(theta) spacing of 3 angular bins
    paths = PathSet(np.array([0.0, np.arcsin(s)]), np.array([0.0, 2.0]), np.array([1.0, 2.0]),
                    np.array([0.1, 2.0]), np.zeros(2))
    h = synthesize_channel(paths, cfg)
    assert abs(np.sum(np.abs(h) ** 2) - (1 + 4) * cfg.n_sub * cfg.n_tx) < 1e-8


def test_one_path_config_degenerate_but_valid():
    cfg = ChannelConfig.toy(n_paths=1)
    h, cov, pre, frac = generate_sample(cfg, 0)
    assert h.shape == (cfg.n_delay, cfg.n_tx) and 0 < frac <= 1
    # a single path gives rank-1 covariances
    assert np.linalg.matrix_rank(cov.matrices[0], tol=1e-8 * np.abs(cov.matrices[0]).max()) == 1


def test_expected_channel_energy_is_one():
    cfg = ChannelConfig.toy()
    rng = np.random.default_rng(0)
    e = [np.sum(np.abs(synthesize_channel(draw_geometry(cfg, rng), cfg)) ** 2) for _ in range(400)]
    assert abs(np.mean(e) - 1.0) < 0.1


def test_factored_snapshots_match_full_pipeline(rng):
    cfg = ChannelConfig.toy()
    paths = draw_geometry(cfg, rng)
    phases = rng.uniform(0, 2 * np.pi, (3, cfg.n_paths))
    fast = angle_delay_snapshots(paths, cfg, phases)
    for t in range(3):
        p = PathSet(paths.angles, paths.delays, paths.magnitudes, phases[t], phases[t])
        slow = tf.truncate(tf.to_angle_delay(synthesize_channel(p, cfg)), cfg.n_delay)
        np.testing.assert_allclose(fast[t], slow, atol=1e-12)


def test_covariance_converges_to_phase_average():
    # uniform independent phases: E[h h^H] = sum_p |g_p|^2 a_p a_p^H per row
    cfg = ChannelConfig.toy(snapshots_per_geometry=20000)
    rng = np.random.default_rng(3)
    paths = draw_geometry(cfg, rng)
    phases = rng.uniform(0, 2 * np.pi, (cfg.snapshots_per_geometry, cfg.n_paths))
    snaps = angle_delay_snapshots(paths, cfg, phases)
    est = np.einsum("tni,tnj->nij", snaps, snaps.conj()) / len(snaps)
    ref = np.zeros_like(est)
    for p in range(cfg.n_paths):
        ph = np.zeros((1, cfg.n_paths))
        one = PathSet(paths.angles, paths.delays, np.where(np.arange(cfg.n_paths) == p, paths.magnitudes, 0), ph[0], ph[0])
        a = angle_delay_snapshots(one, cfg, ph)[0]
        ref += np.einsum("ni,nj->nij", a, a.conj())
    assert np.linalg.norm(est - ref) < 0.05 * np.linalg.norm(ref)


def test_generation_is_deterministic_and_index_addressed():
    cfg = ChannelConfig.toy()
    a = generate_dataset(cfg, 4)
    b = generate_dataset(cfg, 4)
    assert a.h.tobytes() == b.h.tobytes() and a.q_bar.tobytes() == b.q_bar.tobytes()
    tail = generate_dataset(cfg, 2, start_index=2)
    assert tail.h.tobytes() == a.h[2:].tobytes()
    other = generate_dataset(ChannelConfig.toy(seed=1), 1)
    assert other.h.tobytes() != a.h[:1].tobytes()


def test_written_files_are_byte_identical(tmp_path):
    cfg = ChannelConfig.toy()
    generate_dataset(cfg, 3, tmp_path / "a.cvds")
    generate_dataset(cfg, 3, tmp_path / "b.cvds")
    assert (tmp_path / "a.cvds").read_bytes() == (tmp_path / "b.cvds").read_bytes()
    manifest = json.loads((tmp_path / "a.cvds.json").read_text())
    assert manifest["n_samples"] == 3 and manifest["config"]["n_tx"] == cfg.n_tx
    assert len(manifest["sha256"]) == 64


def test_truncation_keeps_most_energy():
    ds = generate_dataset(ChannelConfig(), 40, keep_covariances=False)
    assert ds.energy_fraction.mean() >= 0.99


def test_generated_covariances_are_psd():
    ds = generate_dataset(ChannelConfig.toy(), 5)
    for k in range(5):
        lam = np.linalg.eigvalsh(ds.covariances[k].astype(np.complex128))
        assert lam.min() >= -1e-6 * lam.max()
    np.testing.assert_allclose(np.linalg.norm(ds.q_bar, axis=2), 1.0, atol=1e-5)


@pytest.mark.parametrize(
    "bad",
    [dict(n_tx=0), dict(n_delay=100), dict(n_paths=0), dict(snapshots_per_geometry=1),
     dict(delay_min=12.0), dict(angle_spread_deg=-1.0), dict(uplink_downlink_freq_ratio=0.5)],
)
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        ChannelConfig.toy(**bad)


def test_sample_count_validation():
    with pytest.raises(ConfigError):
        generate_dataset(ChannelConfig.toy(), 0)
