"""Walk through the covariance side information for one channel sample.

Draws a geometry, estimates the per-delay-row covariances from a burst of
snapshots, reduces them to the eigenvector matrix and the two strongest
covariances, and checks how well the top eigenvector explains the channel.

    python demos/covariance_walkthrough.py
"""

import numpy as np

from covnet.channel import ChannelConfig, generate_sample
from covnet.covariance import inject_noise

cfg = ChannelConfig.toy()
h, cov, pre, energy = generate_sample(cfg, index=0)
print(f"grid {cfg.n_delay} delay rows x {cfg.n_tx} antennas, kept energy {energy:.4f}")

# per-row power ranking picks the two covariance matrices handed to the network
print("row powers (top 5):", np.round(np.sort(pre.row_powers)[::-1][:5], 4))
print(f"strongest rows: {pre.i_m1}, {pre.i_m2}")

# the top eigenvector of each row covariance is a good direction for that row of h
rows = np.abs(np.sum(h * pre.q_bar, axis=1)) ** 2  # q_bar holds conjugated eigenvectors
captured = rows.sum() / np.sum(np.abs(h) ** 2)
print(f"energy captured by projecting each row on its top eigenvector: {captured:.3f}")

# covariances ignore a common phase on the channel, so the side information does too
rotated = h * np.exp(1j * 1.3)
assert np.allclose(np.abs(np.sum(rotated * pre.q_bar, axis=1)), np.abs(np.sum(h * pre.q_bar, axis=1)))
print("projection magnitudes unchanged under a common phase rotation")

# noisy side information: same projection with a perturbed eigenvector matrix
rng = np.random.default_rng(0)
for snr in (0.0, 10.0, 20.0):
    q = inject_noise(pre.q_bar, snr, rng)
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    frac = np.sum(np.abs(np.sum(h * q, axis=1)) ** 2) / np.sum(np.abs(h) ** 2)
    print(f"  SNR {snr:4.0f} dB: captured {frac:.3f}")
