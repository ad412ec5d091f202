"""Shared synthetic fixtures for inversion tests and the acceptance gate."""

import numpy as np

# bimodal cluster-size truth: masses 0.3 at s=20 and 0.7 at s=400
BIMODAL_S = (20.0, 400.0)
BIMODAL_W = (0.3, 0.7)
BIMODAL_ORDERS = np.arange(0, 62, 2.0)

# "1% noise" on the measured phase signals; the M-point Fourier transform
# that produces a coherence spectrum averages it down by sqrt(M)
PHASE_NOISE = 0.01
N_PHASES = 32
SPECTRUM_NOISE = PHASE_NOISE / np.sqrt(N_PHASES)


def bimodal_clean(orders=BIMODAL_ORDERS):
    return sum(
        w * np.exp(-np.asarray(orders, float) ** 2 / s)
        for w, s in zip(BIMODAL_W, BIMODAL_S)
    )


def bimodal_noisy(seed, orders=BIMODAL_ORDERS, noise=SPECTRUM_NOISE):
    rng = np.random.default_rng(seed)
    return bimodal_clean(orders) + rng.normal(0.0, noise, len(orders))
