"""Shared instance builders for the test suite."""

from __future__ import annotations

import numpy as np

from greedy_unfold.rng import substream


def gaussian_instance(seed, m, n, s, sigma=0.0, complex_field=False, normalize=True):
    """Seeded sparse-recovery instance with optional column normalization."""
    rng = substream(seed, "inst")
    if complex_field:
        a = (rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))) / np.sqrt(2 * m)
    else:
        a = rng.standard_normal((m, n)) / np.sqrt(m)
    if normalize:
        a = a / np.linalg.norm(a, axis=0)
    sup = np.sort(rng.choice(n, size=s, replace=False))
    x = np.zeros(n)
    x[sup] = rng.standard_normal(s)
    y = a @ x
    if sigma > 0:
        noise = rng.standard_normal(m)
        if complex_field:
            noise = (noise + 1j * rng.standard_normal(m)) / np.sqrt(2)
        y = y + sigma * noise
    return a, x, y, sup
