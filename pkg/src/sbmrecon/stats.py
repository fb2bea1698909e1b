"""Small Monte Carlo summary helpers shared by the drivers and tests."""

import numpy as np


def mean_se(x):
    """Sample mean and its standard error (0 for fewer than two samples)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n == 0:
        raise ValueError("mean_se of an empty sample")
    m = float(x.mean())
    if n < 2:
        return m, 0.0
    return m, float(x.std(ddof=1) / np.sqrt(n))


def variance_bootstrap(x, rng, n_boot=200):
    """Unbiased sample variance of ``x`` with a bootstrap standard error."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 2:
        raise ValueError("need at least two samples for a variance")
    var = float(x.var(ddof=1))
    # resample in chunks to bound memory on 1e5-sized samples
    boot = np.empty(n_boot)
    chunk = max(1, int(2e7 // n))
    for start in range(0, n_boot, chunk):
        stop = min(n_boot, start + chunk)
        idx = rng.integers(0, n, size=(stop - start, n))
        boot[start:stop] = x[idx].var(axis=1, ddof=1)
    return var, float(boot.std(ddof=1))


def within(estimate, target, se, k=4.0, atol=1e-12):
    """``|estimate - target| <= k * se`` with a floor for exact zero-SE cases."""
    return bool(abs(estimate - target) <= k * se + atol)
