"""Two-sample covariate-shift tests: bootstrap Kolmogorov-Smirnov and kernel MMD."""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError


def ks_statistic(a: np.ndarray, b: np.ndarray) -> float:
    """sup_t |F_a(t) - F_b(t)| for the empirical CDFs."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_two_sample_bootstrap(sample0, sample1, n_boot: int = 999,
                            rng: np.random.Generator | None = None) -> tuple[float, float]:
    """KS statistic with a pooled-bootstrap p-value.

    Both groups are redrawn with replacement from the pooled sample at their
    original sizes; the p-value is the fraction of redraws whose statistic is
    at least the observed one.
    """
    s0 = np.asarray(sample0, dtype=float).ravel()
    s1 = np.asarray(sample1, dtype=float).ravel()
    if s0.size == 0 or s1.size == 0:
        raise ConfigurationError("both samples must be nonempty")
    if n_boot < 100:
        raise ConfigurationError("n_boot must be at least 100")
    rng = rng if rng is not None else np.random.default_rng(0)
    observed = ks_statistic(s0, s1)
    pooled = np.concatenate([s0, s1])
    hits = 0
    for _ in range(n_boot):
        idx = rng.integers(0, pooled.size, size=pooled.size)
        if ks_statistic(pooled[idx[: s0.size]], pooled[idx[s0.size:]]) >= observed - 1e-12:
            hits += 1
    return observed, hits / n_boot


def gaussian_gram(x: np.ndarray) -> np.ndarray:
    """exp(-||x_i - x_j||^2) from coordinate differences (exact zeros on ties)."""
    x = np.asarray(x, dtype=float)
    d2 = np.zeros((x.shape[0], x.shape[0]))
    for k in range(x.shape[1]):
        diff = x[:, k, None] - x[None, :, k]
        d2 += diff * diff
    return np.exp(-d2)


def _as_rows(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def mmd_statistic(x0, x1) -> float:
    """Biased (V-statistic) squared MMD with kernel exp(-||u - v||^2)."""
    x0, x1 = _as_rows(x0), _as_rows(x1)
    k = gaussian_gram(np.vstack([x0, x1]))
    n0 = x0.shape[0]
    return float(k[:n0, :n0].mean() + k[n0:, n0:].mean() - 2.0 * k[:n0, n0:].mean())


def mmd_permutation_test(x0, x1, n_perm: int = 999,
                         rng: np.random.Generator | None = None) -> tuple[float, float]:
    """Squared MMD and its label-permutation p-value (count + 1) / (n_perm + 1)."""
    x0, x1 = _as_rows(x0), _as_rows(x1)
    if x0.shape[1] != x1.shape[1]:
        raise ConfigurationError("both samples need the same number of columns")
    if x0.shape[0] == 0 or x1.shape[0] == 0:
        raise ConfigurationError("both samples must be nonempty")
    if n_perm < 1:
        raise ConfigurationError("n_perm must be positive")
    rng = rng if rng is not None else np.random.default_rng(0)
    n0, n1 = x0.shape[0], x1.shape[0]
    k = gaussian_gram(np.vstack([x0, x1]))
    observed = float(k[:n0, :n0].mean() + k[n0:, n0:].mean() - 2.0 * k[:n0, n0:].mean())
    # for a labelling v = +1/n0 on group 0 and -1/n1 on group 1, MMD^2 = v'Kv
    base = np.concatenate([np.full(n0, 1.0 / n0), np.full(n1, -1.0 / n1)])
    count = 0
    for _ in range(n_perm):
        v = base[rng.permutation(n0 + n1)]
        if v @ k @ v >= observed - 1e-12:
            count += 1
    return max(observed, 0.0), (count + 1) / (n_perm + 1)
