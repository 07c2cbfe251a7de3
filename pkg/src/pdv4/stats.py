"""Shared numerical utilities: normal distribution, reducers, histograms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import InputError


def normal_cdf(x):
    """Standard normal CDF, accurate to ~1 ulp over the double range."""
    return special.ndtr(x)


def normal_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)


def normal_inv_cdf(p):
    """Inverse standard normal CDF; p must lie strictly inside (0, 1)."""
    p_arr = np.asarray(p, dtype=float)
    if np.any(p_arr <= 0.0) or np.any(p_arr >= 1.0):
        raise InputError("normal_inv_cdf: p must be in the open interval (0,1)")
    out = special.ndtri(p_arr)
    return float(out) if np.isscalar(p) or p_arr.ndim == 0 else out


def mean_stderr(x: np.ndarray) -> tuple[float, float]:
    """Sample mean and standard error of the mean."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n == 0:
        raise InputError("mean_stderr: empty sample")
    m = float(np.mean(x))
    if n == 1:
        return m, float("inf")
    se = float(np.std(x, ddof=1) / np.sqrt(n))
    return m, se


def pair_mean_stderr(x: np.ndarray) -> tuple[float, float]:
    """Mean and standard error treating consecutive entries as antithetic pairs.

    Pair averages are i.i.d., so the stderr over pair means is the honest
    uncertainty of an antithetic estimator.
    """
    x = np.asarray(x, dtype=float)
    if x.size % 2 != 0:
        raise InputError("pair_mean_stderr: sample size must be even")
    pairs = 0.5 * (x[0::2] + x[1::2])
    return mean_stderr(pairs)


@dataclass(frozen=True)
class Histogram:
    """Counts over strictly increasing bin edges; invariant: sum == n."""

    edges: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        counts = np.asarray(self.counts, dtype=int)
        if edges.ndim != 1 or np.any(np.diff(edges) <= 0):
            raise InputError("Histogram: edges must be strictly increasing")
        if counts.size != edges.size - 1:
            raise InputError("Histogram: need len(edges) == len(counts)+1")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "counts", counts)

    @property
    def n(self) -> int:
        return int(self.counts.sum())


def histogram(x: np.ndarray, bins: int = 20, lo=None, hi=None) -> Histogram:
    """Histogram covering every sample (outliers clipped into edge bins)."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise InputError("histogram: empty sample")
    lo = float(np.min(x)) if lo is None else float(lo)
    hi = float(np.max(x)) if hi is None else float(hi)
    if hi <= lo:
        hi = lo + max(1e-12, abs(lo) * 1e-12)
    edges = np.linspace(lo, hi, bins + 1)
    counts, _ = np.histogram(np.clip(x, lo, hi), bins=edges)
    return Histogram(edges=edges, counts=counts)
