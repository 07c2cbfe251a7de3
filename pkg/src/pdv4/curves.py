"""Deterministic term structures with exact integrals.

Rates are piecewise-constant in forward time, so integrated drifts are exact
(no quadrature): the simulation's per-step discount increments carry no
numerical error beyond rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class PiecewiseConstantCurve:
    """Right-continuous step function r(t); rates[i] applies on [times[i], times[i+1]).

    times[0] must be 0 and the last rate extends to infinity.
    """

    times: np.ndarray
    rates: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        rates = np.asarray(self.rates, dtype=float)
        if times.ndim != 1 or rates.shape != times.shape:
            raise InputError("curve: times and rates must be 1-D of equal length")
        if times.size == 0 or times[0] != 0.0:
            raise InputError("curve: first breakpoint must be t=0")
        if np.any(np.diff(times) <= 0):
            raise InputError("curve: breakpoints must be strictly increasing")
        if not np.all(np.isfinite(rates)):
            raise InputError("curve: rates must be finite")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "rates", rates)

    def value(self, t):
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < 0):
            raise InputError("curve: time must be nonnegative")
        idx = np.searchsorted(self.times, t_arr, side="right") - 1
        out = self.rates[idx]
        return float(out) if np.isscalar(t) or t_arr.ndim == 0 else out

    def _antiderivative(self, t):
        # A(t) = integral of r from 0 to t; piecewise linear, exact.
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < 0):
            raise InputError("curve: time must be nonnegative")
        widths = np.diff(self.times)
        base = np.concatenate(([0.0], np.cumsum(self.rates[:-1] * widths)))
        idx = np.searchsorted(self.times, t_arr, side="right") - 1
        out = base[idx] + self.rates[idx] * (t_arr - self.times[idx])
        return float(out) if np.isscalar(t) or t_arr.ndim == 0 else out

    def integral(self, t0: float, t1: float) -> float:
        """Exact integral of the rate over [t0, t1]."""
        if t1 < t0:
            raise InputError("curve: integral needs t1 >= t0")
        return self._antiderivative(t1) - self._antiderivative(t0)

    def step_integrals(self, grid: np.ndarray) -> np.ndarray:
        """Per-interval integrals over consecutive grid nodes."""
        a = self._antiderivative(np.asarray(grid, dtype=float))
        return np.diff(a)


def flat_curve(rate: float) -> PiecewiseConstantCurve:
    return PiecewiseConstantCurve(times=np.array([0.0]), rates=np.array([float(rate)]))


ZERO_CURVE = flat_curve(0.0)
