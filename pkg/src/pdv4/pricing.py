"""Black-76 analytics, implied volatility, and Monte Carlo option pricing.

All Black formulas here are undiscounted (forward measure); discounting is
applied exactly once, by the MC pricers, using the rate curve.  VIX implied
vols are inverted against the model future, so they are invariant to the
discount curve by construction.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .curves import PiecewiseConstantCurve
from .errors import BandViolation, ExtrapolationError, InputError, NumericalError
from .mc import PathBundle
from .model import ModelParams
from .stats import mean_stderr, normal_cdf, normal_pdf, pair_mean_stderr

_IV_MAX = 10.0
_IV_MAX_ITER = 100


def _check_black_args(forward: float, strike: float, maturity: float, vol: float) -> None:
    if not (forward > 0 and strike > 0 and maturity > 0):
        raise InputError("black: forward, strike and maturity must be positive")
    if vol < 0:
        raise InputError("black: volatility must be nonnegative")


def black_call(forward: float, strike: float, maturity: float, vol: float) -> float:
    """Undiscounted Black-76 call value."""
    _check_black_args(forward, strike, maturity, vol)
    if vol == 0.0:
        return max(forward - strike, 0.0)
    srt = vol * math.sqrt(maturity)
    d1 = math.log(forward / strike) / srt + 0.5 * srt
    d2 = d1 - srt
    return forward * float(normal_cdf(d1)) - strike * float(normal_cdf(d2))


def black_put(forward: float, strike: float, maturity: float, vol: float) -> float:
    """Undiscounted Black-76 put value."""
    _check_black_args(forward, strike, maturity, vol)
    if vol == 0.0:
        return max(strike - forward, 0.0)
    srt = vol * math.sqrt(maturity)
    d1 = math.log(forward / strike) / srt + 0.5 * srt
    d2 = d1 - srt
    return strike * float(normal_cdf(-d2)) - forward * float(normal_cdf(-d1))


def black_vega(forward: float, strike: float, maturity: float, vol: float) -> float:
    """Sensitivity of the undiscounted Black value to vol (same for call/put)."""
    _check_black_args(forward, strike, maturity, vol)
    if vol == 0.0:
        return 0.0
    srt = vol * math.sqrt(maturity)
    d1 = math.log(forward / strike) / srt + 0.5 * srt
    return forward * float(normal_pdf(d1)) * math.sqrt(maturity)


def implied_vol(
    price: float,
    forward: float,
    strike: float,
    maturity: float,
    kind: str = "call",
    at_band: str = "error",
    tol_scale: float = 1e-10,
) -> float:
    """Invert the undiscounted Black formula to |error| < tol_scale * forward.

    Safeguarded Newton: every iterate stays inside a maintained bisection
    bracket, so convergence does not depend on the starting point.  Prices
    at or outside the static no-arbitrage band raise BandViolation (the
    intrinsic boundary returns 0 instead under at_band="zero").
    """
    if not (forward > 0 and strike > 0 and maturity > 0):
        raise InputError("implied_vol: forward, strike and maturity must be positive")
    if kind not in ("call", "put"):
        raise InputError(f"implied_vol: unknown option kind {kind!r}")
    if at_band not in ("error", "zero"):
        raise InputError(f"implied_vol: unknown at_band policy {at_band!r}")

    if kind == "put":
        # undiscounted parity: C = P + F - K
        call_price = price + forward - strike
        intrinsic = max(strike - forward, 0.0)
    else:
        call_price = price
        intrinsic = max(forward - strike, 0.0)
    upper = forward if kind == "call" else strike

    if price < intrinsic or price >= upper:
        raise BandViolation(
            f"implied_vol: price {price!r} outside the ({intrinsic!r}, {upper!r}) band"
        )
    if price == intrinsic:
        if at_band == "zero":
            return 0.0
        raise BandViolation("implied_vol: price sits on the intrinsic boundary")

    tol = tol_scale * forward
    lo, hi = 0.0, _IV_MAX
    if black_call(forward, strike, maturity, hi) < call_price:
        raise BandViolation("implied_vol: price above the vol=10 Black value")

    v = 0.2
    for _ in range(_IV_MAX_ITER):
        diff = black_call(forward, strike, maturity, v) - call_price
        if diff > 0:
            hi = v
        else:
            lo = v
        vega = black_vega(forward, strike, maturity, v)
        if vega > 1e-14:
            v_new = v - diff / vega
        else:
            v_new = 0.5 * (lo + hi)
        if not (lo < v_new < hi):
            v_new = 0.5 * (lo + hi)
        # polish past the price tolerance until the vol step stalls too,
        # so the result is accurate in vol wherever vega permits
        if abs(diff) < tol and abs(v_new - v) < 1e-12 * max(1.0, v):
            return v
        v = v_new
    raise NumericalError("implied_vol: no convergence within iteration budget")


@dataclass(frozen=True)
class PricedOption:
    """One MC-priced European option with its inversion result.

    iv is NaN when the MC price fell outside the Black no-arbitrage band
    (possible for deep in/out strikes at low path counts).
    """

    maturity: float
    strike: float
    kind: str
    price: float
    stderr: float
    iv: float


def forward_price(
    s0: float,
    maturity: float,
    rate_curve: PiecewiseConstantCurve | None = None,
    div_curve: PiecewiseConstantCurve | None = None,
) -> float:
    """Model forward S0 * exp(integral of r - q); matches the market forward."""
    growth = 0.0
    if rate_curve is not None:
        growth += rate_curve.integral(0.0, maturity)
    if div_curve is not None:
        growth -= div_curve.integral(0.0, maturity)
    return s0 * math.exp(growth)


def price_spx_options(
    bundle: PathBundle,
    chain: list[tuple[float, float, str]],
    s0: float,
    rate_curve: PiecewiseConstantCurve | None = None,
    div_curve: PiecewiseConstantCurve | None = None,
) -> list[PricedOption]:
    """Discounted empirical payoff means with standard errors and Black IVs.

    Every maturity must be a recorded node of the bundle; there is no
    interpolation in time.  IVs are inverted against the exact model
    forward, never against the empirical path mean.
    """
    if not s0 > 0:
        raise InputError("price_spx_options: s0 must be positive")
    reduce = pair_mean_stderr if bundle.antithetic else mean_stderr
    out = []
    for maturity, strike, kind in chain:
        if kind not in ("call", "put"):
            raise InputError(f"price_spx_options: unknown option kind {kind!r}")
        # K=0 calls are legal (payoff S_T, prices the forward); puts need K>0
        if strike < 0 or (strike == 0 and kind == "put"):
            raise InputError("price_spx_options: strike must be positive")
        s_t = bundle.prices_at(maturity)
        payoff = np.maximum(s_t - strike, 0.0) if kind == "call" else np.maximum(strike - s_t, 0.0)
        mean_raw, se_raw = reduce(payoff)
        disc = math.exp(-rate_curve.integral(0.0, maturity)) if rate_curve is not None else 1.0
        fwd = forward_price(s0, maturity, rate_curve, div_curve)
        iv = float("nan")
        if strike > 0:
            try:
                iv = implied_vol(mean_raw, fwd, strike, maturity, kind=kind)
            except BandViolation:
                iv = float("nan")
        out.append(PricedOption(
            maturity=float(maturity), strike=float(strike), kind=kind,
            price=disc * mean_raw, stderr=disc * se_raw, iv=iv,
        ))
    return out


@dataclass(frozen=True)
class VixSlice:
    """Model VIX future and call strip at one maturity.

    Implied vols use the model future as the Black forward; entries are NaN
    where the call price sits outside the invertible band.
    """

    maturity: float
    future: float
    future_stderr: float
    strikes: np.ndarray
    call_prices: np.ndarray
    call_stderrs: np.ndarray
    implied_vols: np.ndarray
    n_clamped: int

    def __post_init__(self):
        if not self.future > 0:
            raise InputError("VixSlice: future must be positive")
        k = np.asarray(self.strikes, dtype=float)
        if np.any(np.diff(k) <= 0):
            raise InputError("VixSlice: strikes must be strictly increasing")


_VIX_FLOOR = 0.01  # points; surrogate outputs below this are clamped


def price_vix_derivatives(
    params: ModelParams,
    surrogate,
    bundle: PathBundle,
    maturities: list[float],
    strikes: list[np.ndarray] | None,
    rate_curve: PiecewiseConstantCurve | None = None,
    strict: bool = True,
) -> list[VixSlice]:
    """VIX futures and call strips from surrogate evaluations at path states.

    The surrogate must expose predict_batch(params, r10, r11, r20, r21) in
    volatility points and covers(params) for its training box.  Outside the
    box: error when strict, warning otherwise.
    """
    if strikes is not None and len(strikes) != len(maturities):
        raise InputError("price_vix_derivatives: one strike array per maturity")
    if not surrogate.covers(params):
        msg = "surrogate evaluated outside its training box"
        if strict:
            raise ExtrapolationError(msg)
        warnings.warn(msg)

    reduce = pair_mean_stderr if bundle.antithetic else mean_stderr
    slices = []
    for i, maturity in enumerate(maturities):
        r10, r11, r20, r21 = bundle.factors_at(maturity)
        vix = np.asarray(surrogate.predict_batch(params, r10, r11, r20, r21), dtype=float)
        n_clamped = int(np.count_nonzero(vix < _VIX_FLOOR))
        if n_clamped:
            vix = np.maximum(vix, _VIX_FLOOR)
        future, future_se = reduce(vix)
        disc = math.exp(-rate_curve.integral(0.0, maturity)) if rate_curve is not None else 1.0

        ks = np.asarray(strikes[i], dtype=float) if strikes is not None else np.array([])
        prices = np.empty(ks.size)
        ses = np.empty(ks.size)
        ivs = np.empty(ks.size)
        for j, k in enumerate(ks):
            if not k > 0:
                raise InputError("price_vix_derivatives: strikes must be positive")
            mean_raw, se_raw = reduce(np.maximum(vix - k, 0.0))
            prices[j] = disc * mean_raw
            ses[j] = disc * se_raw
            try:
                ivs[j] = implied_vol(mean_raw, future, float(k), maturity)
            except BandViolation:
                ivs[j] = float("nan")
        slices.append(VixSlice(
            maturity=float(maturity), future=future, future_stderr=future_se,
            strikes=ks, call_prices=prices, call_stderrs=ses,
            implied_vols=ivs, n_clamped=n_clamped,
        ))
    return slices


def priced_options_to_csv(rows: list[PricedOption], path: str) -> None:
    """Table dump: T,K,kind,price,stderr,iv (iv empty when not invertible)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["T", "K", "kind", "price", "stderr", "iv"])
        for r in rows:
            iv = "" if math.isnan(r.iv) else float(r.iv)
            w.writerow([float(r.maturity), float(r.strike), r.kind,
                        float(r.price), float(r.stderr), iv])


def vix_slices_to_csv(slices: list[VixSlice], path: str) -> None:
    """Same table layout; futures appear as kind='future' rows with K=0."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["T", "K", "kind", "price", "stderr", "iv"])
        for s in slices:
            w.writerow([float(s.maturity), 0.0, "future",
                        float(s.future), float(s.future_stderr), ""])
            for j in range(s.strikes.size):
                iv = s.implied_vols[j]
                w.writerow([
                    float(s.maturity), float(s.strikes[j]), "call",
                    float(s.call_prices[j]), float(s.call_stderrs[j]),
                    "" if math.isnan(iv) else float(iv),
                ])
