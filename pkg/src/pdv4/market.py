"""Market data: quote containers, CSV loaders and savers, synthetic markets.

Conventions, fixed across the package: maturities convert from day counts at
365 calendar days per year, simulation steps count 252 trading days per year,
and option prices (including the synthetic chains generated here) are
undiscounted forward premiums.  Files are UTF-8 CSV with a mandatory header.
"""

from __future__ import annotations

import calendar
import csv
import datetime
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .curves import PiecewiseConstantCurve, ZERO_CURVE, flat_curve
from .errors import BandViolation, InputError, LoadError
from .mc import SimConfig, simulate
from .model import FactorState, ModelParams
from .pricing import (
    black_vega,
    forward_price,
    implied_vol,
    price_spx_options,
    price_vix_derivatives,
)

TRADING_DAYS_PER_YEAR = 252
CALENDAR_DAYS_PER_YEAR = 365

SPX_HEADER = ["date", "T_days", "K", "kind", "bid_iv", "ask_iv", "mid_iv"]
VIX_HEADER = ["date", "T_days", "future", "K", "bid", "ask", "mid"]
CURVE_HEADER = ["t_years", "rate"]
RETURNS_HEADER = ["date", "ret"]

_KINDS = ("call", "put")


# ------------------------------------------------------------- containers

@dataclass(frozen=True)
class SpxSmile:
    """Quoted implied-vol points at one maturity, sorted by (strike, kind)."""

    maturity: float
    forward: float
    strikes: np.ndarray
    kinds: tuple[str, ...]
    bid_iv: np.ndarray
    ask_iv: np.ndarray
    mid_iv: np.ndarray

    def __post_init__(self):
        if not (self.maturity > 0 and self.forward > 0):
            raise InputError("SpxSmile: maturity and forward must be positive")
        n = self.strikes.size
        if n == 0:
            raise InputError("SpxSmile: empty strike list")
        for arr in (self.bid_iv, self.ask_iv, self.mid_iv):
            if arr.shape != (n,) or not np.all(np.isfinite(arr)):
                raise InputError("SpxSmile: quote arrays must be finite, one per strike")
        if len(self.kinds) != n or any(k not in _KINDS for k in self.kinds):
            raise InputError("SpxSmile: one call/put tag per strike")
        if np.any(self.strikes <= 0) or np.any(np.diff(self.strikes) < 0):
            raise InputError("SpxSmile: strikes must be positive and sorted")
        # the same strike may carry both a call and a put quote, nothing else
        for i in range(n - 1):
            if self.strikes[i] == self.strikes[i + 1] and self.kinds[i] == self.kinds[i + 1]:
                raise InputError(f"SpxSmile: duplicate quote at strike {self.strikes[i]}")
        if np.any(self.bid_iv < 0) or np.any(self.mid_iv <= 0):
            raise InputError("SpxSmile: implied vols must be positive (bids may be zero)")
        if np.any(self.bid_iv > self.mid_iv) or np.any(self.mid_iv > self.ask_iv):
            raise InputError("SpxSmile: need bid <= mid <= ask")

    @property
    def n_quotes(self) -> int:
        return int(self.strikes.size)


@dataclass(frozen=True)
class OptionChain:
    """SPX quote surface for one as-of date."""

    as_of: str
    spot: float
    smiles: tuple[SpxSmile, ...]

    def __post_init__(self):
        if not self.as_of:
            raise InputError("OptionChain: as_of date required")
        if not self.spot > 0:
            raise InputError("OptionChain: spot must be positive")
        if not self.smiles:
            raise InputError("OptionChain: no maturities")
        mats = [s.maturity for s in self.smiles]
        if any(b <= a for a, b in zip(mats, mats[1:])):
            raise InputError("OptionChain: maturities must be strictly increasing")

    @property
    def maturities(self) -> list[float]:
        return [s.maturity for s in self.smiles]

    @property
    def n_quotes(self) -> int:
        return sum(s.n_quotes for s in self.smiles)


@dataclass(frozen=True)
class VixQuotes:
    """VIX future and call strip at one maturity; prices in points.

    mid_iv entries are NaN where the mid price is not Black-invertible;
    such strikes drop out of vega weighting downstream.
    """

    maturity: float
    future: float
    strikes: np.ndarray
    bid: np.ndarray
    ask: np.ndarray
    mid: np.ndarray
    mid_iv: np.ndarray

    def __post_init__(self):
        if not (self.maturity > 0 and self.future > 0):
            raise InputError("VixQuotes: maturity and future must be positive")
        n = self.strikes.size
        if n == 0:
            raise InputError("VixQuotes: empty strike list")
        for arr in (self.bid, self.ask, self.mid):
            if arr.shape != (n,) or not np.all(np.isfinite(arr)):
                raise InputError("VixQuotes: quote arrays must be finite, one per strike")
        if self.mid_iv.shape != (n,):
            raise InputError("VixQuotes: one mid IV slot per strike")
        if np.any(self.strikes <= 0) or np.any(np.diff(self.strikes) <= 0):
            raise InputError("VixQuotes: strikes must be positive, strictly increasing")
        if np.any(self.bid < 0):
            raise InputError("VixQuotes: prices must be nonnegative")
        if np.any(self.bid > self.mid) or np.any(self.mid > self.ask):
            raise InputError("VixQuotes: need bid <= mid <= ask")

    @property
    def n_quotes(self) -> int:
        return int(self.strikes.size)


@dataclass(frozen=True)
class VixChain:
    """VIX futures and option quotes for one as-of date."""

    as_of: str
    slices: tuple[VixQuotes, ...]

    def __post_init__(self):
        if not self.as_of:
            raise InputError("VixChain: as_of date required")
        if not self.slices:
            raise InputError("VixChain: no maturities")
        mats = [s.maturity for s in self.slices]
        if any(b <= a for a, b in zip(mats, mats[1:])):
            raise InputError("VixChain: maturities must be strictly increasing")

    @property
    def maturities(self) -> list[float]:
        return [s.maturity for s in self.slices]


@dataclass(frozen=True)
class Curves:
    """Deterministic interest-rate and dividend-yield term structures."""

    rate: PiecewiseConstantCurve
    div: PiecewiseConstantCurve

    @classmethod
    def flat(cls, rate: float = 0.0, div: float = 0.0) -> "Curves":
        return cls(rate=flat_curve(rate), div=flat_curve(div))


# ------------------------------------------------------------- csv plumbing

def _read_rows(path: str, header: list[str]) -> list[list[str]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise LoadError(f"{path}: {exc}") from exc
    if not rows:
        raise LoadError(f"{path}: empty file, expected header {','.join(header)}")
    if [c.strip() for c in rows[0]] != header:
        raise LoadError(f"{path}: bad header {rows[0]!r}, expected {','.join(header)}")
    return rows[1:]


def _parse(field: str, line_no: int, name: str) -> float:
    try:
        value = float(field)
    except ValueError as exc:
        raise LoadError(f"line {line_no}: bad {name} value {field!r}") from exc
    if not math.isfinite(value):
        raise LoadError(f"line {line_no}: non-finite {name}")
    return value


def _single_date(dates: set[str], path: str) -> str:
    if len(dates) != 1:
        raise LoadError(f"{path}: multiple as-of dates in one file: {sorted(dates)}")
    return next(iter(dates))


def _vix_mid_ivs(future: float, strikes: np.ndarray, maturity: float,
                 mids: np.ndarray) -> np.ndarray:
    """Black IVs of VIX call mids against the quoted future; NaN off-band."""
    ivs = np.empty(strikes.size)
    for i, (k, p) in enumerate(zip(strikes, mids)):
        try:
            ivs[i] = implied_vol(float(p), future, float(k), maturity, kind="call")
        except BandViolation:
            warnings.warn(
                f"VIX mid price at T={maturity:.6g}, K={k:g} has no implied vol; "
                "strike excluded from vega weighting")
            ivs[i] = float("nan")
    return ivs


def load_chain(path: str, format: str, spot: float = 1.0,
               curves: Curves | None = None) -> "OptionChain | VixChain":
    """Parse a quote file into a validated chain.

    SPX forwards are not part of the file format; they come from the spot
    and curves supplied here (flat zero by default, i.e. forward == spot).
    Rows whose quote fields are all empty are skipped with a warning, and a
    maturity left without quotes is dropped with a warning.  Anything else
    malformed is a hard error naming the line.
    """
    if format == "spx":
        return _load_spx_chain(path, spot, curves or Curves.flat())
    if format == "vix":
        return _load_vix_chain(path)
    raise InputError(f"load_chain: unknown format {format!r} (want 'spx' or 'vix')")


def _load_spx_chain(path: str, spot: float, curves: Curves) -> OptionChain:
    rows = _read_rows(path, SPX_HEADER)
    dates: set[str] = set()
    groups: dict[float, list[tuple]] = {}
    for line_no, rec in enumerate(rows, start=2):
        if len(rec) != 7:
            raise LoadError(f"line {line_no}: need 7 fields, got {len(rec)}")
        date, t_days, k, kind, bid, ask, mid = (c.strip() for c in rec)
        if not date:
            raise LoadError(f"line {line_no}: empty date")
        dates.add(date)
        t_raw = _parse(t_days, line_no, "T_days")
        if t_raw <= 0:
            raise LoadError(f"line {line_no}: T_days must be positive")
        t = t_raw / CALENDAR_DAYS_PER_YEAR
        if bid == "" and ask == "" and mid == "":
            warnings.warn(f"line {line_no}: no quotes, row skipped")
            groups.setdefault(t, [])
            continue
        strike = _parse(k, line_no, "K")
        if strike <= 0:
            raise LoadError(f"line {line_no}: strike must be positive")
        if kind not in _KINDS:
            raise LoadError(f"line {line_no}: kind must be call or put, got {kind!r}")
        b = _parse(bid, line_no, "bid_iv")
        a = _parse(ask, line_no, "ask_iv")
        m = _parse(mid, line_no, "mid_iv")
        if not (0 <= b <= m <= a):
            raise LoadError(f"line {line_no}: crossed quotes (bid {b}, mid {m}, ask {a})")
        groups.setdefault(t, []).append((strike, kind, b, a, m, line_no))
    as_of = _single_date(dates, path)

    smiles = []
    for t in sorted(groups):
        cells = sorted(groups[t], key=lambda c: (c[0], c[1]))
        if not cells:
            warnings.warn(f"{path}: maturity T={t:.6g} has no quotes, dropped")
            continue
        for prev, cur in zip(cells, cells[1:]):
            if prev[0] == cur[0] and prev[1] == cur[1]:
                raise LoadError(
                    f"line {cur[5]}: duplicate {cur[1]} quote at strike {cur[0]}")
        fwd = forward_price(spot, t, curves.rate, curves.div)
        smiles.append(SpxSmile(
            maturity=t, forward=fwd,
            strikes=np.array([c[0] for c in cells]),
            kinds=tuple(c[1] for c in cells),
            bid_iv=np.array([c[2] for c in cells]),
            ask_iv=np.array([c[3] for c in cells]),
            mid_iv=np.array([c[4] for c in cells]),
        ))
    if not smiles:
        raise LoadError(f"{path}: no usable maturities")
    return OptionChain(as_of=as_of, spot=spot, smiles=tuple(smiles))


def _load_vix_chain(path: str) -> VixChain:
    rows = _read_rows(path, VIX_HEADER)
    dates: set[str] = set()
    groups: dict[float, list[tuple]] = {}
    futures: dict[float, float] = {}
    for line_no, rec in enumerate(rows, start=2):
        if len(rec) != 7:
            raise LoadError(f"line {line_no}: need 7 fields, got {len(rec)}")
        date, t_days, fut, k, bid, ask, mid = (c.strip() for c in rec)
        if not date:
            raise LoadError(f"line {line_no}: empty date")
        dates.add(date)
        t_raw = _parse(t_days, line_no, "T_days")
        if t_raw <= 0:
            raise LoadError(f"line {line_no}: T_days must be positive")
        t = t_raw / CALENDAR_DAYS_PER_YEAR
        future = _parse(fut, line_no, "future")
        if future <= 0:
            raise LoadError(f"line {line_no}: future must be positive")
        if t in futures and futures[t] != future:
            raise LoadError(
                f"line {line_no}: inconsistent future for T_days={t_days} "
                f"({futures[t]} vs {future})")
        futures[t] = future
        if bid == "" and ask == "" and mid == "":
            warnings.warn(f"line {line_no}: no quotes, row skipped")
            groups.setdefault(t, [])
            continue
        strike = _parse(k, line_no, "K")
        if strike <= 0:
            raise LoadError(f"line {line_no}: strike must be positive")
        b = _parse(bid, line_no, "bid")
        a = _parse(ask, line_no, "ask")
        m = _parse(mid, line_no, "mid")
        if b < 0:
            raise LoadError(f"line {line_no}: prices must be nonnegative")
        if not (b <= m <= a):
            raise LoadError(f"line {line_no}: crossed quotes (bid {b}, mid {m}, ask {a})")
        groups.setdefault(t, []).append((strike, b, a, m, line_no))
    as_of = _single_date(dates, path)

    slices = []
    for t in sorted(groups):
        cells = sorted(groups[t], key=lambda c: c[0])
        if not cells:
            warnings.warn(f"{path}: maturity T={t:.6g} has no quotes, dropped")
            continue
        for prev, cur in zip(cells, cells[1:]):
            if prev[0] == cur[0]:
                raise LoadError(f"line {cur[4]}: duplicate strike {cur[0]}")
        strikes = np.array([c[0] for c in cells])
        mids = np.array([c[3] for c in cells])
        slices.append(VixQuotes(
            maturity=t, future=futures[t], strikes=strikes,
            bid=np.array([c[1] for c in cells]),
            ask=np.array([c[2] for c in cells]),
            mid=mids,
            mid_iv=_vix_mid_ivs(futures[t], strikes, t, mids),
        ))
    if not slices:
        raise LoadError(f"{path}: no usable maturities")
    return VixChain(as_of=as_of, slices=tuple(slices))


def save_chain(chain: "OptionChain | VixChain", path: str) -> None:
    """Write a chain back to its CSV schema (lossless for float payloads)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if isinstance(chain, OptionChain):
            w.writerow(SPX_HEADER)
            for s in chain.smiles:
                t_days = s.maturity * CALENDAR_DAYS_PER_YEAR
                for i in range(s.n_quotes):
                    w.writerow([chain.as_of, float(t_days), float(s.strikes[i]),
                                s.kinds[i], float(s.bid_iv[i]), float(s.ask_iv[i]),
                                float(s.mid_iv[i])])
        elif isinstance(chain, VixChain):
            w.writerow(VIX_HEADER)
            for s in chain.slices:
                t_days = s.maturity * CALENDAR_DAYS_PER_YEAR
                for i in range(s.n_quotes):
                    w.writerow([chain.as_of, float(t_days), float(s.future),
                                float(s.strikes[i]), float(s.bid[i]),
                                float(s.ask[i]), float(s.mid[i])])
        else:
            raise InputError("save_chain: expected an OptionChain or VixChain")


def load_curves(rate_path: str, div_path: str | None = None) -> Curves:
    """One piecewise-constant curve per file; dividends default to zero."""
    rate = _load_curve(rate_path)
    div = _load_curve(div_path) if div_path is not None else ZERO_CURVE
    return Curves(rate=rate, div=div)


def _load_curve(path: str) -> PiecewiseConstantCurve:
    rows = _read_rows(path, CURVE_HEADER)
    times, rates = [], []
    for line_no, rec in enumerate(rows, start=2):
        if len(rec) != 2:
            raise LoadError(f"line {line_no}: need 2 fields, got {len(rec)}")
        times.append(_parse(rec[0].strip(), line_no, "t_years"))
        rates.append(_parse(rec[1].strip(), line_no, "rate"))
    if not times:
        raise LoadError(f"{path}: no data rows")
    try:
        return PiecewiseConstantCurve(times=np.array(times), rates=np.array(rates))
    except InputError as exc:
        raise LoadError(f"{path}: {exc}") from exc


def save_curve(curve: PiecewiseConstantCurve, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_HEADER)
        for t, r in zip(curve.times, curve.rates):
            w.writerow([float(t), float(r)])


def load_returns(path: str) -> np.ndarray:
    """Daily return series, oldest first; the last row is the latest day."""
    rows = _read_rows(path, RETURNS_HEADER)
    rets = []
    for line_no, rec in enumerate(rows, start=2):
        if len(rec) != 2:
            raise LoadError(f"line {line_no}: need 2 fields, got {len(rec)}")
        if not rec[0].strip():
            raise LoadError(f"line {line_no}: empty date")
        rets.append(_parse(rec[1].strip(), line_no, "ret"))
    if not rets:
        raise LoadError(f"{path}: no data rows")
    return np.array(rets)


def save_returns(returns: np.ndarray, path: str,
                 dates: list[str] | None = None) -> None:
    returns = np.asarray(returns, dtype=float)
    if dates is not None and len(dates) != returns.size:
        raise InputError("save_returns: one date per return")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(RETURNS_HEADER)
        for i, r in enumerate(returns):
            label = dates[i] if dates is not None else f"d{i + 1:05d}"
            w.writerow([label, float(r)])


# ------------------------------------------------------------- calendars

def third_friday(year: int, month: int) -> datetime.date:
    weeks = calendar.monthcalendar(year, month)
    fridays = [w[calendar.FRIDAY] for w in weeks if w[calendar.FRIDAY]]
    return datetime.date(year, month, fridays[2])


def vix_expiry(year: int, month: int) -> datetime.date:
    """Listed VIX expiry: 30 days before the next month's third SPX Friday.

    Exchange holiday adjustments are out of scope.
    """
    y, m = (year + 1, 1) if month == 12 else (year, month + 1)
    return third_friday(y, m) - datetime.timedelta(days=30)


def year_fraction(start: datetime.date, end: datetime.date) -> float:
    return (end - start).days / CALENDAR_DAYS_PER_YEAR


# ------------------------------------------------------------- synthesis

def snap_maturity(maturity: float, dt: float) -> float:
    """Nearest strictly positive simulation grid node."""
    if not maturity > 0:
        raise InputError("snap_maturity: maturity must be positive")
    j = round(maturity / dt)
    if j < 1:
        raise InputError(
            f"snap_maturity: maturity {maturity:.6g} is below half a step of {dt:.6g}")
    return j * dt


def synth_market(
    params: ModelParams,
    init: FactorState,
    spx_grid: list[tuple[float, np.ndarray]],
    vix_grid: list[tuple[float, np.ndarray]],
    surrogate=None,
    n_paths: int = 100_000,
    dt: float = 1.0 / 504.0,
    seed: int = 0,
    spot: float = 1.0,
    curves: Curves | None = None,
    as_of: str = "synthetic",
    threads: int = 1,
) -> tuple[OptionChain, VixChain | None]:
    """Model-generated quotes with MC noise recorded as pseudo bid/ask widths.

    Grids give (maturity in calendar days, strike array) per maturity; SPX
    strikes in spot units, VIX strikes in points.  Quotes are priced at the
    nearest grid node of dt but stamped with the quoted day count, matching
    how the calibrator snaps market maturities.  SPX strikes whose sampled
    mid has no implied vol are dropped with a warning.  Regenerating with
    one seed is bit-identical.
    """
    if not spx_grid:
        raise InputError("synth_market: need at least one SPX maturity")
    if vix_grid and surrogate is None:
        raise InputError("synth_market: VIX quotes need a surrogate")
    spx_days = [d for d, _ in spx_grid]
    vix_days = [d for d, _ in vix_grid]
    if len(set(spx_days)) != len(spx_days) or len(set(vix_days)) != len(vix_days):
        raise InputError("synth_market: duplicate maturities in grid")

    curves = curves or Curves.flat()

    def norm(grid):
        out = []
        for d, ks in grid:
            strikes = np.sort(np.asarray(ks, dtype=float))
            if strikes.size == 0 or np.any(np.diff(strikes) == 0):
                raise InputError("synth_market: strikes must be nonempty and distinct")
            out.append((d / CALENDAR_DAYS_PER_YEAR, strikes))
        return out

    spx = norm(spx_grid)
    vix = norm(vix_grid)
    snaps = {t: snap_maturity(t, dt) for t, _ in spx + vix}
    record = sorted(set(snaps.values()))
    cfg = SimConfig(
        dt=dt, n_paths=n_paths, horizon=record[-1], seed=seed, antithetic=True,
        rate_curve=curves.rate, div_curve=curves.div,
        record_times=record, threads=threads,
    )
    bundle = simulate(params, init, spot, cfg)

    smiles = []
    for t_quote, strikes in sorted(spx, key=lambda pair: pair[0]):
        t_sim = snaps[t_quote]
        disc = math.exp(-curves.rate.integral(0.0, t_sim))
        fwd_sim = forward_price(spot, t_sim, curves.rate, curves.div)
        cells = [(t_sim, float(k), "put" if k < fwd_sim else "call") for k in strikes]
        priced = price_spx_options(bundle, cells, spot, curves.rate, curves.div)
        keep, kinds, bids, asks, mids = [], [], [], [], []
        for cell, p in zip(cells, priced):
            if math.isnan(p.iv):
                warnings.warn(
                    f"synth_market: strike {p.strike:g} at T={t_quote:.6g} has no "
                    "implied vol, dropped")
                continue
            # noise half-width mapped to vol space through the Black vega
            vega = black_vega(fwd_sim, p.strike, t_sim, p.iv)
            half = (p.stderr / disc) / vega
            keep.append(p.strike)
            kinds.append(cell[2])
            bids.append(max(p.iv - half, 0.0))
            asks.append(p.iv + half)
            mids.append(p.iv)
        if not keep:
            warnings.warn(f"synth_market: maturity T={t_quote:.6g} dropped, no usable strikes")
            continue
        smiles.append(SpxSmile(
            maturity=t_quote,
            forward=forward_price(spot, t_quote, curves.rate, curves.div),
            strikes=np.array(keep), kinds=tuple(kinds),
            bid_iv=np.array(bids), ask_iv=np.array(asks), mid_iv=np.array(mids),
        ))
    if not smiles:
        raise InputError("synth_market: every SPX maturity degenerated")
    spx_chain = OptionChain(as_of=as_of, spot=spot, smiles=tuple(smiles))

    if not vix:
        return spx_chain, None
    order = sorted(range(len(vix)), key=lambda i: vix[i][0])
    slices = price_vix_derivatives(
        params, surrogate, bundle,
        maturities=[snaps[vix[i][0]] for i in order],
        strikes=[vix[i][1] for i in order],
        rate_curve=None,  # undiscounted forward premiums by convention
        strict=True,
    )
    quotes = []
    for i, sl in zip(order, slices):
        t_quote = vix[i][0]
        bids = np.maximum(sl.call_prices - sl.call_stderrs, 0.0)
        asks = sl.call_prices + sl.call_stderrs
        quotes.append(VixQuotes(
            maturity=t_quote, future=sl.future, strikes=sl.strikes,
            bid=bids, ask=asks, mid=sl.call_prices,
            mid_iv=_vix_mid_ivs(sl.future, sl.strikes, t_quote, sl.call_prices),
        ))
    return spx_chain, VixChain(as_of=as_of, slices=tuple(quotes))
