"""Black analytics oracles, inversion round-trips, and MC pricer checks."""

import math
import os

import numpy as np
import pytest

from pdv4.curves import flat_curve
from pdv4.errors import BandViolation, ExtrapolationError, InputError
from pdv4.mc import PathBundle, SimConfig, simulate
from pdv4.model import FactorState, ModelParams
from pdv4.pricing import (
    PricedOption,
    black_call,
    black_put,
    black_vega,
    forward_price,
    implied_vol,
    price_spx_options,
    price_vix_derivatives,
    priced_options_to_csv,
    vix_slices_to_csv,
)
from pdv4.stats import normal_pdf


def constant_vol_params(vol: float = 0.2) -> ModelParams:
    return ModelParams(62.11, 32.25, 0.23, 9.57, 3.51, 0.99,
                       beta_0=vol, beta_1=0.0, beta_2=0.0, beta_12=0.0)


# ------------------------------------------------------------- Black kernel

def test_black_atm_oracle():
    # F=K=100, T=1, vol=0.2: value = 100*(2*N(0.1)-1)
    assert black_call(100.0, 100.0, 1.0, 0.2) == pytest.approx(7.9656, abs=1e-4)


def test_black_limits():
    assert black_call(100.0, 80.0, 1.0, 1e-9) == pytest.approx(20.0, abs=1e-9)
    assert black_call(100.0, 1e-12, 1.0, 0.2) == pytest.approx(100.0, rel=1e-12)
    assert black_call(100.0, 80.0, 1.0, 0.0) == 20.0
    assert black_put(100.0, 80.0, 1.0, 0.0) == 0.0


def test_black_parity():
    c = black_call(105.0, 98.0, 0.7, 0.35)
    p = black_put(105.0, 98.0, 0.7, 0.35)
    assert c - p == pytest.approx(7.0, abs=1e-12)


def test_black_vega_matches_bump():
    args = (102.0, 95.0, 0.5, 0.25)
    v = black_vega(*args)
    h = 1e-6
    bump = (black_call(102.0, 95.0, 0.5, 0.25 + h)
            - black_call(102.0, 95.0, 0.5, 0.25 - h)) / (2 * h)
    assert v == pytest.approx(bump, rel=1e-6)
    # closed form: F * pdf(d1) * sqrt(T)
    srt = 0.25 * math.sqrt(0.5)
    d1 = math.log(102.0 / 95.0) / srt + 0.5 * srt
    assert v == pytest.approx(102.0 * float(normal_pdf(d1)) * math.sqrt(0.5), rel=1e-12)


def test_black_rejects_bad_args():
    with pytest.raises(InputError):
        black_call(-1.0, 100.0, 1.0, 0.2)
    with pytest.raises(InputError):
        black_call(100.0, 100.0, 0.0, 0.2)
    with pytest.raises(InputError):
        black_call(100.0, 100.0, 1.0, -0.1)


# ------------------------------------------------------------- implied vol

def test_implied_vol_round_trip():
    for vol in np.linspace(0.05, 2.0, 40):
        for k in (60.0, 100.0, 145.0):
            price = black_call(100.0, k, 0.8, float(vol))
            # vol is identifiable only when the extrinsic value clears the
            # inversion's own price tolerance with room to spare
            if price - max(100.0 - k, 0.0) < 1e-6 or 100.0 - price < 1e-6:
                continue
            got = implied_vol(price, 100.0, k, 0.8)
            assert got == pytest.approx(float(vol), abs=1e-8)


def test_implied_vol_put_round_trip():
    for vol in (0.1, 0.4, 1.2):
        price = black_put(100.0, 120.0, 0.5, vol)
        got = implied_vol(price, 100.0, 120.0, 0.5, kind="put")
        assert got == pytest.approx(vol, abs=1e-8)


def test_implied_vol_atm_oracle():
    assert implied_vol(7.9656, 100.0, 100.0, 1.0) == pytest.approx(0.2, abs=1e-4)


def test_implied_vol_residual_tolerance():
    price = black_call(100.0, 90.0, 1.0, 0.31)
    v = implied_vol(price, 100.0, 90.0, 1.0)
    assert abs(black_call(100.0, 90.0, 1.0, v) - price) < 1e-10 * 100.0


def test_implied_vol_band_behaviour():
    with pytest.raises(BandViolation):
        implied_vol(100.0, 100.0, 80.0, 1.0)      # at the forward bound
    with pytest.raises(BandViolation):
        implied_vol(10.0, 100.0, 80.0, 1.0)       # below intrinsic
    with pytest.raises(BandViolation):
        implied_vol(20.0, 100.0, 80.0, 1.0)       # exactly intrinsic, default policy
    assert implied_vol(20.0, 100.0, 80.0, 1.0, at_band="zero") == 0.0


def test_implied_vol_monotone_in_price():
    prices = np.linspace(8.0, 35.0, 12)
    vols = [implied_vol(float(p), 100.0, 100.0, 1.0) for p in prices]
    assert np.all(np.diff(vols) > 0)


# ------------------------------------------------------------- SPX pricer

@pytest.fixture(scope="module")
def bs_world():
    p = constant_vol_params(0.2)
    rate, div = flat_curve(0.03), flat_curve(0.01)
    cfg = SimConfig(dt=1.0 / 252.0, n_paths=40_000, horizon=0.5, seed=17,
                    rate_curve=rate, div_curve=div, record_times=(0.25, 0.5))
    bundle = simulate(p, FactorState(0.0, 0.0, 0.04, 0.04), 100.0, cfg)
    return bundle, rate, div


def test_spx_prices_match_black_scholes(bs_world):
    bundle, rate, div = bs_world
    chain = [(0.5, k, kind) for k in (90.0, 100.0, 110.0) for kind in ("call", "put")]
    rows = price_spx_options(bundle, chain, 100.0, rate, div)
    for r in rows:
        fwd = forward_price(100.0, r.maturity, rate, div)
        disc = math.exp(-rate.integral(0.0, r.maturity))
        ref = black_call(fwd, r.strike, r.maturity, 0.2) if r.kind == "call" \
            else black_put(fwd, r.strike, r.maturity, 0.2)
        assert abs(r.price - disc * ref) <= 3.0 * r.stderr
        assert r.iv == pytest.approx(0.2, abs=0.01)


def test_spx_zero_strike_call_prices_forward(bs_world):
    bundle, rate, div = bs_world
    (row,) = price_spx_options(bundle, [(0.5, 0.0, "call")], 100.0, rate, div)
    target = 100.0 * math.exp(-div.integral(0.0, 0.5))
    assert abs(row.price - target) <= 3.0 * row.stderr
    assert math.isnan(row.iv)


def test_spx_put_call_parity_empirical(bs_world):
    bundle, rate, div = bs_world
    k = 97.0
    rows = price_spx_options(bundle, [(0.25, k, "call"), (0.25, k, "put")],
                             100.0, rate, div)
    call, put = rows
    s_t = bundle.prices_at(0.25)
    # pathwise identity is exact in floating point
    assert np.array_equal(
        np.maximum(s_t - k, 0.0) - np.maximum(k - s_t, 0.0), s_t - k)
    disc = math.exp(-rate.integral(0.0, 0.25))
    assert call.price - put.price == pytest.approx(
        disc * (s_t.mean() - k), rel=1e-12)


def test_spx_prices_convex_monotone_in_strike(bs_world):
    bundle, rate, div = bs_world
    ks = np.linspace(70.0, 130.0, 25)
    rows = price_spx_options(bundle, [(0.5, float(k), "call") for k in ks],
                             100.0, rate, div)
    prices = np.array([r.price for r in rows])
    assert np.all(np.diff(prices) <= 1e-12)
    assert np.all(np.diff(prices, 2) >= -1e-10)


def test_spx_off_grid_maturity_rejected(bs_world):
    bundle, rate, div = bs_world
    with pytest.raises(InputError):
        price_spx_options(bundle, [(0.3, 100.0, "call")], 100.0, rate, div)
    with pytest.raises(InputError):
        price_spx_options(bundle, [(0.5, 100.0, "straddle")], 100.0, rate, div)
    with pytest.raises(InputError):
        price_spx_options(bundle, [(0.5, 0.0, "put")], 100.0, rate, div)


def test_spx_csv_export(bs_world, tmp_path):
    bundle, rate, div = bs_world
    rows = price_spx_options(bundle, [(0.5, 100.0, "call"), (0.5, 0.0, "call")],
                             100.0, rate, div)
    out = os.fspath(tmp_path / "prices.csv")
    priced_options_to_csv(rows, out)
    lines = open(out).read().splitlines()
    assert lines[0] == "T,K,kind,price,stderr,iv"
    assert len(lines) == 3
    assert lines[2].endswith(",")  # NaN iv serializes as empty field


# ------------------------------------------------------------- VIX pricer

class StubSurrogate:
    """Deterministic stand-in: maps states through a fixed function."""

    def __init__(self, fn, inside=True):
        self.fn = fn
        self.inside = inside

    def predict_batch(self, params, r10, r11, r20, r21):
        return self.fn(np.asarray(r10, dtype=float))

    def covers(self, params):
        return self.inside


def _tiny_bundle(n_paths=2):
    ones = np.ones((1, n_paths))
    return PathBundle(
        t=np.array([0.25]), s=100.0 * ones, r10=0.1 * ones, r11=0.2 * ones,
        r20=0.03 * ones, r21=0.04 * ones, sigma=0.2 * ones,
        dt=0.25, antithetic=False, n_clamped=0, full_grid=False,
    )


def test_vix_constant_stub():
    params = constant_vol_params(0.2)
    stub = StubSurrogate(lambda r10: np.full(r10.size, 20.0))
    rate = flat_curve(0.04)
    (s,) = price_vix_derivatives(params, stub, _tiny_bundle(4), [0.25],
                                 [np.array([15.0, 18.0])], rate)
    assert s.future == pytest.approx(20.0, abs=1e-12)
    disc = math.exp(-0.04 * 0.25)
    np.testing.assert_allclose(s.call_prices, disc * np.array([5.0, 2.0]), rtol=1e-12)
    # deterministic payoff: zero spread, IV not invertible (price==intrinsic)
    assert np.all(np.isnan(s.implied_vols))


def test_vix_two_path_hand_case():
    # surrogate outputs 18 and 22; K=20 call pays (0 + 2)/2 = 1 undiscounted
    params = constant_vol_params(0.2)
    stub = StubSurrogate(lambda r10: np.array([18.0, 22.0]))
    rate = flat_curve(0.05)
    (s,) = price_vix_derivatives(params, stub, _tiny_bundle(2), [0.25],
                                 [np.array([20.0])], rate)
    assert s.future == pytest.approx(20.0, abs=1e-12)
    assert s.call_prices[0] == pytest.approx(math.exp(-0.05 * 0.25) * 1.0, rel=1e-12)
    assert np.isfinite(s.implied_vols[0])


def test_vix_iv_invariant_to_discounting():
    params = constant_vol_params(0.2)
    stub = StubSurrogate(lambda r10: np.linspace(15.0, 25.0, r10.size))
    b = _tiny_bundle(8)
    (flat0,) = price_vix_derivatives(params, stub, b, [0.25], [np.array([20.0])])
    (flat5,) = price_vix_derivatives(params, stub, b, [0.25], [np.array([20.0])],
                                     flat_curve(0.05))
    assert flat0.implied_vols[0] == flat5.implied_vols[0]
    assert flat0.call_prices[0] > flat5.call_prices[0]


def test_vix_negative_outputs_clamped():
    params = constant_vol_params(0.2)
    stub = StubSurrogate(lambda r10: np.array([-3.0, 21.0, 22.0, 24.0]))
    (s,) = price_vix_derivatives(params, stub, _tiny_bundle(4), [0.25], [np.array([20.0])])
    assert s.n_clamped == 1
    assert s.future == pytest.approx((0.01 + 21.0 + 22.0 + 24.0) / 4.0, rel=1e-12)


def test_vix_extrapolation_policy():
    params = constant_vol_params(0.2)
    stub = StubSurrogate(lambda r10: np.full(r10.size, 20.0), inside=False)
    with pytest.raises(ExtrapolationError):
        price_vix_derivatives(params, stub, _tiny_bundle(2), [0.25], None)
    with pytest.warns(UserWarning):
        price_vix_derivatives(params, stub, _tiny_bundle(2), [0.25], None,
                              strict=False)


def test_vix_csv_export(tmp_path):
    params = constant_vol_params(0.2)
    stub = StubSurrogate(lambda r10: np.linspace(18.0, 23.0, r10.size))
    slices = price_vix_derivatives(params, stub, _tiny_bundle(6), [0.25],
                                   [np.array([19.0, 21.0])])
    out = os.fspath(tmp_path / "vix.csv")
    vix_slices_to_csv(slices, out)
    lines = open(out).read().splitlines()
    assert lines[0] == "T,K,kind,price,stderr,iv"
    assert lines[1].split(",")[2] == "future"
    assert len(lines) == 4
