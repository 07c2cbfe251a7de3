"""Quote containers, CSV loaders, calendars, and synthetic market generation."""

import datetime

import numpy as np
import pytest

from pdv4.curves import flat_curve
from pdv4.errors import InputError, LoadError
from pdv4.market import (
    Curves,
    OptionChain,
    SpxSmile,
    VixChain,
    VixQuotes,
    load_chain,
    load_curves,
    load_returns,
    save_chain,
    save_curve,
    save_returns,
    snap_maturity,
    synth_market,
    third_friday,
    vix_expiry,
    year_fraction,
)
from pdv4.model import FactorState, ModelParams
from pdv4.pricing import implied_vol

SPX_HDR = "date,T_days,K,kind,bid_iv,ask_iv,mid_iv\n"
VIX_HDR = "date,T_days,future,K,bid,ask,mid\n"


def slow_params() -> ModelParams:
    return ModelParams(
        lambda_10=2.0, lambda_11=1.0, theta_1=0.5,
        lambda_20=2.0, lambda_21=1.0, theta_2=0.5,
        beta_0=0.2, beta_1=0.0, beta_2=0.0, beta_12=0.0,
    )


def smile(maturity=0.1, forward=1.0) -> SpxSmile:
    return SpxSmile(
        maturity=maturity, forward=forward,
        strikes=np.array([0.9, 1.0, 1.1]), kinds=("put", "call", "call"),
        bid_iv=np.array([0.19, 0.18, 0.19]),
        ask_iv=np.array([0.21, 0.22, 0.23]),
        mid_iv=np.array([0.20, 0.20, 0.21]),
    )


# ------------------------------------------------------------- containers

def test_smile_validation():
    smile()
    with pytest.raises(InputError):
        SpxSmile(maturity=0.1, forward=1.0, strikes=np.array([1.0]),
                 kinds=("call",), bid_iv=np.array([0.3]),
                 ask_iv=np.array([0.25]), mid_iv=np.array([0.28]))
    with pytest.raises(InputError):
        SpxSmile(maturity=0.1, forward=1.0, strikes=np.array([1.1, 0.9]),
                 kinds=("call", "put"), bid_iv=np.array([0.1, 0.1]),
                 ask_iv=np.array([0.3, 0.3]), mid_iv=np.array([0.2, 0.2]))
    with pytest.raises(InputError):
        SpxSmile(maturity=0.1, forward=1.0, strikes=np.array([1.0, 1.0]),
                 kinds=("call", "call"), bid_iv=np.array([0.1, 0.1]),
                 ask_iv=np.array([0.3, 0.3]), mid_iv=np.array([0.2, 0.2]))
    # one strike quoted as both call and put is fine
    SpxSmile(maturity=0.1, forward=1.0, strikes=np.array([1.0, 1.0]),
             kinds=("call", "put"), bid_iv=np.array([0.1, 0.1]),
             ask_iv=np.array([0.3, 0.3]), mid_iv=np.array([0.2, 0.2]))


def test_chain_validation():
    OptionChain(as_of="2024-06-03", spot=1.0, smiles=(smile(0.1), smile(0.2)))
    with pytest.raises(InputError):
        OptionChain(as_of="2024-06-03", spot=1.0, smiles=(smile(0.2), smile(0.1)))
    with pytest.raises(InputError):
        OptionChain(as_of="", spot=1.0, smiles=(smile(),))
    with pytest.raises(InputError):
        OptionChain(as_of="2024-06-03", spot=1.0, smiles=())


def test_vix_quotes_validation():
    VixQuotes(maturity=0.1, future=20.0, strikes=np.array([18.0, 20.0]),
              bid=np.array([2.0, 0.9]), ask=np.array([2.4, 1.1]),
              mid=np.array([2.2, 1.0]), mid_iv=np.array([0.8, np.nan]))
    with pytest.raises(InputError):
        VixQuotes(maturity=0.1, future=20.0, strikes=np.array([18.0]),
                  bid=np.array([2.5]), ask=np.array([2.4]),
                  mid=np.array([2.45]), mid_iv=np.array([0.8]))
    with pytest.raises(InputError):
        VixQuotes(maturity=0.1, future=-1.0, strikes=np.array([18.0]),
                  bid=np.array([2.0]), ask=np.array([2.4]),
                  mid=np.array([2.2]), mid_iv=np.array([0.8]))


# ------------------------------------------------------------- spx loading

def write(path, text: str) -> str:
    path.write_text(text)
    return str(path)


def test_load_spx_chain_values(tmp_path):
    # rows deliberately out of order; loader sorts maturities and strikes
    path = write(tmp_path / "spx.csv", SPX_HDR + "\n".join([
        "2024-06-03,91,1.0,call,0.17,0.19,0.18",
        "2024-06-03,30,1.1,call,0.20,0.24,0.22",
        "2024-06-03,30,0.9,put,0.21,0.25,0.23",
    ]) + "\n")
    chain = load_chain(path, "spx")
    assert isinstance(chain, OptionChain)
    assert chain.as_of == "2024-06-03"
    assert chain.spot == 1.0
    assert chain.maturities == [30 / 365, 91 / 365]
    s0 = chain.smiles[0]
    assert np.array_equal(s0.strikes, [0.9, 1.1])
    assert s0.kinds == ("put", "call")
    assert np.array_equal(s0.mid_iv, [0.23, 0.22])
    assert s0.forward == 1.0
    assert chain.n_quotes == 3


def test_load_spx_forward_from_curves(tmp_path):
    path = write(tmp_path / "spx.csv",
                 SPX_HDR + "2024-06-03,365,1.0,call,0.17,0.19,0.18\n")
    curves = Curves.flat(rate=0.05, div=0.02)
    chain = load_chain(path, "spx", spot=100.0, curves=curves)
    assert chain.smiles[0].forward == pytest.approx(100.0 * np.exp(0.03), rel=1e-12)


def test_load_spx_crossed_quotes(tmp_path):
    path = write(tmp_path / "spx.csv", SPX_HDR + "\n".join([
        "2024-06-03,30,0.9,put,0.21,0.25,0.23",
        "2024-06-03,30,1.0,call,0.30,0.25,0.28",
    ]) + "\n")
    with pytest.raises(LoadError, match="line 3"):
        load_chain(path, "spx")


def test_load_spx_skips_and_drops(tmp_path):
    # the 91-day row has empty quote fields, so that maturity empties out
    path = write(tmp_path / "spx.csv", SPX_HDR + "\n".join([
        "2024-06-03,30,1.0,call,0.18,0.22,0.20",
        "2024-06-03,91,1.0,call,,,",
    ]) + "\n")
    with pytest.warns(UserWarning, match="no quotes"):
        chain = load_chain(path, "spx")
    assert chain.maturities == [30 / 365]


def test_load_spx_hard_errors(tmp_path):
    cases = [
        ("bad header", "a,b\nrow\n", None),
        ("field count", SPX_HDR + "2024-06-03,30,1.0,call,0.1,0.2\n", "line 2"),
        ("bad float", SPX_HDR + "2024-06-03,30,x,call,0.1,0.3,0.2\n", "line 2"),
        ("bad kind", SPX_HDR + "2024-06-03,30,1.0,straddle,0.1,0.3,0.2\n", "line 2"),
        ("neg strike", SPX_HDR + "2024-06-03,30,-1.0,call,0.1,0.3,0.2\n", "line 2"),
        ("neg maturity", SPX_HDR + "2024-06-03,-30,1.0,call,0.1,0.3,0.2\n", "line 2"),
        ("empty date", SPX_HDR + ",30,1.0,call,0.1,0.3,0.2\n", "line 2"),
        ("dup quote", SPX_HDR + "2024-06-03,30,1.0,call,0.1,0.3,0.2\n"
                               "2024-06-03,30,1.0,call,0.1,0.3,0.2\n", "duplicate"),
        ("two dates", SPX_HDR + "2024-06-03,30,1.0,call,0.1,0.3,0.2\n"
                               "2024-06-04,30,1.1,call,0.1,0.3,0.2\n", "dates"),
    ]
    for name, text, match in cases:
        path = write(tmp_path / "bad.csv", text)
        with pytest.raises(LoadError, match=match):
            load_chain(path, "spx")
    with pytest.raises(LoadError):
        load_chain(str(tmp_path / "missing.csv"), "spx")
    with pytest.raises(InputError):
        load_chain(str(tmp_path / "bad.csv"), "bond")


# ------------------------------------------------------------- vix loading

def test_load_vix_chain_values(tmp_path):
    path = write(tmp_path / "vix.csv", VIX_HDR + "\n".join([
        "2024-06-03,30,20.5,18.0,2.6,2.8,2.7",
        "2024-06-03,30,20.5,22.0,0.5,0.7,0.6",
    ]) + "\n")
    chain = load_chain(path, "vix")
    assert isinstance(chain, VixChain)
    sl = chain.slices[0]
    assert sl.future == 20.5
    assert np.array_equal(sl.strikes, [18.0, 22.0])
    assert np.array_equal(sl.mid, [2.7, 0.6])
    # mid IVs are Black inversions against the quoted future
    want = implied_vol(2.7, 20.5, 18.0, 30 / 365, kind="call")
    assert sl.mid_iv[0] == want
    assert np.all(np.isfinite(sl.mid_iv))


def test_load_vix_inconsistent_future(tmp_path):
    path = write(tmp_path / "vix.csv", VIX_HDR + "\n".join([
        "2024-06-03,30,20.5,18.0,2.6,2.8,2.7",
        "2024-06-03,30,20.6,22.0,0.5,0.7,0.6",
    ]) + "\n")
    with pytest.raises(LoadError, match="line 3"):
        load_chain(path, "vix")


def test_load_vix_uninvertible_mid_is_nan(tmp_path):
    # mid below intrinsic (future-K = 2.5) cannot carry an implied vol
    path = write(tmp_path / "vix.csv", VIX_HDR + "\n".join([
        "2024-06-03,30,20.5,18.0,1.0,1.2,1.1",
        "2024-06-03,30,20.5,20.0,1.0,1.4,1.2",
    ]) + "\n")
    with pytest.warns(UserWarning, match="no implied vol"):
        chain = load_chain(path, "vix")
    sl = chain.slices[0]
    assert np.isnan(sl.mid_iv[0])
    assert np.isfinite(sl.mid_iv[1])


def test_load_vix_crossed_quotes(tmp_path):
    path = write(tmp_path / "vix.csv",
                 VIX_HDR + "2024-06-03,30,20.5,18.0,2.9,2.8,2.85\n")
    with pytest.raises(LoadError, match="line 2"):
        load_chain(path, "vix")


# ------------------------------------------------------------- round trips

def test_spx_round_trip(tmp_path):
    chain = OptionChain(as_of="2024-06-03", spot=1.0,
                        smiles=(smile(30 / 365), smile(91 / 365)))
    path = str(tmp_path / "chain.csv")
    save_chain(chain, path)
    back = load_chain(path, "spx", spot=1.0)
    assert back.as_of == chain.as_of
    assert back.maturities == chain.maturities
    for a, b in zip(back.smiles, chain.smiles):
        assert np.array_equal(a.strikes, b.strikes)
        assert a.kinds == b.kinds
        assert np.array_equal(a.bid_iv, b.bid_iv)
        assert np.array_equal(a.ask_iv, b.ask_iv)
        assert np.array_equal(a.mid_iv, b.mid_iv)


def test_vix_round_trip(tmp_path):
    sl = VixQuotes(maturity=16 / 365, future=20.5,
                   strikes=np.array([18.0, 20.0, 23.0]),
                   bid=np.array([2.55, 1.25, 0.30]),
                   ask=np.array([2.75, 1.45, 0.40]),
                   mid=np.array([2.65, 1.35, 0.35]),
                   mid_iv=np.array([np.nan, np.nan, np.nan]))
    chain = VixChain(as_of="2024-06-03", slices=(sl,))
    path = str(tmp_path / "vix.csv")
    save_chain(chain, path)
    back = load_chain(path, "vix")
    b = back.slices[0]
    assert b.maturity == sl.maturity
    assert b.future == sl.future
    assert np.array_equal(b.strikes, sl.strikes)
    assert np.array_equal(b.bid, sl.bid)
    assert np.array_equal(b.ask, sl.ask)
    assert np.array_equal(b.mid, sl.mid)
    # loading recomputes the IVs from the mids
    assert np.all(np.isfinite(b.mid_iv))
    with pytest.raises(InputError):
        save_chain("not a chain", str(tmp_path / "x.csv"))


def test_curves_round_trip(tmp_path):
    curve = flat_curve(0.03)
    from pdv4.curves import PiecewiseConstantCurve
    curve = PiecewiseConstantCurve(times=np.array([0.0, 0.5, 1.0]),
                                   rates=np.array([0.01, 0.02, 0.035]))
    rate_path = str(tmp_path / "rates.csv")
    save_curve(curve, rate_path)
    curves = load_curves(rate_path)
    assert np.array_equal(curves.rate.times, curve.times)
    assert np.array_equal(curves.rate.rates, curve.rates)
    assert curves.div.value(0.3) == 0.0
    div_path = str(tmp_path / "divs.csv")
    save_curve(flat_curve(0.01), div_path)
    both = load_curves(rate_path, div_path)
    assert both.div.value(2.0) == 0.01
    bad = write(tmp_path / "bad.csv", "t_years,rate\n0.5,0.01\n")
    with pytest.raises(LoadError):
        load_curves(bad)  # first breakpoint must be zero
    with pytest.raises(LoadError):
        load_curves(write(tmp_path / "junk.csv", "nope\n"))


def test_returns_round_trip(tmp_path):
    rets = np.array([0.001, -0.02, 0.013])
    path = str(tmp_path / "rets.csv")
    save_returns(rets, path)
    assert np.array_equal(load_returns(path), rets)
    with pytest.raises(LoadError, match="line 3"):
        load_returns(write(tmp_path / "bad.csv", "date,ret\nd1,0.01\nd2,oops\n"))
    with pytest.raises(LoadError):
        load_returns(write(tmp_path / "empty.csv", "date,ret\n"))


# ------------------------------------------------------------- calendars

def test_third_friday_and_vix_expiry():
    assert third_friday(2026, 8) == datetime.date(2026, 8, 21)
    assert third_friday(2024, 6) == datetime.date(2024, 6, 21)
    # 30 days before the following month's third Friday
    assert vix_expiry(2024, 6) == datetime.date(2024, 7, 19) - datetime.timedelta(days=30)
    assert vix_expiry(2024, 12) == third_friday(2025, 1) - datetime.timedelta(days=30)
    assert year_fraction(datetime.date(2024, 6, 3), datetime.date(2024, 7, 3)) == 30 / 365


def test_snap_maturity():
    dt = 1.0 / 252.0
    assert snap_maturity(30 / 365, dt) == 21 * dt
    assert snap_maturity(dt, dt) == dt
    assert snap_maturity(0.6 * dt, dt) == dt  # rounds up to the first node
    with pytest.raises(InputError):
        snap_maturity(0.4 * dt, dt)
    with pytest.raises(InputError):
        snap_maturity(0.0, dt)


# ------------------------------------------------------------- synthesis

class TiltStub:
    """VIX level responding linearly to the fast trend factor."""

    def predict_batch(self, params, r10, r11, r20, r21):
        return 20.0 + 60.0 * np.asarray(r10, dtype=float)

    def covers(self, params):
        return True


def make_synth(seed=5):
    return synth_market(
        slow_params(), FactorState(0.0, 0.0, 0.04, 0.04),
        spx_grid=[(30, np.array([0.9, 1.0, 1.1])), (91, np.array([1.0]))],
        vix_grid=[(16, np.array([16.0, 20.0, 24.0]))],
        surrogate=TiltStub(), n_paths=4000, dt=1.0 / 252.0, seed=seed,
    )


def test_synth_market_chains():
    spx, vix = make_synth()
    assert spx.maturities == [30 / 365, 91 / 365]
    s0 = spx.smiles[0]
    assert s0.kinds == ("put", "call", "call")
    # constant 20% volatility world: mid IVs sit near 0.2
    assert np.all(np.abs(s0.mid_iv - 0.2) < 0.03)
    assert np.all(s0.bid_iv <= s0.mid_iv) and np.all(s0.mid_iv <= s0.ask_iv)
    assert vix is not None
    sl = vix.slices[0]
    assert sl.maturity == 16 / 365
    assert abs(sl.future - 20.0) < 1.0
    assert np.all(sl.bid <= sl.mid) and np.all(sl.mid <= sl.ask)


def test_synth_market_regeneration_is_bit_identical():
    a_spx, a_vix = make_synth(seed=5)
    b_spx, b_vix = make_synth(seed=5)
    for sa, sb in zip(a_spx.smiles, b_spx.smiles):
        assert np.array_equal(sa.mid_iv, sb.mid_iv)
        assert np.array_equal(sa.bid_iv, sb.bid_iv)
    for va, vb in zip(a_vix.slices, b_vix.slices):
        assert va.future == vb.future
        assert np.array_equal(va.mid, vb.mid)
    c_spx, _ = make_synth(seed=6)
    assert not np.array_equal(a_spx.smiles[0].mid_iv, c_spx.smiles[0].mid_iv)


def test_synth_market_round_trip(tmp_path):
    spx, vix = make_synth()
    spx_path = str(tmp_path / "spx.csv")
    vix_path = str(tmp_path / "vix.csv")
    save_chain(spx, spx_path)
    save_chain(vix, vix_path)
    spx_back = load_chain(spx_path, "spx")
    assert spx_back.maturities == spx.maturities
    for a, b in zip(spx_back.smiles, spx.smiles):
        assert np.array_equal(a.mid_iv, b.mid_iv)
    vix_back = load_chain(vix_path, "vix")
    assert vix_back.slices[0].future == vix.slices[0].future
    assert np.array_equal(vix_back.slices[0].mid_iv, vix.slices[0].mid_iv,
                          equal_nan=True)


def test_synth_market_argument_checks():
    with pytest.raises(InputError):
        synth_market(slow_params(), FactorState(0, 0, 0, 0), [], [],
                     n_paths=100, dt=1 / 252)
    with pytest.raises(InputError):
        synth_market(slow_params(), FactorState(0, 0, 0, 0),
                     [(30, np.array([1.0]))], [(16, np.array([20.0]))],
                     surrogate=None, n_paths=100, dt=1 / 252)
    with pytest.raises(InputError):
        synth_market(slow_params(), FactorState(0, 0, 0, 0),
                     [(30, np.array([1.0])), (30, np.array([1.1]))], [],
                     n_paths=100, dt=1 / 252)
