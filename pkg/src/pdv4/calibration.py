"""Loss functionals, derivative-free calibration, and stability reporting.

Both losses price with common random numbers: the simulation seed is fixed
for the whole calibration run, so the objective is a deterministic function
of the parameter point and derivative-free model building is not corrupted
by resampling noise.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .errors import (
    ExtrapolationError,
    InputError,
    NumericalError,
    SimulationDiverged,
)
from .market import Curves, OptionChain, VixChain, snap_maturity
from .mc import PathBundle, SimConfig, simulate
from .model import (
    PARAM_NAMES,
    FactorState,
    ModelParams,
    ParamBounds,
    kernel,
)
from .pricing import black_vega, price_spx_options, price_vix_derivatives
from .rng import master_stream, split

DEFAULT_WEIGHT_SPX = 10.0
DEFAULT_WEIGHT_VIX = 5.0
DEFAULT_WEIGHT_FUTURE = 20.0

# objective value substituted when a parameter point cannot be priced at all
_UNPRICEABLE = 1.0e12

_IDX = {name: i for i, name in enumerate(PARAM_NAMES)}


# ------------------------------------------------------------- primitives

def score(x: float, y: float) -> float:
    """Relative square deviation (x/y - 1)^2."""
    if y == 0:
        raise InputError("score: reference value must be nonzero")
    r = x / y - 1.0
    return r * r


def vega_weights(chain: VixChain) -> dict[float, np.ndarray]:
    """Per-maturity Black vegas at market mid IV and future, normalized to 1.

    Strikes whose mid IV is NaN (not Black-invertible at load) get weight
    zero with a warning; a maturity where every strike fails is an error.
    """
    out = {}
    for sl in chain.slices:
        vegas = np.zeros(sl.strikes.size)
        for i, (k, iv) in enumerate(zip(sl.strikes, sl.mid_iv)):
            if math.isnan(iv):
                warnings.warn(
                    f"vega_weights: strike {k:g} at T={sl.maturity:.6g} has no "
                    "mid IV, weight zero")
                continue
            vegas[i] = black_vega(sl.future, float(k), sl.maturity, float(iv))
        total = vegas.sum()
        if not total > 0:
            raise InputError(
                f"vega_weights: no usable strikes at T={sl.maturity:.6g}")
        out[sl.maturity] = vegas / total
    return out


@dataclass(frozen=True)
class SpxLossSpec:
    """Hyperparameters of the SPX implied-vol loss."""

    weight: float = DEFAULT_WEIGHT_SPX

    def __post_init__(self):
        if not self.weight > 0:
            raise InputError("SpxLossSpec: weight must be positive")


@dataclass(frozen=True)
class VixLossSpec:
    """Hyperparameters and vega weights of the VIX futures/options loss.

    gamma maps maturity -> per-strike weights summing to one; build it from
    the quoted chain with from_chain.
    """

    weight_future: float = DEFAULT_WEIGHT_FUTURE
    weight_options: float = DEFAULT_WEIGHT_VIX
    gamma: dict[float, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not (self.weight_future > 0 and self.weight_options > 0):
            raise InputError("VixLossSpec: weights must be positive")
        for t, g in self.gamma.items():
            if np.any(g < 0) or abs(float(g.sum()) - 1.0) > 1e-9:
                raise InputError(
                    f"VixLossSpec: weights at T={t:.6g} must be nonnegative and sum to 1")

    @classmethod
    def from_chain(cls, chain: VixChain,
                   weight_future: float = DEFAULT_WEIGHT_FUTURE,
                   weight_options: float = DEFAULT_WEIGHT_VIX) -> "VixLossSpec":
        return cls(weight_future=weight_future, weight_options=weight_options,
                   gamma=vega_weights(chain))


@dataclass(frozen=True)
class McSettings:
    """Everything a loss evaluation needs besides the parameter point.

    When a returns series is set, the initial factor state is recomputed
    from it for every parameter point (the lambdas define the state); the
    fixed init is used otherwise.
    """

    n_paths: int = 200_000
    dt: float = 1.0 / 504.0
    seed: int = 0
    spot: float = 1.0
    curves: Curves = field(default_factory=Curves.flat)
    init: FactorState = FactorState(0.0, 0.0, 0.0, 0.0)
    returns: np.ndarray | None = None
    returns_kind: str = "simple"
    threads: int = 1

    def __post_init__(self):
        if self.n_paths < 2 or not self.dt > 0:
            raise InputError("McSettings: need n_paths >= 2 and dt > 0")
        if not self.spot > 0:
            raise InputError("McSettings: spot must be positive")

    def init_for(self, params: ModelParams) -> FactorState:
        if self.returns is None:
            return self.init
        return init_factors_from_history(params, self.returns,
                                         kind=self.returns_kind)


def _simulate_for(params: ModelParams, maturities: list[float],
                  mc: McSettings) -> PathBundle:
    record = sorted({snap_maturity(t, mc.dt) for t in maturities})
    cfg = SimConfig(
        dt=mc.dt, n_paths=mc.n_paths, horizon=record[-1], seed=mc.seed,
        antithetic=True, rate_curve=mc.curves.rate, div_curve=mc.curves.div,
        record_times=tuple(record), threads=mc.threads,
    )
    return simulate(params, mc.init_for(params), mc.spot, cfg)


# ------------------------------------------------------------- spx loss

def spx_loss_breakdown(
    params: ModelParams,
    market: OptionChain,
    spec: SpxLossSpec,
    mc: McSettings,
    bundle: PathBundle | None = None,
) -> tuple[float, list[dict]]:
    """SPX loss plus one record per quoted cell.

    Model IVs come from MC prices at the grid node nearest each quoted
    maturity.  Cells whose model price is not invertible drop out of the
    mean but charge a penalty of ten times the worst surviving score (at
    least 10), which keeps the objective finite while pushing the optimizer
    away from degenerate regions.
    """
    if bundle is None:
        bundle = _simulate_for(params, market.maturities, mc)
    cells = []
    for smile in market.smiles:
        t_sim = snap_maturity(smile.maturity, mc.dt)
        chain = [(t_sim, float(k), kind)
                 for k, kind in zip(smile.strikes, smile.kinds)]
        priced = price_spx_options(bundle, chain, mc.spot,
                                   mc.curves.rate, mc.curves.div)
        for i, p in enumerate(priced):
            cells.append({
                "T": smile.maturity, "K": float(smile.strikes[i]),
                "kind": smile.kinds[i],
                "market_iv": float(smile.mid_iv[i]), "model_iv": p.iv,
                "score": (score(p.iv, float(smile.mid_iv[i]))
                          if not math.isnan(p.iv) else float("nan")),
            })
    survivors = [c["score"] for c in cells if not math.isnan(c["score"])]
    n_dropped = len(cells) - len(survivors)
    penalty = 10.0 * max(survivors + [1.0]) if n_dropped else 0.0
    total = sum(survivors) + n_dropped * penalty
    value = spec.weight * total / len(cells)
    return value, cells


def loss_spx(params: ModelParams, market: OptionChain, spec: SpxLossSpec,
             mc: McSettings, bundle: PathBundle | None = None) -> float:
    value, _ = spx_loss_breakdown(params, market, spec, mc, bundle)
    return value


# ------------------------------------------------------------- vix loss

def vix_loss_breakdown(
    params: ModelParams,
    market: VixChain,
    surrogate,
    spec: VixLossSpec,
    mc: McSettings,
    bundle: PathBundle | None = None,
) -> tuple[float, dict]:
    """VIX loss plus per-maturity records.

    Future and option terms are each averaged over maturities; option
    scores compare call PRICES under the normalized vega weights, with
    zero-weight strikes skipped entirely.
    """
    if bundle is None:
        bundle = _simulate_for(params, market.maturities, mc)
    snapped = [snap_maturity(t, mc.dt) for t in market.maturities]
    slices = price_vix_derivatives(
        params, surrogate, bundle, snapped,
        [sl.strikes for sl in market.slices],
        rate_curve=None, strict=True,
    )
    n_mat = len(market.slices)
    future_term = 0.0
    option_term = 0.0
    detail = []
    for quoted, model in zip(market.slices, slices):
        gamma = spec.gamma.get(quoted.maturity)
        if gamma is None:
            raise InputError(
                f"vix loss: no vega weights for T={quoted.maturity:.6g}; "
                "construct them with VixLossSpec.from_chain on this market")
        f_score = score(model.future, quoted.future)
        future_term += f_score
        opt = 0.0
        for g, c_model, c_market in zip(gamma, model.call_prices, quoted.mid):
            if g == 0.0:
                continue
            opt += float(g) * score(float(c_model), float(c_market))
        option_term += opt
        detail.append({
            "T": quoted.maturity,
            "market_future": quoted.future, "model_future": model.future,
            "future_score": f_score, "option_score": opt,
            "model_prices": model.call_prices, "market_prices": quoted.mid,
        })
    value = (spec.weight_future * future_term / n_mat
             + spec.weight_options * option_term / n_mat)
    return value, {"maturities": detail, "future_term": future_term / n_mat,
                   "option_term": option_term / n_mat}


def loss_vix(params: ModelParams, market: VixChain, surrogate,
             spec: VixLossSpec, mc: McSettings,
             bundle: PathBundle | None = None) -> float:
    value, _ = vix_loss_breakdown(params, market, surrogate, spec, mc, bundle)
    return value


def loss_joint(
    params: ModelParams,
    spx_market: OptionChain,
    vix_market: VixChain,
    surrogate,
    spx_spec: SpxLossSpec,
    vix_spec: VixLossSpec,
    mc: McSettings,
) -> float:
    """loss_spx + loss_vix on one shared simulation.

    Recorded snapshots do not perturb the random draws, so sharing the
    bundle is bitwise identical to two separate simulations with this seed.
    """
    bundle = _simulate_for(params, spx_market.maturities + vix_market.maturities, mc)
    return (loss_spx(params, spx_market, spx_spec, mc, bundle)
            + loss_vix(params, vix_market, surrogate, vix_spec, mc, bundle))


# ------------------------------------------------------------- optimizer

@dataclass(frozen=True)
class OptResult:
    z: np.ndarray
    fval: float
    n_evals: int
    trace: list[tuple[int, float]]
    exhausted: bool


def _fit_diag_quadratic(u: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Ridge LSQ coefficients [c0, c1(d), c2(d)] of a separable quadratic."""
    n, d = u.shape
    phi = np.hstack([np.ones((n, 1)), u, u * u])
    a = phi.T @ phi
    a[np.diag_indices_from(a)] += 1e-10 * max(1.0, float(np.trace(a)) / a.shape[0])
    return np.linalg.solve(a, phi.T @ f)


def _solve_box_tr(coef: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Exact minimizer of the separable quadratic on the box, per coordinate."""
    d = lo.size
    c1, c2 = coef[1:1 + d], coef[1 + d:]
    best = np.empty(d)
    for i in range(d):
        candidates = [lo[i], hi[i]]
        if c2[i] > 0:
            candidates.append(min(max(-c1[i] / (2.0 * c2[i]), lo[i]), hi[i]))
        vals = [c1[i] * u + c2[i] * u * u for u in candidates]
        best[i] = candidates[int(np.argmin(vals))]
    return best


def _model_value(coef: np.ndarray, u: np.ndarray) -> float:
    d = u.size
    return float(coef[0] + coef[1:1 + d] @ u + coef[1 + d:] @ (u * u))


def minimize_trust_region(f, z0: np.ndarray, budget: int, seed: int) -> OptResult:
    """Derivative-free trust-region search on the unit box.

    A separable quadratic is regressed on the evaluation archive near the
    incumbent and minimized exactly on box-intersected-with-trust-region;
    classic rho-tests drive acceptance and radius updates, and occasional
    randomized poise points keep the regression well fed.
    """
    if budget < 1:
        raise InputError("minimize_trust_region: budget must be positive")
    d = z0.size
    z0 = np.clip(np.asarray(z0, dtype=float), 0.0, 1.0)
    stream = master_stream(seed)
    delta = 0.1
    archive_z: list[np.ndarray] = []
    archive_f: list[float] = []
    trace: list[tuple[int, float]] = []
    best_z, best_f = None, np.inf

    def evaluate(z: np.ndarray) -> float:
        nonlocal best_z, best_f
        val = float(f(z))
        archive_z.append(z.copy())
        archive_f.append(val)
        if val < best_f:
            best_f, best_z = val, z.copy()
            trace.append((len(archive_f), val))
        return val

    design = [z0]
    for i in range(d):
        for sgn in (1.0, -1.0):
            pt = z0.copy()
            pt[i] = min(max(pt[i] + sgn * delta, 0.0), 1.0)
            design.append(pt)
    for pt in design:
        if len(archive_f) >= budget:
            return OptResult(best_z, best_f, len(archive_f), trace, True)
        evaluate(pt)

    poise = 0
    while len(archive_f) < budget:
        if delta <= 1e-5:
            return OptResult(best_z, best_f, len(archive_f), trace, False)
        pts = np.array(archive_z)
        fs = np.array(archive_f)
        dist = np.max(np.abs(pts - best_z), axis=1)
        near = dist <= 3.0 * delta
        if near.sum() < 2 * d + 1:
            near = np.argsort(dist)[:2 * d + 1]
        else:
            order = np.nonzero(near)[0]
            if order.size > 6 * d:
                near = order[np.argsort(dist[order])[:6 * d]]
            else:
                near = order
        u = (pts[near] - best_z) / delta
        coef = _fit_diag_quadratic(u, fs[near])
        lo = np.maximum(-1.0, (0.0 - best_z) / delta)
        hi = np.minimum(1.0, (1.0 - best_z) / delta)
        u_star = _solve_box_tr(coef, lo, hi)
        predicted = _model_value(coef, np.zeros(d)) - _model_value(coef, u_star)

        if predicted <= 1e-14 or np.max(np.abs(u_star)) < 1e-9:
            # flat or stalled model: refresh geometry with a random poise point
            draw = split(stream, poise).uniforms(d) * 2.0 - 1.0
            poise += 1
            probe = np.clip(best_z + 0.7 * delta * draw, 0.0, 1.0)
            evaluate(probe)
            delta *= 0.7
            continue

        incumbent = best_f
        candidate = np.clip(best_z + delta * u_star, 0.0, 1.0)
        val = evaluate(candidate)
        rho = (incumbent - val) / predicted
        if rho >= 0.7 and np.max(np.abs(u_star)) >= 0.9:
            delta = min(delta * 1.5, 0.5)
        elif rho < 0.1:
            delta *= 0.5
    return OptResult(best_z, best_f, len(archive_f), trace, True)


def minimize_nelder_mead(f, z0: np.ndarray, budget: int) -> OptResult:
    """scipy Nelder-Mead with box projection, wrapped to match OptResult."""
    if budget < 1:
        raise InputError("minimize_nelder_mead: budget must be positive")
    d = z0.size
    count = 0
    best_f = np.inf
    best_z = np.clip(np.asarray(z0, dtype=float), 0.0, 1.0)
    trace: list[tuple[int, float]] = []

    def wrapped(z):
        nonlocal count, best_f, best_z
        count += 1
        val = float(f(np.clip(z, 0.0, 1.0)))
        if val < best_f:
            best_f = val
            best_z = np.clip(z.copy(), 0.0, 1.0)
            trace.append((count, val))
        return val

    res = scipy.optimize.minimize(
        wrapped, best_z, method="Nelder-Mead",
        bounds=[(0.0, 1.0)] * d,
        options={"maxfev": budget, "xatol": 1e-7, "fatol": 1e-12},
    )
    return OptResult(best_z, best_f, count, trace, count >= budget and not res.success)


# ------------------------------------------------------------- calibrate

@dataclass(frozen=True)
class CalibConfig:
    """Calibration run settings; budget counts objective evaluations in total."""

    n_paths: int = 200_000
    dt: float = 1.0 / 504.0
    budget: int = 300
    bounds: ParamBounds = field(default_factory=ParamBounds.default)
    restarts: int = 3
    seed: int = 0
    optimizer: str = "trust-region"
    threads: int = 1

    def __post_init__(self):
        if self.n_paths < 2 or not self.dt > 0:
            raise InputError("CalibConfig: need n_paths >= 2 and dt > 0")
        if self.budget < 1 or self.restarts < 1:
            raise InputError("CalibConfig: budget and restarts must be positive")
        if self.optimizer not in ("trust-region", "nelder-mead"):
            raise InputError("CalibConfig: optimizer must be trust-region or nelder-mead")


def _check_bounds_shape(bounds: ParamBounds) -> None:
    lo, hi = bounds.lo, bounds.hi
    for name in ("lambda_10", "lambda_11", "lambda_20", "lambda_21"):
        if not lo[_IDX[name]] > 0:
            raise InputError(f"calibrate: {name} lower bound must be positive")
    for name in ("theta_1", "theta_2"):
        if lo[_IDX[name]] < 0 or hi[_IDX[name]] > 1:
            raise InputError(f"calibrate: {name} bounds must stay in [0, 1]")
    if hi[_IDX["beta_1"]] > 0:
        raise InputError("calibrate: beta_1 upper bound must be <= 0")
    if lo[_IDX["beta_12"]] < 0 or lo[_IDX["beta_0"]] < 0 or lo[_IDX["beta_2"]] < 0:
        raise InputError("calibrate: beta_0, beta_2, beta_12 must be nonnegative")


def params_from_unit(z: np.ndarray, bounds: ParamBounds) -> ModelParams:
    """Scaled point -> parameters, canonicalizing each factor's lambda order.

    (l0, l1, theta) and (l1, l0, 1-theta) describe the same kernel, so the
    optimizer's box is folded onto the l0 >= l1 representative.
    """
    x = bounds.lo + np.clip(z, 0.0, 1.0) * (bounds.hi - bounds.lo)
    for base in (0, 3):
        if x[base] < x[base + 1]:
            x[base], x[base + 1] = x[base + 1], x[base]
            x[base + 2] = 1.0 - x[base + 2]
    return ModelParams.from_array(x)


def unit_from_params(params: ModelParams, bounds: ParamBounds) -> np.ndarray:
    width = bounds.hi - bounds.lo
    safe = np.where(width > 0, width, 1.0)
    return np.clip((params.to_array() - bounds.lo) / safe, 0.0, 1.0)


def calibrate(
    objective: str,
    spx_market: OptionChain,
    cfg: CalibConfig,
    vix_market: VixChain | None = None,
    surrogate=None,
    spx_spec: SpxLossSpec | None = None,
    vix_spec: VixLossSpec | None = None,
    spot: float = 1.0,
    curves: Curves | None = None,
    init: FactorState = FactorState(0.0, 0.0, 0.0, 0.0),
    returns: np.ndarray | None = None,
    returns_kind: str = "simple",
    x0: ModelParams | None = None,
) -> tuple[ModelParams, dict]:
    """Derivative-free loss minimization over the parameter box.

    Multiple randomized restarts run sequentially with independent seeds
    and shares of the evaluation budget; the best final point wins.  With
    common random numbers per restart the whole function is deterministic
    in (markets, cfg, seed).  The report carries the loss trace, final
    per-cell errors, seeds, and timings; if the budget stops a search early
    the budget_exhausted flag is set and best-so-far is returned.
    """
    if objective not in ("spx_only", "joint"):
        raise InputError("calibrate: objective must be spx_only or joint")
    joint = objective == "joint"
    if joint and (vix_market is None or surrogate is None):
        raise InputError("calibrate: joint objective needs vix_market and surrogate")
    _check_bounds_shape(cfg.bounds)
    if joint:
        if not (surrogate.box.lo <= cfg.bounds.lo + 1e-12).all() or \
           not (surrogate.box.hi >= cfg.bounds.hi - 1e-12).all():
            raise InputError(
                "calibrate: bounds exceed the surrogate training box")
    spx_spec = spx_spec or SpxLossSpec()
    if joint and vix_spec is None:
        vix_spec = VixLossSpec.from_chain(vix_market)
    curves = curves or Curves.flat()

    base = master_stream(cfg.seed)
    per_restart = max(cfg.budget // cfg.restarts, 2 * len(PARAM_NAMES) + 2)
    tic = time.perf_counter()
    runs = []
    for r in range(cfg.restarts):
        run_seed = split(base, r).key
        mc = McSettings(
            n_paths=cfg.n_paths, dt=cfg.dt, seed=run_seed, spot=spot,
            curves=curves, init=init, returns=returns,
            returns_kind=returns_kind, threads=cfg.threads,
        )

        def objective_fn(z: np.ndarray) -> float:
            params = params_from_unit(z, cfg.bounds)
            try:
                if joint:
                    return loss_joint(params, spx_market, vix_market, surrogate,
                                      spx_spec, vix_spec, mc)
                return loss_spx(params, spx_market, spx_spec, mc)
            except (SimulationDiverged, NumericalError, ExtrapolationError):
                return _UNPRICEABLE

        if r == 0 and x0 is not None:
            z0 = unit_from_params(x0, cfg.bounds)
        else:
            z0 = split(base, 100 + r).uniforms(len(PARAM_NAMES))
        if cfg.optimizer == "trust-region":
            result = minimize_trust_region(objective_fn, z0,
                                           per_restart, seed=split(base, 200 + r).key)
        else:
            result = minimize_nelder_mead(objective_fn, z0, per_restart)
        runs.append((result, run_seed, mc))

    best_idx = int(np.argmin([run[0].fval for run in runs]))
    result, run_seed, mc = runs[best_idx]
    final_params = params_from_unit(result.z, cfg.bounds)

    bundle_times = spx_market.maturities + (vix_market.maturities if joint else [])
    bundle = _simulate_for(final_params, bundle_times, mc)
    spx_value, spx_cells = spx_loss_breakdown(final_params, spx_market,
                                              spx_spec, mc, bundle)
    report = {
        "objective": objective,
        "final_params": final_params.to_dict(),
        "final_loss": result.fval,
        "loss_spx": spx_value,
        "spx_cells": spx_cells,
        "loss_trace": result.trace,
        "n_evals": sum(run[0].n_evals for run in runs),
        "restart_losses": [run[0].fval for run in runs],
        "best_restart": best_idx,
        "seed": cfg.seed,
        "run_seed": run_seed,
        "budget_exhausted": any(run[0].exhausted for run in runs),
        "optimizer": cfg.optimizer,
        "wall_time_s": time.perf_counter() - tic,
    }
    if joint:
        vix_value, vix_detail = vix_loss_breakdown(
            final_params, vix_market, surrogate, vix_spec, mc, bundle)
        report["loss_vix"] = vix_value
        report["vix_detail"] = vix_detail
        report["weights"] = {
            "spx": spx_spec.weight,
            "vix": vix_spec.weight_options,
            "future": vix_spec.weight_future,
        }
    return final_params, report


# ------------------------------------------------------------- stability

def stability_report(
    dates: list[str],
    fits: list[ModelParams],
    markets: list[OptionChain] | None = None,
    mc: McSettings | None = None,
    t_grid: np.ndarray | None = None,
) -> dict:
    """Day-over-day parameter drift, kernel overlays, and optional IV MAE.

    The MAE per date averages |model IV - market IV| over quoted cells in
    the moneyness window K/spot in [1 - 0.4 sqrt(T), 1 + 0.25 sqrt(T)],
    and needs the market chains and MC settings to price with.
    """
    if len(dates) != len(fits) or len(dates) < 2:
        raise InputError("stability_report: need matching dates/fits, at least 2")
    if t_grid is None:
        t_grid = np.linspace(0.0, 1.0, 101)
    series = np.array([p.to_array() for p in fits])
    drift = np.abs(np.diff(series, axis=0))
    kernels = [
        {"date": d, "t": t_grid, "k1": kernel(p, 1, t_grid), "k2": kernel(p, 2, t_grid)}
        for d, p in zip(dates, fits)
    ]
    report = {
        "dates": list(dates),
        "params": {name: series[:, i].tolist() for i, name in enumerate(PARAM_NAMES)},
        "drift": {name: drift[:, i].tolist() for i, name in enumerate(PARAM_NAMES)},
        "max_drift": {name: float(drift[:, i].max()) for i, name in enumerate(PARAM_NAMES)},
        "kernels": kernels,
    }
    if markets is not None:
        if mc is None or len(markets) != len(dates):
            raise InputError("stability_report: MAE needs one market per date and mc")
        maes = []
        for params, market in zip(fits, markets):
            _, cells = spx_loss_breakdown(params, market, SpxLossSpec(), mc)
            errs = []
            for c in cells:
                lo = 1.0 - 0.4 * math.sqrt(c["T"])
                hi = 1.0 + 0.25 * math.sqrt(c["T"])
                if lo <= c["K"] / mc.spot <= hi and not math.isnan(c["model_iv"]):
                    errs.append(abs(c["model_iv"] - c["market_iv"]))
            maes.append(float(np.mean(errs)) if errs else float("nan"))
        report["mae"] = maes
    return report


# ------------------------------------------------------------- factor init

def init_factors_from_history(
    params: ModelParams,
    returns: np.ndarray,
    cutoff_days: int = 1000,
    kind: str = "simple",
) -> FactorState:
    """Initial factors as kernel-weighted sums of past daily returns.

    R_{n,p} = sum_{k=1..cutoff} lambda_np exp(-lambda_np k/252) ret_{-k}^n
    with the series oldest-first, so ret_{-1} is the last element.  Log
    returns are converted to simple before weighting.  A series shorter
    than the cutoff is used in full with a warning.
    """
    returns = np.asarray(returns, dtype=float)
    if returns.ndim != 1 or returns.size < 1:
        raise InputError("init_factors_from_history: need a 1-d return series")
    if kind not in ("simple", "log"):
        raise InputError("init_factors_from_history: kind must be simple or log")
    if cutoff_days < 1:
        raise InputError("init_factors_from_history: cutoff must be positive")
    if returns.size < cutoff_days:
        warnings.warn(
            f"return series has {returns.size} days, below the {cutoff_days}-day "
            "cutoff; using the full series")
    n_used = min(returns.size, cutoff_days)
    recent_first = returns[::-1][:n_used]
    if kind == "log":
        recent_first = np.expm1(recent_first)
    k = np.arange(1, n_used + 1) / 252.0

    def factor(lam: float, power: int) -> float:
        weights = lam * np.exp(-lam * k)
        return float(weights @ recent_first ** power)

    return FactorState(
        r_10=factor(params.lambda_10, 1),
        r_11=factor(params.lambda_11, 1),
        r_20=factor(params.lambda_20, 2),
        r_21=factor(params.lambda_21, 2),
    )
