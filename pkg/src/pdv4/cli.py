"""Command-line workflows over the library: simulate, datasets, training,
pricing, calibration, stability, and the upside-trend impact scenario.

Every run resolves its settings from defaults, an optional --config JSON
file, and flags (highest precedence), writes its outputs into --out, and
finishes with a manifest.json recording the resolved settings, SHA-256
digests of inputs and outputs, and package versions.  `rerun --manifest`
replays a recorded run; outputs are bit-identical for equal inputs.

Exit codes: 0 success, 2 input problems, 3 numerical failures, 4 when a
calibration stopped on its evaluation budget rather than convergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .calibration import (
    CalibConfig,
    McSettings,
    SpxLossSpec,
    VixLossSpec,
    calibrate,
    stability_report,
)
from .errors import (
    EXIT_BUDGET,
    EXIT_INPUT,
    EXIT_NUMERICAL,
    EXIT_OK,
    InputError,
    NumericalError,
    Pdv4Error,
)
from .market import (
    CALENDAR_DAYS_PER_YEAR,
    Curves,
    load_chain,
    load_curves,
    load_returns,
    save_chain,
    snap_maturity,
    synth_market,
)
from .mc import (
    NestedVixConfig,
    PanelConfig,
    SimConfig,
    nested_variance_stats,
    simulate,
)
from .model import (
    PARAM_NAMES,
    FactorState,
    ModelParams,
    ParamBounds,
    reference_params,
)
from .nn import MlpSpec
from .pricing import forward_price, price_spx_options, price_vix_derivatives
from .rng import master_stream, split
from .stats import histogram, mean_stderr, pair_mean_stderr
from .surrogate import (
    Surrogate,
    TrainConfig,
    VixDataset,
    build_dataset,
    evaluate_surrogate,
    sample_param_configs,
    train,
    training_report_to_jsonl,
)

_MANIFEST_FORMAT = "pdv4-manifest"
_MANIFEST_VERSION = 1

#: scenario defaults: factor start used by the upside-trend impact runs
_SCENARIO_INIT = FactorState(0.2988, 0.2397, 0.016, 0.02)


# ------------------------------------------------------------- small io

def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    return obj


def _write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n")


def _read_json(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise InputError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not valid JSON ({exc})") from exc


def _write_csv(path: Path, header: list[str], rows) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def _params_from_file(path: str) -> ModelParams:
    d = _read_json(path)
    if not isinstance(d, dict):
        raise InputError(f"{path}: expected an object with the 10 parameter names")
    return ModelParams.from_dict(d)


def _init_from_file(path: str | None) -> FactorState:
    if path is None:
        return FactorState(0.0, 0.0, 0.0, 0.0)
    d = _read_json(path)
    try:
        return FactorState(**{k: float(d[k]) for k in ("r_10", "r_11", "r_20", "r_21")})
    except (KeyError, TypeError) as exc:
        raise InputError(f"{path}: need keys r_10, r_11, r_20, r_21") from exc


def _curves_from(settings: dict) -> Curves:
    if settings.get("rates"):
        return load_curves(settings["rates"], settings.get("divs") or None)
    if settings.get("divs"):
        raise InputError("a dividend curve needs a rate curve alongside it")
    return Curves.flat()


def _grids_from_file(path: str) -> tuple[list, list]:
    """Grid file: {"spx": [[days, [strikes...]], ...], "vix": [...]}."""
    d = _read_json(path)
    if not isinstance(d, dict) or "spx" not in d:
        raise InputError(f"{path}: expected an object with an 'spx' grid")
    def conv(entries):
        out = []
        for item in entries:
            if len(item) != 2:
                raise InputError(f"{path}: each grid entry is [days, [strikes]]")
            out.append((int(item[0]), np.asarray(item[1], dtype=float)))
        return out
    return conv(d["spx"]), conv(d.get("vix", []))


def _floats_arg(text: str, what: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise InputError(f"{what}: expected comma-separated numbers, got {text!r}") from exc
    if not vals:
        raise InputError(f"{what}: empty list")
    return vals


def _ints_arg(text: str, what: str) -> list[int]:
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise InputError(f"{what}: expected comma-separated integers, got {text!r}") from exc
    if not vals:
        raise InputError(f"{what}: empty list")
    return vals


def _linspace_arg(text: str, what: str) -> np.ndarray:
    parts = text.split(":")
    if len(parts) != 3:
        raise InputError(f"{what}: expected lo:hi:count, got {text!r}")
    try:
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError as exc:
        raise InputError(f"{what}: expected lo:hi:count, got {text!r}") from exc
    if n < 1 or hi < lo:
        raise InputError(f"{what}: need count >= 1 and hi >= lo")
    return np.linspace(lo, hi, n)


def _resolve_threads(settings: dict) -> int:
    n = int(settings["threads"])
    if n < 0:
        raise InputError("threads must be >= 0 (0 = all cores)")
    return n if n > 0 else (os.cpu_count() or 1)


# ------------------------------------------------------------- runners
#
# Each runner consumes resolved settings, writes its outputs under `out`,
# and returns (input file paths, output file names, exit code).

def run_simulate(settings: dict, out: Path):
    params = _params_from_file(settings["params"])
    init = _init_from_file(settings.get("init"))
    curves = _curves_from(settings)
    horizon = float(settings["horizon"])
    record = _floats_arg(settings["record"], "record") if settings["record"] else [horizon]
    cfg = SimConfig(
        dt=float(settings["dt"]), n_paths=int(settings["n_paths"]),
        horizon=horizon, seed=int(settings["seed"]), antithetic=True,
        rate_curve=curves.rate, div_curve=curves.div,
        record_times=tuple(sorted(record)), threads=_resolve_threads(settings),
    )
    bundle = simulate(params, init, float(settings["spot"]), cfg)

    bundle.to_npz(str(out / "paths.npz"))
    outputs = ["paths.npz", "summary.csv"]
    reduce = pair_mean_stderr if bundle.antithetic else mean_stderr
    rows = []
    for i, t in enumerate(bundle.t):
        s_mean, s_se = reduce(bundle.s[i])
        sig_mean, _ = reduce(bundle.sigma[i])
        rows.append([float(t), s_mean, s_se, sig_mean])
    _write_csv(out / "summary.csv", ["t", "spot_mean", "spot_stderr", "sigma_mean"], rows)
    if settings["csv"]:
        bundle.to_csv(str(out / "paths.csv"))
        outputs.append("paths.csv")
    inputs = [settings["params"]] + [settings[k] for k in ("init", "rates", "divs")
                                     if settings.get(k)]
    return inputs, outputs, EXIT_OK


def run_build_dataset(settings: dict, out: Path):
    bounds = (ParamBounds.from_dict(_read_json(settings["bounds"]))
              if settings.get("bounds") else ParamBounds.default())
    configs = sample_param_configs(bounds, int(settings["n_configs"]),
                                   int(settings["seed"]))
    nested = NestedVixConfig(
        n_inner=int(settings["n_inner"]), inner_dt=float(settings["inner_dt"]),
        delta=float(settings["delta"]),
    )
    panel_cfg = PanelConfig(
        dt=float(settings["dt"]), m_obs=int(settings["m_obs"]),
        horizon=float(settings["horizon"]), nested=nested,
    )
    dataset = build_dataset(configs, panel_cfg, int(settings["seed"]), box=bounds)
    dataset.to_npz(str(out / "dataset.npz"))
    outputs = ["dataset.npz"]
    if settings["csv"]:
        dataset.to_csv(str(out / "dataset.csv"))
        outputs.append("dataset.csv")
    inputs = [settings["bounds"]] if settings.get("bounds") else []
    return inputs, outputs, EXIT_OK


def run_train_surrogate(settings: dict, out: Path):
    dataset = VixDataset.from_npz(settings["dataset"])
    n_train = int(settings["n_train"]) if settings["n_train"] else 0
    n_val = int(settings["n_val"]) if settings["n_val"] else 0
    if not n_train:
        n_train = max(1, int(0.8 * dataset.n_rows))
    if not n_val:
        n_val = dataset.n_rows - n_train
    hidden = _ints_arg(settings["hidden"], "hidden")
    acts = [a.strip() for a in settings["activations"].split(",") if a.strip()]
    if len(acts) != len(hidden):
        raise InputError("need one activation per hidden layer")
    spec = MlpSpec(sizes=(14, *hidden, 1), activations=(*acts, "linear"))
    cfg = TrainConfig(
        n_train=n_train, n_val=n_val,
        m_obs=int(settings["m_obs"]), n_inner=int(settings["n_inner"]),
        learning_rate=float(settings["lr"]), batch_size=int(settings["batch_size"]),
        max_epochs=int(settings["max_epochs"]), patience=int(settings["patience"]),
        seed=int(settings["seed"]),
    )
    surrogate, report = train(dataset, cfg, spec)
    surrogate.save(str(out / "surrogate.npz"))
    # per-epoch timings are not reproducible; keep the artifact rerun-stable
    stable = [{k: v for k, v in row.items() if k != "seconds"} for row in report]
    training_report_to_jsonl(stable, str(out / "training.jsonl"))
    best = min(report, key=lambda row: row["val_rmse"])
    _write_json({
        "n_rows": dataset.n_rows, "n_configs": dataset.n_configs,
        "n_train": n_train, "n_val": n_val,
        "epochs_run": len(report), "best_epoch": best["epoch"],
        "best_val_rmse": best["val_rmse"],
        "sizes": list(spec.sizes), "activations": list(spec.activations),
    }, out / "train_report.json")
    return [settings["dataset"]], ["surrogate.npz", "training.jsonl",
                                   "train_report.json"], EXIT_OK


def run_eval_surrogate(settings: dict, out: Path):
    surrogate = Surrogate.load(settings["surrogate"])
    configs = sample_param_configs(surrogate.box, int(settings["n_configs"]),
                                   int(settings["seed"]))
    nested = NestedVixConfig(
        n_inner=int(settings["n_inner"]), inner_dt=float(settings["inner_dt"]),
        delta=float(settings["delta"]),
    )
    panel_cfg = PanelConfig(
        dt=float(settings["dt"]), m_obs=int(settings["m_obs"]),
        horizon=float(settings["horizon"]), nested=nested,
    )
    report = evaluate_surrogate(surrogate, configs, panel_cfg, int(settings["seed"]))
    _write_json({
        "mean_mae": report.mean_mae, "max_mae": report.max_mae,
        "n_dropped_configs": report.n_dropped_configs,
        "per_config_mae": report.per_config_mae,
        "histogram": {"edges": report.error_histogram.edges,
                      "counts": report.error_histogram.counts},
    }, out / "eval.json")
    rows = [[i, *configs[i].to_array().tolist(), float(mae)]
            for i, mae in enumerate(report.per_config_mae)]
    _write_csv(out / "eval.csv", ["config_id", *PARAM_NAMES, "mae"], rows)
    return [settings["surrogate"]], ["eval.json", "eval.csv"], EXIT_OK


def run_price(settings: dict, out: Path):
    params = _params_from_file(settings["params"])
    init = _init_from_file(settings.get("init"))
    curves = _curves_from(settings)
    spx_grid, vix_grid = _grids_from_file(settings["grids"])
    surrogate = Surrogate.load(settings["surrogate"]) if settings.get("surrogate") else None
    if vix_grid and surrogate is None:
        raise InputError("the grid file has VIX maturities: pass --surrogate")
    spot = float(settings["spot"])
    dt = float(settings["dt"])

    quoted = {}
    for days, _ in spx_grid + vix_grid:
        t = days / CALENDAR_DAYS_PER_YEAR
        quoted[days] = snap_maturity(t, dt)
    record = tuple(sorted(set(quoted.values())))
    cfg = SimConfig(
        dt=dt, n_paths=int(settings["n_paths"]), horizon=record[-1],
        seed=int(settings["seed"]), antithetic=True,
        rate_curve=curves.rate, div_curve=curves.div,
        record_times=record, threads=_resolve_threads(settings),
    )
    bundle = simulate(params, init, spot, cfg)

    rows = []
    for days, strikes in spx_grid:
        t_sim = quoted[days]
        fwd = forward_price(spot, t_sim, curves.rate, curves.div)
        cells = [(t_sim, float(k), "put" if k < fwd else "call")
                 for k in np.sort(np.asarray(strikes, dtype=float))]
        for p in price_spx_options(bundle, cells, spot, curves.rate, curves.div):
            rows.append([days, p.strike, p.kind, p.price, p.stderr, p.iv])
    _write_csv(out / "spx_prices.csv",
               ["T_days", "K", "kind", "price", "stderr", "iv"], rows)
    outputs = ["spx_prices.csv"]

    if vix_grid:
        days_list = [d for d, _ in vix_grid]
        slices = price_vix_derivatives(
            params, surrogate, bundle, [quoted[d] for d in days_list],
            [np.sort(np.asarray(ks, dtype=float)) for _, ks in vix_grid],
            rate_curve=curves.rate, strict=True,
        )
        vix_rows = []
        for days, sl in zip(days_list, slices):
            for k, c, se, iv in zip(sl.strikes, sl.call_prices,
                                    sl.call_stderrs, sl.implied_vols):
                vix_rows.append([days, sl.future, sl.future_stderr,
                                 float(k), float(c), float(se), float(iv)])
        _write_csv(out / "vix_prices.csv",
                   ["T_days", "future", "future_stderr", "K", "call",
                    "stderr", "iv"], vix_rows)
        outputs.append("vix_prices.csv")

    inputs = [settings["params"], settings["grids"]]
    inputs += [settings[k] for k in ("init", "surrogate", "rates", "divs")
               if settings.get(k)]
    return inputs, outputs, EXIT_OK


def run_synth_market(settings: dict, out: Path):
    params = _params_from_file(settings["params"])
    init = _init_from_file(settings.get("init"))
    curves = _curves_from(settings)
    spx_grid, vix_grid = _grids_from_file(settings["grids"])
    surrogate = Surrogate.load(settings["surrogate"]) if settings.get("surrogate") else None
    spx_chain, vix_chain = synth_market(
        params, init, spx_grid, vix_grid, surrogate=surrogate,
        n_paths=int(settings["n_paths"]), dt=float(settings["dt"]),
        seed=int(settings["seed"]), spot=float(settings["spot"]), curves=curves,
        as_of=settings["as_of"], threads=_resolve_threads(settings),
    )
    save_chain(spx_chain, str(out / "spx.csv"))
    outputs = ["spx.csv"]
    if vix_chain is not None:
        save_chain(vix_chain, str(out / "vix.csv"))
        outputs.append("vix.csv")
    inputs = [settings["params"], settings["grids"]]
    inputs += [settings[k] for k in ("init", "surrogate", "rates", "divs")
               if settings.get(k)]
    return inputs, outputs, EXIT_OK


def _calib_cfg(settings: dict) -> CalibConfig:
    bounds = (ParamBounds.from_dict(_read_json(settings["bounds"]))
              if settings.get("bounds") else ParamBounds.default())
    return CalibConfig(
        n_paths=int(settings["n_paths"]), dt=float(settings["dt"]),
        budget=int(settings["budget"]), bounds=bounds,
        restarts=int(settings["restarts"]), seed=int(settings["seed"]),
        optimizer=settings["optimizer"], threads=_resolve_threads(settings),
    )


def _calibrate_common(settings: dict, out: Path, joint: bool):
    curves = _curves_from(settings)
    spx_chain = load_chain(settings["market"], "spx",
                           spot=float(settings["spot"]), curves=curves)
    cfg = _calib_cfg(settings)
    x0 = _params_from_file(settings["x0"]) if settings.get("x0") else None
    returns = load_returns(settings["returns"]) if settings.get("returns") else None
    kwargs = dict(
        spx_spec=SpxLossSpec(weight=float(settings["w_spx"])),
        spot=float(settings["spot"]), curves=curves,
        returns=returns, returns_kind=settings["returns_kind"], x0=x0,
    )
    if joint:
        vix_chain = load_chain(settings["vix_market"], "vix")
        surrogate = Surrogate.load(settings["surrogate"])
        kwargs.update(
            vix_market=vix_chain, surrogate=surrogate,
            vix_spec=VixLossSpec.from_chain(
                vix_chain, weight_future=float(settings["w_future"]),
                weight_options=float(settings["w_vix"])),
        )
    params, report = calibrate("joint" if joint else "spx_only", spx_chain,
                               cfg, **kwargs)

    # wall time goes to the log, not to a reproducible artifact
    print(f"calibrated in {report.pop('wall_time_s'):.1f}s, "
          f"final loss {report['final_loss']:.6g}", file=sys.stderr)
    cells = report.pop("spx_cells")
    _write_json(report, out / "fit.json")
    _write_json(params.to_dict(), out / "params.json")
    _write_csv(out / "cells.csv",
               ["T", "K", "kind", "market_iv", "model_iv", "score"],
               [[c["T"], c["K"], c["kind"], c["market_iv"], c["model_iv"],
                 c["score"]] for c in cells])
    outputs = ["fit.json", "params.json", "cells.csv"]
    inputs = [settings["market"]]
    inputs += [settings[k] for k in ("bounds", "x0", "returns", "rates", "divs")
               if settings.get(k)]
    if joint:
        inputs += [settings["vix_market"], settings["surrogate"]]
    code = EXIT_BUDGET if report["budget_exhausted"] else EXIT_OK
    return inputs, outputs, code


def run_calibrate_spx(settings: dict, out: Path):
    return _calibrate_common(settings, out, joint=False)


def run_calibrate_joint(settings: dict, out: Path):
    return _calibrate_common(settings, out, joint=True)


def run_stability(settings: dict, out: Path):
    pairs = []
    for item in settings["markets"]:
        date, sep, path = item.partition("=")
        if not sep or not date or not path:
            raise InputError(f"--market expects DATE=PATH, got {item!r}")
        pairs.append((date, path))
    if len(pairs) < 2:
        raise InputError("stability needs at least two dated markets")
    if len({d for d, _ in pairs}) != len(pairs):
        raise InputError("duplicate dates in the market list")

    curves = _curves_from(settings)
    spot = float(settings["spot"])
    cfg = _calib_cfg(settings)
    x0 = _params_from_file(settings["x0"]) if settings.get("x0") else None
    warm = bool(settings["warm_start"])

    status = {}
    fitted = []  # (date, chain, params)
    outputs = []
    prev = x0
    for date, path in pairs:
        try:
            chain = load_chain(path, "spx", spot=spot, curves=curves)
            params, report = calibrate(
                "spx_only", chain, cfg,
                spx_spec=SpxLossSpec(weight=float(settings["w_spx"])),
                spot=spot, curves=curves, x0=prev)
            fitted.append((date, chain, params))
            name = f"params_{date}.json"
            _write_json(params.to_dict(), out / name)
            outputs.append(name)
            status[date] = {"ok": True, "final_loss": report["final_loss"],
                            "n_evals": report["n_evals"]}
            if warm:
                prev = params
        except Pdv4Error as exc:
            # one bad day must not sink the batch
            status[date] = {"ok": False, "error": str(exc)}

    if len(fitted) < 2:
        _write_json({"status": status}, out / "report.json")
        return [p for _, p in pairs], outputs + ["report.json"], EXIT_NUMERICAL

    dates = [d for d, _, _ in fitted]
    chains = [c for _, c, _ in fitted]
    fits = [p for _, _, p in fitted]
    mc = McSettings(n_paths=cfg.n_paths, dt=cfg.dt, seed=cfg.seed, spot=spot,
                    curves=curves, threads=cfg.threads)
    report = stability_report(dates, fits, markets=chains, mc=mc)

    _write_json({"status": status, "dates": report["dates"],
                 "params": report["params"], "drift": report["drift"],
                 "max_drift": report["max_drift"], "mae": report["mae"]},
                out / "report.json")
    rows = [[d, *[report["params"][k][i] for k in PARAM_NAMES], report["mae"][i]]
            for i, d in enumerate(report["dates"])]
    _write_csv(out / "stability.csv", ["date", *PARAM_NAMES, "mae"], rows)
    krows = []
    for entry in report["kernels"]:
        for t, k1, k2 in zip(entry["t"], entry["k1"], entry["k2"]):
            krows.append([entry["date"], float(t), float(k1), float(k2)])
    _write_csv(out / "kernels.csv", ["date", "t", "k1", "k2"], krows)
    outputs += ["report.json", "stability.csv", "kernels.csv"]
    inputs = [p for _, p in pairs]
    inputs += [settings[k] for k in ("bounds", "x0", "rates", "divs")
               if settings.get(k)]
    return inputs, outputs, EXIT_OK


_PLOT_SCRIPT = """\
# gnuplot recipes for the emitted data files
set datafile separator comma
set key autotitle columnhead
# smile per coefficient value:
#   plot for [b in "<values>"] "smiles.csv" using 2:($1==b ? $3 : NaN) with lines
# density per coefficient value:
#   plot for [b in "<values>"] "density.csv" using 2:($1==b ? $3 : NaN) with lines
# expected 30-day volatility versus the coefficient:
#   plot "vix.csv" using 1:2 with linespoints
"""


def run_figure1(settings: dict, out: Path):
    base = (_params_from_file(settings["params"]) if settings.get("params")
            else reference_params())
    init = (_init_from_file(settings["init"]) if settings.get("init")
            else _SCENARIO_INIT)
    beta12 = _floats_arg(settings["beta12"], "beta12")
    strikes = _linspace_arg(settings["moneyness"], "moneyness")
    dt = float(settings["dt"])
    t_quote = int(settings["days"]) / CALENDAR_DAYS_PER_YEAR
    t_sim = snap_maturity(t_quote, dt)
    seed = int(settings["seed"])
    threads = _resolve_threads(settings)

    smile_rows, vix_rows, spots = [], [], {}
    for b in beta12:
        params = dataclasses.replace(base, beta_12=b)
        cfg = SimConfig(
            dt=dt, n_paths=int(settings["n_paths"]), horizon=t_sim,
            seed=seed, antithetic=True, record_times=(t_sim,), threads=threads,
            on_divergence=str(settings["sim_divergence"]),
        )
        bundle = simulate(params, init, 1.0, cfg)
        if bundle.n_absorbed:
            print(f"figure1: beta12={b}: absorbed {bundle.n_absorbed} runaway "
                  f"price paths at spot 0", file=sys.stderr)
        spots[b] = bundle.prices_at(t_sim).copy()
        cells = [(t_sim, float(k), "put" if k < 1.0 else "call") for k in strikes]
        for p in price_spx_options(bundle, cells, 1.0):
            smile_rows.append([b, p.strike, p.iv, p.price, p.stderr])

        # expected 30-day vol index at the same date, by nested MC
        outer_cfg = SimConfig(
            dt=dt, n_paths=int(settings["n_outer"]), horizon=t_sim,
            seed=split(master_stream(seed), 0).key, antithetic=True,
            record_times=(t_sim,), threads=threads,
        )
        outer = simulate(params, init, 1.0, outer_cfg)
        nested = NestedVixConfig(
            n_inner=int(settings["n_inner"]), inner_dt=float(settings["inner_dt"]),
            on_divergence=str(settings["nested_divergence"]),
        )
        mean_var, _, censored = nested_variance_stats(
            params, *outer.factors_at(t_sim), nested,
            split(master_stream(seed), 1))
        n_censored = int(censored.sum())
        if n_censored:
            print(f"figure1: beta12={b}: censored {n_censored} runaway "
                  f"inner paths", file=sys.stderr)
        vix = 100.0 * np.sqrt(mean_var)
        future, future_se = pair_mean_stderr(vix)
        vix_rows.append([b, future, future_se])

    lo = min(float(s.min()) for s in spots.values())
    hi = max(float(s.max()) for s in spots.values())
    bins = int(settings["bins"])
    density_rows = []
    for b in beta12:
        h = histogram(spots[b], bins=bins, lo=lo, hi=hi)
        centers = 0.5 * (h.edges[:-1] + h.edges[1:])
        widths = np.diff(h.edges)
        dens = h.counts / (h.n * widths)
        for c, d in zip(centers, dens):
            density_rows.append([b, float(c), float(d)])

    _write_csv(out / "smiles.csv", ["beta_12", "K", "iv", "price", "stderr"],
               smile_rows)
    _write_csv(out / "vix.csv", ["beta_12", "future", "stderr"], vix_rows)
    _write_csv(out / "density.csv", ["beta_12", "center", "density"], density_rows)
    (out / "plots.gp").write_text(_PLOT_SCRIPT)
    inputs = [settings[k] for k in ("params", "init") if settings.get(k)]
    return inputs, ["smiles.csv", "vix.csv", "density.csv", "plots.gp"], EXIT_OK


# ------------------------------------------------------------- arg plumbing

_RUNNERS = {
    "simulate": run_simulate,
    "build-dataset": run_build_dataset,
    "train-surrogate": run_train_surrogate,
    "eval-surrogate": run_eval_surrogate,
    "price": run_price,
    "synth-market": run_synth_market,
    "calibrate-spx": run_calibrate_spx,
    "calibrate-joint": run_calibrate_joint,
    "stability": run_stability,
    "figure1": run_figure1,
}

_DEFAULTS: dict[str, dict] = {
    "simulate": {
        "params": None, "init": None, "horizon": 1.0, "dt": 1 / 252,
        "n_paths": 10_000, "seed": 0, "spot": 1.0, "record": "",
        "rates": None, "divs": None, "csv": False, "threads": 0,
    },
    "build-dataset": {
        "bounds": None, "n_configs": 100, "m_obs": 25, "n_inner": 500,
        "dt": 1 / 2520, "inner_dt": 1 / 2520, "delta": 30 / 365,
        "horizon": 1.0, "seed": 0, "csv": False,
    },
    "train-surrogate": {
        "dataset": None, "n_train": 0, "n_val": 0, "lr": 4.2e-5,
        "batch_size": 1024, "max_epochs": 500, "patience": 20, "seed": 0,
        "m_obs": 25, "n_inner": 500,
        "hidden": "448,64,224,416,128",
        "activations": "tanh,tanh,relu,tanh,relu",
    },
    "eval-surrogate": {
        "surrogate": None, "n_configs": 20, "m_obs": 25, "n_inner": 500,
        "dt": 1 / 2520, "inner_dt": 1 / 2520, "delta": 30 / 365,
        "horizon": 1.0, "seed": 1,
    },
    "price": {
        "params": None, "init": None, "grids": None, "surrogate": None,
        "n_paths": 100_000, "dt": 1 / 504, "seed": 0, "spot": 1.0,
        "rates": None, "divs": None, "threads": 0,
    },
    "synth-market": {
        "params": None, "init": None, "grids": None, "surrogate": None,
        "n_paths": 100_000, "dt": 1 / 504, "seed": 0, "spot": 1.0,
        "rates": None, "divs": None, "as_of": "synthetic", "threads": 0,
    },
    "calibrate-spx": {
        "market": None, "spot": 1.0, "rates": None, "divs": None,
        "bounds": None, "budget": 300, "restarts": 3, "n_paths": 200_000,
        "dt": 1 / 504, "seed": 0, "optimizer": "trust-region", "x0": None,
        "returns": None, "returns_kind": "simple", "w_spx": 10.0, "threads": 0,
    },
    "calibrate-joint": {
        "market": None, "vix_market": None, "surrogate": None, "spot": 1.0,
        "rates": None, "divs": None, "bounds": None, "budget": 300,
        "restarts": 3, "n_paths": 200_000, "dt": 1 / 504, "seed": 0,
        "optimizer": "trust-region", "x0": None, "returns": None,
        "returns_kind": "simple", "w_spx": 10.0, "w_vix": 5.0,
        "w_future": 20.0, "threads": 0,
    },
    "stability": {
        "markets": [], "spot": 1.0, "rates": None, "divs": None,
        "bounds": None, "budget": 300, "restarts": 3, "n_paths": 200_000,
        "dt": 1 / 504, "seed": 0, "optimizer": "trust-region", "x0": None,
        "warm_start": True, "w_spx": 10.0, "threads": 0,
    },
    "figure1": {
        "params": None, "init": None, "beta12": "0,0.05,0.1,0.15",
        "days": 16, "moneyness": "0.85:1.15:13", "n_paths": 100_000,
        "dt": 1 / 2520, "n_outer": 500, "n_inner": 500, "inner_dt": 1 / 2520,
        "nested_divergence": "drop", "sim_divergence": "absorb",
        "bins": 60, "seed": 0, "threads": 0,
    },
}

_REQUIRED = {
    "simulate": ("params",),
    "build-dataset": (),
    "train-surrogate": ("dataset",),
    "eval-surrogate": ("surrogate",),
    "price": ("params", "grids"),
    "synth-market": ("params", "grids"),
    "calibrate-spx": ("market",),
    "calibrate-joint": ("market", "vix_market", "surrogate"),
    "stability": ("markets",),
    "figure1": (),
}


def _add_flags(sub: argparse.ArgumentParser, name: str) -> None:
    for key, default in _DEFAULTS[name].items():
        flag = "--" + key.replace("_", "-")
        if isinstance(default, bool):
            if default:
                sub.add_argument("--no-" + key.replace("_", "-"), dest=key,
                                 action="store_false", default=argparse.SUPPRESS)
            else:
                sub.add_argument(flag, dest=key, action="store_true",
                                 default=argparse.SUPPRESS)
        elif isinstance(default, list):
            sub.add_argument("--market" if key == "markets" else flag,
                             dest=key, action="append", default=argparse.SUPPRESS,
                             metavar="DATE=PATH")
        elif isinstance(default, float):
            sub.add_argument(flag, dest=key, type=float, default=argparse.SUPPRESS)
        elif isinstance(default, int):
            sub.add_argument(flag, dest=key, type=int, default=argparse.SUPPRESS)
        else:
            sub.add_argument(flag, dest=key, type=str, default=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pdv4",
        description="Pricing and calibration workflows for the "
                    "4-factor path-dependent volatility model.",
    )
    subs = parser.add_subparsers(dest="subcommand", required=True)
    for name in _RUNNERS:
        sub = subs.add_parser(name)
        sub.add_argument("--out", type=str, default=None,
                         help="output directory (default: $PDV4_OUT or ./out)")
        sub.add_argument("--config", type=str, default=None,
                         help="JSON file of settings; flags override")
        _add_flags(sub, name)
    rerun = subs.add_parser("rerun")
    rerun.add_argument("--manifest", type=str, required=True)
    rerun.add_argument("--out", type=str, default=None)
    return parser


def _resolve_settings(name: str, args: argparse.Namespace) -> dict:
    settings = dict(_DEFAULTS[name])
    if args.config:
        overrides = _read_json(args.config)
        if not isinstance(overrides, dict):
            raise InputError(f"{args.config}: config must be a JSON object")
        unknown = set(overrides) - set(settings)
        if unknown:
            raise InputError(f"{args.config}: unknown settings {sorted(unknown)}")
        settings.update(overrides)
    for key in _DEFAULTS[name]:
        if hasattr(args, key):
            settings[key] = getattr(args, key)
    missing = [k for k in _REQUIRED[name] if not settings.get(k)]
    if missing:
        raise InputError(f"{name}: missing required settings {missing}")
    return settings


def _out_dir(arg: str | None) -> Path:
    out = Path(arg or os.environ.get("PDV4_OUT") or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _execute(name: str, settings: dict, out: Path) -> int:
    tic = time.perf_counter()
    inputs, outputs, code = _RUNNERS[name](settings, out)
    manifest = {
        "format": _MANIFEST_FORMAT,
        "version": _MANIFEST_VERSION,
        "subcommand": name,
        "settings": settings,
        "inputs": {path: _sha256(path) for path in sorted(set(inputs))},
        "outputs": {fname: _sha256(str(out / fname)) for fname in sorted(outputs)},
        "versions": {
            "pdv4": __version__,
            "python": ".".join(map(str, sys.version_info[:3])),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    _write_json(manifest, out / "manifest.json")
    print(f"{name}: wrote {len(outputs)} files to {out} "
          f"in {time.perf_counter() - tic:.1f}s", file=sys.stderr)
    return code


def _run_rerun(args: argparse.Namespace) -> int:
    manifest = _read_json(args.manifest)
    if not isinstance(manifest, dict) or manifest.get("format") != _MANIFEST_FORMAT:
        raise InputError(f"{args.manifest}: not a pdv4 manifest")
    if manifest.get("version") != _MANIFEST_VERSION:
        raise InputError(f"{args.manifest}: unsupported manifest version")
    name = manifest.get("subcommand")
    if name not in _RUNNERS:
        raise InputError(f"{args.manifest}: unknown subcommand {name!r}")
    for path, digest in manifest.get("inputs", {}).items():
        if not os.path.exists(path):
            raise InputError(f"rerun: input {path} is missing")
        if _sha256(path) != digest:
            raise InputError(f"rerun: input {path} changed since the recorded run")
    settings = dict(_DEFAULTS[name])
    settings.update(manifest.get("settings", {}))
    return _execute(name, settings, _out_dir(args.out))


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.subcommand == "rerun":
            return _run_rerun(args)
        settings = _resolve_settings(args.subcommand, args)
        return _execute(args.subcommand, settings, _out_dir(args.out))
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except Pdv4Error as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
