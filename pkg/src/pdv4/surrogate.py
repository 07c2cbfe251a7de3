"""Volatility-index surrogate: dataset generation, training, evaluation.

The network regresses nested-MC VIX values on (parameters, factor state).
Observation states come from one simulated path per parameter configuration,
recorded after a burn-in of one mean-reversion time, so they concentrate
where the factors actually live.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, replace

import numpy as np

from .errors import InputError, LoadError, NumericalError, SimulationDiverged
from .mc import PanelConfig, vix_panel_arrays
from .model import (
    PARAM_NAMES,
    VOL_OF_VOL_CAP,
    FactorState,
    ModelParams,
    ParamBounds,
)
from .nn import (
    Adam,
    MlpSpec,
    check_finite,
    default_mlp_spec,
    forward,
    init_layers,
    rmse_and_gradients,
)
from .rng import master_stream, split
from .stats import Histogram, histogram

FACTOR_NAMES = ("R10", "R11", "R20", "R21")

_SURROGATE_FORMAT = "pdv4-surrogate"
_SURROGATE_VERSION = 1
_MAX_REJECTION_ROUNDS = 1000


# ------------------------------------------------------------- sampling

def sample_param_configs(bounds: ParamBounds, n: int, seed: int) -> list[ModelParams]:
    """n independent uniform draws from the box, rejection-filtered.

    Kept draws satisfy strict mean-reversion ordering (lambda_n0 >
    lambda_n1) and the vol-of-vol cap |beta_1| * lambda_bar_1 <= 10.
    """
    if n < 1:
        raise InputError("sample_param_configs: n must be positive")
    lo, hi = bounds.lo, bounds.hi
    base = master_stream(seed)
    out: list[ModelParams] = []
    for round_idx in range(_MAX_REJECTION_ROUNDS):
        need = n - len(out)
        if need == 0:
            break
        u = split(base, round_idx).uniforms(need * 10).reshape(need, 10)
        draws = lo + u * (hi - lo)
        for row in draws:
            vals = dict(zip(PARAM_NAMES, (float(v) for v in row)))
            if vals["lambda_10"] <= vals["lambda_11"]:
                continue
            if vals["lambda_20"] <= vals["lambda_21"]:
                continue
            candidate = ModelParams(**vals)
            if not candidate.is_admissible(VOL_OF_VOL_CAP):
                continue
            out.append(candidate)
            if len(out) == n:
                break
    if len(out) < n:
        raise InputError(
            "sample_param_configs: rejection rate too high for these bounds "
            f"({len(out)}/{n} accepted after {_MAX_REJECTION_ROUNDS} rounds)"
        )
    return out


# ------------------------------------------------------------- dataset

@dataclass(frozen=True)
class VixDataset:
    """Rows of (theta, factor state, nested-MC VIX target).

    Rows of one configuration are contiguous and share identical theta
    columns; config_id tracks the grouping.  box records the sampling box
    the configurations came from (surrogates snapshot it as their coverage).
    """

    theta: np.ndarray      # (n_rows, 10)
    factors: np.ndarray    # (n_rows, 4)
    target: np.ndarray     # (n_rows,)
    config_id: np.ndarray  # (n_rows,) int, nondecreasing
    box: ParamBounds
    n_dropped_configs: int = 0

    def __post_init__(self):
        n = self.target.size
        if self.theta.shape != (n, 10) or self.factors.shape != (n, 4):
            raise InputError("VixDataset: column block shapes disagree")
        if self.config_id.shape != (n,):
            raise InputError("VixDataset: config_id shape mismatch")
        if n == 0:
            raise InputError("VixDataset: empty dataset")
        if np.any(np.diff(self.config_id) < 0):
            raise InputError("VixDataset: rows must be grouped by config")

    @property
    def n_rows(self) -> int:
        return self.target.size

    @property
    def n_configs(self) -> int:
        return int(np.unique(self.config_id).size)

    def inputs(self) -> np.ndarray:
        return np.hstack([self.theta, self.factors])

    def to_csv(self, path: str) -> None:
        """Interchange dump: exactly 15 columns (10 theta, 4 factors, target)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(list(PARAM_NAMES) + list(FACTOR_NAMES) + ["vix"])
            for i in range(self.n_rows):
                w.writerow([float(v) for v in self.theta[i]]
                           + [float(v) for v in self.factors[i]]
                           + [float(self.target[i])])

    def to_npz(self, path: str) -> None:
        np.savez(
            path, theta=self.theta, factors=self.factors, target=self.target,
            config_id=self.config_id, box_lo=self.box.lo, box_hi=self.box.hi,
            n_dropped_configs=self.n_dropped_configs,
        )

    @classmethod
    def from_npz(cls, path: str) -> "VixDataset":
        try:
            data = np.load(path)
            return cls(
                theta=data["theta"], factors=data["factors"],
                target=data["target"], config_id=data["config_id"],
                box=ParamBounds(lo=data["box_lo"], hi=data["box_hi"]),
                n_dropped_configs=int(data["n_dropped_configs"]),
            )
        except (KeyError, ValueError, OSError, EOFError) as exc:
            raise LoadError(f"dataset load failed: {exc}") from exc

    @classmethod
    def from_csv(cls, path: str, box: ParamBounds) -> "VixDataset":
        """Rebuild from the 15-column dump; configs from consecutive equal thetas."""
        rows = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            want = list(PARAM_NAMES) + list(FACTOR_NAMES) + ["vix"]
            if header != want:
                raise LoadError(f"dataset csv: bad header {header!r}")
            for line_no, rec in enumerate(reader, start=2):
                if len(rec) != 15:
                    raise LoadError(f"dataset csv line {line_no}: need 15 fields")
                try:
                    rows.append([float(v) for v in rec])
                except ValueError as exc:
                    raise LoadError(f"dataset csv line {line_no}: {exc}") from exc
        if not rows:
            raise LoadError("dataset csv: no data rows")
        arr = np.array(rows)
        theta = arr[:, :10]
        ids = np.zeros(arr.shape[0], dtype=int)
        for i in range(1, arr.shape[0]):
            same = np.array_equal(theta[i], theta[i - 1])
            ids[i] = ids[i - 1] + (0 if same else 1)
        return cls(theta=theta, factors=arr[:, 10:14], target=arr[:, 14],
                   config_id=ids, box=box)


def build_dataset(
    configs: list[ModelParams],
    panel_cfg: PanelConfig,
    seed: int,
    box: ParamBounds | None = None,
    init: FactorState = FactorState(0.0, 0.0, 0.0, 0.0),
) -> VixDataset:
    """One observation panel per configuration, diverged configs dropped.

    Per-config seeds are split from the master seed, so the dataset is
    reproducible and configs can be regenerated independently.
    """
    if not configs:
        raise InputError("build_dataset: no configurations")
    base = master_stream(seed)
    thetas, factors, targets, ids = [], [], [], []
    dropped = 0
    kept = 0
    for i, params in enumerate(configs):
        cfg_i = replace(panel_cfg, seed=split(base, i).key)
        try:
            cols = vix_panel_arrays(params, cfg_i, init)
        except SimulationDiverged:
            dropped += 1
            continue
        m = cols["t"].size
        thetas.append(np.tile(params.to_array(), (m, 1)))
        factors.append(np.column_stack([cols["r10"], cols["r11"],
                                        cols["r20"], cols["r21"]]))
        targets.append(cols["vix"])
        ids.append(np.full(m, kept, dtype=int))
        kept += 1
    if kept == 0:
        raise NumericalError("build_dataset: every configuration diverged")
    if box is None:
        theta_all = np.vstack(thetas)
        box = ParamBounds(lo=theta_all.min(axis=0), hi=theta_all.max(axis=0))
    return VixDataset(
        theta=np.vstack(thetas), factors=np.vstack(factors),
        target=np.concatenate(targets), config_id=np.concatenate(ids),
        box=box, n_dropped_configs=dropped,
    )


# ------------------------------------------------------------- surrogate

@dataclass(frozen=True)
class Surrogate:
    """Trained network plus the standardization and coverage it was fit with.

    predict_batch standardizes raw (theta, state) inputs with the training
    statistics; covers() reports whether parameters lie inside the training
    box, the only region where predictions are trustworthy.
    """

    spec: MlpSpec
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    input_mean: np.ndarray
    input_std: np.ndarray
    box: ParamBounds

    def __post_init__(self):
        if len(self.weights) != self.spec.n_layers or len(self.biases) != self.spec.n_layers:
            raise InputError("Surrogate: layer count mismatch")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            want = (self.spec.sizes[i], self.spec.sizes[i + 1])
            if w.shape != want or b.shape != (want[1],):
                raise InputError(f"Surrogate: layer {i} shape mismatch")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise InputError("Surrogate: weights must be finite")
        if self.input_mean.shape != (14,) or self.input_std.shape != (14,):
            raise InputError("Surrogate: standardization vectors must have width 14")
        if np.any(self.input_std <= 0):
            raise InputError("Surrogate: standardization stds must be positive")

    def covers(self, params: ModelParams) -> bool:
        return self.box.contains(params)

    def predict_inputs(self, x: np.ndarray) -> np.ndarray:
        """Forward pass on raw (n, 14) rows of (theta, factors)."""
        xs = (np.asarray(x, dtype=float) - self.input_mean) / self.input_std
        return forward(self.spec, list(self.weights), list(self.biases), xs)

    def predict_batch(self, params: ModelParams, r10, r11, r20, r21) -> np.ndarray:
        r10 = np.atleast_1d(np.asarray(r10, dtype=float))
        r11 = np.atleast_1d(np.asarray(r11, dtype=float))
        r20 = np.atleast_1d(np.asarray(r20, dtype=float))
        r21 = np.atleast_1d(np.asarray(r21, dtype=float))
        x = np.empty((r10.size, 14))
        x[:, :10] = params.to_array()
        x[:, 10] = r10
        x[:, 11] = r11
        x[:, 12] = r20
        x[:, 13] = r21
        return self.predict_inputs(x)

    def predict(self, params: ModelParams, state: FactorState) -> float:
        out = self.predict_batch(params, state.r_10, state.r_11, state.r_20, state.r_21)
        return float(out[0])

    def save(self, path: str) -> None:
        header = json.dumps({
            "format": _SURROGATE_FORMAT,
            "version": _SURROGATE_VERSION,
            "sizes": list(self.spec.sizes),
            "activations": list(self.spec.activations),
        })
        blocks = {"header": np.array(header)}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            blocks[f"w{i}"] = w
            blocks[f"b{i}"] = b
        np.savez(
            path, input_mean=self.input_mean, input_std=self.input_std,
            box_lo=self.box.lo, box_hi=self.box.hi, **blocks,
        )

    @classmethod
    def load(cls, path: str) -> "Surrogate":
        try:
            data = np.load(path)
            header = json.loads(str(data["header"]))
        except Exception as exc:
            raise LoadError(f"surrogate load failed: {exc}") from exc
        if header.get("format") != _SURROGATE_FORMAT:
            raise LoadError("surrogate load: unrecognized container format")
        if header.get("version") != _SURROGATE_VERSION:
            raise LoadError(f"surrogate load: unsupported version {header.get('version')!r}")
        try:
            spec = MlpSpec(sizes=tuple(header["sizes"]),
                           activations=tuple(header["activations"]))
            weights = tuple(data[f"w{i}"] for i in range(spec.n_layers))
            biases = tuple(data[f"b{i}"] for i in range(spec.n_layers))
            return cls(
                spec=spec, weights=weights, biases=biases,
                input_mean=data["input_mean"], input_std=data["input_std"],
                box=ParamBounds(lo=data["box_lo"], hi=data["box_hi"]),
            )
        except (KeyError, ValueError, InputError) as exc:
            raise LoadError(f"surrogate load: invalid container: {exc}") from exc


# ------------------------------------------------------------- training

@dataclass(frozen=True)
class TrainConfig:
    """Training-run request: row-budget split, architecture scale, Adam knobs.

    m_obs and n_inner document the dataset geometry this run expects; they
    drive dataset generation in the pipeline wrappers.
    """

    n_train: int
    n_val: int
    m_obs: int = 200
    n_inner: int = 10_000
    learning_rate: float = 4.2e-5
    batch_size: int = 1024
    max_epochs: int = 500
    patience: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.n_train < 1 or self.n_val < 1:
            raise InputError("TrainConfig: n_train and n_val must be positive")
        if not self.learning_rate > 0:
            raise InputError("TrainConfig: learning rate must be positive")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 0:
            raise InputError("TrainConfig: bad batch/epoch/patience settings")
        if self.m_obs < 1 or self.n_inner < 1:
            raise InputError("TrainConfig: m_obs and n_inner must be positive")


def _split_by_config(dataset: VixDataset, n_train: int, n_val: int):
    """Assign whole configs to train until the row budget is met, rest to val.

    Keeping a config's rows on one side prevents leakage: its panel shares
    one outer path, so its rows are strongly dependent.
    """
    if n_train + n_val > dataset.n_rows:
        raise InputError(
            f"train: split {n_train}+{n_val} exceeds dataset rows {dataset.n_rows}"
        )
    ids = dataset.config_id
    boundaries = np.nonzero(np.diff(ids))[0] + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [ids.size]))
    train_rows: list[np.ndarray] = []
    val_rows: list[np.ndarray] = []
    count = 0
    for s, e in zip(starts, ends):
        if count < n_train:
            train_rows.append(np.arange(s, e))
            count += e - s
        else:
            val_rows.append(np.arange(s, e))
    if not val_rows:
        raise InputError("train: no configs left for validation; lower n_train")
    return np.concatenate(train_rows), np.concatenate(val_rows)


def _rmse(spec, weights, biases, x, y) -> float:
    resid = forward(spec, weights, biases, x) - y
    return float(np.sqrt(np.mean(resid * resid)))


def train(
    dataset: VixDataset,
    cfg: TrainConfig,
    spec: MlpSpec | None = None,
) -> tuple[Surrogate, list[dict]]:
    """Adam on batch RMSE with early stopping on validation RMSE.

    Standardization is fitted on the training split only.  Returns the
    weights of the best validation epoch and a per-epoch report suitable
    for JSON-lines dumping.
    """
    spec = spec or default_mlp_spec()
    idx_train, idx_val = _split_by_config(dataset, cfg.n_train, cfg.n_val)
    x_all = dataset.inputs()
    y_all = dataset.target

    x_train, y_train = x_all[idx_train], y_all[idx_train]
    x_val, y_val = x_all[idx_val], y_all[idx_val]

    mean = x_train.mean(axis=0)
    std = x_train.std(axis=0)
    std = np.where(std > 0, std, 1.0)  # constant columns carry no signal
    xs_train = (x_train - mean) / std
    xs_val = (x_val - mean) / std

    base = master_stream(cfg.seed)
    weights, biases = init_layers(spec, split(base, 0))
    adam = Adam(weights, biases, lr=cfg.learning_rate)

    best_val = np.inf
    best_weights = [w.copy() for w in weights]
    best_biases = [b.copy() for b in biases]
    bad_epochs = 0
    report: list[dict] = []
    n_rows = xs_train.shape[0]

    for epoch in range(cfg.max_epochs):
        tic = time.perf_counter()
        perm = split(base, 1 + epoch).generator().permutation(n_rows)
        batch_losses = []
        for start in range(0, n_rows, cfg.batch_size):
            rows = perm[start:start + cfg.batch_size]
            loss, gw, gb = rmse_and_gradients(
                spec, weights, biases, xs_train[rows], y_train[rows])
            if not np.isfinite(loss):
                raise NumericalError(
                    f"train: non-finite loss at epoch {epoch}, batch start {start}"
                )
            adam.step(weights, biases, gw, gb)
            batch_losses.append(loss)
        check_finite(weights, biases, f"train: epoch {epoch}")

        train_rmse = _rmse(spec, weights, biases, xs_train, y_train)
        val_rmse = _rmse(spec, weights, biases, xs_val, y_val)
        report.append({
            "epoch": epoch,
            "train_rmse": train_rmse,
            "val_rmse": val_rmse,
            "mean_batch_rmse": float(np.mean(batch_losses)),
            "seconds": time.perf_counter() - tic,
        })
        if val_rmse < best_val - 1e-9:
            best_val = val_rmse
            best_weights = [w.copy() for w in weights]
            best_biases = [b.copy() for b in biases]
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > cfg.patience:
                break

    surrogate = Surrogate(
        spec=spec, weights=tuple(best_weights), biases=tuple(best_biases),
        input_mean=mean, input_std=std, box=dataset.box,
    )
    return surrogate, report


def training_report_to_jsonl(report: list[dict], path: str) -> None:
    with open(path, "w") as fh:
        for row in report:
            fh.write(json.dumps(row) + "\n")


# ------------------------------------------------------------- evaluation

@dataclass(frozen=True)
class EvalReport:
    """Per-config mean absolute VIX error (points) against fresh nested MC."""

    per_config_mae: np.ndarray
    mean_mae: float
    max_mae: float
    error_histogram: Histogram
    n_dropped_configs: int


def evaluate_surrogate(
    surrogate: Surrogate,
    configs: list[ModelParams],
    panel_cfg: PanelConfig,
    seed: int,
    init: FactorState = FactorState(0.0, 0.0, 0.0, 0.0),
) -> EvalReport:
    """Compare surrogate output to freshly simulated nested-MC VIX panels."""
    if not configs:
        raise InputError("evaluate_surrogate: no configurations")
    base = master_stream(seed)
    maes = []
    dropped = 0
    for i, params in enumerate(configs):
        cfg_i = replace(panel_cfg, seed=split(base, i).key)
        try:
            cols = vix_panel_arrays(params, cfg_i, init)
        except SimulationDiverged:
            dropped += 1
            continue
        pred = surrogate.predict_batch(
            params, cols["r10"], cols["r11"], cols["r20"], cols["r21"])
        maes.append(float(np.mean(np.abs(pred - cols["vix"]))))
    if not maes:
        raise NumericalError("evaluate_surrogate: every configuration diverged")
    per_config = np.array(maes)
    return EvalReport(
        per_config_mae=per_config,
        mean_mae=float(per_config.mean()),
        max_mae=float(per_config.max()),
        error_histogram=histogram(per_config, bins=20),
        n_dropped_configs=dropped,
    )
