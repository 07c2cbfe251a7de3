"""Path simulation and nested Monte Carlo VIX estimation.

Paths are partitioned into fixed-size blocks, each driven by its own stream
split from the master seed.  The block layout depends only on the path count,
never on the thread count, so results are bit-identical for any number of
worker threads.  Antithetic pairs occupy adjacent path slots (2i, 2i+1) and
never straddle a block boundary.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .curves import PiecewiseConstantCurve
from .errors import InputError, SimulationDiverged
from .model import FactorState, ModelParams, sigma_values
from .rng import RngStream, master_stream, split

_DIVERGENCE_LIMIT = 1.0e6
# annualized vol of 100000%: far beyond any sane state, yet small enough
# that one more step cannot overflow a float; absorb mode kills paths here
_SIGMA_CAP = 1.0e3
_GRID_ATOL = 1e-9
# refuse full-grid recording that would not fit comfortably in memory
_RECORD_BYTES_LIMIT = 4_000_000_000


def _grid_node(t: float, dt: float, n_steps: int, what: str) -> int:
    k = int(round(t / dt))
    if k < 0 or k > n_steps or abs(k * dt - t) > _GRID_ATOL * max(1.0, abs(t)):
        raise InputError(f"{what} t={t!r} is not a node of the dt={dt!r} grid")
    return k


@dataclass(frozen=True)
class SimConfig:
    """Simulation request: grid, path budget, seed, curves, recording.

    `record_times` limits state snapshots to the listed grid times; None
    records every node, which is only feasible for short grids or few paths.

    on_divergence picks the policy for paths whose volatility feedback runs
    away (trend factor past the 1e6 guard, volatility past 1000, or a spot
    that under- or overflows): "raise" aborts with the offending path index,
    "absorb" freezes the path at spot 0 with zeroed factors, so call payoffs
    stay well defined (a runaway-volatility path drives its own price to
    zero through the -sigma^2/2 drift; absorption takes that limit).  Dead
    paths are counted in the bundle and marked by s == 0, sigma == 0.  Runs
    that never trip a guard are bitwise identical under both policies.
    """

    dt: float
    n_paths: int
    horizon: float
    seed: int
    antithetic: bool = True
    rate_curve: PiecewiseConstantCurve | None = None
    div_curve: PiecewiseConstantCurve | None = None
    record_times: tuple[float, ...] | None = None
    block_size: int = 8192
    threads: int = 1
    on_divergence: str = "raise"

    def __post_init__(self):
        if not self.dt > 0:
            raise InputError("SimConfig: dt must be positive")
        if self.horizon < self.dt:
            raise InputError("SimConfig: horizon must be at least one step")
        if self.n_paths < 2:
            raise InputError("SimConfig: need at least two paths")
        if self.antithetic and self.n_paths % 2 != 0:
            raise InputError("SimConfig: antithetic sampling needs an even path count")
        if self.block_size < 2:
            raise InputError("SimConfig: block_size must be at least 2")
        if self.threads < 1:
            raise InputError("SimConfig: threads must be at least 1")
        if self.on_divergence not in ("raise", "absorb"):
            raise InputError("SimConfig: on_divergence must be 'raise' or 'absorb'")
        # the horizon must be a whole number of steps: no ragged final step
        n = round(self.horizon / self.dt)
        if n < 1 or abs(n * self.dt - self.horizon) > _GRID_ATOL * max(1.0, self.horizon):
            raise InputError("SimConfig: horizon must be an integer multiple of dt")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass(frozen=True)
class PathBundle:
    """Recorded path states on a strictly increasing time grid.

    With full-grid recording the grid has uniform spacing dt.  Snapshot
    recording (an explicit `record_times`) keeps only the listed nodes; the
    spacing requirement is waived there, positivity and factor invariants
    are not.
    """

    t: np.ndarray        # (n_rec,)
    s: np.ndarray        # (n_rec, n_paths)
    r10: np.ndarray
    r11: np.ndarray
    r20: np.ndarray
    r21: np.ndarray
    sigma: np.ndarray
    dt: float
    antithetic: bool
    n_clamped: int
    full_grid: bool
    n_absorbed: int = 0

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        if t.ndim != 1 or (t.size > 1 and np.any(np.diff(t) <= 0)):
            raise InputError("PathBundle: time grid must be strictly increasing")
        if self.full_grid and t.size > 1:
            if not np.allclose(np.diff(t), self.dt, rtol=0, atol=_GRID_ATOL):
                raise InputError("PathBundle: full grid must have uniform spacing dt")
        for name in ("s", "r10", "r11", "r20", "r21", "sigma"):
            arr = getattr(self, name)
            if arr.shape != (t.size, self.n_paths):
                raise InputError(f"PathBundle: {name} shape mismatch")
        if self.n_absorbed == 0:
            if np.any(self.s <= 0):
                raise InputError("PathBundle: prices must stay positive")
        else:
            # absorbed paths are frozen at exactly zero; nothing may go
            # negative or non-finite under either policy
            if np.any(self.s < 0) or not np.all(np.isfinite(self.s)):
                raise InputError("PathBundle: prices must stay finite and nonnegative")
        if np.any(self.r20 < 0) or np.any(self.r21 < 0):
            raise InputError("PathBundle: variance factors must stay nonnegative")

    @property
    def n_paths(self) -> int:
        return self.s.shape[1]

    def _row_of(self, t: float) -> int:
        hits = np.nonzero(np.abs(self.t - t) <= _GRID_ATOL * max(1.0, abs(t)))[0]
        if hits.size == 0:
            raise InputError(f"PathBundle: t={t!r} was not recorded")
        return int(hits[0])

    def prices_at(self, t: float) -> np.ndarray:
        return self.s[self._row_of(t)]

    def factors_at(self, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        i = self._row_of(t)
        return self.r10[i], self.r11[i], self.r20[i], self.r21[i]

    def to_csv(self, path: str) -> None:
        """Long-format dump, one row per (path, node)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "S", "R10", "R11", "R20", "R21", "sigma", "path_id"])
            for p in range(self.n_paths):
                for i in range(self.t.size):
                    w.writerow([
                        float(self.t[i]), float(self.s[i, p]),
                        float(self.r10[i, p]), float(self.r11[i, p]),
                        float(self.r20[i, p]), float(self.r21[i, p]),
                        float(self.sigma[i, p]), p,
                    ])

    def to_npz(self, path: str) -> None:
        np.savez(
            path,
            t=self.t, s=self.s, r10=self.r10, r11=self.r11, r20=self.r20,
            r21=self.r21, sigma=self.sigma, dt=self.dt,
            antithetic=self.antithetic, n_clamped=self.n_clamped,
            full_grid=self.full_grid, n_absorbed=self.n_absorbed,
        )


def _path_blocks(n_paths: int, block_size: int, antithetic: bool) -> list[tuple[int, int]]:
    # fixed partition: depends on n_paths/block_size only, never on threads
    step = block_size - (block_size % 2) if antithetic else block_size
    step = max(2, step)
    return [(lo, min(lo + step, n_paths)) for lo in range(0, n_paths, step)]


def _fill_antithetic(z: np.ndarray, raw: np.ndarray) -> None:
    z[0::2] = raw
    np.negative(raw, out=z[1::2])


def _locate_divergence(r10, r11, lo: int, t: float):
    worst = np.maximum(np.abs(r10), np.abs(r11))
    idx = int(np.argmax(worst))
    raise SimulationDiverged(lo + idx, t, float(worst[idx]))


def _simulate_block(
    params: ModelParams,
    init: FactorState,
    s0: float,
    n_steps: int,
    dt: float,
    drift: np.ndarray | None,
    rec_rows: dict[int, int],
    stream: RngStream,
    lo: int,
    hi: int,
    antithetic: bool,
    absorb: bool,
    out: dict[str, np.ndarray],
) -> tuple[int, int]:
    nb = hi - lo
    lam10, lam11 = params.lambda_10, params.lambda_11
    lam20dt, lam21dt = params.lambda_20 * dt, params.lambda_21 * dt
    sqdt = np.sqrt(dt)
    half_dt = 0.5 * dt

    s = np.full(nb, float(s0))
    r10 = np.full(nb, init.r_10)
    r11 = np.full(nb, init.r_11)
    r20 = np.full(nb, init.r_20)
    r21 = np.full(nb, init.r_21)
    z = np.empty(nb)
    gen = stream.generator()
    n_draw = nb // 2 if antithetic else nb
    clamped = 0
    # dead-path mask, allocated on the first absorbed path; the draw count
    # per step never changes, so clean paths see identical numbers whether
    # or not a neighbour in the block died
    dead: np.ndarray | None = None

    def record(row: int, sig: np.ndarray) -> None:
        out["s"][row, lo:hi] = s
        out["r10"][row, lo:hi] = r10
        out["r11"][row, lo:hi] = r11
        out["r20"][row, lo:hi] = r20
        out["r21"][row, lo:hi] = r21
        out["sigma"][row, lo:hi] = sig

    def kill(bad: np.ndarray) -> None:
        nonlocal dead
        s[bad] = 0.0
        r10[bad] = 0.0
        r11[bad] = 0.0
        r20[bad] = 0.0
        r21[bad] = 0.0
        dead = bad if dead is None else dead | bad

    for k in range(n_steps):
        sig = sigma_values(params, r10, r11, r20, r21)
        if dead is not None:
            sig[dead] = 0.0
        if absorb and float(sig.max()) > _SIGMA_CAP:
            # catch runaways while every quantity is still comfortably
            # finite: nothing downstream of this line can overflow
            kill(sig > _SIGMA_CAP)
            sig[dead] = 0.0
        row = rec_rows.get(k)
        if row is not None:
            record(row, sig)

        raw = gen.standard_normal(n_draw)
        if antithetic:
            _fill_antithetic(z, raw)
        else:
            z = raw
        sigz = (sig * sqdt) * z
        sig2 = sig * sig

        expo = sigz - half_dt * sig2
        if drift is not None:
            expo += drift[k]
        s *= np.exp(expo, out=expo)
        # exploding sigma under- or overflows the price before the factors
        # reach the 1e6 guard; treat a collapsed spot as the same divergence
        if not float(s.min()) > 0.0 or not np.isfinite(float(s.max())):
            bad = ~(np.isfinite(s) & (s > 0.0))
            if dead is not None:
                bad &= ~dead
            if bad.any():
                if not absorb:
                    idx = int(np.argmax(bad))
                    raise SimulationDiverged(
                        lo + idx, (k + 1) * dt, float(s[idx]),
                        detail="spot collapsed to {value:.3g}",
                    )
                kill(bad)
                # the factor updates below reuse sigz/sig2 from before the
                # kill; zero them so the dead paths stay frozen
                sigz[bad] = 0.0
                sig2[bad] = 0.0

        r10 *= 1.0 - lam10 * dt
        r10 += lam10 * sigz
        r11 *= 1.0 - lam11 * dt
        r11 += lam11 * sigz
        # incremental form keeps sig2 == r2 a bit-exact fixed point
        r20 += lam20dt * (sig2 - r20)
        r21 += lam21dt * (sig2 - r21)

        if float(r20.min()) < 0.0:
            clamped += int(np.count_nonzero(r20 < 0))
            np.maximum(r20, 0.0, out=r20)
        if float(r21.min()) < 0.0:
            clamped += int(np.count_nonzero(r21 < 0))
            np.maximum(r21, 0.0, out=r21)
        if max(float(np.abs(r10).max()), float(np.abs(r11).max())) > _DIVERGENCE_LIMIT:
            if not absorb:
                _locate_divergence(r10, r11, lo, (k + 1) * dt)
            kill((np.abs(r10) > _DIVERGENCE_LIMIT) | (np.abs(r11) > _DIVERGENCE_LIMIT))

    row = rec_rows.get(n_steps)
    if row is not None:
        sig = sigma_values(params, r10, r11, r20, r21)
        if dead is not None:
            sig[dead] = 0.0
        record(row, sig)
    return clamped, 0 if dead is None else int(np.count_nonzero(dead))


def simulate(params: ModelParams, init: FactorState, s0: float, cfg: SimConfig) -> PathBundle:
    """Euler paths of (S, R): log-Euler price, explicit-Euler factors.

    The price uses the start-of-step sigma in both drift and diffusion, so
    positivity is structural.  R2 factors are clamped at zero (counted); R1
    factors beyond 1e6 abort the run with the offending path index, or
    freeze the path at spot 0 under cfg.on_divergence == "absorb".
    """
    if not s0 > 0:
        raise InputError("simulate: s0 must be positive")
    n_steps = cfg.n_steps
    if cfg.record_times is None:
        nodes = list(range(n_steps + 1))
        full_grid = True
    else:
        if len(cfg.record_times) == 0:
            raise InputError("simulate: record_times must not be empty")
        nodes = [_grid_node(t, cfg.dt, n_steps, "record time") for t in cfg.record_times]
        if any(b <= a for a, b in zip(nodes, nodes[1:])):
            raise InputError("simulate: record_times must be strictly increasing")
        full_grid = False
    n_rec = len(nodes)
    if n_rec * cfg.n_paths * 6 * 8 > _RECORD_BYTES_LIMIT:
        raise InputError(
            "simulate: recording this many nodes x paths needs too much memory; "
            "pass record_times to snapshot only the maturities you price"
        )
    rec_rows = {node: row for row, node in enumerate(nodes)}

    drift = None
    if cfg.rate_curve is not None or cfg.div_curve is not None:
        grid = np.arange(n_steps + 1) * cfg.dt
        drift = np.zeros(n_steps)
        if cfg.rate_curve is not None:
            drift += cfg.rate_curve.step_integrals(grid)
        if cfg.div_curve is not None:
            drift -= cfg.div_curve.step_integrals(grid)

    out = {
        name: np.empty((n_rec, cfg.n_paths))
        for name in ("s", "r10", "r11", "r20", "r21", "sigma")
    }
    blocks = _path_blocks(cfg.n_paths, cfg.block_size, cfg.antithetic)
    master = master_stream(cfg.seed)

    absorb = cfg.on_divergence == "absorb"

    def run(b: int) -> tuple[int, int]:
        lo, hi = blocks[b]
        return _simulate_block(
            params, init, s0, n_steps, cfg.dt, drift, rec_rows,
            split(master, b), lo, hi, cfg.antithetic, absorb, out,
        )

    if cfg.threads == 1:
        counts = [run(b) for b in range(len(blocks))]
    else:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            counts = list(pool.map(run, range(len(blocks))))

    return PathBundle(
        t=np.array(nodes, dtype=float) * cfg.dt,
        s=out["s"], r10=out["r10"], r11=out["r11"], r20=out["r20"],
        r21=out["r21"], sigma=out["sigma"],
        dt=cfg.dt, antithetic=cfg.antithetic,
        n_clamped=int(sum(c for c, _ in counts)), full_grid=full_grid,
        n_absorbed=int(sum(a for _, a in counts)),
    )


@dataclass(frozen=True)
class NestedVixConfig:
    """Inner-simulation request for conditional integrated variance.

    delta is the averaging window in years (30 calendar days by default; a
    30/252 trading-day convention is a legitimate alternative).  The window
    is covered by K = round(delta/inner_dt) equal steps of delta/K exactly,
    so a constant-sigma state reproduces 100*sigma without grid bias.

    on_divergence picks the policy for runaway inner paths: "raise" aborts
    with the offending state index when the trend factor crosses the 1e6
    guard, "drop" censors paths at the earlier economic-death line (sigma
    past 1000, or the factor guard as a backstop), averages the survivors
    and reports the censored count per state.  The quadratic volatility
    feedback gives the scheme a finite-time explosion probability at
    aggressive parameters, and a single near-runaway survivor would
    otherwise dominate its state mean, so wide scenario sweeps opt into
    "drop"; estimates at censored states are then conditional on survival
    and their standard errors ignore the antithetic pairing.
    """

    n_inner: int = 10_000
    delta: float = 30.0 / 365.0
    inner_dt: float = 1.0 / 2520.0
    antithetic: bool = True
    seed: int = 0
    on_divergence: str = "raise"

    def __post_init__(self):
        if self.n_inner < 1:
            raise InputError("NestedVixConfig: n_inner must be at least 1")
        if self.antithetic and (self.n_inner < 2 or self.n_inner % 2 != 0):
            raise InputError("NestedVixConfig: antithetic sampling needs an even n_inner")
        if not self.delta > 0:
            raise InputError("NestedVixConfig: delta must be positive")
        if not self.inner_dt > 0:
            raise InputError("NestedVixConfig: inner_dt must be positive")
        if self.on_divergence not in ("raise", "drop"):
            raise InputError("NestedVixConfig: on_divergence must be 'raise' or 'drop'")

    @property
    def n_inner_steps(self) -> int:
        return max(1, int(round(self.delta / self.inner_dt)))

    @property
    def effective_dt(self) -> float:
        return self.delta / self.n_inner_steps


def nested_variance_stats(
    params: ModelParams,
    r10: np.ndarray,
    r11: np.ndarray,
    r20: np.ndarray,
    r21: np.ndarray,
    cfg: NestedVixConfig,
    stream: RngStream,
    chunk_paths: int = 65536,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-state mean, stderr and censored-path count of the window variance
    (1/delta) * integral of sigma^2.

    Inner streams are split per state index, so results are independent of
    how states are chunked into sweeps (chunk_paths only bounds memory).
    The integral uses left Riemann nodes, starting at the conditioning
    state itself.  The third output counts inner paths censored under the
    "drop" divergence policy; it is all zeros under "raise".
    """
    r10 = np.atleast_1d(np.asarray(r10, dtype=float))
    r11 = np.atleast_1d(np.asarray(r11, dtype=float))
    r20 = np.atleast_1d(np.asarray(r20, dtype=float))
    r21 = np.atleast_1d(np.asarray(r21, dtype=float))
    m = r10.size
    if not (r11.size == r20.size == r21.size == m):
        raise InputError("nested_variance_stats: state arrays must share a length")
    if np.any(r20 < 0) or np.any(r21 < 0):
        raise InputError("nested_variance_stats: variance factors must be nonnegative")

    k_steps = cfg.n_inner_steps
    dte = cfg.effective_dt
    n_inner = cfg.n_inner
    n_draw = n_inner // 2 if cfg.antithetic else n_inner

    lam10, lam11 = params.lambda_10, params.lambda_11
    lam20dt, lam21dt = params.lambda_20 * dte, params.lambda_21 * dte
    sqdt = np.sqrt(dte)

    mean_out = np.empty(m)
    se_out = np.empty(m)
    dropped_out = np.zeros(m, dtype=int)

    # sweep states in chunks; per-state streams keep chunking irrelevant
    chunk = max(1, chunk_paths // n_inner)
    for c0 in range(0, m, chunk):
        c1 = min(c0 + chunk, m)
        cn = c1 - c0
        total = cn * n_inner
        alive = None

        zs = np.empty((k_steps, total))
        for j in range(cn):
            gen = split(stream, c0 + j).generator()
            raw = gen.standard_normal((k_steps, n_draw))
            blk = zs[:, j * n_inner:(j + 1) * n_inner]
            if cfg.antithetic:
                blk[:, 0::2] = raw
                np.negative(raw, out=blk[:, 1::2])
            else:
                blk[:] = raw

        f10 = np.repeat(r10[c0:c1], n_inner)
        f11 = np.repeat(r11[c0:c1], n_inner)
        f20 = np.repeat(r20[c0:c1], n_inner)
        f21 = np.repeat(r21[c0:c1], n_inner)
        acc = np.zeros(total)

        for k in range(k_steps):
            sig = sigma_values(params, f10, f11, f20, f21)
            if cfg.on_divergence == "drop" and float(sig.max()) > _SIGMA_CAP:
                # economically dead: a path at 1000 vol is headed for an
                # astronomical window variance whether or not the factor
                # guard ever trips, and one such survivor would dominate
                # the state mean; censor at the crossing
                bad = sig > _SIGMA_CAP
                if alive is None:
                    alive = np.ones(total, dtype=bool)
                alive &= ~bad
                for f in (f10, f11, f20, f21):
                    f[bad] = 0.0
                sig[bad] = params.beta_0
            sig2 = sig * sig
            acc += sig2

            sigz = (sig * sqdt) * zs[k]
            f10 *= 1.0 - lam10 * dte
            f10 += lam10 * sigz
            f11 *= 1.0 - lam11 * dte
            f11 += lam11 * sigz
            f20 += lam20dt * (sig2 - f20)
            f21 += lam21dt * (sig2 - f21)
            np.maximum(f20, 0.0, out=f20)
            np.maximum(f21, 0.0, out=f21)
            if max(float(np.abs(f10).max()), float(np.abs(f11).max())) > _DIVERGENCE_LIMIT:
                worst = np.maximum(np.abs(f10), np.abs(f11))
                if cfg.on_divergence == "raise":
                    idx = int(np.argmax(worst))
                    raise SimulationDiverged(
                        c0 + idx // n_inner, (k + 1) * dte, float(worst[idx]))
                bad = worst > _DIVERGENCE_LIMIT
                if alive is None:
                    alive = np.ones(total, dtype=bool)
                alive &= ~bad
                # freeze runaway paths at a benign state so later steps stay
                # finite; their accumulated variance is discarded below
                for f in (f10, f11, f20, f21):
                    f[bad] = 0.0

        intvar = acc.reshape(cn, n_inner) / k_steps
        if alive is None:
            if cfg.antithetic:
                pair_means = 0.5 * (intvar[:, 0::2] + intvar[:, 1::2])
            else:
                pair_means = intvar
            mean_out[c0:c1] = pair_means.mean(axis=1)
            if pair_means.shape[1] > 1:
                se = pair_means.std(axis=1, ddof=1) / np.sqrt(pair_means.shape[1])
            else:
                se = np.full(cn, np.inf)
            se_out[c0:c1] = se
        else:
            w = alive.reshape(cn, n_inner)
            n_alive = w.sum(axis=1)
            if np.any(n_alive == 0):
                j = int(np.argmax(n_alive == 0))
                raise SimulationDiverged(
                    c0 + j, k_steps * dte, float("inf"),
                    detail="every inner path diverged")
            mean = np.where(w, intvar, 0.0).sum(axis=1) / n_alive
            dev = np.where(w, intvar - mean[:, None], 0.0)
            var = (dev * dev).sum(axis=1) / np.maximum(n_alive - 1, 1)
            mean_out[c0:c1] = mean
            se_out[c0:c1] = np.where(
                n_alive > 1, np.sqrt(var / n_alive), np.inf)
            dropped_out[c0:c1] = n_inner - n_alive

    return mean_out, se_out, dropped_out


def vix_nested_batch(
    params: ModelParams,
    r10: np.ndarray,
    r11: np.ndarray,
    r20: np.ndarray,
    r21: np.ndarray,
    cfg: NestedVixConfig,
    stream: RngStream | None = None,
) -> np.ndarray:
    """VIX (volatility points) for each conditioning state."""
    if stream is None:
        stream = master_stream(cfg.seed)
    mean_var, _, _ = nested_variance_stats(params, r10, r11, r20, r21, cfg, stream)
    return 100.0 * np.sqrt(mean_var)


def vix_nested(params: ModelParams, state_at_t: FactorState, cfg: NestedVixConfig) -> float:
    """Nested-MC VIX at a single conditioning state, in volatility points."""
    out = vix_nested_batch(
        params,
        np.array([state_at_t.r_10]), np.array([state_at_t.r_11]),
        np.array([state_at_t.r_20]), np.array([state_at_t.r_21]),
        cfg,
    )
    return float(out[0])


@dataclass(frozen=True)
class PanelConfig:
    """One outer path, observed at m_obs evenly spaced times.

    The first observation sits one mean-reversion time of the slowest fast
    factor into the path (max of 1/lambda_10, 1/lambda_20), the last at the
    horizon; both are snapped to the simulation grid.

    vix_cap rejects panels whose window vol exceeds the given level in
    index points.  The quadratic feedback lets a path run economically dead
    (vol in the hundreds) long before the hard factor guard trips, and one
    such observation carries a target in the thousands that would dominate
    any squared-loss fit; 250 points means an expected annualized vol of
    250%, far beyond every market regime a fit could target yet orders of
    magnitude below the explosion artifacts.  A panel over the cap raises
    the same divergence error as a hard blowup, so dataset builders drop
    the config and count it.
    """

    dt: float = 1.0 / 2520.0
    m_obs: int = 200
    horizon: float = 1.0
    seed: int = 0
    nested: NestedVixConfig = NestedVixConfig()
    vix_cap: float = 250.0

    def __post_init__(self):
        if self.m_obs < 1:
            raise InputError("PanelConfig: m_obs must be at least 1")
        if not self.dt > 0:
            raise InputError("PanelConfig: dt must be positive")
        if self.horizon < self.dt:
            raise InputError("PanelConfig: horizon must cover at least one step")
        if not self.vix_cap > 0:
            raise InputError("PanelConfig: vix_cap must be positive")


def panel_observation_times(params: ModelParams, cfg: PanelConfig) -> np.ndarray:
    """Observation times snapped to the simulation grid (duplicates possible)."""
    t1 = max(1.0 / params.lambda_10, 1.0 / params.lambda_20)
    if t1 > cfg.horizon + _GRID_ATOL:
        raise InputError(
            "panel: first observation time exceeds the horizon; "
            "mean-reversion speeds are too slow for this window"
        )
    t1 = min(t1, cfg.horizon)
    if cfg.m_obs == 1:
        times = np.array([t1])
    else:
        times = np.linspace(t1, cfg.horizon, cfg.m_obs)
    n_steps = int(round(cfg.horizon / cfg.dt))
    nodes = np.clip(np.round(times / cfg.dt).astype(int), 1, n_steps)
    return nodes * cfg.dt


def vix_panel_arrays(
    params: ModelParams,
    cfg: PanelConfig,
    init: FactorState = FactorState(0.0, 0.0, 0.0, 0.0),
) -> dict[str, np.ndarray]:
    """Columnar panel: t, factor states, nested VIX at each observation."""
    times = panel_observation_times(params, cfg)
    unique_times = np.unique(times)

    master = master_stream(cfg.seed)
    sim_cfg = SimConfig(
        dt=cfg.dt, n_paths=2, horizon=cfg.horizon,
        seed=split(master, 0).key, antithetic=True,
        record_times=tuple(float(t) for t in unique_times),
    )
    bundle = simulate(params, init, 1.0, sim_cfg)

    row_of = {float(t): i for i, t in enumerate(bundle.t)}
    rows = np.array([row_of[float(t)] for t in times], dtype=int)
    r10 = bundle.r10[rows, 0]
    r11 = bundle.r11[rows, 0]
    r20 = bundle.r20[rows, 0]
    r21 = bundle.r21[rows, 0]

    # each observation gets its own inner stream, even at a repeated time
    inner_base = split(master, 1)
    vix = vix_nested_batch(params, r10, r11, r20, r21, cfg.nested, inner_base)
    if float(vix.max()) > cfg.vix_cap:
        i = int(np.argmax(vix))
        raise SimulationDiverged(
            i, float(times[i]), float(vix[i]),
            detail="window vol {value:.4g} points exceeds the panel cap",
        )
    return {"t": times, "r10": r10, "r11": r11, "r20": r20, "r21": r21, "vix": vix}


def vix_panel(
    params: ModelParams,
    cfg: PanelConfig,
    init: FactorState = FactorState(0.0, 0.0, 0.0, 0.0),
) -> list[tuple[float, FactorState, float]]:
    """Observation list (t_k, state_k, vix_k) along one outer path."""
    cols = vix_panel_arrays(params, cfg, init)
    return [
        (
            float(cols["t"][i]),
            FactorState(
                float(cols["r10"][i]), float(cols["r11"][i]),
                float(cols["r20"][i]), float(cols["r21"][i]),
            ),
            float(cols["vix"][i]),
        )
        for i in range(cols["t"].size)
    ]


def panel_to_csv(records: list[tuple[float, FactorState, float]], path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "R10", "R11", "R20", "R21", "vix"])
        for t, state, vix in records:
            w.writerow([
                float(t), state.r_10, state.r_11, state.r_20, state.r_21, float(vix),
            ])
