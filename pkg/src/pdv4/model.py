"""Model core: parameter vector, factor state, volatility map and kernels.

The instantaneous volatility is

    sigma(R1, R2) = beta_0 + beta_1*R1 + beta_2*sqrt(R2) + beta_12*R1^2*1{R1>0}

where R1 (trend) and R2 (recent realized variance) are convex mixes of a
fast and a slow exponentially weighted factor.  Time unit is years with a
trading-day convention of 1/252 per day.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields

import numpy as np

from .errors import InputError, SingularityError

#: Canonical parameter ordering used by all serialization and optimizers.
PARAM_NAMES = (
    "lambda_10",
    "lambda_11",
    "theta_1",
    "lambda_20",
    "lambda_21",
    "theta_2",
    "beta_0",
    "beta_1",
    "beta_2",
    "beta_12",
)

#: Admissibility cap on the vol-of-vol |beta_1| * lambda_bar_1 used when
#: sampling training configurations.
VOL_OF_VOL_CAP = 10.0


@dataclass(frozen=True)
class ModelParams:
    """The 10 model parameters.

    lambda_np are EWMA rates (1/years), theta_n in [0,1] mix the fast (p=0)
    and slow (p=1) factors, beta_0 is the baseline volatility, beta_1 <= 0
    the trend sensitivity, beta_2 the realized-vol sensitivity and beta_12
    the upside-trend parabolic coefficient.

    Construction enforces lambda_n0 >= lambda_n1 > 0 (strict ordering is a
    sampling-box constraint; equality is allowed so degenerate
    single-exponential kernels stay representable), theta in [0,1],
    beta_1 <= 0 and beta_12 >= 0.
    """

    lambda_10: float
    lambda_11: float
    theta_1: float
    lambda_20: float
    lambda_21: float
    theta_2: float
    beta_0: float
    beta_1: float
    beta_2: float
    beta_12: float

    def __post_init__(self):
        for n, (l0, l1) in ((1, (self.lambda_10, self.lambda_11)),
                            (2, (self.lambda_20, self.lambda_21))):
            if not (l0 >= l1 > 0.0):
                raise InputError(
                    f"require lambda_{n}0 >= lambda_{n}1 > 0, got ({l0}, {l1})"
                )
        for name, th in (("theta_1", self.theta_1), ("theta_2", self.theta_2)):
            if not (0.0 <= th <= 1.0):
                raise InputError(f"{name} must be in [0,1], got {th}")
        if self.beta_1 > 0.0:
            raise InputError(f"beta_1 must be <= 0, got {self.beta_1}")
        if self.beta_12 < 0.0:
            raise InputError(f"beta_12 must be >= 0, got {self.beta_12}")

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in PARAM_NAMES], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "ModelParams":
        arr = np.asarray(arr, dtype=float)
        if arr.shape != (len(PARAM_NAMES),):
            raise InputError(f"expected {len(PARAM_NAMES)} parameters, got shape {arr.shape}")
        return cls(**{k: float(v) for k, v in zip(PARAM_NAMES, arr)})

    def to_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in PARAM_NAMES}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        missing = [k for k in PARAM_NAMES if k not in d]
        if missing:
            raise InputError(f"missing parameters: {missing}")
        extra = [k for k in d if k not in PARAM_NAMES]
        if extra:
            raise InputError(f"unknown parameters: {extra}")
        return cls(**{k: float(d[k]) for k in PARAM_NAMES})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ModelParams":
        return cls.from_dict(json.loads(text))

    def vol_of_vol_bound(self) -> float:
        """|beta_1| * lambda_bar_1, the lognormal vol-of-vol when beta_12 = 0."""
        return abs(self.beta_1) * lambda_bar(self, 1)

    def is_admissible(self, cap: float = VOL_OF_VOL_CAP) -> bool:
        """Sampling admissibility: vol-of-vol bound does not exceed `cap`."""
        return self.vol_of_vol_bound() <= cap


@dataclass(frozen=True)
class FactorState:
    """The four factors (r_10, r_11, r_20, r_21).

    Trend factors are signed; variance factors are EWMAs of squared returns
    and must be nonnegative.
    """

    r_10: float
    r_11: float
    r_20: float
    r_21: float

    def __post_init__(self):
        for name in ("r_10", "r_11", "r_20", "r_21"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.r_20 < 0.0 or self.r_21 < 0.0:
            raise InputError(
                f"variance factors must be >= 0, got ({self.r_20}, {self.r_21})"
            )

    def to_array(self) -> np.ndarray:
        return np.array([self.r_10, self.r_11, self.r_20, self.r_21], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "FactorState":
        arr = np.asarray(arr, dtype=float)
        if arr.shape != (4,):
            raise InputError(f"expected 4 factors, got shape {arr.shape}")
        return cls(*[float(v) for v in arr])


#: Default training box for parameter sampling.
DEFAULT_BOUNDS_MAP = {
    "lambda_10": (1.0, 100.0),
    "lambda_11": (1.0, 100.0),
    "theta_1": (0.0, 1.0),
    "lambda_20": (1.0, 100.0),
    "lambda_21": (1.0, 100.0),
    "theta_2": (0.0, 1.0),
    "beta_0": (0.0, 0.2),
    "beta_1": (-0.25, 0.0),
    "beta_2": (0.0, 1.0),
    "beta_12": (0.0, 0.3),
}


@dataclass(frozen=True)
class ParamBounds:
    """Closed per-parameter intervals; defaults are the training box."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != (len(PARAM_NAMES),) or hi.shape != (len(PARAM_NAMES),):
            raise InputError("bounds must cover the 10 parameters")
        if np.any(lo > hi):
            bad = [PARAM_NAMES[i] for i in np.nonzero(lo > hi)[0]]
            raise InputError(f"lower bound above upper bound for {bad}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def default(cls) -> "ParamBounds":
        lo = np.array([DEFAULT_BOUNDS_MAP[k][0] for k in PARAM_NAMES])
        hi = np.array([DEFAULT_BOUNDS_MAP[k][1] for k in PARAM_NAMES])
        return cls(lo=lo, hi=hi)

    @classmethod
    def from_dict(cls, d: dict) -> "ParamBounds":
        merged = dict(DEFAULT_BOUNDS_MAP)
        for k, v in d.items():
            if k not in PARAM_NAMES:
                raise InputError(f"unknown parameter in bounds: {k}")
            merged[k] = (float(v[0]), float(v[1]))
        lo = np.array([merged[k][0] for k in PARAM_NAMES])
        hi = np.array([merged[k][1] for k in PARAM_NAMES])
        return cls(lo=lo, hi=hi)

    def to_dict(self) -> dict:
        return {
            k: [float(self.lo[i]), float(self.hi[i])]
            for i, k in enumerate(PARAM_NAMES)
        }

    def contains(self, params: ModelParams, rtol: float = 1e-9) -> bool:
        x = params.to_array()
        pad = rtol * np.maximum(1.0, np.abs(self.hi - self.lo))
        return bool(np.all(x >= self.lo - pad) and np.all(x <= self.hi + pad))

    def clip(self, arr: np.ndarray) -> np.ndarray:
        return np.clip(arr, self.lo, self.hi)


# ---------------------------------------------------------------------------
# Volatility map and derived quantities
# ---------------------------------------------------------------------------

def mixed_r_values(params: ModelParams, r_10, r_11, r_20, r_21):
    """(R1, R2) convex mixes; array-friendly.

    Evaluation order is fixed (fast factor first) so results are bit-stable.
    """
    r1 = (1.0 - params.theta_1) * r_10 + params.theta_1 * r_11
    r2 = (1.0 - params.theta_2) * r_20 + params.theta_2 * r_21
    return r1, r2


def mixed_R(params: ModelParams, state: FactorState) -> tuple[float, float]:
    r1, r2 = mixed_r_values(params, state.r_10, state.r_11, state.r_20, state.r_21)
    return float(r1), float(r2)


def sigma_values(params: ModelParams, r_10, r_11, r_20, r_21, floor=None):
    """Instantaneous volatility from raw factor values; array-friendly.

    The result may be negative: the model does not floor sigma (its square
    enters the variance factors).  Pass floor=0.0 to experiment with a
    floored variant.
    """
    r1, r2 = mixed_r_values(params, r_10, r_11, r_20, r_21)
    s = params.beta_0 + params.beta_1 * r1 + params.beta_2 * np.sqrt(r2)
    if params.beta_12 != 0.0:
        s = s + params.beta_12 * np.square(r1) * (r1 > 0.0)
    if floor is not None:
        s = np.maximum(s, floor)
    return s


def sigma(params: ModelParams, state: FactorState, floor=None) -> float:
    """Volatility at a single factor state (1/sqrt(years))."""
    return float(
        sigma_values(params, state.r_10, state.r_11, state.r_20, state.r_21, floor)
    )


def lambda_bar(params: ModelParams, n: int) -> float:
    """Mixed EWMA rate (1-theta_n)*lambda_n0 + theta_n*lambda_n1."""
    if n == 1:
        return (1.0 - params.theta_1) * params.lambda_10 + params.theta_1 * params.lambda_11
    if n == 2:
        return (1.0 - params.theta_2) * params.lambda_20 + params.theta_2 * params.lambda_21
    raise InputError(f"n must be 1 or 2, got {n}")


def r_bar(params: ModelParams, state: FactorState, n: int) -> float:
    """Rate-weighted mixed factor ((1-theta)l0*r0 + theta*l1*r1)/lambda_bar."""
    if n == 1:
        th, l0, l1, r0, r1 = (params.theta_1, params.lambda_10, params.lambda_11,
                              state.r_10, state.r_11)
    elif n == 2:
        th, l0, l1, r0, r1 = (params.theta_2, params.lambda_20, params.lambda_21,
                              state.r_20, state.r_21)
    else:
        raise InputError(f"n must be 1 or 2, got {n}")
    lbar = lambda_bar(params, n)
    return ((1.0 - th) * l0 * r0 + th * l1 * r1) / lbar


def _trend_slope(params: ModelParams, r1):
    """beta_1 + 2*beta_12*R1*1{R1>0}.

    For beta_12 > 0 and R1 > 0 the slope is evaluated in root-centered form
    2*beta_12*(R1 - R1*), R1* = -beta_1/(2*beta_12), so it vanishes exactly
    at the root.
    """
    if params.beta_12 == 0.0:
        return params.beta_1 * np.ones_like(np.asarray(r1, dtype=float))
    root = -params.beta_1 / (2.0 * params.beta_12)
    r1 = np.asarray(r1, dtype=float)
    return np.where(r1 > 0.0, 2.0 * params.beta_12 * (r1 - root), params.beta_1)


def sigma_drift_diffusion(params: ModelParams, state: FactorState) -> tuple[float, float]:
    """Drift and diffusion (mu, nu) of the instantaneous volatility.

        d sigma = mu(R) dt + nu(R) dW
        nu = (beta_1 + 2*beta_12*R1*1{R1>0}) * lambda_bar_1 * sigma
        mu = -(beta_1 + 2*beta_12*R1*1{R1>0}) * lambda_bar_1 * Rbar_1
             + beta_2 * lambda_bar_2 * (sigma^2 - Rbar_2) / (2*sqrt(R2))
             + beta_12 * lambda_bar_1^2 * sigma^2

    Raises SingularityError when R2 == 0 and beta_2 != 0 (mu divides by
    sqrt(R2)).
    """
    r1, r2 = mixed_R(params, state)
    s = sigma(params, state)
    lbar1 = lambda_bar(params, 1)
    slope = float(_trend_slope(params, r1))
    nu = slope * lbar1 * s

    mu = -slope * lbar1 * r_bar(params, state, 1)
    if params.beta_2 != 0.0:
        if r2 <= 0.0:
            raise SingularityError(
                "sigma drift is singular at R2=0 when beta_2 != 0"
            )
        lbar2 = lambda_bar(params, 2)
        mu += params.beta_2 * lbar2 * (s * s - r_bar(params, state, 2)) / (2.0 * np.sqrt(r2))
    mu += params.beta_12 * lbar1 * lbar1 * s * s
    return mu, nu


def kernel(params: ModelParams, n: int, t):
    """Convex two-exponential weight density K_n(t); integrates to 1."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0):
        raise InputError("kernel: t must be >= 0")
    if n == 1:
        th, l0, l1 = params.theta_1, params.lambda_10, params.lambda_11
    elif n == 2:
        th, l0, l1 = params.theta_2, params.lambda_20, params.lambda_21
    else:
        raise InputError(f"n must be 1 or 2, got {n}")
    out = (1.0 - th) * l0 * np.exp(-l0 * t) + th * l1 * np.exp(-l1 * t)
    return float(out) if out.ndim == 0 else out


def reference_params(beta_12: float = 0.0) -> ModelParams:
    """Reference parameter set used by the upside-trend impact scenario."""
    return ModelParams(
        lambda_10=62.11, lambda_11=32.25, theta_1=0.23,
        lambda_20=9.57, lambda_21=3.51, theta_2=0.99,
        beta_0=0.026, beta_1=-0.138, beta_2=0.69, beta_12=beta_12,
    )


assert tuple(f.name for f in fields(ModelParams)) == PARAM_NAMES
