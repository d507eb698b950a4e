"""Market-model parameter and result types shared by every engine.

The volatility-stabilized market (VSM) drives all solvers in this package:

    dX_i = kappa * X dt + sqrt(X_i * X) dW_i,   X = X_1 + ... + X_n,

with n >= 2 stocks and kappa in [1/2, 1]. Equivalently zeta = 2*kappa - 1
in [0, 1]; the associated squared Bessel dimension is m = 4*kappa
= 2*(1+zeta). kappa is the canonical stored input, zeta and m are derived
from it bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, SingularMatrix

# Relative condition-number ceiling used when inverting a diffusion matrix.
CONDITION_LIMIT = 1e12


def _as_state(x, n: Optional[int] = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DomainError(f"state must be a 1-d vector, got shape {x.shape}")
    if n is not None and x.shape[0] != n:
        raise DomainError(f"state has {x.shape[0]} coordinates, expected {n}")
    return x


@dataclass(frozen=True)
class MarketParams:
    """A generic Ito market given by drift b(x) and diffusion s(x).

    ``drift`` maps an n-vector state to the n drift rates (capital per unit
    time) and ``diffusion`` to the n-by-n diffusion matrix (capital per
    square-root time); a(x) = s(x) s(x)' is the covariance. Invertibility
    of s is checked at evaluation points, not globally.
    """

    n: int
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        if int(self.n) < 1:
            raise DomainError(f"n must be >= 1, got {self.n}")

    @classmethod
    def from_vsm(cls, vsm: "VsmParams") -> "MarketParams":
        """VSM coefficients: b_i(x) = kappa * sum(x), s(x) = diag(sqrt(x_i * sum(x)))."""

        def drift(x: np.ndarray) -> np.ndarray:
            x = _as_state(x, vsm.n)
            return np.full(vsm.n, vsm.kappa * x.sum())

        def diffusion(x: np.ndarray) -> np.ndarray:
            x = _as_state(x, vsm.n)
            return np.diag(np.sqrt(x * x.sum()))

        return cls(n=vsm.n, drift=drift, diffusion=diffusion)


@dataclass(frozen=True)
class VsmParams:
    """Volatility-stabilized market parameters.

    kappa is canonical; zeta = 2*kappa - 1 and bessel_dim = 4*kappa are
    derived in the constructor unless given explicitly (explicit values are
    checked by :func:`validate_vsm`).
    """

    n: int
    kappa: float
    x0: tuple[float, ...]
    zeta: float = field(default=None)  # type: ignore[assignment]
    bessel_dim: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        object.__setattr__(self, "x0", tuple(float(v) for v in np.atleast_1d(self.x0)))
        if self.zeta is None:
            object.__setattr__(self, "zeta", 2.0 * self.kappa - 1.0)
        if self.bessel_dim is None:
            object.__setattr__(self, "bessel_dim", 4.0 * self.kappa)

    @property
    def x0_array(self) -> np.ndarray:
        return np.asarray(self.x0, dtype=float)

    @classmethod
    def from_zeta(cls, n: int, zeta: float, x0) -> "VsmParams":
        return cls(n=n, kappa=(1.0 + zeta) / 2.0, x0=x0)


def validate_vsm(params: VsmParams) -> VsmParams:
    """Check every VSM invariant; return ``params`` unchanged if all hold."""
    if params.n < 2:
        raise DomainError(f"n must be >= 2 for a VSM, got n={params.n}")
    if not (0.5 <= params.kappa <= 1.0):
        raise DomainError(f"kappa must lie in [1/2, 1], got kappa={params.kappa}")
    if not (0.0 <= params.zeta <= 1.0) or params.zeta != 2.0 * params.kappa - 1.0:
        raise DomainError(f"zeta={params.zeta} inconsistent with kappa={params.kappa}")
    if params.bessel_dim != 4.0 * params.kappa:
        raise DomainError(
            f"bessel_dim={params.bessel_dim} must equal 4*kappa={4.0 * params.kappa}"
        )
    if len(params.x0) != params.n:
        raise DomainError(f"x0 has {len(params.x0)} entries, expected n={params.n}")
    if not all(v > 0.0 and math.isfinite(v) for v in params.x0):
        raise DomainError(f"initial capitalizations must be strictly positive, got {params.x0}")
    return params


def market_price_of_risk(params: MarketParams, x) -> np.ndarray:
    """Solve sigma(x) theta = beta(x) for theta at the state x.

    With b_i = x_i beta_i and s_ik = x_i sigma_ik, the system is equivalent
    to s(x) theta = b(x) whenever every x_i > 0, which is how it is solved
    here. Raises SingularMatrix when s(x) is numerically singular.
    """
    x = _as_state(x, params.n)
    if np.any(x <= 0.0):
        raise DomainError(f"market price of risk needs a strictly positive state, got {x}")
    s = np.asarray(params.diffusion(x), dtype=float)
    b = np.asarray(params.drift(x), dtype=float)
    if s.shape != (params.n, params.n):
        raise DomainError(f"diffusion must return an {params.n}x{params.n} matrix")
    cond = np.linalg.cond(s)
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise SingularMatrix(f"diffusion matrix condition {cond:.3e} exceeds {CONDITION_LIMIT:.0e}")
    return np.linalg.solve(s, b)


class Interpolation(Enum):
    """Terminal interpolation scheme for the time-changed simulation."""

    LINEAR = "linear"
    BESSEL_BRIDGE = "bessel_bridge"


class Scheme(Enum):
    """Propagation scheme for squared Bessel increments."""

    SUM_OF_SQUARES = "sum_of_squares"
    EXACT_TRANSITION = "exact_transition"
    AUTO = "auto"  # sum of squares for integer dimension, exact otherwise


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo run configuration.

    ``horizon`` is the calendar horizon T, ``n_steps`` the uniform mesh
    count N_T (so dt = T / N_T, used both for the calendar grid of time
    sweeps and as the step of the time-changed mesh), ``bridge_step`` the
    refinement step of the Bessel-bridge terminal interpolation.
    """

    horizon: float
    n_steps: int
    n_paths: int
    seed: int
    interpolation: Interpolation = Interpolation.LINEAR
    bridge_step: Optional[float] = None
    scheme: Scheme = Scheme.AUTO
    max_steps: Optional[int] = None  # overrides the computed step cap

    def __post_init__(self):
        if not (self.horizon > 0.0 and math.isfinite(self.horizon)):
            raise DomainError(f"horizon must be positive, got {self.horizon}")
        if self.n_steps < 1:
            raise DomainError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.n_paths < 2:
            raise DomainError(f"n_paths must be >= 2 so a standard error exists, got {self.n_paths}")
        if not (0 <= int(self.seed) < 2**64):
            raise DomainError(f"seed must fit in 64 unsigned bits, got {self.seed}")
        if self.interpolation is Interpolation.BESSEL_BRIDGE:
            if self.bridge_step is None or not (0.0 < self.bridge_step <= self.dt):
                raise DomainError(
                    f"bridge_step must lie in (0, dt={self.dt}], got {self.bridge_step}"
                )

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps


@dataclass(frozen=True)
class PathBatch:
    """A seeded batch of simulated trajectories on a shared time grid.

    ``values`` has shape (n_paths, len(times), n) and must be strictly
    positive; constructors reject rather than clamp. ``stream_keys``
    records the per-path RNG stream identifiers.
    """

    start_time: float
    times: np.ndarray
    values: np.ndarray
    seed: int
    stream_keys: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if times.ndim != 1 or np.any(np.diff(times) < 0.0):
            raise DomainError("times must be a nondecreasing 1-d vector")
        if times[0] != self.start_time:
            raise DomainError(f"times[0]={times[0]} does not equal start_time={self.start_time}")
        if values.ndim != 3 or values.shape[1] != times.shape[0]:
            raise DomainError(f"values shape {values.shape} does not match times {times.shape}")
        if len(self.stream_keys) != values.shape[0]:
            raise DomainError("one stream key per path is required")
        if not np.all(values > 0.0):
            raise DomainError("capitalizations must be strictly positive; refusing to store")

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class UEstimate:
    """Monte Carlo estimate of the arbitrage quantity u with its standard error.

    A NaN mean marks a node whose simulation failed (budget or overflow);
    such estimates are reported, never silently dropped.
    """

    mean: float
    std_error: float
    n_paths: int
    t_remaining: float
    state: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "state", tuple(float(v) for v in np.atleast_1d(self.state)))
        if not math.isnan(self.mean) and self.mean < 0.0:
            raise DomainError(f"u is a mean of positive terms, got mean={self.mean}")
        if not math.isnan(self.std_error) and self.std_error < 0.0:
            raise DomainError(f"std_error must be nonnegative, got {self.std_error}")
        if self.t_remaining < 0.0:
            raise DomainError(f"t_remaining must be nonnegative, got {self.t_remaining}")

    @property
    def failed(self) -> bool:
        return math.isnan(self.mean)
